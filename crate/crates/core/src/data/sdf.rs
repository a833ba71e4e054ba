//! MDL molfile V2000 records separated by `$$$$`.
//!
//! Hydrogens and their bonds are dropped. Malformed, V3000 and
//! out-of-vocabulary records are skipped and reported; only I/O failures are
//! errors.

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::Serialize;

use crate::chem::{AtomVocabulary, BondVocabulary, MoleculeRecord};
use crate::graph::DiscreteGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum SkipReason {
    /// The counts line declares the V3000 extended format.
    V3000,
    Malformed(String),
    UnknownElement(String),
    UnknownBond(u8),
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::V3000 => write!(f, "V3000 molfiles are not supported"),
            Self::Malformed(m) => write!(f, "malformed record: {m}"),
            Self::UnknownElement(s) => write!(f, "element {s} not in vocabulary"),
            Self::UnknownBond(c) => write!(f, "bond type {c} not in vocabulary"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skip {
    /// Zero-based record position in the stream.
    pub record: usize,
    pub name: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SdfReport {
    pub records: usize,
    pub skipped: Vec<Skip>,
}

impl SdfReport {
    pub fn skip_count(&self) -> usize {
        self.skipped.len()
    }
}

/// Parses every record of the stream.
pub fn parse_sdf<R: BufRead>(
    reader: R,
    atoms: &AtomVocabulary,
    bonds: &BondVocabulary,
) -> io::Result<(Vec<MoleculeRecord>, SdfReport)> {
    let mut out = Vec::new();
    let mut report = SdfReport::default();
    let mut block: Vec<String> = Vec::new();
    let flush = |block: &mut Vec<String>, out: &mut Vec<MoleculeRecord>, report: &mut SdfReport| {
        if block.iter().all(|l| l.trim().is_empty()) {
            block.clear();
            return;
        }
        let index = report.records;
        report.records += 1;
        let name = block[0].trim().to_string();
        match parse_molfile(block, atoms, bonds) {
            Ok(g) => out.push(MoleculeRecord::new(g, (!name.is_empty()).then(|| name.clone()))),
            Err(reason) => report.skipped.push(Skip {
                record: index,
                name,
                reason,
            }),
        }
        block.clear();
    };
    for line in reader.lines() {
        let line = line?;
        if line.trim_end() == "$$$$" {
            flush(&mut block, &mut out, &mut report);
        } else {
            block.push(line);
        }
    }
    flush(&mut block, &mut out, &mut report);
    Ok((out, report))
}

fn field(line: &str, range: std::ops::Range<usize>) -> Option<&str> {
    let end = range.end.min(line.len());
    line.get(range.start..end).map(str::trim)
}

fn parse_usize(line: &str, range: std::ops::Range<usize>, what: &str) -> Result<usize, SkipReason> {
    field(line, range)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| SkipReason::Malformed(format!("bad {what} in {line:?}")))
}

fn parse_molfile(lines: &[String], atoms: &AtomVocabulary, bonds: &BondVocabulary) -> Result<DiscreteGraph, SkipReason> {
    let counts = lines
        .get(3)
        .ok_or_else(|| SkipReason::Malformed("missing counts line".into()))?;
    if counts.contains("V3000") {
        return Err(SkipReason::V3000);
    }
    let n_atoms = parse_usize(counts, 0..3, "atom count")?;
    let n_bonds = parse_usize(counts, 3..6, "bond count")?;
    if lines.len() < 4 + n_atoms + n_bonds {
        return Err(SkipReason::Malformed("record shorter than its counts line".into()));
    }
    let mut g = DiscreteGraph::new(atoms.len(), bonds.len());
    // file atom -> graph node, None for hydrogen
    let mut map = Vec::with_capacity(n_atoms);
    for line in &lines[4..4 + n_atoms] {
        let symbol = field(line, 31..34)
            .filter(|s| !s.is_empty())
            .or_else(|| line.split_whitespace().nth(3))
            .ok_or_else(|| SkipReason::Malformed(format!("atom line {line:?}")))?;
        if symbol == "H" || symbol == "D" {
            map.push(None);
            continue;
        }
        let class = atoms
            .index_of(symbol)
            .ok_or_else(|| SkipReason::UnknownElement(symbol.to_string()))?;
        map.push(Some(g.add_node(class).expect("class within vocabulary")));
    }
    for line in &lines[4 + n_atoms..4 + n_atoms + n_bonds] {
        let a = parse_usize(line, 0..3, "bond atom")?;
        let b = parse_usize(line, 3..6, "bond atom")?;
        let code = parse_usize(line, 6..9, "bond type")?;
        if a == 0 || b == 0 || a > n_atoms || b > n_atoms || a == b {
            return Err(SkipReason::Malformed(format!("bond {a}-{b} out of range")));
        }
        let (Some(i), Some(j)) = (map[a - 1], map[b - 1]) else {
            continue;
        };
        let class = u8::try_from(code)
            .ok()
            .and_then(|c| bonds.class_of_mdl(c))
            .ok_or(SkipReason::UnknownBond(code.min(255) as u8))?;
        if g.has_edge(i, j) {
            return Err(SkipReason::Malformed(format!("duplicate bond {a}-{b}")));
        }
        g.add_edge(i, j, class)
            .map_err(|e| SkipReason::Malformed(e.to_string()))?;
    }
    Ok(g)
}

/// Writes V2000 records with zero coordinates and no hydrogens.
pub fn write_sdf<W: Write>(
    mut w: W,
    records: &[MoleculeRecord],
    atoms: &AtomVocabulary,
    bonds: &BondVocabulary,
) -> io::Result<()> {
    for (idx, r) in records.iter().enumerate() {
        let g = &r.graph;
        let name = r.name.clone().unwrap_or_else(|| format!("mol{idx}"));
        writeln!(w, "{name}")?;
        writeln!(w, "  graphvae")?;
        writeln!(w)?;
        writeln!(w, "{:>3}{:>3}  0  0  0  0  0  0  0  0999 V2000", g.n(), g.edge_count())?;
        for i in 0..g.n() {
            writeln!(
                w,
                "{:>10.4}{:>10.4}{:>10.4} {:<3} 0  0  0  0  0  0  0  0  0  0  0  0",
                0.0,
                0.0,
                0.0,
                atoms.symbol(g.node_class(i))
            )?;
        }
        for (i, j, c) in g.edges() {
            writeln!(w, "{:>3}{:>3}{:>3}  0", i + 1, j + 1, bonds.mdl_code(c))?;
        }
        writeln!(w, "M  END")?;
        writeln!(w, "$$$$")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const METHANE: &str = "\
gdb_1
     RDKit          3D

  1  0  0  0  0  0  0  0  0  0999 V2000
   -0.0127    1.0858    0.0080 C   0  0  0  0  0  0  0  0  0  0  0  0
M  END
$$$$
";

    const ETHANE: &str = "\
ethane
  test

  8  7  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    1.5000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    0.0000    1.0000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
    0.0000   -1.0000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
   -1.0000    0.0000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
    1.5000    1.0000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
    1.5000   -1.0000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
    2.5000    0.0000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0
  1  3  1  0
  1  4  1  0
  1  5  1  0
  2  6  1  0
  2  7  1  0
  2  8  1  0
M  END
$$$$
";

    const SILANE: &str = "\
silane
  test

  1  0  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 Si  0  0  0  0  0  0  0  0  0  0  0  0
M  END
$$$$
";

    const V3000: &str = "\
v3
  test

  0  0  0     0  0            999 V3000
M  V30 BEGIN CTAB
M  END
$$$$
";

    fn parse(text: &str) -> (Vec<MoleculeRecord>, SdfReport) {
        parse_sdf(text.as_bytes(), &AtomVocabulary::qm9(), &BondVocabulary::default()).unwrap()
    }

    #[test]
    fn single_carbon() {
        let (recs, rep) = parse(METHANE);
        assert_eq!(recs.len(), 1);
        assert_eq!(rep.skip_count(), 0);
        assert_eq!(recs[0].graph.n(), 1);
        assert_eq!(recs[0].name.as_deref(), Some("gdb_1"));
    }

    #[test]
    fn hydrogens_are_stripped() {
        let (recs, _) = parse(ETHANE);
        let g = &recs[0].graph;
        assert_eq!(g.n(), 2);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edge_class(0, 1), Some(0));
    }

    #[test]
    fn skips_are_counted_not_fatal() {
        let text = format!("{SILANE}{METHANE}{V3000}garbage\n$$$$\n{ETHANE}");
        let (recs, rep) = parse(&text);
        assert_eq!(recs.len(), 2);
        assert_eq!(rep.records, 5);
        assert_eq!(rep.skip_count(), 3);
        assert_eq!(rep.skipped[0].reason, SkipReason::UnknownElement("Si".into()));
        assert_eq!(rep.skipped[1].reason, SkipReason::V3000);
        assert!(matches!(rep.skipped[2].reason, SkipReason::Malformed(_)));
    }

    #[test]
    fn written_records_parse_back() {
        let g = DiscreteGraph::from_parts(4, 4, &[0, 1, 2, 0, 3], &[(0, 1, 1), (1, 2, 0), (2, 3, 0), (3, 4, 0), (3, 0, 0)])
            .unwrap();
        let rec = MoleculeRecord::new(g, Some("x".into()));
        let mut buf = Vec::new();
        write_sdf(&mut buf, std::slice::from_ref(&rec), &AtomVocabulary::qm9(), &BondVocabulary::default()).unwrap();
        let (back, rep) = parse(std::str::from_utf8(&buf).unwrap());
        assert_eq!(rep.skip_count(), 0);
        assert_eq!(back, vec![rec]);
    }
}
