//! Parses V2000 molfiles, strips hydrogens and reports skipped records.

use graphvae::chem::{AtomVocabulary, BondVocabulary};
use graphvae::data::parse_sdf;

const SDF: &str = "\
methanol
  example

  6  5  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0
    1.4000    0.0000    0.0000 O   0  0  0  0  0  0  0  0  0  0  0  0
   -0.5000    0.9000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
   -0.5000   -0.9000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
   -0.5000    0.0000    0.9000 H   0  0  0  0  0  0  0  0  0  0  0  0
    1.8000    0.9000    0.0000 H   0  0  0  0  0  0  0  0  0  0  0  0
  1  2  1  0
  1  3  1  0
  1  4  1  0
  1  5  1  0
  2  6  1  0
M  END
$$$$
silane
  example

  1  0  0  0  0  0  0  0  0  0999 V2000
    0.0000    0.0000    0.0000 Si  0  0  0  0  0  0  0  0  0  0  0  0
M  END
$$$$
";

fn main() -> std::io::Result<()> {
    let (records, report) = parse_sdf(SDF.as_bytes(), &AtomVocabulary::qm9(), &BondVocabulary::default())?;
    for r in &records {
        println!(
            "{}: {} heavy atoms, {} bonds, label {}",
            r.name.as_deref().unwrap_or("?"),
            r.graph.n(),
            r.graph.edge_count(),
            r.graph.label()
        );
    }
    for s in &report.skipped {
        println!("skipped record {} ({:?}): {:?}", s.record, s.name, s.reason);
    }
    Ok(())
}
