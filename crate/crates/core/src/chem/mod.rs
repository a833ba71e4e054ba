//! Chemistry view of discrete graphs: atom and bond vocabularies, a
//! valence-based validity check with implicit hydrogens, and canonical
//! keys for uniqueness/novelty bookkeeping.
//!
//! Validity here is a deliberately small rule set:
//!
//! 1. the molecule has at least one heavy atom,
//! 2. it is connected,
//! 3. every atom's bond-order sum (aromatic counting 1.5, per-atom total
//!    rounded up) stays within its maximum valence, the remainder being
//!    filled by implicit hydrogens,
//! 4. aromatic bonds only occur on rings whose atoms each carry at least two
//!    aromatic bonds.
//!
//! It has no notion of charges or kekulization.

mod canon;

pub use canon::canonical_key;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DiscreteGraph, GraphLabel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChemError {
    #[error("node class {class} outside atom vocabulary of size {size}")]
    AtomClass { class: usize, size: usize },
    #[error("edge class {class} outside bond vocabulary of size {size}")]
    BondClass { class: usize, size: usize },
    #[error("vocabulary invalid: {0}")]
    Vocabulary(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub symbol: String,
    pub max_valence: u32,
}

/// Ordered list of heavy-atom elements; position = node class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomVocabulary {
    elements: Vec<Element>,
}

impl AtomVocabulary {
    pub fn new(elements: &[(&str, u32)]) -> Result<Self, ChemError> {
        let mut seen = std::collections::HashSet::new();
        for (s, v) in elements {
            if !seen.insert(*s) {
                return Err(ChemError::Vocabulary(format!("duplicate symbol {s}")));
            }
            if *v == 0 {
                return Err(ChemError::Vocabulary(format!("{s} has zero valence")));
            }
        }
        Ok(Self {
            elements: elements
                .iter()
                .map(|(s, v)| Element {
                    symbol: s.to_string(),
                    max_valence: *v,
                })
                .collect(),
        })
    }

    /// C, N, O, F.
    pub fn qm9() -> Self {
        Self::new(&[("C", 4), ("N", 3), ("O", 2), ("F", 1)]).expect("static vocabulary")
    }

    /// The nine heavy elements of drug-like sets.
    pub fn zinc() -> Self {
        Self::new(&[
            ("C", 4),
            ("N", 3),
            ("O", 2),
            ("F", 1),
            ("P", 5),
            ("S", 6),
            ("Cl", 1),
            ("Br", 1),
            ("I", 1),
        ])
        .expect("static vocabulary")
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "qm9" => Some(Self::qm9()),
            "zinc" => Some(Self::zinc()),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.elements.iter().position(|e| e.symbol == symbol)
    }

    pub fn symbol(&self, class: usize) -> &str {
        &self.elements[class].symbol
    }

    pub fn max_valence(&self, class: usize) -> u32 {
        self.elements[class].max_valence
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BondType {
    pub name: String,
    pub order: f64,
    /// Bond type code used in MDL molfiles.
    pub mdl_code: u8,
}

/// Ordered bond classes; position = edge class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BondVocabulary {
    bonds: Vec<BondType>,
}

impl Default for BondVocabulary {
    /// single, double, triple, aromatic.
    fn default() -> Self {
        let b = |name: &str, order, mdl_code| BondType {
            name: name.into(),
            order,
            mdl_code,
        };
        Self {
            bonds: vec![
                b("single", 1.0, 1),
                b("double", 2.0, 2),
                b("triple", 3.0, 3),
                b("aromatic", 1.5, 4),
            ],
        }
    }
}

impl BondVocabulary {
    pub const AROMATIC: &'static str = "aromatic";

    pub fn len(&self) -> usize {
        self.bonds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bonds.is_empty()
    }

    pub fn order(&self, class: usize) -> f64 {
        self.bonds[class].order
    }

    pub fn is_aromatic(&self, class: usize) -> bool {
        self.bonds[class].name == Self::AROMATIC
    }

    pub fn class_of_mdl(&self, code: u8) -> Option<usize> {
        self.bonds.iter().position(|b| b.mdl_code == code)
    }

    pub fn mdl_code(&self, class: usize) -> u8 {
        self.bonds[class].mdl_code
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InvalidReason {
    Empty,
    Disconnected,
    Valence { atom: usize, used: u32, max: u32 },
    Aromatic { atom: usize },
}

impl std::fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Empty => write!(f, "empty graph"),
            Self::Disconnected => write!(f, "disconnected"),
            Self::Valence { atom, used, max } => {
                write!(f, "atom {atom} uses valence {used} > {max}")
            }
            Self::Aromatic { atom } => write!(f, "aromatic bond at atom {atom} outside an aromatic ring"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Self::Valid)
    }
}

fn check_classes(g: &DiscreteGraph, atoms: &AtomVocabulary, bonds: &BondVocabulary) -> Result<(), ChemError> {
    if let Some(&class) = g.node_classes().iter().find(|&&c| c >= atoms.len()) {
        return Err(ChemError::AtomClass {
            class,
            size: atoms.len(),
        });
    }
    if let Some((_, _, class)) = g.edges().find(|e| e.2 >= bonds.len()) {
        return Err(ChemError::BondClass {
            class,
            size: bonds.len(),
        });
    }
    Ok(())
}

/// Rounded-up bond-order sum per atom.
pub fn used_valence(g: &DiscreteGraph, bonds: &BondVocabulary) -> Vec<u32> {
    (0..g.n())
        .map(|i| {
            let total: f64 = g.neighbors(i).map(|(_, c)| bonds.order(c)).sum();
            // bond orders are multiples of 0.5, so the sum is exact
            total.ceil() as u32
        })
        .collect()
}

/// Hydrogens needed to saturate each atom; zero where the valence is exceeded.
pub fn implicit_hydrogens(g: &DiscreteGraph, atoms: &AtomVocabulary, bonds: &BondVocabulary) -> Vec<u32> {
    used_valence(g, bonds)
        .into_iter()
        .enumerate()
        .map(|(i, u)| atoms.max_valence(g.node_class(i)).saturating_sub(u))
        .collect()
}

pub fn check_valid(
    g: &DiscreteGraph,
    atoms: &AtomVocabulary,
    bonds: &BondVocabulary,
) -> Result<Validity, ChemError> {
    check_classes(g, atoms, bonds)?;
    if g.is_empty() {
        return Ok(Validity::Invalid(InvalidReason::Empty));
    }
    if !g.is_connected() {
        return Ok(Validity::Invalid(InvalidReason::Disconnected));
    }
    for (atom, used) in used_valence(g, bonds).into_iter().enumerate() {
        let max = atoms.max_valence(g.node_class(atom));
        if used > max {
            return Ok(Validity::Invalid(InvalidReason::Valence { atom, used, max }));
        }
    }
    if let Some(atom) = aromatic_violation(g, bonds) {
        return Ok(Validity::Invalid(InvalidReason::Aromatic { atom }));
    }
    Ok(Validity::Valid)
}

/// First atom breaking the aromatic-ring rule: an atom with exactly one
/// aromatic bond, or an aromatic bond that is a bridge of the aromatic
/// subgraph (i.e. not on any aromatic cycle).
fn aromatic_violation(g: &DiscreteGraph, bonds: &BondVocabulary) -> Option<usize> {
    let n = g.n();
    let arom: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            g.neighbors(i)
                .filter(|&(_, c)| bonds.is_aromatic(c))
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    if let Some(i) = (0..n).find(|&i| arom[i].len() == 1) {
        return Some(i);
    }
    for i in 0..n {
        for &j in arom[i].iter().filter(|&&j| j > i) {
            // is j reachable from i without the edge {i, j}?
            let mut seen = vec![false; n];
            let mut stack = vec![i];
            seen[i] = true;
            let mut found = false;
            while let Some(u) = stack.pop() {
                for &w in &arom[u] {
                    if (u == i && w == j) || (u == j && w == i) || seen[w] {
                        continue;
                    }
                    if w == j {
                        found = true;
                        break;
                    }
                    seen[w] = true;
                    stack.push(w);
                }
                if found {
                    break;
                }
            }
            if !found {
                return Some(i);
            }
        }
    }
    None
}

/// A molecule with its label and canonical key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeRecord {
    pub graph: DiscreteGraph,
    pub label: GraphLabel,
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl MoleculeRecord {
    pub fn new(graph: DiscreteGraph, name: Option<String>) -> Self {
        let label = graph.label();
        let key = canonical_key(&graph);
        Self {
            graph,
            label,
            key,
            name,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mol(nodes: &[usize], edges: &[(usize, usize, usize)]) -> DiscreteGraph {
        DiscreteGraph::from_parts(4, 4, nodes, edges).unwrap()
    }

    fn valid(g: &DiscreteGraph) -> Validity {
        check_valid(g, &AtomVocabulary::qm9(), &BondVocabulary::default()).unwrap()
    }

    #[test]
    fn methane_is_valid_with_four_hydrogens() {
        let g = mol(&[0], &[]);
        assert!(valid(&g).is_valid());
        let h = implicit_hydrogens(&g, &AtomVocabulary::qm9(), &BondVocabulary::default());
        assert_eq!(h, vec![4]);
    }

    #[test]
    fn triple_bonded_oxygens_are_invalid() {
        let g = mol(&[2, 2], &[(0, 1, 2)]);
        assert_eq!(
            valid(&g),
            Validity::Invalid(InvalidReason::Valence { atom: 0, used: 3, max: 2 })
        );
    }

    #[test]
    fn disconnected_carbons_are_invalid() {
        assert_eq!(valid(&mol(&[0, 0], &[])), Validity::Invalid(InvalidReason::Disconnected));
        assert_eq!(valid(&mol(&[], &[])), Validity::Invalid(InvalidReason::Empty));
    }

    #[test]
    fn benzene_and_pyridine_are_valid() {
        let ring: Vec<_> = (0..6).map(|i| (i, (i + 1) % 6, 3)).collect();
        assert!(valid(&mol(&[0; 6], &ring)).is_valid());
        assert!(valid(&mol(&[1, 0, 0, 0, 0, 0], &ring)).is_valid());
        // toluene: methyl on an aromatic carbon, 1.5 + 1.5 + 1 = 4
        let mut tol = ring.clone();
        tol.push((0, 6, 0));
        assert!(valid(&mol(&[0; 7], &tol)).is_valid());
    }

    #[test]
    fn aromatic_chain_is_invalid() {
        let g = mol(&[0, 0, 0], &[(0, 1, 3), (1, 2, 3)]);
        assert!(matches!(valid(&g), Validity::Invalid(InvalidReason::Aromatic { .. })));
        // two aromatic triangles joined by an aromatic bridge between sulfurs
        let g = DiscreteGraph::from_parts(
            9,
            4,
            &[0, 0, 5, 5, 0, 0],
            &[(0, 1, 3), (1, 2, 3), (2, 0, 3), (3, 4, 3), (4, 5, 3), (5, 3, 3), (2, 3, 3)],
        )
        .unwrap();
        let v = check_valid(&g, &AtomVocabulary::zinc(), &BondVocabulary::default()).unwrap();
        assert_eq!(v, Validity::Invalid(InvalidReason::Aromatic { atom: 2 }));
    }

    #[test]
    fn out_of_vocabulary_class_is_an_error() {
        let g = DiscreteGraph::from_parts(9, 4, &[7], &[]).unwrap();
        assert!(matches!(
            check_valid(&g, &AtomVocabulary::qm9(), &BondVocabulary::default()),
            Err(ChemError::AtomClass { class: 7, size: 4 })
        ));
    }

    #[test]
    fn vocabularies() {
        assert_eq!(AtomVocabulary::qm9().len(), 4);
        assert_eq!(AtomVocabulary::zinc().len(), 9);
        assert!(AtomVocabulary::new(&[("C", 4), ("C", 4)]).is_err());
        assert!(AtomVocabulary::new(&[("X", 0)]).is_err());
        let b = BondVocabulary::default();
        assert_eq!(b.class_of_mdl(4), Some(3));
        assert!(b.is_aromatic(3) && !b.is_aromatic(0));
    }
}
