//! Self-matching accuracy when one part of a graph is perturbed by noise.

use graphvae::chem::{AtomVocabulary, BondVocabulary};
use graphvae::data::{synthesize, SynthConfig};
use graphvae::eval::{matching_robustness, RobustnessGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = synthesize(300, &SynthConfig::default(), &AtomVocabulary::qm9(), &BondVocabulary::default(), 11);
    let graphs: Vec<_> = records.into_iter().map(|r| r.graph).collect();
    let grid = RobustnessGrid {
        ks: vec![9, 15],
        trials: 50,
        ..Default::default()
    };
    let report = matching_robustness(&graphs, &grid, 0)?;
    println!("noise  eps   k   accuracy");
    for c in &report.cells {
        let acc = c.accuracy.map_or_else(|| "n/a".to_string(), |a| format!("{:.2}%", 100.0 * a));
        println!("{:>5}  {:.1}  {:>2}  {acc}", c.kind.to_string(), c.eps, c.k);
    }
    Ok(())
}
