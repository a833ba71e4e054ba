//! Reconstruction loss of a perfect prediction and of a uniform guess.

use graphvae::graph::{DiscreteGraph, ProbabilisticGraph};
use graphvae::matching::Assignment;
use graphvae::model::{reconstruction_loss, LossWeights};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let w = LossWeights::default();
    let g = DiscreteGraph::from_parts(4, 4, &[0, 1], &[(0, 1, 2)])?;
    let perfect = reconstruction_loss(&g, &g.to_probabilistic(3)?, &Assignment::identity(3, 2), &w)?;
    println!("perfect prediction: {:?}", perfect);

    let single = DiscreteGraph::from_parts(4, 4, &[0], &[])?;
    let uniform = ProbabilisticGraph::uniform(1, 4, 4, 0.5);
    let l = reconstruction_loss(&single, &uniform, &Assignment::identity(1, 1), &w)?;
    println!("uniform guess, one node: {:.6} (ln 2 + ln 4 = {:.6})", l.total, 2f64.ln() + 4f64.ln());
    Ok(())
}
