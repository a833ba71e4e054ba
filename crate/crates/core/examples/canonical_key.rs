//! Canonical keys are equal exactly for isomorphic attributed graphs.

use graphvae::chem::canonical_key;
use graphvae::graph::DiscreteGraph;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ethanol = DiscreteGraph::from_parts(4, 4, &[0, 0, 2], &[(0, 1, 0), (1, 2, 0)])?;
    let relabeled = ethanol.permute(&[2, 0, 1])?;
    let dimethyl_ether = DiscreteGraph::from_parts(4, 4, &[0, 2, 0], &[(0, 1, 0), (1, 2, 0)])?;

    println!("ethanol            {}", canonical_key(&ethanol));
    println!("ethanol, relabeled {}", canonical_key(&relabeled));
    println!("dimethyl ether     {}", canonical_key(&dimethyl_ether));
    assert_eq!(canonical_key(&ethanol), canonical_key(&relabeled));
    assert_ne!(canonical_key(&ethanol), canonical_key(&dimethyl_ether));
    Ok(())
}
