//! Linear assignment on square and rectangular cost matrices.

use graphvae::matching::hungarian::{solve_max, solve_min};

fn main() {
    #[rustfmt::skip]
    let cost = [
        4.0, 1.0, 3.0,
        2.0, 0.0, 5.0,
        3.0, 2.0, 2.0,
    ];
    let assign = solve_min(&cost, 3, 3);
    let total: f64 = assign.iter().enumerate().map(|(r, &c)| cost[r * 3 + c]).sum();
    println!("min-cost assignment {assign:?}, cost {total}");

    // two workers, four jobs: each row gets a distinct column
    let profit = [0.9, 0.1, 0.8, 0.3, 0.7, 0.2, 0.95, 0.4];
    println!("max-profit rectangular assignment {:?}", solve_max(&profit, 2, 4));
}
