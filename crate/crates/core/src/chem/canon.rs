//! Canonical labeling by color refinement plus individualization search.
//!
//! Colors start from `(node class, degree)` and are refined with the
//! multiset of `(edge class, neighbor color)` until stable. Remaining ties
//! are broken by individualizing each vertex of the first non-singleton
//! cell in turn; the lexicographically smallest leaf encoding wins.
//! Automorphisms discovered at equal leaves prune branches that lie in the
//! same orbit of the pointwise stabilizer of the current prefix.

use std::fmt::Write;

use crate::graph::DiscreteGraph;

/// String that is equal for two graphs iff they are isomorphic with node
/// and edge classes respected.
pub fn canonical_key(g: &DiscreteGraph) -> String {
    let n = g.n();
    if n == 0 {
        return "0|".to_string();
    }
    let adj: Vec<Vec<(usize, usize)>> = (0..n).map(|i| g.neighbors(i).collect()).collect();
    let init: Vec<(usize, usize)> = (0..n).map(|i| (g.node_class(i), adj[i].len())).collect();
    let colors = rank(&init);
    let mut search = Search {
        g,
        adj: &adj,
        best: None,
        autos: Vec::new(),
    };
    let mut prefix = Vec::new();
    search.run(colors, &mut prefix);
    search.best.expect("non-empty graph has a leaf").0
}

fn rank<T: Ord + Clone>(keys: &[T]) -> Vec<usize> {
    let mut sorted: Vec<T> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("present"))
        .collect()
}

fn cell_count(colors: &[usize]) -> usize {
    colors.iter().max().map_or(0, |m| m + 1)
}

struct Search<'a> {
    g: &'a DiscreteGraph,
    adj: &'a [Vec<(usize, usize)>],
    // best encoding and the vertex -> position map that produced it
    best: Option<(String, Vec<usize>)>,
    autos: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn refine(&self, mut colors: Vec<usize>) -> Vec<usize> {
        loop {
            let cells = cell_count(&colors);
            let sigs: Vec<(usize, Vec<(usize, usize)>)> = (0..colors.len())
                .map(|i| {
                    let mut nb: Vec<(usize, usize)> =
                        self.adj[i].iter().map(|&(j, c)| (c, colors[j])).collect();
                    nb.sort_unstable();
                    (colors[i], nb)
                })
                .collect();
            let next = rank(&sigs);
            if cell_count(&next) == cells {
                return next;
            }
            colors = next;
        }
    }

    fn encode(&self, pos: &[usize]) -> String {
        let n = pos.len();
        let mut inv = vec![0; n];
        for (v, &p) in pos.iter().enumerate() {
            inv[p] = v;
        }
        let mut s = format!("{n}|");
        for &v in &inv {
            write!(s, "{},", self.g.node_class(v)).unwrap();
        }
        s.push('|');
        for p in 0..n {
            for q in (p + 1)..n {
                if let Some(c) = self.g.edge_class(inv[p], inv[q]) {
                    write!(s, "{p}-{q}:{c},").unwrap();
                }
            }
        }
        s
    }

    fn run(&mut self, colors: Vec<usize>, prefix: &mut Vec<usize>) {
        let colors = self.refine(colors);
        let n = colors.len();
        if cell_count(&colors) == n {
            let code = self.encode(&colors);
            match &self.best {
                None => self.best = Some((code, colors)),
                Some((b, bpos)) => match code.cmp(b) {
                    std::cmp::Ordering::Less => self.best = Some((code, colors)),
                    std::cmp::Ordering::Equal => {
                        // vertex v sits where bpos⁻¹(colors[v]) sits in the best leaf
                        let mut inv = vec![0; n];
                        for (v, &p) in bpos.iter().enumerate() {
                            inv[p] = v;
                        }
                        let gamma: Vec<usize> = colors.iter().map(|&p| inv[p]).collect();
                        self.autos.push(gamma);
                    }
                    std::cmp::Ordering::Greater => {}
                },
            }
            return;
        }
        let mut sizes = vec![0usize; n];
        for &c in &colors {
            sizes[c] += 1;
        }
        let target = (0..n).find(|&c| sizes[c] > 1).expect("non-discrete partition");
        let cell: Vec<usize> = (0..n).filter(|&v| colors[v] == target).collect();
        let mut explored: Vec<usize> = Vec::new();
        for &v in &cell {
            if !explored.is_empty() && self.same_orbit(prefix, &explored, v) {
                continue;
            }
            let child: Vec<usize> = colors
                .iter()
                .enumerate()
                .map(|(u, &c)| if u == v { 2 * c } else { 2 * c + 1 })
                .collect();
            prefix.push(v);
            self.run(rank(&child), prefix);
            prefix.pop();
            explored.push(v);
        }
    }

    /// Whether `v` shares an orbit with an explored vertex under the
    /// automorphisms found so far that fix `prefix` pointwise.
    fn same_orbit(&self, prefix: &[usize], explored: &[usize], v: usize) -> bool {
        let n = self.adj.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut any = false;
        for gamma in &self.autos {
            if prefix.iter().any(|&p| gamma[p] != p) {
                continue;
            }
            any = true;
            for (x, &y) in gamma.iter().enumerate() {
                let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
                if rx != ry {
                    parent[rx] = ry;
                }
            }
        }
        if !any {
            return false;
        }
        let rv = find(&mut parent, v);
        explored.iter().any(|&u| find(&mut parent, u) == rv)
    }
}
