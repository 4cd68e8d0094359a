use super::GraphTensor;
use crate::error::{Error, Result};
use crate::rng::RngSeed;
use std::collections::{BTreeMap, BTreeSet};

/// Restarts allowed before [`gen_random_regular`] gives up.
pub const REGULAR_RETRY_BUDGET: usize = 1000;

/// G(n, p): pairs `i < j` are visited in row-major order, one uniform draw each.
pub fn gen_erdos_renyi(n: usize, p: f64, seed: RngSeed) -> Result<GraphTensor> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::input(format!("edge probability {p} outside [0,1]")));
    }
    if n == 0 {
        return Err(Error::input("graph must have at least one node"));
    }
    let mut rng = seed.stream();
    let mut g = GraphTensor::empty(n, 0);
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(p) {
                g.set_edge(i, j, true);
            }
        }
    }
    Ok(g)
}

/// Uniform-ish simple d-regular graph from the pairing model.
///
/// Stubs are shuffled and paired; pairs that would form a loop or a repeated
/// edge are returned to the pool and reshuffled. When no valid pair remains
/// among the leftover stubs, the attempt restarts from scratch on the same
/// stream. This is the Steger-Wormald variant of the configuration model;
/// whole-pairing rejection is hopeless beyond d ≈ 4.
pub fn gen_random_regular(n: usize, d: usize, seed: RngSeed) -> Result<GraphTensor> {
    if n == 0 {
        return Err(Error::input("graph must have at least one node"));
    }
    if (n * d) % 2 == 1 {
        return Err(Error::input(format!("n*d = {} must be even", n * d)));
    }
    if d >= n {
        return Err(Error::input(format!("degree {d} must be below n={n}")));
    }
    let mut rng = seed.stream();
    for _ in 0..REGULAR_RETRY_BUDGET {
        if let Some(edges) = try_pairing(n, d, &mut rng) {
            let mut g = GraphTensor::empty(n, 0);
            for (a, b) in edges {
                g.set_edge(a, b, true);
            }
            return Ok(g);
        }
    }
    Err(Error::Generation(format!(
        "no simple {d}-regular graph on {n} nodes after {REGULAR_RETRY_BUDGET} attempts"
    )))
}

fn try_pairing(n: usize, d: usize, rng: &mut crate::rng::Stream) -> Option<BTreeSet<(usize, usize)>> {
    let mut edges = BTreeSet::new();
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
    while !stubs.is_empty() {
        let mut leftover: BTreeMap<usize, usize> = BTreeMap::new();
        rng.shuffle(&mut stubs);
        for pair in stubs.chunks_exact(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a != b && !edges.contains(&(a, b)) {
                edges.insert((a, b));
            } else {
                *leftover.entry(a).or_default() += 1;
                *leftover.entry(b).or_default() += 1;
            }
        }
        if !leftover.is_empty() {
            let nodes: Vec<usize> = leftover.keys().copied().collect();
            let any_valid = nodes.iter().enumerate().any(|(x, &a)| {
                nodes[x + 1..].iter().any(|&b| !edges.contains(&(a, b)))
            });
            if !any_valid {
                return None;
            }
        }
        stubs = leftover
            .into_iter()
            .flat_map(|(v, k)| std::iter::repeat_n(v, k))
            .collect();
    }
    Some(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn er_extremes() {
        let g = gen_erdos_renyi(7, 0.0, RngSeed(1)).unwrap();
        assert_eq!(g.edge_count(), 0);
        let g = gen_erdos_renyi(7, 1.0, RngSeed(1)).unwrap();
        assert_eq!(g.edge_count(), 21);
        assert!(gen_erdos_renyi(7, 1.5, RngSeed(1)).is_err());
        assert!(gen_erdos_renyi(7, -0.1, RngSeed(1)).is_err());
    }

    #[test]
    fn er_edge_count_concentrates() {
        let n = 1000;
        let g = gen_erdos_renyi(n, 0.2, RngSeed(42)).unwrap();
        let pairs = (n * (n - 1) / 2) as f64;
        let mean = 0.2 * pairs;
        let sd = (pairs * 0.2 * 0.8).sqrt();
        assert!((g.edge_count() as f64 - mean).abs() < 4.0 * sd);
    }

    #[test]
    fn er_is_reproducible() {
        assert_eq!(
            gen_erdos_renyi(30, 0.3, RngSeed(9)).unwrap(),
            gen_erdos_renyi(30, 0.3, RngSeed(9)).unwrap()
        );
    }

    #[test]
    fn regular_k4() {
        let g = gen_random_regular(4, 3, RngSeed(0)).unwrap();
        assert_eq!(g.edge_count(), 6);
    }

    #[test]
    fn regular_degrees_are_exact() {
        for (n, d, s) in [(10, 3, 1), (16, 6, 2), (20, 10, 3), (50, 10, 4), (9, 8, 5)] {
            let g = gen_random_regular(n, d, RngSeed(s)).unwrap();
            assert!(g.degrees().iter().all(|&x| x == d), "n={n} d={d}");
        }
    }

    #[test]
    fn regular_seeds_differ() {
        let a = gen_random_regular(20, 10, RngSeed(1)).unwrap();
        let b = gen_random_regular(20, 10, RngSeed(2)).unwrap();
        assert_ne!(a.edges(), b.edges());
    }

    #[test]
    fn regular_rejects_bad_parameters() {
        assert!(matches!(gen_random_regular(5, 3, RngSeed(0)), Err(Error::Input(_))));
        assert!(matches!(gen_random_regular(4, 4, RngSeed(0)), Err(Error::Input(_))));
    }
}
