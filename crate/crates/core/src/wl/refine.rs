use super::coloring::{class_count, lex_relabel, Coloring};
use super::hash::{multiset, Token, TokenHasher};
use super::iso_type::iso_type_unchecked;
use crate::error::{Error, Result};
use crate::graph::GraphTensor;
use crate::par;

/// Refuse dense `[n]^k` tables above this many entries unless overridden.
pub const DEFAULT_ENTRY_CAP: usize = 10_000_000;

#[derive(Clone, Debug)]
pub struct RefineOptions {
    /// Stop after this many rounds even if not yet stable.
    pub max_rounds: Option<usize>,
    pub entry_cap: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            max_rounds: None,
            entry_cap: DEFAULT_ENTRY_CAP,
        }
    }
}

/// Drive `step` until the partition stops splitting.
///
/// Each new token hashes the previous one, so a round can only refine the
/// partition; an unchanged class count therefore means unchanged classes.
fn refine_loop<F>(mut c: Coloring, max_rounds: Option<usize>, step: F) -> Coloring
where
    F: Fn(&[Token]) -> Vec<Token>,
{
    loop {
        if max_rounds.is_some_and(|m| c.round >= m) {
            return c;
        }
        let next = step(&c.tokens);
        let colors = lex_relabel(&next);
        let classes = class_count(&colors);
        debug_assert!(classes >= c.num_classes());
        c.tokens = next;
        c.colors = colors;
        if classes == c.num_classes() {
            c.stable = true;
            return c;
        }
        c.class_history.push(classes);
        c.round += 1;
    }
}

/// Vertex color refinement; initial colors are the node feature vectors.
pub fn vertex_wl(g: &GraphTensor, max_rounds: Option<usize>) -> Coloring {
    let n = g.n();
    let init: Vec<Token> = (0..n)
        .map(|i| {
            let mut h = TokenHasher::new("vwl.init");
            let f = g.node_features(i);
            h.u64(f.len() as u64);
            for v in f {
                h.f64(v);
            }
            h.finish()
        })
        .collect();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i)).collect();
    let c = Coloring::from_tokens(1, n, init);
    refine_loop(c, max_rounds, |prev| {
        par::map_range(n, |i| {
            let mut nb: Vec<Token> = adj[i].iter().map(|&j| prev[j]).collect();
            let m = multiset("vwl.nb", &mut nb);
            let mut h = TokenHasher::new("vwl.step");
            h.token(prev[i]).token(m);
            h.finish()
        })
    })
}

fn table_size(n: usize, k: usize, cap: usize) -> Result<usize> {
    if k < 2 {
        return Err(Error::input(format!("tuple order must be at least 2, got {k}")));
    }
    let size = (n as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if size > cap as u128 {
        return Err(Error::Capacity(format!(
            "n^k = {n}^{k} exceeds the {cap}-entry budget"
        )));
    }
    Ok(size as usize)
}

fn strides(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|w| n.pow((k - 1 - w) as u32)).collect()
}

fn decode(mut idx: usize, n: usize, k: usize) -> Vec<usize> {
    let mut t = vec![0; k];
    for w in (0..k).rev() {
        t[w] = idx % n;
        idx /= n;
    }
    t
}

fn initial_types(g: &GraphTensor, k: usize, size: usize) -> Vec<Token> {
    par::map_range(size, |idx| iso_type_unchecked(g, &decode(idx, g.n(), k)).token())
}

/// k-WL: position `w` of the tuple ranges over all nodes, one multiset per
/// position, positions kept in order.
pub fn k_wl(g: &GraphTensor, k: usize, opts: &RefineOptions) -> Result<Coloring> {
    let n = g.n();
    let size = table_size(n, k, opts.entry_cap)?;
    let stride = strides(n, k);
    let c = Coloring::from_tokens(k, n, initial_types(g, k, size));
    Ok(refine_loop(c, opts.max_rounds, |prev| {
        par::map_range(size, |idx| {
            let t = decode(idx, n, k);
            let mut h = TokenHasher::new("kwl.step");
            h.token(prev[idx]);
            let mut buf = Vec::with_capacity(n);
            for w in 0..k {
                let base = idx - t[w] * stride[w];
                buf.clear();
                buf.extend((0..n).map(|j| prev[base + j * stride[w]]));
                h.token(multiset("kwl.nb", &mut buf));
            }
            h.finish()
        })
    }))
}

/// k-FWL: for each node `j`, the ordered vector of colors obtained by
/// writing `j` into each position; the multiset runs over `j`.
pub fn k_fwl(g: &GraphTensor, k: usize, opts: &RefineOptions) -> Result<Coloring> {
    let n = g.n();
    let size = table_size(n, k, opts.entry_cap)?;
    let stride = strides(n, k);
    let c = Coloring::from_tokens(k, n, initial_types(g, k, size));
    Ok(refine_loop(c, opts.max_rounds, |prev| {
        par::map_range(size, |idx| {
            let t = decode(idx, n, k);
            let mut per_j: Vec<Token> = (0..n)
                .map(|j| {
                    let mut h = TokenHasher::new("kfwl.vec");
                    for w in 0..k {
                        h.token(prev[idx - t[w] * stride[w] + j * stride[w]]);
                    }
                    h.finish()
                })
                .collect();
            let m = multiset("kfwl.nb", &mut per_j);
            let mut h = TokenHasher::new("kfwl.step");
            h.token(prev[idx]).token(m);
            h.finish()
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Permutation;
    use crate::rng::RngSeed;
    use crate::wl::{distinguishes, WlTest};

    fn graph(n: usize, edges: &[(usize, usize)]) -> GraphTensor {
        GraphTensor::encode_dense(n, edges, None).unwrap()
    }

    fn c6() -> GraphTensor {
        graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)])
    }

    fn two_triangles() -> GraphTensor {
        graph(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)])
    }

    #[test]
    fn cycle_is_uniform() {
        let c = vertex_wl(&c6(), None);
        assert!(c.stable);
        assert_eq!(c.num_classes(), 1);
    }

    #[test]
    fn path_has_two_classes() {
        let c = vertex_wl(&graph(3, &[(0, 1), (1, 2)]), None);
        assert_eq!(c.num_classes(), 2);
        assert_eq!(c.colors[0], c.colors[2]);
        assert_ne!(c.colors[0], c.colors[1]);
        let sig = c.equivariant_sig();
        assert_eq!(sig[0], sig[2]);
        assert_ne!(sig[0], sig[1]);
    }

    #[test]
    fn star_center_is_singleton() {
        let c = vertex_wl(&graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]), None);
        assert_eq!(c.num_classes(), 2);
        assert_eq!(c.colors.iter().filter(|&&x| x == c.colors[0]).count(), 1);
    }

    #[test]
    fn features_seed_the_vertex_coloring() {
        let g = GraphTensor::encode_dense(3, &[], Some(&[vec![1.0], vec![2.0], vec![1.0]])).unwrap();
        let c = vertex_wl(&g, None);
        assert_eq!(c.num_classes(), 2);
    }

    #[test]
    fn c6_vs_two_triangles() {
        let (a, b) = (c6(), two_triangles());
        assert!(!distinguishes(WlTest::Vertex, &a, &b).unwrap());
        assert!(!distinguishes(WlTest::Wl(2), &a, &b).unwrap());
        assert!(distinguishes(WlTest::Wl(3), &a, &b).unwrap());
        assert!(distinguishes(WlTest::Fwl(2), &a, &b).unwrap());
    }

    #[test]
    fn self_comparison_never_separates() {
        let g = crate::graph::gen_erdos_renyi(7, 0.4, RngSeed(1)).unwrap();
        for t in [WlTest::Vertex, WlTest::Wl(2), WlTest::Wl(3), WlTest::Fwl(2), WlTest::Fwl(3)] {
            assert!(!distinguishes(t, &g, &g).unwrap());
            assert!(t.run(&g, &RefineOptions::default()).unwrap().stable);
        }
    }

    #[test]
    fn empty_vs_triangle() {
        let e = graph(3, &[]);
        let k3 = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let sig = |g: &GraphTensor| k_wl(g, 2, &RefineOptions::default()).unwrap().invariant_sig();
        assert_ne!(sig(&e), sig(&k3));
    }

    #[test]
    fn invariant_under_relabeling() {
        let mut rng = RngSeed(5).stream();
        let g = crate::graph::gen_erdos_renyi(7, 0.4, RngSeed(6)).unwrap();
        for t in [WlTest::Vertex, WlTest::Wl(2), WlTest::Wl(3), WlTest::Fwl(2)] {
            let base = t.run(&g, &RefineOptions::default()).unwrap();
            for _ in 0..5 {
                let s = Permutation::random(7, &mut rng);
                let p = t.run(&g.permute(&s).unwrap(), &RefineOptions::default()).unwrap();
                assert_eq!(base.invariant_sig(), p.invariant_sig());
                let (eb, ep) = (base.equivariant_sig(), p.equivariant_sig());
                for i in 0..7 {
                    assert_eq!(ep[s.apply(i)], eb[i]);
                }
            }
        }
    }

    #[test]
    fn capacity_is_enforced() {
        let g = graph(30, &[]);
        let opts = RefineOptions {
            max_rounds: None,
            entry_cap: 1000,
        };
        assert!(matches!(k_wl(&g, 3, &opts), Err(Error::Capacity(_))));
        assert!(matches!(k_fwl(&g, 3, &opts), Err(Error::Capacity(_))));
        assert!(k_wl(&g, 1, &RefineOptions::default()).is_err());
    }

    #[test]
    fn class_counts_never_shrink() {
        let g = crate::graph::gen_erdos_renyi(8, 0.3, RngSeed(12)).unwrap();
        let c = k_fwl(&g, 2, &RefineOptions::default()).unwrap();
        assert!(c.class_history.windows(2).all(|w| w[0] < w[1]));
        // one more round does not split anything
        let again = k_fwl(
            &g,
            2,
            &RefineOptions {
                max_rounds: Some(c.round + 5),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(again.num_classes(), c.num_classes());
    }

    #[test]
    fn max_rounds_truncates() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        let c = vertex_wl(&g, Some(1));
        assert_eq!(c.round, 1);
        assert!(!c.stable);
    }
}
