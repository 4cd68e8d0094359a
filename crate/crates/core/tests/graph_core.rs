use proptest::prelude::*;
use wlgnn::graph::{apply_noise, companion_noise, gen_erdos_renyi, gen_random_regular, GraphFile};
use wlgnn::{Error, GraphTensor, MaskedBatch, Permutation, RngSeed};

fn path3() -> GraphTensor {
    GraphTensor::encode_dense(3, &[(0, 1), (1, 2)], None).unwrap()
}

fn perm(seed: u64, n: usize) -> Permutation {
    Permutation::random(n, &mut RngSeed(seed).stream())
}

/// Structural invariants every graph tensor must satisfy.
fn assert_well_formed(g: &GraphTensor) {
    let (n, e) = (g.n(), g.e());
    for i in 0..n {
        assert_eq!(g.get(i, i, e), 0.0);
        for j in 0..n {
            let a = g.get(i, j, e);
            assert!(a == 0.0 || a == 1.0);
            assert_eq!(a, g.get(j, i, e));
            if i != j {
                for c in 0..e {
                    assert_eq!(g.get(i, j, c), 0.0);
                }
            }
        }
    }
}

#[test]
fn encode_dense_examples() {
    let k3 = GraphTensor::encode_dense(3, &[(0, 1), (1, 2), (0, 2)], None).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(k3.get(i, j, 0), if i == j { 0.0 } else { 1.0 });
        }
    }

    let feats = vec![vec![1.0], vec![2.0]];
    let g = GraphTensor::encode_dense(2, &[], Some(&feats)).unwrap();
    assert_eq!(g.channels(), 2);
    assert_eq!(g.get(0, 0, 0), 1.0);
    assert_eq!(g.get(1, 1, 0), 2.0);
    assert_eq!(g.get(0, 1, 0), 0.0);
    assert_eq!(g.get(1, 0, 0), 0.0);

    let c6: Vec<(usize, usize)> = (0..6).map(|i| (i, (i + 1) % 6)).collect();
    let g = GraphTensor::encode_dense(6, &c6, None).unwrap();
    assert_eq!(g.degrees(), vec![2; 6]);
}

#[test]
fn encode_dense_rejects_malformed_input() {
    let bad = [
        GraphTensor::encode_dense(3, &[(0, 3)], None),
        GraphTensor::encode_dense(3, &[(0, 1), (1, 0)], None),
        GraphTensor::encode_dense(3, &[(1, 1)], None),
        GraphTensor::encode_dense(2, &[], Some(&[vec![1.0]])),
    ];
    for r in bad {
        assert!(matches!(r, Err(Error::Input(_))), "{r:?}");
    }
}

#[test]
fn permute_examples() {
    let g = path3();
    assert_eq!(g.permute(&Permutation::identity(3)).unwrap(), g);

    let edge = GraphTensor::encode_dense(2, &[(0, 1)], None).unwrap();
    assert_eq!(edge.permute(&Permutation::new(vec![1, 0]).unwrap()).unwrap(), edge);

    // swapping the endpoints of a path keeps it a path through the middle
    let h = g.permute(&Permutation::new(vec![2, 1, 0]).unwrap()).unwrap();
    assert!(h.has_edge(2, 1) && h.has_edge(1, 0) && !h.has_edge(0, 2));

    // a move of the middle node changes which node has degree 2
    let h = g.permute(&Permutation::new(vec![1, 0, 2]).unwrap()).unwrap();
    assert_eq!(h.degrees(), vec![2, 1, 1]);

    assert!(matches!(g.permute(&Permutation::identity(4)), Err(Error::Input(_))));
    assert!(Permutation::new(vec![0, 0, 1]).is_err());
}

#[test]
fn generator_examples() {
    let seed = RngSeed(9);
    assert_eq!(gen_erdos_renyi(8, 0.0, seed).unwrap().edge_count(), 0);
    assert_eq!(gen_erdos_renyi(8, 1.0, seed).unwrap().edge_count(), 28);
    assert!(gen_erdos_renyi(8, 1.5, seed).is_err());
    assert!(gen_erdos_renyi(8, -0.1, seed).is_err());

    // binomial concentration of the edge count
    let m = gen_erdos_renyi(1000, 0.2, RngSeed(1)).unwrap().edge_count() as f64;
    let pairs: f64 = 1000.0 * 999.0 / 2.0;
    let sd = (pairs * 0.2 * 0.8).sqrt();
    assert!((m - 0.2 * pairs).abs() < 4.0 * sd, "{m}");

    assert_eq!(gen_random_regular(4, 3, seed).unwrap().edge_count(), 6);
    assert!(matches!(gen_random_regular(5, 3, seed), Err(Error::Input(_))));
    let a = gen_random_regular(20, 10, RngSeed(1)).unwrap();
    let b = gen_random_regular(20, 10, RngSeed(2)).unwrap();
    assert_ne!(a.edges(), b.edges());
}

#[test]
fn noise_examples() {
    assert!((companion_noise(0.05, 0.2).unwrap() - 0.0125).abs() < 1e-15);
    assert!(companion_noise(0.9, 0.6).is_err());

    let g = gen_erdos_renyi(40, 0.2, RngSeed(2)).unwrap();
    assert_eq!(apply_noise(&g, 0.0, 0.2, RngSeed(3)).unwrap(), g);

    // expected degree is preserved: removed edges are replaced on average
    let g1 = gen_erdos_renyi(500, 0.2, RngSeed(4)).unwrap();
    let g2 = apply_noise(&g1, 0.05, 0.2, RngSeed(5)).unwrap();
    assert_well_formed(&g2);
    let (d1, d2) = (g1.edge_count() as f64, g2.edge_count() as f64);
    assert!((d2 - d1).abs() / d1 < 0.05, "{d1} {d2}");
    assert_ne!(g1, g2);
}

#[test]
fn batch_examples() {
    let g = path3();
    let b = MaskedBatch::new(std::slice::from_ref(&g)).unwrap();
    assert_eq!(b.n_max(), 3);
    assert!(b.mask().iter().all(|&m| m));

    let h = gen_erdos_renyi(5, 0.5, RngSeed(1)).unwrap();
    let b = MaskedBatch::new(&[g.clone(), h.clone()]).unwrap();
    assert_eq!(b.shape(), [2, 5, 5, 1]);
    assert_eq!(b.sizes(), &[3, 5]);
    assert_eq!(b.mask()[..5].iter().filter(|&&m| !m).count(), 2);
    assert_eq!(b.extract_all().unwrap(), vec![g.clone(), h]);

    let featured = GraphTensor::encode_dense(2, &[], Some(&[vec![1.0], vec![2.0]])).unwrap();
    assert!(matches!(MaskedBatch::new(&[g, featured]), Err(Error::Input(_))));
}

#[test]
fn json_round_trip_and_fixture_format() {
    let feats = vec![vec![0.5, -1.0], vec![2.0, 0.0], vec![0.25, 3.0]];
    let g = GraphTensor::encode_dense(3, &[(0, 2), (1, 2)], Some(&feats)).unwrap();
    let text = g.to_json();
    assert_eq!(GraphTensor::from_json(&text).unwrap(), g);
    let file: GraphFile = serde_json::from_str(&text).unwrap();
    assert_eq!(file.features.as_ref().unwrap(), &feats);

    let parsed = GraphTensor::from_json(r#"{"n": 3, "edges": [[0, 1], [1, 2]]}"#).unwrap();
    assert_eq!(parsed, path3());
    let dup = GraphTensor::from_json(r#"{"n": 3, "edges": [[0, 1], [1, 0]]}"#);
    assert!(matches!(dup, Err(Error::Input(_))));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.json");
    g.save(&p).unwrap();
    assert_eq!(GraphTensor::load(&p).unwrap(), g);
}

fn small_graph() -> impl Strategy<Value = (GraphTensor, u64)> {
    (2usize..9, 0.0f64..=1.0, any::<u64>(), any::<bool>()).prop_map(|(n, p, seed, featured)| {
        let g = gen_erdos_renyi(n, p, RngSeed(seed)).unwrap();
        if !featured {
            return (g, seed);
        }
        let mut s = RngSeed(seed).derive(1).stream();
        let feats: Vec<Vec<f64>> = (0..n).map(|_| vec![s.uniform_in(-1.0, 1.0)]).collect();
        (GraphTensor::encode_dense(n, &g.edges(), Some(&feats)).unwrap(), seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_is_a_group_action((g, seed) in small_graph()) {
        let n = g.n();
        let (s, t) = (perm(seed, n), perm(seed ^ 1, n));
        let lhs = g.permute(&s).unwrap().permute(&t).unwrap();
        let rhs = g.permute(&t.compose(&s).unwrap()).unwrap();
        prop_assert_eq!(&lhs, &rhs);
        prop_assert_eq!(g.permute(&s).unwrap().permute(&s.inverse()).unwrap(), g.clone());
        assert_well_formed(&lhs);
    }

    #[test]
    fn permute_moves_entries((g, seed) in small_graph()) {
        let s = perm(seed, g.n());
        let h = g.permute(&s).unwrap();
        for i in 0..g.n() {
            for j in 0..g.n() {
                for c in 0..g.channels() {
                    prop_assert_eq!(h.get(s.apply(i), s.apply(j), c), g.get(i, j, c));
                }
            }
        }
    }

    #[test]
    fn generators_replay(n in 2usize..30, p in 0.0f64..=1.0, seed in any::<u64>()) {
        let a = gen_erdos_renyi(n, p, RngSeed(seed)).unwrap();
        prop_assert_eq!(&a, &gen_erdos_renyi(n, p, RngSeed(seed)).unwrap());
        assert_well_formed(&a);
        let d = (n - 1).min(3);
        if n * d % 2 == 0 {
            let r = gen_random_regular(n, d, RngSeed(seed)).unwrap();
            prop_assert!(r.degrees().iter().all(|&x| x == d));
            prop_assert_eq!(r, gen_random_regular(n, d, RngSeed(seed)).unwrap());
        }
    }

    #[test]
    fn batch_slices_equal_originals(seeds in prop::collection::vec((1usize..8, any::<u64>()), 1..6)) {
        let gs: Vec<GraphTensor> =
            seeds.iter().map(|&(n, s)| gen_erdos_renyi(n, 0.4, RngSeed(s)).unwrap()).collect();
        let b = MaskedBatch::new(&gs).unwrap();
        prop_assert_eq!(b.extract_all().unwrap(), gs.clone());
        let [_, n, _, c] = b.shape();
        for (k, g) in gs.iter().enumerate() {
            prop_assert_eq!(b.sizes()[k], b.mask()[k * n..(k + 1) * n].iter().filter(|&&m| m).count());
            for i in 0..n {
                for j in 0..n {
                    if i >= g.n() || j >= g.n() {
                        let at = ((k * n + i) * n + j) * c;
                        prop_assert!(b.data()[at..at + c].iter().all(|&v| v == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_noise_is_identity((g, seed) in small_graph()) {
        prop_assert_eq!(apply_noise(&g, 0.0, 0.3, RngSeed(seed)).unwrap(), g);
    }
}
