use std::collections::BTreeMap;
use wlgnn::gnn::{
    fgl2_layer, i2_init, lgnn2_layer, mgnn_layer, s2_1_reduce, s2_sum, id_plus_lambda_s1, BatchInputs, Family,
    MlpSpec, ModelSpec, Variant,
};
use wlgnn::graph::gen_erdos_renyi;
use wlgnn::rng::Stream;
use wlgnn::tensor::{finite_diff_check, Params, Tape, Tensor, Var, BASIS2_COUNT};
use wlgnn::{GraphTensor, MaskedBatch, Permutation, RngSeed};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn rand_t(s: &mut Stream, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| s.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

fn consts(tape: &mut Tape, named: &[(&str, Tensor)]) -> BTreeMap<String, Var> {
    named.iter().map(|(k, v)| (k.to_string(), tape.constant(v.clone()))).collect()
}

fn triangle() -> GraphTensor {
    GraphTensor::encode_dense(3, &[(0, 1), (1, 2), (0, 2)], None).unwrap()
}

#[test]
fn i2_init_of_triangle() {
    let x = i2_init(&triangle());
    assert_eq!(x.shape(), &[3, 3, 2]);
    for i in 0..3 {
        for j in 0..3 {
            let adj = if i == j { 0.0 } else { 1.0 };
            let delta = if i == j { 1.0 } else { 0.0 };
            assert_eq!(x.data()[(i * 3 + j) * 2], adj);
            assert_eq!(x.data()[(i * 3 + j) * 2 + 1], delta);
        }
    }
}

#[test]
fn i2_init_is_equivariant_with_three_types() {
    let g = gen_erdos_renyi(7, 0.4, RngSeed(3)).unwrap();
    let sigma = Permutation::random(7, &mut RngSeed(4).stream());
    let lhs = i2_init(&g.permute(&sigma).unwrap());
    let rhs = i2_init(&g);
    for i in 0..7 {
        for j in 0..7 {
            let (a, b) = (sigma.apply(i), sigma.apply(j));
            assert_eq!(lhs.data()[(a * 7 + b) * 2..(a * 7 + b) * 2 + 2], rhs.data()[(i * 7 + j) * 2..(i * 7 + j) * 2 + 2]);
        }
    }
    let mut kinds: Vec<(u64, u64)> = lhs.data().chunks(2).map(|p| (p[0].to_bits(), p[1].to_bits())).collect();
    kinds.sort();
    kinds.dedup();
    assert!(kinds.len() <= 3);
}

/// f1(h_i, h_j) = h_j and f0(a, b) = b as single affine maps.
fn message_identity_params(tape: &mut Tape) -> BTreeMap<String, Var> {
    consts(
        tape,
        &[
            ("m.f1.0.w", t(&[2, 1], &[0.0, 1.0])),
            ("m.f1.0.b", t(&[1], &[0.0])),
            ("m.f0.0.w", t(&[2, 1], &[0.0, 1.0])),
            ("m.f0.0.b", t(&[1], &[0.0])),
        ],
    )
}

#[test]
fn message_layer_sums_neighbors() {
    let inp = BatchInputs::new(&MaskedBatch::new(&[triangle()]).unwrap());
    let mut tape = Tape::new();
    let vars = message_identity_params(&mut tape);
    let h = tape.constant(t(&[1, 3, 1], &[1.0, 2.0, 3.0]));
    let spec = MlpSpec::new(vec![2, 1]).unwrap();
    let out = mgnn_layer(&mut tape, &vars, &inp, h, &spec, &spec, "m").unwrap();
    assert_eq!(tape.value(out).data(), &[5.0, 4.0, 3.0]);
}

#[test]
fn message_layer_isolated_node_gets_zero_message() {
    let g = GraphTensor::encode_dense(3, &[(0, 1)], None).unwrap();
    let inp = BatchInputs::new(&MaskedBatch::new(&[g]).unwrap());
    let mut tape = Tape::new();
    let vars = consts(
        &mut tape,
        &[
            ("m.f1.0.w", t(&[2, 1], &[1.0, 1.0])),
            ("m.f1.0.b", t(&[1], &[0.5])),
            ("m.f0.0.w", t(&[2, 1], &[2.0, 1.0])),
            ("m.f0.0.b", t(&[1], &[0.0])),
        ],
    );
    let h = tape.constant(t(&[1, 3, 1], &[1.0, 2.0, 3.0]));
    let spec = MlpSpec::new(vec![2, 1]).unwrap();
    let out = mgnn_layer(&mut tape, &vars, &inp, h, &spec, &spec, "m").unwrap();
    // node 2 is isolated: f0(3, 0) = 6
    assert_eq!(tape.value(out).data()[2], 6.0);
    // node 0: 2*1 + (1 + 2 + 0.5)
    assert_eq!(tape.value(out).data()[0], 5.5);
}

#[test]
fn folklore_layer_squares_p3() {
    let p3 = GraphTensor::encode_dense(3, &[(0, 1), (1, 2)], None).unwrap();
    let inp = BatchInputs::new(&MaskedBatch::new(&[p3]).unwrap());
    let mut tape = Tape::new();
    let vars = consts(
        &mut tape,
        &[
            ("l.f1.0.w", t(&[1, 1], &[1.0])),
            ("l.f1.0.b", t(&[1], &[0.0])),
            ("l.f2.0.w", t(&[1, 1], &[1.0])),
            ("l.f2.0.b", t(&[1], &[0.0])),
            ("l.f0.0.w", t(&[2, 1], &[0.0, 1.0])),
            ("l.f0.0.b", t(&[1], &[0.0])),
        ],
    );
    let h = tape.constant(inp.x.clone());
    let f = MlpSpec::new(vec![1, 1]).unwrap();
    let f0 = MlpSpec::new(vec![2, 1]).unwrap();
    let out = fgl2_layer(&mut tape, &vars, &inp, h, &f0, &f, &f, "l").unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn folklore_layer_matches_triple_loop() {
    let (n, c) = (6, 3);
    let mut s = RngSeed(11).stream();
    let h = rand_t(&mut s, &[1, n, n, c]);
    let mut eye = vec![0.0; c * c];
    for k in 0..c {
        eye[k * c + k] = 1.0;
    }
    let mut pick = vec![0.0; 2 * c * c];
    for k in 0..c {
        pick[(c + k) * c + k] = 1.0;
    }
    let g = GraphTensor::empty(n, c - 1);
    let inp = BatchInputs::new(&MaskedBatch::new(&[g]).unwrap());
    let mut tape = Tape::new();
    let vars = consts(
        &mut tape,
        &[
            ("l.f1.0.w", t(&[c, c], &eye)),
            ("l.f1.0.b", Tensor::zeros(&[c])),
            ("l.f2.0.w", t(&[c, c], &eye)),
            ("l.f2.0.b", Tensor::zeros(&[c])),
            ("l.f0.0.w", t(&[2 * c, c], &pick)),
            ("l.f0.0.b", Tensor::zeros(&[c])),
        ],
    );
    let hv = tape.constant(h.clone());
    let f = MlpSpec::new(vec![c, c]).unwrap();
    let f0 = MlpSpec::new(vec![2 * c, c]).unwrap();
    let out = fgl2_layer(&mut tape, &vars, &inp, hv, &f0, &f, &f, "l").unwrap();
    let hd = h.data();
    for i in 0..n {
        for k in 0..n {
            for ch in 0..c {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += hd[(i * n + j) * c + ch] * hd[(j * n + k) * c + ch];
                }
                let got = tape.value(out).data()[(i * n + k) * c + ch];
                assert!((got - acc).abs() <= 1e-12, "({i},{k},{ch}) {got} vs {acc}");
            }
        }
    }
}

#[test]
fn folklore_layer_with_zero_f1_is_pointwise() {
    let g = gen_erdos_renyi(5, 0.5, RngSeed(2)).unwrap();
    let inp = BatchInputs::new(&MaskedBatch::new(&[g]).unwrap());
    let mut tape = Tape::new();
    let vars = consts(
        &mut tape,
        &[
            ("l.f1.0.w", Tensor::zeros(&[1, 2])),
            ("l.f1.0.b", Tensor::zeros(&[2])),
            ("l.f2.0.w", t(&[1, 2], &[0.3, -0.7])),
            ("l.f2.0.b", t(&[2], &[0.1, 0.2])),
            ("l.f0.0.w", t(&[3, 1], &[2.0, 5.0, -4.0])),
            ("l.f0.0.b", t(&[1], &[0.25])),
        ],
    );
    let h = tape.constant(inp.x.clone());
    let f = MlpSpec::new(vec![1, 2]).unwrap();
    let f0 = MlpSpec::new(vec![3, 1]).unwrap();
    let out = fgl2_layer(&mut tape, &vars, &inp, h, &f0, &f, &f, "l").unwrap();
    for (o, x) in tape.value(out).data().iter().zip(inp.x.data()) {
        assert_eq!(*o, 2.0 * x + 0.25);
    }
}

fn basis_outputs(x: &Tensor, n: usize) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = tape.lin_eq_basis2(v, &Tensor::full(&[1, n, n], 1.0)).unwrap();
    tape.value(out).clone()
}

fn rank(mut rows: Vec<Vec<f64>>) -> usize {
    let cols = rows[0].len();
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows.len()).max_by(|&a, &b| rows[a][c].abs().total_cmp(&rows[b][c].abs())) else {
            break;
        };
        if rows[p][c].abs() < 1e-9 {
            continue;
        }
        rows.swap(r, p);
        for i in 0..rows.len() {
            if i != r {
                let f = rows[i][c] / rows[r][c];
                let pivot = rows[r].clone();
                for (x, y) in rows[i].iter_mut().zip(&pivot) {
                    *x -= f * y;
                }
            }
        }
        r += 1;
    }
    r
}

#[test]
fn basis_has_fifteen_independent_maps() {
    assert_eq!(BASIS2_COUNT, 15);
    let n = 4;
    // Each map as an operator: its images of all n^2 unit inputs. A single
    // input cannot certify independence since trace and total sum both
    // broadcast to multiples of the same pattern.
    let mut rows = vec![Vec::new(); 15];
    for p in 0..n * n {
        let mut e = vec![0.0; n * n];
        e[p] = 1.0;
        let out = basis_outputs(&t(&[1, n, n, 1], &e), n);
        for (b, row) in rows.iter_mut().enumerate() {
            row.extend((0..n * n).map(|q| out.data()[q * 15 + b]));
        }
    }
    assert_eq!(rank(rows), 15);
    let x = rand_t(&mut RngSeed(5).stream(), &[1, n, n, 1]);
    let out = basis_outputs(&x, n);
    for p in 0..n * n {
        assert_eq!(out.data()[p * 15], x.data()[p]);
    }
}

#[test]
fn basis_maps_are_equivariant() {
    let (n, c) = (5, 2);
    let mut s = RngSeed(8).stream();
    let x = rand_t(&mut s, &[1, n, n, c]);
    let sigma = Permutation::random(n, &mut s);
    let mut px = vec![0.0; x.len()];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (sigma.apply(i), sigma.apply(j));
            px[(a * n + b) * c..(a * n + b + 1) * c].copy_from_slice(&x.data()[(i * n + j) * c..(i * n + j + 1) * c]);
        }
    }
    let lhs = basis_outputs(&t(&[1, n, n, c], &px), n);
    let rhs = basis_outputs(&x, n);
    let w = 15 * c;
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (sigma.apply(i), sigma.apply(j));
            let l = &lhs.data()[(a * n + b) * w..(a * n + b + 1) * w];
            let r = &rhs.data()[(i * n + j) * w..(i * n + j + 1) * w];
            for (p, q) in l.iter().zip(r) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }
}

fn lgnn_layer_with(w: Tensor, b: Tensor) -> (Tensor, Tensor) {
    let g = gen_erdos_renyi(4, 0.5, RngSeed(1)).unwrap();
    let inp = BatchInputs::new(&MaskedBatch::new(&[g]).unwrap());
    let mut tape = Tape::new();
    let vars = consts(
        &mut tape,
        &[
            ("l.lin.w", w),
            ("l.lin.b", b),
            ("l.lin.diag", Tensor::zeros(&[1, 1])),
            ("l.f.0.w", t(&[1, 1], &[1.0])),
            ("l.f.0.b", t(&[1], &[0.0])),
        ],
    );
    let h = tape.constant(inp.x.clone());
    let f = MlpSpec::new(vec![1, 1]).unwrap();
    let out = lgnn2_layer(&mut tape, &vars, &inp, h, &f, "l").unwrap();
    (tape.value(out).clone(), inp.x.clone())
}

#[test]
fn linear_layer_identity_and_zero() {
    let mut sel = vec![0.0; 15];
    sel[0] = 1.0;
    let (out, x) = lgnn_layer_with(t(&[15, 1], &sel), Tensor::zeros(&[1]));
    assert_eq!(out.data(), x.data());
    let (out, _) = lgnn_layer_with(Tensor::zeros(&[15, 1]), Tensor::zeros(&[1]));
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn reductions_on_all_ones() {
    let g = GraphTensor::empty(3, 0);
    let inp = BatchInputs::new(&MaskedBatch::new(&[g]).unwrap());
    let mut tape = Tape::new();
    let h = tape.constant(Tensor::full(&[1, 3, 3, 1], 1.0));
    let s = s2_sum(&mut tape, &inp, h).unwrap();
    assert_eq!(tape.value(s).data(), &[9.0]);
    let r = s2_1_reduce(&mut tape, &inp, h).unwrap();
    assert_eq!(tape.value(r).data(), &[3.0, 3.0, 3.0]);
    let hv = tape.constant(t(&[1, 3, 1], &[1.0, -2.0, 4.0]));
    let lam = tape.constant(Tensor::scalar(0.0));
    let same = id_plus_lambda_s1(&mut tape, &inp, hv, lam).unwrap();
    assert_eq!(tape.value(same).data(), &[1.0, -2.0, 4.0]);
    let lam = tape.constant(Tensor::scalar(0.5));
    let mixed = id_plus_lambda_s1(&mut tape, &inp, hv, lam).unwrap();
    assert_eq!(tape.value(mixed).data(), &[2.5, -0.5, 5.5]);
}

fn all_specs(in_channels: usize) -> Vec<ModelSpec> {
    let mut out = Vec::new();
    for family in Family::ALL {
        for variant in [Variant::Invariant, Variant::Equivariant] {
            let mut s = ModelSpec::uniform(family, variant, in_channels, 2, 6);
            s.out_dim = 3;
            out.push(s);
        }
    }
    out
}

fn featured_graph(n: usize, seed: u64) -> GraphTensor {
    let g = gen_erdos_renyi(n, 0.4, RngSeed(seed)).unwrap();
    let mut s = RngSeed(seed).derive(1).stream();
    let feats: Vec<Vec<f64>> = (0..n).map(|_| vec![s.uniform_in(-1.0, 1.0)]).collect();
    GraphTensor::encode_dense(n, &g.edges(), Some(&feats)).unwrap()
}

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = a.iter().chain(b).fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

#[test]
fn assembled_models_respect_symmetry() {
    for spec in all_specs(2) {
        let params = spec.init_params(RngSeed(21)).unwrap();
        for gi in 0..3 {
            let g = featured_graph(6 + gi, 100 + gi as u64);
            let base = spec.apply_graph(&params, &g).unwrap();
            let mut s = RngSeed(gi as u64).stream();
            for _ in 0..5 {
                let sigma = Permutation::random(g.n(), &mut s);
                let out = spec.apply_graph(&params, &g.permute(&sigma).unwrap()).unwrap();
                match spec.variant {
                    Variant::Invariant => assert!(rel_close(out.data(), base.data(), 1e-9), "{spec:?}"),
                    Variant::Equivariant => {
                        let d = spec.out_dim;
                        for i in 0..g.n() {
                            let a = &out.data()[sigma.apply(i) * d..(sigma.apply(i) + 1) * d];
                            let b = &base.data()[i * d..(i + 1) * d];
                            assert!(rel_close(a, b, 1e-9), "{spec:?}");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn batched_forward_matches_single() {
    let graphs: Vec<GraphTensor> = (0..4).map(|k| featured_graph(3 + 2 * k, 40 + k as u64)).collect();
    let batch = MaskedBatch::new(&graphs).unwrap();
    for spec in all_specs(2) {
        let params = spec.init_params(RngSeed(9)).unwrap();
        let out = spec.apply(&params, &batch).unwrap();
        let n_max = batch.n_max();
        for (k, g) in graphs.iter().enumerate() {
            let single = spec.apply_graph(&params, g).unwrap();
            let got = match spec.variant {
                Variant::Invariant => &out.data()[k * spec.out_dim..(k + 1) * spec.out_dim],
                Variant::Equivariant => {
                    let start = k * n_max * spec.out_dim;
                    let rows = &out.data()[start..start + n_max * spec.out_dim];
                    assert!(rows[g.n() * spec.out_dim..].iter().all(|&v| v == 0.0));
                    &rows[..g.n() * spec.out_dim]
                }
            };
            for (a, b) in got.iter().zip(single.data()) {
                assert!((a - b).abs() <= 1e-10, "{spec:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn spec_mismatch_is_rejected() {
    let spec = ModelSpec::uniform(Family::Fgnn2, Variant::Invariant, 1, 1, 4);
    let mut params = spec.init_params(RngSeed(0)).unwrap();
    assert!(spec.apply_graph(&params, &featured_graph(4, 1)).is_err());
    params.insert("head.0.w", Tensor::zeros(&[2, 2]));
    assert!(spec.apply_graph(&params, &triangle()).is_err());
    let spec_json = serde_json::to_string(&spec).unwrap();
    assert!(spec_json.contains("\"fgnn2\""));
    let back: ModelSpec = serde_json::from_str(&spec_json).unwrap();
    assert_eq!(back, spec);
}

/// Largest finite-difference error over every parameter tensor of `spec`.
fn param_grad_error(spec: &ModelSpec, params: &Params, batch: &MaskedBatch) -> f64 {
    let inp = BatchInputs::new(batch);
    let mut worst = 0.0f64;
    for (name, value) in &params.tensors {
        let err = finite_diff_check(
            |tape, v| {
                let mut vars: BTreeMap<String, Var> = params
                    .tensors
                    .iter()
                    .filter(|(k, _)| *k != name)
                    .map(|(k, t)| (k.clone(), tape.constant(t.clone())))
                    .collect();
                vars.insert(name.clone(), v);
                let out = spec.forward(tape, &vars, &inp)?;
                let w = tape.constant(rand_t(&mut RngSeed(77).stream(), tape.shape(out)));
                let p = tape.mul(out, w)?;
                Ok(tape.sum_all(p))
            },
            value,
            1e-4,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

#[test]
fn model_gradients_match_finite_differences() {
    let graphs = vec![featured_graph(4, 5), featured_graph(5, 6)];
    let batch = MaskedBatch::new(&graphs).unwrap();
    for mut spec in all_specs(2) {
        spec.layer_widths = vec![3, 3];
        spec.mlp_hidden = 3;
        spec.out_dim = 2;
        let mut params = spec.init_params(RngSeed(31)).unwrap();
        // nonzero biases and lambda so their gradients are exercised away from 0
        let mut s = RngSeed(32).stream();
        for (name, t) in params.tensors.iter_mut() {
            if !name.ends_with(".w") {
                for v in t.data_mut() {
                    *v = s.uniform_in(-0.3, 0.3);
                }
            }
        }
        let err = param_grad_error(&spec, &params, &batch);
        assert!(err < 1e-4, "{spec:?}: {err}");
    }
}
