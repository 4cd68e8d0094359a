//! Finite-difference self-check over every tape primitive, every layer
//! family, the six assembled models and the siamese matching loss.
//!
//! Each case is evaluated at several random points and reports the worst
//! relative error between tape and central-difference gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gnn::{fgl2_layer, lgnn2_layer, mgnn_layer, BatchInputs, Family, ModelSpec, Variant};
use crate::graph::gen_erdos_renyi;
use crate::qap::{make_instance, matching_loss, siamese_scores, GraphFamily};
use crate::rng::{RngSeed, Stream};
use crate::tensor::{finite_diff_check_smooth, Params, Tape, Tensor, Var};
use crate::{GraphTensor, MaskedBatch};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradSuiteConfig {
    pub points: u64,
    pub eps: f64,
    pub seed: RngSeed,
}

impl Default for GradSuiteConfig {
    fn default() -> Self {
        GradSuiteConfig {
            points: 10,
            eps: 1e-4,
            seed: RngSeed(2718),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    /// "primitive", "layer", "model" or "loss".
    pub group: &'static str,
    pub name: String,
    pub max_error: f64,
    pub points: u64,
    /// Draws discarded because a stencil point crossed a relu kink.
    pub redraws: u64,
}

pub const GRAD_HEADER: &str = "group,case,max_rel_error,points,redraws";

/// Give up on a case after this many consecutive kink-crossing draws.
const MAX_REDRAWS: u64 = 100;

pub fn grad_csv(cases: &[GradCase]) -> String {
    let mut s = format!("{GRAD_HEADER}\n");
    for c in cases {
        s.push_str(&format!("{},{},{:.6e},{},{}\n", c.group, c.name, c.max_error, c.points, c.redraws));
    }
    s
}

pub fn run_grad_suite(cfg: &GradSuiteConfig) -> Result<Vec<GradCase>> {
    let mut out = primitive_cases(cfg)?;
    out.extend(layer_cases(cfg)?);
    out.extend(model_cases(cfg)?);
    out.extend(loss_cases(cfg)?);
    Ok(out)
}

/// Worst error over `cfg.points` accepted draws of `check`, which returns
/// `None` for a draw whose stencil crosses a kink.
fn sample<F>(group: &'static str, name: String, cfg: &GradSuiteConfig, seed: RngSeed, check: F) -> Result<GradCase>
where
    F: Fn(RngSeed) -> Result<Option<f64>>,
{
    let mut worst = 0.0f64;
    let mut redraws = 0;
    for p in 0..cfg.points {
        let mut attempt = 0;
        loop {
            match check(seed.derive(p).derive(attempt))? {
                Some(err) => {
                    worst = worst.max(err);
                    break;
                }
                None if attempt + 1 < MAX_REDRAWS => {
                    attempt += 1;
                    redraws += 1;
                }
                None => return Err(Error::Input(format!("{name}: every draw crosses a relu kink"))),
            }
        }
    }
    Ok(GradCase {
        group,
        name,
        max_error: worst,
        points: cfg.points,
        redraws,
    })
}

/// Random entries with magnitude in [0.05, 1], keeping relu kinks and log
/// poles outside the stencil.
fn away_from_zero(s: &mut Stream, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let v = s.uniform_in(0.05, 1.0);
            if s.bernoulli(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Contract any output with fixed random weights into a scalar.
fn project(tape: &mut Tape, y: Var, seed: RngSeed) -> Result<Var> {
    let w = away_from_zero(&mut seed.stream(), tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum_all(p))
}

type PrimFn = Box<dyn Fn(&mut Tape, Var, &mut Stream) -> Result<Var>>;

fn prim(name: &str, shape: &[usize], f: impl Fn(&mut Tape, Var, &mut Stream) -> Result<Var> + 'static) -> (String, Vec<usize>, PrimFn) {
    (name.to_string(), shape.to_vec(), Box::new(f))
}

fn with_const(
    shape: &'static [usize],
    op: fn(&mut Tape, Var, Var) -> Result<Var>,
    x_first: bool,
) -> impl Fn(&mut Tape, Var, &mut Stream) -> Result<Var> {
    move |t, x, s| {
        let other = t.constant(away_from_zero(s, shape));
        if x_first {
            op(t, x, other)
        } else {
            op(t, other, x)
        }
    }
}

fn pair_mask_4() -> Tensor {
    let mut pm = vec![1.0; 2 * 4 * 4];
    for i in 0..4 {
        for j in 0..4 {
            if i == 3 || j == 3 {
                pm[16 + i * 4 + j] = 0.0;
            }
        }
    }
    Tensor::new(vec![2, 4, 4], pm).expect("static shape")
}

fn primitive_cases(cfg: &GradSuiteConfig) -> Result<Vec<GradCase>> {
    let softmax_mask: Vec<bool> = (0..15).map(|i| i % 5 < 3 || i == 14).collect();
    let softmax_mask2 = softmax_mask.clone();
    let reduce_mask = [true, false, true, true, true, false];
    let node_mask = Tensor::new(vec![2, 3], vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0])?;
    let pm = pair_mask_4();
    let cases: Vec<(String, Vec<usize>, PrimFn)> = vec![
        prim("add", &[3, 4], with_const(&[3, 4], Tape::add, true)),
        prim("sub_lhs", &[3, 4], with_const(&[3, 4], Tape::sub, true)),
        prim("sub_rhs", &[3, 4], with_const(&[3, 4], Tape::sub, false)),
        prim("mul", &[3, 4], with_const(&[3, 4], Tape::mul, true)),
        prim("scale", &[2, 3], |t, x, _| Ok(t.scale(x, -1.7))),
        prim("scalar_mul_scalar", &[1], with_const(&[2, 3], Tape::scalar_mul, true)),
        prim("scalar_mul_tensor", &[2, 3], with_const(&[1], Tape::scalar_mul, false)),
        prim("matmul_lhs", &[3, 4], with_const(&[4, 2], Tape::matmul, true)),
        prim("matmul_rhs", &[4, 2], with_const(&[3, 4], Tape::matmul, false)),
        prim("bmm_lhs", &[2, 3, 4], with_const(&[2, 4, 5], Tape::matmul, true)),
        prim("bmm_rhs", &[2, 4, 5], with_const(&[2, 3, 4], Tape::matmul, false)),
        prim("transpose", &[2, 3, 5], |t, x, _| t.transpose(x)),
        prim("affine_x", &[2, 3, 4], |t, x, s| {
            let w = t.constant(away_from_zero(s, &[4, 5]));
            let b = t.constant(away_from_zero(s, &[5]));
            t.affine(x, w, Some(b))
        }),
        prim("affine_w", &[4, 5], |t, x, s| {
            let inp = t.constant(away_from_zero(s, &[6, 4]));
            t.affine(inp, x, None)
        }),
        prim("affine_b", &[5], |t, x, s| {
            let inp = t.constant(away_from_zero(s, &[6, 4]));
            let w = t.constant(away_from_zero(s, &[4, 5]));
            t.affine(inp, w, Some(x))
        }),
        prim("relu", &[4, 4], |t, x, _| Ok(t.relu(x))),
        prim("log", &[6], |t, x, _| {
            let sq = t.mul(x, x)?;
            Ok(t.log(sq))
        }),
        prim("softmax", &[3, 5], |t, x, _| t.row_softmax(x, None)),
        prim("log_softmax", &[3, 5], |t, x, _| t.log_softmax(x, None)),
        prim("softmax_masked", &[3, 5], move |t, x, _| t.row_softmax(x, Some(&softmax_mask))),
        prim("log_softmax_masked", &[3, 5], move |t, x, _| t.log_softmax(x, Some(&softmax_mask2))),
        prim("reduce_sum", &[2, 3, 4], |t, x, _| t.reduce_sum(x, &[0, 2], None)),
        prim("reduce_sum_masked", &[2, 3, 4], move |t, x, _| t.reduce_sum(x, &[1], Some((&[2, 3], &reduce_mask)))),
        prim("concat", &[2, 3], |t, x, s| {
            let other = t.constant(away_from_zero(s, &[2, 2]));
            t.concat(&[other, x, x])
        }),
        prim("reshape", &[2, 6], |t, x, _| t.reshape(x, &[3, 4])),
        prim("mask_last", &[2, 3, 2], move |t, x, _| t.mask_last(x, &node_mask)),
        prim("gather", &[6], |t, x, _| t.gather(x, &[5, 0, 0, 3])),
        prim("channel_matmul_lhs", &[2, 3, 4, 2], with_const(&[2, 4, 3, 2], Tape::channel_matmul, true)),
        prim("channel_matmul_rhs", &[2, 4, 3, 2], with_const(&[2, 3, 4, 2], Tape::channel_matmul, false)),
        prim("basis2", &[2, 4, 4, 2], move |t, x, _| t.lin_eq_basis2(x, &pm)),
        prim("expand_rows", &[2, 3, 2], |t, x, _| t.expand_rows(x)),
        prim("expand_cols", &[2, 3, 2], |t, x, _| t.expand_cols(x)),
        prim("broadcast_nodes", &[2, 3], |t, x, _| t.broadcast_nodes(x, 4)),
    ];
    cases
        .into_iter()
        .map(|(name, shape, f)| {
            let seed = cfg.seed.derive_str("primitive").derive_str(&name);
            sample("primitive", name, cfg, seed, |point| {
                let x = away_from_zero(&mut point.derive_str("x").stream(), &shape);
                let aux = point.derive_str("aux");
                finite_diff_check_smooth(
                    |tape, v| {
                        let y = f(tape, v, &mut aux.stream())?;
                        project(tape, y, aux.derive_str("proj"))
                    },
                    &x,
                    cfg.eps,
                )
            })
        })
        .collect()
}

/// Two padded graphs with one feature channel.
fn small_batch(seed: RngSeed) -> Result<MaskedBatch> {
    let graphs: Vec<GraphTensor> = [4, 5]
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let g = gen_erdos_renyi(n, 0.5, seed.derive(k as u64))?;
            let mut s = seed.derive_str("feat").derive(k as u64).stream();
            let feats: Vec<Vec<f64>> = (0..n).map(|_| vec![s.uniform_in(-1.0, 1.0)]).collect();
            GraphTensor::encode_dense(n, &g.edges(), Some(&feats))
        })
        .collect::<Result<_>>()?;
    MaskedBatch::new(&graphs)
}

fn tiny_spec(family: Family, variant: Variant, in_channels: usize) -> ModelSpec {
    let mut spec = ModelSpec::uniform(family, variant, in_channels, 2, 3);
    spec.out_dim = 2;
    spec
}

/// Glorot weights with every bias, diagonal bias and lambda drawn away from
/// zero, so those gradients are exercised too.
fn random_params(spec: &ModelSpec, seed: RngSeed) -> Result<Params> {
    let mut params = spec.init_params(seed)?;
    let mut s = seed.derive_str("bias").stream();
    for (name, t) in params.tensors.iter_mut() {
        if !name.ends_with(".w") {
            for v in t.data_mut() {
                *v = s.uniform_in(-0.3, 0.3);
            }
        }
    }
    Ok(params)
}

/// Check `f` with respect to each tensor in `params` and to `extra`, if
/// given, recording the rest as constants.
fn per_tensor_error<F>(params: &Params, extra: Option<&Tensor>, eps: f64, proj: RngSeed, f: F) -> Result<Option<f64>>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>, Option<Var>) -> Result<Var>,
{
    let mut worst = 0.0f64;
    let run = |tape: &mut Tape, name: Option<&String>, v: Var| -> Result<Var> {
        let mut vars = BTreeMap::new();
        for (k, t) in &params.tensors {
            let var = if Some(k) == name { v } else { tape.constant(t.clone()) };
            vars.insert(k.clone(), var);
        }
        let x = match (name, extra) {
            (None, Some(_)) => Some(v),
            (_, Some(e)) => Some(tape.constant(e.clone())),
            _ => None,
        };
        let y = f(tape, &vars, x)?;
        project(tape, y, proj)
    };
    for (name, value) in &params.tensors {
        match finite_diff_check_smooth(|t, v| run(t, Some(name), v), value, eps)? {
            Some(e) => worst = worst.max(e),
            None => return Ok(None),
        }
    }
    if let Some(e) = extra {
        match finite_diff_check_smooth(|t, v| run(t, None, v), e, eps)? {
            Some(e) => worst = worst.max(e),
            None => return Ok(None),
        }
    }
    Ok(Some(worst))
}

fn layer_cases(cfg: &GradSuiteConfig) -> Result<Vec<GradCase>> {
    Family::ALL
        .into_iter()
        .map(|family| {
            let mut spec = tiny_spec(family, Variant::Invariant, 2);
            spec.layer_widths = vec![3];
            let mlps: BTreeMap<&str, _> = spec.layer_mlps(0).into_iter().collect();
            let seed = cfg.seed.derive_str("layer").derive_str(&family.to_string());
            sample("layer", format!("{family}_layer"), cfg, seed, |point| {
                let batch = small_batch(point.derive_str("graphs"))?;
                let inp = BatchInputs::new(&batch);
                let all = random_params(&spec, point.derive_str("params"))?;
                // keep only this layer's tensors
                let mut params = Params::default();
                for (k, t) in &all.tensors {
                    if k.starts_with("layer0.") {
                        params.insert(k.clone(), t.clone());
                    }
                }
                let h_shape = match family {
                    Family::Mgnn => vec![inp.b, inp.n, spec.input_width()],
                    _ => vec![inp.b, inp.n, inp.n, spec.input_width()],
                };
                let h = away_from_zero(&mut point.derive_str("h").stream(), &h_shape);
                per_tensor_error(&params, Some(&h), cfg.eps, point.derive_str("proj"), |tape, vars, h| {
                    let h = h.expect("layer input supplied");
                    match family {
                        Family::Mgnn => mgnn_layer(tape, vars, &inp, h, &mlps["f0"], &mlps["f1"], "layer0"),
                        Family::Fgnn2 => {
                            fgl2_layer(tape, vars, &inp, h, &mlps["f0"], &mlps["f1"], &mlps["f2"], "layer0")
                        }
                        Family::Lgnn2 => lgnn2_layer(tape, vars, &inp, h, &mlps["f"], "layer0"),
                    }
                })
            })
        })
        .collect()
}

fn model_cases(cfg: &GradSuiteConfig) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for family in Family::ALL {
        for variant in [Variant::Invariant, Variant::Equivariant] {
            let spec = tiny_spec(family, variant, 2);
            let tag = format!("{family}_{}", if variant == Variant::Invariant { "i" } else { "e" });
            let seed = cfg.seed.derive_str("model").derive_str(&tag);
            out.push(sample("model", tag, cfg, seed, |point| {
                let batch = small_batch(point.derive_str("graphs"))?;
                let inp = BatchInputs::new(&batch);
                let params = random_params(&spec, point.derive_str("params"))?;
                per_tensor_error(&params, None, cfg.eps, point.derive_str("proj"), |tape, vars, _| {
                    spec.forward(tape, vars, &inp)
                })
            })?);
        }
    }
    Ok(out)
}

fn loss_cases(cfg: &GradSuiteConfig) -> Result<Vec<GradCase>> {
    let spec = tiny_spec(Family::Fgnn2, Variant::Equivariant, 1);
    let seed = cfg.seed.derive_str("loss");
    let case = sample("loss", "siamese_matching_loss".into(), cfg, seed, |point| {
        let insts: Vec<_> = [5, 6]
            .iter()
            .enumerate()
            .map(|(k, &n)| make_instance(&GraphFamily::Er { n, p: 0.4 }, 0.05, true, point, k))
            .collect::<Result<_>>()?;
        let refs: Vec<_> = insts.iter().collect();
        let truths: Vec<_> = insts.iter().map(|m| &m.truth).collect();
        let params = random_params(&spec, point.derive_str("params"))?;
        // the loss is already scalar, so the projection is a fixed rescale
        per_tensor_error(&params, None, cfg.eps, point.derive_str("proj"), |tape, vars, _| {
            let s = siamese_scores(tape, &spec, vars, &refs)?;
            matching_loss(tape, s, &truths)
        })
    })?;
    Ok(vec![case])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_point_suite_passes() {
        let cfg = GradSuiteConfig {
            points: 1,
            ..GradSuiteConfig::default()
        };
        let cases = run_grad_suite(&cfg).unwrap();
        assert!(cases.len() > 40);
        for c in &cases {
            assert!(c.max_error < 1e-4, "{c:?}");
        }
        assert_eq!(grad_csv(&cases).lines().count(), cases.len() + 1);
    }
}
