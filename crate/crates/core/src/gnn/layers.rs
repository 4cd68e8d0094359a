use super::mlp::{lookup, MlpSpec};
use crate::error::{Error, Result};
use crate::graph::{GraphTensor, MaskedBatch};
use crate::tensor::{Tape, Tensor, Var};
use std::collections::BTreeMap;

/// Constant tensors derived from a batch, shared by every layer.
///
/// Shapes: `x` is `[b, n, n, c]`, `pairs` is `[b, n, n]` (1 where both
/// nodes are real), `nodes` is `[b, n]`, `adjacency` is `[b, n, n]`,
/// `delta` is `[b, n, n, 1]` with 1 on real diagonal entries.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    pub b: usize,
    pub n: usize,
    pub c: usize,
    pub x: Tensor,
    pub pairs: Tensor,
    pub nodes: Tensor,
    pub adjacency: Tensor,
    pub delta: Tensor,
    pub pair_bool: Vec<bool>,
    pub node_bool: Vec<bool>,
}

impl BatchInputs {
    pub fn new(batch: &MaskedBatch) -> Self {
        let [b, n, _, c] = batch.shape();
        let node_bool = batch.mask().to_vec();
        let mut pair_bool = vec![false; b * n * n];
        let mut adjacency = vec![0.0; b * n * n];
        let mut delta = vec![0.0; b * n * n];
        for g in 0..b {
            for i in 0..n {
                for j in 0..n {
                    let p = (g * n + i) * n + j;
                    pair_bool[p] = node_bool[g * n + i] && node_bool[g * n + j];
                    adjacency[p] = batch.data()[p * c + c - 1];
                    if i == j && pair_bool[p] {
                        delta[p] = 1.0;
                    }
                }
            }
        }
        let flag = |v: &[bool]| v.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
        BatchInputs {
            b,
            n,
            c,
            x: Tensor::new(vec![b, n, n, c], batch.data().to_vec()).unwrap(),
            pairs: Tensor::new(vec![b, n, n], flag(&pair_bool)).unwrap(),
            nodes: Tensor::new(vec![b, n], flag(&node_bool)).unwrap(),
            adjacency: Tensor::new(vec![b, n, n], adjacency).unwrap(),
            delta: Tensor::new(vec![b, n, n, 1], delta).unwrap(),
            pair_bool,
            node_bool,
        }
    }

    /// Node inputs for message passing: a constant 1 followed by the node
    /// features on the diagonal, `[b, n, c]`.
    pub fn node_inputs(&self) -> Tensor {
        let (b, n, c) = (self.b, self.n, self.c);
        let mut out = vec![0.0; b * n * c];
        for g in 0..b {
            for i in 0..n {
                if !self.node_bool[g * n + i] {
                    continue;
                }
                let row = &mut out[(g * n + i) * c..(g * n + i + 1) * c];
                row[0] = 1.0;
                for f in 0..c - 1 {
                    row[f + 1] = self.x.data()[((g * n + i) * n + i) * c + f];
                }
            }
        }
        Tensor::new(vec![b, n, c], out).unwrap()
    }
}

/// Append the Kronecker-delta channel: `out[i, j] = (G[i, j, ..], δ_ij)`.
pub fn i2_init(g: &GraphTensor) -> Tensor {
    let (n, c) = (g.n(), g.channels());
    let mut out = Vec::with_capacity(n * n * (c + 1));
    for i in 0..n {
        for j in 0..n {
            let k = g.index(i, j, 0);
            out.extend_from_slice(&g.data()[k..k + c]);
            out.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    Tensor::new(vec![n, n, c + 1], out).unwrap()
}

/// Batched [`i2_init`] recorded on the tape.
pub fn i2_init_var(tape: &mut Tape, inp: &BatchInputs) -> Result<Var> {
    let x = tape.constant(inp.x.clone());
    let d = tape.constant(inp.delta.clone());
    tape.concat(&[x, d])
}

fn last_width(tape: &Tape, v: Var) -> usize {
    *tape.shape(v).last().unwrap()
}

fn check_width(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::input(format!("{what}: expected width {expected}, got {got}")));
    }
    Ok(())
}

/// Message passing: `h'_i = f0(h_i, Σ_{j ~ i} f1(h_i, h_j))` on `[b, n, d]`.
#[allow(clippy::too_many_arguments)]
pub fn mgnn_layer(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    inp: &BatchInputs,
    h: Var,
    f0: &MlpSpec,
    f1: &MlpSpec,
    prefix: &str,
) -> Result<Var> {
    let d = last_width(tape, h);
    check_width("mgnn f1 input", 2 * d, f1.input())?;
    check_width("mgnn f0 input", d + f1.output(), f0.input())?;
    let hi = tape.expand_rows(h)?;
    let hj = tape.expand_cols(h)?;
    let pair = tape.concat(&[hi, hj])?;
    let msg = f1.apply(tape, vars, &format!("{prefix}.f1"), pair)?;
    let msg = tape.mask_last(msg, &inp.adjacency)?;
    let agg = tape.reduce_sum(msg, &[2], None)?;
    let cat = tape.concat(&[h, agg])?;
    let out = f0.apply(tape, vars, &format!("{prefix}.f0"), cat)?;
    tape.mask_last(out, &inp.nodes)
}

/// Folklore layer at order 2:
/// `F(H)_{i,k} = f0(H_{i,k}, Σ_j f2(H_{i,j}) ⊙ f1(H_{j,k}))`.
#[allow(clippy::too_many_arguments)]
pub fn fgl2_layer(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    inp: &BatchInputs,
    h: Var,
    f0: &MlpSpec,
    f1: &MlpSpec,
    f2: &MlpSpec,
    prefix: &str,
) -> Result<Var> {
    let d = last_width(tape, h);
    check_width("fgl f1 input", d, f1.input())?;
    check_width("fgl f2 input", d, f2.input())?;
    check_width("fgl f2 output", f1.output(), f2.output())?;
    check_width("fgl f0 input", d + f1.output(), f0.input())?;
    let a = f1.apply(tape, vars, &format!("{prefix}.f1"), h)?;
    let a = tape.mask_last(a, &inp.pairs)?;
    let b = f2.apply(tape, vars, &format!("{prefix}.f2"), h)?;
    let b = tape.mask_last(b, &inp.pairs)?;
    let m = tape.channel_matmul(b, a)?;
    let cat = tape.concat(&[h, m])?;
    let out = f0.apply(tape, vars, &format!("{prefix}.f0"), cat)?;
    tape.mask_last(out, &inp.pairs)
}

/// Linear equivariant layer `f(L[H])`, where `L` mixes the fifteen basis
/// maps with weights `{prefix}.lin.w: [15 d, d']`, adds a constant bias
/// `{prefix}.lin.b: [d']` and a diagonal bias `{prefix}.lin.diag: [1, d']`.
pub fn lgnn2_layer(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    inp: &BatchInputs,
    h: Var,
    f: &MlpSpec,
    prefix: &str,
) -> Result<Var> {
    let w = lookup(vars, &format!("{prefix}.lin.w"))?;
    let b = lookup(vars, &format!("{prefix}.lin.b"))?;
    let diag = lookup(vars, &format!("{prefix}.lin.diag"))?;
    let basis = tape.lin_eq_basis2(h, &inp.pairs)?;
    let lin = tape.affine(basis, w, Some(b))?;
    let delta = tape.constant(inp.delta.clone());
    let dbias = tape.affine(delta, diag, None)?;
    let lin = tape.add(lin, dbias)?;
    let lin = tape.mask_last(lin, &inp.pairs)?;
    check_width("lgnn f input", last_width(tape, lin), f.input())?;
    let out = f.apply(tape, vars, &format!("{prefix}.f"), lin)?;
    tape.mask_last(out, &inp.pairs)
}

/// `Σ_{i,j} H_{i,j}`: `[b, n, n, c] -> [b, c]`.
pub fn s2_sum(tape: &mut Tape, inp: &BatchInputs, h: Var) -> Result<Var> {
    tape.reduce_sum(h, &[1, 2], Some((&[inp.b, inp.n, inp.n], &inp.pair_bool)))
}

/// `(Σ_j H_{i,j})_i`: `[b, n, n, c] -> [b, n, c]`.
pub fn s2_1_reduce(tape: &mut Tape, inp: &BatchInputs, h: Var) -> Result<Var> {
    tape.reduce_sum(h, &[2], Some((&[inp.b, inp.n, inp.n], &inp.pair_bool)))
}

/// `Σ_i h_i`: `[b, n, c] -> [b, c]`.
pub fn s1_sum(tape: &mut Tape, inp: &BatchInputs, h: Var) -> Result<Var> {
    tape.reduce_sum(h, &[1], Some((&[inp.b, inp.n], &inp.node_bool)))
}

/// `h_i + λ Σ_j h_j` for a one-element `λ`, padded nodes kept at 0.
pub fn id_plus_lambda_s1(tape: &mut Tape, inp: &BatchInputs, h: Var, lambda: Var) -> Result<Var> {
    let s = s1_sum(tape, inp, h)?;
    let s = tape.broadcast_nodes(s, inp.n)?;
    let s = tape.scalar_mul(lambda, s)?;
    let out = tape.add(h, s)?;
    tape.mask_last(out, &inp.nodes)
}
