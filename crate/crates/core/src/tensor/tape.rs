use super::{basis, kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScalarMul { s: Var, x: Var },
    MatMul { a: Var, b: Var, bt: usize, m: usize, p: usize, q: usize },
    TransposeLast2 { x: Var, bt: usize, r: usize, c: usize },
    Affine { x: Var, w: Var, b: Option<Var>, k: usize, m: usize },
    Relu(Var),
    Log(Var),
    Softmax { x: Var, mask: Option<Vec<bool>>, m: usize },
    LogSoftmax { x: Var, mask: Option<Vec<bool>>, m: usize },
    ReduceSum { x: Var, map: Vec<usize>, weight: Option<Vec<f64>> },
    Concat { parts: Vec<(Var, usize)>, rows: usize },
    Reshape(Var),
    MaskLast { x: Var, mask: Vec<f64>, c: usize },
    ChannelMatMul { a: Var, y: Var, dims: [usize; 5] },
    Basis2 { x: Var, pair_mask: Vec<f64>, bt: usize, n: usize, c: usize },
    ExpandRows { x: Var, bt: usize, n: usize, d: usize },
    ExpandCols { x: Var, bt: usize, n: usize, d: usize },
    Broadcast { x: Var, outer: usize, n: usize, d: usize },
    Gather { x: Var, idx: Vec<usize> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![*a, *b],
            ScalarMul { s, x } => vec![*s, *x],
            MatMul { a, b, .. } => vec![*a, *b],
            ChannelMatMul { a, y, .. } => vec![*a, *y],
            Affine { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Concat { parts, .. } => parts.iter().map(|p| p.0).collect(),
            Scale(x, _) | Relu(x) | Log(x) | Reshape(x) => vec![*x],
            TransposeLast2 { x, .. }
            | Softmax { x, .. }
            | LogSoftmax { x, .. }
            | ReduceSum { x, .. }
            | MaskLast { x, .. }
            | Basis2 { x, .. }
            | ExpandRows { x, .. }
            | ExpandCols { x, .. }
            | Broadcast { x, .. }
            | Gather { x, .. } => vec![*x],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive applications in execution order.
///
/// Values live on the tape; [`Var`] handles index into it. A node requires a
/// gradient when any of its inputs does, and [`Tape::backward`] walks the
/// recorded nodes once in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, detail: impl std::fmt::Display) -> Error {
    Error::Input(format!("{op}: {detail}"))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Which relu inputs are positive, over every recorded relu in order.
    /// Two evaluations with the same pattern lie on the same linear piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|node| match node.op {
                Op::Relu(x) => Some(&self.nodes[x.0].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|&v| v > 0.0))
            .collect()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip(a, b, |p, q| p + q);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip(a, b, |p, q| p - q);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product of equal-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip(a, b, |p, q| p * q);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Multiply by a fixed constant.
    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let t = self.value(x);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&p| p * k).collect()).unwrap();
        self.push(v, Op::Scale(x, k))
    }

    /// `s * x` for a one-element tensor `s`.
    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("scalar_mul", format!("scalar has shape {:?}", self.shape(s))));
        }
        let k = self.value(s).data()[0];
        let t = self.value(x);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&p| p * k).collect()).unwrap();
        Ok(self.push(v, Op::ScalarMul { s, x }))
    }

    /// `[m, p] · [p, q]` or batched `[b, m, p] · [b, p, q]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (bt, m, p, q, out_shape) = match (sa.as_slice(), sb.as_slice()) {
            ([m, p], [p2, q]) if p == p2 => (1, *m, *p, *q, vec![*m, *q]),
            ([b1, m, p], [b2, p2, q]) if p == p2 && b1 == b2 => (*b1, *m, *p, *q, vec![*b1, *m, *q]),
            _ => return Err(shape_err("matmul", format!("incompatible shapes {sa:?} and {sb:?}"))),
        };
        let out = kernels::bmm(self.value(a).data(), self.value(b).data(), bt, m, p, q);
        let v = Tensor::new(out_shape, out)?;
        Ok(self.push(v, Op::MatMul { a, b, bt, m, p, q }))
    }

    /// Swap the last two axes of a 2-D or 3-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (bt, r, c, out_shape) = match s.as_slice() {
            [r, c] => (1, *r, *c, vec![*c, *r]),
            [b, r, c] => (*b, *r, *c, vec![*b, *c, *r]),
            _ => return Err(shape_err("transpose", format!("expected 2-D or 3-D, got {s:?}"))),
        };
        let out = kernels::transpose_last2(self.value(x).data(), bt, r, c);
        let v = Tensor::new(out_shape, out)?;
        Ok(self.push(v, Op::TransposeLast2 { x, bt, r, c }))
    }

    /// `x · w + b` over the last axis: `x: [.., k]`, `w: [k, m]`, `b: [m]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (k, m) = match sw.as_slice() {
            [k, m] => (*k, *m),
            _ => return Err(shape_err("affine", format!("weight must be 2-D, got {sw:?}"))),
        };
        if sx.last() != Some(&k) {
            return Err(shape_err("affine", format!("input {sx:?} does not end in {k}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(shape_err("affine", format!("bias {:?} is not [{m}]", self.shape(b))));
            }
        }
        let bias = b.map(|b| self.value(b).data().to_vec());
        let out = kernels::affine_forward(self.value(x).data(), self.value(w).data(), bias.as_deref(), k, m);
        let mut shape = sx;
        *shape.last_mut().unwrap() = m;
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Affine { x, w, b, k, m }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&p| p.max(0.0)).collect()).unwrap();
        self.push(v, Op::Relu(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&p| p.ln()).collect()).unwrap();
        self.push(v, Op::Log(x))
    }

    fn check_row_mask(&self, op: &str, x: Var, mask: Option<&[bool]>) -> Result<usize> {
        let s = self.shape(x);
        let m = *s.last().ok_or_else(|| shape_err(op, "scalar input"))?;
        if let Some(mask) = mask {
            if mask.len() != self.value(x).len() {
                return Err(shape_err(op, "mask must match the input shape"));
            }
            if m == 0 || mask.chunks(m).any(|row| !row.iter().any(|&b| b)) {
                return Err(shape_err(op, "a row has no unmasked entries"));
            }
        }
        Ok(m)
    }

    /// Softmax along the last axis. Masked entries are excluded from the
    /// normalization and come out as 0.
    pub fn row_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let m = self.check_row_mask("row_softmax", x, mask)?;
        let t = self.value(x);
        let mut out = vec![0.0; t.len()];
        for (r, (xr, or)) in t.data().chunks(m).zip(out.chunks_mut(m)).enumerate() {
            let keep = |j: usize| mask.is_none_or(|mk| mk[r * m + j]);
            let mx = (0..m).filter(|&j| keep(j)).map(|j| xr[j]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in (0..m).filter(|&j| keep(j)) {
                or[j] = (xr[j] - mx).exp();
                z += or[j];
            }
            for o in or.iter_mut() {
                *o /= z;
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(v, Op::Softmax { x, mask: mask.map(<[bool]>::to_vec), m }))
    }

    /// Numerically stable `log softmax` along the last axis, masked like
    /// [`Tape::row_softmax`]; masked entries come out as 0.
    pub fn log_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let m = self.check_row_mask("log_softmax", x, mask)?;
        let t = self.value(x);
        let mut out = vec![0.0; t.len()];
        for (r, (xr, or)) in t.data().chunks(m).zip(out.chunks_mut(m)).enumerate() {
            let keep = |j: usize| mask.is_none_or(|mk| mk[r * m + j]);
            let mx = (0..m).filter(|&j| keep(j)).map(|j| xr[j]).fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + (0..m).filter(|&j| keep(j)).map(|j| (xr[j] - mx).exp()).sum::<f64>().ln();
            for j in (0..m).filter(|&j| keep(j)) {
                or[j] = xr[j] - lse;
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(v, Op::LogSoftmax { x, mask: mask.map(<[bool]>::to_vec), m }))
    }

    /// Sum over `axes`. With a mask, entries whose mask value is false are
    /// skipped; the mask covers the leading `mask_shape.len()` axes of `x`
    /// (which must include every reduced axis) and is broadcast over the rest.
    pub fn reduce_sum(&mut self, x: Var, axes: &[usize], mask: Option<(&[usize], &[bool])>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.iter().any(|&a| a >= shape.len()) {
            return Err(shape_err("reduce_sum", format!("axes {axes:?} out of range for {shape:?}")));
        }
        let weight = match mask {
            None => None,
            Some((mshape, mvals)) => {
                let d = mshape.len();
                if mshape != &shape[..d.min(shape.len())] || d > shape.len() {
                    return Err(shape_err("reduce_sum", format!("mask shape {mshape:?} is not a prefix of {shape:?}")));
                }
                if axes.iter().any(|&a| a >= d) {
                    return Err(shape_err("reduce_sum", "mask must cover every reduced axis"));
                }
                if mvals.len() != mshape.iter().product::<usize>() {
                    return Err(shape_err("reduce_sum", "mask length does not match its shape"));
                }
                let inner: usize = shape[d..].iter().product();
                Some(
                    mvals
                        .iter()
                        .flat_map(|&b| std::iter::repeat_n(if b { 1.0 } else { 0.0 }, inner))
                        .collect::<Vec<f64>>(),
                )
            }
        };
        let out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &s)| s)
            .collect();
        let map = reduction_map(&shape, &axes);
        let out_len: usize = out_shape.iter().product();
        let mut out = vec![0.0; out_len.max(1)];
        let xd = self.value(x).data();
        for (i, &o) in map.iter().enumerate() {
            let w = weight.as_ref().map_or(1.0, |w| w[i]);
            out[o] += w * xd[i];
        }
        let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
        let v = Tensor::new(out_shape, out)?;
        Ok(self.push(v, Op::ReduceSum { x, map, weight }))
    }

    /// Sum of every entry, shape `[1]`.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce_sum(x, &axes, None).expect("valid axes")
    }

    /// Concatenate along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(shape_err("concat", format!("leading shape mismatch: {s:?} vs {lead:?}")));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(
            v,
            Op::Concat {
                parts: parts.iter().copied().zip(widths).collect(),
                rows,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// `x[.., c] * mask[..]`: a constant mask over all axes but the last.
    pub fn mask_last(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != mask.shape().len() + 1 || s[..s.len() - 1] != *mask.shape() {
            return Err(shape_err("mask_last", format!("mask {:?} does not fit {s:?}", mask.shape())));
        }
        let c = *s.last().unwrap();
        let t = self.value(x);
        let out: Vec<f64> = t
            .data()
            .chunks(c.max(1))
            .zip(mask.data())
            .flat_map(|(row, &m)| row.iter().map(move |&p| p * m))
            .collect();
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::MaskLast {
                x,
                mask: mask.data().to_vec(),
                c,
            },
        ))
    }

    /// Channel-wise matrix product over the two node axes:
    /// `[.., m, p, c] x [.., p, q, c] -> [.., m, q, c]`.
    pub fn channel_matmul(&mut self, a: Var, y: Var) -> Result<Var> {
        let (sa, sy) = (self.shape(a).to_vec(), self.shape(y).to_vec());
        if sa.len() < 3 || sa.len() != sy.len() {
            return Err(shape_err("channel_matmul", format!("shapes {sa:?} and {sy:?}")));
        }
        let r = sa.len();
        let lead = &sa[..r - 3];
        let (m, p, c) = (sa[r - 3], sa[r - 2], sa[r - 1]);
        let (p2, q, c2) = (sy[r - 3], sy[r - 2], sy[r - 1]);
        if lead != &sy[..r - 3] || p != p2 || c != c2 {
            return Err(shape_err("channel_matmul", format!("shapes {sa:?} and {sy:?}")));
        }
        let bt: usize = lead.iter().product();
        let out = kernels::channel_matmul(self.value(a).data(), self.value(y).data(), bt, m, p, q, c);
        let mut shape = lead.to_vec();
        shape.extend([m, q, c]);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::ChannelMatMul { a, y, dims: [bt, m, p, q, c] }))
    }

    /// All fifteen equivariant linear maps applied to `x: [b, n, n, c]`;
    /// output `[b, n, n, 15 c]` with basis-major channels. See
    /// [`super::BASIS2_NAMES`] for the order.
    pub fn lin_eq_basis2(&mut self, x: Var, pair_mask: &Tensor) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (bt, n, c) = match s.as_slice() {
            [b, n1, n2, c] if n1 == n2 => (*b, *n1, *c),
            _ => return Err(shape_err("lin_eq_basis2", format!("expected [b, n, n, c], got {s:?}"))),
        };
        if pair_mask.shape() != [bt, n, n] {
            return Err(shape_err("lin_eq_basis2", "pair mask must be [b, n, n]"));
        }
        let out = basis::forward(self.value(x).data(), pair_mask.data(), bt, n, c);
        let v = Tensor::new(vec![bt, n, n, basis::BASIS2_COUNT * c], out)?;
        Ok(self.push(
            v,
            Op::Basis2 {
                x,
                pair_mask: pair_mask.data().to_vec(),
                bt,
                n,
                c,
            },
        ))
    }

    fn node_dims(&self, op: &str, x: Var) -> Result<(usize, usize, usize)> {
        match self.shape(x) {
            [b, n, d] => Ok((*b, *n, *d)),
            s => Err(shape_err(op, format!("expected [b, n, d], got {s:?}"))),
        }
    }

    /// `[b, n, d] -> [b, n, n, d]` with `out[b, i, j] = x[b, i]`.
    pub fn expand_rows(&mut self, x: Var) -> Result<Var> {
        let (bt, n, d) = self.node_dims("expand_rows", x)?;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(bt * n * n * d);
        for b in 0..bt {
            for i in 0..n {
                let row = &xd[(b * n + i) * d..(b * n + i + 1) * d];
                for _ in 0..n {
                    out.extend_from_slice(row);
                }
            }
        }
        let v = Tensor::new(vec![bt, n, n, d], out)?;
        Ok(self.push(v, Op::ExpandRows { x, bt, n, d }))
    }

    /// `[b, n, d] -> [b, n, n, d]` with `out[b, i, j] = x[b, j]`.
    pub fn expand_cols(&mut self, x: Var) -> Result<Var> {
        let (bt, n, d) = self.node_dims("expand_cols", x)?;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(bt * n * n * d);
        for b in 0..bt {
            let block = &xd[b * n * d..(b + 1) * n * d];
            for _ in 0..n {
                out.extend_from_slice(block);
            }
        }
        let v = Tensor::new(vec![bt, n, n, d], out)?;
        Ok(self.push(v, Op::ExpandCols { x, bt, n, d }))
    }

    /// `[b, d] -> [b, n, d]`, copying each row `n` times.
    pub fn broadcast_nodes(&mut self, x: Var, n: usize) -> Result<Var> {
        let (outer, d) = match self.shape(x) {
            [b, d] => (*b, *d),
            s => return Err(shape_err("broadcast_nodes", format!("expected [b, d], got {s:?}"))),
        };
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * n * d);
        for b in 0..outer {
            for _ in 0..n {
                out.extend_from_slice(&xd[b * d..(b + 1) * d]);
            }
        }
        let v = Tensor::new(vec![outer, n, d], out)?;
        Ok(self.push(v, Op::Broadcast { x, outer, n, d }))
    }

    /// Pick entries by flat index into a `[len]` tensor.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let len = self.value(x).len();
        if let Some(&bad) = idx.iter().find(|&&i| i >= len) {
            return Err(shape_err("gather", format!("index {bad} out of range for {len} entries")));
        }
        let xd = self.value(x).data();
        let v = Tensor::from_vec(idx.iter().map(|&i| xd[i]).collect());
        Ok(self.push(v, Op::Gather { x, idx: idx.to_vec() }))
    }

    /// Reverse-mode gradients of the scalar `loss` w.r.t. every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::input(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads: grads
                .into_iter()
                .enumerate()
                .map(|(i, g)| g.map(|g| Tensor::new(self.nodes[i].value.shape().to_vec(), g).unwrap()))
                .collect(),
        })
    }

    fn propagate(&self, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &dyn Fn() -> Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let d = f();
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, x) in existing.iter_mut().zip(d) {
                        *e += x;
                    }
                }
                slot @ None => *slot = Some(d),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &|| g.to_vec());
                acc(*b, &|| g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, &|| g.to_vec());
                acc(*b, &|| g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                acc(*a, &|| g.iter().zip(val(*b)).map(|(x, y)| x * y).collect());
                acc(*b, &|| g.iter().zip(val(*a)).map(|(x, y)| x * y).collect());
            }
            Op::Scale(x, k) => acc(*x, &|| g.iter().map(|v| v * k).collect()),
            Op::ScalarMul { s, x } => {
                let k = val(*s)[0];
                acc(*s, &|| vec![g.iter().zip(val(*x)).map(|(a, b)| a * b).sum()]);
                acc(*x, &|| g.iter().map(|v| v * k).collect());
            }
            Op::MatMul { a, b, bt, m, p, q } => {
                let (bt, m, p, q) = (*bt, *m, *p, *q);
                acc(*a, &|| {
                    let bt_ = kernels::transpose_last2(val(*b), bt, p, q);
                    kernels::bmm(g, &bt_, bt, m, q, p)
                });
                acc(*b, &|| {
                    let at = kernels::transpose_last2(val(*a), bt, m, p);
                    kernels::bmm(&at, g, bt, p, m, q)
                });
            }
            Op::TransposeLast2 { x, bt, r, c } => acc(*x, &|| kernels::transpose_last2(g, *bt, *c, *r)),
            Op::Affine { x, w, b, k, m } => {
                let (k, m) = (*k, *m);
                acc(*x, &|| kernels::affine_backward_input(g, val(*w), k, m));
                let need_w = self.nodes[w.0].requires_grad;
                let need_b = b.is_some_and(|b| self.nodes[b.0].requires_grad);
                if need_w || need_b {
                    let (dw, db) = kernels::affine_backward_params(val(*x), g, k, m);
                    acc(*w, &|| dw.clone());
                    if let Some(b) = b {
                        acc(*b, &|| db.clone());
                    }
                }
            }
            Op::Relu(x) => acc(*x, &|| {
                g.iter().zip(val(*x)).map(|(d, &v)| if v > 0.0 { *d } else { 0.0 }).collect()
            }),
            Op::Log(x) => acc(*x, &|| g.iter().zip(val(*x)).map(|(d, v)| d / v).collect()),
            Op::Softmax { x, mask, m } => {
                let out = softmax_out(self, *x, mask.as_deref(), *m);
                acc(*x, &|| {
                    let mut d = vec![0.0; g.len()];
                    for ((dr, gr), yr) in d.chunks_mut(*m).zip(g.chunks(*m)).zip(out.chunks(*m)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    d
                });
            }
            Op::LogSoftmax { x, mask, m } => {
                let sm = softmax_out(self, *x, mask.as_deref(), *m);
                acc(*x, &|| {
                    let mut d = vec![0.0; g.len()];
                    for (r, ((dr, gr), yr)) in d.chunks_mut(*m).zip(g.chunks(*m)).zip(sm.chunks(*m)).enumerate() {
                        let keep = |j: usize| mask.as_ref().is_none_or(|mk| mk[r * m + j]);
                        let total: f64 = (0..*m).filter(|&j| keep(j)).map(|j| gr[j]).sum();
                        for j in (0..*m).filter(|&j| keep(j)) {
                            dr[j] = gr[j] - yr[j] * total;
                        }
                    }
                    d
                });
            }
            Op::ReduceSum { x, map, weight } => acc(*x, &|| {
                map.iter()
                    .enumerate()
                    .map(|(i, &o)| g[o] * weight.as_ref().map_or(1.0, |w| w[i]))
                    .collect()
            }),
            Op::Concat { parts, rows } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut off = 0;
                for &(p, w) in parts {
                    let o = off;
                    acc(p, &|| {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..*rows {
                            d.extend_from_slice(&g[r * total + o..r * total + o + w]);
                        }
                        d
                    });
                    off += w;
                }
            }
            Op::Reshape(x) => acc(*x, &|| g.to_vec()),
            Op::MaskLast { x, mask, c } => acc(*x, &|| {
                g.chunks((*c).max(1))
                    .zip(mask)
                    .flat_map(|(row, &m)| row.iter().map(move |&p| p * m))
                    .collect()
            }),
            Op::ChannelMatMul { a, y, dims } => {
                let [bt, m, p, q, c] = *dims;
                acc(*a, &|| kernels::channel_matmul_grad_a(g, val(*y), bt, m, p, q, c));
                acc(*y, &|| kernels::channel_matmul_grad_y(g, val(*a), bt, m, p, q, c));
            }
            Op::Basis2 { x, pair_mask, bt, n, c } => acc(*x, &|| basis::adjoint(g, pair_mask, *bt, *n, *c)),
            Op::ExpandRows { x, bt, n, d } => acc(*x, &|| {
                let (bt, n, d) = (*bt, *n, *d);
                let mut out = vec![0.0; bt * n * d];
                for b in 0..bt {
                    for i in 0..n {
                        let o = &mut out[(b * n + i) * d..(b * n + i + 1) * d];
                        for j in 0..n {
                            let gr = &g[((b * n + i) * n + j) * d..((b * n + i) * n + j + 1) * d];
                            for (x, y) in o.iter_mut().zip(gr) {
                                *x += y;
                            }
                        }
                    }
                }
                out
            }),
            Op::ExpandCols { x, bt, n, d } => acc(*x, &|| {
                let (bt, n, d) = (*bt, *n, *d);
                let mut out = vec![0.0; bt * n * d];
                for b in 0..bt {
                    for i in 0..n {
                        for j in 0..n {
                            let gr = &g[((b * n + i) * n + j) * d..((b * n + i) * n + j + 1) * d];
                            let o = &mut out[(b * n + j) * d..(b * n + j + 1) * d];
                            for (x, y) in o.iter_mut().zip(gr) {
                                *x += y;
                            }
                        }
                    }
                }
                out
            }),
            Op::Broadcast { x, outer, n, d } => acc(*x, &|| {
                let (outer, n, d) = (*outer, *n, *d);
                let mut out = vec![0.0; outer * d];
                for b in 0..outer {
                    for i in 0..n {
                        for k in 0..d {
                            out[b * d + k] += g[(b * n + i) * d + k];
                        }
                    }
                }
                out
            }),
            Op::Gather { x, idx } => acc(*x, &|| {
                let mut out = vec![0.0; self.nodes[x.0].value.len()];
                for (&i, &gv) in idx.iter().zip(g) {
                    out[i] += gv;
                }
                out
            }),
        }
    }
}

/// Softmax of the input of a softmax-family node, recomputed for backward.
fn softmax_out(tape: &Tape, x: Var, mask: Option<&[bool]>, m: usize) -> Vec<f64> {
    let xd = tape.value(x).data();
    let mut out = vec![0.0; xd.len()];
    for (r, (xr, or)) in xd.chunks(m).zip(out.chunks_mut(m)).enumerate() {
        let keep = |j: usize| mask.is_none_or(|mk| mk[r * m + j]);
        let mx = (0..m).filter(|&j| keep(j)).map(|j| xr[j]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in (0..m).filter(|&j| keep(j)) {
            or[j] = (xr[j] - mx).exp();
            z += or[j];
        }
        for o in or.iter_mut() {
            *o /= z;
        }
    }
    out
}

/// Output index of every input position after summing out `axes`.
fn reduction_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let len: usize = shape.iter().product();
    let mut out_strides = vec![0usize; shape.len()];
    let mut s = 1;
    for i in (0..shape.len()).rev() {
        if !axes.contains(&i) {
            out_strides[i] = s;
            s *= shape[i];
        }
    }
    let mut map = Vec::with_capacity(len);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..len {
        map.push(idx.iter().zip(&out_strides).map(|(a, b)| a * b).sum());
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

/// Gradients from one [`Tape::backward`] call.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros if it did not participate.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}
