//! Order-2 graph neural networks: message passing (MGNN), linear
//! equivariant (LGNN2) and folklore (FGNN2) families, each with an
//! invariant and an equivariant head.
//!
//! Every model reads a [`MaskedBatch`]. Invariant models return `[b, out]`,
//! equivariant models `[b, n_max, out]` with padded rows zero.

mod layers;
mod mlp;

pub use layers::{
    fgl2_layer, i2_init, i2_init_var, id_plus_lambda_s1, lgnn2_layer, mgnn_layer, s1_sum, s2_1_reduce, s2_sum,
    BatchInputs,
};
pub use mlp::MlpSpec;

use crate::error::{Error, Result};
use crate::graph::{GraphTensor, MaskedBatch};
use crate::rng::RngSeed;
use crate::tensor::{Params, Tape, Tensor, Var, BASIS2_COUNT};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mgnn,
    Lgnn2,
    Fgnn2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Invariant,
    Equivariant,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Mgnn, Family::Lgnn2, Family::Fgnn2];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Mgnn => "mgnn",
            Family::Lgnn2 => "lgnn2",
            Family::Fgnn2 => "fgnn2",
        })
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mgnn" => Ok(Family::Mgnn),
            "lgnn2" => Ok(Family::Lgnn2),
            "fgnn2" => Ok(Family::Fgnn2),
            _ => Err(Error::input(format!("unknown model family {s:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Invariant => "invariant",
            Variant::Equivariant => "equivariant",
        })
    }
}

/// Architecture of one model.
///
/// `layer_widths[t]` is the output width of layer `t`. Inner MLPs have
/// `mlp_depth` affine maps with `mlp_hidden`-wide hidden layers; the head
/// (`m_I` or `m_E`) has `head_depth` maps ending in `out_dim`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub variant: Variant,
    /// Channels of the input graph tensor, adjacency included.
    pub in_channels: usize,
    pub layer_widths: Vec<usize>,
    pub mlp_depth: usize,
    pub mlp_hidden: usize,
    pub head_depth: usize,
    pub out_dim: usize,
}

impl ModelSpec {
    /// `layers` layers of width `width`, depth-2 MLPs, output `width`.
    pub fn uniform(family: Family, variant: Variant, in_channels: usize, layers: usize, width: usize) -> Self {
        ModelSpec {
            family,
            variant,
            in_channels,
            layer_widths: vec![width; layers],
            mlp_depth: 2,
            mlp_hidden: width,
            head_depth: 2,
            out_dim: width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::input("in_channels must be at least 1 (the adjacency)"));
        }
        if self.layer_widths.is_empty() {
            return Err(Error::input("a model needs at least one layer"));
        }
        if self.layer_widths.contains(&0) || self.out_dim == 0 || self.mlp_hidden == 0 {
            return Err(Error::input("widths must be positive"));
        }
        if self.mlp_depth == 0 || self.head_depth == 0 {
            return Err(Error::input("MLP depths must be at least 1"));
        }
        Ok(())
    }

    /// Width of the first layer's input.
    pub fn input_width(&self) -> usize {
        match self.family {
            // constant 1 plus node features
            Family::Mgnn => self.in_channels,
            Family::Lgnn2 | Family::Fgnn2 => self.in_channels + 1,
        }
    }

    fn mlp(&self, input: usize, output: usize) -> MlpSpec {
        MlpSpec::chain(input, self.mlp_hidden, output, self.mlp_depth)
    }

    /// The MLPs of layer `t`, keyed by their role name.
    pub fn layer_mlps(&self, t: usize) -> Vec<(&'static str, MlpSpec)> {
        let d = if t == 0 { self.input_width() } else { self.layer_widths[t - 1] };
        let o = self.layer_widths[t];
        match self.family {
            Family::Mgnn => vec![("f0", self.mlp(d + o, o)), ("f1", self.mlp(2 * d, o))],
            Family::Fgnn2 => vec![
                ("f0", self.mlp(d + o, o)),
                ("f1", self.mlp(d, o)),
                ("f2", self.mlp(d, o)),
            ],
            Family::Lgnn2 => vec![("f", self.mlp(o, o))],
        }
    }

    pub fn head(&self) -> MlpSpec {
        let d = *self.layer_widths.last().unwrap();
        MlpSpec::chain(d, self.mlp_hidden, self.out_dim, self.head_depth)
    }

    /// Every parameter name with its shape, in name order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for t in 0..self.layer_widths.len() {
            let prefix = format!("layer{t}");
            for (role, m) in self.layer_mlps(t) {
                out.extend(m.param_shapes(&format!("{prefix}.{role}")));
            }
            if self.family == Family::Lgnn2 {
                let d = if t == 0 { self.input_width() } else { self.layer_widths[t - 1] };
                let o = self.layer_widths[t];
                out.push((format!("{prefix}.lin.w"), vec![BASIS2_COUNT * d, o]));
                out.push((format!("{prefix}.lin.b"), vec![o]));
                out.push((format!("{prefix}.lin.diag"), vec![1, o]));
            }
        }
        out.extend(self.head().param_shapes("head"));
        if self.family == Family::Mgnn && self.variant == Variant::Equivariant {
            out.push(("lambda".to_string(), vec![1]));
        }
        out.sort();
        out
    }

    /// Fresh parameters; see the crate docs for the initialization rule.
    pub fn init_params(&self, seed: RngSeed) -> Result<Params> {
        self.validate()?;
        Ok(mlp::init_params(&self.param_shapes(), seed))
    }

    pub fn check_params(&self, params: &Params) -> Result<()> {
        let shapes = self.param_shapes();
        if shapes.len() != params.tensors.len() {
            return Err(Error::input(format!(
                "model expects {} parameter tensors, got {}",
                shapes.len(),
                params.tensors.len()
            )));
        }
        for (name, shape) in &shapes {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::input(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::input(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }

    /// Record the forward pass on `tape`.
    pub fn forward(&self, tape: &mut Tape, vars: &BTreeMap<String, Var>, inp: &BatchInputs) -> Result<Var> {
        self.validate()?;
        if inp.c != self.in_channels {
            return Err(Error::input(format!(
                "model expects {} input channels, batch has {}",
                self.in_channels, inp.c
            )));
        }
        let mut h = match self.family {
            Family::Mgnn => tape.constant(inp.node_inputs()),
            Family::Lgnn2 | Family::Fgnn2 => i2_init_var(tape, inp)?,
        };
        for t in 0..self.layer_widths.len() {
            let prefix = format!("layer{t}");
            let m = self.layer_mlps(t);
            h = match self.family {
                Family::Mgnn => mgnn_layer(tape, vars, inp, h, &m[0].1, &m[1].1, &prefix)?,
                Family::Fgnn2 => fgl2_layer(tape, vars, inp, h, &m[0].1, &m[1].1, &m[2].1, &prefix)?,
                Family::Lgnn2 => lgnn2_layer(tape, vars, inp, h, &m[0].1, &prefix)?,
            };
        }
        let head = self.head();
        match (self.family, self.variant) {
            (Family::Mgnn, Variant::Invariant) => {
                let s = s1_sum(tape, inp, h)?;
                head.apply(tape, vars, "head", s)
            }
            (Family::Mgnn, Variant::Equivariant) => {
                let lambda = mlp::lookup(vars, "lambda")?;
                let r = id_plus_lambda_s1(tape, inp, h, lambda)?;
                let out = head.apply(tape, vars, "head", r)?;
                tape.mask_last(out, &inp.nodes)
            }
            (_, Variant::Invariant) => {
                let s = s2_sum(tape, inp, h)?;
                head.apply(tape, vars, "head", s)
            }
            (_, Variant::Equivariant) => {
                let r = s2_1_reduce(tape, inp, h)?;
                let out = head.apply(tape, vars, "head", r)?;
                tape.mask_last(out, &inp.nodes)
            }
        }
    }

    /// Forward pass without gradient tracking.
    pub fn apply(&self, params: &Params, batch: &MaskedBatch) -> Result<Tensor> {
        self.check_params(params)?;
        let mut tape = Tape::new();
        let vars = params
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), tape.constant(t.clone())))
            .collect();
        let out = self.forward(&mut tape, &vars, &BatchInputs::new(batch))?;
        Ok(tape.value(out).clone())
    }

    /// Single-graph forward: `[out]` for invariant, `[n, out]` for
    /// equivariant models.
    pub fn apply_graph(&self, params: &Params, g: &GraphTensor) -> Result<Tensor> {
        let out = self.apply(params, &MaskedBatch::from_refs(&[g])?)?;
        let shape = out.shape()[1..].to_vec();
        out.reshaped(&shape)
    }
}
