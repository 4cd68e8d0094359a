use crate::error::{Error, Result};
use crate::rng::RngSeed;
use crate::tensor::{Params, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Layer widths of a multilayer perceptron, input first.
///
/// Hidden affine maps are followed by relu, the last one is left linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        let s = MlpSpec { widths };
        s.validate()?;
        Ok(s)
    }

    /// `depth` affine maps from `input` to `output` through `hidden`-wide
    /// layers.
    pub fn chain(input: usize, hidden: usize, output: usize, depth: usize) -> Self {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden, depth.saturating_sub(1)));
        widths.push(output);
        MlpSpec { widths }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::input("an MLP needs at least one affine layer"));
        }
        if self.widths.contains(&0) {
            return Err(Error::input(format!("MLP widths must be positive: {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn input(&self) -> usize {
        self.widths[0]
    }

    pub fn output(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub(crate) fn param_shapes(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        self.widths
            .windows(2)
            .enumerate()
            .flat_map(|(l, w)| {
                [
                    (format!("{prefix}.{l}.w"), vec![w[0], w[1]]),
                    (format!("{prefix}.{l}.b"), vec![w[1]]),
                ]
            })
            .collect()
    }

    /// Apply to the last axis of `x`.
    pub fn apply(&self, tape: &mut Tape, vars: &BTreeMap<String, Var>, prefix: &str, x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..self.depth() {
            let w = lookup(vars, &format!("{prefix}.{l}.w"))?;
            let b = lookup(vars, &format!("{prefix}.{l}.b"))?;
            h = tape.affine(h, w, Some(b))?;
            if l + 1 < self.depth() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

pub(crate) fn lookup(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::input(format!("missing parameter {name}")))
}

/// Glorot-uniform weights and zero biases. Tensors whose name ends in `.w`
/// are treated as weights; every parameter draws from its own stream keyed
/// by name, so adding a parameter never shifts the others.
pub(crate) fn init_tensor(name: &str, shape: &[usize], seed: RngSeed) -> Tensor {
    if !name.ends_with(".w") || shape.len() != 2 {
        return Tensor::zeros(shape);
    }
    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
    let mut s = seed.derive_str(name).stream();
    let data = (0..shape[0] * shape[1]).map(|_| s.uniform_in(-a, a)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub(crate) fn init_params(shapes: &[(String, Vec<usize>)], seed: RngSeed) -> Params {
    let mut p = Params::default();
    for (name, shape) in shapes {
        p.insert(name.clone(), init_tensor(name, shape, seed));
    }
    p
}
