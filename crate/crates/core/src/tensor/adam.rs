use super::{Params, Tensor};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &Params) -> Self {
        let zeros = |t: &Tensor| vec![0.0; t.len()];
        AdamState {
            config,
            t: 0,
            m: params.tensors.iter().map(|(k, t)| (k.clone(), zeros(t))).collect(),
            v: params.tensors.iter().map(|(k, t)| (k.clone(), zeros(t))).collect(),
        }
    }

    /// One bias-corrected Adam update. Parameters missing from `grads` are
    /// treated as having zero gradient.
    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            match params.get(name) {
                Some(p) if p.shape() == g.shape() => {}
                Some(p) => {
                    return Err(Error::input(format!(
                        "gradient for {name} has shape {:?}, parameter has {:?}",
                        g.shape(),
                        p.shape()
                    )))
                }
                None => return Err(Error::input(format!("gradient for unknown parameter {name}"))),
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, p) in params.tensors.iter_mut() {
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            let g = grads.get(name).map(Tensor::data);
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Params {
        let mut p = Params::default();
        p.insert("w", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one(0.5);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let g = BTreeMap::from([("w".to_string(), Tensor::scalar(0.0))]);
        st.step(&mut p, &g).unwrap();
        st.step(&mut p, &BTreeMap::new()).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.5]);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn first_step_magnitude() {
        let cfg = AdamConfig {
            lr: 1e-4,
            ..AdamConfig::default()
        };
        let mut p = one(0.0);
        let mut st = AdamState::new(cfg, &p);
        let g = BTreeMap::from([("w".to_string(), Tensor::scalar(1.0))]);
        st.step(&mut p, &g).unwrap();
        let expected = 1e-4 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().data()[0] + expected).abs() < 1e-18);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = one(0.0);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let g = BTreeMap::from([("w".to_string(), Tensor::zeros(&[2]))]);
        assert!(st.step(&mut p, &g).is_err());
    }
}
