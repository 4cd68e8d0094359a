use super::GraphTensor;
use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Removal-to-insertion conversion keeping the expected degree fixed:
/// `p2 = p1 * pe / (1 - pe)`.
pub fn companion_noise(p1: f64, pe: f64) -> Result<f64> {
    if !(p1 >= 0.0) {
        return Err(Error::input(format!("noise level {p1} must be non-negative")));
    }
    if !(0.0..=1.0).contains(&pe) {
        return Err(Error::input(format!("edge density {pe} outside [0,1]")));
    }
    if p1 == 0.0 {
        return Ok(0.0);
    }
    if pe >= 1.0 {
        return Err(Error::input("edge density 1 leaves no room for insertions"));
    }
    let p2 = p1 * pe / (1.0 - pe);
    if p1 > 1.0 || p2 > 1.0 {
        return Err(Error::input(format!(
            "noise level {p1} with density {pe} gives p2 = {p2} > 1"
        )));
    }
    Ok(p2)
}

/// `G2 = G1 ⊙ (1 - Q) + (1 - G1) ⊙ Q'` on the adjacency channel.
///
/// For every pair `i < j` (row-major) two uniforms are drawn, the first for
/// `Q ~ ER(p1)` and the second for `Q' ~ ER(p2)`, and the result is mirrored.
/// Node features are copied.
pub fn apply_noise(g1: &GraphTensor, p1: f64, pe: f64, seed: RngSeed) -> Result<GraphTensor> {
    let p2 = companion_noise(p1, pe)?;
    let mut g2 = g1.clone();
    let mut rng = seed.stream();
    let n = g1.n();
    for i in 0..n {
        for j in i + 1..n {
            let q = rng.bernoulli(p1);
            let q2 = rng.bernoulli(p2);
            let edge = g1.has_edge(i, j);
            let out = if edge { !q } else { q2 };
            g2.set_edge(i, j, out);
        }
    }
    Ok(g2)
}
