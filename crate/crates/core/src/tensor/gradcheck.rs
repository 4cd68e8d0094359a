use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compare the tape gradient of a scalar function against central
/// differences, returning the largest [`relative_error`] over coordinates.
///
/// `f` receives a fresh tape and the input recorded on it, and returns the
/// scalar output.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    Ok(check(f, x, eps, false)?.expect("kinks are not tracked"))
}

/// Like [`finite_diff_check`], but returns `None` when some stencil point
/// switches a relu on or off relative to `x`: central differences across a
/// kink do not estimate the derivative, so such points should be redrawn.
pub fn finite_diff_check_smooth<F>(f: F, x: &Tensor, eps: f64) -> Result<Option<f64>>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check(f, x, eps, true)
}

fn check<F>(f: F, x: &Tensor, eps: f64, track_kinks: bool) -> Result<Option<f64>>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |t: Tensor| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let v = tape.constant(t);
        let out = f(&mut tape, v)?;
        let pattern = if track_kinks { tape.relu_pattern() } else { Vec::new() };
        Ok((scalar(&tape, out)?, pattern))
    };
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    scalar(&tape, out)?;
    let base = if track_kinks { tape.relu_pattern() } else { Vec::new() };
    let grads = tape.backward(out)?;
    let g_ad = grads.wrt(&tape, xv);

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let (fp, pp) = eval(plus)?;
        let (fm, pm) = eval(minus)?;
        if pp != base || pm != base {
            return Ok(None);
        }
        let fd = (fp - fm) / (2.0 * eps);
        worst = worst.max(relative_error(g_ad.data()[i], fd));
    }
    Ok(Some(worst))
}

fn scalar(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::input(format!("expected a scalar output, got shape {:?}", t.shape())));
    }
    Ok(t.data()[0])
}
