use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor of the relative error.
const REL_FLOOR: f64 = 1e-6;

/// Compares the tape gradient of `f` at `x` with central differences of
/// step `h`, over every element of `x`.
///
/// Returns `max_i |analytic_i - numeric_i| / max(|analytic_i|, 1e-6)`.
/// Runs in `f64` so the numeric side is trustworthy.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    finite_diff_check_at(f, x, h, &all)
}

/// [`finite_diff_check`] restricted to the flat element `indices`.
pub fn finite_diff_check_at<F>(f: F, x: &Tensor<f64>, h: f64, indices: &[usize]) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step size {h}")));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("finite_diff_check input".into()));
    }
    let tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone());
    let y = f(xv)?;
    let y0 = y.value().item()?;
    if !y0.is_finite() {
        return Err(Error::NonFinite(format!("f(x) = {y0}")));
    }
    let analytic = tape.backward(y)?.wrt(xv)?;

    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let tape = Tape::<f64>::new();
        let v = f(tape.constant(probe))?.value().item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("f(x +- h) = {v}")));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    for &i in indices {
        if i >= x.numel() {
            return Err(Error::InvalidArgument(format!("index {i} out of range")));
        }
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(REL_FLOOR));
    }
    Ok(worst)
}
