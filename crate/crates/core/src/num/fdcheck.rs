//! Central finite-difference gradient checking, the test oracle for every
//! tape primitive and for the full model forward.

use super::tape::{NodeId, ParamId, Tape};
use super::tensor::Tensor;
use super::{NumError, NumResult};

/// Max relative error between an analytic gradient and central differences
/// of `eval` around `x`: `max_i |a_i - c_i| / max(1, |c_i|)`.
pub fn max_rel_gradient_error(
    analytic: &[f64],
    x: &Tensor<f64>,
    h: f64,
    eval: impl Fn(&Tensor<f64>) -> NumResult<f64>,
) -> NumResult<f64> {
    assert_eq!(analytic.len(), x.numel());
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut hi = x.clone();
        hi.data_mut()[i] += h;
        let mut lo = x.clone();
        lo.data_mut()[i] -= h;
        let (fh, fl) = (eval(&hi)?, eval(&lo)?);
        if !fh.is_finite() || !fl.is_finite() {
            return Err(NumError::NonFinite { op: "finite_diff" });
        }
        let central = (fh - fl) / (2.0 * h);
        let err = (analytic[i] - central).abs() / central.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Tape-path gradient check: `build` constructs a scalar loss from the node
/// registered for `x`; the analytic gradient comes from the reverse pass and
/// is compared against central differences of the same construction.
pub fn finite_diff_check(
    x: &Tensor<f64>,
    h: f64,
    build: impl Fn(&mut Tape<f64>, NodeId) -> NumResult<NodeId>,
) -> NumResult<f64> {
    let pid = ParamId(0);
    let mut tape = Tape::new();
    let xn = tape.param(pid, x.clone());
    let loss = build(&mut tape, xn)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get(pid, x.shape()).to_f64_vec();

    max_rel_gradient_error(&analytic, x, h, |xt| {
        let mut t = Tape::new();
        let xn = t.constant(xt.clone());
        let loss = build(&mut t, xn)?;
        Ok(t.value(loss).item())
    })
}
