//! Finite-difference gradient checking.
//!
//! The checker never looks at the graph: it re-evaluates the forward closure
//! with one element of `x` nudged up and down and takes the central
//! difference. Agreement with `backward()` is therefore evidence that both
//! the forward values and the hand-derived backward rules are consistent.

use super::{no_grad, Scalar, Tensor};
use crate::error::Result;

/// Central-difference gradient of `f` with respect to every element of `x`.
///
/// `x`'s buffer is perturbed in place and restored, so `f` may either use
/// the tensor it is handed or close over `x` (and an entire model built on
/// it). Evaluations run with gradient recording disabled.
pub fn finite_diff_grad<T: Scalar>(
    x: &Tensor<T>,
    h: f64,
    mut f: impl FnMut(&Tensor<T>) -> Result<T>,
) -> Result<Vec<T>> {
    let h = T::from_f64(h);
    let n = x.numel();
    let mut grad = vec![T::ZERO; n];
    for (i, slot) in grad.iter_mut().enumerate() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let plus = no_grad(|| f(x));
        x.data_mut()[i] = orig - h;
        let minus = no_grad(|| f(x));
        x.data_mut()[i] = orig;
        *slot = (plus? - minus?) / (h + h);
    }
    Ok(grad)
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps finite-difference noise
/// on near-zero gradients from registering as huge relative errors.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error between an analytic gradient buffer and its
/// finite-difference estimate.
pub fn gradient_max_rel_err<T: Scalar>(analytic: &[T], numeric: &[T], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a.to_f64(), n.to_f64(), floor))
        .fold(0.0, f64::max)
}
