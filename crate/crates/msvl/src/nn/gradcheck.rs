//! Central-difference gradient verification.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Central differences `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` per
/// coordinate. The independent oracle against which analytic gradients are
/// checked.
pub fn finite_diff_grad(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::InvalidInput(format!("finite differences need eps > 0, got {eps}")));
    }
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let original = x.data()[i];
        probe.data_mut()[i] = original + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = original - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = original;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Max over coordinates of `|a - b| / max(|a|, |b|, floor)`.
pub fn max_rel_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape(), "gradients must share a shape");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
