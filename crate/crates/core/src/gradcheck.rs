//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::tensor::Tensor;

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_SCALE_FLOOR: f64 = 1e-3;

/// Relative discrepancy between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRAD_SCALE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Perturbs every entry of every input by `±h` and returns the worst
/// [`relative_error`] against the analytic gradients.
///
/// `loss` must be pure: it returns the loss value together with one gradient
/// tensor per input, shaped like the input.
pub fn grad_check<F>(loss: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    let (_, analytic) = loss(inputs)?;
    let mut worst = 0.0_f64;
    let mut probe = inputs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        grad.expect_same_shape(&inputs[t], "analytic gradient")?;
        for k in 0..inputs[t].len() {
            let orig = inputs[t].data()[k];
            probe[t].data_mut()[k] = orig + h;
            let (up, _) = loss(&probe)?;
            probe[t].data_mut()[k] = orig - h;
            let (down, _) = loss(&probe)?;
            probe[t].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(grad.data()[k], numeric));
        }
    }
    Ok(worst)
}
