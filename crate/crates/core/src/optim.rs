use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

/// Adam moments for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    /// Number of updates applied so far.
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &ParamSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update. `lr` may be negative for ascent.
///
/// Every parameter must carry a finite gradient; the gradients are consumed.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} tensors but the parameter set has {}",
            state.first.len(),
            params.len()
        )));
    }
    for p in params.iter() {
        match &p.grad {
            None => return Err(Error::Config(format!("missing gradient for {}", p.name))),
            Some(g) if !g.is_finite() => {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)))
            }
            Some(_) => {}
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = p.grad.take().expect("checked above");
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((w, &gj), mj), vj) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
            let mhat = *mj / c1;
            let vhat = *vj / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
