//! Euler integration of the backward process.

use super::loss::VectorField;
use super::model::FlowModel;
use super::{ConditionTokens, FlowError};
use crate::latent::Latent;

/// Integrates `x <- x - dt * v(x, t)` from t = 1 down to t = 0 with
/// dt = 1/steps, starting from `init`. The field is evaluated at the start
/// of each step.
pub fn sample_field<F: VectorField>(
    field: &F,
    init: &Latent,
    cond_top: &ConditionTokens,
    cond_front: &ConditionTokens,
    steps: usize,
) -> Result<Latent, FlowError> {
    if steps == 0 {
        return Err(FlowError::ZeroSteps);
    }
    let dt = 1.0 / steps as f64;
    let mut x = init.clone();
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        let v = field.eval(&x, t, cond_top, cond_front)?;
        x.axpy(-dt, &v);
        if !x.is_finite() {
            return Err(FlowError::NonFinite {
                location: format!("sampler step {k}"),
            });
        }
    }
    Ok(x)
}

/// Samples from the trained model starting at the fused prior latent.
pub fn sample(
    model: &FlowModel,
    init: &Latent,
    cond_top: &ConditionTokens,
    cond_front: &ConditionTokens,
    steps: usize,
) -> Result<Latent, FlowError> {
    sample_field(model, init, cond_top, cond_front, steps)
}
