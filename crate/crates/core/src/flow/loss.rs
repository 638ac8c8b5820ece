//! The flow-matching objective and the vector-field abstraction.

use super::mat::Mat;
use super::model::{FlowModel, ModelGrads};
use super::{ConditionTokens, FlowError};
use crate::latent::Latent;

/// Linear interpolation forward process: `(1 - t) * x0 + t * endpoint`.
pub fn forward_interpolate(x0: &Latent, endpoint: &Latent, t: f64) -> Result<Latent, FlowError> {
    if !x0.same_shape(endpoint) {
        return Err(FlowError::DimMismatch(format!(
            "x0 {}^3x{} vs endpoint {}^3x{}",
            x0.resolution(),
            x0.channels(),
            endpoint.resolution(),
            endpoint.channels()
        )));
    }
    if !(0.0..=1.0).contains(&t) || t.is_nan() {
        return Err(FlowError::TimeOutOfRange(t));
    }
    let mut out = x0.clone();
    for (o, e) in out.values_mut().iter_mut().zip(endpoint.values()) {
        *o = (1.0 - t) * *o + t * *e;
    }
    Ok(out)
}

/// One training example: the data latent, the path endpoint (pure noise or
/// a prior-noise blend), the timestep, and both condition streams.
#[derive(Debug, Clone)]
pub struct CfmExample {
    pub x0: Latent,
    pub endpoint: Latent,
    pub t: f64,
    pub cond_top: ConditionTokens,
    pub cond_front: ConditionTokens,
}

/// Anything that evaluates a conditional vector field v(x, t).
pub trait VectorField {
    fn eval(
        &self,
        x: &Latent,
        t: f64,
        cond_top: &ConditionTokens,
        cond_front: &ConditionTokens,
    ) -> Result<Latent, FlowError>;
}

impl VectorField for FlowModel {
    fn eval(
        &self,
        x: &Latent,
        t: f64,
        cond_top: &ConditionTokens,
        cond_front: &ConditionTokens,
    ) -> Result<Latent, FlowError> {
        Ok(self.forward(x, t, cond_top, cond_front)?.0)
    }
}

/// The closed-form optimal field for a single (x0, endpoint) pair:
/// constant `endpoint - x0` everywhere.
#[derive(Debug, Clone)]
pub struct ExactField {
    pub x0: Latent,
    pub endpoint: Latent,
}

impl VectorField for ExactField {
    fn eval(
        &self,
        _x: &Latent,
        _t: f64,
        _cond_top: &ConditionTokens,
        _cond_front: &ConditionTokens,
    ) -> Result<Latent, FlowError> {
        let mut v = self.endpoint.clone();
        v.axpy(-1.0, &self.x0);
        Ok(v)
    }
}

/// Mean over the batch of per-element mean squared error between the field
/// value at x(t) and the regression target `endpoint - x0`.
pub fn cfm_loss<F: VectorField>(field: &F, batch: &[CfmExample]) -> Result<f64, FlowError> {
    if batch.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    let mut total = 0.0;
    for ex in batch {
        let xt = forward_interpolate(&ex.x0, &ex.endpoint, ex.t)?;
        let v = field.eval(&xt, ex.t, &ex.cond_top, &ex.cond_front)?;
        if !v.same_shape(&ex.x0) {
            return Err(FlowError::DimMismatch("field output shape".into()));
        }
        let n = v.values().len() as f64;
        let mut acc = 0.0;
        for ((vv, e), x0) in v.values().iter().zip(ex.endpoint.values()).zip(ex.x0.values()) {
            let d = vv - (e - x0);
            acc += d * d;
        }
        total += acc / n;
    }
    Ok(total / batch.len() as f64)
}

/// Loss plus analytic parameter gradients for the model.
pub fn cfm_loss_and_grads(
    model: &FlowModel,
    batch: &[CfmExample],
) -> Result<(f64, ModelGrads), FlowError> {
    if batch.is_empty() {
        return Err(FlowError::EmptyBatch);
    }
    let mut grads = model.zeros_grads();
    let mut total = 0.0;
    let b = batch.len() as f64;
    for ex in batch {
        let xt = forward_interpolate(&ex.x0, &ex.endpoint, ex.t)?;
        let (v, cache) = model.forward(&xt, ex.t, &ex.cond_top, &ex.cond_front)?;
        let n = v.values().len() as f64;
        let mut acc = 0.0;
        let mut d_v = Mat::zeros(v.cells(), v.channels() as usize);
        for (i, ((vv, e), x0)) in v
            .values()
            .iter()
            .zip(ex.endpoint.values())
            .zip(ex.x0.values())
            .enumerate()
        {
            let d = vv - (e - x0);
            acc += d * d;
            d_v.data[i] = 2.0 * d / (n * b);
        }
        total += acc / n;
        let g = model.backward(&cache, &d_v);
        grads.add_assign(&g);
    }
    Ok((total / b, grads))
}
