//! Finite-difference validation of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::loss::{cfm_loss, cfm_loss_and_grads, CfmExample, VectorField};
use super::mat::Mat;
use super::model::FlowModel;
use super::{ConditionTokens, FlowError};
use crate::latent::Latent;

/// A model whose parameters are addressable by flat index and whose loss
/// gradients can be produced analytically.
pub trait GradCheckable {
    fn param_count(&self) -> usize;
    fn get_param(&self, index: usize) -> f64;
    fn set_param(&mut self, index: usize, value: f64);
    fn loss(&self, batch: &[CfmExample]) -> Result<f64, FlowError>;
    /// Loss plus gradients flattened in the same index order as
    /// `get_param`/`set_param`.
    fn loss_and_flat_grads(&self, batch: &[CfmExample]) -> Result<(f64, Vec<f64>), FlowError>;
}

impl GradCheckable for FlowModel {
    fn param_count(&self) -> usize {
        self.param_count()
    }

    fn get_param(&self, index: usize) -> f64 {
        let mut i = index;
        for m in self.param_mats() {
            if i < m.len() {
                return m.data[i];
            }
            i -= m.len();
        }
        panic!("parameter index {index} out of range");
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let mut i = index;
        for m in self.param_mats_mut() {
            if i < m.len() {
                m.data[i] = value;
                return;
            }
            i -= m.len();
        }
        panic!("parameter index {index} out of range");
    }

    fn loss(&self, batch: &[CfmExample]) -> Result<f64, FlowError> {
        cfm_loss(self, batch)
    }

    fn loss_and_flat_grads(&self, batch: &[CfmExample]) -> Result<(f64, Vec<f64>), FlowError> {
        let (loss, grads) = cfm_loss_and_grads(self, batch)?;
        let mut flat = Vec::with_capacity(self.param_count());
        for m in grads.mats() {
            flat.extend_from_slice(&m.data);
        }
        Ok((loss, flat))
    }
}

/// Minimal field `v(x, t) = W x` over the flattened latent. The flow-match
/// loss is exactly quadratic in W, so central differences agree with the
/// analytic gradient to machine precision.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub w: Mat, // n_elem x n_elem
    pub resolution: u32,
    pub channels: u32,
}

impl LinearField {
    pub fn init(resolution: u32, channels: u32, seed: u64) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let n = (resolution as usize).pow(3) * channels as usize;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let scale = 1.0 / (n as f64).sqrt();
        LinearField {
            w: Mat::from_fn(n, n, |_, _| {
                let v: f64 = normal.sample(&mut rng);
                v * scale
            }),
            resolution,
            channels,
        }
    }

    fn apply(&self, x: &Latent) -> Latent {
        let n = self.w.rows;
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.w.row(i);
            *o = row.iter().zip(x.values()).map(|(w, v)| w * v).sum();
        }
        Latent::from_values(self.resolution, self.channels, out)
    }
}

impl VectorField for LinearField {
    fn eval(
        &self,
        x: &Latent,
        _t: f64,
        _ct: &ConditionTokens,
        _cf: &ConditionTokens,
    ) -> Result<Latent, FlowError> {
        Ok(self.apply(x))
    }
}

impl GradCheckable for LinearField {
    fn param_count(&self) -> usize {
        self.w.len()
    }

    fn get_param(&self, index: usize) -> f64 {
        self.w.data[index]
    }

    fn set_param(&mut self, index: usize, value: f64) {
        self.w.data[index] = value;
    }

    fn loss(&self, batch: &[CfmExample]) -> Result<f64, FlowError> {
        cfm_loss(self, batch)
    }

    fn loss_and_flat_grads(&self, batch: &[CfmExample]) -> Result<(f64, Vec<f64>), FlowError> {
        if batch.is_empty() {
            return Err(FlowError::EmptyBatch);
        }
        let n = self.w.rows;
        let mut grads = vec![0.0; self.w.len()];
        let mut total = 0.0;
        let b = batch.len() as f64;
        for ex in batch {
            let xt = super::loss::forward_interpolate(&ex.x0, &ex.endpoint, ex.t)?;
            let v = self.apply(&xt);
            let mut acc = 0.0;
            for i in 0..n {
                let target = ex.endpoint.values()[i] - ex.x0.values()[i];
                let d = v.values()[i] - target;
                acc += d * d;
                // dL/dW[i, j] = 2 d * xt[j] / (n * B)
                let coeff = 2.0 * d / (n as f64 * b);
                for (g, &xj) in grads[i * n..(i + 1) * n].iter_mut().zip(xt.values()) {
                    *g += coeff * xj;
                }
            }
            total += acc / n as f64;
        }
        Ok((total / b, grads))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst_index: usize,
}

/// Compares analytic gradients against central finite differences
/// `(L(p + e) - L(p - e)) / 2e` on `n_samples` deterministically sampled
/// parameters, returning the worst relative error.
pub fn grad_check<M: GradCheckable>(
    model: &mut M,
    batch: &[CfmExample],
    epsilon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<GradCheckReport, FlowError> {
    let count = model.param_count();
    let (_, analytic) = model.loss_and_flat_grads(batch)?;
    let indices: Vec<usize> = if n_samples >= count {
        (0..count).collect()
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, count, n_samples).into_vec()
    };
    let mut max_rel_error = 0.0f64;
    let mut worst_index = 0usize;
    for &i in &indices {
        let original = model.get_param(i);
        model.set_param(i, original + epsilon);
        let plus = model.loss(batch)?;
        model.set_param(i, original - epsilon);
        let minus = model.loss(batch)?;
        model.set_param(i, original);
        let fd = (plus - minus) / (2.0 * epsilon);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-6);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        checked: indices.len(),
        worst_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::sample_noise;

    fn conds() -> (ConditionTokens, ConditionTokens) {
        let c = Mat::from_vec(2, 4, vec![0.3, -0.1, 0.2, 0.7, -0.4, 0.9, 0.0, 0.5]);
        (
            ConditionTokens::top(c.clone()).unwrap(),
            ConditionTokens::frontal(c).unwrap(),
        )
    }

    fn batch(n: usize) -> Vec<CfmExample> {
        let (ct, cf) = conds();
        (0..n)
            .map(|i| CfmExample {
                x0: sample_noise(2, 2, 100 + i as u64),
                endpoint: sample_noise(2, 2, 200 + i as u64),
                t: (0.1 + 0.17 * i as f64).fract(),
                cond_top: ct.clone(),
                cond_front: cf.clone(),
            })
            .collect()
    }

    #[test]
    fn linear_field_is_exact_under_fd() {
        let mut field = LinearField::init(2, 2, 5);
        let report = grad_check(&mut field, &batch(3), 1e-5, 64, 9).unwrap();
        assert!(
            report.max_rel_error < 1e-8,
            "linear field rel error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn full_model_gradients_validate() {
        use super::super::model::{FlowConfig, FlowModel};
        let config = FlowConfig {
            latent_resolution: 2,
            channels: 2,
            d_model: 16,
            heads: 2,
            blocks: 1,
            d_cond: 4,
            ffn_mult: 2,
            time_frequencies: 2,
        };
        let mut model = FlowModel::init(config, 11);
        assert!(model.param_count() <= 10_000, "{}", model.param_count());
        let report = grad_check(&mut model, &batch(2), 1e-5, 200, 13).unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "model rel error {} at {}",
            report.max_rel_error,
            report.worst_index
        );
    }

    #[test]
    fn fd_error_shrinks_quadratically() {
        use super::super::model::{FlowConfig, FlowModel};
        let config = FlowConfig {
            latent_resolution: 2,
            channels: 2,
            d_model: 8,
            heads: 2,
            blocks: 1,
            d_cond: 4,
            ffn_mult: 2,
            time_frequencies: 2,
        };
        let mut model = FlowModel::init(config, 3);
        let b = batch(2);
        let mut errors = Vec::new();
        for eps in [1e-2, 1e-3, 1e-4] {
            let report = grad_check(&mut model, &b, eps, 48, 7).unwrap();
            errors.push(report.max_rel_error);
        }
        // Central differences: truncation error is O(eps^2), so each 10x
        // reduction in eps should shrink the error by far more than 10x
        // until roundoff takes over.
        assert!(errors[0] > errors[1], "errors {errors:?}");
        assert!(errors[1] > errors[2], "errors {errors:?}");
        assert!(errors[0] / errors[1] > 10.0, "errors {errors:?}");
    }
}
