//! Deterministic SGD training loop.
//!
//! Each step draws a batch with replacement, pairs every example with a
//! fresh timestep, and builds the path endpoint. Items that carry prior
//! grids get a blended endpoint: a level of detail is drawn uniformly, the
//! prior is encoded and normalized, and cosine interpolation mixes it with
//! fresh noise at a lambda drawn from the schedule's choices. Items without
//! priors train against pure noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::loss::{cfm_loss_and_grads, CfmExample};
use super::model::{FlowModel, ModelGrads};
use super::{ConditionTokens, FlowError};
use crate::latent::{
    cosine_interpolate, encode_surrogate, latent_norm, ChannelStats, Latent,
};
use crate::voxel::VoxelGrid;

/// One training item. `priors` holds the LOD0 and LOD1 grids when
/// structural priors participate in endpoint construction.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub priors: Option<[VoxelGrid; 2]>,
    pub x0: Latent,
    pub cond_top: ConditionTokens,
    pub cond_front: ConditionTokens,
}

/// What the encoder needs to turn a prior grid into a normalized latent.
#[derive(Debug, Clone)]
pub struct PriorContext {
    pub surrogate_seed: u64,
    pub stats: ChannelStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Prior-strength choices sampled per example when priors are present.
    pub lambda_choices: Vec<f64>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            steps: 1000,
            batch_size: 16,
            learning_rate: 0.02,
            momentum: 0.9,
            seed: 0,
            lambda_choices: vec![0.3, 0.5, 0.7],
        }
    }
}

/// Per-step loss values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace(pub Vec<f64>);

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, loss) in self.0.iter().enumerate() {
            out.push_str(&format!("{i},{loss}\n"));
        }
        out
    }

    pub fn mean_of_first(&self, n: usize) -> f64 {
        let take = n.min(self.0.len());
        self.0[..take].iter().sum::<f64>() / take.max(1) as f64
    }

    pub fn mean_of_last(&self, n: usize) -> f64 {
        let take = n.min(self.0.len());
        self.0[self.0.len() - take..].iter().sum::<f64>() / take.max(1) as f64
    }
}

const DIVERGENCE_FACTOR: f64 = 1e3;
const DIVERGENCE_PATIENCE: usize = 100;

/// Runs SGD with momentum on the flow-matching loss. Bit-reproducible for a
/// fixed schedule seed.
pub fn train(
    model: &mut FlowModel,
    dataset: &[TrainItem],
    schedule: &TrainSchedule,
    prior_ctx: Option<&PriorContext>,
) -> Result<LossTrace, FlowError> {
    if dataset.is_empty() || schedule.batch_size == 0 {
        return Err(FlowError::EmptyBatch);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(schedule.seed);
    let normal = StandardNormal;
    let m = model.config.latent_resolution;
    let c = model.config.channels;

    let mut velocity: Option<ModelGrads> = None;
    let mut trace = LossTrace::default();
    let mut initial_loss = None;
    let mut high_steps = 0usize;

    for step in 0..schedule.steps {
        let mut batch = Vec::with_capacity(schedule.batch_size);
        for _ in 0..schedule.batch_size {
            let item = &dataset[rng.random_range(0..dataset.len())];
            let t: f64 = rng.random();
            let noise = {
                let len = (m as usize).pow(3) * c as usize;
                let values = (0..len).map(|_| normal.sample(&mut rng)).collect();
                Latent::from_values(m, c, values)
            };
            let endpoint = match (&item.priors, prior_ctx) {
                (Some(priors), Some(ctx)) => {
                    let lod = rng.random_range(0..2usize);
                    let lambda = if schedule.lambda_choices.is_empty() {
                        1.0
                    } else {
                        schedule.lambda_choices
                            [rng.random_range(0..schedule.lambda_choices.len())]
                    };
                    let encoded = encode_surrogate(&priors[lod], m, c, ctx.surrogate_seed)?;
                    let normed = latent_norm(&encoded, &ctx.stats)?;
                    cosine_interpolate(&normed, &noise, lambda)?
                }
                _ => noise,
            };
            batch.push(CfmExample {
                x0: item.x0.clone(),
                endpoint,
                t,
                cond_top: item.cond_top.clone(),
                cond_front: item.cond_front.clone(),
            });
        }

        let (loss, grads) = cfm_loss_and_grads(model, &batch)?;
        trace.0.push(loss);
        let initial = *initial_loss.get_or_insert(loss.max(f64::MIN_POSITIVE));
        if loss > DIVERGENCE_FACTOR * initial {
            high_steps += 1;
            if high_steps >= DIVERGENCE_PATIENCE {
                return Err(FlowError::TrainingDiverged {
                    step,
                    loss,
                    initial,
                });
            }
        } else {
            high_steps = 0;
        }

        let vel = velocity.get_or_insert_with(|| model.zeros_grads());
        for (v, g) in vel.mats_mut().into_iter().zip(grads.mats()) {
            v.scale(schedule.momentum);
            v.add_assign(g);
        }
        if schedule.learning_rate != 0.0 {
            for (p, v) in model.param_mats_mut().into_iter().zip(vel.mats()) {
                p.axpy(-schedule.learning_rate, v);
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::mat::Mat;
    use super::super::model::FlowConfig;
    use crate::latent::sample_noise;

    fn toy_config() -> FlowConfig {
        FlowConfig {
            latent_resolution: 1,
            channels: 2,
            d_model: 16,
            heads: 2,
            blocks: 1,
            d_cond: 4,
            ffn_mult: 2,
            time_frequencies: 4,
        }
    }

    fn toy_items(n: usize) -> Vec<TrainItem> {
        let c = Mat::from_vec(1, 4, vec![1.0, 0.0, 0.0, 0.0]);
        (0..n)
            .map(|i| {
                // Points on a noisy ring of radius 1.
                let angle = i as f64 / n as f64 * std::f64::consts::TAU;
                TrainItem {
                    priors: None,
                    x0: Latent::from_values(1, 2, vec![angle.cos(), angle.sin()]),
                    cond_top: ConditionTokens::top(c.clone()).unwrap(),
                    cond_front: ConditionTokens::frontal(c.clone()).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_params_bitwise() {
        let mut model = FlowModel::init(toy_config(), 5);
        let before = model.clone();
        let schedule = TrainSchedule {
            steps: 5,
            batch_size: 4,
            learning_rate: 0.0,
            ..TrainSchedule::default()
        };
        train(&mut model, &toy_items(8), &schedule, None).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn same_seed_gives_identical_traces() {
        let schedule = TrainSchedule {
            steps: 20,
            batch_size: 4,
            learning_rate: 0.01,
            seed: 77,
            ..TrainSchedule::default()
        };
        let items = toy_items(8);
        let mut m1 = FlowModel::init(toy_config(), 5);
        let t1 = train(&mut m1, &items, &schedule, None).unwrap();
        let mut m2 = FlowModel::init(toy_config(), 5);
        let t2 = train(&mut m2, &items, &schedule, None).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn loss_decreases_on_toy_problem() {
        let mut model = FlowModel::init(toy_config(), 9);
        let schedule = TrainSchedule {
            steps: 600,
            batch_size: 8,
            learning_rate: 0.02,
            momentum: 0.9,
            seed: 3,
            lambda_choices: vec![0.3, 0.5, 0.7],
        };
        let trace = train(&mut model, &toy_items(64), &schedule, None).unwrap();
        let head = trace.mean_of_first(50);
        let tail = trace.mean_of_last(100);
        assert!(tail < head, "head {head}, tail {tail}");
    }

    #[test]
    fn prior_blended_endpoints_are_exercised() {
        use crate::voxel::{GridFrame, GridSpec, VoxelGrid};
        let config = FlowConfig {
            latent_resolution: 2,
            channels: 2,
            ..toy_config()
        };
        let mut model = FlowModel::init(config, 4);
        let spec = GridSpec {
            resolution: 4,
            frame: GridFrame {
                origin: [0.0; 3],
                cell_size: 1.0,
            },
        };
        let mut lod0 = VoxelGrid::new(spec).unwrap();
        let mut lod1 = VoxelGrid::new(spec).unwrap();
        for i in 0..4u16 {
            for j in 0..4u16 {
                lod0.insert([i, j, 0]);
                if i < 2 {
                    lod1.insert([i, j, 0]);
                }
            }
        }
        let c = Mat::from_vec(1, 4, vec![0.5; 4]);
        let items = vec![TrainItem {
            priors: Some([lod0, lod1]),
            x0: sample_noise(2, 2, 31),
            cond_top: ConditionTokens::top(c.clone()).unwrap(),
            cond_front: ConditionTokens::frontal(c).unwrap(),
        }];
        let ctx = PriorContext {
            surrogate_seed: 17,
            stats: ChannelStats {
                mean: vec![0.0, 0.0],
                std: vec![1.0, 1.0],
            },
        };
        let schedule = TrainSchedule {
            steps: 10,
            batch_size: 4,
            learning_rate: 0.01,
            ..TrainSchedule::default()
        };
        let trace = train(&mut model, &items, &schedule, Some(&ctx)).unwrap();
        assert_eq!(trace.0.len(), 10);
        assert!(trace.0.iter().all(|l| l.is_finite()));
    }
}
