//! Seeded mini-batch gradient descent on the CFM loss.

use std::time::Instant;

use super::mlp::MlpGradients;
use super::{MlpConfig, MlpVelocityModel, TrainingSample};
use crate::error::{Error, Result};

/// Gradient-based optimizers. Both are deterministic for a fixed seed;
/// Adam is the default because plain descent stalls on the conditional-mean
/// plateau of symmetric training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Desk-scale training schedule with a fixed learning rate; time is
/// sampled uniformly on [0, 1] by the sample source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Gradient steps per epoch (one sample is one scene-level batch).
    pub steps_per_epoch: usize,
    /// Samples accumulated per parameter update.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Standard deviation of the Gaussian endpoint, in normalized units.
    pub noise_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            steps_per_epoch: 48,
            batch_size: 1,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            noise_sigma: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TrainedModel {
    pub model: MlpVelocityModel,
    pub log: Vec<EpochStats>,
}

/// Trains a velocity model on samples produced by `source`.
///
/// The source receives a global sample index and must be deterministic in
/// it; identical seeds and sources give bit-identical parameters.
pub fn train_velocity_model(
    source: &mut dyn FnMut(u64) -> Result<TrainingSample>,
    cond_width: usize,
    mlp_config: MlpConfig,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    if config.epochs == 0 || config.steps_per_epoch == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument("training schedule".into()));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("learning rate".into()));
    }
    let mut model = MlpVelocityModel::new(
        cond_width,
        MlpConfig {
            seed: mlp_config.seed ^ config.seed,
            ..mlp_config
        },
    )?;

    let mut adam = match config.optimizer {
        Optimizer::Adam => Some(AdamState::new(model.param_count())),
        Optimizer::Sgd => None,
    };

    let mut log = Vec::with_capacity(config.epochs);
    let mut sample_index = 0u64;
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        let mut step = 0usize;
        while step < config.steps_per_epoch {
            let mut batch_grads: Option<MlpGradients> = None;
            let mut batch_loss = 0.0;
            let in_batch = config.batch_size.min(config.steps_per_epoch - step);
            for _ in 0..in_batch {
                let sample = source(sample_index)?;
                sample_index += 1;
                let (loss, grads) = model.loss_and_gradients(&sample)?;
                batch_loss += loss;
                batch_grads = Some(match batch_grads {
                    None => grads,
                    Some(acc) => acc.merge(grads),
                });
            }
            let grads = batch_grads
                .expect("batch is non-empty")
                .scaled(1.0 / in_batch as f64);
            match &mut adam {
                None => model.apply_gradients(&grads, config.learning_rate),
                Some(state) => {
                    let mut params = model.flatten_params();
                    state.update(&mut params, &grads.to_flat(), config.learning_rate);
                    model.set_params(&params)?;
                }
            }
            loss_sum += batch_loss / in_batch as f64;
            updates += 1;
            step += in_batch;
        }
        let mean_loss = loss_sum / updates as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training diverged at epoch {epoch}"
            )));
        }
        log.push(EpochStats {
            epoch,
            mean_loss,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainedModel { model, log })
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(count: usize) -> Self {
        Self {
            m: vec![0.0; count],
            v: vec![0.0; count],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let correction1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let correction2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let m_hat = self.m[i] / correction1;
            let v_hat = self.v[i] / correction2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_conditioning, FeatureMatrix};
    use crate::flow::draw_path_sample;
    use crate::geom::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Synthetic task: velocity is a fixed linear function of the
    /// conditioning row, recoverable by the network.
    fn linear_source() -> impl FnMut(u64) -> Result<TrainingSample> {
        move |index| {
            let mut rng = ChaCha8Rng::seed_from_u64(index);
            let rows = 24;
            let cond: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let positional: Vec<Vec<f64>> =
                (0..rows).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
            let f = FeatureMatrix::from_rows(&cond).unwrap();
            let p = FeatureMatrix::from_rows(&positional).unwrap();
            let conditioning = build_conditioning(&f, &p).unwrap();
            let positions: Vec<Vec3> = (0..rows)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let target: Vec<Vec3> = cond
                .iter()
                .map(|c| Vec3::new(0.7 * c[0] - 0.2 * c[1], 0.5 * c[2], c[3] * 0.3))
                .collect();
            Ok(TrainingSample {
                t: rng.gen_range(0.0..1.0),
                positions,
                target,
                conditioning,
            })
        }
    }

    #[test]
    fn loss_decreases_and_training_is_deterministic() {
        let config = TrainConfig {
            epochs: 12,
            steps_per_epoch: 16,
            batch_size: 1,
            learning_rate: 0.3,
            optimizer: Optimizer::Sgd,
            seed: 3,
            noise_sigma: 0.5,
        };
        let mlp = MlpConfig {
            hidden1: 16,
            hidden2: 16,
            time_frequencies: 4,
            position_frequencies: 2,
            seed: 1,
            skip: None,
        };
        let mut src_a = linear_source();
        let a = train_velocity_model(&mut src_a, 5, mlp, &config).unwrap();
        let mut src_b = linear_source();
        let b = train_velocity_model(&mut src_b, 5, mlp, &config).unwrap();
        assert!(a.log.last().unwrap().mean_loss < a.log.first().unwrap().mean_loss);
        assert_eq!(a.model.flatten_params(), b.model.flatten_params());
    }

    #[test]
    fn overfits_single_fixed_sample() {
        let mut fixed = linear_source();
        let sample = fixed(7).unwrap();
        let mut src = move |_| Ok(sample.clone());
        let config = TrainConfig {
            epochs: 150,
            steps_per_epoch: 10,
            batch_size: 1,
            learning_rate: 0.15,
            optimizer: Optimizer::Sgd,
            seed: 0,
            noise_sigma: 0.5,
        };
        let mlp = MlpConfig {
            hidden1: 24,
            hidden2: 24,
            time_frequencies: 4,
            position_frequencies: 2,
            seed: 2,
            skip: None,
        };
        let out = train_velocity_model(&mut src, 5, mlp, &config).unwrap();
        assert!(
            out.log.last().unwrap().mean_loss < 1e-3,
            "final loss {}",
            out.log.last().unwrap().mean_loss
        );
    }

    #[test]
    fn shuffled_pairs_plateau_at_target_variance() {
        // Conditioning uncorrelated with targets: the best possible MSE is
        // the variance of the target distribution.
        let mut src = |index: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(index ^ 0xdead);
            let rows = 16;
            let f = FeatureMatrix::from_rows(
                &(0..rows)
                    .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect::<Vec<Vec<f64>>>(),
            )
            .unwrap();
            let p = FeatureMatrix::from_rows(
                &(0..rows)
                    .map(|_| vec![rng.gen_range(-1.0..1.0)])
                    .collect::<Vec<Vec<f64>>>(),
            )
            .unwrap();
            let conditioning = build_conditioning(&f, &p).unwrap();
            let x0 = vec![Vec3::zeros(); rows];
            let (t, _, xt, _) = draw_path_sample(&x0, 1.0, index).unwrap();
            // Independent target, unrelated to everything else.
            let target: Vec<Vec3> = (0..rows)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            Ok(TrainingSample {
                t,
                positions: xt,
                target,
                conditioning,
            })
        };
        let config = TrainConfig {
            epochs: 20,
            steps_per_epoch: 24,
            batch_size: 1,
            learning_rate: 0.2,
            optimizer: Optimizer::Sgd,
            seed: 9,
            noise_sigma: 1.0,
        };
        let mlp = MlpConfig {
            hidden1: 12,
            hidden2: 12,
            time_frequencies: 3,
            position_frequencies: 2,
            seed: 4,
            skip: None,
        };
        let out = train_velocity_model(&mut src, 5, mlp, &config).unwrap();
        // Var of U(-1,1) per entry = 1/3.
        let plateau = out.log.last().unwrap().mean_loss;
        assert!(
            (plateau - 1.0 / 3.0).abs() < 0.1,
            "plateau {plateau} should approach 1/3"
        );
    }
}
