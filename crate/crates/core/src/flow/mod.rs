//! Conditional flow matching in R3: linear interpolation path, training
//! pair sampling, CFM loss, velocity models and Euler integration with
//! anchor masking.
//!
//! Convention: the model predicts the forward velocity of the linear path,
//! `X(1) - X(0)`, which is constant along the path. Inference integrates
//! `X <- X - v dt` from t = 1 down to t = 0, so the trajectory ends at
//! X(0) (the clean joint cloud) when the prediction is exact.

mod mlp;
mod train;

pub use mlp::{gradient_check, MlpConfig, MlpVelocityModel, SkipSpec};
pub use train::{train_velocity_model, EpochStats, Optimizer, TrainConfig, TrainedModel};

use crate::error::{Error, Result};
use crate::features::ConditioningMatrix;
use crate::geom::{sample_noise, PointCloud, Vec3};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Joint state of the anchored query half and the moving target half
/// during integration.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub positions: Vec<Vec3>,
    pub time: f64,
    pub anchor_mask: Vec<bool>,
    pub displacement_accum: Vec<Vec3>,
}

impl FlowState {
    /// A fresh state at t = 1.
    pub fn new(positions: Vec<Vec3>, anchor_mask: Vec<bool>) -> Result<Self> {
        if positions.len() != anchor_mask.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} positions vs {} anchor flags",
                positions.len(),
                anchor_mask.len()
            )));
        }
        if positions.is_empty() {
            return Err(Error::EmptyInput("flow state".into()));
        }
        let n = positions.len();
        Ok(Self {
            positions,
            time: 1.0,
            anchor_mask,
            displacement_accum: vec![Vec3::zeros(); n],
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Positions of the moving (non-anchor) half, in row order.
    pub fn moving_positions(&self) -> Vec<Vec3> {
        self.positions
            .iter()
            .zip(&self.anchor_mask)
            .filter(|(_, &anchor)| !anchor)
            .map(|(p, _)| *p)
            .collect()
    }
}

/// A velocity field conditioned on per-point rows.
pub trait VelocityModel {
    fn velocity(
        &self,
        t: f64,
        positions: &[Vec3],
        conditioning: &ConditioningMatrix,
    ) -> Result<Vec<Vec3>>;
}

/// Exact test oracle: knows the clean endpoint X(0) per row and returns the
/// forward velocity that moves the current state onto it along the
/// remaining time, `(x - x0) / t`. On the linear path this equals
/// `X(1) - X(0)` exactly, so Euler integration is exact for any step count.
#[derive(Debug, Clone)]
pub struct OracleVelocityModel {
    endpoints: Vec<Vec3>,
}

impl OracleVelocityModel {
    pub fn new(endpoints: Vec<Vec3>) -> Self {
        Self { endpoints }
    }
}

impl VelocityModel for OracleVelocityModel {
    fn velocity(
        &self,
        t: f64,
        positions: &[Vec3],
        _conditioning: &ConditioningMatrix,
    ) -> Result<Vec<Vec3>> {
        if positions.len() != self.endpoints.len() {
            return Err(Error::ShapeMismatch(format!(
                "oracle has {} endpoints for {} rows",
                self.endpoints.len(),
                positions.len()
            )));
        }
        if t <= 1e-12 {
            return Ok(vec![Vec3::zeros(); positions.len()]);
        }
        Ok(positions
            .iter()
            .zip(&self.endpoints)
            .map(|(x, x0)| (x - x0) / t)
            .collect())
    }
}

/// A model that always returns zero velocity (untrained baseline).
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroVelocityModel;

impl VelocityModel for ZeroVelocityModel {
    fn velocity(
        &self,
        _t: f64,
        positions: &[Vec3],
        _conditioning: &ConditioningMatrix,
    ) -> Result<Vec<Vec3>> {
        Ok(vec![Vec3::zeros(); positions.len()])
    }
}

/// Exact convex combination `(1 - t) X0 + t X1`.
pub fn interpolate_path(x0: &[Vec3], x1: &[Vec3], t: f64) -> Result<Vec<Vec3>> {
    if x0.len() != x1.len() {
        return Err(Error::ShapeMismatch(format!(
            "path endpoints {} vs {}",
            x0.len(),
            x1.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "interpolation time {t} outside [0, 1]"
        )));
    }
    Ok(x0
        .iter()
        .zip(x1)
        .map(|(a, b)| a * (1.0 - t) + b * t)
        .collect())
}

/// Mean squared error over all 3n entries.
pub fn cfm_loss(predicted: &[Vec3], target: &[Vec3]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "loss operands {} vs {}",
            predicted.len(),
            target.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput("loss over empty set".into()));
    }
    let sum: f64 = predicted
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).norm_squared())
        .sum();
    Ok(sum / (3.0 * predicted.len() as f64))
}

/// One training draw: time, interpolated positions and the regression target.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub t: f64,
    pub positions: Vec<Vec3>,
    pub target: Vec<Vec3>,
    pub conditioning: ConditioningMatrix,
}

/// Seed used for the Gaussian endpoint of a training draw; exposed so the
/// conditioning (which encodes the noisy initialization coordinates) can be
/// built from the identical noise rows.
pub fn training_noise_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Draws `t ~ U[0,1]` and `X(1) ~ N(0, sigma^2)` for a clean joint cloud
/// `X(0)`, returning `(t, x1, x_t, target)` with `target = X(1) - X(0)`.
pub fn draw_path_sample(
    x0: &[Vec3],
    sigma: f64,
    seed: u64,
) -> Result<(f64, Vec<Vec3>, Vec<Vec3>, Vec<Vec3>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t: f64 = rng.gen_range(0.0..1.0);
    let x1 = sample_noise(x0.len(), sigma, training_noise_seed(seed))?;
    let xt = interpolate_path(x0, &x1, t)?;
    let target: Vec<Vec3> = x1.iter().zip(x0).map(|(b, a)| b - a).collect();
    Ok((t, x1, xt, target))
}

/// Builds one training sample for the joint cloud Q ++ T_r.
///
/// Both clouds must already live in the normalized query frame. The
/// conditioning is passed through unchanged; callers that need the noisy
/// initialization inside the conditioning should build it from the noise
/// rows drawn with [`training_noise_seed`] of the same seed.
pub fn make_training_sample(
    query: &PointCloud,
    target_registered: &PointCloud,
    conditioning: &ConditioningMatrix,
    sigma: f64,
    seed: u64,
) -> Result<TrainingSample> {
    let mut x0: Vec<Vec3> = query.positions().to_vec();
    x0.extend_from_slice(target_registered.positions());
    if conditioning.rows() != x0.len() {
        return Err(Error::ShapeMismatch(format!(
            "conditioning rows {} vs joint cloud {}",
            conditioning.rows(),
            x0.len()
        )));
    }
    let (t, _x1, xt, target) = draw_path_sample(&x0, sigma, seed)?;
    Ok(TrainingSample {
        t,
        positions: xt,
        target,
        conditioning: conditioning.clone(),
    })
}

/// K uniform Euler steps from t = 1 to t = 0 of `X <- X - v dt`, forcing
/// zero velocity on anchor rows. Anchor rows are never touched, so they
/// stay bit-identical to the initial state.
pub fn euler_integrate(
    model: &dyn VelocityModel,
    init: FlowState,
    conditioning: &ConditioningMatrix,
    steps: usize,
) -> Result<FlowState> {
    if steps == 0 {
        return Err(Error::InvalidArgument("step count must be >= 1".into()));
    }
    if (init.time - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "integration must start at t = 1, got {}",
            init.time
        )));
    }
    if conditioning.rows() != init.len() {
        return Err(Error::ShapeMismatch(format!(
            "conditioning rows {} vs state rows {}",
            conditioning.rows(),
            init.len()
        )));
    }
    let mut state = init;
    let dt = 1.0 / steps as f64;
    for step in 0..steps {
        let t = (steps - step) as f64 / steps as f64;
        let velocity = model.velocity(t, &state.positions, conditioning)?;
        if velocity.len() != state.len() {
            return Err(Error::ShapeMismatch("velocity row count".into()));
        }
        for i in 0..state.len() {
            if state.anchor_mask[i] {
                continue;
            }
            let v = velocity[i];
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "velocity for row {i} at step {step}"
                )));
            }
            let delta = v * dt;
            state.positions[i] -= delta;
            state.displacement_accum[i] -= delta;
        }
        state.time = (steps - step - 1) as f64 / steps as f64;
    }
    Ok(state)
}

/// Denoises the observed target: anchors Q at its clean positions,
/// initializes the moving half from Gaussian noise (seeded), integrates and
/// returns the moving half, index-aligned with `target`.
///
/// The conditioning must cover Q rows first, then target rows, and carry
/// each target point's observed coordinates so the correspondence survives
/// noise initialization.
pub fn denoise_target(
    query: &PointCloud,
    target: &PointCloud,
    conditioning: &ConditioningMatrix,
    model: &dyn VelocityModel,
    steps: usize,
    sigma: f64,
    noise_seed: u64,
) -> Result<(PointCloud, FlowState)> {
    let noise = sample_noise(target.len(), sigma, noise_seed)?;
    denoise_target_with_init(query, target, conditioning, model, steps, noise)
}

/// Same as [`denoise_target`] with the noise initialization supplied by the
/// caller (it must match what the conditioning encodes).
pub fn denoise_target_with_init(
    query: &PointCloud,
    target: &PointCloud,
    conditioning: &ConditioningMatrix,
    model: &dyn VelocityModel,
    steps: usize,
    init: Vec<Vec3>,
) -> Result<(PointCloud, FlowState)> {
    if init.len() != target.len() {
        return Err(Error::ShapeMismatch("noise initialization length".into()));
    }
    let mut positions: Vec<Vec3> = query.positions().to_vec();
    positions.extend_from_slice(&init);
    let mut anchor_mask = vec![true; query.len()];
    anchor_mask.extend(std::iter::repeat(false).take(target.len()));
    let state = FlowState::new(positions, anchor_mask)?;
    let final_state = euler_integrate(model, state, conditioning, steps)?;
    let denoised = PointCloud::new(final_state.moving_positions())?;
    Ok((denoised, final_state))
}
