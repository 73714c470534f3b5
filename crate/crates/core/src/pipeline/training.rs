//! Bridges scenes to the flow trainer: precomputes per-scene conditioning
//! features and clean joint clouds, then samples (t, noise) pairs on demand.

use super::{
    assemble_conditioning, build_target_features, mix_seed, PipelineConfig, QueryContext,
    SceneRecord, ShapeGeometry, TargetFeatures,
};
use crate::error::{Error, Result};
use crate::features::TexturePattern;
use crate::flow::{
    draw_path_sample, train_velocity_model, MlpConfig, TrainConfig, TrainedModel, TrainingSample,
};
use crate::geom::{invert_transform, Mat3, Vec3};

/// Static per-scene training data; only the time and the Gaussian endpoint
/// are resampled per draw.
#[derive(Debug, Clone)]
pub struct SceneTrainingData {
    /// Clean joint cloud in the normalized query frame: query rows then
    /// registered target rows.
    pub x0: Vec<Vec3>,
    target_features: TargetFeatures,
    query_rows: usize,
}

pub fn build_scene_training_data(
    record: &SceneRecord,
    ctx: &QueryContext,
    config: &PipelineConfig,
) -> Result<SceneTrainingData> {
    let target_features = build_target_features(record, ctx, config)?;
    let gt_inv = invert_transform(&record.gt);
    let canonicalizer = label_canonicalizer(record);
    let mut x0: Vec<Vec3> = ctx.cloud_norm.positions().to_vec();
    x0.extend(
        record
            .target
            .positions()
            .iter()
            .map(|p| ctx.record.normalize_point(&(canonicalizer * gt_inv.apply_point(p)))),
    );
    Ok(SceneTrainingData {
        x0,
        target_features,
        query_rows: ctx.cloud_norm.len(),
    })
}

/// Symmetry canonicalization of training labels.
///
/// A shape symmetry S makes the registered targets GT^-1 T and
/// S GT^-1 T equally valid supervision. When the texture cannot tell the
/// two apart, scenes whose poses are symmetry-equivalent would otherwise
/// carry contradictory labels and the regression collapses to their mean.
/// Picking, per scene, the symmetry representative whose implied pose is
/// closest to the identity makes the learned map single-valued on the
/// quotient; recovered poses then differ from the annotated ground truth
/// by a symmetry element, which is exactly the ambiguity a geometry-only
/// pipeline carries.
fn label_canonicalizer(record: &SceneRecord) -> Mat3 {
    if record.spec.texture.pattern.breaks_symmetry() {
        return Mat3::identity();
    }
    let geometry = ShapeGeometry::build(
        record.spec.shape,
        record.spec.aspect,
        record.spec.object_seed,
    );
    let mut best = Mat3::identity();
    let mut best_angle = f64::INFINITY;
    for s in geometry.symmetry_rotations() {
        // Implied camera pose under the relabeling: R_gt S^T.
        let implied = record.gt.rotation() * s.transpose();
        let angle = ((implied.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        if angle < best_angle {
            best_angle = angle;
            best = s;
        }
    }
    best
}

/// One draw: fresh `t` and Gaussian endpoint, conditioning encoding that
/// endpoint as the initialization coordinates.
///
/// With `anchor_query` the query half stays clean along the whole path
/// (zero target velocity, initialization = its own coordinates), exactly
/// as the integrator sees it at inference; only the target half rides the
/// noisy path.
pub fn scene_training_sample(
    data: &SceneTrainingData,
    ctx: &QueryContext,
    config: &PipelineConfig,
    sigma: f64,
    anchor_query: bool,
    seed: u64,
) -> Result<TrainingSample> {
    let (t, mut x1, mut xt, mut target) = draw_path_sample(&data.x0, sigma, seed)?;
    if anchor_query {
        for i in 0..data.query_rows {
            x1[i] = data.x0[i];
            xt[i] = data.x0[i];
            target[i] = crate::geom::Vec3::zeros();
        }
    }
    let (init_q, init_t) = x1.split_at(data.query_rows);
    let conditioning =
        assemble_conditioning(ctx, &data.target_features, init_q, init_t, config)?;
    Ok(TrainingSample {
        t,
        positions: xt,
        target,
        conditioning,
    })
}

/// Trains a velocity model over a scene set. Scenes are visited cyclically;
/// each visit draws a fresh (t, noise) pair with both halves on the noisy
/// joint path. Fully deterministic in the configs and scene set.
pub fn train_pipeline_model(
    scenes: &[SceneRecord],
    ctx: &QueryContext,
    config: &PipelineConfig,
    mlp_config: MlpConfig,
    train_config: &TrainConfig,
) -> Result<TrainedModel> {
    if scenes.is_empty() {
        return Err(Error::EmptyInput("training scene set".into()));
    }
    let data: Vec<SceneTrainingData> = scenes
        .iter()
        .map(|record| build_scene_training_data(record, ctx, config))
        .collect::<Result<_>>()?;
    let sigma = train_config.noise_sigma;
    let mut source = |index: u64| {
        let scene = &data[(index as usize) % data.len()];
        let seed = mix_seed(train_config.seed, index);
        scene_training_sample(scene, ctx, config, sigma, false, seed)
    };
    // The network predicts the residual on top of the encoded
    // initialization coordinates.
    let mlp_config = MlpConfig {
        skip: Some(config.init_coord_skip()),
        ..mlp_config
    };
    train_velocity_model(
        &mut source,
        config.conditioning_width(),
        mlp_config,
        train_config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::TextureSpec;
    use crate::pipeline::{generate_scene, build_query_context, SceneSpec};

    #[test]
    fn scene_samples_are_deterministic_and_consistent() {
        let config = PipelineConfig {
            semantic_width: 96,
            ..PipelineConfig::default()
        };
        let record = generate_scene(&SceneSpec {
            query_points: 256,
            occluder_count: 0,
            texture: TextureSpec::regions(12, 96, 3),
            ..SceneSpec::default()
        })
        .unwrap();
        let ctx = build_query_context(&record.query, &record.spec.texture, &config).unwrap();
        let data = build_scene_training_data(&record, &ctx, &config).unwrap();
        assert_eq!(data.x0.len(), ctx.cloud_norm.len() + record.target.len());

        let a = scene_training_sample(&data, &ctx, &config, 0.5, false, 9).unwrap();
        let b = scene_training_sample(&data, &ctx, &config, 0.5, false, 9).unwrap();
        assert_eq!(a.t, b.t);
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.conditioning.matrix(), b.conditioning.matrix());
        assert_eq!(a.conditioning.width(), config.conditioning_width());

        // Linear-path identity: X(t) = X0 + t * target.
        for i in 0..data.x0.len() {
            let direct = data.x0[i] + a.target[i] * a.t;
            assert!((a.positions[i] - direct).norm() < 1e-9);
        }
    }
}
