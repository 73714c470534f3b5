//! Benchmark runners behind the `ablate` CLI suites: solver comparison,
//! Euler-step sweep and the symmetry disambiguation study.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    build_query_context, denoise_scene, estimate_pose_with_context, eval_metrics, generate_scene,
    mix_seed, pose_success, train_pipeline_model, PipelineConfig, QueryContext, SceneRecord,
    SceneSpec, IR_TAU_GRID,
};
use crate::error::{Error, Result};
use crate::features::{TexturePattern, TextureSpec};
use crate::flow::{MlpConfig, TrainConfig, VelocityModel};
use crate::geom::{Mat3, RigidTransform, Vec3};
use crate::register::{
    icp_refine, ransac_register, recover_camera_pose, svd_global_align, CorrespondenceSet,
    RegistrationResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverVariant {
    Svd,
    SvdIcp,
    Ransac,
    RansacIcp,
}

impl SolverVariant {
    pub const ALL: [SolverVariant; 4] = [
        SolverVariant::Svd,
        SolverVariant::SvdIcp,
        SolverVariant::Ransac,
        SolverVariant::RansacIcp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SolverVariant::Svd => "svd",
            SolverVariant::SvdIcp => "svd+icp",
            SolverVariant::Ransac => "ransac",
            SolverVariant::RansacIcp => "ransac+icp",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverRow {
    pub variant: SolverVariant,
    pub success_rate: f64,
    pub mean_rotation_deg: f64,
    pub mean_translation_m: f64,
    pub mean_add: f64,
}

#[derive(Debug, Clone)]
pub struct SolverTable {
    pub rows: Vec<SolverRow>,
    pub scenes: usize,
    pub contamination: f64,
}

impl SolverTable {
    pub fn row(&self, variant: SolverVariant) -> &SolverRow {
        self.rows
            .iter()
            .find(|r| r.variant == variant)
            .expect("all variants present")
    }
}

/// Evaluates {svd, svd+icp, ransac, ransac+icp} on identical denoised
/// outputs, optionally contaminating a fraction of the denoised points
/// with gross outliers first.
pub fn run_ablation_solvers(
    scenes: &[SceneRecord],
    ctx: &QueryContext,
    model: &dyn VelocityModel,
    config: &PipelineConfig,
    contamination: f64,
) -> Result<SolverTable> {
    if scenes.len() < 30 {
        return Err(Error::InvalidArgument(format!(
            "solver ablation needs at least 30 scenes, got {}",
            scenes.len()
        )));
    }
    if !(0.0..1.0).contains(&contamination) {
        return Err(Error::InvalidArgument("contamination fraction".into()));
    }

    let mut sums = vec![(0.0_f64, 0.0_f64, 0.0_f64, 0usize); SolverVariant::ALL.len()];
    for record in scenes {
        let denoised = denoise_scene(record, ctx, model, config)?;
        let mut destination = denoised.denoised_metric;
        if contamination > 0.0 {
            contaminate(
                &mut destination,
                contamination,
                mix_seed(config.seed, mix_seed(record.spec.seed, 0xc047)),
            );
        }
        let corr =
            CorrespondenceSet::new(record.target.positions().to_vec(), destination)?;
        let mut ransac_config = config.ransac;
        ransac_config.seed = mix_seed(config.seed, mix_seed(record.spec.seed, 0x7a5c));

        let svd = svd_global_align(&corr)?;
        let ransac = ransac_register(&corr, &ransac_config)?;
        for (slot, variant) in SolverVariant::ALL.iter().enumerate() {
            let transform = match variant {
                SolverVariant::Svd => svd.transform,
                SolverVariant::Ransac => ransac.transform,
                SolverVariant::SvdIcp => {
                    icp_refine(&record.target, &ctx.cloud_metric, &svd.transform, &config.icp)?
                        .transform
                }
                SolverVariant::RansacIcp => {
                    icp_refine(
                        &record.target,
                        &ctx.cloud_metric,
                        &ransac.transform,
                        &config.icp,
                    )?
                    .transform
                }
            };
            let camera_pose = invert_for_pose(&transform);
            let metrics = eval_metrics(&camera_pose, &record.gt, &record.query)?;
            sums[slot].0 += metrics.rotation_deg;
            sums[slot].1 += metrics.translation_m;
            sums[slot].2 += metrics.add;
            if pose_success(&metrics, ctx.diameter) {
                sums[slot].3 += 1;
            }
        }
    }

    let n = scenes.len() as f64;
    let rows = SolverVariant::ALL
        .iter()
        .zip(&sums)
        .map(|(variant, (rot, trans, add, ok))| SolverRow {
            variant: *variant,
            success_rate: *ok as f64 / n,
            mean_rotation_deg: rot / n,
            mean_translation_m: trans / n,
            mean_add: add / n,
        })
        .collect();
    Ok(SolverTable {
        rows,
        scenes: scenes.len(),
        contamination,
    })
}

fn invert_for_pose(transform: &RigidTransform) -> RigidTransform {
    let result = RegistrationResult {
        transform: *transform,
        inlier_mask: Vec::new(),
        inlier_count: 0,
        best_iteration: 0,
        residual_rms: 0.0,
    };
    recover_camera_pose(&result)
}

fn contaminate(points: &mut [Vec3], fraction: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = points.len();
    let count = ((m as f64) * fraction).floor() as usize;
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let center = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0 * 1.5;
    let mut indices: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    for &i in indices.iter().take(count) {
        points[i] = center
            + Vec3::new(
                rng.gen_range(-1.0..1.0) * half.x.max(1e-6),
                rng.gen_range(-1.0..1.0) * half.y.max(1e-6),
                rng.gen_range(-1.0..1.0) * half.z.max(1e-6),
            );
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub steps: usize,
    pub success_rate: f64,
    pub mean_rotation_deg: f64,
    pub mean_translation_m: f64,
    /// Mean wall-clock seconds of the denoising integration per scene.
    /// Timing is the one non-deterministic column of the sweep.
    pub mean_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// Per step count: mean metrics and mean integration wall-clock. The noise
/// initialization per scene is identical across step counts.
pub fn run_steps_sweep(
    scenes: &[SceneRecord],
    ctx: &QueryContext,
    model: &dyn VelocityModel,
    config: &PipelineConfig,
    steps_list: &[usize],
) -> Result<SweepTable> {
    if steps_list.is_empty() {
        return Err(Error::InvalidArgument("empty step list".into()));
    }
    if scenes.is_empty() {
        return Err(Error::EmptyInput("sweep scene set".into()));
    }
    let mut rows = Vec::with_capacity(steps_list.len());
    for &steps in steps_list {
        let run_config = PipelineConfig {
            euler_steps: steps,
            ..*config
        };
        let mut rot = 0.0;
        let mut trans = 0.0;
        let mut secs = 0.0;
        let mut ok = 0usize;
        for record in scenes {
            let estimate = estimate_pose_with_context(record, ctx, model, &run_config)?;
            let metrics = eval_metrics(&estimate.camera_pose, &record.gt, &record.query)?;
            rot += metrics.rotation_deg;
            trans += metrics.translation_m;
            secs += estimate.diagnostics.denoise_seconds;
            if pose_success(&metrics, ctx.diameter) {
                ok += 1;
            }
        }
        let n = scenes.len() as f64;
        rows.push(SweepRow {
            steps,
            success_rate: ok as f64 / n,
            mean_rotation_deg: rot / n,
            mean_translation_m: trans / n,
            mean_seconds: secs / n,
        });
    }
    Ok(SweepTable { rows })
}

/// Study configuration: a shape with k-fold symmetry, trained and
/// evaluated once per texture condition with identical seeds.
#[derive(Debug, Clone)]
pub struct SymmetryStudyConfig {
    pub base_spec: SceneSpec,
    pub pipeline: PipelineConfig,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SymmetryCondition {
    pub texture: TexturePattern,
    pub rotation_errors_deg: Vec<f64>,
    /// Fraction of trials whose canonical-frame residual rotation lies
    /// within 10 degrees of z-rotations by 0/90/180/270 degrees.
    pub mode_occupancy: [f64; 4],
    pub occupied_modes: usize,
    pub median_rotation_deg: f64,
    pub success_rate: f64,
    pub mean_ir_by_tau: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct SymmetryReport {
    pub conditions: Vec<SymmetryCondition>,
}

impl SymmetryReport {
    pub fn condition(&self, texture: TexturePattern) -> &SymmetryCondition {
        self.conditions
            .iter()
            .find(|c| c.texture == texture)
            .expect("condition present")
    }
}

fn rot_z_deg(angle_deg: f64) -> Mat3 {
    let (s, c) = angle_deg.to_radians().sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Geodesic distance (degrees) of the canonical-frame residual rotation to
/// each of the four z-symmetry modes.
pub fn symmetry_mode_residuals(pred: &RigidTransform, gt: &RigidTransform) -> [f64; 4] {
    let residual = gt.rotation().transpose() * pred.rotation();
    let mut out = [0.0; 4];
    for (k, center) in [0.0, 90.0, 180.0, 270.0].iter().enumerate() {
        let rel = residual * rot_z_deg(*center).transpose();
        let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        out[k] = cos.acos().to_degrees();
    }
    out
}

/// Trains and evaluates one model per texture condition on a symmetric
/// shape, reporting rotation-error modes and the inlier-ratio grid.
pub fn run_symmetry_study(study: &SymmetryStudyConfig) -> Result<SymmetryReport> {
    if study.train_scenes == 0 || study.eval_scenes == 0 {
        return Err(Error::InvalidArgument("symmetry study scene counts".into()));
    }
    let mut conditions = Vec::new();
    for pattern in [TexturePattern::SymmetricRegions, TexturePattern::Regions] {
        let texture = TextureSpec {
            pattern,
            ..study.base_spec.texture
        };
        let make_spec = |seed: u64| SceneSpec {
            texture,
            seed,
            ..study.base_spec
        };
        let train_set: Vec<SceneRecord> = (0..study.train_scenes)
            .map(|i| generate_scene(&make_spec(mix_seed(study.seed, 1_000 + i as u64))))
            .collect::<Result<_>>()?;
        let eval_set: Vec<SceneRecord> = (0..study.eval_scenes)
            .map(|i| generate_scene(&make_spec(mix_seed(study.seed, 2_000_000 + i as u64))))
            .collect::<Result<_>>()?;

        let ctx = build_query_context(&train_set[0].query, &texture, &study.pipeline)?;
        let trained =
            train_pipeline_model(&train_set, &ctx, &study.pipeline, study.mlp, &study.train)?;

        let mut rotation_errors = Vec::with_capacity(eval_set.len());
        let mut mode_hits = [0usize; 4];
        let mut ok = 0usize;
        let mut ir_sums = vec![0.0_f64; IR_TAU_GRID.len()];
        for record in &eval_set {
            let estimate =
                estimate_pose_with_context(record, &ctx, &trained.model, &study.pipeline)?;
            let metrics = eval_metrics(&estimate.camera_pose, &record.gt, &record.query)?;
            rotation_errors.push(metrics.rotation_deg);
            if pose_success(&metrics, ctx.diameter) {
                ok += 1;
            }
            let residuals = symmetry_mode_residuals(&estimate.camera_pose, &record.gt);
            let (best, value) = residuals
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            if *value < 10.0 {
                mode_hits[best] += 1;
            }
            for (i, (_, ir)) in estimate.diagnostics.inlier_ratio_by_tau.iter().enumerate() {
                ir_sums[i] += ir;
            }
        }

        let n = eval_set.len() as f64;
        let mode_occupancy = [
            mode_hits[0] as f64 / n,
            mode_hits[1] as f64 / n,
            mode_hits[2] as f64 / n,
            mode_hits[3] as f64 / n,
        ];
        let occupied_modes = mode_occupancy.iter().filter(|&&f| f >= 0.10).count();
        let mut sorted = rotation_errors.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        conditions.push(SymmetryCondition {
            texture: pattern,
            rotation_errors_deg: rotation_errors,
            mode_occupancy,
            occupied_modes,
            median_rotation_deg: median,
            success_rate: ok as f64 / n,
            mean_ir_by_tau: IR_TAU_GRID
                .iter()
                .zip(&ir_sums)
                .map(|(tau, sum)| (*tau, sum / n))
                .collect(),
        });
    }
    Ok(SymmetryReport { conditions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_residuals_identify_z_rotations() {
        let gt = RigidTransform::identity();
        for (k, angle) in [0.0, 90.0, 180.0, 270.0].iter().enumerate() {
            let pred = RigidTransform::new(rot_z_deg(*angle), Vec3::zeros()).unwrap();
            let residuals = symmetry_mode_residuals(&pred, &gt);
            assert!(residuals[k] < 1e-9, "mode {k}: {residuals:?}");
            for (j, r) in residuals.iter().enumerate() {
                if j != k {
                    assert!(*r > 45.0, "mode {k} vs {j}: {residuals:?}");
                }
            }
        }
    }

    #[test]
    fn contamination_replaces_the_requested_fraction() {
        let original: Vec<Vec3> = (0..100)
            .map(|i| Vec3::new(i as f64 * 0.001, 0.0, 0.0))
            .collect();
        let mut modified = original.clone();
        contaminate(&mut modified, 0.3, 9);
        let changed = original
            .iter()
            .zip(&modified)
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 30);
    }
}
