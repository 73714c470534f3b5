//! Pose recovery from denoised correspondences: Kabsch solver, RANSAC
//! loop, SVD-global baseline, ICP refinement and the inlier-ratio metric.

mod icp;

pub use icp::{icp_refine, IcpConfig, IcpResult};

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{invert_transform, Mat3, PointCloud, RigidTransform, Vec3};

/// Threshold below which the second singular value of the cross-covariance
/// marks a degenerate (collinear/coincident) configuration.
const DEGENERACY_RATIO: f64 = 1e-9;

/// Index-aligned point pairs: `source` in the camera frame, `destination`
/// in the query frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    source: Vec<Vec3>,
    destination: Vec<Vec3>,
}

impl CorrespondenceSet {
    pub fn new(source: Vec<Vec3>, destination: Vec<Vec3>) -> Result<Self> {
        if source.len() != destination.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} source vs {} destination points",
                source.len(),
                destination.len()
            )));
        }
        if source.len() < 3 {
            return Err(Error::InvalidArgument(
                "correspondence set needs at least 3 pairs".into(),
            ));
        }
        for (i, (s, d)) in source.iter().zip(&destination).enumerate() {
            if !s.iter().all(|v| v.is_finite()) || !d.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("correspondence pair {i}")));
            }
        }
        Ok(Self {
            source,
            destination,
        })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn source(&self) -> &[Vec3] {
        &self.source
    }

    pub fn destination(&self) -> &[Vec3] {
        &self.destination
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier threshold in meters.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            threshold: 0.01,
            seed: 0,
        }
    }
}

/// Minimal sample size of the Kabsch solver inside RANSAC.
pub const RANSAC_MINIMAL_SAMPLE: usize = 3;

/// Outcome of a registration: estimated transform plus consensus
/// diagnostics.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
    pub best_iteration: usize,
    /// RMS residual over the inliers (over all pairs when none qualify).
    pub residual_rms: f64,
}

/// Weighted least-squares rigid alignment (orthogonal Procrustes with the
/// proper-rotation correction): returns the transform minimizing
/// `sum_i w_i || R s_i + t - d_i ||^2` with `det(R) = +1`.
pub fn kabsch(src: &[Vec3], dst: &[Vec3], weights: Option<&[f64]>) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} source vs {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::InvalidArgument(
            "kabsch needs at least 3 pairs".into(),
        ));
    }
    let uniform = vec![1.0; src.len()];
    let w = match weights {
        Some(w) => {
            if w.len() != src.len() {
                return Err(Error::ShapeMismatch("weight count".into()));
            }
            if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidArgument("weights must be >= 0".into()));
            }
            w
        }
        None => &uniform,
    };
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("weights sum to zero".into()));
    }

    let mut src_c = Vec3::zeros();
    let mut dst_c = Vec3::zeros();
    for i in 0..src.len() {
        src_c += src[i] * w[i];
        dst_c += dst[i] * w[i];
    }
    src_c /= total;
    dst_c /= total;

    let mut cross = Mat3::zeros();
    for i in 0..src.len() {
        let s = src[i] - src_c;
        let d = dst[i] - dst_c;
        cross += (s * d.transpose()) * w[i];
    }

    let svd = cross.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Degenerate("svd failed".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("svd failed".into()))?;
    let sigma = svd.singular_values;
    if sigma[0] <= 0.0 || sigma[1] <= DEGENERACY_RATIO * sigma[0] {
        return Err(Error::Degenerate("degenerate configuration".into()));
    }

    let v = v_t.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, sign));
    let rotation = v * correction * u.transpose();
    let translation = dst_c - rotation * src_c;
    RigidTransform::new(rotation, translation)
}

/// Pairs with `|| T(src) - dst || <= threshold`.
pub fn count_inliers(
    transform: &RigidTransform,
    corr: &CorrespondenceSet,
    threshold: f64,
) -> Result<(usize, Vec<bool>)> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument("inlier threshold".into()));
    }
    let mask: Vec<bool> = corr
        .source
        .iter()
        .zip(&corr.destination)
        .map(|(s, d)| (transform.apply_point(s) - d).norm() <= threshold)
        .collect();
    let count = mask.iter().filter(|&&m| m).count();
    Ok((count, mask))
}

fn residual_rms(transform: &RigidTransform, corr: &CorrespondenceSet, mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..corr.len() {
        if mask[i] {
            sum += (transform.apply_point(&corr.source[i]) - corr.destination[i]).norm_squared();
            n += 1;
        }
    }
    if n == 0 {
        for i in 0..corr.len() {
            sum += (transform.apply_point(&corr.source[i]) - corr.destination[i]).norm_squared();
        }
        n = corr.len();
    }
    (sum / n as f64).sqrt()
}

/// The ablation baseline: Kabsch over all pairs with uniform weights.
/// The inlier mask is computed at the default RANSAC threshold so the
/// result is comparable with [`ransac_register`].
pub fn svd_global_align(corr: &CorrespondenceSet) -> Result<RegistrationResult> {
    let transform = kabsch(&corr.source, &corr.destination, None)?;
    let threshold = RansacConfig::default().threshold;
    let (inlier_count, inlier_mask) = count_inliers(&transform, corr, threshold)?;
    let residual = residual_rms(&transform, corr, &inlier_mask);
    Ok(RegistrationResult {
        transform,
        inlier_mask,
        inlier_count,
        best_iteration: 0,
        residual_rms: residual,
    })
}

/// RANSAC with 3-point Kabsch hypotheses.
///
/// Iteration i draws its minimal sample from an independent, counter-based
/// random stream, so hypotheses could be evaluated in parallel with results
/// identical to this sequential loop. Degenerate (collinear) samples are
/// skipped without consuming an iteration, up to a 10x attempt cap. The
/// best model (most inliers; ties by lower residual RMS, then lower
/// iteration index) is refit on its consensus set.
pub fn ransac_register(
    corr: &CorrespondenceSet,
    config: &RansacConfig,
) -> Result<RegistrationResult> {
    if config.iterations == 0 {
        return Err(Error::InvalidArgument("ransac needs >= 1 iteration".into()));
    }
    if !(config.threshold > 0.0) {
        return Err(Error::InvalidArgument("ransac threshold".into()));
    }
    let m = corr.len();

    struct Best {
        count: usize,
        rms: f64,
        iteration: usize,
        transform: RigidTransform,
        mask: Vec<bool>,
    }
    let mut best: Option<Best> = None;

    let mut completed = 0usize;
    let mut attempts = 0usize;
    let attempt_cap = config.iterations.saturating_mul(10);
    while completed < config.iterations && attempts < attempt_cap {
        let attempt = attempts;
        attempts += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(attempt as u64 + 1);

        let sample = sample_distinct(&mut rng, m, RANSAC_MINIMAL_SAMPLE);
        let src: Vec<Vec3> = sample.iter().map(|&i| corr.source[i]).collect();
        let dst: Vec<Vec3> = sample.iter().map(|&i| corr.destination[i]).collect();
        let hypothesis = match kabsch(&src, &dst, None) {
            Ok(t) => t,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        };
        completed += 1;

        let (count, mask) = count_inliers(&hypothesis, corr, config.threshold)?;
        if count == 0 {
            continue;
        }
        let rms = residual_rms(&hypothesis, corr, &mask);
        let better = match &best {
            None => true,
            Some(b) => count > b.count || (count == b.count && rms < b.rms),
        };
        if better {
            best = Some(Best {
                count,
                rms,
                iteration: completed - 1,
                transform: hypothesis,
                mask,
            });
        }
    }

    let best = best.ok_or_else(|| Error::Degenerate("no valid hypothesis".into()))?;

    // Refit on the consensus set; keep the refit only if it does not lose
    // by the same tie-breaking rule.
    let inlier_src: Vec<Vec3> = (0..m).filter(|&i| best.mask[i]).map(|i| corr.source[i]).collect();
    let inlier_dst: Vec<Vec3> = (0..m)
        .filter(|&i| best.mask[i])
        .map(|i| corr.destination[i])
        .collect();
    let mut result = RegistrationResult {
        transform: best.transform,
        inlier_mask: best.mask.clone(),
        inlier_count: best.count,
        best_iteration: best.iteration,
        residual_rms: best.rms,
    };
    if inlier_src.len() >= 3 {
        if let Ok(refit) = kabsch(&inlier_src, &inlier_dst, None) {
            let (count, mask) = count_inliers(&refit, corr, config.threshold)?;
            let rms = residual_rms(&refit, corr, &mask);
            if count > result.inlier_count || (count == result.inlier_count && rms <= result.residual_rms)
            {
                result = RegistrationResult {
                    transform: refit,
                    inlier_mask: mask,
                    inlier_count: count,
                    best_iteration: best.iteration,
                    residual_rms: rms,
                };
            }
        }
    }
    Ok(result)
}

fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    // Floyd's algorithm; k is tiny.
    let mut out: Vec<usize> = Vec::with_capacity(k);
    for j in (n - k)..n {
        let t = rng.gen_range(0..=j);
        if out.contains(&t) {
            out.push(j);
        } else {
            out.push(t);
        }
    }
    out
}

/// Percentage of index-aligned points within `tau_fraction * diam` of
/// their counterparts (strict inequality).
pub fn inlier_ratio(
    denoised: &PointCloud,
    registered: &PointCloud,
    tau_fraction: f64,
    diam: f64,
) -> Result<f64> {
    if denoised.len() != registered.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} denoised vs {} registered points",
            denoised.len(),
            registered.len()
        )));
    }
    if !(tau_fraction > 0.0) || !(diam > 0.0) {
        return Err(Error::InvalidArgument("inlier ratio threshold".into()));
    }
    let tau = tau_fraction * diam;
    let hits = denoised
        .positions()
        .iter()
        .zip(registered.positions())
        .filter(|(a, b)| (*a - *b).norm() < tau)
        .count();
    Ok(100.0 * hits as f64 / denoised.len() as f64)
}

/// Inverts the target->query transform into the standard 6D pose of the
/// query object in the camera frame.
pub fn recover_camera_pose(result: &RegistrationResult) -> RigidTransform {
    invert_transform(&result.transform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::random_rotation;
    use approx::assert_relative_eq;

    fn random_points(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    fn seeded_transform(seed: u64) -> RigidTransform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_rotation(&mut rng);
        RigidTransform::new(
            r,
            Vec3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ),
        )
        .unwrap()
    }

    fn rot_z(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn kabsch_identity_on_equal_clouds() {
        let pts = random_points(1, 10);
        let t = kabsch(&pts, &pts, None).unwrap();
        assert!((t.rotation() - Mat3::identity()).abs().max() < 1e-9);
        assert!(t.translation().norm() < 1e-9);
    }

    #[test]
    fn kabsch_recovers_constructed_transform() {
        let src = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let gt = RigidTransform::new(
            rot_z(std::f64::consts::FRAC_PI_2),
            Vec3::new(1.0, 2.0, 3.0),
        )
        .unwrap();
        let dst: Vec<Vec3> = src.iter().map(|p| gt.apply_point(p)).collect();
        let est = kabsch(&src, &dst, None).unwrap();
        assert!((est.rotation() - gt.rotation()).abs().max() < 1e-9);
        assert!((est.translation() - gt.translation()).norm() < 1e-9);
        let residual: f64 = src
            .iter()
            .zip(&dst)
            .map(|(s, d)| (est.apply_point(s) - d).norm_squared())
            .sum();
        assert!(residual < 1e-12);
    }

    #[test]
    fn kabsch_rejects_reflections() {
        // Mirror the destination: the best proper rotation is NOT the mirror.
        let src = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::new(1.0, 1.0, 0.5),
        ];
        let dst: Vec<Vec3> = src.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect();
        let est = kabsch(&src, &dst, None).unwrap();
        assert_relative_eq!(est.rotation().determinant(), 1.0, epsilon = 1e-9);

        // Brute-force over sampled rotations: none may beat the Kabsch
        // residual by more than the sampling slack.
        let kabsch_residual: f64 = src
            .iter()
            .zip(&dst)
            .map(|(s, d)| (est.apply_point(s) - d).norm_squared())
            .sum();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src_c: Vec3 = src.iter().sum::<Vec3>() / src.len() as f64;
        let dst_c: Vec3 = dst.iter().sum::<Vec3>() / dst.len() as f64;
        let mut best = f64::INFINITY;
        for _ in 0..200_000 {
            let r = random_rotation(&mut rng);
            let t = dst_c - r * src_c;
            let res: f64 = src
                .iter()
                .zip(&dst)
                .map(|(s, d)| (r * s + t - d).norm_squared())
                .sum();
            best = best.min(res);
        }
        assert!(
            kabsch_residual <= best + 1e-3,
            "kabsch {kabsch_residual} vs sampled best {best}"
        );
    }

    #[test]
    fn kabsch_degenerate_inputs() {
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let err = kabsch(&line, &line, None).unwrap_err();
        assert!(err.to_string().contains("degenerate configuration"));
        let two = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        assert!(kabsch(&two, &two, None).is_err());
    }

    #[test]
    fn kabsch_weighted_ignores_zero_weight_outlier() {
        let src = random_points(4, 6);
        let gt = seeded_transform(5);
        let mut dst: Vec<Vec3> = src.iter().map(|p| gt.apply_point(p)).collect();
        dst[0] += Vec3::new(10.0, -3.0, 2.0);
        let mut weights = vec![1.0; 6];
        weights[0] = 0.0;
        let est = kabsch(&src, &dst, Some(&weights)).unwrap();
        assert!((est.rotation() - gt.rotation()).abs().max() < 1e-9);
        assert!((est.translation() - gt.translation()).norm() < 1e-9);
    }

    #[test]
    fn kabsch_is_equivariant_under_common_rotation() {
        for seed in 0..20 {
            let src = random_points(seed, 12);
            let gt = seeded_transform(seed + 100);
            let dst: Vec<Vec3> = src.iter().map(|p| gt.apply_point(p)).collect();
            let base = kabsch(&src, &dst, None).unwrap();

            let mut rng = ChaCha8Rng::seed_from_u64(seed + 999);
            let s = random_rotation(&mut rng);
            let src_rot: Vec<Vec3> = src.iter().map(|p| s * p).collect();
            let dst_rot: Vec<Vec3> = dst.iter().map(|p| s * p).collect();
            let conjugated = kabsch(&src_rot, &dst_rot, None).unwrap();
            let expect = s * base.rotation() * s.transpose();
            assert!(
                (conjugated.rotation() - expect).abs().max() < 1e-9,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn count_inliers_examples() {
        let src = random_points(6, 20);
        let gt = seeded_transform(7);
        let dst: Vec<Vec3> = src.iter().map(|p| gt.apply_point(p)).collect();
        let corr = CorrespondenceSet::new(src, dst).unwrap();
        let (count, _) = count_inliers(&gt, &corr, 1e-6).unwrap();
        assert_eq!(count, 20);

        let offset: Vec<Vec3> = corr
            .destination()
            .iter()
            .map(|p| p + Vec3::new(0.02, 0.0, 0.0))
            .collect();
        let corr2 = CorrespondenceSet::new(corr.source().to_vec(), offset).unwrap();
        let (count2, _) = count_inliers(&gt, &corr2, 0.01).unwrap();
        assert_eq!(count2, 0);
    }

    #[test]
    fn ransac_recovers_exactly_without_outliers() {
        let src = random_points(8, 50);
        let gt = seeded_transform(9);
        let dst: Vec<Vec3> = src.iter().map(|p| gt.apply_point(p)).collect();
        let corr = CorrespondenceSet::new(src, dst).unwrap();
        let result = ransac_register(&corr, &RansacConfig::default()).unwrap();
        assert!(result.transform.rotation_angle_to(&gt) < 1e-6);
        assert!((result.transform.translation() - gt.translation()).norm() < 1e-6);
        assert_eq!(result.inlier_count, 50);
    }

    #[test]
    fn ransac_is_deterministic() {
        let src = random_points(10, 40);
        let gt = seeded_transform(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dst: Vec<Vec3> = src
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i % 3 == 0 {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                } else {
                    gt.apply_point(p)
                }
            })
            .collect();
        let corr = CorrespondenceSet::new(src, dst).unwrap();
        let config = RansacConfig {
            iterations: 200,
            threshold: 0.01,
            seed: 42,
        };
        let a = ransac_register(&corr, &config).unwrap();
        let b = ransac_register(&corr, &config).unwrap();
        assert_eq!(a.transform, b.transform);
        assert_eq!(a.inlier_mask, b.inlier_mask);
        assert_eq!(a.best_iteration, b.best_iteration);
    }

    #[test]
    fn ransac_beats_svd_under_contamination() {
        let mut svd_worse = 0usize;
        let trials = 100;
        for seed in 0..trials {
            let src = random_points(seed, 60);
            let gt = seeded_transform(seed + 7000);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 14000);
            let dst: Vec<Vec3> = src
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    if i < 30 {
                        // Gross outliers uniform in a 1 m box.
                        Vec3::new(
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                        )
                    } else {
                        gt.apply_point(p)
                    }
                })
                .collect();
            let corr = CorrespondenceSet::new(src, dst).unwrap();
            let svd = svd_global_align(&corr).unwrap();
            let ransac = ransac_register(
                &corr,
                &RansacConfig {
                    iterations: 500,
                    threshold: 0.01,
                    seed,
                },
            )
            .unwrap();
            let svd_err = svd.transform.rotation_angle_to(&gt);
            let ransac_err = ransac.transform.rotation_angle_to(&gt);
            if ransac_err < svd_err {
                svd_worse += 1;
            }
            assert!(
                ransac.inlier_count >= svd.inlier_count,
                "seed {seed}: ransac {} < svd {}",
                ransac.inlier_count,
                svd.inlier_count
            );
        }
        assert!(
            svd_worse >= 95,
            "ransac better in only {svd_worse}/{trials} trials"
        );
    }

    #[test]
    fn svd_equals_kabsch_on_clean_data_and_m3_exact() {
        let src = random_points(20, 3);
        let gt = seeded_transform(21);
        let dst: Vec<Vec3> = src.iter().map(|p| gt.apply_point(p)).collect();
        let corr = CorrespondenceSet::new(src, dst).unwrap();
        let svd = svd_global_align(&corr).unwrap();
        assert!(svd.transform.rotation_angle_to(&gt) < 1e-9);
        assert_eq!(svd.inlier_count, 3);
    }

    #[test]
    fn inlier_ratio_examples_and_monotonicity() {
        let pts = random_points(30, 40);
        let cloud = PointCloud::new(pts.clone()).unwrap();
        assert_relative_eq!(inlier_ratio(&cloud, &cloud, 0.005, 1.0).unwrap(), 100.0);

        let tau = 0.05_f64;
        let displaced: Vec<Vec3> = pts
            .iter()
            .map(|p| p + Vec3::new(2.0 * tau, 0.0, 0.0))
            .collect();
        let moved = PointCloud::new(displaced).unwrap();
        assert_relative_eq!(inlier_ratio(&moved, &cloud, tau, 1.0).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let jittered: Vec<Vec3> = pts
            .iter()
            .map(|p| {
                p + Vec3::new(
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                )
            })
            .collect();
        let jittered = PointCloud::new(jittered).unwrap();
        let strict = inlier_ratio(&jittered, &cloud, 0.005, 1.0).unwrap();
        let loose = inlier_ratio(&jittered, &cloud, 0.10, 1.0).unwrap();
        assert!(loose >= strict);
    }

    #[test]
    fn recover_camera_pose_inverts() {
        let t = RigidTransform::new(Mat3::identity(), Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let result = RegistrationResult {
            transform: t,
            inlier_mask: vec![true; 3],
            inlier_count: 3,
            best_iteration: 0,
            residual_rms: 0.0,
        };
        let pose = recover_camera_pose(&result);
        assert_relative_eq!(*pose.translation(), Vec3::new(-1.0, -2.0, -3.0));
    }
}
