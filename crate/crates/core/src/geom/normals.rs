//! Per-point normal estimation via PCA over local neighborhoods.

use nalgebra::SymmetricEigen;

use super::{Mat3, NeighborIndex, PointCloud, Vec3};
use crate::error::{Error, Result};

/// Degenerate neighborhood test: the mid eigenvalue must carry a minimal
/// share of the spectrum, otherwise the points are (near-)collinear and
/// the normal direction is unconstrained.
const RANK_TOL: f64 = 1e-9;

/// Deterministic orientation rule for estimated normals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormalOrientation {
    /// Flip normals to point toward a fixed viewpoint (sensor position).
    TowardPoint(Vec3),
    /// Flip normals to point away from the cloud centroid (object exterior).
    AwayFromCentroid,
}

/// Estimates normals with the default orientation (toward the origin,
/// i.e. the camera for clouds in the camera frame).
///
/// Returns the cloud with normals attached plus a per-point validity mask;
/// points with rank-deficient neighborhoods keep a unit placeholder normal
/// but are flagged invalid and must be excluded from descriptor use.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<(PointCloud, Vec<bool>)> {
    estimate_normals_oriented(cloud, k, NormalOrientation::TowardPoint(Vec3::zeros()))
}

pub fn estimate_normals_oriented(
    cloud: &PointCloud,
    k: usize,
    orientation: NormalOrientation,
) -> Result<(PointCloud, Vec<bool>)> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!(
            "normal estimation needs k >= 3, got {k}"
        )));
    }
    if k > cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds point count {}",
            cloud.len()
        )));
    }
    let index = NeighborIndex::build(cloud.positions())?;
    let centroid = cloud.centroid();

    let mut normals = Vec::with_capacity(cloud.len());
    let mut valid = Vec::with_capacity(cloud.len());
    for p in cloud.positions() {
        // The query point itself is part of the set, so the k-NN set
        // includes it at distance zero.
        let neighbors = index.k_nearest(p, k);
        let mut mean = Vec3::zeros();
        for (i, _) in &neighbors {
            mean += cloud.positions()[*i];
        }
        mean /= neighbors.len() as f64;
        let mut cov = Mat3::zeros();
        for (i, _) in &neighbors {
            let d = cloud.positions()[*i] - mean;
            cov += d * d.transpose();
        }
        cov /= neighbors.len() as f64;

        let eigen = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            eigen.eigenvalues[a]
                .partial_cmp(&eigen.eigenvalues[b])
                .unwrap()
        });
        let lam_min = eigen.eigenvalues[order[0]].max(0.0);
        let lam_mid = eigen.eigenvalues[order[1]].max(0.0);
        let lam_max = eigen.eigenvalues[order[2]].max(0.0);
        let _ = lam_min;
        let ok = lam_max > 0.0 && lam_mid > RANK_TOL * lam_max;

        let mut n: Vec3 = eigen.eigenvectors.column(order[0]).into();
        n = n.normalize();
        let flip = match orientation {
            NormalOrientation::TowardPoint(view) => n.dot(&(view - p)) < 0.0,
            NormalOrientation::AwayFromCentroid => n.dot(&(p - centroid)) < 0.0,
        };
        if flip {
            n = -n;
        }
        normals.push(n);
        valid.push(ok);
    }

    let out = cloud.clone().with_normals(normals)?;
    Ok((out, valid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_transform, random_rotation, RigidTransform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn planar_cloud_gets_z_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let (out, valid) = estimate_normals(&cloud, 8).unwrap();
        assert!(valid.iter().all(|&v| v));
        for n in out.normals().unwrap() {
            assert!(
                n.z.abs() > 1.0 - 1e-6,
                "normal {n:?} is not aligned with z"
            );
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..1500)
            .map(|_| {
                let v = Vec3::new(
                    rng.gen_range(-1.0..1.0_f64),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                v.normalize()
            })
            .collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let (out, valid) = estimate_normals(&cloud, 12).unwrap();
        let mut aligned = 0usize;
        for (i, n) in out.normals().unwrap().iter().enumerate() {
            if !valid[i] {
                continue;
            }
            if n.dot(&pts[i]).abs() > 0.99 {
                aligned += 1;
            }
        }
        assert!(
            aligned as f64 >= 0.95 * cloud.len() as f64,
            "only {aligned}/{} radial",
            cloud.len()
        );
    }

    #[test]
    fn collinear_points_flagged_degenerate() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        let cloud = PointCloud::new(pts).unwrap();
        let (_, valid) = estimate_normals(&cloud, 3).unwrap();
        assert!(valid.iter().all(|&v| !v));
    }

    #[test]
    fn k_exceeding_point_count_is_an_error() {
        let cloud = PointCloud::new(vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert!(estimate_normals(&cloud, 3).is_err());
    }

    #[test]
    fn normals_are_rigid_invariant_up_to_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Smooth patch of a paraboloid: well-separated covariance spectrum.
        let pts: Vec<Vec3> = (0..400)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                let y: f64 = rng.gen_range(-1.0..1.0);
                Vec3::new(x, y, 0.2 * (x * x + y * y))
            })
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let (base, valid) = estimate_normals(&cloud, 10).unwrap();

        let rotation = random_rotation(&mut rng);
        let t = RigidTransform::new(rotation, Vec3::new(0.3, -0.1, 0.2)).unwrap();
        let moved = apply_transform(&t, &cloud).unwrap();
        let (moved_est, _) = estimate_normals(&moved, 10).unwrap();

        for i in 0..cloud.len() {
            if !valid[i] {
                continue;
            }
            let expected = rotation * base.normals().unwrap()[i];
            let got = moved_est.normals().unwrap()[i];
            let agreement = expected.dot(&got).abs();
            assert!(agreement > 1.0 - 1e-6, "point {i}: |dot| = {agreement}");
        }
    }
}
