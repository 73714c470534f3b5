//! Local geometric descriptors: covariance eigenvalue shape measures,
//! normal components and neighbor-distance statistics, tiled to the
//! requested feature width.

use nalgebra::SymmetricEigen;

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::geom::{Mat3, NeighborIndex, PointCloud, Vec3};

/// Neighborhood scales, as multiples of the base neighbor count. Larger
/// scales capture semi-global structure (distance to edges and ends) that
/// single-scale local statistics miss.
const SCALE_FACTORS: [usize; 3] = [1, 3, 9];

/// Entries per scale: 6 covariance eigenvalue measures (linearity,
/// planarity, sphericity, anisotropy, spectral spread, curvature) + 4
/// neighbor-distance statistics.
const PER_SCALE_WIDTH: usize = 10;

/// Width of the underlying descriptor before tiling: three scales of
/// eigenvalue/distance statistics plus the 3 normal components.
pub const DESCRIPTOR_BASE_WIDTH: usize = SCALE_FACTORS.len() * PER_SCALE_WIDTH + 3;

/// Columns of a width-`width` descriptor that are invariant to rigid motion
/// (everything except the normal components).
pub fn rigid_invariant_columns(width: usize) -> Vec<bool> {
    let normal_start = SCALE_FACTORS.len() * PER_SCALE_WIDTH;
    (0..width)
        .map(|c| {
            let base = c % DESCRIPTOR_BASE_WIDTH;
            !(normal_start..normal_start + 3).contains(&base)
        })
        .collect()
}

fn scale_statistics(
    cloud: &PointCloud,
    index: &NeighborIndex,
    point_index: usize,
    k: usize,
) -> [f64; PER_SCALE_WIDTH] {
    let p = &cloud.positions()[point_index];
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
    let mut lams: Vec<f64> = eigen.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    lams.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let (l1, l2, l3) = (lams[0], lams[1], lams[2]);
    let sum = l1 + l2 + l3;

    let (linearity, planarity, sphericity, anisotropy, spread, curvature) = if l1 > 0.0 {
        (
            (l1 - l2) / l1,
            (l2 - l3) / l1,
            l3 / l1,
            (l1 - l3) / l1,
            sum.sqrt(),
            l3 / sum.max(f64::MIN_POSITIVE),
        )
    } else {
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    };

    // Distance statistics over the non-self neighbors.
    let dists: Vec<f64> = neighbors
        .iter()
        .filter(|(i, _)| *i != point_index)
        .map(|(_, d)| *d)
        .collect();
    let (dmean, dstd, dmin, dmax) = if dists.is_empty() {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let mean = dists.iter().sum::<f64>() / dists.len() as f64;
        let var = dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / dists.len() as f64;
        let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = dists.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (mean, var.sqrt(), min, max)
    };

    [
        linearity, planarity, sphericity, anisotropy, spread, curvature, dmean, dstd, dmin, dmax,
    ]
}

/// Per-point geometric descriptor rows of width `width`.
///
/// Requires normals on the cloud and k >= 5 base neighbors. Eigenvalue and
/// distance statistics are computed at three neighborhood scales (k, 3k,
/// 9k, capped at the cloud size), concatenated with the normal components
/// and tiled cyclically up to `width`.
pub fn geometric_descriptors(
    cloud: &PointCloud,
    k: usize,
    width: usize,
) -> Result<FeatureMatrix> {
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::InvalidArgument("descriptors require normals".into()))?;
    if k < 5 {
        return Err(Error::InvalidArgument(format!(
            "descriptors need k >= 5, got {k}"
        )));
    }
    if k > cloud.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds point count {}",
            cloud.len()
        )));
    }
    if width == 0 {
        return Err(Error::InvalidArgument("descriptor width is 0".into()));
    }

    let index = NeighborIndex::build(cloud.positions())?;
    let mut rows = Vec::with_capacity(cloud.len());
    for pi in 0..cloud.len() {
        let mut base = Vec::with_capacity(DESCRIPTOR_BASE_WIDTH);
        for factor in SCALE_FACTORS {
            let scale_k = (k * factor).min(cloud.len());
            base.extend(scale_statistics(cloud, &index, pi, scale_k));
        }
        let n = normals[pi];
        base.extend([n.x, n.y, n.z]);
        let row: Vec<f64> = (0..width)
            .map(|c| base[c % DESCRIPTOR_BASE_WIDTH])
            .collect();
        rows.push(row);
    }
    FeatureMatrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{apply_transform, estimate_normals, random_rotation, RigidTransform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Regular grid patch on z = 0: every interior k-neighborhood is
    /// symmetric, so the planar covariance eigenvalues are analytic
    /// (lambda1 = lambda2, lambda3 = 0).
    fn plane_cloud() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        let (cloud, _) = estimate_normals(&PointCloud::new(pts).unwrap(), 8).unwrap();
        cloud
    }

    #[test]
    fn plane_patch_has_high_planarity() {
        let cloud = plane_cloud();
        let desc = geometric_descriptors(&cloud, 9, DESCRIPTOR_BASE_WIDTH).unwrap();
        // Interior points: skip the boundary ring.
        let mut checked = 0;
        for i in 0..cloud.len() {
            let p = cloud.positions()[i];
            if p.x > 0.25 && p.x < 1.65 && p.y > 0.25 && p.y < 1.65 {
                assert!(
                    desc.row(i)[1] > 0.9,
                    "planarity {} at interior point",
                    desc.row(i)[1]
                );
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn ball_interior_is_spherical() {
        // Regular 3D grid ball: interior neighborhoods have an isotropic
        // covariance, so sphericity dominates linearity and planarity.
        let mut pts = Vec::new();
        for i in -6i32..=6 {
            for j in -6i32..=6 {
                for k in -6i32..=6 {
                    let v = Vec3::new(i as f64, j as f64, k as f64) * 0.1;
                    if v.norm() <= 0.6 {
                        pts.push(v);
                    }
                }
            }
        }
        let (cloud, _) = estimate_normals(&PointCloud::new(pts).unwrap(), 8).unwrap();
        let desc = geometric_descriptors(&cloud, 7, DESCRIPTOR_BASE_WIDTH).unwrap();
        let mut dominant = 0usize;
        let mut total = 0usize;
        for i in 0..cloud.len() {
            if cloud.positions()[i].norm() < 0.3 {
                total += 1;
                let row = desc.row(i);
                if row[2] > row[0] && row[2] > row[1] {
                    dominant += 1;
                }
            }
        }
        assert!(total > 30);
        assert!(
            dominant as f64 > 0.8 * total as f64,
            "sphericity dominant at {dominant}/{total} interior points"
        );
    }

    #[test]
    fn eigenvalue_entries_are_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..200)
            .map(|_| {
                let x: f64 = rng.gen_range(-1.0..1.0);
                let y: f64 = rng.gen_range(-1.0..1.0);
                Vec3::new(x, y, 0.3 * (x * x - y * y))
            })
            .collect();
        let (cloud, _) = estimate_normals(&PointCloud::new(pts).unwrap(), 8).unwrap();
        let width = DESCRIPTOR_BASE_WIDTH + 5;
        let desc = geometric_descriptors(&cloud, 8, width).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = RigidTransform::new(random_rotation(&mut rng), Vec3::new(0.5, -2.0, 1.0)).unwrap();
        let moved = apply_transform(&t, &cloud).unwrap();
        let desc_moved = geometric_descriptors(&moved, 8, width).unwrap();

        let invariant = rigid_invariant_columns(width);
        assert!(!invariant[30] && !invariant[31] && !invariant[32]);
        for i in 0..cloud.len() {
            let a = desc.row(i);
            let b = desc_moved.row(i);
            for c in 0..width {
                if invariant[c] {
                    assert!(
                        (a[c] - b[c]).abs() < 1e-6,
                        "point {i} column {c}: {} vs {}",
                        a[c],
                        b[c]
                    );
                }
            }
        }
    }

    #[test]
    fn missing_normals_is_an_error() {
        let cloud = PointCloud::new(vec![Vec3::zeros(); 10]).unwrap();
        assert!(geometric_descriptors(&cloud, 5, DESCRIPTOR_BASE_WIDTH).is_err());
    }
}
