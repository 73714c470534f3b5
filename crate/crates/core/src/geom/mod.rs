//! Core geometry: point clouds, rigid transforms, spatial index,
//! normal estimation, depth lifting and seeded noise sampling.

mod depth;
mod kdtree;
mod normals;

pub use depth::{lift_depth, BinaryGrid, DepthGrid, PinholeIntrinsics};
pub use kdtree::NeighborIndex;
pub use normals::{estimate_normals, estimate_normals_oriented, NormalOrientation};

use nalgebra::{DMatrix, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHONORMALITY_TOL: f64 = 1e-9;
const UNIT_NORMAL_TOL: f64 = 1e-6;

/// A 3D point cloud with optional per-point unit normals and feature rows.
///
/// Positions are in meters unless the cloud has been normalized (see
/// [`normalize_cloud`]). Construction validates the invariants: finite
/// positions, normals unit-length and count-matched, feature row count
/// matched.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    features: Option<DMatrix<f64>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyInput("point cloud has no points".into()));
        }
        for (i, p) in positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("position {i} is not finite")));
            }
        }
        Ok(Self {
            positions,
            normals: None,
            features: None,
        })
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.positions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} normals for {} points",
                normals.len(),
                self.positions.len()
            )));
        }
        for (i, n) in normals.iter().enumerate() {
            if !n.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("normal {i} is not finite")));
            }
            if (n.norm() - 1.0).abs() > UNIT_NORMAL_TOL {
                return Err(Error::InvalidArgument(format!(
                    "normal {i} has length {:.9}, expected 1",
                    n.norm()
                )));
            }
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_features(mut self, features: DMatrix<f64>) -> Result<Self> {
        if features.nrows() != self.positions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for {} points",
                features.nrows(),
                self.positions.len()
            )));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn features(&self) -> Option<&DMatrix<f64>> {
        self.features.as_ref()
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = Vec3::zeros();
        for p in &self.positions {
            c += p;
        }
        c / self.positions.len() as f64
    }

    /// Keeps only the points selected by `keep` (and their normals/features).
    pub fn filter(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.len() {
            return Err(Error::ShapeMismatch("filter mask length".into()));
        }
        let positions: Vec<Vec3> = self
            .positions
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(p, _)| *p)
            .collect();
        let mut out = PointCloud::new(positions)?;
        if let Some(normals) = &self.normals {
            let kept: Vec<Vec3> = normals
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(n, _)| *n)
                .collect();
            out = out.with_normals(kept)?;
        }
        if let Some(features) = &self.features {
            let rows: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
            let mut kept = DMatrix::zeros(rows.len(), features.ncols());
            for (r, &src) in rows.iter().enumerate() {
                kept.set_row(r, &features.row(src));
            }
            out = out.with_features(kept)?;
        }
        Ok(out)
    }
}

/// A proper rigid transform: `p -> R p + t` with `R` in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let defect = (gram - Mat3::identity()).abs().max();
        if defect > ORTHONORMALITY_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation is not orthonormal (defect {defect:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation determinant is {det:.12}, expected +1"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_direction(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }

    /// Geodesic angle (radians) between the rotation parts of two transforms.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        rotation_geodesic(&self.rotation, &other.rotation)
    }
}

/// Geodesic angle (radians) between two rotation matrices.
pub fn rotation_geodesic(a: &Mat3, b: &Mat3) -> f64 {
    let rel = a * b.transpose();
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    cos.acos()
}

/// Applies `T` to every position (and rotates normals). Features pass through.
pub fn apply_transform(transform: &RigidTransform, cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("empty input".into()));
    }
    let positions = cloud
        .positions()
        .iter()
        .map(|p| transform.apply_point(p))
        .collect();
    let mut out = PointCloud::new(positions)?;
    if let Some(normals) = cloud.normals() {
        let rotated = normals
            .iter()
            .map(|n| transform.apply_direction(n))
            .collect();
        out = out.with_normals(rotated)?;
    }
    if let Some(features) = cloud.features() {
        out = out.with_features(features.clone())?;
    }
    Ok(out)
}

/// Returns the inverse transform `(R^T, -R^T t)`.
pub fn invert_transform(transform: &RigidTransform) -> RigidTransform {
    let rotation = transform.rotation.transpose();
    let translation = -(rotation * transform.translation);
    RigidTransform {
        rotation,
        translation,
    }
}

/// Composition applying `b` first, then `a`: `(a . b)(p) = a(b(p))`.
pub fn compose_transforms(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// Exact maximum pairwise distance. O(N^2); desk scale is N <= 1e4.
pub fn diameter(cloud: &PointCloud) -> Result<f64> {
    let pts = cloud.positions();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(
            "diameter requires at least 2 points".into(),
        ));
    }
    let mut best = 0.0_f64;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d2 = (pts[i] - pts[j]).norm_squared();
            if d2 > best {
                best = d2;
            }
        }
    }
    Ok(best.sqrt())
}

/// Centering/scaling record that maps a cloud to the unit-diameter,
/// centroid-origin working frame and back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub center: Vec3,
    pub scale: f64,
}

impl NormalizationRecord {
    pub fn normalize_point(&self, p: &Vec3) -> Vec3 {
        (p - self.center) / self.scale
    }

    pub fn denormalize_point(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.center
    }
}

/// Centers the cloud at its centroid and scales it to unit diameter.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<(PointCloud, NormalizationRecord)> {
    let scale = diameter(cloud)?;
    if scale <= 0.0 {
        return Err(Error::Degenerate("cloud has zero diameter".into()));
    }
    let center = cloud.centroid();
    let record = NormalizationRecord { center, scale };
    let positions = cloud
        .positions()
        .iter()
        .map(|p| record.normalize_point(p))
        .collect();
    let mut out = PointCloud::new(positions)?;
    if let Some(normals) = cloud.normals() {
        out = out.with_normals(normals.to_vec())?;
    }
    if let Some(features) = cloud.features() {
        out = out.with_features(features.clone())?;
    }
    Ok((out, record))
}

/// Undoes [`normalize_cloud`] on positions produced in the normalized frame.
pub fn denormalize_cloud(cloud: &PointCloud, record: &NormalizationRecord) -> Result<PointCloud> {
    let positions = cloud
        .positions()
        .iter()
        .map(|p| record.denormalize_point(p))
        .collect();
    let mut out = PointCloud::new(positions)?;
    if let Some(normals) = cloud.normals() {
        out = out.with_normals(normals.to_vec())?;
    }
    Ok(out)
}

/// `n` i.i.d. zero-mean isotropic Gaussian 3-vectors with per-axis
/// standard deviation `sigma`, deterministic for a given seed.
pub fn sample_noise(n: usize, sigma: f64, seed: u64) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Err(Error::InvalidArgument("noise sample count is 0".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be positive, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    Ok((0..n)
        .map(|_| {
            let x: f64 = normal.sample(&mut rng);
            let y: f64 = normal.sample(&mut rng);
            let z: f64 = normal.sample(&mut rng);
            Vec3::new(x, y, z) * sigma
        })
        .collect())
}

/// Uniformly distributed rotation matrix (via unit quaternions).
pub fn random_rotation<R: Rng>(rng: &mut R) -> Mat3 {
    let normal = StandardNormal;
    loop {
        let w: f64 = normal.sample(rng);
        let x: f64 = normal.sample(rng);
        let y: f64 = normal.sample(rng);
        let z: f64 = normal.sample(rng);
        let q = Quaternion::new(w, x, y, z);
        if q.norm() > 1e-9 {
            return UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        }
    }
}
