//! Synthetic scene generation: procedural shapes, random poses, partial
//! visibility, sensor noise, occluders and gross outliers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::TextureSpec;
use crate::geom::{
    apply_transform, diameter, estimate_normals_oriented, invert_transform, normalize_cloud,
    random_rotation, BinaryGrid, DepthGrid, NormalizationRecord, NormalOrientation,
    PinholeIntrinsics, PointCloud, RigidTransform, Vec3,
};

use super::mix_seed;

/// Outliers are rejection-sampled to stay at least this fraction of the
/// object diameter away from the true surface ("gross" outliers).
const OUTLIER_CLEARANCE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Cube,
    Cylinder,
    Sphere,
    Blob,
    LBracket,
}

impl ShapeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Blob => "blob",
            ShapeKind::LBracket => "l-bracket",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cube" => Ok(ShapeKind::Cube),
            "cylinder" => Ok(ShapeKind::Cylinder),
            "sphere" => Ok(ShapeKind::Sphere),
            "blob" => Ok(ShapeKind::Blob),
            "l-bracket" => Ok(ShapeKind::LBracket),
            other => Err(Error::InvalidArgument(format!("unknown shape '{other}'"))),
        }
    }
}

/// Scene recipe. One spec describes one scene; the query object itself is
/// determined by (shape, aspect, object_seed) so a run over many scenes
/// keeps the object fixed while `seed` varies pose, crop and noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub shape: ShapeKind,
    /// z-stretch of the shape; 1.0 keeps the base proportions. A cube with
    /// aspect != 1 becomes a square cuboid with exactly 4-fold symmetry.
    pub aspect: f64,
    pub texture: TextureSpec,
    /// Fraction of the front-facing points kept, in (0, 1].
    pub visibility: f64,
    /// Sensor noise, meters.
    pub noise_sigma: f64,
    /// Fraction of the final target points that are gross outliers, [0, 1).
    pub outlier_fraction: f64,
    pub occluder_count: usize,
    pub query_points: usize,
    pub object_seed: u64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            shape: ShapeKind::Blob,
            aspect: 1.0,
            texture: TextureSpec::regions(32, 1536, 7),
            visibility: 0.7,
            noise_sigma: 0.0005,
            outlier_fraction: 0.1,
            occluder_count: 1,
            query_points: 256,
            object_seed: 1,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.visibility > 0.0 && self.visibility <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "visibility {} outside (0, 1]",
                self.visibility
            )));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidArgument(format!(
                "outlier fraction {} outside [0, 1)",
                self.outlier_fraction
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("negative noise sigma".into()));
        }
        if !(self.aspect > 0.0) {
            return Err(Error::InvalidArgument("aspect must be positive".into()));
        }
        if self.query_points < 64 {
            return Err(Error::InvalidArgument(
                "need at least 64 query points".into(),
            ));
        }
        Ok(())
    }
}

/// Axis-aligned box given by half extents, centered at `center`.
#[derive(Debug, Clone, Copy)]
struct BoxGeom {
    center: Vec3,
    half: Vec3,
}

impl BoxGeom {
    fn sdf(&self, p: &Vec3) -> f64 {
        let q = (p - self.center).abs() - self.half;
        let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        outside + inside
    }

    fn sample_surface(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        let h = self.half;
        let areas = [h.y * h.z, h.y * h.z, h.x * h.z, h.x * h.z, h.x * h.y, h.x * h.y];
        let total: f64 = areas.iter().sum();
        let mut pick = rng.gen_range(0.0..total);
        let mut face = 0usize;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                face = i;
                break;
            }
            pick -= a;
        }
        let u = rng.gen_range(-1.0..1.0);
        let v = rng.gen_range(-1.0..1.0);
        let local = match face {
            0 => Vec3::new(h.x, u * h.y, v * h.z),
            1 => Vec3::new(-h.x, u * h.y, v * h.z),
            2 => Vec3::new(u * h.x, h.y, v * h.z),
            3 => Vec3::new(u * h.x, -h.y, v * h.z),
            4 => Vec3::new(u * h.x, v * h.y, h.z),
            _ => Vec3::new(u * h.x, v * h.y, -h.z),
        };
        self.center + local
    }
}

/// Concrete geometry with a surface sampler and a distance-to-surface
/// oracle used by construction checks and outlier rejection.
#[derive(Debug, Clone)]
pub enum ShapeGeometry {
    Box(BoxParams),
    Sphere { radius: f64 },
    Cylinder { radius: f64, half_height: f64 },
    Blob { base_radius: f64, bumps: Vec<Bump> },
    LBracket { a: BoxParams, b: BoxParams },
}

#[derive(Debug, Clone, Copy)]
pub struct BoxParams {
    center: Vec3,
    half: Vec3,
}

#[derive(Debug, Clone, Copy)]
pub struct Bump {
    direction: Vec3,
    amplitude: f64,
    width: f64,
}

impl ShapeGeometry {
    pub fn build(kind: ShapeKind, aspect: f64, object_seed: u64) -> Self {
        match kind {
            ShapeKind::Cube => ShapeGeometry::Box(BoxParams {
                center: Vec3::zeros(),
                half: Vec3::new(0.06, 0.06, 0.06 * aspect),
            }),
            ShapeKind::Sphere => ShapeGeometry::Sphere { radius: 0.1 },
            ShapeKind::Cylinder => ShapeGeometry::Cylinder {
                radius: 0.06,
                half_height: 0.08 * aspect,
            },
            ShapeKind::Blob => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(object_seed, 0xb10b));
                let bumps = (0..6)
                    .map(|_| {
                        let dir = loop {
                            let v = Vec3::new(
                                rng.gen_range(-1.0..1.0_f64),
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(-1.0..1.0),
                            );
                            if v.norm() > 1e-3 {
                                break v.normalize();
                            }
                        };
                        Bump {
                            direction: dir,
                            amplitude: rng.gen_range(-0.15..0.3),
                            width: rng.gen_range(0.1..0.3),
                        }
                    })
                    .collect();
                ShapeGeometry::Blob {
                    base_radius: 0.09,
                    bumps,
                }
            }
            ShapeKind::LBracket => ShapeGeometry::LBracket {
                a: BoxParams {
                    center: Vec3::new(0.045, -0.03, 0.0),
                    half: Vec3::new(0.08, 0.025, 0.025 * aspect),
                },
                b: BoxParams {
                    center: Vec3::new(-0.03, 0.045, 0.0),
                    half: Vec3::new(0.025, 0.08, 0.025 * aspect),
                },
            },
        }
    }

    fn blob_radius(base: f64, bumps: &[Bump], dir: &Vec3) -> f64 {
        let mut r = 1.0;
        for b in bumps {
            r += b.amplitude * ((dir.dot(&b.direction) - 1.0) / b.width).exp();
        }
        base * r.max(0.2)
    }

    pub fn sample_surface(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
        let normal = StandardNormal;
        let unit_dir = |rng: &mut ChaCha8Rng| loop {
            let v = Vec3::new(
                normal.sample(rng),
                normal.sample(rng),
                normal.sample(rng),
            );
            if v.norm() > 1e-9 {
                break v.normalize();
            }
        };
        (0..n)
            .map(|_| match self {
                ShapeGeometry::Box(b) => BoxGeom {
                    center: b.center,
                    half: b.half,
                }
                .sample_surface(rng),
                ShapeGeometry::Sphere { radius } => unit_dir(rng) * *radius,
                ShapeGeometry::Cylinder {
                    radius,
                    half_height,
                } => {
                    let side_area = 2.0 * std::f64::consts::PI * radius * (2.0 * half_height);
                    let cap_area = std::f64::consts::PI * radius * radius;
                    let total = side_area + 2.0 * cap_area;
                    let pick = rng.gen_range(0.0..total);
                    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                    if pick < side_area {
                        Vec3::new(
                            radius * angle.cos(),
                            radius * angle.sin(),
                            rng.gen_range(-*half_height..*half_height),
                        )
                    } else {
                        let r = radius * rng.gen_range(0.0..1.0_f64).sqrt();
                        let z = if pick < side_area + cap_area {
                            *half_height
                        } else {
                            -*half_height
                        };
                        Vec3::new(r * angle.cos(), r * angle.sin(), z)
                    }
                }
                ShapeGeometry::Blob { base_radius, bumps } => {
                    let dir = unit_dir(rng);
                    dir * Self::blob_radius(*base_radius, bumps, &dir)
                }
                ShapeGeometry::LBracket { a, b } => {
                    let ga = BoxGeom {
                        center: a.center,
                        half: a.half,
                    };
                    let gb = BoxGeom {
                        center: b.center,
                        half: b.half,
                    };
                    let area = |h: Vec3| 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z);
                    let wa = area(a.half);
                    let wb = area(b.half);
                    // Union surface: reject samples strictly inside the
                    // other box.
                    loop {
                        let from_a = rng.gen_range(0.0..wa + wb) < wa;
                        let p = if from_a {
                            ga.sample_surface(rng)
                        } else {
                            gb.sample_surface(rng)
                        };
                        let other = if from_a { &gb } else { &ga };
                        if other.sdf(&p) > -1e-12 {
                            break p;
                        }
                    }
                }
            })
            .collect()
    }

    /// Rotational symmetries of the shape (always including the identity).
    ///
    /// Used to canonicalize training labels when the appearance channel
    /// cannot disambiguate symmetric poses. Boxes with a square cross
    /// section report the 4-fold z-rotations and the x-flip (8 elements);
    /// the cylinder's continuous symmetry is discretized.
    pub fn symmetry_rotations(&self) -> Vec<crate::geom::Mat3> {
        use crate::geom::Mat3;
        let rot_z = |angle: f64| {
            let (s, c) = angle.sin_cos();
            Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
        };
        let flip_x = Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        match self {
            ShapeGeometry::Box(b) if (b.half.x - b.half.y).abs() < 1e-12 => {
                let mut out = Vec::with_capacity(8);
                for k in 0..4 {
                    let r = rot_z(k as f64 * std::f64::consts::FRAC_PI_2);
                    out.push(r);
                    out.push(flip_x * r);
                }
                out
            }
            ShapeGeometry::Cylinder { .. } => {
                let mut out = Vec::with_capacity(48);
                for k in 0..24 {
                    let r = rot_z(k as f64 * std::f64::consts::TAU / 24.0);
                    out.push(r);
                    out.push(flip_x * r);
                }
                out
            }
            _ => vec![Mat3::identity()],
        }
    }

    /// Unsigned distance to the surface. For the blob this is the radial
    /// residual, which is exact on the surface and a faithful near-surface
    /// surrogate elsewhere.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        match self {
            ShapeGeometry::Box(b) => BoxGeom {
                center: b.center,
                half: b.half,
            }
            .sdf(p)
            .abs(),
            ShapeGeometry::Sphere { radius } => (p.norm() - radius).abs(),
            ShapeGeometry::Cylinder {
                radius,
                half_height,
            } => {
                let radial = (p.x * p.x + p.y * p.y).sqrt() - radius;
                let axial = p.z.abs() - half_height;
                let outside =
                    Vec3::new(radial.max(0.0), axial.max(0.0), 0.0).norm();
                let inside = radial.max(axial).min(0.0);
                (outside + inside).abs()
            }
            ShapeGeometry::Blob { base_radius, bumps } => {
                let norm = p.norm();
                if norm < 1e-12 {
                    return *base_radius;
                }
                let dir = p / norm;
                (norm - Self::blob_radius(*base_radius, bumps, &dir)).abs()
            }
            ShapeGeometry::LBracket { a, b } => {
                let da = BoxGeom {
                    center: a.center,
                    half: a.half,
                }
                .sdf(p);
                let db = BoxGeom {
                    center: b.center,
                    half: b.half,
                }
                .sdf(p);
                da.min(db).abs()
            }
        }
    }
}

/// A generated scene: query model (canonical frame), target observation
/// (camera frame) and the ground-truth pose mapping canonical to camera.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub spec: SceneSpec,
    pub query: PointCloud,
    pub target: PointCloud,
    pub gt: RigidTransform,
    pub normalization: NormalizationRecord,
    pub query_diameter: f64,
    /// The first `surface_count` target rows are (noisy) surface points;
    /// the rest are injected outliers.
    pub surface_count: usize,
}

impl SceneRecord {
    /// Target transformed into the query frame by the ground truth (the
    /// training-time registered target).
    pub fn target_registered(&self) -> Result<PointCloud> {
        apply_transform(&invert_transform(&self.gt), &self.target)
    }
}

const NORMAL_NEIGHBORS: usize = 16;

pub fn generate_scene(spec: &SceneSpec) -> Result<SceneRecord> {
    spec.validate()?;
    let geometry = ShapeGeometry::build(spec.shape, spec.aspect, spec.object_seed);

    // Fixed draw order keeps every stage independently seeded.
    let mut scene_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pose_seed = scene_rng.next_u64();
    let crop_seed = scene_rng.next_u64();
    let occluder_seed = scene_rng.next_u64();
    let noise_seed = scene_rng.next_u64();
    let outlier_seed = scene_rng.next_u64();

    // Query model: sampled once per object seed, PCA normals oriented
    // toward the exterior. Degenerate-normal points are dropped.
    let mut object_rng = ChaCha8Rng::seed_from_u64(spec.object_seed);
    let q_points = geometry.sample_surface(spec.query_points, &mut object_rng);
    let q_cloud = PointCloud::new(q_points)?;
    let (q_with_normals, q_valid) = estimate_normals_oriented(
        &q_cloud,
        NORMAL_NEIGHBORS.min(q_cloud.len()),
        NormalOrientation::AwayFromCentroid,
    )?;
    let query = q_with_normals.filter(&q_valid)?;
    let query_diameter = diameter(&query)?;
    let (_, normalization) = normalize_cloud(&query)?;

    // Ground-truth pose: uniform rotation, camera looking down +z.
    let mut pose_rng = ChaCha8Rng::seed_from_u64(pose_seed);
    let rotation = random_rotation(&mut pose_rng);
    let translation = Vec3::new(
        pose_rng.gen_range(-0.15..0.15),
        pose_rng.gen_range(-0.15..0.15),
        pose_rng.gen_range(0.6..1.0),
    );
    let gt = RigidTransform::new(rotation, translation)?;

    // Target: the transformed query points, cropped to the camera-facing
    // side. Exterior normals in the camera frame face the camera when
    // n . p < 0 (camera at the origin).
    let in_camera = apply_transform(&gt, &query)?;
    let cam_normals = in_camera.normals().expect("normals survive transform");
    let mut kept: Vec<Vec3> = Vec::new();
    for (p, n) in in_camera.positions().iter().zip(cam_normals) {
        if n.dot(p) < 0.0 {
            kept.push(*p);
        }
    }
    if kept.len() < 8 {
        return Err(Error::Degenerate("insufficient target".into()));
    }

    // Visibility crop: ordered sweep along a random direction.
    if spec.visibility < 1.0 {
        let mut crop_rng = ChaCha8Rng::seed_from_u64(crop_seed);
        let dir = loop {
            let v = Vec3::new(
                crop_rng.gen_range(-1.0..1.0_f64),
                crop_rng.gen_range(-1.0..1.0),
                crop_rng.gen_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 {
                break v.normalize();
            }
        };
        let keep = ((spec.visibility * kept.len() as f64).ceil() as usize).max(1);
        kept.sort_by(|a, b| a.dot(&dir).partial_cmp(&b.dot(&dir)).unwrap());
        kept.truncate(keep);
    }

    // Occluders: remove balls around randomly chosen surface points.
    let mut occ_rng = ChaCha8Rng::seed_from_u64(occluder_seed);
    for _ in 0..spec.occluder_count {
        if kept.len() < 60 {
            break;
        }
        let center = kept[occ_rng.gen_range(0..kept.len())];
        let radius = occ_rng.gen_range(0.05..0.12) * query_diameter;
        kept.retain(|p| (p - center).norm() > radius);
    }

    if kept.len() < 50 {
        return Err(Error::Degenerate("insufficient target".into()));
    }

    // Sensor noise.
    if spec.noise_sigma > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let normal = StandardNormal;
        for p in kept.iter_mut() {
            *p += Vec3::new(
                normal.sample(&mut noise_rng),
                normal.sample(&mut noise_rng),
                normal.sample(&mut noise_rng),
            ) * spec.noise_sigma;
        }
    }
    let surface_count = kept.len();

    // Gross outliers, uniform in the 1.5x inflated bounding box of the
    // target, rejection-sampled away from the surface.
    if spec.outlier_fraction > 0.0 {
        let mut out_rng = ChaCha8Rng::seed_from_u64(outlier_seed);
        let count = ((surface_count as f64 * spec.outlier_fraction)
            / (1.0 - spec.outlier_fraction))
            .round() as usize;
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &kept {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let center = (lo + hi) / 2.0;
        let half = (hi - lo) / 2.0 * 1.5;
        let gt_inv = invert_transform(&gt);
        let clearance = OUTLIER_CLEARANCE_FRACTION * query_diameter;
        for _ in 0..count {
            let mut candidate = Vec3::zeros();
            for _attempt in 0..100 {
                candidate = center
                    + Vec3::new(
                        out_rng.gen_range(-1.0..1.0) * half.x.max(1e-6),
                        out_rng.gen_range(-1.0..1.0) * half.y.max(1e-6),
                        out_rng.gen_range(-1.0..1.0) * half.z.max(1e-6),
                    );
                if geometry.surface_distance(&gt_inv.apply_point(&candidate)) > clearance {
                    break;
                }
            }
            kept.push(candidate);
        }
    }

    // Target normals: estimated in the camera frame, oriented toward the
    // camera. Degenerate neighborhoods keep their placeholder normal.
    let target_cloud = PointCloud::new(kept)?;
    let (target, _valid) = estimate_normals_oriented(
        &target_cloud,
        NORMAL_NEIGHBORS.min(target_cloud.len()),
        NormalOrientation::TowardPoint(Vec3::zeros()),
    )?;

    Ok(SceneRecord {
        spec: *spec,
        query,
        target,
        gt,
        normalization,
        query_diameter,
        surface_count,
    })
}

/// Projects the target into a depth grid (nearest-depth z-buffer) so the
/// depth-lifting path has a realistic producer.
pub fn synthesize_depth(
    record: &SceneRecord,
    intrinsics: &PinholeIntrinsics,
) -> (DepthGrid, BinaryGrid) {
    let mut depth = vec![0.0_f64; intrinsics.width * intrinsics.height];
    let mut mask = vec![false; intrinsics.width * intrinsics.height];
    for p in record.target.positions() {
        if p.z <= 0.0 {
            continue;
        }
        let u = (intrinsics.fx * p.x / p.z + intrinsics.cx).round();
        let v = (intrinsics.fy * p.y / p.z + intrinsics.cy).round();
        if u < 0.0 || v < 0.0 || u >= intrinsics.width as f64 || v >= intrinsics.height as f64 {
            continue;
        }
        let idx = v as usize * intrinsics.width + u as usize;
        if !mask[idx] || p.z < depth[idx] {
            depth[idx] = p.z;
            mask[idx] = true;
        }
    }
    (
        DepthGrid {
            width: intrinsics.width,
            height: intrinsics.height,
            data: depth,
        },
        BinaryGrid {
            width: intrinsics.width,
            height: intrinsics.height,
            data: mask,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::overlap_labels;

    fn clean_spec(shape: ShapeKind) -> SceneSpec {
        SceneSpec {
            shape,
            visibility: 1.0,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            occluder_count: 0,
            query_points: 400,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn clean_scene_lies_on_surface_and_fully_overlaps() {
        for shape in [
            ShapeKind::Cube,
            ShapeKind::Cylinder,
            ShapeKind::Sphere,
            ShapeKind::Blob,
            ShapeKind::LBracket,
        ] {
            let record = generate_scene(&clean_spec(shape)).unwrap();
            let geometry =
                ShapeGeometry::build(shape, record.spec.aspect, record.spec.object_seed);
            let registered = record.target_registered().unwrap();
            let mut mean = 0.0;
            for p in registered.positions() {
                mean += geometry.surface_distance(p);
            }
            mean /= registered.len() as f64;
            assert!(mean < 1e-9, "{shape:?}: mean surface distance {mean}");

            // T points are exact copies of query points, so overlap labels
            // on the target side are all true.
            let (_, lt) = overlap_labels(&record.query, &registered, 0.01).unwrap();
            assert!(lt.labels.iter().all(|&l| l), "{shape:?}");
        }
    }

    #[test]
    fn same_seed_reproduces_the_record() {
        let spec = SceneSpec::default();
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(a.query.positions(), b.query.positions());
        assert_eq!(a.target.positions(), b.target.positions());
        assert_eq!(a.gt, b.gt);
        assert_eq!(a.surface_count, b.surface_count);
    }

    #[test]
    fn outlier_fraction_is_respected() {
        let spec = SceneSpec {
            outlier_fraction: 0.3,
            noise_sigma: 0.0,
            occluder_count: 0,
            visibility: 1.0,
            query_points: 600,
            ..SceneSpec::default()
        };
        let record = generate_scene(&spec).unwrap();
        let geometry = ShapeGeometry::build(spec.shape, spec.aspect, spec.object_seed);
        let gt_inv = invert_transform(&record.gt);
        let clearance = 0.05 * record.query_diameter;
        let far = record
            .target
            .positions()
            .iter()
            .filter(|p| geometry.surface_distance(&gt_inv.apply_point(p)) > clearance)
            .count();
        let fraction = far as f64 / record.target.len() as f64;
        assert!(
            (fraction - 0.3).abs() < 0.02,
            "far fraction {fraction} should be 0.30 +- 0.02"
        );
    }

    #[test]
    fn visibility_controls_target_size() {
        let full = generate_scene(&clean_spec(ShapeKind::Sphere)).unwrap();
        let half = generate_scene(&SceneSpec {
            visibility: 0.5,
            ..clean_spec(ShapeKind::Sphere)
        })
        .unwrap();
        assert!(half.target.len() < full.target.len());
        let ratio = half.target.len() as f64 / full.target.len() as f64;
        assert!((ratio - 0.5).abs() < 0.05, "crop ratio {ratio}");
    }

    #[test]
    fn depth_round_trip_through_lifting() {
        let record = generate_scene(&clean_spec(ShapeKind::Cube)).unwrap();
        let intr = PinholeIntrinsics::new(525.0, 525.0, 320.0, 240.0, 640, 480).unwrap();
        let (depth, mask) = synthesize_depth(&record, &intr);
        let lifted = crate::geom::lift_depth(&depth, &intr, &mask).unwrap();
        // Every lifted point must be close to some target point (pixel
        // quantization bounds the error).
        let index = crate::geom::NeighborIndex::build(record.target.positions()).unwrap();
        let max_err = lifted
            .positions()
            .iter()
            .map(|p| index.nearest(p).1)
            .fold(0.0, f64::max);
        // One pixel at ~1 m with f = 525 is about 2 mm.
        assert!(max_err < 5e-3, "max lift error {max_err}");
    }

    #[test]
    fn insufficient_target_is_reported() {
        let spec = SceneSpec {
            visibility: 0.05,
            query_points: 100,
            ..SceneSpec::default()
        };
        let err = generate_scene(&spec).unwrap_err();
        assert!(err.to_string().contains("insufficient target"));
    }
}
