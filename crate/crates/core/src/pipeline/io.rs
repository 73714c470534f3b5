//! File formats: ASCII PLY clouds, key-value specs and metadata, pose
//! text records, depth grids, binary feature matrices, estimate JSON and
//! the CSV tables emitted by the benchmark runners.
//!
//! Every text artifact starts with a `# fmpose ... v1` header line.
//! Deterministic outputs are byte-stable for a fixed seed; wall-clock
//! timings are confined to dedicated timing files/columns.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{TexturePattern, TextureSpec};
use crate::flow::EpochStats;
use crate::geom::{
    BinaryGrid, DepthGrid, Mat3, NormalizationRecord, PinholeIntrinsics, PointCloud,
    RigidTransform, Vec3,
};
use crate::pipeline::{
    PoseEstimate, SceneRecord, SceneSpec, ShapeKind, SolverTable, SweepTable, SymmetryReport,
};

/// Exact-round-trip float formatting for geometry-bearing files.
fn fmt_exact(v: f64) -> String {
    format!("{v:.17e}")
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

struct KvReader {
    path: String,
    map: HashMap<String, (usize, String)>,
}

impl KvReader {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(char::is_whitespace).ok_or(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: "expected 'key value'".into(),
            })?;
            map.insert(key.to_string(), (i + 1, value.trim().to_string()));
        }
        Ok(Self {
            path: path.display().to_string(),
            map,
        })
    }

    fn err(&self, line: usize, message: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message,
        }
    }

    fn require(&self, key: &str) -> Result<&(usize, String)> {
        self.map
            .get(key)
            .ok_or_else(|| self.err(0, format!("missing key '{key}'")))
    }

    fn get_f64(&self, key: &str) -> Result<f64> {
        let (line, raw) = self.require(key)?;
        parse_f64(raw).ok_or_else(|| self.err(*line, format!("invalid float for '{key}'")))
    }

    fn get_u64(&self, key: &str) -> Result<u64> {
        let (line, raw) = self.require(key)?;
        raw.parse()
            .map_err(|_| self.err(*line, format!("invalid integer for '{key}'")))
    }

    fn get_usize(&self, key: &str) -> Result<usize> {
        Ok(self.get_u64(key)? as usize)
    }

    fn get_str(&self, key: &str) -> Result<&str> {
        Ok(self.require(key)?.1.as_str())
    }
}

// ---------------------------------------------------------------------------
// PLY point clouds
// ---------------------------------------------------------------------------

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = String::new();
    let has_normals = cloud.normals().is_some();
    out.push_str("ply\nformat ascii 1.0\ncomment fmpose ply v1\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if has_normals {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    out.push_str("end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.positions()[i];
        let _ = write!(out, "{} {} {}", fmt_exact(p.x), fmt_exact(p.y), fmt_exact(p.z));
        if let Some(normals) = cloud.normals() {
            let n = normals[i];
            let _ = write!(out, " {} {} {}", fmt_exact(n.x), fmt_exact(n.y), fmt_exact(n.z));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)?;
    let perr = |line: usize, message: &str| Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    };
    let mut lines = text.lines().enumerate();
    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    let mut header_end = 0usize;
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(perr(1, "not a ply file")),
    }
    for (i, line) in lines.by_ref() {
        let line = line.trim();
        if line == "end_header" {
            header_end = i + 1;
            break;
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            vertex_count =
                Some(rest.parse().map_err(|_| perr(i + 1, "invalid vertex count"))?);
        } else if let Some(rest) = line.strip_prefix("property double ") {
            properties.push(rest.to_string());
        } else if line.starts_with("format ascii") || line.starts_with("comment") {
            continue;
        } else if line.starts_with("element") || line.starts_with("property") {
            return Err(perr(i + 1, "unsupported ply element/property"));
        }
    }
    let count = vertex_count.ok_or_else(|| perr(header_end, "missing vertex element"))?;
    let has_normals = properties.iter().any(|p| p == "nx");
    let expected = if has_normals { 6 } else { 3 };

    let mut positions = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(if has_normals { count } else { 0 });
    let mut read = 0usize;
    for (i, line) in lines {
        if read == count {
            break;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .filter_map(parse_f64)
            .collect();
        if values.len() != expected {
            return Err(perr(i + 1, "bad vertex row"));
        }
        positions.push(Vec3::new(values[0], values[1], values[2]));
        if has_normals {
            normals.push(Vec3::new(values[3], values[4], values[5]));
        }
        read += 1;
    }
    if read != count {
        return Err(perr(header_end, "truncated vertex list"));
    }
    let cloud = PointCloud::new(positions)?;
    if has_normals {
        cloud.with_normals(normals)
    } else {
        Ok(cloud)
    }
}

// ---------------------------------------------------------------------------
// Rigid transforms
// ---------------------------------------------------------------------------

pub fn write_pose(transform: &RigidTransform, path: &Path) -> Result<()> {
    let mut out = String::from("# fmpose pose v1\n");
    let r = transform.rotation();
    for row in 0..3 {
        let _ = writeln!(
            out,
            "{} {} {}",
            fmt_exact(r[(row, 0)]),
            fmt_exact(r[(row, 1)]),
            fmt_exact(r[(row, 2)])
        );
    }
    let t = transform.translation();
    let _ = writeln!(out, "{} {} {}", fmt_exact(t.x), fmt_exact(t.y), fmt_exact(t.z));
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_pose(path: &Path) -> Result<RigidTransform> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().filter_map(parse_f64).collect())
        .collect();
    if rows.len() != 4 || rows.iter().any(|r| r.len() != 3) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: "pose file must hold a 3x3 rotation and a translation".into(),
        });
    }
    let rotation = Mat3::new(
        rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
        rows[2][1], rows[2][2],
    );
    RigidTransform::new(rotation, Vec3::new(rows[3][0], rows[3][1], rows[3][2]))
}

// ---------------------------------------------------------------------------
// Scene specs and scene directories
// ---------------------------------------------------------------------------

pub fn scene_spec_to_kv(spec: &SceneSpec) -> String {
    let mut out = String::from("# fmpose scene-spec v1\n");
    let _ = writeln!(out, "shape {}", spec.shape.as_str());
    let _ = writeln!(out, "aspect {}", fmt_exact(spec.aspect));
    let _ = writeln!(out, "texture_pattern {}", spec.texture.pattern.as_str());
    let _ = writeln!(out, "texture_regions {}", spec.texture.regions);
    let _ = writeln!(out, "texture_width {}", spec.texture.width);
    let _ = writeln!(out, "texture_seed {}", spec.texture.seed);
    let _ = writeln!(out, "visibility {}", fmt_exact(spec.visibility));
    let _ = writeln!(out, "noise_sigma {}", fmt_exact(spec.noise_sigma));
    let _ = writeln!(out, "outlier_fraction {}", fmt_exact(spec.outlier_fraction));
    let _ = writeln!(out, "occluder_count {}", spec.occluder_count);
    let _ = writeln!(out, "query_points {}", spec.query_points);
    let _ = writeln!(out, "object_seed {}", spec.object_seed);
    let _ = writeln!(out, "seed {}", spec.seed);
    out
}

pub fn write_scene_spec(spec: &SceneSpec, path: &Path) -> Result<()> {
    std::fs::write(path, scene_spec_to_kv(spec))?;
    Ok(())
}

pub fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let kv = KvReader::load(path)?;
    Ok(SceneSpec {
        shape: ShapeKind::parse(kv.get_str("shape")?)?,
        aspect: kv.get_f64("aspect")?,
        texture: TextureSpec {
            pattern: TexturePattern::parse(kv.get_str("texture_pattern")?)?,
            regions: kv.get_usize("texture_regions")?,
            width: kv.get_usize("texture_width")?,
            seed: kv.get_u64("texture_seed")?,
        },
        visibility: kv.get_f64("visibility")?,
        noise_sigma: kv.get_f64("noise_sigma")?,
        outlier_fraction: kv.get_f64("outlier_fraction")?,
        occluder_count: kv.get_usize("occluder_count")?,
        query_points: kv.get_usize("query_points")?,
        object_seed: kv.get_u64("object_seed")?,
        seed: kv.get_u64("seed")?,
    })
}

/// Writes a scene as a directory: meta.txt, query.ply, target.ply, pose.txt.
pub fn write_scene(record: &SceneRecord, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut meta = String::from("# fmpose scene-meta v1\n");
    meta.push_str(&scene_spec_to_kv(&record.spec));
    let _ = writeln!(meta, "surface_count {}", record.surface_count);
    let _ = writeln!(meta, "center_x {}", fmt_exact(record.normalization.center.x));
    let _ = writeln!(meta, "center_y {}", fmt_exact(record.normalization.center.y));
    let _ = writeln!(meta, "center_z {}", fmt_exact(record.normalization.center.z));
    let _ = writeln!(meta, "scale {}", fmt_exact(record.normalization.scale));
    std::fs::write(dir.join("meta.txt"), meta)?;
    write_ply(&record.query, &dir.join("query.ply"))?;
    write_ply(&record.target, &dir.join("target.ply"))?;
    write_pose(&record.gt, &dir.join("pose.txt"))?;
    Ok(())
}

pub fn read_scene(dir: &Path) -> Result<SceneRecord> {
    let meta_path = dir.join("meta.txt");
    let spec = read_scene_spec(&meta_path)?;
    let kv = KvReader::load(&meta_path)?;
    let normalization = NormalizationRecord {
        center: Vec3::new(
            kv.get_f64("center_x")?,
            kv.get_f64("center_y")?,
            kv.get_f64("center_z")?,
        ),
        scale: kv.get_f64("scale")?,
    };
    Ok(SceneRecord {
        spec,
        query: read_ply(&dir.join("query.ply"))?,
        target: read_ply(&dir.join("target.ply"))?,
        gt: read_pose(&dir.join("pose.txt"))?,
        query_diameter: normalization.scale,
        normalization,
        surface_count: kv.get_usize("surface_count")?,
    })
}

/// Scene directories under `root`, sorted by name.
pub fn list_scene_dirs(root: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("meta.txt").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no scene directories under {}",
            root.display()
        )));
    }
    Ok(dirs)
}

// ---------------------------------------------------------------------------
// Depth grids and intrinsics
// ---------------------------------------------------------------------------

pub fn write_depth_grid(grid: &DepthGrid, path: &Path) -> Result<()> {
    let mut out = String::from("# fmpose depth v1\n");
    let _ = writeln!(out, "width {}", grid.width);
    let _ = writeln!(out, "height {}", grid.height);
    for v in 0..grid.height {
        let row: Vec<String> = (0..grid.width).map(|u| fmt_exact(grid.at(u, v))).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_depth_grid(path: &Path) -> Result<DepthGrid> {
    let text = std::fs::read_to_string(path)?;
    let perr = |line: usize, message: &str| Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    };
    let mut width = None;
    let mut height = None;
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("width ") {
            width = Some(rest.parse().map_err(|_| perr(i + 1, "bad width"))?);
        } else if let Some(rest) = line.strip_prefix("height ") {
            height = Some(rest.parse().map_err(|_| perr(i + 1, "bad height"))?);
        } else {
            for tok in line.split_whitespace() {
                data.push(parse_f64(tok).ok_or_else(|| perr(i + 1, "bad depth value"))?);
            }
        }
    }
    let width = width.ok_or_else(|| perr(1, "missing width"))?;
    let height = height.ok_or_else(|| perr(1, "missing height"))?;
    DepthGrid::new(width, height, data)
}

pub fn write_intrinsics(intr: &PinholeIntrinsics, path: &Path) -> Result<()> {
    let mut out = String::from("# fmpose intrinsics v1\n");
    let _ = writeln!(out, "fx {}", fmt_exact(intr.fx));
    let _ = writeln!(out, "fy {}", fmt_exact(intr.fy));
    let _ = writeln!(out, "cx {}", fmt_exact(intr.cx));
    let _ = writeln!(out, "cy {}", fmt_exact(intr.cy));
    let _ = writeln!(out, "width {}", intr.width);
    let _ = writeln!(out, "height {}", intr.height);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_intrinsics(path: &Path) -> Result<PinholeIntrinsics> {
    let kv = KvReader::load(path)?;
    PinholeIntrinsics::new(
        kv.get_f64("fx")?,
        kv.get_f64("fy")?,
        kv.get_f64("cx")?,
        kv.get_f64("cy")?,
        kv.get_usize("width")?,
        kv.get_usize("height")?,
    )
}

/// Mask stored alongside a depth grid as 0/1 values.
pub fn write_mask(mask: &BinaryGrid, path: &Path) -> Result<()> {
    let mut out = String::from("# fmpose mask v1\n");
    let _ = writeln!(out, "width {}", mask.width);
    let _ = writeln!(out, "height {}", mask.height);
    for v in 0..mask.height {
        let row: Vec<&str> = (0..mask.width)
            .map(|u| if mask.at(u, v) { "1" } else { "0" })
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Feature matrices (text header + little-endian f64 blob)
// ---------------------------------------------------------------------------

pub fn write_feature_matrix(features: &crate::features::FeatureMatrix, path: &Path) -> Result<()> {
    let mut bytes = format!(
        "# fmpose features v1\nrows {}\ncols {}\n",
        features.rows(),
        features.width()
    )
    .into_bytes();
    for r in 0..features.rows() {
        for c in 0..features.width() {
            bytes.extend_from_slice(&features.matrix()[(r, c)].to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_feature_matrix(path: &Path) -> Result<crate::features::FeatureMatrix> {
    let bytes = std::fs::read(path)?;
    let perr = |line: usize, message: &str| Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    };
    let mut offset = 0usize;
    let mut lines = Vec::new();
    for line_no in 0..3 {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| perr(line_no + 1, "truncated header"))?;
        lines.push(
            std::str::from_utf8(&rest[..end])
                .map_err(|_| perr(line_no + 1, "non-utf8 header"))?
                .to_string(),
        );
        offset += end + 1;
    }
    if lines[0] != "# fmpose features v1" {
        return Err(perr(1, "unknown feature file version"));
    }
    let rows: usize = lines[1]
        .strip_prefix("rows ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| perr(2, "bad rows"))?;
    let cols: usize = lines[2]
        .strip_prefix("cols ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| perr(3, "bad cols"))?;
    let blob = &bytes[offset..];
    if blob.len() != rows * cols * 8 {
        return Err(perr(3, "blob size mismatch"));
    }
    let mut data = nalgebra::DMatrix::zeros(rows, cols);
    let mut it = blob.chunks_exact(8);
    for r in 0..rows {
        for c in 0..cols {
            let chunk = it.next().unwrap();
            data[(r, c)] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    crate::features::FeatureMatrix::new(data)
}

// ---------------------------------------------------------------------------
// Estimate JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformJson {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl TransformJson {
    pub fn from_transform(t: &RigidTransform) -> Self {
        let r = t.rotation();
        Self {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [t.translation().x, t.translation().y, t.translation().z],
        }
    }

    pub fn to_transform(&self) -> Result<RigidTransform> {
        let r = self.rotation;
        RigidTransform::new(
            Mat3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]),
            Vec3::new(self.translation[0], self.translation[1], self.translation[2]),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateJson {
    pub version: String,
    pub scene: String,
    pub seed: u64,
    pub steps: usize,
    pub camera_pose: TransformJson,
    pub registration: TransformJson,
    pub inlier_count: usize,
    pub residual_rms: f64,
    pub ransac_inliers: usize,
    pub icp_iterations: usize,
    pub inlier_ratio_by_tau: Vec<(f64, f64)>,
}

pub fn estimate_to_json(estimate: &PoseEstimate, scene: &str, seed: u64, steps: usize) -> EstimateJson {
    EstimateJson {
        version: "fmpose-estimate v1".into(),
        scene: scene.into(),
        seed,
        steps,
        camera_pose: TransformJson::from_transform(&estimate.camera_pose),
        registration: TransformJson::from_transform(&estimate.registration.transform),
        inlier_count: estimate.registration.inlier_count,
        residual_rms: estimate.registration.residual_rms,
        ransac_inliers: estimate.diagnostics.ransac_inliers,
        icp_iterations: estimate.diagnostics.icp_iterations,
        inlier_ratio_by_tau: estimate.diagnostics.inlier_ratio_by_tau.clone(),
    }
}

pub fn write_estimate_json(json: &EstimateJson, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(json)
        .map_err(|e| Error::InvalidArgument(format!("serialize estimate: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_estimate_json(path: &Path) -> Result<EstimateJson> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

fn fmt_metric(v: f64) -> String {
    format!("{v:.9}")
}

pub fn solver_table_csv(table: &SolverTable) -> String {
    let mut out = String::from("# fmpose ablation-solvers v1\n");
    let _ = writeln!(out, "# scenes {} contamination {}", table.scenes, table.contamination);
    out.push_str("variant,success_rate,mean_rotation_deg,mean_translation_m,mean_add\n");
    for row in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.variant.as_str(),
            fmt_metric(row.success_rate),
            fmt_metric(row.mean_rotation_deg),
            fmt_metric(row.mean_translation_m),
            fmt_metric(row.mean_add)
        );
    }
    out
}

/// Deterministic part of the sweep table (no timings).
pub fn sweep_table_csv(table: &SweepTable) -> String {
    let mut out = String::from("# fmpose ablation-steps v1\n");
    out.push_str("steps,success_rate,mean_rotation_deg,mean_translation_m\n");
    for row in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.steps,
            fmt_metric(row.success_rate),
            fmt_metric(row.mean_rotation_deg),
            fmt_metric(row.mean_translation_m)
        );
    }
    out
}

/// Wall-clock sidecar of the sweep (not reproducible byte-for-byte).
pub fn sweep_timing_csv(table: &SweepTable) -> String {
    let mut out = String::from("# fmpose ablation-steps-timing v1\n");
    out.push_str("steps,mean_seconds\n");
    for row in &table.rows {
        let _ = writeln!(out, "{},{}", row.steps, fmt_metric(row.mean_seconds));
    }
    out
}

pub fn symmetry_report_csv(report: &SymmetryReport) -> String {
    let mut out = String::from("# fmpose ablation-features v1\n");
    out.push_str(
        "texture,median_rotation_deg,success_rate,occupied_modes,mode_0,mode_90,mode_180,mode_270",
    );
    for (tau, _) in &report.conditions[0].mean_ir_by_tau {
        let _ = write!(out, ",ir_{}", tau * 100.0);
    }
    out.push('\n');
    for c in &report.conditions {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.texture.as_str(),
            fmt_metric(c.median_rotation_deg),
            fmt_metric(c.success_rate),
            c.occupied_modes,
            fmt_metric(c.mode_occupancy[0]),
            fmt_metric(c.mode_occupancy[1]),
            fmt_metric(c.mode_occupancy[2]),
            fmt_metric(c.mode_occupancy[3])
        );
        for (_, ir) in &c.mean_ir_by_tau {
            let _ = write!(out, ",{}", fmt_metric(*ir));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub scene: String,
    pub rotation_deg: f64,
    pub translation_m: f64,
    pub add: f64,
    pub add_s: f64,
}

pub fn eval_table_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("# fmpose eval v1\n");
    out.push_str("scene,rotation_deg,translation_m,add,add_s\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.scene,
            fmt_metric(row.rotation_deg),
            fmt_metric(row.translation_m),
            fmt_metric(row.add),
            fmt_metric(row.add_s)
        );
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let _ = writeln!(
            out,
            "mean,{},{},{},{}",
            fmt_metric(rows.iter().map(|r| r.rotation_deg).sum::<f64>() / n),
            fmt_metric(rows.iter().map(|r| r.translation_m).sum::<f64>() / n),
            fmt_metric(rows.iter().map(|r| r.add).sum::<f64>() / n),
            fmt_metric(rows.iter().map(|r| r.add_s).sum::<f64>() / n)
        );
    }
    out
}

/// Training log: epoch, mean loss and wall-clock seconds. The seconds
/// column is timing data and exempt from byte-stability.
pub fn train_log_csv(log: &[EpochStats]) -> String {
    let mut out = String::from("# fmpose train-log v1\n");
    out.push_str("epoch,mean_loss,seconds\n");
    for row in log {
        let _ = writeln!(
            out,
            "{},{},{}",
            row.epoch,
            fmt_metric(row.mean_loss),
            fmt_metric(row.seconds)
        );
    }
    out
}
