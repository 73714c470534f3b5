//! Scratch experiment (temporary): quality of descriptor-space matching
//! between the cropped noisy target and the query model.

use fmpose::features::{
    geometric_descriptors, rigid_invariant_columns, DESCRIPTOR_BASE_WIDTH,
};
use fmpose::geom::{estimate_normals_oriented, invert_transform, NormalOrientation, PointCloud, Vec3};
use fmpose::pipeline::{generate_scene, SceneSpec, ShapeKind};

#[test]
#[ignore]
fn scratch_match_quality() {
    let shape = match std::env::var("SCRATCH_SHAPE").as_deref() {
        Ok("cube") => ShapeKind::Cube,
        _ => ShapeKind::Blob,
    };
    let spec = SceneSpec {
        shape,
        aspect: if shape == ShapeKind::Cube { 1.6 } else { 1.0 },
        seed: 1234,
        ..SceneSpec::default()
    };
    let record = generate_scene(&spec).unwrap();
    let k = 16;

    // Query descriptor bank from synthetic half-space crops of the model,
    // so the matching statistics see the same truncation as real targets.
    let (qn, _) = fmpose::geom::normalize_cloud(&record.query).unwrap();
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let mut bank_rows: Vec<Vec<f64>> = Vec::new();
    let mut bank_coords: Vec<Vec3> = Vec::new();
    for _ in 0..12 {
        let dir = loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0_f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 { break v.normalize(); }
        };
        let visibility: f64 = rng.gen_range(0.35..0.75);
        let mut order: Vec<usize> = (0..qn.len()).collect();
        order.sort_by(|&a, &b| {
            qn.positions()[a].dot(&dir).partial_cmp(&qn.positions()[b].dot(&dir)).unwrap()
        });
        let keep = ((visibility * qn.len() as f64).ceil() as usize).max(40);
        let kept: Vec<Vec3> = order[..keep].iter().map(|&i| qn.positions()[i]).collect();
        let crop = PointCloud::new(kept.clone()).unwrap();
        let (crop, _) = estimate_normals_oriented(
            &crop, k.min(crop.len()), NormalOrientation::AwayFromCentroid).unwrap();
        let desc = geometric_descriptors(&crop, k.min(crop.len()), DESCRIPTOR_BASE_WIDTH).unwrap();
        for r in 0..desc.rows() {
            bank_rows.push(desc.row(r));
            bank_coords.push(kept[r]);
        }
    }
    let q_desc = fmpose::features::FeatureMatrix::from_rows(&bank_rows).unwrap();

    // Target descriptors on the centered/scaled observed cloud.
    let centroid = record.target.centroid();
    let obs: Vec<Vec3> = record
        .target
        .positions()
        .iter()
        .map(|p| (p - centroid) / record.query_diameter)
        .collect();
    let obs_cloud = PointCloud::new(obs).unwrap();
    let (obs_cloud, _) =
        estimate_normals_oriented(&obs_cloud, k, NormalOrientation::TowardPoint(Vec3::zeros()))
            .unwrap();
    let t_desc = geometric_descriptors(&obs_cloud, k, DESCRIPTOR_BASE_WIDTH).unwrap();

    // Standardize by query stats; match on invariant columns.
    let invariant = rigid_invariant_columns(DESCRIPTOR_BASE_WIDTH);
    let nq = q_desc.rows() as f64;
    let mut std = vec![1.0; DESCRIPTOR_BASE_WIDTH];
    for c in 0..DESCRIPTOR_BASE_WIDTH {
        let mean = q_desc.matrix().column(c).sum() / nq;
        let var = q_desc
            .matrix()
            .column(c)
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / nq;
        if var > 1e-12 {
            std[c] = var.sqrt();
        }
    }

    let gt_inv = invert_transform(&record.gt);
    let (qnn, _) = fmpose::geom::normalize_cloud(&record.query).unwrap();
    let mut errs = Vec::new();
    for r in 0..record.surface_count {
        let mut best = (f64::INFINITY, 0usize);
        for q in 0..q_desc.rows() {
            let mut d2 = 0.0;
            for c in 0..DESCRIPTOR_BASE_WIDTH {
                if invariant[c] {
                    let diff = (t_desc.matrix()[(r, c)] - q_desc.matrix()[(q, c)]) / std[c];
                    d2 += diff * diff;
                }
            }
            if d2 < best.0 {
                best = (d2, q);
            }
        }
        let true_canonical = gt_inv.apply_point(&record.target.positions()[r]);
        let true_norm = (true_canonical - record.normalization.center) / record.query_diameter;
        let matched = bank_coords[best.1];
        let _ = &qnn;
        errs.push((matched - true_norm).norm());
    }
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "match error (units of diameter): median {:.3}  p25 {:.3}  p75 {:.3}  n {}",
        errs[errs.len() / 2],
        errs[errs.len() / 4],
        errs[3 * errs.len() / 4],
        errs.len()
    );
}
