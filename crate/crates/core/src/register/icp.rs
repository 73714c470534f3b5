//! Point-to-point ICP with hard distance gating.

use serde::{Deserialize, Serialize};

use super::kabsch;
use crate::error::{Error, Result};
use crate::geom::{NeighborIndex, PointCloud, RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Pairs beyond this distance (meters) are discarded each iteration.
    pub distance_threshold: f64,
    /// Stop when the transform change (rotation angle + translation norm)
    /// falls below this.
    pub convergence_tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            distance_threshold: 0.01,
            convergence_tolerance: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub iterations: usize,
    pub converged: bool,
    /// Set when an iteration found no pairs within the gate; the transform
    /// is then returned unchanged from the last valid state.
    pub no_overlap: bool,
    pub matched_pairs: usize,
    pub residual_rms: f64,
}

struct Matching {
    src: Vec<Vec3>,
    dst: Vec<Vec3>,
    /// RMS over matched pairs.
    rms: f64,
    /// Gate-saturated objective: unmatched source points contribute the
    /// gate distance squared, so the measure is comparable across
    /// iterations even as the matched set grows.
    saturated: f64,
}

fn match_pairs(
    src: &[Vec3],
    index: &NeighborIndex,
    dst: &[Vec3],
    transform: &RigidTransform,
    gate: f64,
) -> Matching {
    let mut matched_src = Vec::new();
    let mut matched_dst = Vec::new();
    let mut sq_sum = 0.0;
    let mut saturated_sum = 0.0;
    for s in src {
        let moved = transform.apply_point(s);
        let (j, dist) = index.nearest(&moved);
        if dist <= gate {
            matched_src.push(*s);
            matched_dst.push(dst[j]);
            sq_sum += dist * dist;
            saturated_sum += dist * dist;
        } else {
            saturated_sum += gate * gate;
        }
    }
    let rms = if matched_src.is_empty() {
        f64::INFINITY
    } else {
        (sq_sum / matched_src.len() as f64).sqrt()
    };
    Matching {
        src: matched_src,
        dst: matched_dst,
        rms,
        saturated: (saturated_sum / src.len() as f64).sqrt(),
    }
}

/// Alternates gated nearest-neighbor matching against `dst_cloud` with an
/// absolute Kabsch refit of `src_cloud` onto the matches.
///
/// Progress is measured by the gate-saturated residual (unmatched points
/// count at the gate distance), which is non-increasing across accepted
/// iterations; an iterate that would raise it is rejected and the previous
/// transform returned.
pub fn icp_refine(
    src_cloud: &PointCloud,
    dst_cloud: &PointCloud,
    init: &RigidTransform,
    config: &IcpConfig,
) -> Result<IcpResult> {
    if src_cloud.is_empty() || dst_cloud.is_empty() {
        return Err(Error::EmptyInput("icp clouds".into()));
    }
    if config.max_iterations == 0
        || !(config.distance_threshold > 0.0)
        || !(config.convergence_tolerance > 0.0)
    {
        return Err(Error::InvalidArgument("icp configuration".into()));
    }
    let index = NeighborIndex::build(dst_cloud.positions())?;
    let src = src_cloud.positions();
    let dst = dst_cloud.positions();

    let mut current = *init;
    let mut matching = match_pairs(src, &index, dst, &current, config.distance_threshold);
    if matching.src.is_empty() {
        return Ok(IcpResult {
            transform: current,
            iterations: 0,
            converged: false,
            no_overlap: true,
            matched_pairs: 0,
            residual_rms: f64::INFINITY,
        });
    }

    let mut iterations = 0usize;
    let mut converged = false;
    while iterations < config.max_iterations {
        if matching.src.len() < 3 {
            // Too few gated pairs to solve; keep the current pose.
            break;
        }
        iterations += 1;
        let candidate = match kabsch(&matching.src, &matching.dst, None) {
            Ok(t) => t,
            // A degenerate matched set cannot improve the pose.
            Err(Error::Degenerate(_)) => break,
            Err(e) => return Err(e),
        };
        let next = match_pairs(src, &index, dst, &candidate, config.distance_threshold);
        if next.src.is_empty() {
            return Ok(IcpResult {
                transform: current,
                iterations,
                converged: false,
                no_overlap: true,
                matched_pairs: matching.src.len(),
                residual_rms: matching.rms,
            });
        }
        if next.saturated > matching.saturated + 1e-15 {
            break;
        }
        let delta = current.rotation_angle_to(&candidate)
            + (current.translation() - candidate.translation()).norm();
        current = candidate;
        matching = next;
        if delta < config.convergence_tolerance {
            converged = true;
            break;
        }
    }

    Ok(IcpResult {
        transform: current,
        iterations,
        converged,
        no_overlap: false,
        matched_pairs: matching.src.len(),
        residual_rms: matching.rms,
    })
}
