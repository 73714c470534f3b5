//! Depth grids and pinhole lifting.

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};

/// Row-major grid of depths in meters; 0 marks an invalid measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthGrid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "depth grid {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }
}

/// Row-major boolean mask with the same layout as [`DepthGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryGrid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch("mask grid size".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn at(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }
}

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidArgument(
                "focal lengths must be positive".into(),
            ));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidArgument(
                "principal point outside image".into(),
            ));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }
}

/// Lifts masked valid depth pixels into a camera-frame point cloud:
/// pixel (u, v) with depth d maps to (d (u - cx) / fx, d (v - cy) / fy, d).
pub fn lift_depth(
    depth: &DepthGrid,
    intrinsics: &PinholeIntrinsics,
    mask: &BinaryGrid,
) -> Result<PointCloud> {
    if depth.width != intrinsics.width || depth.height != intrinsics.height {
        return Err(Error::ShapeMismatch(
            "depth grid does not match intrinsics".into(),
        ));
    }
    if mask.width != depth.width || mask.height != depth.height {
        return Err(Error::ShapeMismatch("mask does not match depth grid".into()));
    }
    let mut points = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            if !mask.at(u, v) {
                continue;
            }
            let d = depth.at(u, v);
            if d <= 0.0 {
                continue;
            }
            points.push(Vec3::new(
                d * (u as f64 - intrinsics.cx) / intrinsics.fx,
                d * (v as f64 - intrinsics.cy) / intrinsics.fy,
                d,
            ));
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyInput("empty target".into()));
    }
    PointCloud::new(points)
}
