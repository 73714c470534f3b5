//! Per-point feature production: geometric descriptors, synthetic semantic
//! features, overlap labels and classifier, PCA reduction, fusion and
//! positional encoding.

mod descriptors;
mod encoding;
mod overlap;
mod pca;
mod semantic;

pub use descriptors::{geometric_descriptors, rigid_invariant_columns, DESCRIPTOR_BASE_WIDTH};
pub use encoding::{encode_scalar, positional_encoding, positional_encoding_rows, EncodingConfig};
pub use overlap::{
    overlap_labels, train_overlap_classifier, ClassifierConfig, ClassifierFit, OverlapClassifier,
    OverlapLabels,
};
pub use pca::{pca_fit, pca_project, PcaBasis};
pub use semantic::{semantic_features_synthetic, Texture, TexturePattern, TextureSpec};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An N x d matrix of per-point feature rows. All entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature matrix entry".into()));
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("feature matrix with no rows".into()));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::ShapeMismatch("ragged feature rows".into()));
        }
        let data = DMatrix::from_fn(rows.len(), width, |r, c| rows[r][c]);
        Self::new(data)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Vertically stacks two matrices of equal width.
    pub fn vstack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.width() != other.width() {
            return Err(Error::ShapeMismatch(format!(
                "vstack widths {} vs {}",
                self.width(),
                other.width()
            )));
        }
        let mut data = DMatrix::zeros(self.rows() + other.rows(), self.width());
        data.view_mut((0, 0), (self.rows(), self.width()))
            .copy_from(&self.data);
        data.view_mut((self.rows(), 0), (other.rows(), other.width()))
            .copy_from(&other.data);
        FeatureMatrix::new(data)
    }
}

/// Result of [`fuse_features`]: unit-norm fused rows plus flags marking
/// rows where both operands were degenerate (left as zero rows).
#[derive(Debug, Clone)]
pub struct FusedFeatures {
    pub features: FeatureMatrix,
    pub degenerate: Vec<bool>,
}

const ZERO_ROW_TOL: f64 = 1e-12;

/// Row-wise fusion `norm(norm(O) + norm(S))`.
///
/// A zero-norm row in one operand falls back to the other operand's
/// normalized row; if both are zero the output row is zero and flagged.
pub fn fuse_features(o: &FeatureMatrix, s: &FeatureMatrix) -> Result<FusedFeatures> {
    if o.rows() != s.rows() || o.width() != s.width() {
        return Err(Error::ShapeMismatch(format!(
            "fuse operands {}x{} vs {}x{}",
            o.rows(),
            o.width(),
            s.rows(),
            s.width()
        )));
    }
    let mut data = DMatrix::zeros(o.rows(), o.width());
    let mut degenerate = vec![false; o.rows()];
    for r in 0..o.rows() {
        let orow = o.matrix().row(r);
        let srow = s.matrix().row(r);
        let onorm = orow.norm();
        let snorm = srow.norm();
        let sum: nalgebra::RowDVector<f64> = match (onorm > ZERO_ROW_TOL, snorm > ZERO_ROW_TOL) {
            (true, true) => orow / onorm + srow / snorm,
            (true, false) => (orow / onorm).into_owned(),
            (false, true) => (srow / snorm).into_owned(),
            (false, false) => {
                degenerate[r] = true;
                continue;
            }
        };
        let norm = sum.norm();
        if norm > ZERO_ROW_TOL {
            data.row_mut(r).copy_from(&(sum / norm));
        } else {
            // Exact cancellation of the two unit rows.
            degenerate[r] = true;
        }
    }
    Ok(FusedFeatures {
        features: FeatureMatrix::new(data)?,
        degenerate,
    })
}

/// Per-point conditioning rows `C = [F | P]` feeding the velocity model.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningMatrix {
    data: DMatrix<f64>,
    feature_width: usize,
}

impl ConditioningMatrix {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }
}

/// Row-wise concatenation of fused features and positional encodings.
pub fn build_conditioning(
    features: &FeatureMatrix,
    positional: &FeatureMatrix,
) -> Result<ConditioningMatrix> {
    if features.rows() != positional.rows() {
        return Err(Error::ShapeMismatch(format!(
            "conditioning row counts {} vs {}",
            features.rows(),
            positional.rows()
        )));
    }
    let n = features.rows();
    let fw = features.width();
    let pw = positional.width();
    let mut data = DMatrix::zeros(n, fw + pw);
    data.view_mut((0, 0), (n, fw)).copy_from(features.matrix());
    data.view_mut((0, fw), (n, pw))
        .copy_from(positional.matrix());
    Ok(ConditioningMatrix {
        data,
        feature_width: fw,
    })
}
