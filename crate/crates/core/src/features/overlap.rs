//! Overlap labels from nearest-neighbor distances and the small
//! overlap classifier trained with binary cross-entropy.

use nalgebra::{DMatrix, DVector};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::geom::{diameter, NeighborIndex, PointCloud};

/// Per-point binary overlap indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapLabels {
    pub labels: Vec<bool>,
}

impl OverlapLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Labels a point as overlapping iff its nearest neighbor in the other
/// cloud lies strictly within `eps_fraction * diameter(query)`.
///
/// `target_registered` must already be in the query frame.
pub fn overlap_labels(
    query: &PointCloud,
    target_registered: &PointCloud,
    eps_fraction: f64,
) -> Result<(OverlapLabels, OverlapLabels)> {
    if query.is_empty() || target_registered.is_empty() {
        return Err(Error::EmptyInput("overlap labeling".into()));
    }
    if !(eps_fraction > 0.0 && eps_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eps fraction must lie in (0, 1), got {eps_fraction}"
        )));
    }
    let eps = eps_fraction * diameter(query)?;
    let target_index = NeighborIndex::build(target_registered.positions())?;
    let query_index = NeighborIndex::build(query.positions())?;

    let query_labels = query
        .positions()
        .iter()
        .map(|p| target_index.nearest(p).1 < eps)
        .collect();
    let target_labels = target_registered
        .positions()
        .iter()
        .map(|p| query_index.nearest(p).1 < eps)
        .collect();
    Ok((
        OverlapLabels {
            labels: query_labels,
        },
        OverlapLabels {
            labels: target_labels,
        },
    ))
}

/// Linear map from descriptor rows to two class logits, with the input
/// standardization recorded at training time.
#[derive(Debug, Clone)]
pub struct OverlapClassifier {
    input_mean: DVector<f64>,
    input_std: DVector<f64>,
    weights: DMatrix<f64>, // 2 x d
    bias: DVector<f64>,    // 2
}

impl OverlapClassifier {
    /// Two logits (non-overlap, overlap) per row.
    pub fn logits(&self, features: &FeatureMatrix) -> Result<DMatrix<f64>> {
        if features.width() != self.weights.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "classifier expects width {}, got {}",
                self.weights.ncols(),
                features.width()
            )));
        }
        let n = features.rows();
        let mut out = DMatrix::zeros(n, 2);
        for r in 0..n {
            for class in 0..2 {
                let mut acc = self.bias[class];
                for c in 0..features.width() {
                    let x = (features.matrix()[(r, c)] - self.input_mean[c]) / self.input_std[c];
                    acc += self.weights[(class, c)] * x;
                }
                out[(r, class)] = acc;
            }
        }
        Ok(out)
    }

    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<bool>> {
        let logits = self.logits(features)?;
        Ok((0..features.rows())
            .map(|r| logits[(r, 1)] > logits[(r, 0)])
            .collect())
    }

    pub fn accuracy(&self, features: &FeatureMatrix, labels: &OverlapLabels) -> Result<f64> {
        if labels.len() != features.rows() {
            return Err(Error::ShapeMismatch("classifier accuracy inputs".into()));
        }
        let pred = self.predict(features)?;
        let hits = pred
            .iter()
            .zip(&labels.labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.5,
        }
    }
}

/// Trained classifier plus the per-epoch mean BCE losses.
#[derive(Debug, Clone)]
pub struct ClassifierFit {
    pub classifier: OverlapClassifier,
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent on mean binary cross-entropy between the
/// two-logit softmax and the overlap labels. Deterministic (zero init).
pub fn train_overlap_classifier(
    descriptors: &FeatureMatrix,
    labels: &OverlapLabels,
    config: &ClassifierConfig,
) -> Result<ClassifierFit> {
    let n = descriptors.rows();
    let d = descriptors.width();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} descriptor rows",
            labels.len(),
            n
        )));
    }
    let positives = labels.positive_count();
    if positives == 0 || positives == n {
        return Err(Error::Degenerate("degenerate labels".into()));
    }
    if config.epochs == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("classifier hyperparameters".into()));
    }

    // Standardize inputs; constant columns get unit scale.
    let mut mean = DVector::zeros(d);
    let mut std = DVector::from_element(d, 1.0);
    for c in 0..d {
        let col_mean = descriptors.matrix().column(c).sum() / n as f64;
        let var = descriptors
            .matrix()
            .column(c)
            .iter()
            .map(|v| (v - col_mean).powi(2))
            .sum::<f64>()
            / n as f64;
        mean[c] = col_mean;
        if var > 1e-12 {
            std[c] = var.sqrt();
        }
    }
    let mut x = DMatrix::zeros(n, d);
    for r in 0..n {
        for c in 0..d {
            x[(r, c)] = (descriptors.matrix()[(r, c)] - mean[c]) / std[c];
        }
    }

    let mut weights = DMatrix::zeros(2, d);
    let mut bias = DVector::zeros(2);
    let mut losses = Vec::with_capacity(config.epochs + 1);
    for _ in 0..=config.epochs {
        // Forward: logits, softmax, mean BCE.
        let mut loss = 0.0;
        let mut grad_w = DMatrix::zeros(2, d);
        let mut grad_b = DVector::zeros(2);
        for r in 0..n {
            let mut z0: f64 = bias[0];
            let mut z1: f64 = bias[1];
            for c in 0..d {
                z0 += weights[(0, c)] * x[(r, c)];
                z1 += weights[(1, c)] * x[(r, c)];
            }
            let m = z0.max(z1);
            let e0 = (z0 - m).exp();
            let e1 = (z1 - m).exp();
            let denom = e0 + e1;
            let p1: f64 = e1 / denom;
            let y = if labels.labels[r] { 1.0 } else { 0.0 };
            loss -= y * p1.max(1e-300).ln() + (1.0 - y) * (1.0_f64 - p1).max(1e-300).ln();
            let d1 = (p1 - y) / n as f64;
            let d0 = -d1;
            grad_b[0] += d0;
            grad_b[1] += d1;
            for c in 0..d {
                grad_w[(0, c)] += d0 * x[(r, c)];
                grad_w[(1, c)] += d1 * x[(r, c)];
            }
        }
        losses.push(loss / n as f64);
        weights -= &grad_w * config.learning_rate;
        bias -= &grad_b * config.learning_rate;
        if !losses.last().unwrap().is_finite() {
            return Err(Error::NonFinite("classifier loss".into()));
        }
    }

    Ok(ClassifierFit {
        classifier: OverlapClassifier {
            input_mean: mean,
            input_std: std,
            weights,
            bias,
        },
        losses,
    })
}
