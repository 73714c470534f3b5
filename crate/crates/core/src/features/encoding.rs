//! Sinusoidal positional encoding with logarithmically spaced frequencies.

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Encoding layout: per attribute `a`, the block
/// `[a, sin(2^0 pi a), cos(2^0 pi a), ..., sin(2^(L-1) pi a), cos(2^(L-1) pi a)]`,
/// concatenated over all attributes.
///
/// With the defaults (10 attributes, L = 10) the output width is
/// 10 * (2 * 10 + 1) = 210.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingConfig {
    /// Frequencies per attribute (L).
    pub frequencies: usize,
    /// Number of encoded attributes.
    pub attributes: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            frequencies: 10,
            attributes: 10,
        }
    }
}

impl EncodingConfig {
    pub fn output_width(&self) -> usize {
        self.attributes * (2 * self.frequencies + 1)
    }
}

/// Encodes one scalar into its `2L + 1`-wide block (identity + sin/cos pairs).
pub fn encode_scalar(a: f64, frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * frequencies + 1);
    out.push(a);
    for level in 0..frequencies {
        let arg = (1u64 << level) as f64 * std::f64::consts::PI * a;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

/// Encodes a full attribute vector; errors if the length does not match the
/// configuration or any attribute is non-finite.
pub fn positional_encoding(attrs: &[f64], config: &EncodingConfig) -> Result<Vec<f64>> {
    if attrs.len() != config.attributes {
        return Err(Error::ShapeMismatch(format!(
            "expected {} attributes, got {}",
            config.attributes,
            attrs.len()
        )));
    }
    if !attrs.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("encoding attribute".into()));
    }
    let mut out = Vec::with_capacity(config.output_width());
    for &a in attrs {
        out.extend(encode_scalar(a, config.frequencies));
    }
    Ok(out)
}

/// Encodes one attribute row per point into a feature matrix.
pub fn positional_encoding_rows(
    attr_rows: &[Vec<f64>],
    config: &EncodingConfig,
) -> Result<FeatureMatrix> {
    let encoded: Result<Vec<Vec<f64>>> = attr_rows
        .iter()
        .map(|row| positional_encoding(row, config))
        .collect();
    FeatureMatrix::from_rows(&encoded?)
}
