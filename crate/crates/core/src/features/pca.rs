//! Mean-centered PCA fit on query features and projection of both clouds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::FeatureMatrix;
use crate::error::{Error, Result};

const NEGLIGIBLE_VARIANCE: f64 = 1e-12;

/// Orthonormal principal directions (rows) with the training mean and the
/// per-component sample variances.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    mean: DVector<f64>,
    components: DMatrix<f64>, // F x d, orthonormal rows
    eigenvalues: Vec<f64>,    // sample variances, decreasing
}

impl PcaBasis {
    pub fn input_width(&self) -> usize {
        self.components.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.components.nrows()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Maps projected rows back to the input space: `rows * components + mean`.
    pub fn reconstruct(&self, projected: &FeatureMatrix) -> Result<FeatureMatrix> {
        if projected.width() != self.output_width() {
            return Err(Error::ShapeMismatch("reconstruct width".into()));
        }
        let mut out = projected.matrix() * &self.components;
        for r in 0..out.nrows() {
            for c in 0..out.ncols() {
                out[(r, c)] += self.mean[c];
            }
        }
        FeatureMatrix::new(out)
    }
}

/// Fits a PCA basis of `target_width` components on the given features.
///
/// Components are ordered by decreasing explained variance. Directions with
/// negligible variance (data rank below `target_width`) are completed with a
/// deterministic orthonormal complement so the basis always has exactly
/// `target_width` orthonormal rows.
pub fn pca_fit(features: &FeatureMatrix, target_width: usize) -> Result<PcaBasis> {
    let n = features.rows();
    let d = features.width();
    if target_width == 0 {
        return Err(Error::InvalidArgument("PCA width is 0".into()));
    }
    if n <= target_width {
        return Err(Error::InvalidArgument(format!(
            "PCA needs more rows ({n}) than components ({target_width})"
        )));
    }
    if target_width > d.min(n - 1) {
        return Err(Error::InvalidArgument(format!(
            "PCA width {target_width} exceeds min(N-1, d) = {}",
            d.min(n - 1)
        )));
    }

    let mut mean = DVector::zeros(d);
    for c in 0..d {
        mean[c] = features.matrix().column(c).sum() / n as f64;
    }
    let mut centered = features.matrix().clone();
    for r in 0..n {
        for c in 0..d {
            centered[(r, c)] -= mean[c];
        }
    }

    // Eigendecompose the smaller of the scatter (d x d) or Gram (n x n)
    // matrix; both yield the same principal directions.
    let mut pairs: Vec<(f64, DVector<f64>)> = Vec::new();
    if d <= n {
        let scatter = centered.transpose() * &centered;
        let eigen = SymmetricEigen::new(scatter);
        for i in 0..d {
            pairs.push((eigen.eigenvalues[i].max(0.0), eigen.eigenvectors.column(i).into_owned()));
        }
    } else {
        let gram = &centered * centered.transpose();
        let eigen = SymmetricEigen::new(gram);
        for i in 0..n {
            let lam = eigen.eigenvalues[i].max(0.0);
            if lam > NEGLIGIBLE_VARIANCE {
                let dir = centered.transpose() * eigen.eigenvectors.column(i);
                pairs.push((lam, dir / lam.sqrt()));
            } else {
                pairs.push((0.0, DVector::zeros(d)));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut components = DMatrix::zeros(target_width, d);
    let mut eigenvalues = Vec::with_capacity(target_width);
    let mut filled = 0usize;
    for (lam, dir) in pairs.into_iter().take(target_width) {
        if lam > NEGLIGIBLE_VARIANCE && dir.norm() > 0.5 {
            let mut v = dir.normalize();
            // Deterministic sign: largest-magnitude entry positive.
            let lead = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if v[lead] < 0.0 {
                v = -v;
            }
            components.row_mut(filled).copy_from(&v.transpose());
            eigenvalues.push(lam / (n as f64 - 1.0));
            filled += 1;
        }
    }
    // Rank-deficient data: complete with canonical directions orthogonal to
    // everything found so far.
    let mut candidate = 0usize;
    while filled < target_width && candidate < d {
        let mut v = DVector::zeros(d);
        v[candidate] = 1.0;
        for r in 0..filled {
            let row = components.row(r).transpose();
            let proj = v.dot(&row);
            v -= row * proj;
        }
        if v.norm() > 1e-6 {
            components.row_mut(filled).copy_from(&v.normalize().transpose());
            eigenvalues.push(0.0);
            filled += 1;
        }
        candidate += 1;
    }
    if filled < target_width {
        return Err(Error::Degenerate(
            "could not complete an orthonormal PCA basis".into(),
        ));
    }

    Ok(PcaBasis {
        mean,
        components,
        eigenvalues,
    })
}

/// Projects rows onto the basis: `(row - mean) . components^T`.
pub fn pca_project(basis: &PcaBasis, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    if features.width() != basis.input_width() {
        return Err(Error::ShapeMismatch(format!(
            "projection width {} vs basis {}",
            features.width(),
            basis.input_width()
        )));
    }
    let n = features.rows();
    let mut centered = features.matrix().clone();
    for r in 0..n {
        for c in 0..features.width() {
            centered[(r, c)] -= basis.mean[c];
        }
    }
    FeatureMatrix::new(centered * basis.components.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        FeatureMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn line_data_recovers_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dir = [0.6, 0.0, 0.8, 0.0];
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let t: f64 = rng.gen_range(-2.0..2.0);
                dir.iter().map(|v| v * t).collect()
            })
            .collect();
        let features = FeatureMatrix::from_rows(&rows).unwrap();
        let basis = pca_fit(&features, 1).unwrap();
        let c = basis.components().row(0);
        let dot: f64 = c.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!(dot.abs() > 1.0 - 1e-6, "component not aligned: dot = {dot}");
    }

    #[test]
    fn isotropic_data_has_flat_spectrum() {
        let features = gaussian_features(10_000, 4, 2);
        let basis = pca_fit(&features, 4).unwrap();
        let eig = basis.eigenvalues();
        let ratio = eig[0] / eig[3];
        assert!(ratio < 1.3, "max/min variance ratio {ratio}");
    }

    #[test]
    fn full_width_projection_reconstructs() {
        let features = gaussian_features(50, 6, 3);
        let basis = pca_fit(&features, 6).unwrap();
        let projected = pca_project(&basis, &features).unwrap();
        let restored = basis.reconstruct(&projected).unwrap();
        for r in 0..features.rows() {
            for c in 0..features.width() {
                assert!(
                    (features.matrix()[(r, c)] - restored.matrix()[(r, c)]).abs() < 1e-6,
                    "entry ({r},{c})"
                );
            }
        }
    }

    #[test]
    fn basis_rows_are_orthonormal_even_for_low_rank_data() {
        // Rank-2 data embedded in 10 dims, asking for 5 components.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0);
                (0..10).map(|c| a * (c as f64) + b * ((c * c) as f64)).collect()
            })
            .collect();
        let features = FeatureMatrix::from_rows(&rows).unwrap();
        let basis = pca_fit(&features, 5).unwrap();
        let gram = basis.components() * basis.components().transpose();
        for r in 0..5 {
            for c in 0..5 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((gram[(r, c)] - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_variances_match_eigenvalues_and_decorrelate() {
        let features = gaussian_features(300, 8, 5);
        let basis = pca_fit(&features, 4).unwrap();
        let projected = pca_project(&basis, &features).unwrap();
        let n = projected.rows() as f64;
        // Projections of the fitting set are centered by construction.
        for c in 0..4 {
            let var: f64 = projected
                .matrix()
                .column(c)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                / (n - 1.0);
            assert!(
                (var - basis.eigenvalues()[c]).abs() < 1e-6 * basis.eigenvalues()[0].max(1.0),
                "component {c}: {var} vs {}",
                basis.eigenvalues()[c]
            );
        }
        for a in 0..4 {
            for b in (a + 1)..4 {
                let cov: f64 = projected
                    .matrix()
                    .column(a)
                    .iter()
                    .zip(projected.matrix().column(b).iter())
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    / (n - 1.0);
                assert!(cov.abs() < 1e-6 * basis.eigenvalues()[0]);
            }
        }
    }

    #[test]
    fn mean_row_projects_to_zero() {
        let features = gaussian_features(60, 5, 6);
        let basis = pca_fit(&features, 3).unwrap();
        let mean_row =
            FeatureMatrix::from_rows(&[basis.mean().iter().copied().collect::<Vec<_>>()]).unwrap();
        let projected = pca_project(&basis, &mean_row).unwrap();
        for v in projected.row(0) {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn dual_path_matches_direct_path() {
        // n < d triggers the Gram branch; check its variances are still
        // consistent with the stored eigenvalues.
        let features = gaussian_features(20, 35, 7);
        let basis = pca_fit(&features, 10).unwrap();
        let projected = pca_project(&basis, &features).unwrap();
        let n = projected.rows() as f64;
        for c in 0..10 {
            let var: f64 = projected
                .matrix()
                .column(c)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                / (n - 1.0);
            assert!((var - basis.eigenvalues()[c]).abs() < 1e-8 * basis.eigenvalues()[0].max(1.0));
        }
    }

    #[test]
    fn width_preconditions() {
        let features = gaussian_features(10, 4, 8);
        assert!(pca_fit(&features, 10).is_err());
        assert!(pca_fit(&features, 5).is_err());
        let basis = pca_fit(&features, 2).unwrap();
        let wrong = gaussian_features(5, 3, 9);
        assert!(pca_project(&basis, &wrong).is_err());
    }
}
