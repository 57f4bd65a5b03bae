//! Fréchet distance between Gaussian fits of two embedding sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{MetricsError, Result};

/// Eigenvalues above `-EIG_TOLERANCE` are clipped to zero.
pub const EIG_TOLERANCE: f64 = 1e-6;
/// Diagonal loading applied when a covariance is numerically indefinite.
pub const REGULARIZATION: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    /// Mean and unbiased covariance of the rows of `samples` (n × d), n ≥ 2.
    pub fn fit(samples: &DMatrix<f64>) -> Result<Self> {
        let n = samples.nrows();
        if n < 2 {
            return Err(MetricsError::InvalidArgument(format!("need at least 2 samples, got {n}")));
        }
        let mean = samples.row_mean().transpose();
        let mut centered = samples.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        Ok(Self { mean, cov })
    }
}

fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
}

/// Clipped non-negative eigenvalues, or `None` if any is below tolerance.
fn clip(values: &DVector<f64>) -> Option<DVector<f64>> {
    if values.iter().any(|&v| v < -EIG_TOLERANCE || !v.is_finite()) {
        return None;
    }
    Some(values.map(|v| v.max(0.0)))
}

/// `tr((A B)^{1/2})` for symmetric PSD `A`, `B` via `(A^{1/2} B A^{1/2})^{1/2}`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<f64> {
    let ea = sym_eigen(a);
    let la = clip(&ea.eigenvalues)?;
    let root = &ea.eigenvectors * DMatrix::from_diagonal(&la.map(f64::sqrt)) * ea.eigenvectors.transpose();
    let m = &root * b * &root;
    let lm = clip(&sym_eigen(&m).eigenvalues)?;
    Some(lm.iter().map(|v| v.sqrt()).sum())
}

/// `‖μ_a−μ_b‖² + tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`.
pub fn frechet_distance(a: &Gaussian, b: &Gaussian) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(MetricsError::Shape(format!(
            "embedding dims {} vs {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let tr = a.cov.trace() + b.cov.trace();
    if let Some(t) = trace_sqrt_product(&a.cov, &b.cov) {
        return Ok((diff + tr - 2.0 * t).max(0.0));
    }
    let eye = DMatrix::<f64>::identity(a.cov.nrows(), a.cov.ncols()) * REGULARIZATION;
    let (ra, rb) = (&a.cov + &eye, &b.cov + &eye);
    let t = trace_sqrt_product(&ra, &rb)
        .ok_or_else(|| MetricsError::InvalidArgument("covariance is not positive semi-definite".into()))?;
    Ok((diff + tr - 2.0 * t).max(0.0))
}

/// FID between two embedding sets (rows are samples).
pub fn fid(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    frechet_distance(&Gaussian::fit(a)?, &Gaussian::fit(b)?)
}

/// Stacks row vectors into an n × d matrix.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != d) {
        return Err(MetricsError::Shape("embeddings have different lengths".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}
