//! ARD squared-exponential kernel, kernel matrices, and the jittered
//! Cholesky factorization every model shares.
//!
//! The kernel is
//!
//! ```text
//! k(x, x') = sf2 * exp(-0.5 * sum_i (x_i - x'_i)^2 / l_i^2) + s02 * [x == x']
//! ```
//!
//! with per-dimension lengthscales `l_i`, signal variance `sf2`, and a
//! non-negative nugget `s02`. The identity indicator is applied by *index*
//! when a point set is paired with itself ([`gram`]); cross-covariances
//! between distinct sets ([`cross`]) never include it, which keeps the
//! nugget a diagonal term regardless of coordinate coincidences.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::require_finite;

/// Hyperparameters of the ARD squared-exponential kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    /// One strictly positive lengthscale per input dimension (map units).
    pub lengthscales: Vec<f64>,
    /// Latent signal variance sf2 > 0.
    pub signal_variance: f64,
    /// Additive nugget s02 >= 0 on identical inputs.
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        let p = KernelParams {
            lengthscales,
            signal_variance,
            noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    /// Isotropic helper used widely in tests.
    pub fn isotropic(dim: usize, lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        Self::new(vec![lengthscale; dim], signal_variance, noise_variance)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidParameter("kernel has no lengthscales".into()));
        }
        require_finite("kernel lengthscales", &self.lengthscales)?;
        require_finite(
            "kernel variances",
            &[self.signal_variance, self.noise_variance],
        )?;
        if self.lengthscales.iter().any(|&l| l <= 0.0) {
            return Err(Error::InvalidParameter(
                "lengthscales must be strictly positive".into(),
            ));
        }
        if self.signal_variance <= 0.0 {
            return Err(Error::InvalidParameter(
                "signal variance must be strictly positive".into(),
            ));
        }
        if self.noise_variance < 0.0 {
            return Err(Error::InvalidParameter(
                "noise variance must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Latent marginal variance at a query point (nugget excluded).
    pub fn query_variance(&self) -> f64 {
        self.signal_variance
    }
}

fn se_term(x: &[f64], y: &[f64], p: &KernelParams) -> f64 {
    let mut s = 0.0;
    for d in 0..p.dim() {
        let diff = x[d] - y[d];
        s += diff * diff / (p.lengthscales[d] * p.lengthscales[d]);
    }
    p.signal_variance * (-0.5 * s).exp()
}

/// Evaluates the kernel between two points, indicator by exact coordinate
/// equality. Model code building Grams should use [`gram`] / [`cross`].
pub fn kernel_eval(x: &[f64], y: &[f64], p: &KernelParams) -> Result<f64> {
    p.validate()?;
    if x.len() != p.dim() || y.len() != p.dim() {
        return Err(Error::DimensionMismatch(format!(
            "kernel_eval points of dims {}/{} vs kernel dim {}",
            x.len(),
            y.len(),
            p.dim()
        )));
    }
    require_finite("kernel_eval input", x)?;
    require_finite("kernel_eval input", y)?;
    let nugget = if x == y { p.noise_variance } else { 0.0 };
    Ok(se_term(x, y, p) + nugget)
}

/// Dense kernel matrix with entry (i, j) = kernel_eval(X_i, Z_j).
pub fn kernel_matrix(x: ArrayView2<f64>, z: ArrayView2<f64>, p: &KernelParams) -> Result<Array2<f64>> {
    p.validate()?;
    if x.ncols() != p.dim() || z.ncols() != p.dim() {
        return Err(Error::DimensionMismatch(format!(
            "kernel_matrix columns {}/{} vs kernel dim {}",
            x.ncols(),
            z.ncols(),
            p.dim()
        )));
    }
    let mut out = Array2::zeros((x.nrows(), z.nrows()));
    for i in 0..x.nrows() {
        for j in 0..z.nrows() {
            out[[i, j]] = kernel_eval(
                x.row(i).to_slice().expect("contiguous row"),
                z.row(j).to_slice().expect("contiguous row"),
                p,
            )?;
        }
    }
    Ok(out)
}

/// Gram matrix of a point set with itself: SE part plus the nugget on the
/// diagonal (index identity).
pub fn gram(x: ArrayView2<f64>, p: &KernelParams) -> Array2<f64> {
    let n = x.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let xi = x.row(i);
        out[[i, i]] = p.signal_variance + p.noise_variance;
        for j in 0..i {
            let v = se_term(
                xi.to_slice().expect("contiguous row"),
                x.row(j).to_slice().expect("contiguous row"),
                p,
            );
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

/// Cross-covariance between two distinct point sets: SE part only, never a
/// nugget.
pub fn cross(x: ArrayView2<f64>, z: ArrayView2<f64>, p: &KernelParams) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), z.nrows()));
    for i in 0..x.nrows() {
        for j in 0..z.nrows() {
            out[[i, j]] = se_term(
                x.row(i).to_slice().expect("contiguous row"),
                z.row(j).to_slice().expect("contiguous row"),
                p,
            );
        }
    }
    out
}

/// Cross-covariance vector between one query point and a point set.
pub fn cross_vector(x: &[f64], z: ArrayView2<f64>, p: &KernelParams) -> Array1<f64> {
    Array1::from_iter(
        (0..z.nrows()).map(|j| se_term(x, z.row(j).to_slice().expect("contiguous row"), p)),
    )
}

/// Lower-triangular Cholesky factor together with the jitter that made the
/// factorization succeed.
#[derive(Debug, Clone)]
pub struct CholFactor {
    pub l: Array2<f64>,
    pub jitter: f64,
}

impl CholFactor {
    /// Solves A x = b through the factor.
    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let y = self.solve_lower(b);
        self.solve_lower_transpose(y.view())
    }

    /// Solves L y = b.
    pub fn solve_lower(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.l.nrows();
        let mut y = b.to_owned();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[[i, k]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        y
    }

    /// Solves Lᵀ x = b.
    pub fn solve_lower_transpose(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.l.nrows();
        let mut x = b.to_owned();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[[k, i]] * x[k];
            }
            x[i] = s / self.l[[i, i]];
        }
        x
    }

    /// log det A = 2 sum_i log L_ii.
    pub fn log_det(&self) -> f64 {
        (0..self.l.nrows()).map(|i| self.l[[i, i]].ln()).sum::<f64>() * 2.0
    }

    /// Explicit inverse via n triangular solve pairs.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.l.nrows();
        let mut inv = Array2::zeros((n, n));
        let mut e = Array1::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(e.view());
            inv.column_mut(j).assign(&col);
            e[j] = 0.0;
        }
        inv
    }
}

/// Cholesky of a symmetric PSD matrix, escalating jitter through
/// `{0} ∪ {jitter_start * 10^k, k = 0..=8}` until the factorization
/// succeeds. `role` names the matrix in failure messages.
pub fn chol_psd(a: &Array2<f64>, jitter_start: f64, role: &str) -> Result<CholFactor> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{role}: cholesky of non-square {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{role} matrix entries")));
    }
    let n = a.nrows();
    let mut ladder = vec![0.0];
    for k in 0..=8 {
        ladder.push(jitter_start * 10f64.powi(k));
    }
    'ladder: for &jitter in &ladder {
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[[i, j]];
                if i == j {
                    s += jitter;
                }
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        continue 'ladder;
                    }
                    l[[i, j]] = s.sqrt();
                } else {
                    l[[i, j]] = s / l[[j, j]];
                }
            }
        }
        return Ok(CholFactor { l, jitter });
    }
    Err(Error::SingularMatrix {
        role: role.to_string(),
        max_jitter: jitter_start * 1e8,
    })
}
