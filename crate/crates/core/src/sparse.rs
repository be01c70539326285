//! Sparse predictive machinery shared by the variational regression and
//! classification models: inducing-point Grams, per-point latent moments,
//! and the Gaussian KL term, all generic over the tape scalar so the same
//! code serves plain evaluation and gradient computation.
//!
//! A context holds, for fixed parameters,
//!
//! ```text
//! Lk Lkᵀ = K_ZZ + s02 I (+ jitter)      c = Lk⁻¹ mu_s      A = Lk⁻¹ L_s
//! ```
//!
//! and per query x with u = Lk⁻¹ k(x, Z):
//!
//! ```text
//! mu(x)  = uᵀ c
//! var(x) = sf2 - uᵀu + ||Aᵀ u||²
//! ```
//!
//! which is the sparse posterior mean/variance pair with variational
//! covariance L_s L_sᵀ.

use crate::error::{Error, Result};
use crate::optim::gh::GhRule;
use crate::optim::softplus_inverse;
use crate::optim::tape::{cholesky_jitter, dot, solve_lower, Mat, Real};
use crate::INPUT_DIM;

pub(crate) const KZZ_JITTER_START: f64 = 1e-8;
/// Variance floor inside training objectives; keeps sqrt differentiable.
pub(crate) const TRAIN_VAR_FLOOR: f64 = 1e-12;
/// Negative-variance guard for prediction paths.
pub(crate) const VAR_CLAMP_TOL: f64 = 1e-10;

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Kernel hyperparameters in natural space, ready for evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Hypers<R> {
    pub inv_ls2: Vec<R>,
    pub sf2: R,
    pub s02: R,
}

impl<R: Real> Hypers<R> {
    /// From unconstrained log-space parameters `[log l_1..log l_d, log sf2, log s02]`.
    pub fn from_log(log_params: &[R]) -> Self {
        let d = log_params.len() - 2;
        Hypers {
            inv_ls2: log_params[..d]
                .iter()
                .map(|l| l.mul_const(-2.0).exp())
                .collect(),
            sf2: log_params[d].exp(),
            s02: log_params[d + 1].exp(),
        }
    }

    pub fn from_natural(lengthscales: &[f64], sf2: R, s02: R) -> Self {
        Hypers {
            inv_ls2: lengthscales
                .iter()
                .map(|&l| sf2.lift(1.0 / (l * l)))
                .collect(),
            sf2,
            s02,
        }
    }
}

/// SE kernel row k(x, Z) for a constant (data) query point.
pub(crate) fn kernel_row_const<R: Real>(x: &[f64], z: &Mat<R>, h: &Hypers<R>) -> Vec<R> {
    let mut out = Vec::with_capacity(z.rows);
    for j in 0..z.rows {
        let mut s = h.sf2.lift(0.0);
        for d in 0..INPUT_DIM {
            let diff = z.at(j, d).add_const(-x[d]);
            s = s + diff * diff * h.inv_ls2[d];
        }
        out.push(h.sf2 * s.mul_const(-0.5).exp());
    }
    out
}

/// SE kernel row k(x, Z) for a tracked (sampled) query point.
pub(crate) fn kernel_row_var<R: Real>(x: &[R], z: &Mat<R>, h: &Hypers<R>) -> Vec<R> {
    let mut out = Vec::with_capacity(z.rows);
    for j in 0..z.rows {
        let mut s = h.sf2.lift(0.0);
        for d in 0..INPUT_DIM {
            let diff = z.at(j, d) - x[d];
            s = s + diff * diff * h.inv_ls2[d];
        }
        out.push(h.sf2 * s.mul_const(-0.5).exp());
    }
    out
}

/// Fixed-parameter context for sparse posterior evaluation.
#[derive(Debug, Clone)]
pub(crate) struct SparseCtx<R> {
    pub z: Mat<R>,
    pub hyp: Hypers<R>,
    pub lk: Mat<R>,
    /// Lk⁻¹ mu_s
    c: Vec<R>,
    /// Lk⁻¹ L_s
    a: Mat<R>,
    ls_log_diag_sum: R,
    pub jitter: f64,
    m: usize,
}

impl<R: Real> SparseCtx<R> {
    /// `l_s` must be lower triangular with strictly positive diagonal.
    pub fn build(z: Mat<R>, mu_s: &[R], l_s: &Mat<R>, hyp: Hypers<R>) -> Result<Self> {
        let m = z.rows;
        if mu_s.len() != m || l_s.rows != m || l_s.cols != m {
            return Err(Error::DimensionMismatch(format!(
                "variational state: Z has {m} rows, mu_s {}, L_s {}x{}",
                mu_s.len(),
                l_s.rows,
                l_s.cols
            )));
        }
        // K_ZZ with the nugget applied by index identity on the diagonal.
        let mut kzz = Mat::filled_like(hyp.sf2, m, m, 0.0);
        for i in 0..m {
            kzz.set(i, i, hyp.sf2 + hyp.s02);
            for j in 0..i {
                let mut s = hyp.sf2.lift(0.0);
                for d in 0..INPUT_DIM {
                    let diff = z.at(i, d) - z.at(j, d);
                    s = s + diff * diff * hyp.inv_ls2[d];
                }
                let v = hyp.sf2 * s.mul_const(-0.5).exp();
                kzz.set(i, j, v);
                kzz.set(j, i, v);
            }
        }
        let (lk, jitter) = cholesky_jitter(&kzz, KZZ_JITTER_START, "inducing gram")?;
        let c = solve_lower(&lk, mu_s);
        let mut a = Mat::filled_like(hyp.sf2, m, m, 0.0);
        let mut col = vec![hyp.sf2.lift(0.0); m];
        for j in 0..m {
            for (i, item) in col.iter_mut().enumerate() {
                *item = l_s.at(i, j);
            }
            let solved = solve_lower(&lk, &col);
            for (i, v) in solved.into_iter().enumerate() {
                a.set(i, j, v);
            }
        }
        let mut ls_log_diag_sum = l_s.at(0, 0).ln();
        for i in 1..m {
            ls_log_diag_sum = ls_log_diag_sum + l_s.at(i, i).ln();
        }
        Ok(SparseCtx {
            z,
            hyp,
            lk,
            c,
            a,
            ls_log_diag_sum,
            jitter,
            m,
        })
    }

    pub fn inducing_count(&self) -> usize {
        self.m
    }

    /// Latent mean and (unclamped) variance from a precomputed kernel row.
    pub fn moments_from_row(&self, kx: &[R]) -> (R, R) {
        let u = solve_lower(&self.lk, kx);
        let mu = dot(&u, &self.c);
        let q1 = dot(&u, &u);
        // t = Aᵀ u
        let mut q2 = self.hyp.sf2.lift(0.0);
        for j in 0..self.m {
            let mut t = self.hyp.sf2.lift(0.0);
            for i in 0..self.m {
                t = t + self.a.at(i, j) * u[i];
            }
            q2 = q2 + t * t;
        }
        let var = self.hyp.sf2 - q1 + q2;
        (mu, var)
    }

    pub fn moments_const(&self, x: &[f64]) -> (R, R) {
        let kx = kernel_row_const(x, &self.z, &self.hyp);
        self.moments_from_row(&kx)
    }

    pub fn moments_var(&self, x: &[R]) -> (R, R) {
        let kx = kernel_row_var(x, &self.z, &self.hyp);
        self.moments_from_row(&kx)
    }

    /// KL(N(mu_s, L_s L_sᵀ) || N(0, K_ZZ)) in closed form.
    pub fn kl_inducing(&self) -> R {
        let mut frob = self.hyp.sf2.lift(0.0);
        for v in &self.a.data {
            frob = frob + *v * *v;
        }
        let mut mu_term = self.hyp.sf2.lift(0.0);
        for v in &self.c {
            mu_term = mu_term + *v * *v;
        }
        let mut lk_log_diag_sum = self.lk.at(0, 0).ln();
        for i in 1..self.m {
            lk_log_diag_sum = lk_log_diag_sum + self.lk.at(i, i).ln();
        }
        (frob + mu_term).mul_const(0.5).add_const(-0.5 * self.m as f64) + lk_log_diag_sum
            - self.ls_log_diag_sum
    }
}

/// Training-path variance: floored so the downstream sqrt stays smooth.
pub(crate) fn floor_variance_train<R: Real>(var: R) -> R {
    if var.val() < TRAIN_VAR_FLOOR {
        var.lift(TRAIN_VAR_FLOOR)
    } else {
        var
    }
}

/// Prediction-path variance guard: exact clamp at zero within the tolerance,
/// hard error beyond it (signals a broken factorization).
pub(crate) fn clamp_variance_predict(var: f64, context: &str) -> Result<f64> {
    if var >= 0.0 {
        Ok(var)
    } else if var > -VAR_CLAMP_TOL {
        Ok(0.0)
    } else {
        Err(Error::Optimization(format!(
            "negative latent variance {var:.3e} in {context}"
        )))
    }
}

/// Expected Bernoulli log-likelihood under N(mu, sigma²) by Gauss-Hermite:
/// (1/sqrt(pi)) sum_j w_j log p(y | logistic(sqrt(2) sigma t_j + mu)).
pub(crate) fn expected_loglik_gh_generic<R: Real>(mu: R, sigma: R, y: u8, rule: &GhRule) -> R {
    let mut acc = mu.lift(0.0);
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let f = sigma.mul_const(std::f64::consts::SQRT_2 * t) + mu;
        // log sigmoid(f) = -softplus(-f); log(1 - sigmoid(f)) = -softplus(f)
        let ll = if y == 1 { -(-f).softplus() } else { -f.softplus() };
        acc = acc + ll.mul_const(w);
    }
    acc.mul_const(FRAC_1_SQRT_PI)
}

/// Predictive success probability under N(mu, sigma²) by Gauss-Hermite.
pub(crate) fn bernoulli_predictive_gh(mu: f64, sigma: f64, rule: &GhRule) -> f64 {
    let mut acc = 0.0;
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let f = std::f64::consts::SQRT_2 * sigma * t + mu;
        acc += w * crate::optim::tape::sigmoid_f64(f);
    }
    (acc * FRAC_1_SQRT_PI).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16)
}

/// Lower-triangular factor parameterization: row-wise packed strict lower
/// entries stored raw, diagonal through softplus for strict positivity.
pub(crate) fn ls_raw_len(m: usize) -> usize {
    m * (m + 1) / 2
}

pub(crate) fn unpack_ls<R: Real>(raw: &[R], m: usize, proto: R) -> Mat<R> {
    debug_assert_eq!(raw.len(), ls_raw_len(m));
    let mut l = Mat::filled_like(proto, m, m, 0.0);
    let mut k = 0;
    for i in 0..m {
        for j in 0..=i {
            if i == j {
                l.set(i, j, raw[k].softplus());
            } else {
                l.set(i, j, raw[k]);
            }
            k += 1;
        }
    }
    l
}

/// Raw packing for an initial factor `diag * I`.
pub(crate) fn ls_raw_init(m: usize, diag: f64) -> Vec<f64> {
    let mut raw = vec![0.0; ls_raw_len(m)];
    let mut k = 0;
    for i in 0..m {
        for j in 0..=i {
            if i == j {
                raw[k] = softplus_inverse(diag);
            }
            k += 1;
        }
    }
    raw
}

/// Minibatch Adam ascent shared by the variational fits. Each epoch shuffles
/// the data stream and walks it in `batch_size` chunks (a single full batch
/// when `batch_size >= n_data`); the returned trace holds the per-epoch mean
/// of the minibatch objectives.
pub(crate) fn run_minibatch_adam<F>(
    n_data: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    rng: &mut crate::optim::Stream,
    params: &mut crate::optim::ParamVector,
    mut eval_batch: F,
) -> Result<Vec<f64>>
where
    F: for<'t> FnMut(
        &'t crate::optim::Tape,
        &[crate::optim::Var<'t>],
        &[usize],
        &mut crate::optim::Stream,
    ) -> Result<crate::optim::Var<'t>>,
{
    use rand::Rng;
    let mut tape = crate::optim::Tape::new();
    let mut adam = crate::optim::AdamState::new(params.len(), learning_rate);
    let mut indices: Vec<usize> = (0..n_data).collect();
    let batch = batch_size.min(n_data).max(1);
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        if batch < n_data {
            for i in (1..indices.len()).rev() {
                let j = rng.random_range(0..=i);
                indices.swap(i, j);
            }
        }
        let mut epoch_sum = 0.0;
        let mut n_batches = 0usize;
        let mut start = 0;
        while start < n_data {
            let end = (start + batch).min(n_data);
            let batch_idx = &indices[start..end];
            let result = {
                tape.reset();
                let leaves: Vec<crate::optim::Var> =
                    params.values().iter().map(|&v| tape.leaf(v)).collect();
                let out = eval_batch(&tape, &leaves, batch_idx, rng)?;
                if !out.value().is_finite() {
                    return Err(Error::Optimization(format!(
                        "objective became non-finite at epoch {epoch} (trace so far: {} epochs, last finite {:?})",
                        trace.len(),
                        trace.last()
                    )));
                }
                let adj = tape.gradient(out);
                (out.value(), adj[..params.len()].to_vec())
            };
            let (value, mut grad) = result;
            params.check_gradient(&grad)?;
            params.mask_frozen(&mut grad);
            adam.step(params.values_mut(), &grad)?;
            epoch_sum += value;
            n_batches += 1;
            start = end;
        }
        trace.push(epoch_sum / n_batches as f64);
    }
    Ok(trace)
}
