//! Sparse variational GP binary classification with Gauss-Hermite expected
//! log-likelihood.
//!
//! The variational family is N(mu_s, Sigma_s) over the latent function at M
//! inducing locations Z; the per-event expected Bernoulli-logit
//! log-likelihood is integrated with an m-point Gauss-Hermite rule, and the
//! evidence lower bound
//!
//! ```text
//! ELBO = (N/|B|) sum_{i in B} E_q[log p(y_i | f_i)] - KL(q(f_s) || p(f_s))
//! ```
//!
//! is maximized with minibatch Adam over the log kernel hyperparameters, Z,
//! mu_s, and the lower-triangular factor of Sigma_s.

use ndarray::{Array1, Array2};

use crate::data::{classification_view, CommEvent, Standardizer};
use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::optim::tape::{Mat, Real};
use crate::optim::{gh_nodes, seeded_stream, GhRule, ParamVector};
use crate::sparse::{
    bernoulli_predictive_gh, clamp_variance_predict, expected_loglik_gh_generic,
    floor_variance_train, ls_raw_init, run_minibatch_adam, unpack_ls, Hypers, SparseCtx,
};
use crate::{PredictionResult, Predictor, INPUT_DIM};

/// Default Gauss-Hermite node count; at this order the quadrature error is
/// far below the metric tolerances for the sigma range standardized data
/// produces.
pub const DEFAULT_GH_NODES: usize = 20;

/// Variational state of a sparse GP: inducing locations, variational mean,
/// and the lower-triangular factor of the variational covariance.
#[derive(Debug, Clone)]
pub struct VariationalState {
    /// M x 4 inducing locations in standardized map units.
    pub z: Array2<f64>,
    pub mu_s: Array1<f64>,
    /// Lower-triangular with strictly positive diagonal; Sigma_s = L Lᵀ.
    pub l_s: Array2<f64>,
}

impl VariationalState {
    pub fn new(z: Array2<f64>, mu_s: Array1<f64>, l_s: Array2<f64>) -> Result<Self> {
        let state = VariationalState { z, mu_s, l_s };
        state.validate()?;
        Ok(state)
    }

    pub fn inducing_count(&self) -> usize {
        self.z.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.z.nrows();
        if m < 1 || self.z.ncols() != INPUT_DIM {
            return Err(Error::DimensionMismatch(format!(
                "inducing matrix {}x{}",
                m,
                self.z.ncols()
            )));
        }
        if self.mu_s.len() != m || self.l_s.nrows() != m || self.l_s.ncols() != m {
            return Err(Error::DimensionMismatch(
                "variational state shapes disagree".into(),
            ));
        }
        for i in 0..m {
            if !(self.l_s[[i, i]] > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "variational factor diagonal entry {i} is not positive"
                )));
            }
            for j in i + 1..m {
                if self.l_s[[i, j]] != 0.0 {
                    return Err(Error::InvalidParameter(
                        "variational factor is not lower triangular".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Evaluation context (factorized inducing Gram) for this state.
    pub(crate) fn posterior_ctx(&self, params: &KernelParams) -> Result<SparseCtx<f64>> {
        let m = self.inducing_count();
        let z = Mat {
            rows: m,
            cols: INPUT_DIM,
            data: self.z.iter().copied().collect(),
        };
        let l_s = Mat {
            rows: m,
            cols: m,
            data: self.l_s.iter().copied().collect(),
        };
        let hyp = Hypers::from_natural(
            &params.lengthscales,
            params.signal_variance,
            params.noise_variance,
        );
        SparseCtx::build(z, self.mu_s.as_slice().expect("contiguous"), &l_s, hyp)
    }
}

/// Marginal latent moments at one input: mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentMoments {
    pub mu: f64,
    pub sigma: f64,
}

/// Latent mean and standard deviation of the sparse posterior at `x`
/// (standardized units).
pub fn latent_moments(
    x: &[f64; INPUT_DIM],
    vs: &VariationalState,
    p: &KernelParams,
) -> Result<LatentMoments> {
    crate::require_finite("latent_moments query", x)?;
    let ctx = vs.posterior_ctx(p)?;
    let (mu, var) = ctx.moments_const(x);
    let var = clamp_variance_predict(var, "latent moments")?;
    Ok(LatentMoments {
        mu,
        sigma: var.sqrt(),
    })
}

/// Gauss-Hermite expected Bernoulli log-likelihood
/// (1/sqrt(pi)) sum_j w_j log p(y | logistic(sqrt(2) sigma t_j + mu)).
pub fn expected_loglik_gh(mom: &LatentMoments, y: u8, m: usize) -> Result<f64> {
    if y > 1 {
        return Err(Error::InvalidParameter(format!("binary label, got {y}")));
    }
    let rule = gh_nodes(m)?;
    Ok(expected_loglik_gh_generic(mom.mu, mom.sigma, y, &rule))
}

/// Full ELBO for a batch at fixed parameters; `batch` entries are
/// (standardized input, label) and the likelihood sum is rescaled to
/// `n_total` events.
pub fn elbo_svgpc(
    batch: &[([f64; INPUT_DIM], u8)],
    vs: &VariationalState,
    p: &KernelParams,
    n_total: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let rule = gh_nodes(DEFAULT_GH_NODES)?;
    let ctx = vs.posterior_ctx(p)?;
    let mut acc = 0.0;
    for (x, y) in batch {
        if *y > 1 {
            return Err(Error::InvalidParameter(format!("binary label, got {y}")));
        }
        let (mu, var) = ctx.moments_const(x);
        let var = clamp_variance_predict(var, "svgpc elbo")?;
        acc += expected_loglik_gh_generic(mu, var.sqrt(), *y, &rule);
    }
    let scale = n_total as f64 / batch.len() as f64;
    Ok(acc * scale - ctx.kl_inducing())
}

#[derive(Debug, Clone)]
pub struct SvgpcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub inducing_fraction: f64,
    pub inducing_count: Option<usize>,
    pub gh_nodes: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimize_hyperparams: bool,
    pub optimize_inducing: bool,
    pub init_lengthscale: f64,
    pub init_signal_variance: f64,
    /// Initial kernel nugget; trained with the other hyperparameters.
    pub init_noise_variance: f64,
}

impl Default for SvgpcConfig {
    fn default() -> Self {
        SvgpcConfig {
            epochs: 1000,
            batch_size: 50,
            inducing_fraction: 0.05,
            inducing_count: None,
            gh_nodes: DEFAULT_GH_NODES,
            learning_rate: 0.01,
            seed: 0,
            optimize_hyperparams: true,
            optimize_inducing: true,
            init_lengthscale: 1.0,
            init_signal_variance: 1.0,
            init_noise_variance: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvgpcModel {
    pub variational: VariationalState,
    pub params: KernelParams,
    pub x_std: Standardizer,
    pub elbo_trace: Vec<f64>,
    pub gh: GhRule,
    ctx: SparseCtx<f64>,
}

impl SvgpcModel {
    pub(crate) fn from_parts(
        variational: VariationalState,
        params: KernelParams,
        x_std: Standardizer,
        elbo_trace: Vec<f64>,
        gh: GhRule,
    ) -> Result<Self> {
        let ctx = variational.posterior_ctx(&params)?;
        Ok(SvgpcModel {
            variational,
            params,
            x_std,
            elbo_trace,
            gh,
            ctx,
        })
    }
}

/// Generic batch ELBO used by the trainer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn svgpc_batch_elbo<R: Real>(
    hyper_logs: &[R],
    z_flat: &[R],
    mu_s: &[R],
    ls_raw: &[R],
    m: usize,
    xs: &[[f64; INPUT_DIM]],
    labels: &[u8],
    batch: &[usize],
    n_total: usize,
    rule: &GhRule,
) -> Result<R> {
    let hyp = Hypers::from_log(hyper_logs);
    let proto = hyper_logs[0];
    let z = Mat {
        rows: m,
        cols: INPUT_DIM,
        data: z_flat.to_vec(),
    };
    let l_s = unpack_ls(ls_raw, m, proto);
    let ctx = SparseCtx::build(z, mu_s, &l_s, hyp)?;
    let mut acc = proto.lift(0.0);
    for &i in batch {
        let (mu, var) = ctx.moments_const(&xs[i]);
        let sigma = floor_variance_train(var).sqrt();
        acc = acc + expected_loglik_gh_generic(mu, sigma, labels[i], rule);
    }
    let scale = n_total as f64 / batch.len() as f64;
    Ok(acc.mul_const(scale) - ctx.kl_inducing())
}

/// Fits the sparse variational classifier. Inducing points are initialized
/// on training points; M = ceil(fraction * N) unless overridden.
pub fn fit_svgpc(events: &[CommEvent], cfg: &SvgpcConfig) -> Result<SvgpcModel> {
    if events.is_empty() {
        return Err(Error::Data("classification fit on empty event list".into()));
    }
    let indices: Vec<usize> = (0..events.len()).collect();
    let ds = crate::data::Dataset {
        name: String::new(),
        events: events.to_vec(),
        ground_truth: None,
    };
    let (x_raw, labels) = classification_view(&ds, &indices);
    if labels.iter().all(|&l| l == labels[0]) {
        log::warn!("single-class training data; the prior will dominate");
    }
    let n = x_raw.nrows();
    let x_std = Standardizer::fit(&x_raw);
    let x = x_std.transform_matrix(&x_raw);
    let xs: Vec<[f64; INPUT_DIM]> = (0..n)
        .map(|i| {
            let mut row = [0.0; INPUT_DIM];
            for c in 0..INPUT_DIM {
                row[c] = x[[i, c]];
            }
            row
        })
        .collect();

    let m = cfg
        .inducing_count
        .unwrap_or_else(|| (cfg.inducing_fraction * n as f64).ceil() as usize)
        .clamp(2, n);
    let rule = gh_nodes(cfg.gh_nodes)?;
    let mut rng = seeded_stream(cfg.seed, crate::optim::rng::stream_ids::TRAINING);
    let z0 = crate::regression::init_inducing_on_training(&xs, m, &mut rng);

    let mut params = ParamVector::new();
    let hyper_init: Vec<f64> = vec![cfg.init_lengthscale.ln(); INPUT_DIM]
        .into_iter()
        .chain([
            cfg.init_signal_variance.ln(),
            cfg.init_noise_variance.max(1e-12).ln(),
        ])
        .collect();
    let h_hyper = params.push_group("hyperparams", &hyper_init, cfg.optimize_hyperparams);
    let h_z = params.push_group("inducing", &z0, cfg.optimize_inducing);
    let h_mu = params.push_group("variational_mean", &vec![0.0; m], true);
    let h_ls = params.push_group("variational_factor", &ls_raw_init(m, 0.1), true);
    let (r_h, r_z, r_mu, r_ls) = (
        params.range(h_hyper),
        params.range(h_z),
        params.range(h_mu),
        params.range(h_ls),
    );

    let trace = run_minibatch_adam(
        n,
        cfg.epochs,
        cfg.batch_size,
        cfg.learning_rate,
        &mut rng,
        &mut params,
        |_tape, leaves, batch, _rng| {
            svgpc_batch_elbo(
                &leaves[r_h.clone()],
                &leaves[r_z.clone()],
                &leaves[r_mu.clone()],
                &leaves[r_ls.clone()],
                m,
                &xs,
                &labels,
                batch,
                n,
                &rule,
            )
        },
    )?;

    let values = params.values();
    let hyper = &values[r_h];
    let kernel_params = KernelParams::new(
        hyper[..INPUT_DIM].iter().map(|t| t.exp()).collect(),
        hyper[INPUT_DIM].exp(),
        hyper[INPUT_DIM + 1].exp(),
    )?;
    let z = Array2::from_shape_vec((m, INPUT_DIM), values[r_z].to_vec()).expect("shape");
    let mu_s = Array1::from_vec(values[r_mu].to_vec());
    let l_s_mat = unpack_ls(&values[r_ls].to_vec(), m, 0.0f64);
    let l_s = Array2::from_shape_vec((m, m), l_s_mat.data).expect("shape");
    let variational = VariationalState::new(z, mu_s, l_s)?;
    SvgpcModel::from_parts(variational, kernel_params, x_std, trace, rule)
}

/// Success probability and latent variance at a standardized-space context.
pub(crate) fn predict_with_ctx(
    ctx: &SparseCtx<f64>,
    gh: &GhRule,
    x_standardized: &[f64],
) -> Result<(f64, f64)> {
    let (mu, var) = ctx.moments_const(x_standardized);
    let var = clamp_variance_predict(var, "classification prediction")?;
    let prob = bernoulli_predictive_gh(mu, var.sqrt(), gh);
    Ok((prob, var))
}

/// Predictive success probability (Gauss-Hermite integral of the logistic
/// under the latent Gaussian) and the latent variance.
pub fn predict_svgpc(model: &SvgpcModel, x_star: [f64; INPUT_DIM]) -> Result<PredictionResult> {
    crate::require_finite("query point", &x_star)?;
    let xs = model.x_std.transform_point(&x_star);
    let (prob, var) = predict_with_ctx(&model.ctx, &model.gh, &xs)?;
    Ok(PredictionResult {
        value: prob,
        variance: var,
    })
}

impl Predictor for SvgpcModel {
    fn predict(&self, x: [f64; INPUT_DIM]) -> Result<PredictionResult> {
        predict_svgpc(self, x)
    }
}
