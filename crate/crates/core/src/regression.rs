//! SNR map learners: exact Gaussian process regression and its sparse
//! variational counterpart. Both train on the successful events only — the
//! modem reports an SNR only for decoded packets — and work in standardized
//! input/target space, de-standardizing at prediction time.

use ndarray::{Array1, Array2};

use crate::data::{CommEvent, Standardizer};
use crate::error::{Error, Result};
use crate::kernel::{chol_psd, cross, cross_vector, CholFactor, KernelParams};
use crate::optim::tape::Real;
use crate::optim::{seeded_stream, AdamState, ParamVector};
use crate::sparse::{
    clamp_variance_predict, floor_variance_train, ls_raw_init, run_minibatch_adam, unpack_ls,
    Hypers, SparseCtx,
};
use crate::svgpc::VariationalState;
use crate::{PredictionResult, Predictor, INPUT_DIM};

/// Structural nugget on the inducing Gram of the sparse regression model;
/// the observation noise is a separate trained parameter.
const SVGPR_KERNEL_NUGGET: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Exact GPR
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GprConfig {
    /// Adam iterations on the log marginal likelihood.
    pub max_iters: usize,
    pub learning_rate: f64,
    /// Initialization in standardized space.
    pub init_lengthscale: f64,
    pub init_signal_variance: f64,
    /// Initial (or fixed) Gaussian observation noise; may be exactly zero
    /// when hyperparameters are not optimized.
    pub init_noise_variance: f64,
    pub optimize_hyperparams: bool,
}

impl Default for GprConfig {
    fn default() -> Self {
        GprConfig {
            max_iters: 150,
            learning_rate: 0.05,
            init_lengthscale: 1.0,
            init_signal_variance: 1.0,
            init_noise_variance: 0.1,
            optimize_hyperparams: true,
        }
    }
}

/// Exact GP regression model. `params.noise_variance` is the Gaussian
/// observation noise added to the training Gram; predictions report the
/// latent (noise-free) mean and variance in dB.
#[derive(Debug, Clone)]
pub struct GprModel {
    pub x_train: Array2<f64>,
    pub y_train: Array1<f64>,
    pub params: KernelParams,
    pub chol: CholFactor,
    pub alpha: Array1<f64>,
    pub x_std: Standardizer,
    pub y_std: Standardizer,
    pub log_marginal_likelihood: f64,
}

fn regression_arrays(events: &[CommEvent]) -> Result<(Array2<f64>, Array1<f64>)> {
    if events.is_empty() {
        return Err(Error::Data("regression fit on empty event list".into()));
    }
    let mut x = Array2::zeros((events.len(), INPUT_DIM));
    let mut y = Array1::zeros(events.len());
    for (i, e) in events.iter().enumerate() {
        if e.label != 1 {
            return Err(Error::Data(format!(
                "regression training event {i} is not a success"
            )));
        }
        let snr = e
            .snr_db
            .ok_or_else(|| Error::Data(format!("event {i} missing snr_db")))?;
        if !snr.is_finite() {
            return Err(Error::NonFinite(format!("snr_db of event {i}")));
        }
        for (c, v) in e.input().iter().enumerate() {
            x[[i, c]] = *v;
        }
        y[i] = snr;
    }
    Ok((x, y))
}

struct LmlEval {
    value: f64,
    grad: Vec<f64>, // d/d log [l_1..l_4, sf2, noise]
}

/// Log marginal likelihood and its gradient with respect to the log
/// hyperparameters: dL/dθ = ½ tr((ααᵀ - K⁻¹) ∂K/∂θ).
fn lml_and_grad(
    x: &Array2<f64>,
    y: &Array1<f64>,
    params: &KernelParams,
    with_grad: bool,
) -> Result<LmlEval> {
    let n = x.nrows();
    let k_se = cross(x.view(), x.view(), params);
    let mut k = k_se.clone();
    for i in 0..n {
        k[[i, i]] += params.noise_variance;
    }
    let chol = chol_psd(&k, 1e-10, "training gram")?;
    let alpha = chol.solve(y.view());
    let value = -0.5 * y.dot(&alpha)
        - (0..n).map(|i| chol.l[[i, i]].ln()).sum::<f64>()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    if !with_grad {
        return Ok(LmlEval {
            value,
            grad: vec![],
        });
    }
    let kinv = chol.inverse();
    // diff = alpha alphaᵀ - K⁻¹; grad_θ = ½ Σ_ij diff_ij (∂K/∂θ)_ij
    let mut grad = vec![0.0; INPUT_DIM + 2];
    for d in 0..INPUT_DIM {
        let l2 = params.lengthscales[d] * params.lengthscales[d];
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let diff_ij = alpha[i] * alpha[j] - kinv[[i, j]];
                let r2 = (x[[i, d]] - x[[j, d]]).powi(2);
                acc += diff_ij * k_se[[i, j]] * r2 / l2;
            }
        }
        grad[d] = 0.5 * acc;
    }
    let mut acc_sf2 = 0.0;
    let mut acc_noise = 0.0;
    for i in 0..n {
        for j in 0..n {
            let diff_ij = alpha[i] * alpha[j] - kinv[[i, j]];
            acc_sf2 += diff_ij * k_se[[i, j]];
            if i == j {
                acc_noise += diff_ij * params.noise_variance;
            }
        }
    }
    grad[INPUT_DIM] = 0.5 * acc_sf2;
    grad[INPUT_DIM + 1] = 0.5 * acc_noise;
    Ok(LmlEval { value, grad })
}

/// Fits exact GPR by maximizing the log marginal likelihood with Adam in
/// log-parameter space; the best iterate is kept, so the final value never
/// falls below the initial one.
pub fn fit_gpr(events: &[CommEvent], cfg: &GprConfig) -> Result<GprModel> {
    let (x_raw, y_raw) = regression_arrays(events)?;
    let x_std = Standardizer::fit(&x_raw);
    let y_std = Standardizer::fit_scalar(&y_raw);
    let x = x_std.transform_matrix(&x_raw);
    let y = y_raw.mapv(|v| y_std.transform_scalar(v));

    let mut params = KernelParams::new(
        vec![cfg.init_lengthscale; INPUT_DIM],
        cfg.init_signal_variance,
        cfg.init_noise_variance,
    )?;

    if cfg.optimize_hyperparams {
        let mut theta: Vec<f64> = params
            .lengthscales
            .iter()
            .map(|l| l.ln())
            .chain([
                params.signal_variance.ln(),
                params.noise_variance.max(1e-12).ln(),
            ])
            .collect();
        let mut adam = AdamState::new(theta.len(), cfg.learning_rate);
        let mut best_theta = theta.clone();
        let mut best_value = f64::NEG_INFINITY;
        let mut last_finite = f64::NEG_INFINITY;
        for iter in 0..cfg.max_iters {
            let p = theta_to_params(&theta)?;
            let eval = lml_and_grad(&x, &y, &p, true)?;
            if !eval.value.is_finite() {
                return Err(Error::Optimization(format!(
                    "log marginal likelihood became non-finite at iteration {iter}; last finite value {last_finite:.6}"
                )));
            }
            last_finite = eval.value;
            if eval.value > best_value {
                best_value = eval.value;
                best_theta.copy_from_slice(&theta);
            }
            adam.step(&mut theta, &eval.grad)?;
        }
        // Keep whichever of the trace and the final point is best.
        let final_p = theta_to_params(&theta)?;
        let final_eval = lml_and_grad(&x, &y, &final_p, false)?;
        if final_eval.value > best_value {
            best_theta.copy_from_slice(&theta);
        }
        params = theta_to_params(&best_theta)?;
    }

    let k_se = cross(x.view(), x.view(), &params);
    let mut k = k_se;
    for i in 0..x.nrows() {
        k[[i, i]] += params.noise_variance;
    }
    let chol = chol_psd(&k, 1e-10, "training gram")?;
    let alpha = chol.solve(y.view());
    let lml = lml_and_grad(&x, &y, &params, false)?.value;
    Ok(GprModel {
        x_train: x,
        y_train: y,
        params,
        chol,
        alpha,
        x_std,
        y_std,
        log_marginal_likelihood: lml,
    })
}

fn theta_to_params(theta: &[f64]) -> Result<KernelParams> {
    KernelParams::new(
        theta[..INPUT_DIM].iter().map(|t| t.exp()).collect(),
        theta[INPUT_DIM].exp(),
        theta[INPUT_DIM + 1].exp(),
    )
}

/// Posterior mean and latent variance at a query, de-standardized to dB.
pub fn predict_gpr(model: &GprModel, x_star: [f64; INPUT_DIM]) -> Result<PredictionResult> {
    crate::require_finite("query point", &x_star)?;
    let xs = model.x_std.transform_point(&x_star);
    let k = cross_vector(&xs, model.x_train.view(), &model.params);
    let mean_s = k.dot(&model.alpha);
    let v = model.chol.solve_lower(k.view());
    let var_s = clamp_variance_predict(
        model.params.query_variance() - v.dot(&v),
        "exact GPR prediction",
    )?;
    Ok(PredictionResult {
        value: model.y_std.inverse_scalar(mean_s),
        variance: model.y_std.inverse_scalar_variance(var_s),
    })
}

impl Predictor for GprModel {
    fn predict(&self, x: [f64; INPUT_DIM]) -> Result<PredictionResult> {
        predict_gpr(self, x)
    }
}

// ---------------------------------------------------------------------------
// Sparse variational GPR
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SvgprConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Inducing count = ceil(fraction * N) unless overridden.
    pub inducing_fraction: f64,
    pub inducing_count: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimize_hyperparams: bool,
    pub optimize_inducing: bool,
    pub init_lengthscale: f64,
    pub init_signal_variance: f64,
    pub init_noise: f64,
}

impl Default for SvgprConfig {
    fn default() -> Self {
        SvgprConfig {
            epochs: 1000,
            batch_size: 50,
            inducing_fraction: 0.05,
            inducing_count: None,
            learning_rate: 0.01,
            seed: 0,
            optimize_hyperparams: true,
            optimize_inducing: true,
            init_lengthscale: 1.0,
            init_signal_variance: 1.0,
            init_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvgprModel {
    pub variational: VariationalState,
    pub params: KernelParams,
    pub gaussian_noise: f64,
    pub x_std: Standardizer,
    pub y_std: Standardizer,
    pub elbo_trace: Vec<f64>,
}

/// Uncollapsed Gaussian-likelihood ELBO for one batch; generic over the
/// scalar so it serves both training gradients and plain evaluation.
#[allow(clippy::too_many_arguments)]
fn svgpr_batch_elbo<R: Real>(
    hyper_logs: &[R],
    log_noise: R,
    z_flat: &[R],
    mu_s: &[R],
    ls_raw: &[R],
    m: usize,
    xs: &[[f64; INPUT_DIM]],
    ys: &[f64],
    batch: &[usize],
    n_total: usize,
) -> Result<R> {
    let proto = log_noise;
    let hyp = Hypers {
        inv_ls2: hyper_logs[..INPUT_DIM]
            .iter()
            .map(|l| l.mul_const(-2.0).exp())
            .collect(),
        sf2: hyper_logs[INPUT_DIM].exp(),
        s02: proto.lift(SVGPR_KERNEL_NUGGET),
    };
    let noise = log_noise.exp();
    let z = crate::optim::tape::Mat {
        rows: m,
        cols: INPUT_DIM,
        data: z_flat.to_vec(),
    };
    let l_s = unpack_ls(ls_raw, m, proto);
    let ctx = SparseCtx::build(z, mu_s, &l_s, hyp)?;

    let mut acc = proto.lift(0.0);
    for &i in batch {
        let (mu, var) = ctx.moments_const(&xs[i]);
        let var = floor_variance_train(var);
        let resid = mu.add_const(-ys[i]);
        // E_q[log N(y | f, noise)] = -0.5 ln(2 pi noise) - ((y-mu)^2 + var) / (2 noise)
        let quad = (resid * resid + var) / noise.mul_const(2.0);
        let log_norm = noise.ln().add_const((2.0 * std::f64::consts::PI).ln());
        acc = acc - quad - log_norm.mul_const(0.5);
    }
    let scale = n_total as f64 / batch.len() as f64;
    Ok(acc.mul_const(scale) - ctx.kl_inducing())
}

/// Fits sparse variational GPR with minibatch Adam on the uncollapsed ELBO.
/// Inducing points are initialized on training points.
pub fn fit_svgpr(events: &[CommEvent], cfg: &SvgprConfig) -> Result<SvgprModel> {
    let (x_raw, y_raw) = regression_arrays(events)?;
    let n = x_raw.nrows();
    let x_std = Standardizer::fit(&x_raw);
    let y_std = Standardizer::fit_scalar(&y_raw);
    let x = x_std.transform_matrix(&x_raw);
    let ys: Vec<f64> = y_raw.iter().map(|&v| y_std.transform_scalar(v)).collect();
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
    if n < 2 {
        return Err(Error::Data(
            "sparse regression needs at least 2 events".into(),
        ));
    }

    let mut rng = seeded_stream(cfg.seed, crate::optim::rng::stream_ids::TRAINING);
    let z0 = init_inducing_on_training(&xs, m, &mut rng);

    let mut params = ParamVector::new();
    let hyper_init: Vec<f64> = vec![cfg.init_lengthscale.ln(); INPUT_DIM]
        .into_iter()
        .chain([cfg.init_signal_variance.ln()])
        .collect();
    let h_hyper = params.push_group("hyperparams", &hyper_init, cfg.optimize_hyperparams);
    let h_noise = params.push_group(
        "gaussian_noise",
        &[cfg.init_noise.max(1e-12).ln()],
        cfg.optimize_hyperparams,
    );
    let h_z = params.push_group("inducing", &z0, cfg.optimize_inducing);
    let h_mu = params.push_group("variational_mean", &vec![0.0; m], true);
    let h_ls = params.push_group("variational_factor", &ls_raw_init(m, 0.1), true);

    let (r_h, r_n, r_z, r_mu, r_ls) = (
        params.range(h_hyper),
        params.range(h_noise),
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
            svgpr_batch_elbo(
                &leaves[r_h.clone()],
                leaves[r_n.clone()][0],
                &leaves[r_z.clone()],
                &leaves[r_mu.clone()],
                &leaves[r_ls.clone()],
                m,
                &xs,
                &ys,
                batch,
                n,
            )
        },
    )?;

    let values = params.values();
    let hyper = &values[r_h];
    let kernel_params = KernelParams::new(
        hyper[..INPUT_DIM].iter().map(|t| t.exp()).collect(),
        hyper[INPUT_DIM].exp(),
        SVGPR_KERNEL_NUGGET,
    )?;
    let gaussian_noise = values[r_n][0].exp();
    let z = Array2::from_shape_vec((m, INPUT_DIM), values[r_z].to_vec())
        .expect("inducing shape");
    let mu_s = Array1::from_vec(values[r_mu].to_vec());
    let l_s_mat = unpack_ls(&values[r_ls].to_vec(), m, 0.0f64);
    let l_s = Array2::from_shape_vec((m, m), l_s_mat.data).expect("factor shape");
    let variational = VariationalState::new(z, mu_s, l_s)?;
    Ok(SvgprModel {
        variational,
        params: kernel_params,
        gaussian_noise,
        x_std,
        y_std,
        elbo_trace: trace,
    })
}

pub(crate) fn init_inducing_on_training(
    xs: &[[f64; INPUT_DIM]],
    m: usize,
    rng: &mut crate::optim::Stream,
) -> Vec<f64> {
    use rand::Rng;
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut z = Vec::with_capacity(m * INPUT_DIM);
    for &i in order.iter().take(m) {
        z.extend_from_slice(&xs[i]);
    }
    z
}

/// Predictive mean and variance (latent variance plus Gaussian observation
/// noise), de-standardized to dB.
pub fn predict_svgpr(model: &SvgprModel, x_star: [f64; INPUT_DIM]) -> Result<PredictionResult> {
    crate::require_finite("query point", &x_star)?;
    let xs = model.x_std.transform_point(&x_star);
    let (mu, var) = model.variational.posterior_ctx(&model.params)?.moments_const(&xs);
    let var = clamp_variance_predict(var, "sparse GPR prediction")? + model.gaussian_noise;
    Ok(PredictionResult {
        value: model.y_std.inverse_scalar(mu),
        variance: model.y_std.inverse_scalar_variance(var),
    })
}

impl Predictor for SvgprModel {
    fn predict(&self, x: [f64; INPUT_DIM]) -> Result<PredictionResult> {
        predict_svgpr(self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::standard_normal;

    fn success(x: [f64; INPUT_DIM], snr: f64) -> CommEvent {
        CommEvent {
            time_s: 0.0,
            tx_pos: [x[0], x[1]],
            rx_pos: [x[2], x[3]],
            tx_var: [0.0, 0.0],
            rx_var: [0.0, 0.0],
            label: 1,
            snr_db: Some(snr),
        }
    }

    fn fixed_gpr_config(noise: f64) -> GprConfig {
        GprConfig {
            optimize_hyperparams: false,
            init_noise_variance: noise,
            init_lengthscale: 1.0,
            init_signal_variance: 1.0,
            ..GprConfig::default()
        }
    }

    #[test]
    fn single_point_interpolation_with_zero_noise() {
        let events = vec![success([1.0, 2.0, 3.0, 4.0], 14.5)];
        let model = fit_gpr(&events, &fixed_gpr_config(0.0)).unwrap();
        let p = predict_gpr(&model, [1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((p.value - 14.5).abs() < 1e-8, "mean {}", p.value);
        assert!(p.variance.abs() < 1e-8, "variance {}", p.variance);
    }

    #[test]
    fn three_point_posterior_mean_matches_dense_solve() {
        let events = vec![
            success([0.0, 0.0, 1.0, 0.0], 12.0),
            success([0.5, -1.0, 0.0, 1.0], 9.0),
            success([-1.0, 0.5, -0.5, -0.5], 15.0),
        ];
        let model = fit_gpr(&events, &fixed_gpr_config(0.05)).unwrap();
        let query = [0.2, 0.1, 0.3, 0.2];
        let p = predict_gpr(&model, query).unwrap();

        // Dense oracle: explicit 3x3 Gauss-Jordan solve in standardized space.
        let x = &model.x_train;
        let y = &model.y_train;
        let kp = &model.params;
        let kf = |a: &[f64], b: &[f64]| {
            let mut s = 0.0;
            for d in 0..INPUT_DIM {
                s += (a[d] - b[d]).powi(2) / (kp.lengthscales[d] * kp.lengthscales[d]);
            }
            kp.signal_variance * (-0.5 * s).exp()
        };
        let rows: Vec<Vec<f64>> = (0..3).map(|i| x.row(i).to_vec()).collect();
        let mut aug = [[0.0f64; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                aug[i][j] = kf(&rows[i], &rows[j]) + if i == j { kp.noise_variance } else { 0.0 };
            }
            aug[i][3] = y[i];
        }
        for col in 0..3 {
            let piv = aug[col][col];
            for j in 0..4 {
                aug[col][j] /= piv;
            }
            for row in 0..3 {
                if row != col {
                    let f = aug[row][col];
                    for j in 0..4 {
                        aug[row][j] -= f * aug[col][j];
                    }
                }
            }
        }
        let alpha: Vec<f64> = (0..3).map(|i| aug[i][3]).collect();
        let qs = model.x_std.transform_point(&query);
        let mean_s: f64 = (0..3).map(|i| kf(&qs, &rows[i]) * alpha[i]).sum();
        let expected = model.y_std.inverse_scalar(mean_s);
        assert!((p.value - expected).abs() < 1e-9, "{} vs {expected}", p.value);
    }

    #[test]
    fn constant_targets_predict_the_constant_near_training_data() {
        let mut rng = seeded_stream(4, 0);
        let events: Vec<CommEvent> = (0..12)
            .map(|_| {
                success(
                    [
                        standard_normal(&mut rng),
                        standard_normal(&mut rng),
                        standard_normal(&mut rng),
                        standard_normal(&mut rng),
                    ],
                    11.3,
                )
            })
            .collect();
        let cfg = GprConfig {
            optimize_hyperparams: false,
            init_lengthscale: 50.0,
            init_noise_variance: 1e-6,
            ..GprConfig::default()
        };
        let model = fit_gpr(&events, &cfg).unwrap();
        let p = predict_gpr(&model, events[0].input()).unwrap();
        assert!((p.value - 11.3).abs() < 1e-3, "{}", p.value);
    }

    #[test]
    fn far_query_returns_prior_mean_and_variance() {
        let events = vec![
            success([0.0, 0.0, 1.0, 0.0], 12.0),
            success([0.5, -1.0, 0.0, 1.0], 9.0),
        ];
        let model = fit_gpr(&events, &fixed_gpr_config(0.1)).unwrap();
        let p = predict_gpr(&model, [5e3, -4e3, 8e3, 9e3]).unwrap();
        // Prior mean is the target mean; prior latent variance is sf2 in
        // standardized units.
        assert!((p.value - 10.5).abs() < 1e-6, "{}", p.value);
        let prior_var = model.y_std.inverse_scalar_variance(model.params.signal_variance);
        assert!((p.variance - prior_var).abs() < 1e-6 * prior_var);
    }

    #[test]
    fn two_point_prediction_matches_hand_solve() {
        let events = vec![
            success([0.0, 0.0, 0.5, 0.0], 10.0),
            success([1.0, 0.0, -0.5, 1.0], 14.0),
        ];
        let model = fit_gpr(&events, &fixed_gpr_config(0.2)).unwrap();
        let q = [0.4, 0.1, 0.0, 0.6];
        let p = predict_gpr(&model, q).unwrap();

        let kp = &model.params;
        let x = &model.x_train;
        let kf = |a: &[f64], b: &[f64]| {
            let mut s = 0.0;
            for d in 0..INPUT_DIM {
                s += (a[d] - b[d]).powi(2) / (kp.lengthscales[d] * kp.lengthscales[d]);
            }
            kp.signal_variance * (-0.5 * s).exp()
        };
        let r0 = x.row(0).to_vec();
        let r1 = x.row(1).to_vec();
        let (a, b, c) = (
            kf(&r0, &r0) + kp.noise_variance,
            kf(&r0, &r1),
            kf(&r1, &r1) + kp.noise_variance,
        );
        let det = a * c - b * b;
        let y = &model.y_train;
        let alpha = [(c * y[0] - b * y[1]) / det, (a * y[1] - b * y[0]) / det];
        let qs = model.x_std.transform_point(&q);
        let kq = [kf(&qs, &r0), kf(&qs, &r1)];
        let mean_s = kq[0] * alpha[0] + kq[1] * alpha[1];
        // Variance: sf2 - kᵀ K⁻¹ k.
        let kinv_k = [
            (c * kq[0] - b * kq[1]) / det,
            (a * kq[1] - b * kq[0]) / det,
        ];
        let var_s = kp.signal_variance - (kq[0] * kinv_k[0] + kq[1] * kinv_k[1]);
        assert!((p.value - model.y_std.inverse_scalar(mean_s)).abs() < 1e-9);
        assert!(
            (p.variance - model.y_std.inverse_scalar_variance(var_s)).abs()
                < 1e-9 * p.variance.max(1.0)
        );
    }

    #[test]
    fn lml_gradient_matches_finite_differences() {
        let mut rng = seeded_stream(8, 0);
        let events: Vec<CommEvent> = (0..10)
            .map(|i| {
                success(
                    [
                        standard_normal(&mut rng),
                        standard_normal(&mut rng),
                        standard_normal(&mut rng),
                        standard_normal(&mut rng),
                    ],
                    10.0 + i as f64 * 0.7,
                )
            })
            .collect();
        let (x_raw, y_raw) = regression_arrays(&events).unwrap();
        let x_std = Standardizer::fit(&x_raw);
        let y_std = Standardizer::fit_scalar(&y_raw);
        let x = x_std.transform_matrix(&x_raw);
        let y = y_raw.mapv(|v| y_std.transform_scalar(v));
        let theta = [0.9f64.ln(), 1.1f64.ln(), 1.0f64.ln(), 0.8f64.ln(), 1.3f64.ln(), 0.2f64.ln()];
        let eval = lml_and_grad(&x, &y, &theta_to_params(&theta).unwrap(), true).unwrap();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut tp = theta;
            tp[i] += h;
            let up = lml_and_grad(&x, &y, &theta_to_params(&tp).unwrap(), false)
                .unwrap()
                .value;
            tp[i] -= 2.0 * h;
            let dn = lml_and_grad(&x, &y, &theta_to_params(&tp).unwrap(), false)
                .unwrap()
                .value;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (eval.grad[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "coord {i}: {} vs {fd}",
                eval.grad[i]
            );
        }
    }

    #[test]
    fn optimized_lml_is_at_least_initial() {
        let mut rng = seeded_stream(12, 0);
        let events: Vec<CommEvent> = (0..20)
            .map(|_| {
                let p = [
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                ];
                success(p, 10.0 + 3.0 * p[0] + standard_normal(&mut rng) * 0.2)
            })
            .collect();
        let cfg = GprConfig {
            max_iters: 60,
            ..GprConfig::default()
        };
        let initial = {
            let m = fit_gpr(&events, &fixed_gpr_config(0.1)).unwrap();
            m.log_marginal_likelihood
        };
        let optimized = fit_gpr(&events, &cfg).unwrap().log_marginal_likelihood;
        assert!(
            optimized >= initial - 1e-9,
            "optimized {optimized} vs initial {initial}"
        );
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(fit_gpr(&[], &GprConfig::default()).is_err());
        assert!(fit_svgpr(&[], &SvgprConfig::default()).is_err());
    }

    #[test]
    fn posterior_variance_never_exceeds_prior() {
        let mut rng = seeded_stream(21, 0);
        let events: Vec<CommEvent> = (0..15)
            .map(|_| {
                let p = [
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                ];
                success(p, 12.0 + p[1])
            })
            .collect();
        let model = fit_gpr(&events, &fixed_gpr_config(0.1)).unwrap();
        let prior = model.y_std.inverse_scalar_variance(model.params.signal_variance);
        for _ in 0..100 {
            let q = [
                3.0 * standard_normal(&mut rng),
                3.0 * standard_normal(&mut rng),
                3.0 * standard_normal(&mut rng),
                3.0 * standard_normal(&mut rng),
            ];
            let p = predict_gpr(&model, q).unwrap();
            assert!(p.variance <= prior + 1e-9 && p.variance >= 0.0);
        }
    }

    #[test]
    fn svgpr_prior_state_predicts_prior() {
        // mu_s = 0, Sigma_s = K_ZZ: prediction equals the prior for any query.
        let mut rng = seeded_stream(30, 0);
        let events: Vec<CommEvent> = (0..6)
            .map(|_| {
                let p = [
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                ];
                success(p, 10.0 + p[0])
            })
            .collect();
        let cfg = SvgprConfig {
            epochs: 0,
            inducing_count: Some(4),
            seed: 1,
            ..SvgprConfig::default()
        };
        let mut model = fit_svgpr(&events, &cfg).unwrap();
        // Overwrite the variational state with the prior.
        let kzz = {
            let mut g = crate::kernel::gram(model.variational.z.view(), &model.params);
            let _ = &mut g;
            g
        };
        let chol = chol_psd(&kzz, 1e-10, "prior state").unwrap();
        model.variational =
            VariationalState::new(model.variational.z.clone(), Array1::zeros(4), chol.l.clone())
                .unwrap();
        let p = predict_svgpr(&model, [0.3, -0.2, 0.8, 0.4]).unwrap();
        let prior_mean = model.y_std.inverse_scalar(0.0);
        let prior_var = model
            .y_std
            .inverse_scalar_variance(model.params.signal_variance + model.gaussian_noise);
        assert!((p.value - prior_mean).abs() < 1e-6);
        assert!((p.variance - prior_var).abs() < 1e-6 * prior_var.max(1.0));
    }

    #[test]
    fn svgpr_inducing_at_query_returns_variational_mean() {
        let mut rng = seeded_stream(31, 0);
        let events: Vec<CommEvent> = (0..5)
            .map(|_| {
                let p = [
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                ];
                success(p, 10.0 + p[0])
            })
            .collect();
        let cfg = SvgprConfig {
            epochs: 0,
            inducing_count: Some(3),
            seed: 5,
            ..SvgprConfig::default()
        };
        let mut model = fit_svgpr(&events, &cfg).unwrap();
        let m_val = 0.9;
        let mut l = Array2::zeros((3, 3));
        for i in 0..3 {
            l[[i, i]] = 1e-7;
        }
        model.variational = VariationalState::new(
            model.variational.z.clone(),
            Array1::from_vec(vec![m_val; 3]),
            l,
        )
        .unwrap();
        // Query at an inducing point in map units.
        let z0 = model.variational.z.row(0).to_vec();
        let q_raw = model.x_std.inverse_point(&z0);
        let p = predict_svgpr(&model, [q_raw[0], q_raw[1], q_raw[2], q_raw[3]]).unwrap();
        // SVGPR kernel keeps a structural nugget on K_ZZ, so the row-selection
        // is approximate at that scale.
        assert!(
            (p.value - model.y_std.inverse_scalar(m_val)).abs() < 1e-3,
            "{} vs {}",
            p.value,
            model.y_std.inverse_scalar(m_val)
        );
    }

    #[test]
    fn svgpr_elbo_trace_ascends_and_matches_dense_small_case() {
        let mut rng = seeded_stream(33, 0);
        let events: Vec<CommEvent> = (0..30)
            .map(|_| {
                let p = [
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                    standard_normal(&mut rng),
                ];
                success(p, 10.0 + 2.0 * p[0] - p[2] + 0.1 * standard_normal(&mut rng))
            })
            .collect();
        let cfg = SvgprConfig {
            epochs: 150,
            batch_size: 64, // full batch
            inducing_count: Some(6),
            seed: 2,
            ..SvgprConfig::default()
        };
        let model = fit_svgpr(&events, &cfg).unwrap();
        let trace = &model.elbo_trace;
        assert!(
            trace.last().unwrap() > trace.first().unwrap(),
            "{} -> {}",
            trace.first().unwrap(),
            trace.last().unwrap()
        );
    }
}
