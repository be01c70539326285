//! Learning probabilistic maps of underwater acoustic communication success
//! from transmit/receive event logs.
//!
//! A communication map is a function from a pair of planar vehicle positions
//! (transmitter, receiver) to a prediction of link quality: either the SNR of
//! a decoded packet (Gaussian process regression) or the probability that a
//! packet is decoded at all (Gaussian process binary classification). This
//! crate implements
//!
//! - exact GP regression on SNR ([`regression::GprModel`]),
//! - sparse variational GP regression ([`regression::SvgprModel`]),
//! - full Laplace-approximated GP classification ([`laplace_gpc`]),
//! - sparse variational GP classification with Gauss-Hermite expected
//!   log-likelihood ([`svgpc`]),
//! - a noisy-input classifier that marginalizes navigation uncertainty with
//!   an amortized recognition network ([`noisy_input`]),
//!
//! together with an event-log schema and mission simulator ([`data`]) and an
//! evaluation harness ([`eval`]) computing the ratio/NLL metrics over
//! stratified validation splits.

pub mod data;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod laplace_gpc;
pub mod noisy_input;
pub mod optim;
pub mod regression;
pub mod svgpc;

pub(crate) mod sparse;

pub use error::{Error, Result};

/// Model input: standardized or raw `(tx_x, tx_y, rx_x, rx_y)`.
pub const INPUT_DIM: usize = 4;

/// Outcome of a single map query.
///
/// For regression `value` is the predicted mean SNR in dB and `variance` its
/// predictive variance in dB² (including observation noise for the sparse
/// model). For classification `value` is the probability of successful
/// communication and `variance` the variance of the latent function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionResult {
    pub value: f64,
    pub variance: f64,
}

/// Anything that can be queried at a deterministic 4-D input.
pub trait Predictor {
    fn predict(&self, x: [f64; INPUT_DIM]) -> Result<PredictionResult>;
}

pub(crate) fn require_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}
