//! Shared optimization and numerical infrastructure: the gradient tape,
//! Adam, Gauss-Hermite rules, the trainable-parameter registry, and seeded
//! random streams.

pub mod adam;
pub mod gh;
pub mod params;
pub mod rng;
pub mod tape;

pub use adam::AdamState;
pub use gh::{gh_nodes, GhRule};
pub use params::{value_and_grad, GroupHandle, ParamVector};
pub use rng::{seeded_stream, standard_normal, Stream};
pub use tape::{Real, Tape, Var};

/// Inverse of softplus: returns x with softplus(x) = y (y > 0).
pub fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y - 1) computed stably.
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
