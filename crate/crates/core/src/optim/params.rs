//! Flat trainable-parameter vector with a named-group registry.
//!
//! All constrained quantities (lengthscales, variances, factor diagonals)
//! are stored in unconstrained form (log or inverse-softplus); the model
//! modules own the transforms. The registry exists so optimizer failures can
//! name the offending group and so groups can be frozen.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::optim::tape::{Tape, Var};

#[derive(Debug, Clone)]
struct Group {
    name: &'static str,
    range: Range<usize>,
    trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupHandle(usize);

#[derive(Debug, Clone, Default)]
pub struct ParamVector {
    values: Vec<f64>,
    groups: Vec<Group>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a named group; slices partition the vector in push order.
    pub fn push_group(&mut self, name: &'static str, values: &[f64], trainable: bool) -> GroupHandle {
        let start = self.values.len();
        self.values.extend_from_slice(values);
        self.groups.push(Group {
            name,
            range: start..self.values.len(),
            trainable,
        });
        GroupHandle(self.groups.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slice(&self, h: GroupHandle) -> &[f64] {
        &self.values[self.groups[h.0].range.clone()]
    }

    pub fn range(&self, h: GroupHandle) -> Range<usize> {
        self.groups[h.0].range.clone()
    }

    pub fn group_name_of(&self, index: usize) -> &'static str {
        self.groups
            .iter()
            .find(|g| g.range.contains(&index))
            .map(|g| g.name)
            .unwrap_or("unknown")
    }

    /// Zeroes gradient entries of non-trainable groups.
    pub fn mask_frozen(&self, grad: &mut [f64]) {
        for g in &self.groups {
            if !g.trainable {
                for gi in &mut grad[g.range.clone()] {
                    *gi = 0.0;
                }
            }
        }
    }

    /// Errors with group attribution if any gradient entry is non-finite.
    pub fn check_gradient(&self, grad: &[f64]) -> Result<()> {
        for (i, g) in grad.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::Optimization(format!(
                    "non-finite gradient in parameter group '{}' (index {i})",
                    self.group_name_of(i)
                )));
            }
        }
        Ok(())
    }
}

/// Evaluates `objective` on the tape and returns its value and the gradient
/// with respect to every parameter. The gradient contract is agreement with
/// central finite differences to 1e-4 relative error per coordinate (with
/// any stochastic terms frozen by the caller).
pub fn value_and_grad<F>(tape: &mut Tape, params: &ParamVector, objective: F) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    tape.reset();
    let leaves: Vec<Var> = params.values().iter().map(|&v| tape.leaf(v)).collect();
    let out = objective(tape, &leaves)?;
    if !out.value().is_finite() {
        return Err(Error::Optimization(format!(
            "objective evaluated to non-finite value {}",
            out.value()
        )));
    }
    let adjoints = tape.gradient(out);
    let grad = adjoints[..params.len()].to_vec();
    params.check_gradient(&grad)?;
    Ok((out.value(), grad))
}
