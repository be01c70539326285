//! Gauss-Hermite quadrature rules for the weight function e^{-t²}.
//!
//! Nodes and weights come from the Golub-Welsch construction: the nodes are
//! the eigenvalues of the symmetric tridiagonal Jacobi matrix of the Hermite
//! recurrence (zero diagonal, off-diagonal sqrt(k/2)) and the weights are
//! sqrt(pi) times the squared first eigenvector components. Rules are
//! symmetrized exactly about zero so odd moments vanish identically.

use crate::error::{Error, Result};

/// Quadrature nodes `t_j` and weights `w_j` with `sum w_j = sqrt(pi)`.
#[derive(Debug, Clone)]
pub struct GhRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GhRule {
    /// Integrates f against e^{-t²} dt.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

pub const GH_MIN_NODES: usize = 2;
pub const GH_MAX_NODES: usize = 64;

/// Builds the m-point Gauss-Hermite rule.
pub fn gh_nodes(m: usize) -> Result<GhRule> {
    if !(GH_MIN_NODES..=GH_MAX_NODES).contains(&m) {
        return Err(Error::InvalidParameter(format!(
            "Gauss-Hermite node count {m} outside [{GH_MIN_NODES}, {GH_MAX_NODES}]"
        )));
    }
    let mut diag = vec![0.0; m];
    // e[k] couples rows k-1 and k (JAMA/EISPACK convention, e[0] unused).
    let mut offdiag = vec![0.0; m];
    for (k, e) in offdiag.iter_mut().enumerate().skip(1) {
        *e = (k as f64 / 2.0).sqrt();
    }
    let first_row = tql2_first_components(&mut diag, &mut offdiag)?;

    // Sort by node and symmetrize exactly about zero.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));
    let mut nodes: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut weights: Vec<f64> = order
        .iter()
        .map(|&i| std::f64::consts::PI.sqrt() * first_row[i] * first_row[i])
        .collect();
    for j in 0..m / 2 {
        let k = m - 1 - j;
        let x = 0.5 * (nodes[k] - nodes[j]);
        let w = 0.5 * (weights[j] + weights[k]);
        nodes[j] = -x;
        nodes[k] = x;
        weights[j] = w;
        weights[k] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }

    let total: f64 = weights.iter().sum();
    if (total - std::f64::consts::PI.sqrt()).abs() > 1e-10 {
        return Err(Error::Optimization(format!(
            "Gauss-Hermite weights sum to {total}, expected sqrt(pi)"
        )));
    }
    Ok(GhRule { nodes, weights })
}

/// Symmetric tridiagonal QL with implicit shifts, tracking only the first
/// row of the eigenvector matrix (all Golub-Welsch needs). Ported from the
/// EISPACK tql2 routine.
fn tql2_first_components(d: &mut [f64], e: &mut [f64]) -> Result<Vec<f64>> {
    let n = d.len();
    let mut v0 = vec![0.0; n];
    v0[0] = 1.0;
    if n == 1 {
        return Ok(v0);
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = 2f64.powi(-52);
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 50 {
                    return Err(Error::Optimization(
                        "tridiagonal eigenvalue iteration did not converge".into(),
                    ));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let gg = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * gg;
                    d[i + 1] = h + s * (c * gg + s * d[i]);
                    let hv = v0[i + 1];
                    v0[i + 1] = s * v0[i] + c * hv;
                    v0[i] = c * v0[i] - s * hv;
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(v0)
}
