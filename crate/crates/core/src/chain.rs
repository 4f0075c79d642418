//! Exact analysis of a one-dimensional birth-death chain where TD's
//! fixed point is known in closed form.
//!
//! States are the non-negative integers. From state 0 the chain always
//! moves to 1; from s > 0 it moves to s+1 with probability p < 0.5 and
//! to s-1 with probability q = 1-p. Every reward is zero, so the true
//! value function vanishes, but the approximation class pins v(0) = α.
//! The expected TD(0) update then converges to v_s = α·r1^s, with r1 the
//! smaller root of r² − r/(pγ) + q/p = 0 — an exponential tail where a
//! sharp correction would have been right.
//!
//! For numerics the chain is truncated at `n_states` with a reflecting
//! top state (forward moves stay put), which keeps the transition matrix
//! stochastic and the chain reversible; the stationary tail mass beyond
//! the truncation is reported so tests can gate on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    /// Forward transition probability, in (0, 0.5).
    pub p: f64,
    /// Discount factor, in (0, 1).
    pub gamma: f64,
    /// Constrained value at state 0.
    pub alpha: f64,
    /// Truncation length for numerics.
    pub n_states: usize,
}

impl ChainModel {
    pub fn new(p: f64, gamma: f64, alpha: f64, n_states: usize) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "p must be in (0, 0.5), got {p}; for p >= 0.5 the walk drifts to infinity and has no stationary distribution"
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be in (0, 1), got {gamma}"
            )));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if n_states < 3 {
            return Err(Error::InvalidParameter(format!(
                "n_states must be >= 3, got {n_states}"
            )));
        }
        Ok(ChainModel {
            p,
            gamma,
            alpha,
            n_states,
        })
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }
}

/// Stationary distribution of the truncated chain, normalized against
/// the *infinite* chain's closed form, so `probs` sums to 1 − `tail_mass`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub probs: Vec<f64>,
    /// Mass the infinite chain puts beyond the truncation.
    pub tail_mass: f64,
}

/// Unnormalized weights are (q, 1, p/q, (p/q)², …); the infinite sum is
/// q + 1/(1 − p/q) in closed form.
pub fn stationary_distribution(model: &ChainModel) -> StationaryDistribution {
    let p = model.p;
    let q = model.q();
    let ratio = p / q;
    let z = q + 1.0 / (1.0 - ratio);
    let mut probs = Vec::with_capacity(model.n_states);
    probs.push(q / z);
    let mut w = 1.0;
    for _ in 1..model.n_states {
        probs.push(w / z);
        w *= ratio;
    }
    // Sum_{s >= N} mu(s) = (p/q)^{N-1} / (1 - p/q) / Z.
    let tail_mass = ratio.powi(model.n_states as i32 - 1) / (1.0 - ratio) / z;
    StationaryDistribution { probs, tail_mass }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharRoots {
    pub r1: f64,
    pub r2: f64,
}

/// Roots of r² − r/(pγ) + q/p = 0, real and positive for γ < 1;
/// r1 < 1 < q/p < r2 and r1·r2 = q/p.
pub fn characteristic_roots(model: &ChainModel) -> CharRoots {
    let p = model.p;
    let q = model.q();
    let g = model.gamma;
    let disc = (1.0 - 4.0 * p * q * g * g).sqrt();
    CharRoots {
        r1: (1.0 - disc) / (2.0 * p * g),
        r2: (1.0 + disc) / (2.0 * p * g),
    }
}

/// The closed-form TD fixed point v_s = α·r1^s.
pub fn analytic_td_solution(model: &ChainModel) -> Vec<f64> {
    let r1 = characteristic_roots(model).r1;
    let mut v = Vec::with_capacity(model.n_states);
    let mut pow = 1.0;
    for _ in 0..model.n_states {
        v.push(model.alpha * pow);
        pow *= r1;
    }
    v
}

/// One expected TD(0) sweep with learning rate `lr`:
/// v_s ← (1−ε)·v_s + ε·γ·(p·v_{s+1} + q·v_{s−1}) for s > 0, v_0 pinned.
/// At the reflecting top state the forward term bootstraps on itself.
pub fn expected_td_sweep(model: &ChainModel, v: &[f64], lr: f64) -> Vec<f64> {
    assert_eq!(v.len(), model.n_states, "value vector length mismatch");
    assert!(lr > 0.0 && lr <= 1.0, "lr must be in (0, 1]");
    let p = model.p;
    let q = model.q();
    let g = model.gamma;
    let n = model.n_states;
    let mut out = v.to_vec();
    for s in 1..n {
        let forward = if s + 1 < n { v[s + 1] } else { v[s] };
        out[s] = (1.0 - lr) * v[s] + lr * g * (p * forward + q * v[s - 1]);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub values: Vec<f64>,
    pub sweeps: usize,
    /// Max per-state change of the final sweep.
    pub residual: f64,
}

/// Iterate full (ε = 1) expected TD sweeps from (α, 0, …, 0) until the
/// per-state change drops below tol·(1−γ), which bounds the distance to
/// the fixed point by γ·tol via the contraction inequality.
pub fn td_fixed_point_numeric(
    model: &ChainModel,
    tol: f64,
    max_sweeps: usize,
) -> Result<FixedPointResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    let threshold = tol * (1.0 - model.gamma);
    let mut v = vec![0.0; model.n_states];
    v[0] = model.alpha;
    let mut residual = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        let next = expected_td_sweep(model, &v, 1.0);
        residual = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if residual < threshold {
            return Ok(FixedPointResult {
                values: v,
                sweeps: sweep,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        max_sweeps,
        residual,
    })
}

/// Every ordered transition (from, to, μ(from)·P(from, to)) of the
/// truncated chain. The top state's forward self-loop is included but
/// contributes nothing to difference-based sums.
fn transitions(model: &ChainModel, mu: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = model.n_states;
    let p = model.p;
    let q = model.q();
    let mut ts = Vec::with_capacity(2 * n);
    ts.push((0, 1, mu[0]));
    for s in 1..n {
        ts.push((s, s - 1, mu[s] * q));
        if s + 1 < n {
            ts.push((s, s + 1, mu[s] * p));
        } else {
            ts.push((s, s, mu[s] * p));
        }
    }
    ts
}

/// ½ Σ_{s,s'} μ(s)·P(s,s')·(e(s') − e(s))² over the truncated chain.
pub fn dirichlet_norm_sq(model: &ChainModel, e: &[f64]) -> f64 {
    assert_eq!(e.len(), model.n_states);
    let mu = stationary_distribution(model).probs;
    let mut acc = 0.0;
    for (from, to, w) in transitions(model, &mu) {
        let d = e[to] - e[from];
        acc += w * d * d;
    }
    0.5 * acc
}

/// Σ_s μ(s)·e(s)².
pub fn mu_norm_sq(model: &ChainModel, e: &[f64]) -> f64 {
    assert_eq!(e.len(), model.n_states);
    let mu = stationary_distribution(model).probs;
    mu.iter().zip(e).map(|(m, x)| m * x * x).sum()
}

/// The loss TD descends for reversible chains:
/// γ·‖e‖²_Dir + (1−γ)·‖e‖²_μ.
pub fn mixed_loss(model: &ChainModel, e: &[f64]) -> f64 {
    model.gamma * dirichlet_norm_sq(model, e) + (1.0 - model.gamma) * mu_norm_sq(model, e)
}

/// Exact gradient of `mixed_loss` over the free coordinates s > 0;
/// component 0 is fixed at zero because v(0) is pinned.
pub fn mixed_loss_gradient(model: &ChainModel, e: &[f64]) -> Vec<f64> {
    assert_eq!(e.len(), model.n_states);
    let mu = stationary_distribution(model).probs;
    let g = model.gamma;
    let mut grad = vec![0.0; model.n_states];
    for (from, to, w) in transitions(model, &mu) {
        let d = e[to] - e[from];
        if to > 0 {
            grad[to] += g * w * d;
        }
        if from > 0 {
            grad[from] -= g * w * d;
        }
    }
    for s in 1..model.n_states {
        grad[s] += (1.0 - g) * 2.0 * mu[s] * e[s];
    }
    grad
}

/// The affine approximation class a + W with a = (α, 0, 0, …) and
/// W = {v : v(constrained_index) = 0}, together with the orthogonal
/// projections Π (onto a + W) and Π₀ (onto W). Orthogonality is in
/// L²(μ), where replacing one coordinate is the nearest-point map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionSpec {
    pub constrained_index: usize,
    pub constrained_value: f64,
}

impl ProjectionSpec {
    pub fn for_model(model: &ChainModel) -> Self {
        ProjectionSpec {
            constrained_index: 0,
            constrained_value: model.alpha,
        }
    }

    /// Π: replace the constrained coordinate by α.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        out[self.constrained_index] = self.constrained_value;
        out
    }

    /// Π₀: zero the constrained coordinate.
    pub fn project_zero(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        out[self.constrained_index] = 0.0;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TsitsiklisReport {
    /// ‖ṽ − v*‖_μ.
    pub err_mu: f64,
    /// ‖Πv* − v*‖_μ, the best-in-class error (= α·√μ(0) here).
    pub projection_err_mu: f64,
    /// projection_err / (1 − γ).
    pub loose_rhs: f64,
    /// projection_err / √(1 − γ²).
    pub sharp_rhs: f64,
    pub loose_holds: bool,
    pub sharp_holds: bool,
    /// err_mu / projection_err; equals 1 exactly when there is no leakage.
    pub ratio: f64,
}

/// Check both contraction bounds for the estimate `v_tilde` against the
/// true values `v_star` (the zero function in this chain).
pub fn tsitsiklis_check(
    model: &ChainModel,
    v_tilde: &[f64],
    v_star: &[f64],
    spec: &ProjectionSpec,
) -> TsitsiklisReport {
    assert_eq!(v_tilde.len(), model.n_states);
    assert_eq!(v_star.len(), model.n_states);
    let g = model.gamma;
    let diff: Vec<f64> = v_tilde.iter().zip(v_star).map(|(a, b)| a - b).collect();
    let err_mu = mu_norm_sq(model, &diff).sqrt();
    let proj: Vec<f64> = spec
        .project(v_star)
        .iter()
        .zip(v_star)
        .map(|(a, b)| a - b)
        .collect();
    let projection_err_mu = mu_norm_sq(model, &proj).sqrt();
    let loose_rhs = projection_err_mu / (1.0 - g);
    let sharp_rhs = projection_err_mu / (1.0 - g * g).sqrt();
    TsitsiklisReport {
        err_mu,
        projection_err_mu,
        loose_rhs,
        sharp_rhs,
        loose_holds: err_mu <= loose_rhs,
        sharp_holds: err_mu <= sharp_rhs,
        ratio: err_mu / projection_err_mu,
    }
}
