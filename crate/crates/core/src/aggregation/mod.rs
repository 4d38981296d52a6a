//! Server-side aggregation strategies.
//!
//! Deltas are always `w_local − w_global` and every strategy moves the
//! global model by adding an η-scaled step, so FedAvg with η = 1 lands on
//! the sample-weighted average of the client models.
//!
//! Where a strategy's step reduces to that average (FedAvg and FedProx at
//! η = 1, FedAvgM's ΔW part, FedNova with uniform local step counts), the
//! average is formed directly from the client models rather than as
//! `w + ΔW`. The two are equal in exact arithmetic; the direct form keeps a
//! single-client round bit-exact and lets the degenerate configurations of
//! the other strategies reproduce FedAvg exactly.

mod grid;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuralnet::ParameterVector;

pub use grid::GridSpec;

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("no client updates to aggregate")]
    Empty,
    #[error("update from {client} does not match the global layout")]
    LayoutMismatch { client: String },
    #[error("duplicate update from client {0}")]
    DuplicateClient(String),
    #[error("invalid update from {client}: {reason}")]
    InvalidUpdate { client: String, reason: String },
    #[error("invalid aggregator config: {0}")]
    InvalidConfig(String),
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("server state has {found} values, model has {expected}")]
    StateMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    SimpleAvg,
    MedianAvg,
    FedAvg,
    FedProx,
    FedAvgM,
    FedNova,
    FedAdagrad,
    FedYogi,
    FedAdam,
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Self::SimpleAvg,
        Self::MedianAvg,
        Self::FedAvg,
        Self::FedProx,
        Self::FedAvgM,
        Self::FedNova,
        Self::FedAdagrad,
        Self::FedYogi,
        Self::FedAdam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SimpleAvg => "SimpleAvg",
            Self::MedianAvg => "MedianAvg",
            Self::FedAvg => "FedAvg",
            Self::FedProx => "FedProx",
            Self::FedAvgM => "FedAvgM",
            Self::FedNova => "FedNova",
            Self::FedAdagrad => "FedAdagrad",
            Self::FedYogi => "FedYogi",
            Self::FedAdam => "FedAdam",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Self::FedAdagrad | Self::FedYogi | Self::FedAdam)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = AggregationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| AggregationError::UnknownStrategy(s.to_string()))
    }
}

/// Strategy plus every hyper-parameter any strategy reads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub strategy: Strategy,
    /// Server learning rate η.
    pub eta: f64,
    /// Proximal weight, applied client-side by FedProx.
    pub mu: f64,
    /// FedAvgM server momentum.
    pub beta: f64,
    /// FedNova server momentum on the normalized update.
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Adaptivity constant added to √u.
    pub lambda: f64,
}

impl AggregatorConfig {
    /// Defaults: η = 1 for the averaging family, η = 0.1 and λ = 1e−3 for
    /// the adaptive family; β1 = 0 for FedAdagrad, β1 = 0.9 and β2 = 0.99
    /// for FedYogi and FedAdam.
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            eta: if strategy.is_adaptive() { 0.1 } else { 1.0 },
            mu: if strategy == Strategy::FedProx { 0.01 } else { 0.0 },
            beta: if strategy == Strategy::FedAvgM { 0.9 } else { 0.0 },
            rho: 0.0,
            beta1: if strategy == Strategy::FedAdagrad { 0.0 } else { 0.9 },
            beta2: 0.99,
            lambda: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<(), AggregationError> {
        let unit = |v: f64, name: &str| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(AggregationError::InvalidConfig(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        unit(self.beta, "beta")?;
        unit(self.beta1, "beta1")?;
        unit(self.beta2, "beta2")?;
        unit(self.rho, "rho")?;
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(AggregationError::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(AggregationError::InvalidConfig(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(AggregationError::InvalidConfig(format!("mu must be >= 0, got {}", self.mu)));
        }
        Ok(())
    }

    /// The proximal weight clients should use, if any.
    pub fn client_mu(&self) -> Option<f64> {
        (self.strategy == Strategy::FedProx).then_some(self.mu)
    }
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self::new(Strategy::FedAvg)
    }
}

/// Persistent server accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    /// Momentum (FedAvgM, FedNova) or second moment (adaptive family).
    pub u: Vec<f64>,
    /// First moment of the adaptive family.
    pub m: Vec<f64>,
    pub round: u64,
}

impl ServerState {
    pub fn new(len: usize) -> Self {
        Self { u: vec![0.0; len], m: vec![0.0; len], round: 0 }
    }

    pub fn for_model(global: &ParameterVector) -> Self {
        Self::new(global.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    /// `w_local − w_global`.
    pub delta: ParameterVector,
    /// The locally trained model, when the client sent it.
    pub local: Option<ParameterVector>,
    pub n_samples: usize,
    pub local_steps: usize,
}

impl ClientUpdate {
    pub fn from_local(
        client_id: impl Into<String>,
        global: &ParameterVector,
        local: ParameterVector,
        n_samples: usize,
        local_steps: usize,
    ) -> Result<Self, AggregationError> {
        let client_id = client_id.into();
        if local.layout != global.layout {
            return Err(AggregationError::LayoutMismatch { client: client_id });
        }
        let delta = local.values.iter().zip(&global.values).map(|(l, g)| l - g).collect();
        let delta = ParameterVector { layout: global.layout.clone(), values: delta };
        Ok(Self { client_id, delta, local: Some(local), n_samples, local_steps })
    }

    pub fn from_delta(client_id: impl Into<String>, delta: ParameterVector, n_samples: usize, local_steps: usize) -> Self {
        Self { client_id: client_id.into(), delta, local: None, n_samples, local_steps }
    }

    /// The client's model: the one it sent, else `global + delta`.
    fn model(&self, global: &[f64]) -> Vec<f64> {
        match &self.local {
            Some(l) => l.values.clone(),
            None => global.iter().zip(&self.delta.values).map(|(g, d)| g + d).collect(),
        }
    }
}

fn check_updates<'a>(
    updates: &'a [ClientUpdate],
    layout_of: &ParameterVector,
) -> Result<Vec<&'a ClientUpdate>, AggregationError> {
    if updates.is_empty() {
        return Err(AggregationError::Empty);
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    for pair in sorted.windows(2) {
        if pair[0].client_id == pair[1].client_id {
            return Err(AggregationError::DuplicateClient(pair[0].client_id.clone()));
        }
    }
    for u in &sorted {
        let bad_local = u.local.as_ref().is_some_and(|l| l.layout != layout_of.layout);
        if u.delta.layout != layout_of.layout || bad_local {
            return Err(AggregationError::LayoutMismatch { client: u.client_id.clone() });
        }
        if u.n_samples == 0 || u.local_steps == 0 {
            return Err(AggregationError::InvalidUpdate {
                client: u.client_id.clone(),
                reason: "n_samples and local_steps must be at least 1".into(),
            });
        }
    }
    Ok(sorted)
}

fn total_samples(updates: &[&ClientUpdate]) -> usize {
    updates.iter().map(|u| u.n_samples).sum()
}

/// Σ c_i·x_i, accumulated in the given (client-id) order starting from the
/// first term.
fn weighted_sum<'a>(terms: impl IntoIterator<Item = (f64, &'a [f64])>) -> Vec<f64> {
    let mut it = terms.into_iter();
    let (c0, x0) = it.next().expect("at least one term");
    let mut acc: Vec<f64> = x0.iter().map(|v| c0 * v).collect();
    for (c, x) in it {
        for (a, v) in acc.iter_mut().zip(x) {
            *a += c * v;
        }
    }
    acc
}

/// Sample-weighted pseudo-gradient ΔW = Σ |D_i|/n · Δw_i.
pub fn weighted_delta(updates: &[ClientUpdate]) -> Result<ParameterVector, AggregationError> {
    let first = updates.first().ok_or(AggregationError::Empty)?;
    let sorted = check_updates(updates, &first.delta)?;
    Ok(ParameterVector { layout: first.delta.layout.clone(), values: pseudo_gradient(&sorted) })
}

fn pseudo_gradient(sorted: &[&ClientUpdate]) -> Vec<f64> {
    let n = total_samples(sorted) as f64;
    weighted_sum(sorted.iter().map(|u| (u.n_samples as f64 / n, u.delta.values.as_slice())))
}

/// Σ |D_i|/n · w_i over the client models.
fn weighted_model_average(sorted: &[&ClientUpdate], global: &[f64]) -> Vec<f64> {
    let n = total_samples(sorted) as f64;
    let models: Vec<Vec<f64>> = sorted.iter().map(|u| u.model(global)).collect();
    weighted_sum(sorted.iter().zip(&models).map(|(u, m)| (u.n_samples as f64 / n, m.as_slice())))
}

/// Three-way sign with sign(0) = 0.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        (values[k / 2 - 1] + values[k / 2]) / 2.0
    }
}

/// One server round: returns the new global model and the updated state.
pub fn aggregate(
    config: &AggregatorConfig,
    state: &ServerState,
    global: &ParameterVector,
    updates: &[ClientUpdate],
) -> Result<(ParameterVector, ServerState), AggregationError> {
    config.validate()?;
    let sorted = check_updates(updates, global)?;
    if state.u.len() != global.len() || state.m.len() != global.len() {
        return Err(AggregationError::StateMismatch { expected: global.len(), found: state.u.len() });
    }
    let w = &global.values;
    let mut next = state.clone();
    next.round += 1;
    let eta = config.eta;

    let values = match config.strategy {
        Strategy::SimpleAvg => {
            let k = sorted.len() as f64;
            let models: Vec<Vec<f64>> = sorted.iter().map(|u| u.model(w)).collect();
            weighted_sum(models.iter().map(|m| (1.0 / k, m.as_slice())))
        }
        Strategy::MedianAvg => {
            let models: Vec<Vec<f64>> = sorted.iter().map(|u| u.model(w)).collect();
            let mut column = vec![0.0; models.len()];
            (0..w.len())
                .map(|j| {
                    for (c, m) in column.iter_mut().zip(&models) {
                        *c = m[j];
                    }
                    median(&mut column)
                })
                .collect()
        }
        Strategy::FedAvg | Strategy::FedProx => {
            if eta == 1.0 {
                weighted_model_average(&sorted, w)
            } else {
                let dw = pseudo_gradient(&sorted);
                w.iter().zip(&dw).map(|(w, d)| w + eta * d).collect()
            }
        }
        Strategy::FedAvgM => {
            // u ← β·u + ΔW and w ← w + u, applied as (w + ΔW) + β·u_prev.
            let dw = pseudo_gradient(&sorted);
            let avg = weighted_model_average(&sorted, w);
            let beta = config.beta;
            for (u, d) in next.u.iter_mut().zip(&dw) {
                *u = beta * *u + d;
            }
            avg.iter().zip(&state.u).map(|(a, u)| a + beta * u).collect()
        }
        Strategy::FedNova => fed_nova(config, &sorted, w, state, &mut next),
        Strategy::FedAdagrad | Strategy::FedYogi | Strategy::FedAdam => {
            let dw = pseudo_gradient(&sorted);
            let (b1, b2, lambda) = (config.beta1, config.beta2, config.lambda);
            let mut out = w.clone();
            for j in 0..w.len() {
                let d = dw[j];
                let d2 = d * d;
                let m = b1 * next.m[j] + (1.0 - b1) * d;
                let u = next.u[j];
                let u = match config.strategy {
                    Strategy::FedAdagrad => u + d2,
                    Strategy::FedYogi => u - (1.0 - b2) * d2 * sign(u - d2),
                    _ => b2 * u + (1.0 - b2) * d2,
                };
                next.m[j] = m;
                next.u[j] = u;
                out[j] += eta * m / (u.sqrt() + lambda);
            }
            out
        }
    };
    Ok((ParameterVector { layout: global.layout.clone(), values }, next))
}

/// Normalized averaging: client deltas are divided by their step counts and
/// rescaled by the sample-weighted mean step count τ_eff.
fn fed_nova(
    config: &AggregatorConfig,
    sorted: &[&ClientUpdate],
    w: &[f64],
    state: &ServerState,
    next: &mut ServerState,
) -> Vec<f64> {
    let n = total_samples(sorted);
    // Integer numerator keeps τ_eff exact when every τ_i is equal.
    let steps: u128 = sorted.iter().map(|u| u.n_samples as u128 * u.local_steps as u128).sum();
    let tau_eff = steps as f64 / n as f64;
    let coeffs: Vec<f64> = sorted
        .iter()
        .map(|u| u.n_samples as f64 / n as f64 * (tau_eff / u.local_steps as f64))
        .collect();
    let normalized = weighted_sum(coeffs.iter().zip(sorted).map(|(&c, u)| (c, u.delta.values.as_slice())));
    let rho = config.rho;
    for (u, d) in next.u.iter_mut().zip(&normalized) {
        *u = rho * *u + d;
    }
    let uniform = sorted.iter().all(|u| u.local_steps == sorted[0].local_steps);
    if uniform && config.eta == 1.0 {
        // The coefficients are exactly |D_i|/n here, so the step is the
        // plain weighted average plus the momentum carried over.
        let avg = weighted_model_average(sorted, w);
        avg.iter().zip(&state.u).map(|(a, u)| a + rho * u).collect()
    } else {
        w.iter().zip(&next.u).map(|(w, u)| w + config.eta * u).collect()
    }
}

/// μ/2·‖w − anchor‖².
pub fn proximal_loss_term(w: &ParameterVector, anchor: &ParameterVector, mu: f64) -> Result<f64, AggregationError> {
    if w.layout != anchor.layout {
        return Err(AggregationError::LayoutMismatch { client: "anchor".into() });
    }
    if mu == 0.0 {
        return Ok(0.0);
    }
    Ok(mu / 2.0 * w.values.iter().zip(&anchor.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
}

/// Gradient of [`proximal_loss_term`]: μ·(w − anchor).
pub fn proximal_gradient(w: &ParameterVector, anchor: &ParameterVector, mu: f64) -> Result<ParameterVector, AggregationError> {
    if w.layout != anchor.layout {
        return Err(AggregationError::LayoutMismatch { client: "anchor".into() });
    }
    let mut g = vec![0.0; w.len()];
    add_proximal_gradient(&w.values, &anchor.values, mu, &mut g);
    Ok(ParameterVector { layout: w.layout.clone(), values: g })
}

/// Adds μ·(w − anchor) into `grad`.
pub fn add_proximal_gradient(w: &[f64], anchor: &[f64], mu: f64, grad: &mut [f64]) {
    for ((g, a), b) in grad.iter_mut().zip(w).zip(anchor) {
        *g += mu * (a - b);
    }
}
