use serde::{Deserialize, Serialize};

use super::{AggregatorConfig, Strategy};

/// Value lists for a hyper-parameter search. Empty lists keep the base
/// config's value; the result is the cartesian product of the rest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mu: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rho: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<f64>,
}

impl GridSpec {
    /// The standard search space for each strategy.
    pub fn reference(strategy: Strategy) -> Self {
        let mut g = Self::default();
        match strategy {
            Strategy::FedProx => g.mu = vec![1e-3, 1e-2, 1e-1, 1.0],
            Strategy::FedAvgM => g.beta = vec![0.0, 0.7, 0.9, 0.97, 0.99, 0.997],
            Strategy::FedNova => g.rho = vec![0.0, 1e-3, 1e-2, 1e-1, 0.99],
            Strategy::FedAdagrad | Strategy::FedYogi | Strategy::FedAdam => {
                g.eta = vec![1e-2, 1e-1, 1.0];
                g.lambda = vec![1e-4, 1e-3, 1e-2, 1e-1];
            }
            Strategy::SimpleAvg | Strategy::MedianAvg | Strategy::FedAvg => {}
        }
        g
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty() && self.mu.is_empty() && self.beta.is_empty() && self.rho.is_empty() && self.lambda.is_empty()
    }

    /// Number of configurations [`GridSpec::expand`] yields.
    pub fn size(&self) -> usize {
        [&self.eta, &self.mu, &self.beta, &self.rho, &self.lambda]
            .iter()
            .map(|v| v.len().max(1))
            .product()
    }

    pub fn expand(&self, base: &AggregatorConfig) -> Vec<AggregatorConfig> {
        let axis = |v: &Vec<f64>, default: f64| if v.is_empty() { vec![default] } else { v.clone() };
        let mut out = Vec::with_capacity(self.size());
        for &eta in &axis(&self.eta, base.eta) {
            for &mu in &axis(&self.mu, base.mu) {
                for &beta in &axis(&self.beta, base.beta) {
                    for &rho in &axis(&self.rho, base.rho) {
                        for &lambda in &axis(&self.lambda, base.lambda) {
                            out.push(AggregatorConfig { eta, mu, beta, rho, lambda, ..*base });
                        }
                    }
                }
            }
        }
        out
    }
}
