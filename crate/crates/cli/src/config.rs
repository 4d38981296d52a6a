//! Experiment configuration, read from TOML.
//!
//! ```toml
//! name = "lstm-fedavg"
//! setting = "federated"          # individual | centralized | federated
//! seeds = [0, 1]
//! output_dir = "runs"
//!
//! [data.synthetic]               # or: [data] paths = ["bs1.csv", ...]
//! n_clients = 3
//! days = 2
//! seed = 7
//!
//! [preprocess]
//! window = 10
//! scaling = "global"
//! flood_cap = { lower = 10.0, upper = 90.0 }
//!
//! [model]
//! architecture = "lstm"
//!
//! [federation]
//! rounds = 30
//! local_epochs = 3
//!
//! [aggregator]
//! strategy = "FedProx"
//!
//! [grid]
//! mu = [0.001, 0.01, 0.1, 1.0]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fedtraffic::aggregation::{AggregatorConfig, GridSpec, Strategy};
use fedtraffic::dataio::{Percentiles, PreprocessConfig, ScalerScope, FEATURES};
use fedtraffic::federation::{EpochBudget, FederationConfig};
use fedtraffic::neuralnet::{Architecture, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::synthetic::SyntheticSpec;
use crate::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Individual,
    Centralized,
    Federated,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Self::Individual => "individual",
            Self::Centralized => "centralized",
            Self::Federated => "federated",
        }
    }
}

/// Where client traces come from: CSV files (one per client, id = file
/// stem) or the synthetic generator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_scaling")]
    pub scaling: ScalerScope,
    /// Flooring/capping percentiles; omit to disable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flood_cap: Option<Percentiles>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub flood_cap_per_client: BTreeMap<String, Percentiles>,
}

fn default_window() -> usize {
    10
}

fn default_scaling() -> ScalerScope {
    ScalerScope::Global
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            window: default_window(),
            scaling: default_scaling(),
            flood_cap: Some(Percentiles { lower: 10.0, upper: 90.0 }),
            flood_cap_per_client: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: Architecture,
    /// Replaces every layer width; omit for the reference sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_learning_rate() -> f64 {
    1e-3
}

fn default_batch_size() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_fraction")]
    pub sampling_fraction: f64,
    /// Fine-tune the best global model on each client before testing.
    #[serde(default)]
    pub fine_tune: bool,
    #[serde(default = "default_local_epochs")]
    pub fine_tune_epochs: usize,
}

fn default_rounds() -> usize {
    30
}

fn default_local_epochs() -> usize {
    3
}

fn default_fraction() -> f64 {
    1.0
}

impl Default for FederationSection {
    fn default() -> Self {
        Self {
            rounds: default_rounds(),
            local_epochs: default_local_epochs(),
            sampling_fraction: default_fraction(),
            fine_tune: false,
            fine_tune_epochs: default_local_epochs(),
        }
    }
}

/// Strategy plus optional overrides of its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSection {
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl Default for AggregatorSection {
    fn default() -> Self {
        Self::from(AggregatorConfig::new(Strategy::FedAvg))
    }
}

impl From<AggregatorConfig> for AggregatorSection {
    fn from(c: AggregatorConfig) -> Self {
        Self {
            strategy: c.strategy,
            eta: Some(c.eta),
            mu: Some(c.mu),
            beta: Some(c.beta),
            rho: Some(c.rho),
            beta1: Some(c.beta1),
            beta2: Some(c.beta2),
            lambda: Some(c.lambda),
        }
    }
}

impl AggregatorSection {
    pub fn resolve(&self) -> AggregatorConfig {
        let d = AggregatorConfig::new(self.strategy);
        AggregatorConfig {
            strategy: self.strategy,
            eta: self.eta.unwrap_or(d.eta),
            mu: self.mu.unwrap_or(d.mu),
            beta: self.beta.unwrap_or(d.beta),
            rho: self.rho.unwrap_or(d.rho),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            lambda: self.lambda.unwrap_or(d.lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub setting: Setting,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    pub model: ModelSection,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub aggregator: AggregatorSection,
    #[serde(default, skip_serializing_if = "GridSpec::is_empty")]
    pub grid: GridSpec,
    /// Epoch budget of the individual and centralized settings.
    #[serde(default)]
    pub training: EpochBudget,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative data paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            for p in &mut cfg.data.paths {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, msg: &str| Err(ConfigError::invalid(field, msg));
        if self.name.trim().is_empty() {
            return invalid("name", "must not be empty");
        }
        if self.name.contains(['/', '\\']) {
            return invalid("name", "must not contain path separators");
        }
        if self.seeds.is_empty() {
            return invalid("seeds", "need at least one seed");
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return invalid("seeds", "seeds must be distinct");
        }
        match (&self.data.paths.is_empty(), &self.data.synthetic) {
            (true, None) => return invalid("data", "give either paths or a synthetic section"),
            (false, Some(_)) => return invalid("data", "paths and synthetic are mutually exclusive"),
            (_, Some(s)) => s.validate("data.synthetic")?,
            _ => {}
        }
        if self.preprocess.window == 0 {
            return invalid("preprocess.window", "must be at least 1");
        }
        let percentiles = self
            .preprocess
            .flood_cap
            .iter()
            .map(|p| ("preprocess.flood_cap".to_string(), p))
            .chain(
                self.preprocess
                    .flood_cap_per_client
                    .iter()
                    .map(|(id, p)| (format!("preprocess.flood_cap_per_client.{id}"), p)),
            );
        for (field, p) in percentiles {
            if !(0.0 < p.lower && p.lower < p.upper && p.upper < 100.0) {
                return invalid(&field, "need 0 < lower < upper < 100");
            }
        }
        let m = &self.model;
        if m.width == Some(0) {
            return invalid("model.width", "must be at least 1");
        }
        if !(m.learning_rate > 0.0 && m.learning_rate.is_finite()) {
            return invalid("model.learning_rate", "must be positive");
        }
        if m.batch_size == 0 {
            return invalid("model.batch_size", "must be at least 1");
        }
        let f = &self.federation;
        if !(f.sampling_fraction > 0.0 && f.sampling_fraction <= 1.0) {
            return invalid("federation.sampling_fraction", "must lie in (0, 1]");
        }
        if self.setting == Setting::Federated && f.local_epochs == 0 {
            return invalid("federation.local_epochs", "must be at least 1");
        }
        if let Err(e) = self.aggregator.resolve().validate() {
            return invalid("aggregator", &e.to_string());
        }
        for (name, values) in [
            ("eta", &self.grid.eta),
            ("mu", &self.grid.mu),
            ("beta", &self.grid.beta),
            ("rho", &self.grid.rho),
            ("lambda", &self.grid.lambda),
        ] {
            if values.iter().any(|v| !v.is_finite()) {
                return invalid(&format!("grid.{name}"), "values must be finite");
            }
        }
        for (i, agg) in self.aggregators().iter().enumerate() {
            if let Err(e) = agg.validate() {
                return invalid(&format!("grid[{i}]"), &e.to_string());
            }
        }
        if let EpochBudget::EarlyStopping { max_epochs, patience } = self.training {
            if max_epochs == 0 || patience == 0 {
                return invalid("training", "max_epochs and patience must be at least 1");
            }
        }
        Ok(())
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            window: self.preprocess.window,
            flood_cap: self.preprocess.flood_cap,
            flood_cap_per_client: self.preprocess.flood_cap_per_client.clone(),
            scaling: self.preprocess.scaling,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::new(self.model.architecture, self.preprocess.window, FEATURES.len());
        if let Some(w) = self.model.width {
            spec = spec.with_width(w);
        }
        spec.learning_rate = self.model.learning_rate;
        spec.batch_size = self.model.batch_size;
        spec
    }

    /// One aggregator per grid cell, in cartesian-product order.
    pub fn aggregators(&self) -> Vec<AggregatorConfig> {
        self.grid.expand(&self.aggregator.resolve())
    }

    pub fn federation_config(&self, aggregator: AggregatorConfig, seed: u64) -> FederationConfig {
        FederationConfig {
            rounds: self.federation.rounds,
            local_epochs: self.federation.local_epochs,
            sampling_fraction: self.federation.sampling_fraction,
            aggregator,
            model: self.model_spec(),
            seed,
        }
    }

    /// The config with every default made explicit, as recorded in a run
    /// manifest. Running it again gives the same results.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.aggregator = AggregatorSection::from(self.aggregator.resolve());
        if let Some(s) = &mut out.data.synthetic {
            if s.clients.is_empty() {
                s.clients = s.client_params();
            }
        }
        out
    }
}
