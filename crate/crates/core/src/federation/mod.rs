//! The three learning settings: individual, centralized and federated.

mod ledger;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{aggregate, AggregationError, AggregatorConfig, ClientUpdate, ServerState};
use crate::dataio::{ClientData, DataError, WindowedDataset};
use crate::metrics::{evaluate_forecasts, MetricError};
use crate::neuralnet::{
    init_model, EpochHook, LocalState, Model, ModelError, ModelSpec, ParameterVector, Proximal, TrainReport, Trainer,
};

pub use ledger::{
    account_communication, account_schedule, bytes_to_mb, projected_total_bytes, ClientTraffic, CommunicationLedger,
    BYTES_PER_MB,
};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
    #[error("no clients")]
    NoClients,
    #[error("no training windows{0}")]
    EmptyTraining(String),
    #[error("round {requested} requested but only {recorded} recorded")]
    RoundOutOfRange { requested: usize, recorded: usize },
}

/// Rows per forward call during evaluation.
const EVAL_CHUNK: usize = 512;

/// Guards `floor(f·N)` against products like 0.29·100 = 28.999…
const SAMPLE_EPS: f64 = 1e-9;

/// `max(1, floor(f·N))`.
pub fn sample_size(n_clients: usize, f: f64) -> Result<usize, FederationError> {
    if n_clients == 0 {
        return Err(FederationError::NoClients);
    }
    if !(f > 0.0 && f <= 1.0) {
        return Err(FederationError::InvalidConfig(format!("sampling fraction must lie in (0, 1], got {f}")));
    }
    Ok(((f * n_clients as f64 + SAMPLE_EPS).floor() as usize).clamp(1, n_clients))
}

/// Uniform sample without replacement, deterministic in `(seed, round)`,
/// returned in the input order.
pub fn sample_clients(client_ids: &[String], f: f64, round: usize, seed: u64) -> Result<Vec<String>, FederationError> {
    let k = sample_size(client_ids.len(), f)?;
    if k == client_ids.len() {
        return Ok(client_ids.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    let mut picked = rand::seq::index::sample(&mut rng, client_ids.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| client_ids[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub sampling_fraction: f64,
    pub aggregator: AggregatorConfig,
    pub model: ModelSpec,
    pub seed: u64,
}

impl FederationConfig {
    pub fn new(model: ModelSpec, aggregator: AggregatorConfig) -> Self {
        Self { rounds: 30, local_epochs: 3, sampling_fraction: 1.0, aggregator, model, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), FederationError> {
        if !(self.sampling_fraction > 0.0 && self.sampling_fraction <= 1.0) {
            return Err(FederationError::InvalidConfig(format!(
                "sampling_fraction must lie in (0, 1], got {}",
                self.sampling_fraction
            )));
        }
        self.aggregator.validate()?;
        self.model.validate()?;
        Ok(())
    }
}

/// One client's part in a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRound {
    pub client_id: String,
    pub sampled: bool,
    /// Mean training loss of the last local epoch, for sampled clients.
    pub train_loss: Option<f64>,
    pub local_steps: usize,
    pub n_samples: usize,
    /// Global model after aggregation, on this client's validation windows.
    pub val_mse: Option<f64>,
    /// Same, in original units, averaged over the targets.
    pub val_mae: Option<f64>,
    pub n_val: usize,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub sampled: Vec<String>,
    pub clients: Vec<ClientRound>,
    /// Validation-count-weighted mean of the per-client validation MSE.
    pub val_mse: f64,
    pub val_mae: f64,
    pub server_received_bytes: u64,
    pub server_sent_bytes: u64,
}

impl RoundRecord {
    pub fn total_bytes(&self) -> u64 {
        self.server_received_bytes + self.server_sent_bytes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationHistory {
    pub rounds: Vec<RoundRecord>,
    /// Round with the lowest aggregated validation MSE (earliest on ties);
    /// `None` when no round ran.
    pub best_round: Option<usize>,
    pub best_global: ParameterVector,
    pub final_global: ParameterVector,
    pub payload_bytes: u64,
}

/// Earliest round minimizing aggregated validation MSE.
pub fn best_round(rounds: &[RoundRecord]) -> Option<usize> {
    let mut best: Option<&RoundRecord> = None;
    for r in rounds {
        if best.is_none_or(|b| r.val_mse < b.val_mse) {
            best = Some(r);
        }
    }
    best.map(|r| r.round)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Eval {
    mse: Option<f64>,
    mae: Option<f64>,
    n: usize,
}

fn evaluate_client(model: &Model, params: &ParameterVector, client: &ClientData) -> Result<Eval, FederationError> {
    let val = &client.validation;
    if val.is_empty() {
        return Ok(Eval { mse: None, mae: None, n: 0 });
    }
    let pred = model.predict(params, val.inputs(), EVAL_CHUNK)?;
    let mse = crate::neuralnet::mse_loss(&pred, val.targets())?;
    let report = evaluate_forecasts(&pred, val.targets(), val.n_targets, &client.scaler)?;
    Ok(Eval { mse: Some(mse), mae: Some(report.avg_mae), n: val.len() })
}

fn weighted_mean(evals: &[Eval], pick: impl Fn(&Eval) -> Option<f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for e in evals {
        if let Some(v) = pick(e) {
            sum += v * e.n as f64;
            n += e.n;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Validation MSE (scaled) and MAE (original units) of one model over
/// every client, weighted by validation window counts. The same numbers a
/// federated round reports, so centralized curves are comparable.
pub fn evaluate_global(model: &Model, params: &ParameterVector, clients: &[ClientData]) -> Result<(f64, f64), FederationError> {
    let evals = clients
        .iter()
        .map(|c| evaluate_client(model, params, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((weighted_mean(&evals, |e| e.mse), weighted_mean(&evals, |e| e.mae)))
}

/// Round-by-round federated training.
///
/// Clients keep their Adam state and epoch counter across the rounds they
/// take part in; every local run starts from the broadcast global model.
pub struct FederatedSimulation<'a> {
    config: FederationConfig,
    clients: Vec<&'a ClientData>,
    trainer: Trainer,
    global: ParameterVector,
    server: ServerState,
    local: BTreeMap<String, LocalState>,
    records: Vec<RoundRecord>,
    best: Option<(usize, f64, ParameterVector)>,
    payload_bytes: u64,
}

impl<'a> FederatedSimulation<'a> {
    pub fn new(config: FederationConfig, clients: &'a [ClientData]) -> Result<Self, FederationError> {
        config.validate()?;
        if clients.is_empty() {
            return Err(FederationError::NoClients);
        }
        if clients.iter().all(|c| c.train.is_empty()) {
            return Err(FederationError::EmptyTraining(String::new()));
        }
        let mut sorted: Vec<&ClientData> = clients.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(pair) = sorted.windows(2).find(|p| p[0].id == p[1].id) {
            return Err(FederationError::InvalidConfig(format!("duplicate client id {:?}", pair[0].id)));
        }
        let trainer = Trainer::new(&config.model, config.seed)?;
        let global = init_model(&config.model, config.seed)?;
        let payload_bytes = global.serialized_len() as u64;
        let local = sorted.iter().map(|c| (c.id.clone(), LocalState::fresh(&global))).collect();
        Ok(Self {
            server: ServerState::for_model(&global),
            config,
            clients: sorted,
            trainer,
            global,
            local,
            records: Vec::new(),
            best: None,
            payload_bytes,
        })
    }

    pub fn global(&self) -> &ParameterVector {
        &self.global
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn payload_bytes(&self) -> u64 {
        self.payload_bytes
    }

    pub fn trainer(&self) -> &Trainer {
        &self.trainer
    }

    /// Runs one round and returns its record.
    pub fn step(&mut self) -> Result<&RoundRecord, FederationError> {
        let round = self.records.len() + 1;
        let ids: Vec<String> = self.clients.iter().map(|c| c.id.clone()).collect();
        let sampled = sample_clients(&ids, self.config.sampling_fraction, round, self.config.seed)?;
        let mu = self.config.aggregator.client_mu();
        let empty_val = WindowedDataset::empty(self.config.model.window, self.config.model.n_features, self.config.model.n_targets);

        let mut updates = Vec::with_capacity(sampled.len());
        let mut local_stats: BTreeMap<&str, (Option<f64>, usize)> = BTreeMap::new();
        for client in self.clients.iter().filter(|c| sampled.contains(&c.id)) {
            if client.train.is_empty() {
                local_stats.insert(&client.id, (None, 0));
                continue;
            }
            let state = self.local.get_mut(&client.id).expect("state per client");
            let proximal = mu.map(|mu| Proximal { mu, anchor: &self.global });
            let report = self.trainer.train_local(
                &self.global,
                state,
                &client.train,
                &empty_val,
                self.config.local_epochs,
                proximal,
                None,
            )?;
            local_stats.insert(&client.id, (report.train_loss.last().copied(), report.local_steps));
            if report.local_steps > 0 {
                updates.push(ClientUpdate::from_local(
                    client.id.clone(),
                    &self.global,
                    report.params,
                    client.train.len(),
                    report.local_steps,
                )?);
            }
        }
        if !updates.is_empty() {
            let (global, server) = aggregate(&self.config.aggregator, &self.server, &self.global, &updates)?;
            self.global = global;
            self.server = server;
        }

        let evals = self
            .clients
            .iter()
            .map(|c| evaluate_client(self.trainer.model(), &self.global, c))
            .collect::<Result<Vec<_>, _>>()?;
        let clients = self
            .clients
            .iter()
            .zip(&evals)
            .map(|(c, e)| {
                let stats = local_stats.get(c.id.as_str());
                let bytes = if stats.is_some() { self.payload_bytes } else { 0 };
                ClientRound {
                    client_id: c.id.clone(),
                    sampled: stats.is_some(),
                    train_loss: stats.and_then(|s| s.0),
                    local_steps: stats.map_or(0, |s| s.1),
                    n_samples: c.train.len(),
                    val_mse: e.mse,
                    val_mae: e.mae,
                    n_val: e.n,
                    uplink_bytes: bytes,
                    downlink_bytes: bytes,
                }
            })
            .collect();
        let k = sampled.len() as u64;
        let record = RoundRecord {
            round,
            clients,
            val_mse: weighted_mean(&evals, |e| e.mse),
            val_mae: weighted_mean(&evals, |e| e.mae),
            server_received_bytes: self.payload_bytes * k,
            server_sent_bytes: self.payload_bytes * k,
            sampled,
        };
        if self.best.as_ref().is_none_or(|b| record.val_mse < b.1) {
            self.best = Some((round, record.val_mse, self.global.clone()));
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn run(mut self) -> Result<FederationHistory, FederationError> {
        for _ in 0..self.config.rounds {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> FederationHistory {
        let (best_round, best_global) = match self.best {
            Some((r, _, g)) => (Some(r), g),
            None => (None, self.global.clone()),
        };
        FederationHistory {
            rounds: self.records,
            best_round,
            best_global,
            final_global: self.global,
            payload_bytes: self.payload_bytes,
        }
    }
}

pub fn run_federated(config: &FederationConfig, clients: &[ClientData]) -> Result<FederationHistory, FederationError> {
    FederatedSimulation::new(config.clone(), clients)?.run()
}

/// How long a non-federated trainer runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpochBudget {
    Fixed { epochs: usize },
    EarlyStopping { max_epochs: usize, patience: usize },
}

impl Default for EpochBudget {
    fn default() -> Self {
        Self::EarlyStopping { max_epochs: 270, patience: 50 }
    }
}

/// One trainer on one client's windows, starting from `init_model(spec, seed)`.
pub fn run_individual(
    spec: &ModelSpec,
    train: &WindowedDataset,
    val: &WindowedDataset,
    budget: EpochBudget,
    seed: u64,
    hook: Option<EpochHook<'_>>,
) -> Result<TrainReport, FederationError> {
    if train.is_empty() {
        return Err(FederationError::EmptyTraining(String::new()));
    }
    let trainer = Trainer::new(spec, seed)?;
    let init = init_model(spec, seed)?;
    let report = match budget {
        EpochBudget::Fixed { epochs } => {
            let mut state = LocalState::fresh(&init);
            trainer.train_local(&init, &mut state, train, val, epochs, None, hook)?
        }
        EpochBudget::EarlyStopping { max_epochs, patience } => {
            trainer.train_with_early_stopping(&init, train, val, max_epochs, patience, hook)?
        }
    };
    Ok(report)
}

/// Pools every client's training and validation windows into one trainer.
pub fn run_centralized(
    spec: &ModelSpec,
    clients: &[ClientData],
    budget: EpochBudget,
    seed: u64,
    hook: Option<EpochHook<'_>>,
) -> Result<TrainReport, FederationError> {
    let (train, val) = pool(clients)?;
    run_individual(spec, &train, &val, budget, seed, hook)
}

/// Training and validation windows of all clients, concatenated in client-id order.
pub fn pool(clients: &[ClientData]) -> Result<(WindowedDataset, WindowedDataset), FederationError> {
    let mut sorted: Vec<&ClientData> = clients.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if sorted.is_empty() {
        return Err(FederationError::NoClients);
    }
    let train = WindowedDataset::concat(sorted.iter().map(|c| &c.train))?;
    let val = WindowedDataset::concat(sorted.iter().map(|c| &c.validation))?;
    Ok((train, val))
}

/// Continues training `global` on one client's windows with a fresh optimizer.
pub fn fine_tune(
    spec: &ModelSpec,
    global: &ParameterVector,
    train: &WindowedDataset,
    epochs: usize,
    seed: u64,
) -> Result<ParameterVector, FederationError> {
    if epochs == 0 || train.is_empty() {
        return Ok(global.clone());
    }
    let trainer = Trainer::new(spec, seed)?;
    let mut state = LocalState::fresh(global);
    let empty = WindowedDataset::empty(spec.window, spec.n_features, spec.n_targets);
    Ok(trainer.train_local(global, &mut state, train, &empty, epochs, None, None)?.params)
}
