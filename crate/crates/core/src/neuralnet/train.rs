//! Mini-batch training loops around [`Model`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, mse_loss, Model, ModelError, ModelSpec, OptimizerState, ParameterVector};
use crate::aggregation::add_proximal_gradient;
use crate::dataio::WindowedDataset;

/// Rows per forward call when evaluating whole splits.
const EVAL_CHUNK: usize = 512;

/// Called after every epoch with the 1-based epoch index and current parameters.
pub type EpochHook<'a> = &'a mut dyn FnMut(usize, &ParameterVector);

/// FedProx anchor: adds μ/2·‖w − anchor‖² to the local objective.
#[derive(Debug, Clone, Copy)]
pub struct Proximal<'a> {
    pub mu: f64,
    pub anchor: &'a ParameterVector,
}

/// Optimizer state a client carries between calls, plus the count of
/// epochs already run, which drives the shuffle order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalState {
    pub optimizer: OptimizerState,
    pub epochs_done: u64,
}

impl LocalState {
    pub fn fresh(params: &ParameterVector) -> Self {
        Self { optimizer: OptimizerState::for_params(params), epochs_done: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    /// Validation MSE after each epoch; empty when no validation windows.
    pub val_loss: Vec<f64>,
    /// Optimizer steps taken (τ).
    pub local_steps: usize,
    pub epochs_run: usize,
    /// 1-based epoch with the lowest monitored loss; 0 when no epoch ran.
    pub best_epoch: usize,
    pub max_epochs: usize,
    pub patience: Option<usize>,
    pub n_train: usize,
    pub params: ParameterVector,
}

/// Stops once the monitored loss has not strictly improved for `patience` epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0 }
    }

    /// Records the loss of a 1-based epoch; returns (improved, stop).
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = epoch;
        }
        (improved, epoch - self.best_epoch >= self.patience)
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Mean squared error of `params` over a whole windowed split.
pub fn evaluate_mse(model: &Model, params: &ParameterVector, data: &WindowedDataset) -> Result<Option<f64>, ModelError> {
    if data.is_empty() {
        return Ok(None);
    }
    let pred = model.predict(params, data.inputs(), EVAL_CHUNK)?;
    mse_loss(&pred, data.targets()).map(Some)
}

#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    seed: u64,
}

impl Trainer {
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self, ModelError> {
        Ok(Self { model: Model::new(spec)?, seed })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn spec(&self) -> &ModelSpec {
        self.model.spec()
    }

    fn check_data(&self, data: &WindowedDataset) -> Result<(), ModelError> {
        let spec = self.spec();
        if !data.is_empty() && (data.input_size() != spec.input_size() || data.n_targets != spec.n_targets) {
            return Err(ModelError::ShapeMismatch(format!(
                "windows of {}×{} with {} targets do not fit spec {}×{} with {} targets",
                data.window, data.n_features, data.n_targets, spec.window, spec.n_features, spec.n_targets
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, params: &ParameterVector, data: &WindowedDataset) -> Result<Option<f64>, ModelError> {
        self.check_data(data)?;
        evaluate_mse(&self.model, params, data)
    }

    /// One pass over shuffled mini-batches. Returns the sample-weighted mean
    /// batch loss and the number of optimizer steps.
    fn epoch(
        &self,
        params: &mut ParameterVector,
        state: &mut LocalState,
        train: &WindowedDataset,
        proximal: Option<Proximal<'_>>,
    ) -> Result<(f64, usize), ModelError> {
        let n = train.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(state.epochs_done);
        order.shuffle(&mut rng);
        state.epochs_done += 1;

        let spec = self.spec();
        let mut total = 0.0;
        let mut steps = 0;
        for batch in order.chunks(spec.batch_size) {
            let (x, y) = train.gather(batch);
            let (loss, mut g) = self.model.loss_and_gradient(params, &x, &y)?;
            if let Some(p) = proximal.filter(|p| p.mu != 0.0) {
                add_proximal_gradient(&params.values, &p.anchor.values, p.mu, &mut g);
            }
            adam_step(&mut state.optimizer, params, &g, spec.learning_rate)?;
            total += loss * batch.len() as f64;
            steps += 1;
        }
        Ok((if n == 0 { f64::NAN } else { total / n as f64 }, steps))
    }

    /// Runs exactly `epochs` epochs and returns the final parameters.
    pub fn train_local(
        &self,
        params: &ParameterVector,
        state: &mut LocalState,
        train: &WindowedDataset,
        val: &WindowedDataset,
        epochs: usize,
        proximal: Option<Proximal<'_>>,
        mut hook: Option<EpochHook<'_>>,
    ) -> Result<TrainReport, ModelError> {
        self.check_data(train)?;
        self.check_data(val)?;
        if let Some(p) = &proximal {
            params.check_same_layout(p.anchor)?;
            if !(p.mu >= 0.0) {
                return Err(ModelError::InvalidTraining(format!("proximal mu must be >= 0, got {}", p.mu)));
            }
        }
        let mut w = params.clone();
        let mut report = TrainReport {
            train_loss: Vec::with_capacity(epochs),
            val_loss: Vec::new(),
            local_steps: 0,
            epochs_run: 0,
            best_epoch: 0,
            max_epochs: epochs,
            patience: None,
            n_train: train.len(),
            params: params.clone(),
        };
        let mut tracker = EarlyStopping::new(usize::MAX);
        for epoch in 1..=epochs {
            let (loss, steps) = self.epoch(&mut w, state, train, proximal)?;
            report.train_loss.push(loss);
            report.local_steps += steps;
            report.epochs_run = epoch;
            let monitored = match evaluate_mse(&self.model, &w, val)? {
                Some(v) => {
                    report.val_loss.push(v);
                    v
                }
                None => loss,
            };
            tracker.observe(epoch, monitored);
            if let Some(h) = hook.as_mut() {
                h(epoch, &w);
            }
        }
        report.best_epoch = tracker.best_epoch();
        report.params = w;
        Ok(report)
    }

    /// Trains until validation MSE stalls for `patience` epochs and returns
    /// the best-validation parameters. Training loss is monitored when
    /// there are no validation windows.
    pub fn train_with_early_stopping(
        &self,
        params: &ParameterVector,
        train: &WindowedDataset,
        val: &WindowedDataset,
        max_epochs: usize,
        patience: usize,
        mut hook: Option<EpochHook<'_>>,
    ) -> Result<TrainReport, ModelError> {
        if max_epochs == 0 || patience == 0 {
            return Err(ModelError::InvalidTraining("max_epochs and patience must be at least 1".into()));
        }
        self.check_data(train)?;
        self.check_data(val)?;
        let mut state = LocalState::fresh(params);
        let mut w = params.clone();
        let mut best = params.clone();
        let mut stopper = EarlyStopping::new(patience);
        let mut report = TrainReport {
            train_loss: Vec::new(),
            val_loss: Vec::new(),
            local_steps: 0,
            epochs_run: 0,
            best_epoch: 0,
            max_epochs,
            patience: Some(patience),
            n_train: train.len(),
            params: params.clone(),
        };
        for epoch in 1..=max_epochs {
            let (loss, steps) = self.epoch(&mut w, &mut state, train, None)?;
            report.train_loss.push(loss);
            report.local_steps += steps;
            report.epochs_run = epoch;
            let monitored = match evaluate_mse(&self.model, &w, val)? {
                Some(v) => {
                    report.val_loss.push(v);
                    v
                }
                None => loss,
            };
            if let Some(h) = hook.as_mut() {
                h(epoch, &w);
            }
            let (improved, stop) = stopper.observe(epoch, monitored);
            if improved {
                best.values.copy_from_slice(&w.values);
            }
            if stop {
                break;
            }
        }
        report.best_epoch = stopper.best_epoch();
        report.params = best;
        Ok(report)
    }
}

/// Fixed-epoch training from a fresh optimizer state.
pub fn train_local(
    spec: &ModelSpec,
    params: &ParameterVector,
    train: &WindowedDataset,
    val: &WindowedDataset,
    epochs: usize,
    proximal: Option<Proximal<'_>>,
    seed: u64,
) -> Result<TrainReport, ModelError> {
    let mut state = LocalState::fresh(params);
    Trainer::new(spec, seed)?.train_local(params, &mut state, train, val, epochs, proximal, None)
}

pub fn train_with_early_stopping(
    spec: &ModelSpec,
    params: &ParameterVector,
    train: &WindowedDataset,
    val: &WindowedDataset,
    max_epochs: usize,
    patience: usize,
    seed: u64,
) -> Result<TrainReport, ModelError> {
    Trainer::new(spec, seed)?.train_with_early_stopping(params, train, val, max_epochs, patience, None)
}
