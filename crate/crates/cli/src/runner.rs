//! Executes an experiment config and writes its artifacts.
//!
//! Layout under `<output_dir>/<name>/`:
//!
//! ```text
//! manifest.toml                      resolved config, re-runnable as is
//! summary.json  summary.csv          per-cell mean ± std, one csv row per cell × seed
//! plot_data.csv                      long format (experiment, seed, round, metric, value)
//! <cell>/seed-<s>/rounds.csv         one row per round (epoch outside federation)
//! <cell>/seed-<s>/client_rounds.csv  one row per client and round
//! <cell>/seed-<s>/checkpoint.bin     best model (one per client when individual)
//! <cell>/seed-<s>/metrics.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use fedtraffic::aggregation::{AggregatorConfig, GridSpec};
use fedtraffic::dataio::{load_csv, preprocess_clients, ClientData, TimeSeriesDataset, FEATURES};
use fedtraffic::federation::{
    account_communication, bytes_to_mb, evaluate_global, fine_tune, run_centralized, run_federated, run_individual,
};
use fedtraffic::metrics::evaluate_forecasts;
use fedtraffic::neuralnet::{serialize_params, Model, ModelSpec, ParameterVector, TrainReport};
use serde::{Deserialize, Deserializer, Serialize};

use crate::config::{ExperimentConfig, Setting};
use crate::report::emit_plot_data;
use crate::synthetic::generate_synthetic;
use crate::RunError;

const EVAL_CHUNK: usize = 1024;

/// JSON has no NaN; undefined metrics are written as null and read back as NaN.
fn nullable<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Headline numbers of one run. Validation metrics are weighted by
/// validation window counts over all clients; test metrics are the mean
/// of per-client values in original units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    #[serde(deserialize_with = "nullable")]
    pub val_mse: f64,
    #[serde(deserialize_with = "nullable")]
    pub val_mae: f64,
    #[serde(deserialize_with = "nullable")]
    pub test_nrmse: f64,
    #[serde(deserialize_with = "nullable")]
    pub test_mae: f64,
    #[serde(deserialize_with = "nullable")]
    pub test_rmse: f64,
}

impl FinalMetrics {
    fn fields(&self) -> [f64; 5] {
        [self.val_mse, self.val_mae, self.test_nrmse, self.test_mae, self.test_rmse]
    }

    fn from_fields(f: [f64; 5]) -> Self {
        Self { val_mse: f[0], val_mae: f[1], test_nrmse: f[2], test_mae: f[3], test_rmse: f[4] }
    }

    /// Mean and population standard deviation over runs.
    pub fn mean_std(runs: &[FinalMetrics]) -> (FinalMetrics, FinalMetrics) {
        let n = runs.len() as f64;
        let mut mean = [0.0; 5];
        for r in runs {
            for (m, v) in mean.iter_mut().zip(r.fields()) {
                *m += v / n;
            }
        }
        let mut var = [0.0; 5];
        for r in runs {
            for ((s, v), m) in var.iter_mut().zip(r.fields()).zip(mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        (Self::from_fields(mean), Self::from_fields(var.map(f64::sqrt)))
    }
}

/// One point of a training curve: a federated round or an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub train_loss: Option<f64>,
    #[serde(deserialize_with = "nullable")]
    pub val_mse: f64,
    #[serde(deserialize_with = "nullable")]
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    /// Federated: best round; otherwise the best epoch (individual: of the
    /// first client).
    pub best_round: Option<usize>,
    pub metrics: FinalMetrics,
    /// Federated only: one-directional MB per client and at the server,
    /// and total bytes in both directions.
    pub client_mb: Option<f64>,
    pub server_mb: Option<f64>,
    pub total_bytes: Option<u64>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub aggregator: AggregatorConfig,
    pub runs: Vec<RunSummary>,
    pub mean: FinalMetrics,
    pub std: FinalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub setting: Setting,
    pub model: ModelSpec,
    pub n_clients: usize,
    pub cells: Vec<CellSummary>,
}

impl ExperimentSummary {
    /// Label for plots: the experiment name, plus the cell when there are several.
    pub fn label(&self, cell: &CellSummary) -> String {
        if self.cells.len() == 1 {
            self.name.clone()
        } else {
            format!("{}/{}", self.name, cell.cell)
        }
    }
}

#[derive(Debug, Serialize)]
struct RoundRow {
    round: usize,
    participants: usize,
    train_loss: Option<f64>,
    val_mse: f64,
    val_mae: f64,
    server_received_bytes: u64,
    server_sent_bytes: u64,
}

#[derive(Debug, Serialize)]
struct ClientRow {
    round: usize,
    client_id: String,
    sampled: bool,
    train_loss: Option<f64>,
    local_steps: usize,
    n_samples: usize,
    val_mse: Option<f64>,
    val_mae: Option<f64>,
    uplink_bytes: u64,
    downlink_bytes: u64,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    experiment: &'a str,
    cell: &'a str,
    strategy: &'a str,
    eta: f64,
    mu: f64,
    beta: f64,
    rho: f64,
    lambda: f64,
    seed: u64,
    best_round: Option<usize>,
    val_mse: f64,
    val_mae: f64,
    test_nrmse: f64,
    test_mae: f64,
    test_rmse: f64,
}

/// Everything one (cell, seed) run produces.
struct RunOutput {
    summary: RunSummary,
    rounds: Vec<RoundRow>,
    clients: Vec<ClientRow>,
    checkpoints: Vec<(String, Vec<u8>)>,
}

/// Raw traces named by the config.
pub fn load_traces(cfg: &ExperimentConfig) -> Result<Vec<TimeSeriesDataset>, RunError> {
    match &cfg.data.synthetic {
        Some(spec) => Ok(generate_synthetic(spec)?),
        None => cfg
            .data
            .paths
            .iter()
            .map(|p| load_csv(p, &FEATURES).map_err(RunError::from))
            .collect(),
    }
}

/// Preprocessed clients, sorted by id.
pub fn prepare_clients(cfg: &ExperimentConfig) -> Result<Vec<ClientData>, RunError> {
    let mut clients = preprocess_clients(&load_traces(cfg)?, &cfg.preprocess_config())?;
    clients.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(clients)
}

/// Directory-safe name of a grid cell: the strategy, plus every searched value.
pub fn cell_name(agg: &AggregatorConfig, grid: &GridSpec) -> String {
    let mut name = agg.strategy.name().to_string();
    for (key, values, v) in [
        ("eta", &grid.eta, agg.eta),
        ("mu", &grid.mu, agg.mu),
        ("beta", &grid.beta, agg.beta),
        ("rho", &grid.rho, agg.rho),
        ("lambda", &grid.lambda, agg.lambda),
    ] {
        if !values.is_empty() {
            name.push_str(&format!("_{key}-{v}"));
        }
    }
    name
}

/// Test metrics of `params_for(client)` on every client, averaged over clients.
pub fn test_metrics<'a>(
    model: &Model,
    clients: &'a [ClientData],
    mut params_for: impl FnMut(&'a ClientData) -> Result<ParameterVector, RunError>,
) -> Result<[f64; 3], RunError> {
    let (mut nrmse, mut mae, mut rmse) = (Vec::new(), Vec::new(), Vec::new());
    for c in clients {
        if c.test.is_empty() {
            continue;
        }
        let params = params_for(c)?;
        let pred = model.predict(&params, c.test.inputs(), EVAL_CHUNK)?;
        let r = evaluate_forecasts(&pred, c.test.targets(), c.test.n_targets, &c.scaler)?;
        if let Some(v) = r.avg_nrmse {
            nrmse.push(v);
        }
        mae.push(r.avg_mae);
        rmse.push(r.avg_rmse);
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok([mean(&nrmse), mean(&mae), mean(&rmse)])
}

fn run_federated_seed(
    cfg: &ExperimentConfig,
    clients: &[ClientData],
    agg: AggregatorConfig,
    seed: u64,
) -> Result<RunOutput, RunError> {
    let fc = cfg.federation_config(agg, seed);
    let history = run_federated(&fc, clients)?;
    let model = Model::new(&fc.model)?;
    let fine = cfg.federation.fine_tune.then_some(cfg.federation.fine_tune_epochs);
    let [test_nrmse, test_mae, test_rmse] = test_metrics(&model, clients, |c| match fine {
        Some(epochs) => Ok(fine_tune(&fc.model, &history.best_global, &c.train, epochs, seed)?),
        None => Ok(history.best_global.clone()),
    })?;
    let best = history.best_round.map(|r| &history.rounds[r - 1]);
    let metrics = FinalMetrics {
        val_mse: best.map_or(f64::NAN, |r| r.val_mse),
        val_mae: best.map_or(f64::NAN, |r| r.val_mae),
        test_nrmse,
        test_mae,
        test_rmse,
    };
    let ledger = account_communication(history.payload_bytes, &history, history.rounds.len())?;
    let client_bytes = ledger.per_client.values().map(|c| c.uplink).max().unwrap_or(0);

    let mut rounds = Vec::new();
    let mut rows = Vec::new();
    let mut curve = Vec::new();
    for r in &history.rounds {
        let losses: Vec<f64> = r.clients.iter().filter_map(|c| c.train_loss).collect();
        let train_loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        curve.push(CurvePoint { round: r.round, train_loss, val_mse: r.val_mse, val_mae: r.val_mae });
        rounds.push(RoundRow {
            round: r.round,
            participants: r.sampled.len(),
            train_loss,
            val_mse: r.val_mse,
            val_mae: r.val_mae,
            server_received_bytes: r.server_received_bytes,
            server_sent_bytes: r.server_sent_bytes,
        });
        rows.extend(r.clients.iter().map(|c| ClientRow {
            round: r.round,
            client_id: c.client_id.clone(),
            sampled: c.sampled,
            train_loss: c.train_loss,
            local_steps: c.local_steps,
            n_samples: c.n_samples,
            val_mse: c.val_mse,
            val_mae: c.val_mae,
            uplink_bytes: c.uplink_bytes,
            downlink_bytes: c.downlink_bytes,
        }));
    }
    Ok(RunOutput {
        summary: RunSummary {
            seed,
            best_round: history.best_round,
            metrics,
            client_mb: Some(bytes_to_mb(client_bytes)),
            server_mb: Some(bytes_to_mb(ledger.server_one_directional())),
            total_bytes: Some(ledger.total_bytes()),
            curve,
        },
        rounds,
        clients: rows,
        checkpoints: vec![("checkpoint.bin".into(), serialize_params(&history.best_global))],
    })
}

/// Per-epoch validation of one trainer, collected through the epoch hook.
type Trace = Vec<(f64, f64)>;

fn traced<T>(
    run: impl FnOnce(&mut dyn FnMut(usize, &ParameterVector)) -> Result<T, RunError>,
    evaluate: impl Fn(&ParameterVector) -> Result<(f64, f64), RunError>,
) -> Result<(T, Trace), RunError> {
    let mut trace = Vec::new();
    let mut failure = None;
    let mut hook = |_: usize, p: &ParameterVector| {
        if failure.is_none() {
            match evaluate(p) {
                Ok(v) => trace.push(v),
                Err(e) => failure = Some(e),
            }
        }
    };
    let out = run(&mut hook)?;
    match failure {
        Some(e) => Err(e),
        None => Ok((out, trace)),
    }
}

fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

fn run_centralized_seed(cfg: &ExperimentConfig, clients: &[ClientData], seed: u64) -> Result<RunOutput, RunError> {
    let spec = cfg.model_spec();
    let model = Model::new(&spec)?;
    let (report, trace) = traced(
        |hook| Ok(run_centralized(&spec, clients, cfg.training, seed, Some(hook))?),
        |p| Ok(evaluate_global(&model, p, clients)?),
    )?;
    let [test_nrmse, test_mae, test_rmse] = test_metrics(&model, clients, |_| Ok(report.params.clone()))?;
    let (val_mse, val_mae) = evaluate_global(&model, &report.params, clients)?;
    let steps = steps_per_epoch(report.n_train, spec.batch_size);
    let curve: Vec<CurvePoint> = trace
        .iter()
        .enumerate()
        .map(|(i, &(mse, mae))| CurvePoint { round: i + 1, train_loss: Some(report.train_loss[i]), val_mse: mse, val_mae: mae })
        .collect();
    let rounds = curve
        .iter()
        .map(|c| RoundRow {
            round: c.round,
            participants: clients.len(),
            train_loss: c.train_loss,
            val_mse: c.val_mse,
            val_mae: c.val_mae,
            server_received_bytes: 0,
            server_sent_bytes: 0,
        })
        .collect();
    let rows = curve
        .iter()
        .map(|c| ClientRow {
            round: c.round,
            client_id: "pooled".into(),
            sampled: true,
            train_loss: c.train_loss,
            local_steps: steps,
            n_samples: report.n_train,
            val_mse: Some(c.val_mse),
            val_mae: Some(c.val_mae),
            uplink_bytes: 0,
            downlink_bytes: 0,
        })
        .collect();
    Ok(RunOutput {
        summary: RunSummary {
            seed,
            best_round: Some(report.best_epoch),
            metrics: FinalMetrics { val_mse, val_mae, test_nrmse, test_mae, test_rmse },
            client_mb: None,
            server_mb: None,
            total_bytes: None,
            curve,
        },
        rounds,
        clients: rows,
        checkpoints: vec![("checkpoint.bin".into(), serialize_params(&report.params))],
    })
}

fn run_individual_seed(cfg: &ExperimentConfig, clients: &[ClientData], seed: u64) -> Result<RunOutput, RunError> {
    let spec = cfg.model_spec();
    let model = Model::new(&spec)?;
    let mut reports: Vec<(&ClientData, TrainReport, Trace)> = Vec::new();
    for c in clients {
        let one = std::slice::from_ref(c);
        let (report, trace) = traced(
            |hook| Ok(run_individual(&spec, &c.train, &c.validation, cfg.training, seed, Some(hook))?),
            |p| Ok(evaluate_global(&model, p, one)?),
        )?;
        reports.push((c, report, trace));
    }
    let [test_nrmse, test_mae, test_rmse] = test_metrics(&model, clients, |c| {
        let (_, r, _) = reports.iter().find(|(d, _, _)| d.id == c.id).expect("one report per client");
        Ok(r.params.clone())
    })?;

    // Validation of each client's own best model, weighted by window count.
    let (mut mse, mut mae, mut n) = (0.0, 0.0, 0usize);
    for (c, r, _) in &reports {
        let (m, a) = evaluate_global(&model, &r.params, std::slice::from_ref(*c))?;
        if c.validation.len() > 0 {
            mse += m * c.validation.len() as f64;
            mae += a * c.validation.len() as f64;
            n += c.validation.len();
        }
    }
    let (val_mse, val_mae) = if n == 0 { (f64::NAN, f64::NAN) } else { (mse / n as f64, mae / n as f64) };

    // Curve: epoch-wise weighted mean over the clients still training.
    let longest = reports.iter().map(|(_, r, _)| r.epochs_run).max().unwrap_or(0);
    let mut curve = Vec::with_capacity(longest);
    let mut rows = Vec::new();
    for epoch in 1..=longest {
        let (mut loss, mut k, mut mse, mut mae, mut n) = (0.0, 0, 0.0, 0.0, 0usize);
        let mut running = 0;
        for (c, r, trace) in &reports {
            let Some(&(m, a)) = trace.get(epoch - 1) else { continue };
            running += 1;
            loss += r.train_loss[epoch - 1];
            k += 1;
            let nv = c.validation.len();
            if nv > 0 {
                mse += m * nv as f64;
                mae += a * nv as f64;
                n += nv;
            }
            rows.push(ClientRow {
                round: epoch,
                client_id: c.id.clone(),
                sampled: true,
                train_loss: Some(r.train_loss[epoch - 1]),
                local_steps: steps_per_epoch(r.n_train, spec.batch_size),
                n_samples: r.n_train,
                val_mse: (nv > 0).then_some(m),
                val_mae: (nv > 0).then_some(a),
                uplink_bytes: 0,
                downlink_bytes: 0,
            });
        }
        let nan_if_empty = |s: f64| if n == 0 { f64::NAN } else { s / n as f64 };
        curve.push((
            running,
            CurvePoint { round: epoch, train_loss: Some(loss / k as f64), val_mse: nan_if_empty(mse), val_mae: nan_if_empty(mae) },
        ));
    }
    let rounds = curve
        .iter()
        .map(|(running, c)| RoundRow {
            round: c.round,
            participants: *running,
            train_loss: c.train_loss,
            val_mse: c.val_mse,
            val_mae: c.val_mae,
            server_received_bytes: 0,
            server_sent_bytes: 0,
        })
        .collect();
    Ok(RunOutput {
        summary: RunSummary {
            seed,
            best_round: reports.first().map(|(_, r, _)| r.best_epoch),
            metrics: FinalMetrics { val_mse, val_mae, test_nrmse, test_mae, test_rmse },
            client_mb: None,
            server_mb: None,
            total_bytes: None,
            curve: curve.into_iter().map(|(_, c)| c).collect(),
        },
        rounds,
        clients: rows,
        checkpoints: reports
            .iter()
            .map(|(c, r, _)| (format!("checkpoint-{}.bin", c.id), serialize_params(&r.params)))
            .collect(),
    })
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunError> {
    let file = fs::File::create(path).map_err(RunError::io(path))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(RunError::io(path))?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    fs::write(path, bytes).map_err(RunError::io(path))
}

/// Directory an experiment writes to.
pub fn experiment_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join(&cfg.name)
}

/// Runs every grid cell for every seed, writes all artifacts and returns
/// the merged summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary, RunError> {
    cfg.validate()?;
    let clients = prepare_clients(cfg)?;
    if cfg.setting == Setting::Individual && clients.iter().any(|c| c.train.is_empty()) {
        return Err(RunError::Invalid("every client needs training windows in the individual setting".into()));
    }
    let root = experiment_dir(cfg);
    fs::create_dir_all(&root).map_err(RunError::io(&root))?;
    write_file(&root.join("manifest.toml"), cfg.resolved().to_toml()?.as_bytes())?;

    // Outside federation the aggregator plays no part, so a grid collapses to one cell.
    let aggregators = match cfg.setting {
        Setting::Federated => cfg.aggregators(),
        _ => vec![cfg.aggregator.resolve()],
    };
    let grid = match cfg.setting {
        Setting::Federated => cfg.grid.clone(),
        _ => GridSpec::default(),
    };
    let mut cells = Vec::with_capacity(aggregators.len());
    for agg in aggregators {
        let cell = cell_name(&agg, &grid);
        let mut runs = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let out = match cfg.setting {
                Setting::Federated => run_federated_seed(cfg, &clients, agg, seed)?,
                Setting::Centralized => run_centralized_seed(cfg, &clients, seed)?,
                Setting::Individual => run_individual_seed(cfg, &clients, seed)?,
            };
            let dir = root.join(&cell).join(format!("seed-{seed}"));
            fs::create_dir_all(&dir).map_err(RunError::io(&dir))?;
            write_csv_rows(&dir.join("rounds.csv"), &out.rounds)?;
            write_csv_rows(&dir.join("client_rounds.csv"), &out.clients)?;
            for (name, bytes) in &out.checkpoints {
                write_file(&dir.join(name), bytes)?;
            }
            write_file(&dir.join("metrics.json"), serde_json::to_string_pretty(&out.summary)?.as_bytes())?;
            runs.push(out.summary);
        }
        let metrics: Vec<FinalMetrics> = runs.iter().map(|r| r.metrics).collect();
        let (mean, std) = FinalMetrics::mean_std(&metrics);
        cells.push(CellSummary { cell, aggregator: agg, runs, mean, std });
    }

    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        setting: cfg.setting,
        model: cfg.model_spec(),
        n_clients: clients.len(),
        cells,
    };
    write_file(&root.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    write_summary_csv(&root.join("summary.csv"), &summary)?;
    let path = root.join("plot_data.csv");
    let file = fs::File::create(&path).map_err(RunError::io(&path))?;
    emit_plot_data(std::slice::from_ref(&summary), file)?;
    Ok(summary)
}

fn write_summary_csv(path: &Path, s: &ExperimentSummary) -> Result<(), RunError> {
    let mut rows = Vec::new();
    for c in &s.cells {
        for r in &c.runs {
            let a = &c.aggregator;
            rows.push(SummaryRow {
                experiment: &s.name,
                cell: &c.cell,
                strategy: a.strategy.name(),
                eta: a.eta,
                mu: a.mu,
                beta: a.beta,
                rho: a.rho,
                lambda: a.lambda,
                seed: r.seed,
                best_round: r.best_round,
                val_mse: r.metrics.val_mse,
                val_mae: r.metrics.val_mae,
                test_nrmse: r.metrics.test_nrmse,
                test_mae: r.metrics.test_mae,
                test_rmse: r.metrics.test_rmse,
            });
        }
    }
    write_csv_rows(path, &rows)
}

/// Reads a summary written by [`run_experiment`].
pub fn load_summary(path: &Path) -> Result<ExperimentSummary, RunError> {
    let text = fs::read_to_string(path).map_err(RunError::io(path))?;
    Ok(serde_json::from_str(&text)?)
}
