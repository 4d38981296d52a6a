//! Plot-ready exports from experiment summaries.

use std::io::Write;

use serde::Serialize;

use crate::runner::ExperimentSummary;
use crate::RunError;

#[derive(Debug, Serialize)]
struct PlotRow<'a> {
    experiment: &'a str,
    seed: u64,
    round: usize,
    metric: &'a str,
    value: f64,
}

/// Long-format curves: one row per (experiment, seed, round, metric).
/// Metrics are `train_loss`, `val_mse` and `val_mae`; undefined values are skipped.
pub fn emit_plot_data<W: Write>(summaries: &[ExperimentSummary], out: W) -> Result<(), RunError> {
    if summaries.is_empty() {
        return Err(RunError::Invalid("no summaries to export".into()));
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["experiment", "seed", "round", "metric", "value"])?;
    for s in summaries {
        for cell in &s.cells {
            let label = s.label(cell);
            for run in &cell.runs {
                for p in &run.curve {
                    let metrics = [("train_loss", p.train_loss), ("val_mse", Some(p.val_mse)), ("val_mae", Some(p.val_mae))];
                    for (metric, value) in metrics {
                        if let Some(value) = value.filter(|v| v.is_finite()) {
                            w.serialize(PlotRow { experiment: &label, seed: run.seed, round: p.round, metric, value })?;
                        }
                    }
                }
            }
        }
    }
    w.flush().map_err(|source| RunError::Io { path: "<plot data>".into(), source })?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ComparisonRow<'a> {
    experiment: String,
    setting: &'a str,
    architecture: &'a str,
    seeds: usize,
    val_mae_mean: f64,
    val_mae_std: f64,
    test_nrmse_mean: f64,
    test_nrmse_std: f64,
    test_mae_mean: f64,
    test_mae_std: f64,
    test_rmse_mean: f64,
    test_rmse_std: f64,
}

/// One row per experiment cell with mean and standard deviation over seeds.
pub fn emit_comparison<W: Write>(summaries: &[ExperimentSummary], out: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    for s in summaries {
        for c in &s.cells {
            w.serialize(ComparisonRow {
                experiment: s.label(c),
                setting: s.setting.name(),
                architecture: s.model.architecture.tag(),
                seeds: c.runs.len(),
                val_mae_mean: c.mean.val_mae,
                val_mae_std: c.std.val_mae,
                test_nrmse_mean: c.mean.test_nrmse,
                test_nrmse_std: c.std.test_nrmse,
                test_mae_mean: c.mean.test_mae,
                test_mae_std: c.std.test_mae,
                test_rmse_mean: c.mean.test_rmse,
                test_rmse_std: c.std.test_rmse,
            })?;
        }
    }
    w.flush().map_err(|source| RunError::Io { path: "<comparison>".into(), source })?;
    Ok(())
}
