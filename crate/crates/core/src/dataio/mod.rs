//! Trace ingestion and the preprocessing pipeline.
//!
//! The pipeline runs per client in a fixed order: missing values to zero,
//! chronological split, flooring/capping fitted on and applied to the
//! training split only, min-max scaling (local or globally merged bounds,
//! always fitted on training splits), and sliding windows per split.

mod dataset;
mod preprocess;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    clean_missing, load_csv, parse_csv, parse_timestamp, write_csv, Segment, TimeSeriesDataset, FEATURES,
    N_TARGETS, SAMPLING_INTERVAL_SECS, TIME_COLUMN,
};
pub use preprocess::{
    apply_flood_cap, fit_flood_cap, fit_scaler, inverse_scale, make_windows, negotiate_global_scaler,
    percentile_sorted, scale, split_chronological, FitProvenance, FloodCapParams, ScalerParams, ScalerScope,
    SplitDataset, WindowedDataset, MIN_SPLIT_LEN,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("timestamps not strictly increasing at data row {row}")]
    NonMonotoneTimestamps { row: usize },
    #[error("unparsable timestamp {value:?} at data row {row}")]
    BadTimestamp { row: usize, value: String },
    #[error("need at least {required} feature columns, found {found}")]
    TooFewFeatures { found: usize, required: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dataset has {len} timesteps, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("percentiles must satisfy 0 < lower < upper < 100, got ({lower}, {upper})")]
    InvalidPercentiles { lower: f64, upper: f64 },
    #[error("training split is empty")]
    EmptyTrainingSplit,
    #[error("fitting requires a training split, got {segment:?}")]
    NotTrainingSplit { segment: Segment },
    #[error("min exceeds max for feature {feature}")]
    InvertedRange { feature: usize },
    #[error("no scaler parameters to merge")]
    NoScalers,
    #[error("no data")]
    NoData,
    #[error("window size must be positive")]
    InvalidWindow,
}

/// Flooring/capping percentile pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Percentiles {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub window: usize,
    /// Default flooring/capping percentiles; `None` disables clamping.
    #[serde(default)]
    pub flood_cap: Option<Percentiles>,
    /// Per-client percentile overrides keyed by client id.
    #[serde(default)]
    pub flood_cap_per_client: BTreeMap<String, Percentiles>,
    pub scaling: ScalerScope,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            window: 10,
            flood_cap: Some(Percentiles { lower: 10.0, upper: 90.0 }),
            flood_cap_per_client: BTreeMap::new(),
            scaling: ScalerScope::Global,
        }
    }
}

impl PreprocessConfig {
    pub fn percentiles_for(&self, client_id: &str) -> Option<Percentiles> {
        self.flood_cap_per_client.get(client_id).copied().or(self.flood_cap)
    }
}

/// One client after preprocessing: windowed splits plus the scaler used.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub id: String,
    pub train: WindowedDataset,
    pub validation: WindowedDataset,
    pub test: WindowedDataset,
    pub scaler: ScalerParams,
    pub flood_cap: Option<FloodCapParams>,
}

struct Cleaned {
    split: SplitDataset,
    flood_cap: Option<FloodCapParams>,
    scaler: ScalerParams,
}

/// Runs the full pipeline over every client.
///
/// With global scaling, each client's training-split bounds are merged
/// before any client scales its data.
pub fn preprocess_clients(raw: &[TimeSeriesDataset], cfg: &PreprocessConfig) -> Result<Vec<ClientData>, DataError> {
    if cfg.window == 0 {
        return Err(DataError::InvalidWindow);
    }
    let cleaned = raw
        .iter()
        .map(|ds| {
            let mut split = split_chronological(&clean_missing(ds))?;
            let flood_cap = match cfg.percentiles_for(&ds.client_id) {
                Some(p) => {
                    let params = fit_flood_cap(&split.train, p.lower, p.upper)?;
                    split.train = apply_flood_cap(&split.train, &params)?;
                    Some(params)
                }
                None => None,
            };
            let scaler = fit_scaler(&split.train)?;
            Ok(Cleaned { split, flood_cap, scaler })
        })
        .collect::<Result<Vec<_>, DataError>>()?;

    let global = match cfg.scaling {
        ScalerScope::Global if !cleaned.is_empty() => {
            let locals: Vec<ScalerParams> = cleaned.iter().map(|c| c.scaler.clone()).collect();
            Some(negotiate_global_scaler(&locals)?)
        }
        _ => None,
    };

    cleaned
        .into_iter()
        .map(|c| {
            let scaler = global.clone().unwrap_or(c.scaler);
            let windows = |seg: &TimeSeriesDataset| make_windows(&scale(seg, &scaler)?, cfg.window);
            Ok(ClientData {
                id: c.split.train.client_id.clone(),
                train: windows(&c.split.train)?,
                validation: windows(&c.split.validation)?,
                test: windows(&c.split.test)?,
                flood_cap: c.flood_cap,
                scaler,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn client(id: &str, n: usize, offset: f64) -> TimeSeriesDataset {
        let names: Vec<String> = FEATURES.iter().map(|s| s.to_string()).collect();
        let values = (0..n * 11)
            .map(|k| offset + ((k * 37) % 101) as f64 + if k % 97 == 0 { 1e4 } else { 0.0 })
            .collect();
        TimeSeriesDataset::from_rows(id, names, parse_timestamp("2018-03-28 15:56:00").unwrap(), values).unwrap()
    }

    #[test]
    fn training_windows_lie_in_unit_interval() {
        let raw = vec![client("a", 120, 0.0), client("b", 90, 50.0), client("c", 200, -20.0)];
        for scaling in [ScalerScope::Local, ScalerScope::Global] {
            let cfg = PreprocessConfig { scaling, ..Default::default() };
            for c in preprocess_clients(&raw, &cfg).unwrap() {
                assert!(c.train.inputs().iter().all(|v| (0.0..=1.0).contains(v)));
                assert!(c.train.targets().iter().all(|v| (0.0..=1.0).contains(v)));
                assert_eq!(c.scaler.scope, scaling);
            }
        }
    }

    #[test]
    fn pipeline_is_bit_identical_on_rerun() {
        let raw = vec![client("a", 120, 0.0), client("b", 90, 50.0)];
        let cfg = PreprocessConfig::default();
        let x = preprocess_clients(&raw, &cfg).unwrap();
        let y = preprocess_clients(&raw, &cfg).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert_eq!(a.train, b.train);
            assert_eq!(a.validation, b.validation);
            assert_eq!(a.test, b.test);
            assert_eq!(a.scaler, b.scaler);
        }
    }

    #[test]
    fn flood_cap_only_touches_training_split() {
        let raw = vec![client("a", 300, 0.0)];
        let cfg = PreprocessConfig { scaling: ScalerScope::Local, ..Default::default() };
        let c = &preprocess_clients(&raw, &cfg).unwrap()[0];
        // Spikes survive in validation/test, so scaled values there exceed 1.
        let over = c.validation.inputs().iter().chain(c.test.inputs()).any(|&v| v > 1.0);
        assert!(over);
        let fc = c.flood_cap.as_ref().unwrap();
        assert_eq!(fc.fitted_on.segment, Segment::Train);
        assert_eq!(fc.lower_percentile, 10.0);
    }

    #[test]
    fn per_client_percentile_override() {
        let mut cfg = PreprocessConfig::default();
        cfg.flood_cap_per_client
            .insert("b".into(), Percentiles { lower: 5.0, upper: 95.0 });
        let out = preprocess_clients(&[client("a", 60, 0.0), client("b", 60, 0.0)], &cfg).unwrap();
        assert_eq!(out[0].flood_cap.as_ref().unwrap().upper_percentile, 90.0);
        assert_eq!(out[1].flood_cap.as_ref().unwrap().upper_percentile, 95.0);
    }

    #[test]
    fn windows_never_cross_split_boundaries() {
        let raw = vec![client("a", 100, 0.0)];
        let cfg = PreprocessConfig { flood_cap: None, window: 4, ..Default::default() };
        let c = &preprocess_clients(&raw, &cfg).unwrap()[0];
        assert_eq!(c.train.len(), 60 - 4);
        assert_eq!(c.validation.len(), 20 - 4);
        assert_eq!(c.test.len(), 20 - 4);
    }
}
