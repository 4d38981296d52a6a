//! Per-client multivariate traces and the CSV loader.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::DataError;

/// Column names of a base-station trace, in file order.
///
/// The first [`N_TARGETS`] columns are the forecasting targets.
pub const FEATURES: [&str; 11] = [
    "DownLink",
    "UpLink",
    "RNTI Count",
    "RB Up",
    "RB Down",
    "RB Up Var",
    "RB Down Var",
    "MCS Up",
    "MCS Down",
    "MCS Up Var",
    "MCS Down Var",
];

/// Number of leading feature columns that are predicted.
pub const N_TARGETS: usize = 5;

/// Spacing between consecutive measurements, in seconds.
pub const SAMPLING_INTERVAL_SECS: i64 = 120;

/// Header of the timestamp column in trace files.
pub const TIME_COLUMN: &str = "time";

/// Which chronological slice of a trace a dataset holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Full,
    Train,
    Validation,
    Test,
}

/// One client's trace: `n_timesteps` rows of `n_features` values.
///
/// Values are stored row-major. Missing cells are held as `NaN` until
/// [`clean_missing`] runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub client_id: String,
    pub feature_names: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
    values: Vec<f64>,
    pub segment: Segment,
}

impl TimeSeriesDataset {
    /// Builds a dataset from row-major values, checking shapes and time order.
    pub fn new(
        client_id: impl Into<String>,
        feature_names: Vec<String>,
        timestamps: Vec<NaiveDateTime>,
        values: Vec<f64>,
    ) -> Result<Self, DataError> {
        let d = feature_names.len();
        if d < N_TARGETS {
            return Err(DataError::TooFewFeatures { found: d, required: N_TARGETS });
        }
        if values.len() != timestamps.len() * d {
            return Err(DataError::DimensionMismatch {
                expected: timestamps.len() * d,
                found: values.len(),
            });
        }
        if let Some(row) = timestamps.windows(2).position(|w| w[0] >= w[1]) {
            return Err(DataError::NonMonotoneTimestamps { row: row + 1 });
        }
        Ok(Self {
            client_id: client_id.into(),
            feature_names,
            timestamps,
            values,
            segment: Segment::Full,
        })
    }

    /// Builds a dataset on a regular two-minute grid starting at `start`.
    pub fn from_rows(
        client_id: impl Into<String>,
        feature_names: Vec<String>,
        start: NaiveDateTime,
        values: Vec<f64>,
    ) -> Result<Self, DataError> {
        let d = feature_names.len().max(1);
        let n = values.len() / d;
        let timestamps = (0..n)
            .map(|i| start + chrono::Duration::seconds(SAMPLING_INTERVAL_SECS * i as i64))
            .collect();
        Self::new(client_id, feature_names, timestamps, values)
    }

    /// Returns a copy tagged with a different segment.
    pub fn with_segment(mut self, segment: Segment) -> Self {
        self.segment = segment;
        self
    }

    pub fn n_timesteps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let d = self.n_features();
        &self.values[t * d..(t + 1) * d]
    }

    pub fn get(&self, t: usize, feature: usize) -> f64 {
        self.values[t * self.n_features() + feature]
    }

    /// Values of one feature across all timesteps.
    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(feature)
            .step_by(self.n_features())
            .copied()
            .collect()
    }

    /// Applies `f(feature_index, value)` to every entry.
    pub(crate) fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let d = self.n_features();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k % d, v))
            .collect();
        Self { values, ..self.clone() }
    }

    /// Rows `[start, end)` as a new dataset with the given segment tag.
    pub(crate) fn slice_rows(&self, start: usize, end: usize, segment: Segment) -> Self {
        let d = self.n_features();
        Self {
            client_id: self.client_id.clone(),
            feature_names: self.feature_names.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values[start * d..end * d].to_vec(),
            segment,
        }
    }
}

/// Parses an ISO-8601 timestamp with either a `T` or a space separator,
/// optionally carrying a UTC offset.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

/// Empty cells, `NaN` tokens and non-numeric text all count as missing.
fn parse_cell(cell: &str) -> f64 {
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => v,
        _ => f64::NAN,
    }
}

/// Loads a trace file: a timestamp column followed by `schema` columns.
///
/// The client id is the file stem. Unparsable cells are kept as missing.
pub fn load_csv(path: impl AsRef<Path>, schema: &[&str]) -> Result<TimeSeriesDataset, DataError> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut text = String::new();
    file.read_to_string(&mut text).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let client_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_csv(&client_id, &text, schema)
}

/// Parses trace CSV text; see [`load_csv`].
pub fn parse_csv(client_id: &str, text: &str, schema: &[&str]) -> Result<TimeSeriesDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let found: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    let header_ok = found.len() == schema.len() + 1
        && found.iter().skip(1).zip(schema).all(|(a, b)| a == b);
    if !header_ok {
        return Err(DataError::HeaderMismatch {
            expected: std::iter::once(TIME_COLUMN)
                .chain(schema.iter().copied())
                .map(str::to_string)
                .collect(),
            found,
        });
    }

    let d = schema.len();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let ts = record.get(0).unwrap_or("");
        let ts = parse_timestamp(ts).ok_or_else(|| DataError::BadTimestamp {
            row,
            value: ts.to_string(),
        })?;
        if let Some(prev) = timestamps.last() {
            if ts <= *prev {
                return Err(DataError::NonMonotoneTimestamps { row });
            }
        }
        timestamps.push(ts);
        values.extend((1..=d).map(|j| parse_cell(record.get(j).unwrap_or(""))));
    }

    TimeSeriesDataset::new(
        client_id,
        schema.iter().map(|s| s.to_string()).collect(),
        timestamps,
        values,
    )
}

/// Writes a trace in the format [`load_csv`] reads. Missing values become empty cells.
pub fn write_csv<W: std::io::Write>(ds: &TimeSeriesDataset, out: W) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec![TIME_COLUMN.to_string()];
    header.extend(ds.feature_names.iter().cloned());
    writer.write_record(&header)?;
    for t in 0..ds.n_timesteps() {
        let mut record = vec![ds.timestamps[t].format("%Y-%m-%d %H:%M:%S").to_string()];
        record.extend(ds.row(t).iter().map(|v| {
            if v.is_finite() {
                v.to_string()
            } else {
                String::new()
            }
        }));
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|source| DataError::Io {
        path: String::from("<writer>"),
        source,
    })?;
    Ok(())
}

/// Replaces every missing or non-finite entry with zero.
pub fn clean_missing(ds: &TimeSeriesDataset) -> TimeSeriesDataset {
    ds.map_values(|_, v| if v.is_finite() { v } else { 0.0 })
}
