//! Split, outlier clamping, min-max scaling and windowing.

use serde::{Deserialize, Serialize};

use super::dataset::{Segment, TimeSeriesDataset, N_TARGETS};
use super::DataError;

/// Chronological train / validation / test partition of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: TimeSeriesDataset,
    pub validation: TimeSeriesDataset,
    pub test: TimeSeriesDataset,
}

/// Minimum trace length accepted by [`split_chronological`].
pub const MIN_SPLIT_LEN: usize = 5;

/// Splits 60 / 20 / 20 by row order. Train and validation sizes are floored,
/// the remainder goes to test.
pub fn split_chronological(ds: &TimeSeriesDataset) -> Result<SplitDataset, DataError> {
    let n = ds.n_timesteps();
    if n < MIN_SPLIT_LEN {
        return Err(DataError::TooShort { len: n, min: MIN_SPLIT_LEN });
    }
    let n_train = n * 3 / 5;
    let n_val = n / 5;
    Ok(SplitDataset {
        train: ds.slice_rows(0, n_train, Segment::Train),
        validation: ds.slice_rows(n_train, n_train + n_val, Segment::Validation),
        test: ds.slice_rows(n_train + n_val, n, Segment::Test),
    })
}

/// Percentile by linear interpolation between order statistics of `sorted`.
///
/// `pct` is in `[0, 100]`; the rank is `pct / 100 * (n - 1)`.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Where a set of cut values was fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProvenance {
    pub client_id: String,
    pub segment: Segment,
}

/// Per-feature flooring and capping thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloodCapParams {
    pub lower_percentile: f64,
    pub upper_percentile: f64,
    pub cut_low: Vec<f64>,
    pub cut_high: Vec<f64>,
    pub fitted_on: FitProvenance,
}

fn require_train(ds: &TimeSeriesDataset) -> Result<(), DataError> {
    if ds.segment != Segment::Train {
        return Err(DataError::NotTrainingSplit { segment: ds.segment });
    }
    if ds.is_empty() {
        return Err(DataError::EmptyTrainingSplit);
    }
    Ok(())
}

/// Fits cut values as the `lower_pct` / `upper_pct` percentiles of each
/// training column.
pub fn fit_flood_cap(
    train: &TimeSeriesDataset,
    lower_pct: f64,
    upper_pct: f64,
) -> Result<FloodCapParams, DataError> {
    if !(lower_pct > 0.0 && lower_pct < upper_pct && upper_pct < 100.0) {
        return Err(DataError::InvalidPercentiles { lower: lower_pct, upper: upper_pct });
    }
    require_train(train)?;
    let (cut_low, cut_high) = (0..train.n_features())
        .map(|j| {
            let mut col = train.column(j);
            col.sort_by(f64::total_cmp);
            (percentile_sorted(&col, lower_pct), percentile_sorted(&col, upper_pct))
        })
        .unzip();
    Ok(FloodCapParams {
        lower_percentile: lower_pct,
        upper_percentile: upper_pct,
        cut_low,
        cut_high,
        fitted_on: FitProvenance {
            client_id: train.client_id.clone(),
            segment: train.segment,
        },
    })
}

/// Clamps every entry into its feature's `[cut_low, cut_high]`.
pub fn apply_flood_cap(ds: &TimeSeriesDataset, params: &FloodCapParams) -> Result<TimeSeriesDataset, DataError> {
    check_dims(params.cut_low.len(), ds.n_features())?;
    Ok(ds.map_values(|j, v| v.clamp(params.cut_low[j], params.cut_high[j])))
}

fn check_dims(expected: usize, found: usize) -> Result<(), DataError> {
    if expected != found {
        return Err(DataError::DimensionMismatch { expected, found });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerScope {
    Local,
    Global,
}

/// Per-feature min-max bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub scope: ScalerScope,
}

impl ScalerParams {
    pub fn new(min: Vec<f64>, max: Vec<f64>, scope: ScalerScope) -> Result<Self, DataError> {
        let params = Self { min, max, scope };
        params.validate()?;
        Ok(params)
    }

    pub fn n_features(&self) -> usize {
        self.min.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        check_dims(self.min.len(), self.max.len())?;
        if let Some(feature) = (0..self.min.len()).find(|&j| !(self.min[j] <= self.max[j])) {
            return Err(DataError::InvertedRange { feature });
        }
        Ok(())
    }

    /// Scales one value of feature `j`; a degenerate range maps to zero.
    #[inline]
    pub fn scale_value(&self, j: usize, x: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range == 0.0 {
            0.0
        } else {
            (x - self.min[j]) / range
        }
    }

    #[inline]
    pub fn inverse_value(&self, j: usize, x: f64) -> f64 {
        self.min[j] + x * (self.max[j] - self.min[j])
    }

    /// Inverse-scales a row-major matrix whose columns are the leading
    /// target features.
    pub fn inverse_targets(&self, scaled: &[f64], n_targets: usize) -> Result<Vec<f64>, DataError> {
        if n_targets > self.n_features() {
            return Err(DataError::DimensionMismatch {
                expected: self.n_features(),
                found: n_targets,
            });
        }
        Ok(scaled
            .iter()
            .enumerate()
            .map(|(k, &v)| self.inverse_value(k % n_targets, v))
            .collect())
    }
}

/// Local min-max bounds of a training split.
pub fn fit_scaler(train: &TimeSeriesDataset) -> Result<ScalerParams, DataError> {
    require_train(train)?;
    let d = train.n_features();
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for t in 0..train.n_timesteps() {
        for (j, &v) in train.row(t).iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    ScalerParams::new(min, max, ScalerScope::Local)
}

/// Merges local bounds into global ones: element-wise min of minima and max
/// of maxima. Each client shares only its two vectors.
pub fn negotiate_global_scaler(local: &[ScalerParams]) -> Result<ScalerParams, DataError> {
    let first = local.first().ok_or(DataError::NoScalers)?;
    let d = first.n_features();
    let mut min = first.min.clone();
    let mut max = first.max.clone();
    for params in local {
        params.validate()?;
        check_dims(d, params.n_features())?;
        for j in 0..d {
            min[j] = min[j].min(params.min[j]);
            max[j] = max[j].max(params.max[j]);
        }
    }
    ScalerParams::new(min, max, ScalerScope::Global)
}

pub fn scale(ds: &TimeSeriesDataset, sc: &ScalerParams) -> Result<TimeSeriesDataset, DataError> {
    check_dims(sc.n_features(), ds.n_features())?;
    Ok(ds.map_values(|j, v| sc.scale_value(j, v)))
}

pub fn inverse_scale(ds: &TimeSeriesDataset, sc: &ScalerParams) -> Result<TimeSeriesDataset, DataError> {
    check_dims(sc.n_features(), ds.n_features())?;
    Ok(ds.map_values(|j, v| sc.inverse_value(j, v)))
}

/// Supervised sliding-window pairs.
///
/// Inputs are stored flat as `len × window × n_features`, targets as
/// `len × n_targets`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub window: usize,
    pub n_features: usize,
    pub n_targets: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl WindowedDataset {
    pub fn empty(window: usize, n_features: usize, n_targets: usize) -> Self {
        Self { window, n_features, n_targets, inputs: Vec::new(), targets: Vec::new() }
    }

    /// Wraps pre-built flat buffers.
    pub fn from_parts(
        window: usize,
        n_features: usize,
        n_targets: usize,
        inputs: Vec<f64>,
        targets: Vec<f64>,
    ) -> Result<Self, DataError> {
        let len = if n_targets == 0 { 0 } else { targets.len() / n_targets };
        if targets.len() != len * n_targets || inputs.len() != len * window * n_features {
            return Err(DataError::DimensionMismatch {
                expected: len * window * n_features,
                found: inputs.len(),
            });
        }
        Ok(Self { window, n_features, n_targets, inputs, targets })
    }

    pub fn len(&self) -> usize {
        if self.n_targets == 0 {
            0
        } else {
            self.targets.len() / self.n_targets
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_size(&self) -> usize {
        self.window * self.n_features
    }

    pub fn input(&self, k: usize) -> &[f64] {
        let s = self.input_size();
        &self.inputs[k * s..(k + 1) * s]
    }

    pub fn target(&self, k: usize) -> &[f64] {
        &self.targets[k * self.n_targets..(k + 1) * self.n_targets]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Gathers the given samples into contiguous input and target buffers.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_size());
        let mut targets = Vec::with_capacity(indices.len() * self.n_targets);
        for &k in indices {
            inputs.extend_from_slice(self.input(k));
            targets.extend_from_slice(self.target(k));
        }
        (inputs, targets)
    }

    /// Concatenates datasets with identical shapes, in order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a WindowedDataset>) -> Result<Self, DataError> {
        let mut iter = parts.into_iter();
        let first = iter.next().ok_or(DataError::NoData)?;
        let mut out = first.clone();
        for part in iter {
            if (part.window, part.n_features, part.n_targets)
                != (out.window, out.n_features, out.n_targets)
            {
                return Err(DataError::DimensionMismatch {
                    expected: out.input_size(),
                    found: part.input_size(),
                });
            }
            out.inputs.extend_from_slice(&part.inputs);
            out.targets.extend_from_slice(&part.targets);
        }
        Ok(out)
    }
}

/// Builds `max(0, n - window)` pairs: rows `[k, k + window)` predict the
/// leading target features of row `k + window`.
pub fn make_windows(segment: &TimeSeriesDataset, window: usize) -> Result<WindowedDataset, DataError> {
    if window == 0 {
        return Err(DataError::InvalidWindow);
    }
    let d = segment.n_features();
    let n = segment.n_timesteps();
    let count = n.saturating_sub(window);
    let mut inputs = Vec::with_capacity(count * window * d);
    let mut targets = Vec::with_capacity(count * N_TARGETS);
    let values = segment.values();
    for k in 0..count {
        inputs.extend_from_slice(&values[k * d..(k + window) * d]);
        targets.extend_from_slice(&segment.row(k + window)[..N_TARGETS]);
    }
    Ok(WindowedDataset { window, n_features: d, n_targets: N_TARGETS, inputs, targets })
}
