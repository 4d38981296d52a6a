//! Forecast error metrics in original feature units, and the two-sample
//! Kolmogorov-Smirnov statistic used to quantify skew between clients.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::ScalerParams;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {pred} predictions vs {truth} ground-truth values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("empty input")]
    Empty,
    #[error("ground truth has zero mean; NRMSE undefined")]
    ZeroMean,
    #[error("scaler covers {scaler} features, need {targets}")]
    ScalerMismatch { scaler: usize, targets: usize },
}

fn check(pred: &[f64], truth: &[f64]) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(pred, truth)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, y)| (p - y).abs()).sum();
    Ok(sum / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(pred, truth)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// RMSE divided by the mean of the ground truth.
pub fn nrmse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    let r = rmse(pred, truth)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    if mean == 0.0 {
        return Err(MetricError::ZeroMean);
    }
    Ok(r / mean)
}

/// Index of DownLink and UpLink among the targets.
pub const NRMSE_TARGETS: [usize; 2] = [0, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: Vec<f64>,
    pub rmse: Vec<f64>,
    /// `None` where the target's ground truth has zero mean.
    pub nrmse: Vec<Option<f64>>,
    pub avg_mae: f64,
    pub avg_rmse: f64,
    /// Mean NRMSE over DownLink and UpLink; `None` if either is undefined.
    pub avg_nrmse: Option<f64>,
    pub n: usize,
}

/// Inverse-scales `n × n_targets` row-major predictions and ground truth,
/// then reports per-target and averaged metrics.
pub fn evaluate_forecasts(
    pred: &[f64],
    truth: &[f64],
    n_targets: usize,
    scaler: &ScalerParams,
) -> Result<MetricReport, MetricError> {
    check(pred, truth)?;
    if n_targets == 0 || pred.len() % n_targets != 0 {
        return Err(MetricError::LengthMismatch { pred: pred.len(), truth: n_targets });
    }
    if scaler.n_features() < n_targets {
        return Err(MetricError::ScalerMismatch { scaler: scaler.n_features(), targets: n_targets });
    }
    let n = pred.len() / n_targets;
    let column = |data: &[f64], j: usize| -> Vec<f64> {
        data.iter()
            .skip(j)
            .step_by(n_targets)
            .map(|&v| scaler.inverse_value(j, v))
            .collect()
    };

    let mut report = MetricReport {
        mae: Vec::with_capacity(n_targets),
        rmse: Vec::with_capacity(n_targets),
        nrmse: Vec::with_capacity(n_targets),
        avg_mae: 0.0,
        avg_rmse: 0.0,
        avg_nrmse: None,
        n,
    };
    for j in 0..n_targets {
        let p = column(pred, j);
        let y = column(truth, j);
        report.mae.push(mae(&p, &y)?);
        report.rmse.push(rmse(&p, &y)?);
        report.nrmse.push(nrmse(&p, &y).ok());
    }
    report.avg_mae = report.mae.iter().sum::<f64>() / n_targets as f64;
    report.avg_rmse = report.rmse.iter().sum::<f64>() / n_targets as f64;
    report.avg_nrmse = NRMSE_TARGETS
        .iter()
        .map(|&j| report.nrmse.get(j).copied().flatten())
        .sum::<Option<f64>>()
        .map(|s| s / NRMSE_TARGETS.len() as f64);
    Ok(report)
}

/// Two-sample KS statistic: the largest gap between the empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    // Gaps are compared as integers |i·nb − j·na| and divided once, so the
    // result is the correctly rounded rational value.
    let (na, nb) = (a.len() as u128, b.len() as u128);
    let (mut i, mut j) = (0, 0);
    let mut d: u128 = 0;
    while i < a.len() && j < b.len() {
        // Step past every copy of the smallest pending value in both samples.
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as u128 * nb).abs_diff(j as u128 * na));
    }
    Ok(d as f64 / (na * nb) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::ScalerScope;
    use proptest::prelude::*;

    /// Evaluates both ECDFs at every sample point by counting.
    fn ks_brute_force(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn hand_fixtures() {
        assert_eq!(mae(&[2.0, 4.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(mae(&[5.0], &[3.0]).unwrap(), 2.0);
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[2.0, 4.0], &[1.0, 1.0]).unwrap(), 5f64.sqrt());
        assert!((rmse(&[2.0, 4.0], &[1.0, 1.0]).unwrap() - 2.2360680).abs() < 1e-7);
        assert_eq!(rmse(&[3.5, 0.5, -1.5], &[1.0, -2.0, -4.0]).unwrap(), 2.5);
        assert_eq!(nrmse(&[2.0, 4.0], &[1.0, 1.0]).unwrap(), 5f64.sqrt());
        assert_eq!(nrmse(&[3.0, 5.0], &[2.0, 2.0]).unwrap(), rmse(&[3.0, 5.0], &[2.0, 2.0]).unwrap() / 2.0);
        // Truth equal to the rmse gives ratio one.
        assert_eq!(nrmse(&[2.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(nrmse(&[1.0, 3.0], &[1.0, 1.0]).unwrap(), 2f64.sqrt());
    }

    #[test]
    fn error_paths() {
        assert_eq!(mae(&[1.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch { pred: 1, truth: 2 }));
        assert_eq!(rmse(&[], &[]), Err(MetricError::Empty));
        assert_eq!(nrmse(&[1.0, 2.0], &[-1.0, 1.0]), Err(MetricError::ZeroMean));
        assert_eq!(ks_statistic(&[], &[1.0]), Err(MetricError::Empty));
    }

    #[test]
    fn ks_fixtures() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[5.0, 6.0, 7.0]).unwrap(), 1.0);
        let d = ks_statistic(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d, 1.0 / 3.0);
        assert!((d - ks_brute_force(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0])).abs() < 1e-15);
    }

    fn identity_scaler(d: usize) -> ScalerParams {
        ScalerParams::new(vec![0.0; d], vec![1.0; d], ScalerScope::Global).unwrap()
    }

    #[test]
    fn perfect_forecast_report_is_zero() {
        let truth: Vec<f64> = (0..20).map(|v| 0.1 + v as f64 / 40.0).collect();
        let r = evaluate_forecasts(&truth, &truth, 5, &identity_scaler(11)).unwrap();
        assert_eq!(r.avg_mae, 0.0);
        assert_eq!(r.avg_rmse, 0.0);
        assert_eq!(r.avg_nrmse, Some(0.0));
        assert_eq!(r.n, 4);
    }

    #[test]
    fn report_matches_step_by_step_oracle() {
        // Two rows, five targets, scaler min 10 / max 110 on target 0, min 0 /
        // max 2 elsewhere.
        let mut min = vec![0.0; 11];
        let mut max = vec![2.0; 11];
        min[0] = 10.0;
        max[0] = 110.0;
        let sc = ScalerParams::new(min, max, ScalerScope::Global).unwrap();
        let pred = [0.5, 0.5, 0.25, 0.0, 1.0, 0.1, 0.75, 0.5, 0.5, 0.5];
        let truth = [0.4, 0.25, 0.25, 0.5, 1.0, 0.3, 0.5, 0.5, 0.0, 0.5];
        let r = evaluate_forecasts(&pred, &truth, 5, &sc).unwrap();

        // Original units: target 0 pred (60, 20) truth (50, 40);
        // target 1 pred (1.0, 1.5) truth (0.5, 1.0).
        assert!((r.mae[0] - 15.0).abs() < 1e-12);
        assert!((r.rmse[0] - ((100.0f64 + 400.0) / 2.0).sqrt()).abs() < 1e-12);
        assert!((r.nrmse[0].unwrap() - 250f64.sqrt() / 45.0).abs() < 1e-12);
        assert!((r.mae[1] - 0.5).abs() < 1e-12);
        assert!((r.nrmse[1].unwrap() - 0.5 / 0.75).abs() < 1e-12);
        // Target 3: pred (0, 1) truth (1, 0) -> mae 1, rmse 1.
        assert!((r.mae[3] - 1.0).abs() < 1e-12);
        assert!((r.avg_rmse - r.rmse.iter().sum::<f64>() / 5.0).abs() < 1e-15);
        assert!((r.avg_mae - r.mae.iter().sum::<f64>() / 5.0).abs() < 1e-15);
        let expected_nrmse = (r.nrmse[0].unwrap() + r.nrmse[1].unwrap()) / 2.0;
        assert_eq!(r.avg_nrmse, Some(expected_nrmse));
    }

    #[test]
    fn report_rejects_short_scaler() {
        let sc = identity_scaler(3);
        assert!(matches!(
            evaluate_forecasts(&[0.0; 5], &[0.0; 5], 5, &sc),
            Err(MetricError::ScalerMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn mae_le_rmse(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50)) {
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(mae(&p, &y).unwrap() <= rmse(&p, &y).unwrap() * (1.0 + 1e-12));
        }

        #[test]
        fn metrics_permutation_invariant(pairs in prop::collection::vec((-1e3f64..1e3, 1.0f64..1e3), 2..30), rot in 1usize..30) {
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut shuffled = pairs.clone();
            shuffled.rotate_left(rot % pairs.len());
            let (ps, ys): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
            prop_assert!(close(mae(&p, &y).unwrap(), mae(&ps, &ys).unwrap()));
            prop_assert!(close(rmse(&p, &y).unwrap(), rmse(&ps, &ys).unwrap()));
            prop_assert!(close(nrmse(&p, &y).unwrap(), nrmse(&ps, &ys).unwrap()));
        }

        #[test]
        fn nrmse_scale_invariant(pairs in prop::collection::vec((0.0f64..1e3, 1.0f64..1e3), 1..30), c in 1e-3f64..1e3) {
            let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let pc: Vec<f64> = p.iter().map(|v| v * c).collect();
            let yc: Vec<f64> = y.iter().map(|v| v * c).collect();
            let a = nrmse(&p, &y).unwrap();
            let b = nrmse(&pc, &yc).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
        }

        #[test]
        fn ks_matches_brute_force(
            a in prop::collection::vec(0i32..12, 1..=20),
            b in prop::collection::vec(0i32..12, 1..=20),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let d = ks_statistic(&a, &b).unwrap();
            prop_assert!((d - ks_brute_force(&a, &b)).abs() < 1e-15);
            prop_assert_eq!(d, ks_statistic(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
