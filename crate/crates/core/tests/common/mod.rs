#![allow(dead_code)]

use fedtraffic::dataio::{parse_timestamp, preprocess_clients, ClientData, PreprocessConfig, TimeSeriesDataset, FEATURES};

/// A smooth periodic multivariate trace with a client-specific level and phase.
pub fn trace(id: &str, n: usize, level: f64, phase: f64) -> TimeSeriesDataset {
    let names: Vec<String> = FEATURES.iter().map(|s| s.to_string()).collect();
    let mut values = Vec::with_capacity(n * names.len());
    for t in 0..n {
        for j in 0..names.len() {
            let x = t as f64 * 0.13 + phase + j as f64 * 0.4;
            values.push(level * (1.0 + j as f64 * 0.1) + x.sin() * 10.0 + (0.37 * x).cos() * 4.0);
        }
    }
    TimeSeriesDataset::from_rows(id, names, parse_timestamp("2018-03-28 15:56:00").unwrap(), values).unwrap()
}

pub fn clients(sizes: &[usize], window: usize) -> Vec<ClientData> {
    let raw: Vec<TimeSeriesDataset> = sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| trace(&format!("bs{i}"), n, 50.0 + 20.0 * i as f64, i as f64))
        .collect();
    let cfg = PreprocessConfig { window, ..Default::default() };
    preprocess_clients(&raw, &cfg).unwrap()
}
