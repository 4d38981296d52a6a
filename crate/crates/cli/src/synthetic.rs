//! Synthetic base-station traces.
//!
//! Each client is driven by one latent load signal: a daily and a weekly
//! sinusoid plus AR(1) noise. Traffic features scale with the load and a
//! client-specific level; rare one-step spikes multiply the traffic
//! features so that flooring/capping has something to remove.

use chrono::NaiveDateTime;
use fedtraffic::dataio::{TimeSeriesDataset, FEATURES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ConfigError;

/// Observations per day at the 2-minute sampling interval.
pub const STEPS_PER_DAY: usize = 720;
const STEPS_PER_WEEK: usize = 7 * STEPS_PER_DAY;

/// Typical magnitude of each feature at unit load.
const BASE: [f64; 11] = [4.0e5, 6.0e4, 60.0, 40.0, 90.0, 200.0, 500.0, 14.0, 18.0, 12.0, 15.0];
/// Features that scale with traffic (and spike); the rest are MCS statistics.
const TRAFFIC: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Days {
    Fixed(usize),
    /// Inclusive range; each client draws its own count.
    Range([usize; 2]),
}

/// Generator parameters for one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientParams {
    pub days: usize,
    /// Multiplier on every traffic feature.
    pub level: f64,
    /// Phase of the daily cycle, radians.
    pub phase: f64,
    pub daily_amplitude: f64,
    pub weekly_amplitude: f64,
    /// Relative traffic growth from the first to the last observation.
    pub trend: f64,
    pub noise: f64,
    pub spike_probability: f64,
    pub spike_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_clients: usize,
    pub days: Days,
    pub seed: u64,
    /// Standard deviation of the log traffic level across clients.
    #[serde(default = "default_level_spread")]
    pub level_spread: f64,
    #[serde(default = "default_daily")]
    pub daily_amplitude: f64,
    /// Width of the interval the daily phases are drawn from, radians;
    /// 0 aligns every client's cycle.
    #[serde(default = "default_phase_spread")]
    pub phase_spread: f64,
    #[serde(default = "default_weekly")]
    pub weekly_amplitude: f64,
    /// Mean relative traffic growth over a client's trace; each client
    /// draws its own from `trend·U(0.5, 1.5)`.
    #[serde(default = "default_trend")]
    pub trend: f64,
    /// Innovation scale of the AR(1) load noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_ar")]
    pub ar_coefficient: f64,
    #[serde(default = "default_spike_probability")]
    pub spike_probability: f64,
    /// Spikes multiply traffic by `1 + magnitude·U(0.5, 1.5)`.
    #[serde(default = "default_spike_magnitude")]
    pub spike_magnitude: f64,
    #[serde(default)]
    pub missing_probability: f64,
    /// Explicit per-client parameters; when given, one entry per client.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clients: Vec<ClientParams>,
}

fn default_level_spread() -> f64 {
    0.3
}
fn default_daily() -> f64 {
    0.8
}
fn default_phase_spread() -> f64 {
    1.5
}
fn default_weekly() -> f64 {
    0.2
}
fn default_trend() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    0.03
}
fn default_ar() -> f64 {
    0.9
}
fn default_spike_probability() -> f64 {
    0.01
}
fn default_spike_magnitude() -> f64 {
    8.0
}

impl SyntheticSpec {
    pub fn new(n_clients: usize, days: Days, seed: u64) -> Self {
        Self {
            n_clients,
            days,
            seed,
            level_spread: default_level_spread(),
            daily_amplitude: default_daily(),
            phase_spread: default_phase_spread(),
            weekly_amplitude: default_weekly(),
            trend: default_trend(),
            noise: default_noise(),
            ar_coefficient: default_ar(),
            spike_probability: default_spike_probability(),
            spike_magnitude: default_spike_magnitude(),
            missing_probability: 0.0,
            clients: Vec::new(),
        }
    }

    pub fn validate(&self, path: &str) -> Result<(), ConfigError> {
        let err = |field: &str, msg: String| Err(ConfigError::invalid(format!("{path}.{field}"), msg));
        if self.n_clients == 0 {
            return err("n_clients", "must be at least 1".into());
        }
        match self.days {
            Days::Fixed(0) => return err("days", "must be at least 1".into()),
            Days::Range([lo, hi]) if lo == 0 || lo > hi => {
                return err("days", format!("range [{lo}, {hi}] must satisfy 1 <= min <= max"))
            }
            _ => {}
        }
        let unit = [
            ("spike_probability", self.spike_probability),
            ("missing_probability", self.missing_probability),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return err(name, format!("must lie in [0, 1], got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.ar_coefficient) {
            return err("ar_coefficient", format!("must lie in [0, 1), got {}", self.ar_coefficient));
        }
        let non_negative = [
            ("level_spread", self.level_spread),
            ("daily_amplitude", self.daily_amplitude),
            ("phase_spread", self.phase_spread),
            ("weekly_amplitude", self.weekly_amplitude),
            ("trend", self.trend),
            ("noise", self.noise),
            ("spike_magnitude", self.spike_magnitude),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return err(name, format!("must be a non-negative number, got {v}"));
            }
        }
        if !self.clients.is_empty() && self.clients.len() != self.n_clients {
            return err("clients", format!("{} entries for {} clients", self.clients.len(), self.n_clients));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.days == 0 {
                return err(&format!("clients[{i}].days"), "must be at least 1".into());
            }
            if !(c.level > 0.0) {
                return err(&format!("clients[{i}].level"), "must be positive".into());
            }
            if !(0.0..=1.0).contains(&c.spike_probability) {
                return err(&format!("clients[{i}].spike_probability"), "must lie in [0, 1]".into());
            }
        }
        Ok(())
    }

    /// Resolved parameters of every client.
    pub fn client_params(&self) -> Vec<ClientParams> {
        if !self.clients.is_empty() {
            return self.clients.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_clients)
            .map(|_| {
                let days = match self.days {
                    Days::Fixed(d) => d,
                    Days::Range([lo, hi]) => rng.random_range(lo..=hi),
                };
                let z: f64 = rng.sample(StandardNormal);
                ClientParams {
                    days,
                    level: (self.level_spread * z).exp(),
                    phase: self.phase_spread * (rng.random::<f64>() - 0.5),
                    daily_amplitude: self.daily_amplitude * rng.random_range(0.7..1.3),
                    weekly_amplitude: self.weekly_amplitude * rng.random_range(0.7..1.3),
                    trend: self.trend * rng.random_range(0.5..1.5),
                    noise: self.noise,
                    spike_probability: self.spike_probability,
                    spike_magnitude: self.spike_magnitude,
                }
            })
            .collect()
    }
}

pub fn client_id(index: usize) -> String {
    format!("bs{index:03}")
}

fn start_time() -> NaiveDateTime {
    fedtraffic::dataio::parse_timestamp("2018-03-28 00:00:00").expect("valid literal")
}

fn generate_client(spec: &SyntheticSpec, index: usize, p: &ClientParams) -> TimeSeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let n = p.days * STEPS_PER_DAY;
    let names: Vec<String> = FEATURES.iter().map(|s| s.to_string()).collect();
    let weekly_phase = rng.random_range(0.0..std::f64::consts::TAU);
    // Per-feature jitter keeps the columns from being exact multiples.
    let feature_scale: Vec<f64> = (0..FEATURES.len()).map(|_| rng.random_range(0.8..1.25)).collect();
    let mut values = Vec::with_capacity(n * FEATURES.len());
    let mut ar = 0.0;
    for t in 0..n {
        let e: f64 = rng.sample(StandardNormal);
        ar = spec.ar_coefficient * ar + p.noise * e;
        let day = std::f64::consts::TAU * t as f64 / STEPS_PER_DAY as f64;
        let week = std::f64::consts::TAU * t as f64 / STEPS_PER_WEEK as f64;
        let load = (1.0 + p.daily_amplitude * (day + p.phase).sin() + p.weekly_amplitude * (week + weekly_phase).sin() + ar)
            .max(0.05);
        let growth = 1.0 + p.trend * t as f64 / n as f64;
        let spike = if rng.random::<f64>() < p.spike_probability {
            1.0 + p.spike_magnitude * rng.random_range(0.5..1.5)
        } else {
            1.0
        };
        for j in 0..FEATURES.len() {
            let jitter: f64 = rng.sample(StandardNormal);
            let v = if j < TRAFFIC {
                BASE[j] * feature_scale[j] * p.level * growth * load * spike * (1.0 + 0.02 * jitter)
            } else {
                // MCS statistics move little with load.
                BASE[j] * feature_scale[j] * (1.0 + 0.1 * (load - 1.0) + 0.02 * jitter)
            };
            let missing = spec.missing_probability > 0.0 && rng.random::<f64>() < spec.missing_probability;
            values.push(if missing { f64::NAN } else { v });
        }
    }
    TimeSeriesDataset::from_rows(client_id(index), names, start_time(), values).expect("generator produces valid shapes")
}

/// One trace per client, deterministic in the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<TimeSeriesDataset>, ConfigError> {
    spec.validate("synthetic")?;
    Ok(spec
        .client_params()
        .iter()
        .enumerate()
        .map(|(i, p)| generate_client(spec, i, p))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedtraffic::metrics::ks_statistic;

    #[test]
    fn deterministic() {
        let spec = SyntheticSpec::new(3, Days::Range([1, 3]), 5);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.values().len(), y.values().len());
            assert!(x.values().iter().zip(y.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn length_follows_day_count() {
        let spec = SyntheticSpec::new(2, Days::Fixed(3), 0);
        for ds in generate_synthetic(&spec).unwrap() {
            assert_eq!(ds.n_timesteps(), 2160);
            assert_eq!(ds.n_features(), 11);
        }
    }

    #[test]
    fn different_levels_are_distribution_skewed() {
        let mut spec = SyntheticSpec::new(2, Days::Fixed(2), 1);
        let base = spec.client_params()[0].clone();
        spec.clients = vec![base.clone(), ClientParams { level: base.level * 2.0, ..base }];
        let data = generate_synthetic(&spec).unwrap();
        let ks = ks_statistic(&data[0].column(1), &data[1].column(1)).unwrap();
        assert!(ks > 0.2, "ks = {ks}");
    }

    #[test]
    fn missing_cells_and_validation() {
        let mut spec = SyntheticSpec::new(1, Days::Fixed(1), 2);
        spec.missing_probability = 0.05;
        let ds = &generate_synthetic(&spec).unwrap()[0];
        assert!(ds.values().iter().any(|v| v.is_nan()));
        spec.missing_probability = 2.0;
        assert!(generate_synthetic(&spec).is_err());
        assert!(SyntheticSpec::new(0, Days::Fixed(1), 0).validate("s").is_err());
        assert!(SyntheticSpec::new(1, Days::Range([3, 2]), 0).validate("s").is_err());
    }
}
