use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Rnn,
    Lstm,
    Gru,
    Cnn,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [Self::Mlp, Self::Rnn, Self::Lstm, Self::Gru, Self::Cnn];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Mlp => "mlp",
            Self::Rnn => "rnn",
            Self::Lstm => "lstm",
            Self::Gru => "gru",
            Self::Cnn => "cnn",
        }
    }

    /// Gate blocks stacked in a recurrent layer's weight matrices.
    pub fn gates(self) -> usize {
        match self {
            Self::Rnn => 1,
            Self::Lstm => 4,
            Self::Gru => 3,
            Self::Mlp | Self::Cnn => 0,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::UnknownArchitecture(s.to_string()))
    }
}

/// Declarative description of a forecaster and its training constants.
///
/// [`ModelSpec::new`] gives the reference sizes: MLP hidden layers
/// (256, 128, 64); a 128-unit recurrent layer feeding a 128-unit dense
/// layer; four 3×3 convolutions with (16, 16, 32, 32) filters, global
/// average pooling and a 128-unit dense layer. Smaller sizes are accepted
/// for tests and quick experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub window: usize,
    pub n_features: usize,
    pub n_targets: usize,
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: Vec<usize>,
    #[serde(default = "default_units")]
    pub recurrent_units: usize,
    #[serde(default = "default_conv_filters")]
    pub conv_filters: Vec<usize>,
    #[serde(default = "default_units")]
    pub head_units: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_mlp_hidden() -> Vec<usize> {
    vec![256, 128, 64]
}

fn default_units() -> usize {
    128
}

fn default_conv_filters() -> Vec<usize> {
    vec![16, 16, 32, 32]
}

fn default_learning_rate() -> f64 {
    1e-3
}

fn default_batch_size() -> usize {
    128
}

/// Side length of the square convolution kernels.
pub const KERNEL: usize = 3;

impl ModelSpec {
    pub fn new(architecture: Architecture, window: usize, n_features: usize) -> Self {
        Self {
            architecture,
            window,
            n_features,
            n_targets: crate::dataio::N_TARGETS,
            mlp_hidden: default_mlp_hidden(),
            recurrent_units: default_units(),
            conv_filters: default_conv_filters(),
            head_units: default_units(),
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
        }
    }

    /// Same architecture with every layer width replaced by `width`.
    pub fn with_width(mut self, width: usize) -> Self {
        self.mlp_hidden = vec![width; self.mlp_hidden.len().max(1)];
        self.recurrent_units = width;
        self.conv_filters = vec![width; self.conv_filters.len().max(1)];
        self.head_units = width;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = |v: usize, what: &str| {
            if v == 0 {
                Err(ModelError::InvalidSpec(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        positive(self.window, "window")?;
        positive(self.n_features, "n_features")?;
        positive(self.n_targets, "n_targets")?;
        positive(self.batch_size, "batch_size")?;
        match self.architecture {
            Architecture::Mlp => self.mlp_hidden.iter().try_for_each(|&h| positive(h, "mlp_hidden"))?,
            Architecture::Rnn | Architecture::Lstm | Architecture::Gru => {
                positive(self.recurrent_units, "recurrent_units")?;
                positive(self.head_units, "head_units")?;
            }
            Architecture::Cnn => {
                if self.conv_filters.is_empty() {
                    return Err(ModelError::InvalidSpec("conv_filters must be non-empty".into()));
                }
                self.conv_filters.iter().try_for_each(|&f| positive(f, "conv_filters"))?;
                positive(self.head_units, "head_units")?;
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidSpec("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.window * self.n_features
    }

    /// Closed-form count of trainable parameters.
    pub fn parameter_count(&self) -> usize {
        let dense = |i: usize, o: usize| i * o + o;
        match self.architecture {
            Architecture::Mlp => {
                let mut sizes = vec![self.input_size()];
                sizes.extend(&self.mlp_hidden);
                sizes.push(self.n_targets);
                sizes.windows(2).map(|w| dense(w[0], w[1])).sum()
            }
            Architecture::Rnn | Architecture::Lstm | Architecture::Gru => {
                let h = self.recurrent_units;
                let g = self.architecture.gates();
                g * (self.n_features * h + h * h + h)
                    + dense(h, self.head_units)
                    + dense(self.head_units, self.n_targets)
            }
            Architecture::Cnn => {
                let mut sizes = vec![1];
                sizes.extend(&self.conv_filters);
                let conv: usize = sizes.windows(2).map(|w| w[0] * w[1] * KERNEL * KERNEL + w[1]).sum();
                conv + dense(*sizes.last().unwrap(), self.head_units) + dense(self.head_units, self.n_targets)
            }
        }
    }
}
