//! Differentiable forecasters, Adam, training loops and checkpoints.

mod model;
mod optim;
mod params;
mod spec;
mod train;

use thiserror::Error;

pub use model::Model;
pub use optim::{adam_step, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use params::{
    deserialize_params, init_model, read_checkpoint, serialize_params, Layout, ParameterVector, TensorSpec,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use spec::{Architecture, ModelSpec, KERNEL};
pub use train::{
    evaluate_mse, train_local, train_with_early_stopping, EarlyStopping, EpochHook, LocalState, Proximal,
    TrainReport, Trainer,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter layout mismatch: expected {expected} values, found {found}")]
    LayoutMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),
    #[error("invalid training setup: {0}")]
    InvalidTraining(String),
}

/// Predictions for a batch of flattened windows, row-major `batch × n_targets`.
pub fn forward(spec: &ModelSpec, params: &ParameterVector, inputs: &[f64]) -> Result<Vec<f64>, ModelError> {
    Ok(Model::new(spec)?.forward(params, inputs)?.iter().copied().collect())
}

/// Mean over all elements of the squared difference.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64, ModelError> {
    if pred.len() != target.len() {
        return Err(ModelError::ShapeMismatch(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(ModelError::ShapeMismatch("empty batch".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Gradient of the batch MSE with respect to every parameter.
pub fn backward(
    spec: &ModelSpec,
    params: &ParameterVector,
    inputs: &[f64],
    targets: &[f64],
) -> Result<ParameterVector, ModelError> {
    let (_, g) = Model::new(spec)?.loss_and_gradient(params, inputs, targets)?;
    params.with_values(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_fixtures() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[0.0, 0.0, 2.0, 2.0], &[1.0; 4]).unwrap(), 1.0);
        assert!(mse_loss(&[0.0], &[1.0, 1.0]).is_err());
    }
}
