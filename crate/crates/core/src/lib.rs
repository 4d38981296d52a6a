//! Federated multivariate traffic forecasting.
//!
//! - [`dataio`]: trace ingestion, flooring/capping, min-max scaling, windows
//! - [`neuralnet`]: MLP, RNN, LSTM, GRU and CNN forecasters with Adam
//! - [`aggregation`]: server strategies from SimpleAvg to FedAdam
//! - [`federation`]: individual, centralized and federated training loops
//! - [`metrics`]: MAE, RMSE, NRMSE and the KS skew statistic

pub mod aggregation;
pub mod dataio;
pub mod federation;
pub mod metrics;
pub mod neuralnet;
