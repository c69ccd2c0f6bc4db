//! Pretrained recurrent attention forecasters for factor-based asset pricing.
//!
//! The crate covers the whole research pipeline at desk scale:
//!
//! - [`data`]: CSV panels, missingness filtering and rolling window plans.
//! - [`numeric`]: matrix views, activations, masked softmax, seeded RNG and a
//!   finite-difference gradient checker.
//! - [`autoencoder`]: the MLP autoencoder that compresses factors to 70% width
//!   and imputes missing cells.
//! - [`recurrent`]: two-layer RNN, LSTM and GRU encoders with full BPTT.
//! - [`attention`]: additive, Luong (dot/general/concat), global self and
//!   sliding-window sparse attention, all causally masked.
//! - [`training`]: the composed forecaster, Adam, early stopping and
//!   one-step-ahead forecasts.
//! - [`metrics`]: out-of-sample R², MSE, residual alpha, MAE-based
//!   Diebold-Mariano tests and permutation importance.
//! - [`backtest`]: long-only sign-signal strategies, transaction costs,
//!   equal/value weighting and performance statistics.
//! - [`pipeline`]: run configuration, synthetic data, orchestration and
//!   report files.

pub mod attention;
pub mod autoencoder;
pub mod backtest;
pub mod data;
pub mod error;
pub mod metrics;
pub mod numeric;
pub mod pipeline;
pub mod recurrent;
pub mod training;

pub use attention::{Attention, AttentionTrace, Mechanism};
pub use autoencoder::{Autoencoder, AutoencoderParams, LatentFactors, PretrainConfig};
pub use backtest::{BacktestResult, PositionSeries, Weighting};
pub use data::{
    FactorPanel, MarketCapPanel, Month, ReturnsPanel, RiskFreeSeries, RollingWindowPlan,
};
pub use error::{Error, ErrorCategory, Result};
pub use metrics::{ForecastSet, MetricsReport};
pub use numeric::{Layout, Matrix, RngState};
pub use recurrent::{CoreKind, RecurrentCore};
pub use training::{Forecaster, ModelKind, ModelSpec, TrainConfig, TrainedModel};
