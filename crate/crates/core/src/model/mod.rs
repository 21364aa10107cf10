//! Network assembly, task heads, training and evaluation.

mod config;
mod net;
mod train;

pub use config::{curve_spec, CurveNetConfig, HeadSpec, DEFAULT_DROPOUT, DEFAULT_K, DEFAULT_THETA_BAR_DEG};
pub use net::{CurveNet, CurveProbe, Level, Trace};
pub use train::{
    cosine_schedule, evaluate, mean_cosine_error, predict, sample_gradient, step_schedule, stream_rng, train, vote_probs,
    EpochMetrics, Schedule, Sgd, TrainConfig,
};
