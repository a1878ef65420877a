//! Optimization: configuration, Adam, early stopping, the training loop
//! with optional adversarial alternation, and evaluation.

mod adam;
mod config;
mod early;
mod eval;
mod trainer;

pub use adam::{Adam, Moments};
pub use config::{AdamConfig, TrainConfig, CONFIG_KEYS};
pub use early::EarlyStopping;
pub use eval::{evaluate, validate, EvalReport, FrameAverage, Interpolator, TripletScore};
pub use trainer::{train, EpochRecord, StopReason, TrainOutcome, TrainState, Trainer};
