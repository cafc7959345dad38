//! Bi-modal dialog utterance sentiment classification for imbalanced
//! three-class data.
//!
//! The pipeline featurizes each utterance twice: a 300 x 60 MFCC matrix for
//! an acoustic CNN whose last pooling layer collapses the time axis, and a
//! sequence of 300-dimensional token embeddings for a Conv1D + LSTM text
//! model. Both are trained with Adam under a configurable monitored metric
//! that drives plateau learning-rate halving, early stopping and checkpoint
//! selection. The penultimate activations of the two models are
//! concatenated and classified by a random forest. Experiments run over
//! dialog-grouped stratified folds.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod audio_features;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod metrics;
pub mod nets;
pub mod splits;
pub mod text_features;
pub mod trainer;

pub use error::{Error, Result};
