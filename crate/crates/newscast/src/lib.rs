//! Batch pipeline that turns a daily news corpus into numerical feature time
//! series and measures whether those features improve day-ahead, half-hourly
//! electricity demand forecasts.
//!
//! The crate is organised as a chain of stages:
//!
//! * [`ingest`] — load and align the news corpus, half-hourly demand,
//!   temperature and holiday calendar onto a common daily index
//! * [`textprep`] — tokenisation, stopword removal, sentence splitting
//! * [`features`] — count, word-frequency, sentiment and embedding features
//! * [`topics`] — latent topic features via collapsed Gibbs sampling
//! * [`select`] — bilateral Granger-causality feature filtering
//! * [`forecast`] — design matrices and extremely randomised tree ensembles
//! * [`evaluate`] — RMSE/MAE/SMAPE scoring, Diebold-Mariano comparison,
//!   error decomposition
//! * [`explain`] — correlation grids, local surrogate explanations and a
//!   double machine-learning effect estimator
//! * [`synth`] — synthetic corpus/demand generator with planted effects
//! * [`pipeline`] — configuration, stage orchestration and report assembly
//!
//! All randomised components take explicit seeds and are deterministic:
//! identical inputs, configuration and seed produce byte-identical artifacts.

pub mod error;
pub mod evaluate;
pub mod explain;
pub mod features;
pub mod forecast;
pub mod ingest;
pub mod pipeline;
pub mod select;
pub mod stats;
pub mod synth;
pub mod textprep;
pub mod topics;

pub use error::{Error, Result};
