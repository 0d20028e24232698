//! Realized higher moments from intraday bars, their short-run/long-run
//! decomposition, and cross-sectional pricing of the resulting moment risks.
//!
//! The crate is organized by stage:
//!
//! - [`ingest`]: five-minute grids, excess returns, weekly aggregation
//! - [`moments`]: realized variance, skewness, kurtosis
//! - [`decompose`]: causal horizon components
//! - [`factors`]: market / average idiosyncratic factor matrices
//! - [`sorts`]: rolling-exposure quantile portfolio sorts
//! - [`crosssection`]: static two-pass Fama-MacBeth
//! - [`qbll`]: kernel-weighted Normal-Gamma time-varying regressions
//! - [`sim`] and [`oracle`]: synthetic data with known truth, reference solvers
//! - [`pipeline`] and [`report`]: file-based orchestration and tables

pub mod error;
pub mod linalg;

pub mod decompose;
pub mod factors;
pub mod ingest;
pub mod moments;
pub mod sorts;
pub mod crosssection;
pub mod qbll;
pub mod sim;
pub mod oracle;
pub mod io;
pub mod config;
pub mod report;
pub mod pipeline;

pub use error::{Error, ExitClass, Result};
