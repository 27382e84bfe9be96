//! Analysis of accumulated stock returns: ingestion and de-trending of daily
//! price series, gain/loss tail fits with Dragon-King outlier tests, moment
//! and skewness scaling, and stochastic-volatility models with closed-form
//! return densities for confronting theory with data.

// `!(x > 0.0)` is used deliberately throughout: unlike `x <= 0.0` it also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diststats;
pub mod ingest;
pub mod ols;
pub mod pipeline;
pub mod quad;
pub mod returns;
pub mod rng;
pub mod special;
pub mod svmodels;
pub mod tailfit;

pub use ingest::{load_price_series, validate_series, ColumnSpec, PriceSeries, ValidationReport};
pub use returns::{
    accumulated_returns, fit_trend, log_return_curve, partition_gains_losses, GainLossSplit,
    LogReturnCurve, ReturnSample, TrendFit,
};
