//! Conditional portfolio risk estimation.
//!
//! Margins are ARMA(1,1)-GARCH(1,1) filters with (skewed) Student-t or
//! normal innovations; the dependence between the standardised residuals
//! of the assets and one or two market indices is a D-vine copula whose
//! rightmost nodes are the indices. Conditioning on an index quantile and
//! simulating the remaining assets yields conditional Value-at-Risk and
//! Expected Shortfall forecasts, which are produced over rolling windows
//! and backtested.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod copulas;
pub mod distributions;
pub mod dvine;
mod error;
pub mod margins;
pub mod numerics;
pub mod risk;
pub mod rolling;

pub use error::{Error, Result};
