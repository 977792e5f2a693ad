//! Core components forecasting: sparse, dimension-reducing linear prediction
//! of a vector time series from a large lagged panel of explanatory series.
//!
//! The pipeline is [`panel`] (data handling) -> [`objective`] (losses) ->
//! [`solver`] (single-component estimation) -> [`ccf`] (multi-component
//! models) -> [`selection`] (cross-validation). [`baseline`] provides a
//! supervised principal-components competitor and [`simulate`] a Monte
//! Carlo harness comparing the two.

pub mod baseline;
pub mod ccf;
pub mod error;
pub mod linalg;
pub mod objective;
pub mod panel;
pub mod selection;
pub mod simulate;
pub mod solver;

pub use error::{CcfError, Result};
pub use objective::{ComponentParams, FitProblem, LossKind};
pub use panel::{LagDesign, SplitSpec, StandardizationInfo, TimeSeriesPanel, TimedMatrix};
