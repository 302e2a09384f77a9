//! Optimal no-trade bands under proportional transaction costs for
//! diffusive factor models.
//!
//! The half-width of the band around the costfree target is
//! `(3 ε G Γ̂₀² / 2)^{1/3}` where `Γ̂₀²` is the ratio of the target's
//! instantaneous variance to the tradable's. See the README for the
//! experiments and CLI.

pub mod banding;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod market_data;
pub mod models;
pub mod policy;

pub use banding::{Band, CostSpec};
pub use engine::{BacktestConfig, BacktestResult, BacktestSummary, BandRule, PositionMode};
pub use error::{Error, Result};
pub use models::{MarketPath, ModelSpec};
pub use policy::{GammaMode, Gearing, PolicyState};
