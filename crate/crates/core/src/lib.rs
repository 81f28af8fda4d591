//! Mid-term hourly electricity price forecasting with fundamentally
//! constrained elastic-net models.

pub mod backtest;
pub mod eval;
pub mod features;
pub mod fundamentals;
pub mod ingest;
pub mod models;
pub mod seasonal;
pub mod solver;
