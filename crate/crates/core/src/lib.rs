//! Patch-mixer forecasting of EMF exposure series with split-conformal
//! prediction intervals.
//!
//! The crate covers the whole workflow: CSV ingestion and cleaning
//! ([`data`]), stationarity and periodicity analysis ([`analysis`]), a small
//! reverse-mode neural toolkit ([`nn`]), the forecasters ([`model`]),
//! training ([`train`]), interval calibration and scoring ([`conformal`]),
//! and the `emf` command line ([`cli`]).

pub mod analysis;
pub mod cli;
pub mod conformal;
pub mod data;
pub mod fixtures;
pub mod model;
pub mod nn;
pub mod train;
