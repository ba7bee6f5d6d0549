//! Core library for the vantage censorship-measurement platform.
//!
//! - [`model`]: shared domain types and the report/test-list formats
//! - [`netsim`]: deterministic censor-network simulator
//! - [`probe`]: the vantage-point test battery
//! - [`detect`]: anomaly detectors and verdict classification
//! - [`controller`]: central scheduling and report ingestion
//! - [`aggregate`]: country-level statistics and plot data
//! - [`fingerprints`]: blockpage and proxy-product fingerprints
//! - [`trace`]: TCP packet-trace analysis helpers

pub mod aggregate;
pub mod controller;
pub mod detect;
pub mod fingerprints;
pub mod model;
pub mod netsim;
pub mod probe;
pub mod trace;
