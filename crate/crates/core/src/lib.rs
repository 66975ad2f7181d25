//! Simulation laboratory for CQI-assisted CSI feedback in massive MIMO.
//!
//! The pipeline: [`channel`] draws synthetic multipath CSI, [`cqi`] turns it
//! into wideband/subband channel quality indices, [`model`] compresses the CSI
//! (conditioned on CQI) into constellation symbols that cross an AWGN
//! feedback link and are decoded back, [`train`] fits the autoencoder end to
//! end, and [`metrics`] / [`info`] score reconstructions and estimate
//! entropy and mutual information with k-NN estimators.

pub mod channel;
pub mod config;
pub mod cqi;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod export;
pub mod info;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;
