//! Deterministic desk-scale simulator for federated learning across
//! heterogeneous device tiers.
//!
//! The crate provides:
//! - a small dense tensor core with reproducible arithmetic ([`tensor`]),
//! - layered encoder/head models with manual backprop ([`model`]),
//! - the tiered federated protocol: depth-scaled sub-global models,
//!   layer-wise heterogeneous aggregation, momentum distillation and a
//!   server-side Adam optimizer ([`fed`]),
//! - comparison baselines including a width-scaled one ([`baselines`]),
//! - synthetic datasets and client partitioning ([`data`]),
//! - an experiment harness with deterministic file outputs ([`harness`]).
//!
//! Every run is a pure function of its configuration and seed: with those
//! fixed, emitted metrics and checkpoints are byte-identical across runs.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fed;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod topology;

pub use error::{Error, Result};
