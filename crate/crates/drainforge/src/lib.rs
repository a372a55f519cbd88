//! drainforge: a battery-drain DoS simulator and dataset forge for IoT
//! intrusion detection.
//!
//! The crate models a network of battery-powered devices exchanging guarded,
//! probabilistic messages, plus an attacker that fires energy-draining
//! messages at them. From that model it can:
//!
//! - simulate labelled traffic traces ([`semantics`]),
//! - synthesise optimal, stealthy and stochastic attack strategies by
//!   solving a min-expected-time reachability query over an explicit MDP
//!   ([`attacker`]),
//! - turn traces into ML-ready numeric datasets, one-hot encode categorical
//!   data and ingest Apache access logs ([`dataset`]),
//! - train and score small native intrusion-detection classifiers
//!   ([`ids`]),
//! - and chain it all into reproducible experiment runs ([`pipeline`]).
//!
//! Everything stochastic is driven by explicit seeds; identical inputs give
//! byte-identical outputs.

pub mod attacker;
pub mod calibrate;
pub mod dataset;
pub mod ids;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod semantics;
