//! Deterministic, seedable simulator of federated learning over a
//! three-layer cloud/edge/client topology.
//!
//! The crate implements a quota-triggered two-level FL protocol with
//! reliability-agnostic client selection (slack-factor estimation at the
//! edges), model caching, and effective-data-coverage weighted cloud
//! aggregation, alongside FedAvg and hierarchical-FL baselines, with
//! closed-form timing and energy models and convergence-bound analysis
//! utilities.
//!
//! Modules:
//! - [`config`]: flat key/value configuration and presets.
//! - [`data`]: dataset loading and synthetic generators.
//! - [`model`]: MLPs, losses, full-batch gradient-descent training.
//! - [`topology`]: regions, client profiles, data partitioning.
//! - [`estimator`]: slack-factor least-squares estimation and selection.
//! - [`simclock`]: timing and energy models.
//! - [`protocol`]: the round engines for all three protocols.
//! - [`analysis`]: convergence-bound formulas and empirical verification.
//! - [`runner`]: experiment orchestration, CSV logs, reports.

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod estimator;
pub mod model;
pub mod protocol;
pub mod rng;
pub mod runner;
pub mod simclock;
pub mod topology;

pub use config::{ProtocolKind, SimConfig};
pub use error::{Result, SimError};
pub use protocol::{Engine, RoundOutcome};
pub use runner::{compare_protocols, run_experiment, ExperimentSpec, RunSummary, StopRule};
