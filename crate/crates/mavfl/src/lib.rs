//! Deterministic simulator for federated learning over a road segment.
//!
//! Vehicles drive through a base-station-covered stretch of road while
//! training a shared model. A vehicle that leaves the segment before its
//! upload starts drops out of the round, so the server's successful-training
//! ratio depends on who was selected. Selection policies trade that ratio
//! off against round delay; the main one is a discounted-UCB bandit over
//! vehicles, with nearest-distance, longest-dwell, and random baselines.
//!
//! Modules:
//! - [`mobility`]: IDM car-following traffic, arrivals, zones, dropout.
//! - [`radio`]: zone-quantized distance, Shannon uplink, delay assembly.
//! - [`task`] / [`fl`]: synthetic tasks and the local-SGD / aggregation core.
//! - [`selection`]: round utility, discounted-UCB state, baseline policies.
//! - [`theory`]: empirical checks of the convergence analysis.
//! - [`config`] / [`harness`]: TOML experiment configs and the round loop.
//!
//! Every run is a pure function of its config and master seed: identical
//! inputs produce byte-identical metrics.

pub mod config;
pub mod error;
pub mod fl;
pub mod harness;
pub mod mobility;
pub mod radio;
pub mod rng;
pub mod selection;
pub mod task;
pub mod theory;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use harness::{run_experiment, RunSummary, Simulation};
