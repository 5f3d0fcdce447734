//! Scenario runner for the cell-free O-RAN digital twin: the proposed agent
//! loop and its baselines, run records with CSV export, policy training, and
//! the HTTP service the operator console talks to.

pub mod error;
pub mod record;
pub mod run;
pub mod scenario;
pub mod service;
pub mod transport;

pub use error::{Result, RuntimeError};
pub use record::{export_metrics, RunRecord, Summary};
pub use run::{greedy_activation, load_policy, run_scenario, train_policy, Mode, Simulation};
pub use scenario::Scenario;
