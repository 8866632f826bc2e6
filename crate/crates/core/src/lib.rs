//! Application-aware resource-block scheduling for an LTE downlink.
//!
//! UEs carry one application each, modeled by a sigmoidal (real-time) or
//! logarithmic (elastic) utility. The online scheduler assigns each resource
//! block, frame by frame, to the UE with the largest `U'(r) H / U(r)`, which
//! drives the long-run assignment fractions to the maximizer of
//! `sum_i ln U_i(r_i)`. A projected-gradient solver computes that maximizer
//! directly so the online result can be certified, and a weighted
//! proportional-fair scheduler is provided as the baseline.

pub mod channel;
pub mod engine;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod oracle;
pub mod scenario;
pub mod utility;

pub use channel::{GainMatrix, GainModel, SplitMix64};
pub use engine::{run_frames, CellInstance, Objective, Policy, RunReport, ScheduleState};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use oracle::{brute_force_phi, kkt_residual, project_simplex, solve_optimal_phi, OracleSolution};
pub use scenario::{parse_scenario, Scenario};
pub use utility::{UtilityFunction, DEFAULT_RATE_FLOOR};
