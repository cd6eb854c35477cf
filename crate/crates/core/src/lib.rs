//! Pragmatic policy development through interpretable behavior cloning.
//!
//! The crate fits tree-based models of an observed (behavior) treatment
//! policy, derives target policies from the most frequently chosen actions in
//! each state, and evaluates those policies offline with importance sampling.
//!
//! Module map:
//!
//! * [`data`]: trajectories, feature schemas, ingestion, imputation/encoding,
//!   state construction and trajectory-level splits.
//! * [`tree`]: CART classification trees with probabilistic leaves and
//!   per-leaf outcome statistics, DOT/JSON export.
//! * [`calibration`] and [`metrics`]: sigmoid calibration, macro AUROC, SCE.
//! * [`behavior`]: DT, switch/treatment meta-estimator (DT-S) and its
//!   baseline-aware variant (DT-BLS).
//! * [`policy`]: top-k, outcome-guided, switch-adjusted, random and softened
//!   target policies.
//! * [`ope`]: importance weights, IS/WIS, effective sample size, summaries.
//! * [`sim`]: chronic and episodic simulators with known behavior policies
//!   and a Monte-Carlo value oracle.
//! * [`harness`]: model selection, cross-validation and the repeated-split
//!   experiment runner.

pub mod behavior;
pub mod calibration;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod ope;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod tree;

pub use error::{Error, Result};
