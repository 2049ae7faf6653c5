//! Closed-loop simulator and library for learned causal experimental design.
//!
//! An oracle environment answers interventions, a neural [`learner`] estimates
//! the mechanisms, and proposal [`policy`] implementations decide where and at
//! what value to intervene next. The [`orchestrator`] wires these into the
//! experiment loop: candidates are scored by simulating them on a cloned
//! learner, the best one is executed, and trainable policies are updated from
//! preference pairs ([`trainers::dpo`]) or advantages ([`trainers::ppo`]).

pub mod archive;
pub mod checkpoint;
pub mod config;
pub mod convergence;
pub mod dataset;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod learner;
pub mod mechanism;
pub mod nn;
pub mod orchestrator;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod scm;
pub mod stats;
pub mod trainers;

pub mod cli;


pub use dataset::{Dataset, Provenance};
pub use error::{Error, Result};
pub use graph::CausalGraph;
pub use mechanism::{Mechanism, Term};
pub use scm::{Intervention, OracleScm, ValueRange};
