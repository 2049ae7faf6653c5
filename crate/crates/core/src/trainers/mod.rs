//! Policy training rules: direct preference optimization over best/worst
//! candidate pairs and a clipped-surrogate actor-critic baseline.

pub mod dpo;
pub mod ppo;

use thiserror::Error;

use crate::policy::PolicyError;

pub use dpo::{
    dpo_loss, dpo_update, make_preference_pair, make_preference_pairs, refresh_reference, DpoConfig, DpoStats,
    PairsPerStep, PreferencePair,
};
pub use ppo::{compute_gae, ppo_loss, ppo_update, Critic, PpoConfig, PpoStats, PpoStep};

#[derive(Debug, Error, PartialEq)]
pub enum TrainerError {
    #[error("candidate {0} has no reward")]
    UnscoredCandidate(usize),
    #[error("need at least {0} candidates")]
    TooFewCandidates(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}
