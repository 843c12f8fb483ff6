//! Unbiased offline (counterfactual) evaluation and optimization of decision
//! policies from randomized exploration logs.
//!
//! The crate is organized around a simulated contextual-bandit loop with an
//! exactly computable value oracle, so every estimator can be checked against
//! closed-form ground truth:
//!
//! - [`types`] — contexts, actions, deterministic policies, finite
//!   environments, and the exact policy-value oracle.
//! - [`collector`] — randomized exploration logging with per-record seeds and
//!   propensity scores.
//! - [`estimator`] — the inverse-propensity-scoring (IPS) value estimate, the
//!   clipped variant, the naive matched-average estimate, and
//!   normal-approximation confidence intervals.
//! - [`diagnostics`] — arithmetic mean, harmonic mean, and seed-replay checks
//!   that catch propensity logging bugs before estimates are trusted.
//! - [`bootstrap`] — online (Poisson-weighted) bootstrap of the estimator's
//!   sampling distribution.
//! - [`optimizer`] — grid selection of policy parameters by maximizing the
//!   IPS estimate on a train split, validated on a held-out split.
//! - [`speller`] — a synthetic query-rewrite scenario exercising the
//!   subset-action path end to end.

pub mod bootstrap;
pub mod collector;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod logio;
pub mod optimizer;
pub mod rng;
pub mod speller;
pub mod types;

pub use error::{Error, Result};
