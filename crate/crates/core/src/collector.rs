//! Randomized exploration logging.
//!
//! Collection follows the exploration protocol: per round, draw a context,
//! compute the action-selection distribution, sample one action with a
//! logged seed, realize the reward for that action only, and record the
//! propensity score alongside the full vector. Per-record seeds are derived
//! from the master seed by index, so every record is independently
//! replayable and the whole log is reproducible byte for byte.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng, STREAM_ACTION, STREAM_CONTEXT, STREAM_REWARD};
use crate::types::{Action, ActionMode, Context, EnvironmentSpec, RewardNoise};

/// Tolerance for "propensity vector sums to 1".
pub const PVEC_SUM_TOL: f64 = 1e-9;

/// Tolerance for "logged propensity equals its vector entry".
pub const PROPENSITY_MATCH_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Propensity vectors
// ---------------------------------------------------------------------------

/// The action-selection distribution used during collection, aligned with
/// the canonical action enumeration of its mode.
///
/// Every entry is strictly positive: zero-propensity actions would break the
/// unbiasedness of everything downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityVector {
    mode: ActionMode,
    probs: Vec<f64>,
}

impl PropensityVector {
    pub fn new(mode: ActionMode, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != mode.action_count() {
            return Err(Error::invalid(
                "propensity vector",
                format!(
                    "{} entries for an action space of {}",
                    probs.len(),
                    mode.action_count()
                ),
            ));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::invalid(
                "propensity vector",
                format!("entry {p} is not strictly positive"),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PVEC_SUM_TOL {
            return Err(Error::invalid(
                "propensity vector",
                format!("entries sum to {total}, not 1"),
            ));
        }
        Ok(PropensityVector { mode, probs })
    }

    pub fn mode(&self) -> ActionMode {
        self.mode
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability mass of `action` under this distribution.
    pub fn prob_of(&self, action: &Action) -> Result<f64> {
        Ok(self.probs[action.index(self.mode)?])
    }

    /// Action at `index` in the canonical enumeration.
    pub fn action_at(&self, index: usize) -> Result<Action> {
        Action::from_index(index, self.mode)
    }
}

// ---------------------------------------------------------------------------
// Randomization schemes
// ---------------------------------------------------------------------------

/// How actions are randomized at collection time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RandomizationScheme {
    /// Uniform over the enumerated action set; minimizes worst-case variance.
    Uniform,
    /// Subset randomization that biases collection toward high-scoring
    /// candidates: candidate 1 is always sent, candidate `i >= 2` is included
    /// independently with probability
    /// `q_i = 1 / (1 + exp(lambda1 * (s_1 - s_i) + lambda2))`,
    /// clipped into `[clip_low, clip_high]` before propensities are computed.
    SigmoidSubset {
        lambda1: f64,
        lambda2: f64,
        clip_low: f64,
        clip_high: f64,
    },
}

impl RandomizationScheme {
    /// Sigmoid-subset scheme with the default clip bounds and neutral slope.
    pub fn sigmoid_default() -> Self {
        RandomizationScheme::SigmoidSubset {
            lambda1: 1.0,
            lambda2: 0.0,
            clip_low: 0.1,
            clip_high: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let RandomizationScheme::SigmoidSubset {
            lambda1,
            lambda2,
            clip_low,
            clip_high,
        } = self
        {
            if !(lambda1.is_finite() && lambda2.is_finite()) {
                return Err(Error::invalid("scheme", "non-finite lambda"));
            }
            if !(0.0 < *clip_low && clip_low <= clip_high && *clip_high < 1.0) {
                return Err(Error::invalid(
                    "scheme",
                    format!("clip bounds ({clip_low}, {clip_high}) violate 0 < low <= high < 1"),
                ));
            }
        }
        Ok(())
    }

    /// The selection distribution this scheme induces for one context.
    pub fn selection_distribution(
        &self,
        mode: ActionMode,
        context: &Context,
    ) -> Result<PropensityVector> {
        self.validate()?;
        match self {
            RandomizationScheme::Uniform => {
                let k = mode.action_count();
                PropensityVector::new(mode, vec![1.0 / k as f64; k])
            }
            RandomizationScheme::SigmoidSubset {
                lambda1,
                lambda2,
                clip_low,
                clip_high,
            } => {
                let l = match mode {
                    ActionMode::Subset { l } => l,
                    ActionMode::Atomic { .. } => {
                        return Err(Error::PolicyDomain(
                            "sigmoid-subset randomization needs a subset action space".into(),
                        ))
                    }
                };
                if context.features.len() != l {
                    return Err(Error::PolicyDomain(format!(
                        "context has {} candidate scores, expected L={l}",
                        context.features.len()
                    )));
                }
                let s1 = context.features[0];
                // Clipping happens before propensity computation so the logged
                // scores describe the actual sampling distribution.
                let inclusion: Vec<f64> = (2..=l)
                    .map(|i| {
                        let s_i = context.features[i - 1];
                        let q = 1.0 / (1.0 + (lambda1 * (s1 - s_i) + lambda2).exp());
                        q.clamp(*clip_low, *clip_high)
                    })
                    .collect();
                let k = mode.action_count();
                let probs: Vec<f64> = (0..k)
                    .map(|subset_bits| {
                        inclusion
                            .iter()
                            .enumerate()
                            .map(|(j, q)| {
                                if subset_bits >> j & 1 == 1 {
                                    *q
                                } else {
                                    1.0 - q
                                }
                            })
                            .product()
                    })
                    .collect();
                PropensityVector::new(mode, probs)
            }
        }
    }
}

/// Draw one action by inverse CDF over the vector, using a generator seeded
/// with `seed`. Identical `(dist, seed)` always yield the identical action;
/// this is the replay contract the seed-verification test relies on.
pub fn sample_action(dist: &PropensityVector, seed: u64) -> Action {
    use rand::Rng;
    let u: f64 = seeded_rng(seed).random();
    let idx = inverse_cdf(dist.probs(), u);
    dist.action_at(idx).expect("index from own enumeration")
}

fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

// ---------------------------------------------------------------------------
// Exploration records
// ---------------------------------------------------------------------------

/// One logged round of randomized exploration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationRecord {
    pub context: Context,
    /// Seed that drove the action draw; present on logs from this collector,
    /// possibly absent on externally produced data.
    pub seed: Option<u64>,
    pub action: Action,
    /// Probability with which `action` was selected. Strictly positive.
    pub propensity: f64,
    /// Full selection distribution, when logged.
    pub propensity_vector: Option<PropensityVector>,
    /// Realized reward for the chosen action only, in `[0,1]`.
    pub reward: f64,
}

impl ExplorationRecord {
    pub fn new(
        context: Context,
        seed: Option<u64>,
        action: Action,
        propensity: f64,
        propensity_vector: Option<PropensityVector>,
        reward: f64,
    ) -> Result<Self> {
        if !(propensity.is_finite() && propensity > 0.0 && propensity <= 1.0) {
            return Err(Error::DataIntegrity(format!(
                "propensity {propensity} outside (0,1]"
            )));
        }
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::invalid(
                "record",
                format!("reward {reward} outside [0,1]"),
            ));
        }
        if let Some(vec) = &propensity_vector {
            let from_vec = vec.prob_of(&action)?;
            if (from_vec - propensity).abs() > PROPENSITY_MATCH_TOL {
                return Err(Error::DataIntegrity(format!(
                    "logged propensity {propensity} disagrees with vector entry {from_vec}"
                )));
            }
        }
        Ok(ExplorationRecord {
            context,
            seed,
            action,
            propensity,
            propensity_vector,
            reward,
        })
    }
}

// ---------------------------------------------------------------------------
// Collection
// ---------------------------------------------------------------------------

/// Generate `n` exploration records from the environment under `scheme`.
///
/// Deterministic given `(env, scheme, n, master_seed)`. Only the chosen
/// action's reward is realized; the environment's other rewards never reach
/// the log.
pub fn collect(
    env: &EnvironmentSpec,
    scheme: &RandomizationScheme,
    n: usize,
    master_seed: u64,
) -> Result<Vec<ExplorationRecord>> {
    use rand::Rng;
    if n == 0 {
        return Err(Error::Input("collection size n must be >= 1".into()));
    }
    scheme.validate()?;
    let mode = env.mode();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let ctx_idx = {
            let mut rng = seeded_rng(derive_seed(master_seed, STREAM_CONTEXT, i as u64));
            inverse_cdf(env.probs(), rng.random())
        };
        let context = env.contexts()[ctx_idx].clone();
        let dist = scheme.selection_distribution(mode, &context)?;
        let action_seed = derive_seed(master_seed, STREAM_ACTION, i as u64);
        let action = sample_action(&dist, action_seed);
        let propensity = dist.prob_of(&action)?;
        let mean = env.mean_reward(ctx_idx, &action)?;
        let reward = match env.noise() {
            RewardNoise::Fixed => mean,
            RewardNoise::Bernoulli => {
                let mut rng = seeded_rng(derive_seed(master_seed, STREAM_REWARD, i as u64));
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
        };
        records.push(ExplorationRecord::new(
            context,
            Some(action_seed),
            action,
            propensity,
            Some(dist),
            reward,
        )?);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Propensity corruption (negative-control generator)
// ---------------------------------------------------------------------------

/// How to distort logged propensities while leaving the sampled actions and
/// rewards untouched, producing a log whose recorded scores disagree with
/// the process that generated it.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensityCorruption {
    /// Multiply every entry by the same factor. Renormalization makes this an
    /// exact no-op on any vector; it exists to demonstrate that fixed point.
    Uniform(f64),
    /// Per-action factors keyed by enumerated action index; unlisted actions
    /// keep factor 1.
    PerAction(BTreeMap<usize, f64>),
}

impl PropensityCorruption {
    fn factor_for(&self, index: usize) -> f64 {
        match self {
            PropensityCorruption::Uniform(f) => *f,
            PropensityCorruption::PerAction(map) => map.get(&index).copied().unwrap_or(1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            PropensityCorruption::Uniform(f) => f.is_finite() && *f > 0.0,
            PropensityCorruption::PerAction(map) => map.values().all(|f| f.is_finite() && *f > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "corruption",
                "factors must be finite and > 0",
            ))
        }
    }
}

/// Result of corrupting a log: the rewritten records plus how many of them
/// actually moved. `changed == 0` means the corruption was a no-op (for
/// example, any uniform factor) and the caller should pick asymmetric
/// per-action factors instead.
#[derive(Debug, Clone)]
pub struct CorruptionOutcome {
    pub records: Vec<ExplorationRecord>,
    pub changed: usize,
}

/// Multiply logged propensities by per-action factors and renormalize each
/// vector. Actions, rewards, and seeds are untouched.
pub fn corrupt_propensities(
    log: &[ExplorationRecord],
    corruption: &PropensityCorruption,
) -> Result<CorruptionOutcome> {
    corruption.validate()?;
    let mut changed = 0usize;
    let mut records = Vec::with_capacity(log.len());
    for record in log {
        let vec = record.propensity_vector.as_ref().ok_or_else(|| {
            Error::InsufficientData("corruption needs full propensity vectors".into())
        })?;
        let scaled: Vec<f64> = vec
            .probs()
            .iter()
            .enumerate()
            .map(|(i, p)| p * corruption.factor_for(i))
            .collect();
        if let Some(bad) = scaled.iter().find(|p| **p >= 1.0) {
            return Err(Error::Range(format!(
                "scaled propensity {bad} >= 1; no room to renormalize"
            )));
        }
        let total: f64 = scaled.iter().sum();
        let renormalized: Vec<f64> = scaled.iter().map(|p| p / total).collect();
        let moved = renormalized
            .iter()
            .zip(vec.probs())
            .any(|(q, p)| (q - p).abs() > 1e-12);
        if moved {
            changed += 1;
        }
        let new_vec = PropensityVector::new(vec.mode(), renormalized)?;
        let new_p = new_vec.prob_of(&record.action)?;
        records.push(ExplorationRecord::new(
            record.context.clone(),
            record.seed,
            record.action,
            new_p,
            Some(new_vec),
            record.reward,
        )?);
    }
    Ok(CorruptionOutcome { records, changed })
}
