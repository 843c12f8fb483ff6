//! Contextual-bandit domain model: contexts, actions, deterministic policies,
//! finite tabular environments, and the exact policy-value oracle.
//!
//! Environments are finite and tabular on purpose: the value of any policy is
//! a closed-form sum, which is what lets every estimator in this crate be
//! tested against exact ground truth instead of a second approximation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Enumeration cap for subset action spaces (2^19 actions at the cap).
pub const MAX_SUBSET_CANDIDATES: usize = 20;

/// Tolerance for "context probabilities sum to 1".
pub const PROB_SUM_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Context
// ---------------------------------------------------------------------------

/// One observable situation: an opaque id plus real-valued feature scores.
///
/// In the query-rewrite scenario the features are the candidate scores
/// `s_1..s_L`; in plain atomic environments they are free-form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub id: String,
    pub features: Vec<f64>,
}

impl Context {
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::invalid("context", "feature list is empty"));
        }
        if let Some(bad) = features.iter().find(|f| !f.is_finite()) {
            return Err(Error::invalid("context", format!("non-finite score {bad}")));
        }
        Ok(Context {
            id: id.into(),
            features,
        })
    }
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

/// A set of candidate indices over `1..=L` that always contains candidate 1.
///
/// Stored as a bitmask (bit `i-1` = candidate `i`), which keeps subset
/// enumeration order canonical: the subset's index in the enumerated action
/// space is the bitmask over candidates `2..=L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CandidateSet(u32);

impl CandidateSet {
    /// The singleton `{1}`.
    pub fn top_only() -> Self {
        CandidateSet(1)
    }

    /// Build from candidate indices. Candidate 1 must be present, indices
    /// must be unique and within the enumeration cap.
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Result<Self> {
        let mut mask: u32 = 0;
        for i in indices {
            if i == 0 || i > MAX_SUBSET_CANDIDATES {
                return Err(Error::invalid(
                    "candidate set",
                    format!("candidate index {i} out of 1..={MAX_SUBSET_CANDIDATES}"),
                ));
            }
            let bit = 1u32 << (i - 1);
            if mask & bit != 0 {
                return Err(Error::invalid(
                    "candidate set",
                    format!("duplicate candidate index {i}"),
                ));
            }
            mask |= bit;
        }
        if mask & 1 == 0 {
            return Err(Error::invalid(
                "candidate set",
                "candidate 1 (the top candidate) must be included",
            ));
        }
        Ok(CandidateSet(mask))
    }

    pub fn contains(&self, candidate: usize) -> bool {
        (1..=MAX_SUBSET_CANDIDATES).contains(&candidate) && self.0 & (1u32 << (candidate - 1)) != 0
    }

    /// Number of candidates in the set.
    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        false // candidate 1 is always present
    }

    /// Sorted candidate indices.
    pub fn indices(&self) -> Vec<usize> {
        (1..=MAX_SUBSET_CANDIDATES)
            .filter(|&i| self.contains(i))
            .collect()
    }

    /// Position of this subset in the canonical enumeration over `L`
    /// candidates: the bitmask over candidates `2..=L`.
    pub fn subset_index(&self, l: usize) -> Result<usize> {
        let highest = 32 - self.0.leading_zeros() as usize;
        if highest > l {
            return Err(Error::invalid(
                "candidate set",
                format!("candidate {highest} exceeds L={l}"),
            ));
        }
        Ok((self.0 >> 1) as usize)
    }

    /// Inverse of [`subset_index`](Self::subset_index).
    pub fn from_subset_index(index: usize, l: usize) -> Result<Self> {
        if l == 0 || l > MAX_SUBSET_CANDIDATES {
            return Err(Error::invalid(
                "candidate set",
                format!("L={l} out of 1..={MAX_SUBSET_CANDIDATES}"),
            ));
        }
        if index >= (1usize << (l - 1)) {
            return Err(Error::invalid(
                "candidate set",
                format!("subset index {index} out of range for L={l}"),
            ));
        }
        Ok(CandidateSet(((index as u32) << 1) | 1))
    }
}

impl fmt::Display for CandidateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.indices().iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// One decision: a single arm index, or a candidate subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    /// Index into `0..K-1`.
    Atomic(usize),
    /// Candidate subset over `1..=L`, always containing candidate 1.
    Subset(CandidateSet),
}

impl Action {
    pub fn subset<I: IntoIterator<Item = usize>>(indices: I) -> Result<Self> {
        Ok(Action::Subset(CandidateSet::from_indices(indices)?))
    }

    /// Index of this action in the enumerated action space of `mode`.
    pub fn index(&self, mode: ActionMode) -> Result<usize> {
        match (self, mode) {
            (Action::Atomic(i), ActionMode::Atomic { k }) => {
                if *i < k {
                    Ok(*i)
                } else {
                    Err(Error::invalid(
                        "action",
                        format!("atomic index {i} out of 0..{k}"),
                    ))
                }
            }
            (Action::Subset(s), ActionMode::Subset { l }) => s.subset_index(l),
            _ => Err(Error::invalid(
                "action",
                format!("{self} does not match action mode {mode:?}"),
            )),
        }
    }

    /// Action at `index` in the enumerated action space of `mode`.
    pub fn from_index(index: usize, mode: ActionMode) -> Result<Self> {
        match mode {
            ActionMode::Atomic { k } => {
                if index < k {
                    Ok(Action::Atomic(index))
                } else {
                    Err(Error::invalid(
                        "action",
                        format!("index {index} out of 0..{k}"),
                    ))
                }
            }
            ActionMode::Subset { l } => {
                Ok(Action::Subset(CandidateSet::from_subset_index(index, l)?))
            }
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Atomic(i) => write!(f, "a{i}"),
            Action::Subset(s) => write!(f, "{s}"),
        }
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Action::Atomic(i) => serializer.serialize_u64(*i as u64),
            Action::Subset(s) => s.indices().serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Atomic(u64),
            Subset(Vec<usize>),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Atomic(i) => Ok(Action::Atomic(i as usize)),
            Repr::Subset(v) => CandidateSet::from_indices(v)
                .map(Action::Subset)
                .map_err(serde::de::Error::custom),
        }
    }
}

// ---------------------------------------------------------------------------
// Rewards
// ---------------------------------------------------------------------------

/// Per-action mean rewards for one context; every entry must lie in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector(Vec<f64>);

impl RewardVector {
    pub fn new(rewards: Vec<f64>) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::invalid("reward vector", "empty"));
        }
        if let Some(bad) = rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::invalid(
                "reward vector",
                format!("reward {bad} outside [0,1]"),
            ));
        }
        Ok(RewardVector(rewards))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// How a realized reward relates to its mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardNoise {
    /// Reward is a Bernoulli draw with the configured mean (click-style).
    Bernoulli,
    /// Reward equals the mean exactly (deterministic environments).
    Fixed,
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// A deterministic context-to-action map from one of three transparent
/// parametric families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Policy {
    /// Explicit per-context table, keyed by context id.
    LookupTable { table: BTreeMap<String, Action> },
    /// Subset policy: include candidate `i >= 2` iff its score `s_i >= tau`;
    /// candidate 1 is always included.
    ScoreThreshold { tau: f64 },
    /// Atomic policy: pick `argmax_a weights[a] * features[a]`, ties broken
    /// toward the lowest action index.
    LinearArgmax { weights: Vec<f64> },
}

impl Policy {
    /// Apply the policy to a context, yielding exactly one action.
    ///
    /// Pure: equal inputs always produce equal outputs.
    pub fn apply(&self, context: &Context) -> Result<Action> {
        match self {
            Policy::LookupTable { table } => table.get(&context.id).copied().ok_or_else(|| {
                Error::PolicyDomain(format!("context {:?} not in lookup table", context.id))
            }),
            Policy::ScoreThreshold { tau } => {
                let l = context.features.len();
                if l > MAX_SUBSET_CANDIDATES {
                    return Err(Error::PolicyDomain(format!(
                        "{l} candidates exceed the cap of {MAX_SUBSET_CANDIDATES}"
                    )));
                }
                let included = (1..=l).filter(|&i| i == 1 || context.features[i - 1] >= *tau);
                Action::subset(included)
            }
            Policy::LinearArgmax { weights } => {
                if weights.len() != context.features.len() {
                    return Err(Error::PolicyDomain(format!(
                        "weight count {} != feature count {}",
                        weights.len(),
                        context.features.len()
                    )));
                }
                let mut best = 0usize;
                let mut best_score = f64::NEG_INFINITY;
                for (a, (w, x)) in weights.iter().zip(&context.features).enumerate() {
                    let score = w * x;
                    if score > best_score {
                        best = a;
                        best_score = score;
                    }
                }
                Ok(Action::Atomic(best))
            }
        }
    }

    /// Compact identifier used in CSV/JSON exports.
    pub fn describe(&self) -> String {
        match self {
            Policy::LookupTable { table } => format!("lookup[{}]", table.len()),
            Policy::ScoreThreshold { tau } => format!("threshold({tau})"),
            Policy::LinearArgmax { weights } => {
                let parts: Vec<String> = weights.iter().map(|w| format!("{w}")).collect();
                format!("linear[{}]", parts.join(","))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

/// Shape of the action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Atomic { k: usize },
    Subset { l: usize },
}

impl ActionMode {
    /// Number of distinct actions.
    pub fn action_count(&self) -> usize {
        match self {
            ActionMode::Atomic { k } => *k,
            ActionMode::Subset { l } => 1usize << (l - 1),
        }
    }
}

/// A finite contextual-bandit environment with known reward means, i.e. the
/// ground truth every estimator is tested against.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    contexts: Vec<Context>,
    probs: Vec<f64>,
    reward_means: Vec<Vec<f64>>,
    mode: ActionMode,
    noise: RewardNoise,
}

impl EnvironmentSpec {
    pub fn new(
        contexts: Vec<Context>,
        probs: Vec<f64>,
        reward_means: Vec<Vec<f64>>,
        mode: ActionMode,
        noise: RewardNoise,
    ) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::invalid("environment", "no contexts"));
        }
        if probs.len() != contexts.len() || reward_means.len() != contexts.len() {
            return Err(Error::invalid(
                "environment",
                format!(
                    "lengths disagree: {} contexts, {} probs, {} reward rows",
                    contexts.len(),
                    probs.len(),
                    reward_means.len()
                ),
            ));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(
                "environment",
                format!("context probability {p} outside [0,1]"),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(
                "environment",
                format!("context probabilities sum to {total}, not 1"),
            ));
        }
        match mode {
            ActionMode::Atomic { k: 0 } => {
                return Err(Error::invalid("environment", "atomic mode with K = 0"));
            }
            ActionMode::Subset { l } if l == 0 || l > MAX_SUBSET_CANDIDATES => {
                return Err(Error::invalid(
                    "environment",
                    format!("subset mode needs 1 <= L <= {MAX_SUBSET_CANDIDATES}, got {l}"),
                ));
            }
            _ => {}
        }
        let k = mode.action_count();
        for (i, row) in reward_means.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(
                    "environment",
                    format!("reward row {i} has {} entries, expected {k}", row.len()),
                ));
            }
            RewardVector::new(row.clone())?;
        }
        if let ActionMode::Subset { l } = mode {
            for ctx in &contexts {
                if ctx.features.len() != l {
                    return Err(Error::invalid(
                        "environment",
                        format!(
                            "context {:?} has {} candidate scores, expected L={l}",
                            ctx.id,
                            ctx.features.len()
                        ),
                    ));
                }
            }
        }
        Ok(EnvironmentSpec {
            contexts,
            probs,
            reward_means,
            mode,
            noise,
        })
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mode(&self) -> ActionMode {
        self.mode
    }

    pub fn noise(&self) -> RewardNoise {
        self.noise
    }

    pub fn action_count(&self) -> usize {
        self.mode.action_count()
    }

    /// Same environment with a different reward-noise model.
    pub fn with_noise(mut self, noise: RewardNoise) -> Self {
        self.noise = noise;
        self
    }

    /// Mean reward of `action` in context number `ctx_idx`.
    pub fn mean_reward(&self, ctx_idx: usize, action: &Action) -> Result<f64> {
        let a = action.index(self.mode)?;
        self.reward_means
            .get(ctx_idx)
            .and_then(|row| row.get(a))
            .copied()
            .ok_or_else(|| Error::invalid("environment", format!("no context {ctx_idx}")))
    }

    /// The complete, duplicate-free action list in canonical order.
    ///
    /// In subset mode this is all `2^(L-1)` subsets containing candidate 1,
    /// ordered by their bitmask over candidates `2..=L`.
    pub fn enumerate_actions(&self) -> Result<Vec<Action>> {
        let k = self.action_count();
        (0..k).map(|i| Action::from_index(i, self.mode)).collect()
    }

    /// Exact policy value: `sum_x Pr(x) * E[r_{pi(x)}]`.
    ///
    /// This closed-form sum over the finite spec is the ground-truth oracle
    /// for every estimator test in the crate.
    pub fn true_value(&self, policy: &Policy) -> Result<f64> {
        let mut value = 0.0;
        for (i, ctx) in self.contexts.iter().enumerate() {
            let action = policy.apply(ctx)?;
            value += self.probs[i] * self.mean_reward(i, &action)?;
        }
        Ok(value)
    }
}

// ---------------------------------------------------------------------------
// Environment JSON form
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EnvironmentJson {
    contexts: Vec<Context>,
    probs: Vec<f64>,
    reward_means: Vec<Vec<f64>>,
    mode: String,
    #[serde(default = "default_noise")]
    noise: RewardNoise,
}

fn default_noise() -> RewardNoise {
    RewardNoise::Bernoulli
}

impl Serialize for EnvironmentSpec {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let mode = match self.mode {
            ActionMode::Atomic { .. } => "atomic",
            ActionMode::Subset { .. } => "subset",
        };
        EnvironmentJson {
            contexts: self.contexts.clone(),
            probs: self.probs.clone(),
            reward_means: self.reward_means.clone(),
            mode: mode.to_string(),
            noise: self.noise,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EnvironmentSpec {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let raw = EnvironmentJson::deserialize(deserializer)?;
        let width = raw
            .reward_means
            .first()
            .map(|r| r.len())
            .ok_or_else(|| DeError::custom("no reward rows"))?;
        let mode = match raw.mode.as_str() {
            "atomic" => ActionMode::Atomic { k: width },
            "subset" => {
                if !width.is_power_of_two() {
                    return Err(DeError::custom(format!(
                        "subset mode needs a power-of-two action count, got {width}"
                    )));
                }
                ActionMode::Subset {
                    l: width.trailing_zeros() as usize + 1,
                }
            }
            other => return Err(DeError::custom(format!("unknown mode {other:?}"))),
        };
        EnvironmentSpec::new(raw.contexts, raw.probs, raw.reward_means, mode, raw.noise)
            .map_err(DeError::custom)
    }
}
