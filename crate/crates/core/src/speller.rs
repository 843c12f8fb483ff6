//! Synthetic query-rewrite scenario.
//!
//! Stands in for a production spelling-correction log: each query carries a
//! short list of scored rewrite candidates, an action sends a subset of them
//! (always including the top candidate), and the reward attaches to the
//! subset as a whole. Ground-truth subset reward means are constructed
//! additively and monotone by default — sending an extra relevant candidate
//! never hurts — with a controllable violation rate for stress tests.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng, STREAM_SCENARIO};
use crate::types::{ActionMode, Context, EnvironmentSpec, RewardNoise};

/// Cap on candidates per query; keeps the 2^(L-1) subset space enumerable.
pub const MAX_CANDIDATES: usize = 8;

/// One query in the pool: its candidate scores live in `context.features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpellerQuery {
    pub context: Context,
    pub prob: f64,
}

/// The generated query pool with ground-truth subset reward means.
#[derive(Debug, Clone, PartialEq)]
pub struct SpellerScenario {
    pub queries: Vec<SpellerQuery>,
    /// `subset_means[q][i]` is the mean reward of subset index `i` for query
    /// `q`, covering every subset that contains candidate 1.
    pub subset_means: Vec<Vec<f64>>,
    pub l: usize,
}

/// Knobs for scenario generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_queries: usize,
    pub l: usize,
    /// Range the top candidate's score is drawn from.
    pub top_score_range: (f64, f64),
    /// Range the remaining candidates' scores are drawn from.
    pub other_score_range: (f64, f64),
    /// Range of the reward mean for the minimal subset `{1}`.
    pub base_reward_range: (f64, f64),
    /// Range of each extra candidate's additive reward gain.
    pub gain_range: (f64, f64),
    /// Probability that a candidate's gain is negated, breaking monotonicity.
    pub violation_rate: f64,
}

impl ScenarioConfig {
    pub fn new(num_queries: usize, l: usize) -> Self {
        ScenarioConfig {
            num_queries,
            l,
            top_score_range: (0.6, 0.95),
            other_score_range: (0.1, 0.9),
            base_reward_range: (0.15, 0.45),
            gain_range: (0.0, 0.1),
            violation_rate: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.l == 0 || self.l > MAX_CANDIDATES {
            return Err(Error::Input(format!(
                "candidate count L={} outside 1..={MAX_CANDIDATES}",
                self.l
            )));
        }
        if self.num_queries == 0 {
            return Err(Error::Input("need at least one query".into()));
        }
        if !(0.0..=1.0).contains(&self.violation_rate) {
            return Err(Error::Input(format!(
                "violation rate {} outside [0,1]",
                self.violation_rate
            )));
        }
        for (lo, hi) in [
            self.top_score_range,
            self.other_score_range,
            self.base_reward_range,
            self.gain_range,
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Input(format!("bad range ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

fn draw(rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Generate a monotone scenario with default ranges.
pub fn generate_scenario(num_queries: usize, l: usize, seed: u64) -> Result<SpellerScenario> {
    generate_scenario_with(&ScenarioConfig::new(num_queries, l), seed)
}

/// Generate a scenario under explicit configuration. Deterministic given
/// `(config, seed)`.
pub fn generate_scenario_with(config: &ScenarioConfig, seed: u64) -> Result<SpellerScenario> {
    config.validate()?;
    let mut rng = seeded_rng(derive_seed(seed, STREAM_SCENARIO, 0));
    let l = config.l;
    let k = 1usize << (l - 1);
    let mut queries = Vec::with_capacity(config.num_queries);
    let mut subset_means = Vec::with_capacity(config.num_queries);
    let mut raw_probs = Vec::with_capacity(config.num_queries);
    for q in 0..config.num_queries {
        let mut scores = Vec::with_capacity(l);
        scores.push(draw(&mut rng, config.top_score_range));
        for _ in 1..l {
            scores.push(draw(&mut rng, config.other_score_range));
        }
        let base = draw(&mut rng, config.base_reward_range);
        // Additive gains keep the subset means monotone; a violation flips
        // the sign so adding that candidate hurts.
        let gains: Vec<f64> = (1..l)
            .map(|_| {
                let g = draw(&mut rng, config.gain_range);
                if rng.random::<f64>() < config.violation_rate {
                    -g
                } else {
                    g
                }
            })
            .collect();
        let means: Vec<f64> = (0..k)
            .map(|bits| {
                let extra: f64 = gains
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| bits >> j & 1 == 1)
                    .map(|(_, g)| g)
                    .sum();
                (base + extra).clamp(0.0, 1.0)
            })
            .collect();
        queries.push(SpellerQuery {
            context: Context::new(format!("q{q}"), scores)?,
            prob: 0.0,
        });
        subset_means.push(means);
        raw_probs.push(draw(&mut rng, (0.5, 1.5)));
    }
    let total: f64 = raw_probs.iter().sum();
    let mut running = 0.0;
    let last = queries.len() - 1;
    for (q, query) in queries.iter_mut().enumerate() {
        if q == last {
            query.prob = 1.0 - running;
        } else {
            query.prob = raw_probs[q] / total;
            running += query.prob;
        }
    }
    Ok(SpellerScenario {
        queries,
        subset_means,
        l,
    })
}

impl SpellerScenario {
    /// Lossless conversion into the tabular environment form: subset-mode
    /// action space, query probabilities and reward means copied verbatim,
    /// Bernoulli click-style noise.
    pub fn to_environment(&self) -> Result<EnvironmentSpec> {
        EnvironmentSpec::new(
            self.queries.iter().map(|q| q.context.clone()).collect(),
            self.queries.iter().map(|q| q.prob).collect(),
            self.subset_means.clone(),
            ActionMode::Subset { l: self.l },
            RewardNoise::Bernoulli,
        )
    }
}

/// Identifying block written alongside the environment JSON so a generated
/// scenario file is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub num_queries: usize,
    pub l: usize,
    pub seed: u64,
    pub violation_rate: f64,
}

/// Environment JSON document with the scenario metadata attached. Plain
/// environment readers ignore the extra field.
pub fn scenario_document(
    scenario: &SpellerScenario,
    metadata: &ScenarioMetadata,
) -> Result<serde_json::Value> {
    let env = scenario.to_environment()?;
    let mut doc = serde_json::to_value(&env)?;
    doc.as_object_mut()
        .expect("environment serializes to an object")
        .insert("scenario".to_string(), serde_json::to_value(metadata)?);
    Ok(doc)
}
