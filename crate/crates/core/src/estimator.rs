//! Counterfactual value estimation from exploration logs.
//!
//! The workhorse is the inverse-propensity-scoring estimate: the average of
//! `r_a * 1[pi(x) = a] / p_a` over the log. With everywhere-positive logged
//! propensities this is an unbiased estimate of the policy's true value, so
//! a policy can be scored without ever running it. The module also carries
//! the clipped variant (`max(p_min, p_a)` in the denominator), the naive
//! matched-average estimate that ignores sampling bias, the exact
//! per-record variance over a finite environment, and normal-approximation
//! confidence intervals.

use serde::{Deserialize, Serialize};

use crate::collector::ExplorationRecord;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng, STREAM_CONTEXT, STREAM_REWARD};
use crate::types::{EnvironmentSpec, Policy, RewardNoise};

use rand::Rng;

/// Supported confidence levels and their normal quantiles.
pub const Z_TABLE: [(f64, f64); 3] = [(0.90, 1.645), (0.95, 1.96), (0.99, 2.576)];

/// Normal quantile for a supported confidence level.
pub fn z_for_level(level: f64) -> Result<f64> {
    Z_TABLE
        .iter()
        .find(|(l, _)| (l - level).abs() < 1e-9)
        .map(|(_, z)| *z)
        .ok_or_else(|| {
            Error::Input(format!(
                "confidence level {level} not in the fixed table (0.90, 0.95, 0.99)"
            ))
        })
}

// ---------------------------------------------------------------------------
// Running moments
// ---------------------------------------------------------------------------

/// One-pass mean and variance (Welford). Matches the two-pass definition to
/// within 1e-10 relative, which the tests pin down.
#[derive(Debug, Clone, Default)]
pub struct RunningMoments {
    count: usize,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (n-1 denominator); NaN-free: 0 for n < 2.
    pub fn sample_variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn sample_std(&self) -> f64 {
        self.sample_variance().sqrt()
    }

    /// Standard error of the mean; infinite when n < 2 so degenerate inputs
    /// produce an honest, maximally wide interval instead of a crash.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            f64::INFINITY
        } else {
            self.sample_std() / (self.count as f64).sqrt()
        }
    }
}

// ---------------------------------------------------------------------------
// Estimates
// ---------------------------------------------------------------------------

/// Propensity clipping floor: `p_a` is replaced by `max(p_min, p_a)` in the
/// denominator, trading a small bias for bounded variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    p_min: f64,
}

impl ClipConfig {
    pub fn new(p_min: f64) -> Result<Self> {
        if !(p_min.is_finite() && 0.0 < p_min && p_min < 1.0) {
            return Err(Error::invalid(
                "clip config",
                format!("p_min {p_min} outside (0,1)"),
            ));
        }
        Ok(ClipConfig { p_min })
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }
}

/// A point estimate with its normal-approximation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyValueEstimate {
    pub point: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    /// Records where the evaluated policy agrees with the logged action.
    pub match_count: usize,
}

/// The contribution of one record to the IPS sum.
pub fn per_record_term(
    record: &ExplorationRecord,
    policy: &Policy,
    clip: Option<ClipConfig>,
) -> Result<(f64, bool)> {
    if record.propensity <= 0.0 {
        return Err(Error::DataIntegrity(format!(
            "propensity {} is not positive",
            record.propensity
        )));
    }
    let matched = policy.apply(&record.context)? == record.action;
    if !matched {
        return Ok((0.0, false));
    }
    let denom = match clip {
        Some(c) => c.p_min().max(record.propensity),
        None => record.propensity,
    };
    Ok((record.reward / denom, true))
}

/// Inverse-propensity-scoring estimate of the policy's value over the log.
///
/// Computed in a single pass with running moments. `stderr` uses the
/// unbiased (n-1) sample standard deviation; the interval is
/// `point ± z * stderr` at the requested level.
pub fn ips_estimate(
    log: &[ExplorationRecord],
    policy: &Policy,
    clip: Option<ClipConfig>,
    level: f64,
) -> Result<PolicyValueEstimate> {
    let z = z_for_level(level)?;
    if log.is_empty() {
        return Err(Error::Input("cannot estimate from an empty log".into()));
    }
    let mut moments = RunningMoments::new();
    let mut match_count = 0usize;
    for record in log {
        let (term, matched) = per_record_term(record, policy, clip)?;
        moments.push(term);
        if matched {
            match_count += 1;
        }
    }
    let point = moments.mean();
    let stderr = moments.stderr();
    Ok(PolicyValueEstimate {
        point,
        stderr,
        ci_low: point - z * stderr,
        ci_high: point + z * stderr,
        n: moments.count(),
        match_count,
    })
}

// ---------------------------------------------------------------------------
// Biased (matched-average) estimate
// ---------------------------------------------------------------------------

/// The naive estimate that ignores sampling bias: the mean reward over
/// records whose logged action agrees with the policy. With no matching
/// records the value is undefined, and stays explicitly undefined rather
/// than masquerading as a zero value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum BiasedEstimate {
    Defined(PolicyValueEstimate),
    Undefined { n: usize },
}

impl BiasedEstimate {
    pub fn point(&self) -> Option<f64> {
        match self {
            BiasedEstimate::Defined(e) => Some(e.point),
            BiasedEstimate::Undefined { .. } => None,
        }
    }

    pub fn as_defined(&self) -> Option<&PolicyValueEstimate> {
        match self {
            BiasedEstimate::Defined(e) => Some(e),
            BiasedEstimate::Undefined { .. } => None,
        }
    }
}

/// Matched-average estimate with a 95% interval from the matched subsample.
pub fn biased_estimate(log: &[ExplorationRecord], policy: &Policy) -> Result<BiasedEstimate> {
    if log.is_empty() {
        return Err(Error::Input("cannot estimate from an empty log".into()));
    }
    let z = 1.96;
    let mut moments = RunningMoments::new();
    for record in log {
        if policy.apply(&record.context)? == record.action {
            moments.push(record.reward);
        }
    }
    if moments.count() == 0 {
        return Ok(BiasedEstimate::Undefined { n: log.len() });
    }
    let point = moments.mean();
    let stderr = moments.stderr();
    Ok(BiasedEstimate::Defined(PolicyValueEstimate {
        point,
        stderr,
        ci_low: point - z * stderr,
        ci_high: point + z * stderr,
        n: log.len(),
        match_count: moments.count(),
    }))
}

// ---------------------------------------------------------------------------
// Exact variance over a finite environment
// ---------------------------------------------------------------------------

/// Exact per-record variance of the IPS estimator:
/// `E[(r_{pi(x)})^2 * (1/p_{pi(x)} - 1)]` over the finite spec.
///
/// The estimate over `n` records has variance `ips_variance(..) / n`. The
/// formula conditions on rewards being deterministic given the context, so
/// Bernoulli-noise environments are rejected.
pub fn ips_variance(
    policy: &Policy,
    env: &EnvironmentSpec,
    scheme: &crate::collector::RandomizationScheme,
) -> Result<f64> {
    if env.noise() != RewardNoise::Fixed {
        return Err(Error::Input(
            "exact variance needs deterministic rewards; use a fixed-noise environment".into(),
        ));
    }
    let mut total = 0.0;
    for (i, ctx) in env.contexts().iter().enumerate() {
        let action = policy.apply(ctx)?;
        let dist = scheme.selection_distribution(env.mode(), ctx)?;
        let p = dist.prob_of(&action)?;
        let r = env.mean_reward(i, &action)?;
        total += env.probs()[i] * r * r * (1.0 / p - 1.0);
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Online-vs-offline comparison
// ---------------------------------------------------------------------------

/// Summary of actually running a policy on the environment for one period:
/// the online arm of an A/B comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineRollout {
    pub period: u32,
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
}

/// Run `policy` against the environment for `n` rounds, observing its own
/// rewards. This is the "ground truth" side the offline estimates are
/// compared to.
pub fn online_rollout(
    env: &EnvironmentSpec,
    policy: &Policy,
    n: usize,
    seed: u64,
    period: u32,
) -> Result<OnlineRollout> {
    if n == 0 {
        return Err(Error::Input("rollout size n must be >= 1".into()));
    }
    let mut moments = RunningMoments::new();
    for i in 0..n {
        let ctx_idx = {
            let mut rng = seeded_rng(derive_seed(seed, STREAM_CONTEXT, i as u64));
            let u: f64 = rng.random();
            pick_index(env.probs(), u)
        };
        let action = policy.apply(&env.contexts()[ctx_idx])?;
        let mean = env.mean_reward(ctx_idx, &action)?;
        let reward = match env.noise() {
            RewardNoise::Fixed => mean,
            RewardNoise::Bernoulli => {
                let mut rng = seeded_rng(derive_seed(seed, STREAM_REWARD, i as u64));
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
        };
        moments.push(reward);
    }
    Ok(OnlineRollout {
        period,
        n,
        value: moments.mean(),
        stderr: moments.stderr(),
    })
}

fn pick_index(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// Offline estimates for one period, paired with the period id they were
/// computed over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflinePeriodEstimates {
    pub period: u32,
    pub ips: PolicyValueEstimate,
    pub biased: BiasedEstimate,
}

/// One row of the online-vs-offline scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub period: u32,
    pub online_value: f64,
    pub ips_value: f64,
    pub biased_value: Option<f64>,
    pub ci_width: f64,
}

/// Pair one period's online rollout with its offline estimates.
pub fn compare(online: &OnlineRollout, offline: &OfflinePeriodEstimates) -> Result<ComparisonRow> {
    if online.period != offline.period {
        return Err(Error::Alignment(format!(
            "online period {} vs offline period {}",
            online.period, offline.period
        )));
    }
    Ok(ComparisonRow {
        period: online.period,
        online_value: online.value,
        ips_value: offline.ips.point,
        biased_value: offline.biased.point(),
        ci_width: offline.ips.ci_high - offline.ips.ci_low,
    })
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

/// Fixed header for estimate exports.
pub const ESTIMATE_CSV_HEADER: &str =
    "policy_id,estimator,point,stderr,ci_low,ci_high,n,match_count";

/// One CSV line for an estimate, under the fixed header.
pub fn estimate_csv_row(policy_id: &str, estimator: &str, est: &PolicyValueEstimate) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        policy_id,
        estimator,
        est.point,
        est.stderr,
        est.ci_low,
        est.ci_high,
        est.n,
        est.match_count
    )
}

/// CSV line for a biased estimate; undefined values export as NA.
pub fn biased_csv_row(policy_id: &str, est: &BiasedEstimate) -> String {
    match est {
        BiasedEstimate::Defined(e) => estimate_csv_row(policy_id, "biased", e),
        BiasedEstimate::Undefined { n } => {
            format!("{policy_id},biased,NA,NA,NA,NA,{n},0")
        }
    }
}

/// Fixed header for comparison exports.
pub const COMPARISON_CSV_HEADER: &str = "period,online_value,ips_value,biased_value,ci_width";

pub fn comparison_csv_row(row: &ComparisonRow) -> String {
    let biased = row
        .biased_value
        .map(|v| v.to_string())
        .unwrap_or_else(|| "NA".to_string());
    format!(
        "{},{},{},{},{}",
        row.period, row.online_value, row.ips_value, biased, row.ci_width
    )
}
