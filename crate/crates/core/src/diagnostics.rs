//! Propensity-score verification.
//!
//! Logged propensities feed the estimator through their reciprocals, so even
//! small logging errors can produce large bias. Before any estimate is
//! trusted, a log should pass:
//!
//! - the **arithmetic mean test** — an action's observed selection frequency
//!   against the mean of its logged propensities;
//! - the **harmonic mean test** — the per-record quantity
//!   `1[a=a*]/p + 1[a!=a*]/(1-p)` has expectation exactly 2 under correct
//!   logging, whatever the propensities are;
//! - **seed replay** — re-run the seeded sampler per record and demand the
//!   logged action back.
//!
//! The mean tests use two-sided Hoeffding bounds at the requested alpha; they
//! catch some but not all logging bugs. Replay, when seeds and full vectors
//! are present, is the complete check.

use serde::{Deserialize, Serialize};

use crate::collector::{sample_action, ExplorationRecord};
use crate::error::{Error, Result};
use crate::types::Action;

/// Which verification ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestName {
    Arithmetic,
    Harmonic,
    Replay,
}

/// Outcome of one verification test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub test_name: TestName,
    pub target_action: Option<Action>,
    pub statistic: f64,
    pub expected: f64,
    pub deviation_bound: f64,
    pub alpha: f64,
    pub passed: bool,
    pub n: usize,
}

/// Two-sided Hoeffding deviation bound for n mean-zero summands of range 1:
/// `sqrt(ln(2/alpha) / (2n))`.
pub fn hoeffding_bound(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && 0.0 < alpha && alpha < 1.0) {
        return Err(Error::Input(format!("alpha {alpha} outside (0,1)")));
    }
    Ok(())
}

fn target_propensity(record: &ExplorationRecord, target: &Action) -> Result<f64> {
    let vec = record
        .propensity_vector
        .as_ref()
        .ok_or_else(|| Error::InsufficientData("record carries no propensity vector".into()))?;
    vec.prob_of(target).map_err(|_| {
        Error::InsufficientData(format!("propensity vector does not cover action {target}"))
    })
}

/// Compare how often `target` was actually chosen with how often the logged
/// propensities say it should have been.
pub fn arithmetic_mean_test(
    log: &[ExplorationRecord],
    target: &Action,
    alpha: f64,
) -> Result<DiagnosticReport> {
    check_alpha(alpha)?;
    if log.is_empty() {
        return Err(Error::Input("empty log".into()));
    }
    let n = log.len();
    let mut chosen = 0usize;
    let mut propensity_sum = 0.0;
    for record in log {
        propensity_sum += target_propensity(record, target)?;
        if record.action == *target {
            chosen += 1;
        }
    }
    let statistic = chosen as f64 / n as f64;
    let expected = propensity_sum / n as f64;
    let deviation_bound = hoeffding_bound(n, alpha);
    Ok(DiagnosticReport {
        test_name: TestName::Arithmetic,
        target_action: Some(*target),
        statistic,
        expected,
        deviation_bound,
        alpha,
        passed: (statistic - expected).abs() <= deviation_bound,
        n,
    })
}

/// Check the identity `E[1[a=a*]/p_{a*} + 1[a!=a*]/(1-p_{a*})] = 2`, which
/// holds for any correctly logged propensities.
///
/// The Hoeffding bound is scaled by the data-dependent range
/// `M = max_i max(1/p_i, 1/(1-p_i))`.
pub fn harmonic_mean_test(
    log: &[ExplorationRecord],
    target: &Action,
    alpha: f64,
) -> Result<DiagnosticReport> {
    check_alpha(alpha)?;
    if log.is_empty() {
        return Err(Error::Input("empty log".into()));
    }
    let n = log.len();
    let mut sum = 0.0;
    let mut range = 0.0f64;
    for record in log {
        let p = target_propensity(record, target)?;
        if p <= 0.0 || p >= 1.0 {
            return Err(Error::Range(format!(
                "harmonic test undefined at p_target = {p}"
            )));
        }
        sum += if record.action == *target {
            1.0 / p
        } else {
            1.0 / (1.0 - p)
        };
        range = range.max((1.0 / p).max(1.0 / (1.0 - p)));
    }
    let statistic = sum / n as f64;
    let deviation_bound = range * hoeffding_bound(n, alpha);
    Ok(DiagnosticReport {
        test_name: TestName::Harmonic,
        target_action: Some(*target),
        statistic,
        expected: 2.0,
        deviation_bound,
        alpha,
        passed: (statistic - 2.0).abs() <= deviation_bound,
        n,
    })
}

/// Re-run the seeded sampler for every record and count disagreements with
/// the logged action. Passing means zero mismatches.
pub fn replay_verify(log: &[ExplorationRecord]) -> Result<DiagnosticReport> {
    if log.is_empty() {
        return Err(Error::Input("empty log".into()));
    }
    let mut mismatches = 0usize;
    for record in log {
        let seed = record
            .seed
            .ok_or_else(|| Error::InsufficientData("record carries no seed".into()))?;
        let vec = record
            .propensity_vector
            .as_ref()
            .ok_or_else(|| Error::InsufficientData("record carries no propensity vector".into()))?;
        if sample_action(vec, seed) != record.action {
            mismatches += 1;
        }
    }
    Ok(DiagnosticReport {
        test_name: TestName::Replay,
        target_action: None,
        statistic: mismatches as f64,
        expected: 0.0,
        deviation_bound: 0.0,
        alpha: 0.0,
        passed: mismatches == 0,
        n: log.len(),
    })
}

/// Run both mean tests against every enumerable action, Bonferroni-corrected
/// to `alpha / K` so the sweep keeps the family-wise error rate.
pub fn sweep_mean_tests(log: &[ExplorationRecord], alpha: f64) -> Result<Vec<DiagnosticReport>> {
    check_alpha(alpha)?;
    let first = log
        .first()
        .ok_or_else(|| Error::Input("empty log".into()))?;
    let vec = first
        .propensity_vector
        .as_ref()
        .ok_or_else(|| Error::InsufficientData("record carries no propensity vector".into()))?;
    let mode = vec.mode();
    for record in log {
        match &record.propensity_vector {
            Some(v) if v.mode() == mode => {}
            Some(_) => {
                return Err(Error::DataIntegrity(
                    "records disagree on the action space".into(),
                ))
            }
            None => {
                return Err(Error::InsufficientData(
                    "record carries no propensity vector".into(),
                ))
            }
        }
    }
    let k = mode.action_count();
    let adjusted = alpha / k as f64;
    let mut reports = Vec::with_capacity(2 * k);
    for index in 0..k {
        let action = Action::from_index(index, mode)?;
        reports.push(arithmetic_mean_test(log, &action, adjusted)?);
        reports.push(harmonic_mean_test(log, &action, adjusted)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collector::{
        collect, corrupt_propensities, PropensityCorruption, PropensityVector, RandomizationScheme,
    };
    use crate::types::{ActionMode, Context, EnvironmentSpec, RewardNoise};

    fn uniform_env(k: usize) -> EnvironmentSpec {
        EnvironmentSpec::new(
            vec![Context::new("x0", vec![0.5; k]).unwrap()],
            vec![1.0],
            vec![vec![0.5; k]],
            ActionMode::Atomic { k },
            RewardNoise::Bernoulli,
        )
        .unwrap()
    }

    #[test]
    fn arithmetic_with_certain_action() {
        // p_target = 1 for every record: statistic and expectation are both 1.
        let mode = ActionMode::Subset { l: 1 };
        let vec = PropensityVector::new(mode, vec![1.0]).unwrap();
        let target = Action::subset([1]).unwrap();
        let log: Vec<ExplorationRecord> = (0..10)
            .map(|i| {
                ExplorationRecord::new(
                    Context::new(format!("q{i}"), vec![0.5]).unwrap(),
                    Some(i),
                    target,
                    1.0,
                    Some(vec.clone()),
                    0.5,
                )
                .unwrap()
            })
            .collect();
        let report = arithmetic_mean_test(&log, &target, 0.05).unwrap();
        assert_eq!(report.statistic, 1.0);
        assert_eq!(report.expected, 1.0);
        assert!(report.passed);
    }

    #[test]
    fn arithmetic_passes_on_clean_log() {
        let env = uniform_env(4);
        let log = collect(&env, &RandomizationScheme::Uniform, 100_000, 17).unwrap();
        let report = arithmetic_mean_test(&log, &Action::Atomic(2), 0.05).unwrap();
        assert!(report.passed, "{report:?}");
        assert!((report.expected - 0.25).abs() < 1e-12);
    }

    #[test]
    fn arithmetic_detects_factor_corruption() {
        let env = uniform_env(4);
        let log = collect(&env, &RandomizationScheme::Uniform, 100_000, 17).unwrap();
        let map = [(2usize, 1.2f64)].into_iter().collect();
        let out = corrupt_propensities(&log, &PropensityCorruption::PerAction(map)).unwrap();
        let report = arithmetic_mean_test(&out.records, &Action::Atomic(2), 0.05).unwrap();
        assert!(!report.passed, "{report:?}");
        // Sanity on the bound scale quoted for n = 1e5.
        assert!((report.deviation_bound - 0.0043).abs() < 0.0005);
    }

    #[test]
    fn harmonic_single_record_is_exactly_two() {
        let mode = ActionMode::Atomic { k: 2 };
        let vec = PropensityVector::new(mode, vec![0.5, 0.5]).unwrap();
        for chosen in 0..2usize {
            let log = vec![ExplorationRecord::new(
                Context::new("x", vec![0.0, 0.0]).unwrap(),
                Some(0),
                Action::Atomic(chosen),
                0.5,
                Some(vec.clone()),
                1.0,
            )
            .unwrap()];
            let report = harmonic_mean_test(&log, &Action::Atomic(0), 0.05).unwrap();
            assert_eq!(report.statistic, 2.0);
        }
    }

    #[test]
    fn harmonic_identity_holds_for_any_propensity() {
        // Exhaustively: p * (1/p) + (1-p) * (1/(1-p)) = 2.
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let weighted = p * (1.0 / p) + (1.0 - p) * (1.0 / (1.0 - p));
            assert!((weighted - 2.0).abs() < 1e-12, "p = {p}");
        }
    }

    #[test]
    fn harmonic_rejects_degenerate_propensity() {
        let mode = ActionMode::Subset { l: 1 };
        let vec = PropensityVector::new(mode, vec![1.0]).unwrap();
        let target = Action::subset([1]).unwrap();
        let log = vec![ExplorationRecord::new(
            Context::new("q", vec![0.5]).unwrap(),
            Some(0),
            target,
            1.0,
            Some(vec),
            0.5,
        )
        .unwrap()];
        assert!(matches!(
            harmonic_mean_test(&log, &target, 0.05),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn harmonic_detects_factor_corruption() {
        let env = uniform_env(4);
        let log = collect(&env, &RandomizationScheme::Uniform, 100_000, 17).unwrap();
        let map = [(2usize, 1.2f64)].into_iter().collect();
        let out = corrupt_propensities(&log, &PropensityCorruption::PerAction(map)).unwrap();
        let report = harmonic_mean_test(&out.records, &Action::Atomic(2), 0.05).unwrap();
        assert!(!report.passed, "{report:?}");
    }

    #[test]
    fn replay_accepts_own_collection() {
        let env = uniform_env(3);
        let log = collect(&env, &RandomizationScheme::Uniform, 5_000, 31).unwrap();
        let report = replay_verify(&log).unwrap();
        assert!(report.passed);
        assert_eq!(report.statistic, 0.0);
    }

    #[test]
    fn replay_counts_a_flipped_action() {
        let env = uniform_env(3);
        let mut log = collect(&env, &RandomizationScheme::Uniform, 100, 31).unwrap();
        let vec = log[42].propensity_vector.clone().unwrap();
        let flipped = match log[42].action {
            Action::Atomic(i) => Action::Atomic((i + 1) % 3),
            _ => unreachable!(),
        };
        log[42].propensity = vec.prob_of(&flipped).unwrap();
        log[42].action = flipped;
        let report = replay_verify(&log).unwrap();
        assert!(!report.passed);
        assert_eq!(report.statistic, 1.0);
    }

    #[test]
    fn replay_flags_corrupted_vectors() {
        // Push nearly all mass onto one action: replay then disagrees for
        // every record the sampler now routes elsewhere.
        let env = uniform_env(4);
        let log = collect(&env, &RandomizationScheme::Uniform, 500, 31).unwrap();
        let map = [
            (0usize, 3.5f64),
            (1usize, 0.05),
            (2usize, 0.05),
            (3usize, 0.05),
        ]
        .into_iter()
        .collect();
        let out = corrupt_propensities(&log, &PropensityCorruption::PerAction(map)).unwrap();
        let report = replay_verify(&out.records).unwrap();
        assert!(!report.passed);
        assert!(report.statistic > 0.0);
    }

    #[test]
    fn replay_requires_seeds() {
        let env = uniform_env(3);
        let mut log = collect(&env, &RandomizationScheme::Uniform, 10, 31).unwrap();
        log[3].seed = None;
        assert!(matches!(
            replay_verify(&log),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn mean_tests_require_vectors() {
        let env = uniform_env(3);
        let mut log = collect(&env, &RandomizationScheme::Uniform, 10, 31).unwrap();
        log[3].propensity_vector = None;
        assert!(matches!(
            arithmetic_mean_test(&log, &Action::Atomic(0), 0.05),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn tests_are_order_invariant() {
        let env = uniform_env(4);
        let mut log = collect(&env, &RandomizationScheme::Uniform, 2_000, 5).unwrap();
        let target = Action::Atomic(1);
        let a1 = arithmetic_mean_test(&log, &target, 0.05).unwrap();
        let h1 = harmonic_mean_test(&log, &target, 0.05).unwrap();
        log.reverse();
        let a2 = arithmetic_mean_test(&log, &target, 0.05).unwrap();
        let h2 = harmonic_mean_test(&log, &target, 0.05).unwrap();
        assert_eq!(a1.statistic, a2.statistic);
        assert_eq!(a1.passed, a2.passed);
        assert!((h1.statistic - h2.statistic).abs() < 1e-12);
    }

    #[test]
    fn sweep_covers_every_action_with_bonferroni() {
        let env = uniform_env(4);
        let log = collect(&env, &RandomizationScheme::Uniform, 5_000, 13).unwrap();
        let reports = sweep_mean_tests(&log, 0.05).unwrap();
        assert_eq!(reports.len(), 8);
        for r in &reports {
            assert!((r.alpha - 0.0125).abs() < 1e-12);
        }
    }

    #[test]
    fn report_serializes_to_json() {
        let report = DiagnosticReport {
            test_name: TestName::Harmonic,
            target_action: Some(Action::Atomic(1)),
            statistic: 2.01,
            expected: 2.0,
            deviation_bound: 0.05,
            alpha: 0.05,
            passed: true,
            n: 100,
        };
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"harmonic\""));
        let back: DiagnosticReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
