//! Offline policy optimization.
//!
//! The selection loop mirrors how a model would be tuned against a live
//! metric, but entirely from logged data: split the log, evaluate every
//! candidate's IPS estimate on the train side, pick the feasible maximizer,
//! then confirm the pick on the held-out side (and, in simulation, against
//! the exact oracle). Candidates come from transparent parametric families
//! so the gap to the family optimum is computable.

use serde::{Deserialize, Serialize};

use crate::collector::ExplorationRecord;
use crate::error::{Error, Result};
use crate::estimator::{ips_estimate, ClipConfig, PolicyValueEstimate};
use crate::rng::{derive_seed, seeded_rng, STREAM_SPLIT};
use crate::types::{Action, EnvironmentSpec, Policy};

/// One grid point: the raw parameter vector and the policy it instantiates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCandidate {
    pub params: Vec<f64>,
    pub policy: Policy,
}

/// A finite family of candidate policies, optionally capacity-constrained.
///
/// Capacity is the expected number of selected candidates per impression;
/// the bound models a serving budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFamily {
    pub id: String,
    pub candidates: Vec<PolicyCandidate>,
    pub capacity_bound: Option<f64>,
}

impl PolicyFamily {
    pub fn new(
        id: impl Into<String>,
        candidates: Vec<PolicyCandidate>,
        capacity_bound: Option<f64>,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Input("policy family needs a non-empty grid".into()));
        }
        Ok(PolicyFamily {
            id: id.into(),
            candidates,
            capacity_bound,
        })
    }

    /// Threshold family over the given tau grid.
    pub fn threshold_grid(taus: &[f64], capacity_bound: Option<f64>) -> Result<Self> {
        let candidates = taus
            .iter()
            .map(|&tau| PolicyCandidate {
                params: vec![tau],
                policy: Policy::ScoreThreshold { tau },
            })
            .collect();
        PolicyFamily::new("threshold", candidates, capacity_bound)
    }

    /// Linear-argmax family over explicit weight vectors.
    pub fn linear_argmax_grid(
        weight_sets: Vec<Vec<f64>>,
        capacity_bound: Option<f64>,
    ) -> Result<Self> {
        let candidates = weight_sets
            .into_iter()
            .map(|weights| PolicyCandidate {
                params: weights.clone(),
                policy: Policy::LinearArgmax { weights },
            })
            .collect();
        PolicyFamily::new("linear-argmax", candidates, capacity_bound)
    }
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Randomly partition a log into train and eval sides, deterministic given
/// the seed. Original record order is preserved within each side.
pub fn split(
    log: &[ExplorationRecord],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<ExplorationRecord>, Vec<ExplorationRecord>)> {
    if !(train_fraction.is_finite() && 0.0 < train_fraction && train_fraction < 1.0) {
        return Err(Error::Input(format!(
            "train fraction {train_fraction} outside (0,1)"
        )));
    }
    let n = log.len();
    let train_n = (n as f64 * train_fraction).round() as usize;
    if train_n == 0 || train_n == n {
        return Err(Error::Input(format!(
            "fraction {train_fraction} leaves one side of a {n}-record log empty"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = seeded_rng(derive_seed(seed, STREAM_SPLIT, 0));
        indices.shuffle(&mut rng);
    }
    let mut in_train = vec![false; n];
    for &i in indices.iter().take(train_n) {
        in_train[i] = true;
    }
    let mut train = Vec::with_capacity(train_n);
    let mut eval = Vec::with_capacity(n - train_n);
    for (i, record) in log.iter().enumerate() {
        if in_train[i] {
            train.push(record.clone());
        } else {
            eval.push(record.clone());
        }
    }
    Ok((train, eval))
}

// ---------------------------------------------------------------------------
// Grid selection
// ---------------------------------------------------------------------------

/// Per-candidate evaluation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub params: Vec<f64>,
    pub policy: Policy,
    pub train_estimate: PolicyValueEstimate,
    pub eval_estimate: Option<PolicyValueEstimate>,
    /// Expected selected-candidate count per impression, estimated on train.
    pub capacity: f64,
    pub feasible: bool,
}

/// The full grid evaluation: one row per grid point, no silent skips, plus
/// the selected index when any candidate is feasible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub family_id: String,
    pub rows: Vec<CandidateRow>,
    /// Index into `rows`; `None` is the explicit no-selection outcome when
    /// nothing is feasible.
    pub selected: Option<usize>,
    pub selection_rule: String,
    /// Clip configuration the train estimates were computed under.
    pub clip: Option<ClipConfig>,
}

impl OptimizationReport {
    pub fn selected_row(&self) -> Option<&CandidateRow> {
        self.selected.map(|i| &self.rows[i])
    }
}

/// Average number of candidates the policy would send per train impression.
fn capacity_on(policy: &Policy, records: &[ExplorationRecord]) -> Result<f64> {
    let mut total = 0.0;
    for record in records {
        total += match policy.apply(&record.context)? {
            Action::Atomic(_) => 1.0,
            Action::Subset(s) => s.len() as f64,
        };
    }
    Ok(total / records.len() as f64)
}

/// Evaluate every grid point on the train split and select the feasible
/// maximizer of the IPS point estimate. Ties break toward lower capacity,
/// then lexicographically earlier parameters.
pub fn grid_select(
    family: &PolicyFamily,
    train: &[ExplorationRecord],
    clip: Option<ClipConfig>,
) -> Result<OptimizationReport> {
    if train.is_empty() {
        return Err(Error::Input("empty train split".into()));
    }
    let mut rows = Vec::with_capacity(family.candidates.len());
    for candidate in &family.candidates {
        let train_estimate = ips_estimate(train, &candidate.policy, clip, 0.95)?;
        let capacity = capacity_on(&candidate.policy, train)?;
        let feasible = family
            .capacity_bound
            .is_none_or(|bound| capacity <= bound + 1e-12);
        rows.push(CandidateRow {
            params: candidate.params.clone(),
            policy: candidate.policy.clone(),
            train_estimate,
            eval_estimate: None,
            capacity,
            feasible,
        });
    }
    let selected = rows
        .iter()
        .enumerate()
        .filter(|(_, row)| row.feasible)
        .max_by(|(_, a), (_, b)| {
            a.train_estimate
                .point
                .partial_cmp(&b.train_estimate.point)
                .unwrap_or(std::cmp::Ordering::Equal)
                // Reversed: prefer lower capacity, then lexicographically
                // earlier params, when points tie.
                .then_with(|| {
                    b.capacity
                        .partial_cmp(&a.capacity)
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .then_with(|| params_cmp(&b.params, &a.params))
        })
        .map(|(i, _)| i);
    Ok(OptimizationReport {
        family_id: family.id.clone(),
        rows,
        selected,
        selection_rule: "max train IPS among feasible; ties: lower capacity, then lexicographic \
                         parameter order"
            .to_string(),
        clip,
    })
}

fn params_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(other) => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Fill in eval-split estimates for every row, using the report's clip.
pub fn fill_eval_estimates(
    report: &mut OptimizationReport,
    eval: &[ExplorationRecord],
) -> Result<()> {
    for row in &mut report.rows {
        row.eval_estimate = Some(ips_estimate(eval, &row.policy, report.clip, 0.95)?);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// The confirmation step for a selection: held-out estimate, exact oracle
/// value, and whether the eval interval covers the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub params: Vec<f64>,
    pub eval_estimate: PolicyValueEstimate,
    pub true_value: f64,
    pub covered: bool,
}

/// Recompute the selected policy's IPS estimate on the eval split and its
/// exact value on the environment.
pub fn validate_selection(
    report: &OptimizationReport,
    eval: &[ExplorationRecord],
    env: &EnvironmentSpec,
) -> Result<ValidationRow> {
    let row = report
        .selected_row()
        .ok_or_else(|| Error::Input("report carries no selection to validate".into()))?;
    if eval.is_empty() {
        return Err(Error::Input("empty eval split".into()));
    }
    let eval_estimate = ips_estimate(eval, &row.policy, report.clip, 0.95)?;
    let true_value = env.true_value(&row.policy)?;
    let covered = eval_estimate.ci_low <= true_value && true_value <= eval_estimate.ci_high;
    Ok(ValidationRow {
        params: row.params.clone(),
        eval_estimate,
        true_value,
        covered,
    })
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

/// Fixed header for optimization-report exports. Parameter vectors join
/// with ';' so rows stay one CSV field wide.
pub const REPORT_CSV_HEADER: &str =
    "family,params,train_point,train_stderr,eval_point,eval_stderr,capacity,feasible,selected";

pub fn report_csv_rows(report: &OptimizationReport) -> Vec<String> {
    report
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let params = row
                .params
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(";");
            let (eval_point, eval_stderr) = match &row.eval_estimate {
                Some(e) => (e.point.to_string(), e.stderr.to_string()),
                None => ("NA".to_string(), "NA".to_string()),
            };
            format!(
                "{},{},{},{},{},{},{},{},{}",
                report.family_id,
                params,
                row.train_estimate.point,
                row.train_estimate.stderr,
                eval_point,
                eval_stderr,
                row.capacity,
                row.feasible,
                report.selected == Some(i)
            )
        })
        .collect()
}
