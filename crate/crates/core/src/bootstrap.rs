//! Online bootstrap of the IPS estimator's sampling distribution.
//!
//! Each replicate weights every record by an independent Poisson(1) draw and
//! recomputes the weighted IPS estimate, normalized by the raw record count
//! so replicates stay comparable to the point estimate. For large logs this
//! is essentially the classical bootstrap without materializing resampled
//! data sets. The replicate histogram is the visual normality check backing
//! the normal-approximation confidence intervals, and the replicate standard
//! deviation should agree with the analytic standard error.

use serde::{Deserialize, Serialize};

use crate::collector::ExplorationRecord;
use crate::error::{Error, Result};
use crate::estimator::{per_record_term, PolicyValueEstimate};
use crate::rng::{derive_seed, poisson_one, seeded_rng, STREAM_BOOTSTRAP};
use crate::types::Policy;

/// Default replicate count.
pub const DEFAULT_REPLICATES: usize = 1000;

/// Default bin count for histogram exports.
pub const DEFAULT_BINS: usize = 30;

/// One histogram bin: right-open `[low, high)` except the last, which is
/// closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Replicates plus their summary moments and histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub replicates: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation of the replicates (B-1 denominator).
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Summary without the raw replicates, for JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub b: usize,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl BootstrapResult {
    pub fn summary(&self) -> BootstrapSummary {
        BootstrapSummary {
            b: self.replicates.len(),
            mean: self.mean,
            std: self.std,
            skewness: self.skewness,
            excess_kurtosis: self.excess_kurtosis,
        }
    }
}

/// Poisson(1)-weighted bootstrap of the IPS estimate.
///
/// Deterministic given `(log, policy, b, seed)`: replicate `i` draws its
/// weights from a generator seeded by `(seed, i)`, so replicates are
/// independent and could be computed in any order or in parallel without
/// changing the result.
pub fn online_bootstrap(
    log: &[ExplorationRecord],
    policy: &Policy,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if log.is_empty() {
        return Err(Error::Input("cannot bootstrap an empty log".into()));
    }
    if b < 2 {
        return Err(Error::Input(format!("need at least 2 replicates, got {b}")));
    }
    let terms: Vec<f64> = log
        .iter()
        .map(|r| per_record_term(r, policy, None).map(|(t, _)| t))
        .collect::<Result<_>>()?;
    let n = terms.len() as f64;
    let mut replicates = Vec::with_capacity(b);
    for i in 0..b {
        let mut rng = seeded_rng(derive_seed(seed, STREAM_BOOTSTRAP, i as u64));
        let weighted: f64 = terms.iter().map(|t| poisson_one(&mut rng) as f64 * t).sum();
        replicates.push(weighted / n);
    }
    let (mean, std, skewness, excess_kurtosis) = moments(&replicates);
    let histogram = histogram(&replicates, DEFAULT_BINS)?;
    Ok(BootstrapResult {
        replicates,
        mean,
        std,
        skewness,
        excess_kurtosis,
        histogram,
    })
}

/// Mean, sample std, and standardized third/fourth central moments.
fn moments(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let std = if values.len() > 1 {
        (m2 * n / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    if m2 <= 0.0 {
        return (mean, std, 0.0, 0.0);
    }
    let skewness = m3 / m2.powf(1.5);
    let excess_kurtosis = m4 / (m2 * m2) - 3.0;
    (mean, std, skewness, excess_kurtosis)
}

/// Equal-width histogram spanning `[min, max]` of the data.
///
/// Bins are right-open except the last. If every value is identical the
/// result is a single degenerate bin of width zero.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if values.is_empty() {
        return Err(Error::Input("cannot bin an empty sample".into()));
    }
    if bins == 0 {
        return Err(Error::Input("need at least one bin".into()));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(vec![HistogramBin {
            low: min,
            high: max,
            count: values.len(),
        }]);
    }
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let idx = (((v - min) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            low: min + i as f64 * width,
            high: if i + 1 == bins {
                max
            } else {
                min + (i + 1) as f64 * width
            },
            count,
        })
        .collect())
}

/// Agreement between the bootstrap spread and the analytic standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub bootstrap_std: f64,
    pub analytic_stderr: f64,
    pub ratio: f64,
    /// Set when the two estimates disagree by more than 15% (or one of them
    /// is zero while the other is not). Small logs may flag spuriously.
    pub flagged: bool,
}

/// Compare the bootstrap replicate spread against the analytic standard
/// error of the same estimate. Both inputs must come from the same log and
/// policy.
pub fn bootstrap_vs_analytic(
    result: &BootstrapResult,
    estimate: &PolicyValueEstimate,
) -> ConsistencyRow {
    let b = result.std;
    let a = estimate.stderr;
    let eps = 1e-12;
    let (ratio, flagged) = if b.abs() <= eps && a.abs() <= eps {
        (1.0, false)
    } else if a.abs() <= eps {
        (f64::INFINITY, true)
    } else {
        let r = b / a;
        (r, !(0.85..=1.15).contains(&r))
    };
    ConsistencyRow {
        bootstrap_std: b,
        analytic_stderr: a,
        ratio,
        flagged,
    }
}

/// Fixed header for histogram exports.
pub const HISTOGRAM_CSV_HEADER: &str = "bin_low,bin_high,count";

pub fn histogram_csv_row(bin: &HistogramBin) -> String {
    format!("{},{},{}", bin.low, bin.high, bin.count)
}
