//! `ope` — counterfactual policy evaluation from randomized exploration logs.
//!
//! Pipeline subcommands: generate a synthetic environment, collect a
//! propensity-logged exploration log from it, verify the log, then estimate,
//! bootstrap, compare against online rollouts, or optimize policy parameters
//! offline. Every run writes a manifest next to its outputs (config echo,
//! seeds, format versions) so artifacts are reproducible byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ope_core::bootstrap::{
    bootstrap_vs_analytic, histogram_csv_row, online_bootstrap, HISTOGRAM_CSV_HEADER,
};
use ope_core::collector::{collect, RandomizationScheme};
use ope_core::diagnostics::{replay_verify, sweep_mean_tests, DiagnosticReport};
use ope_core::estimator::{
    biased_csv_row, biased_estimate, compare, comparison_csv_row, estimate_csv_row, ips_estimate,
    online_rollout, ClipConfig, OfflinePeriodEstimates, COMPARISON_CSV_HEADER, ESTIMATE_CSV_HEADER,
};
use ope_core::logio;
use ope_core::optimizer::{
    fill_eval_estimates, grid_select, report_csv_rows, split, validate_selection, PolicyFamily,
    REPORT_CSV_HEADER,
};
use ope_core::rng::{derive_seed, STREAM_ONLINE, STREAM_PERIOD};
use ope_core::speller::{
    generate_scenario_with, scenario_document, ScenarioConfig, ScenarioMetadata,
};
use ope_core::types::{EnvironmentSpec, Policy};

#[derive(Parser)]
#[command(
    name = "ope",
    version,
    about = "Counterfactual evaluation and optimization of decision policies from exploration logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic query-rewrite environment (subset actions).
    GenScenario(GenScenarioArgs),
    /// Collect a randomized exploration log from an environment.
    Collect(CollectArgs),
    /// Verify a log's propensity scores; nonzero exit on any failure.
    Verify(VerifyArgs),
    /// Estimate a policy's value from a log (IPS and matched-average).
    Evaluate(EvaluateArgs),
    /// Bootstrap the estimator's sampling distribution.
    Bootstrap(BootstrapArgs),
    /// Compare offline estimates against online rollouts over simulated periods.
    Compare(CompareArgs),
    /// Select policy parameters by maximizing the IPS estimate on a train split.
    Optimize(OptimizeArgs),
}

#[derive(Args, Serialize)]
struct GenScenarioArgs {
    /// Number of distinct queries in the pool.
    #[arg(long, default_value_t = 20)]
    num_queries: usize,
    /// Rewrite candidates per query (1..=8).
    #[arg(long, default_value_t = 4)]
    l: usize,
    /// Fraction of candidate gains flipped negative (monotonicity violations).
    #[arg(long, default_value_t = 0.0)]
    violation_rate: f64,
    #[arg(long)]
    seed: u64,
    /// Output environment JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct SchemeArgs {
    /// Randomization scheme: uniform | sigmoid.
    #[arg(long, default_value = "uniform")]
    scheme: String,
    #[arg(long, default_value_t = 1.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
    #[arg(long, default_value_t = 0.1)]
    clip_low: f64,
    #[arg(long, default_value_t = 0.9)]
    clip_high: f64,
}

impl SchemeArgs {
    fn build(&self) -> Result<RandomizationScheme> {
        let scheme = match self.scheme.as_str() {
            "uniform" => RandomizationScheme::Uniform,
            "sigmoid" => RandomizationScheme::SigmoidSubset {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                clip_low: self.clip_low,
                clip_high: self.clip_high,
            },
            other => bail!("unknown scheme {other:?} (expected uniform or sigmoid)"),
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

#[derive(Args, Serialize)]
struct CollectArgs {
    /// Environment JSON produced by gen-scenario (or written by hand).
    #[arg(long)]
    env: PathBuf,
    #[command(flatten)]
    scheme: SchemeArgs,
    /// Number of rounds to log.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Output log path (JSON Lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    #[arg(long)]
    log: PathBuf,
    /// Family-wise significance level for the mean-test sweep.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    log: PathBuf,
    /// Policy spec: threshold:<tau> | linear:<w,...> | lookup:<path.json>.
    #[arg(long)]
    policy: String,
    /// Propensity clipping floor; omitted = unclipped.
    #[arg(long)]
    p_min: Option<f64>,
    /// Confidence level (0.90, 0.95, 0.99).
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Optional CSV output path (rows also print to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BootstrapArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    policy: String,
    /// Number of bootstrap replicates.
    #[arg(long = "B", default_value_t = 1000)]
    b: usize,
    /// Histogram bin count.
    #[arg(long, default_value_t = 30)]
    bins: usize,
    #[arg(long)]
    seed: u64,
    /// Output prefix: writes <out>.csv (histogram) and <out>.json (summary).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[arg(long)]
    env: PathBuf,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long)]
    policy: String,
    /// Number of simulated collection periods ("days").
    #[arg(long, default_value_t = 7)]
    days: u32,
    /// Rounds per period, for both the exploration log and the online arm.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Output CSV path for the scatter rows.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct OptimizeArgs {
    #[arg(long)]
    log: PathBuf,
    /// Environment JSON for oracle validation of the selected policy.
    #[arg(long)]
    env: PathBuf,
    /// Grid spec: threshold:<tau,...> | linear:<w,..>|<w,..>|...
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    train_fraction: f64,
    #[arg(long)]
    p_min: Option<f64>,
    /// Capacity bound: maximum expected selected candidates per impression.
    #[arg(long)]
    capacity: Option<f64>,
    #[arg(long)]
    seed: u64,
    /// Output prefix: writes <out>.csv and <out>.json.
    #[arg(long)]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    format_versions: BTreeMap<&'static str, u32>,
    outputs: Vec<String>,
}

fn write_manifest<C: Serialize>(command: &str, config: &C, outputs: &[&Path]) -> Result<()> {
    let primary = outputs
        .first()
        .expect("every subcommand writes at least one output");
    let manifest_path = primary.with_extension(match primary.extension() {
        Some(ext) => format!("{}.manifest.json", ext.to_string_lossy()),
        None => "manifest.json".to_string(),
    });
    let manifest = Manifest {
        command,
        config,
        format_versions: [("log", logio::LOG_SCHEMA_VERSION)].into_iter().collect(),
        outputs: outputs
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect(),
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing manifest {}", manifest_path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared parsing
// ---------------------------------------------------------------------------

fn load_env(path: &Path) -> Result<EnvironmentSpec> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading environment {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing environment {}", path.display()))
}

fn load_log(path: &Path) -> Result<Vec<ope_core::collector::ExplorationRecord>> {
    logio::load_log(path).with_context(|| format!("reading log {}", path.display()))
}

fn parse_policy(spec: &str) -> Result<Policy> {
    let (family, rest) = spec
        .split_once(':')
        .with_context(|| format!("policy spec {spec:?} needs the form family:params"))?;
    match family {
        "threshold" => {
            let tau: f64 = rest.parse().context("threshold tau")?;
            Ok(Policy::ScoreThreshold { tau })
        }
        "linear" => {
            let weights = parse_weights(rest)?;
            Ok(Policy::LinearArgmax { weights })
        }
        "lookup" => {
            let text = fs::read_to_string(rest)
                .with_context(|| format!("reading lookup policy {rest}"))?;
            let policy: Policy = serde_json::from_str(&text).context("parsing lookup policy")?;
            Ok(policy)
        }
        other => bail!("unknown policy family {other:?} (threshold, linear, lookup)"),
    }
}

fn parse_weights(csv: &str) -> Result<Vec<f64>> {
    csv.split(',')
        .map(|w| {
            w.trim()
                .parse::<f64>()
                .with_context(|| format!("weight {w:?}"))
        })
        .collect()
}

fn parse_grid(spec: &str, capacity: Option<f64>) -> Result<PolicyFamily> {
    let (family, rest) = spec
        .split_once(':')
        .with_context(|| format!("grid spec {spec:?} needs the form family:params"))?;
    match family {
        "threshold" => {
            let taus = parse_weights(rest)?;
            Ok(PolicyFamily::threshold_grid(&taus, capacity)?)
        }
        "linear" => {
            let sets = rest
                .split('|')
                .map(parse_weights)
                .collect::<Result<Vec<_>>>()?;
            Ok(PolicyFamily::linear_argmax_grid(sets, capacity)?)
        }
        other => bail!("unknown grid family {other:?} (threshold, linear)"),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn run_gen_scenario(args: &GenScenarioArgs) -> Result<()> {
    let mut config = ScenarioConfig::new(args.num_queries, args.l);
    config.violation_rate = args.violation_rate;
    let scenario = generate_scenario_with(&config, args.seed)?;
    let metadata = ScenarioMetadata {
        num_queries: args.num_queries,
        l: args.l,
        seed: args.seed,
        violation_rate: args.violation_rate,
    };
    let doc = scenario_document(&scenario, &metadata)?;
    write_text(&args.out, &serde_json::to_string_pretty(&doc)?)?;
    write_manifest("gen-scenario", args, &[&args.out])?;
    println!(
        "wrote environment with {} queries, L={} ({} subset actions) to {}",
        args.num_queries,
        args.l,
        1usize << (args.l - 1),
        args.out.display()
    );
    Ok(())
}

fn run_collect(args: &CollectArgs) -> Result<()> {
    let env = load_env(&args.env)?;
    let scheme = args.scheme.build()?;
    let log = collect(&env, &scheme, args.n, args.seed)?;
    logio::save_log(&args.out, &log)?;
    write_manifest("collect", args, &[&args.out])?;
    println!("collected {} records to {}", log.len(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport {
    mean_tests: Vec<DiagnosticReport>,
    replay: Option<DiagnosticReport>,
    passed: bool,
}

fn run_verify(args: &VerifyArgs) -> Result<bool> {
    let log = load_log(&args.log)?;
    let mean_tests = sweep_mean_tests(&log, args.alpha)?;
    let replayable = log
        .iter()
        .all(|r| r.seed.is_some() && r.propensity_vector.is_some());
    let replay = if replayable {
        Some(replay_verify(&log)?)
    } else {
        None
    };
    let passed = mean_tests.iter().all(|r| r.passed) && replay.as_ref().is_none_or(|r| r.passed);
    for report in &mean_tests {
        println!(
            "{:?} test on {}: statistic {:.6} vs expected {:.6} (bound {:.6}) -> {}",
            report.test_name,
            report
                .target_action
                .map(|a| a.to_string())
                .unwrap_or_default(),
            report.statistic,
            report.expected,
            report.deviation_bound,
            if report.passed { "ok" } else { "FAILED" }
        );
    }
    match &replay {
        Some(report) => println!(
            "replay: {} mismatches over {} records -> {}",
            report.statistic,
            report.n,
            if report.passed { "ok" } else { "FAILED" }
        ),
        None => println!("replay: skipped (log lacks seeds or propensity vectors)"),
    }
    let report = VerifyReport {
        mean_tests,
        replay,
        passed,
    };
    if let Some(out) = &args.out {
        write_text(out, &serde_json::to_string_pretty(&report)?)?;
        write_manifest("verify", args, &[out])?;
    }
    println!("verification {}", if passed { "passed" } else { "FAILED" });
    Ok(passed)
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let log = load_log(&args.log)?;
    let policy = parse_policy(&args.policy)?;
    let clip = args.p_min.map(ClipConfig::new).transpose()?;
    let ips = ips_estimate(&log, &policy, clip, args.level)?;
    let biased = biased_estimate(&log, &policy)?;
    let id = policy.describe();
    let mut csv = String::from(ESTIMATE_CSV_HEADER);
    csv.push('\n');
    csv.push_str(&estimate_csv_row(&id, "ips", &ips));
    csv.push('\n');
    csv.push_str(&biased_csv_row(&id, &biased));
    csv.push('\n');
    print!("{csv}");
    if let Some(out) = &args.out {
        write_text(out, &csv)?;
        write_manifest("evaluate", args, &[out])?;
    }
    Ok(())
}

fn run_bootstrap(args: &BootstrapArgs) -> Result<()> {
    let log = load_log(&args.log)?;
    let policy = parse_policy(&args.policy)?;
    let mut result = online_bootstrap(&log, &policy, args.b, args.seed)?;
    if args.bins != ope_core::bootstrap::DEFAULT_BINS {
        result.histogram = ope_core::bootstrap::histogram(&result.replicates, args.bins)?;
    }
    let estimate = ips_estimate(&log, &policy, None, 0.95)?;
    let consistency = bootstrap_vs_analytic(&result, &estimate);

    let csv_path = args.out.with_extension("csv");
    let mut csv = String::from(HISTOGRAM_CSV_HEADER);
    csv.push('\n');
    for bin in &result.histogram {
        csv.push_str(&histogram_csv_row(bin));
        csv.push('\n');
    }
    write_text(&csv_path, &csv)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        summary: ope_core::bootstrap::BootstrapSummary,
        consistency: &'a ope_core::bootstrap::ConsistencyRow,
    }
    let json_path = args.out.with_extension("json");
    write_text(
        &json_path,
        &serde_json::to_string_pretty(&Summary {
            summary: result.summary(),
            consistency: &consistency,
        })?,
    )?;
    write_manifest("bootstrap", args, &[&csv_path, &json_path])?;
    println!(
        "B={} replicates: mean {:.6}, std {:.6}, skewness {:.4}, excess kurtosis {:.4}, \
         bootstrap/analytic std ratio {:.4}{}",
        args.b,
        result.mean,
        result.std,
        result.skewness,
        result.excess_kurtosis,
        consistency.ratio,
        if consistency.flagged {
            " (FLAGGED)"
        } else {
            ""
        }
    );
    Ok(())
}

fn run_compare(args: &CompareArgs) -> Result<()> {
    let env = load_env(&args.env)?;
    let scheme = args.scheme.build()?;
    let policy = parse_policy(&args.policy)?;
    let mut csv = String::from(COMPARISON_CSV_HEADER);
    csv.push('\n');
    for day in 0..args.days {
        let log = collect(
            &env,
            &scheme,
            args.n,
            derive_seed(args.seed, STREAM_PERIOD, day as u64),
        )?;
        let ips = ips_estimate(&log, &policy, None, 0.95)?;
        let biased = biased_estimate(&log, &policy)?;
        let online = online_rollout(
            &env,
            &policy,
            args.n,
            derive_seed(args.seed, STREAM_ONLINE, day as u64),
            day,
        )?;
        let row = compare(
            &online,
            &OfflinePeriodEstimates {
                period: day,
                ips,
                biased,
            },
        )?;
        csv.push_str(&comparison_csv_row(&row));
        csv.push('\n');
    }
    write_text(&args.out, &csv)?;
    write_manifest("compare", args, &[&args.out])?;
    println!(
        "wrote {} period rows for {} to {}",
        args.days,
        policy.describe(),
        args.out.display()
    );
    Ok(())
}

fn run_optimize(args: &OptimizeArgs) -> Result<()> {
    let log = load_log(&args.log)?;
    let env = load_env(&args.env)?;
    let family = parse_grid(&args.grid, args.capacity)?;
    let clip = args.p_min.map(ClipConfig::new).transpose()?;
    let (train, eval) = split(&log, args.train_fraction, args.seed)?;
    let mut report = grid_select(&family, &train, clip)?;
    fill_eval_estimates(&mut report, &eval)?;

    let csv_path = args.out.with_extension("csv");
    let mut csv = String::from(REPORT_CSV_HEADER);
    csv.push('\n');
    for row in report_csv_rows(&report) {
        csv.push_str(&row);
        csv.push('\n');
    }
    write_text(&csv_path, &csv)?;

    let validation = match report.selected_row() {
        Some(row) => {
            let validation = validate_selection(&report, &eval, &env)?;
            println!(
                "selected {} params {:?}: train {:.6}, eval {:.6} [{:.6}, {:.6}], oracle {:.6}, \
                 CI covers oracle: {}",
                report.family_id,
                row.params,
                row.train_estimate.point,
                validation.eval_estimate.point,
                validation.eval_estimate.ci_low,
                validation.eval_estimate.ci_high,
                validation.true_value,
                validation.covered
            );
            Some(validation)
        }
        None => {
            println!(
                "no feasible candidate under capacity bound {:?}",
                args.capacity
            );
            None
        }
    };

    #[derive(Serialize)]
    struct OptimizeOutput<'a> {
        report: &'a ope_core::optimizer::OptimizationReport,
        validation: Option<&'a ope_core::optimizer::ValidationRow>,
    }
    let json_path = args.out.with_extension("json");
    write_text(
        &json_path,
        &serde_json::to_string_pretty(&OptimizeOutput {
            report: &report,
            validation: validation.as_ref(),
        })?,
    )?;
    write_manifest("optimize", args, &[&csv_path, &json_path])?;
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::GenScenario(args) => run_gen_scenario(args),
        Command::Collect(args) => run_collect(args),
        Command::Verify(args) => match run_verify(args) {
            Ok(true) => Ok(()),
            Ok(false) => std::process::exit(1),
            Err(e) => Err(e),
        },
        Command::Evaluate(args) => run_evaluate(args),
        Command::Bootstrap(args) => run_bootstrap(args),
        Command::Compare(args) => run_compare(args),
        Command::Optimize(args) => run_optimize(args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
