//! Command-line surface: run a scenario, compare both policies on it,
//! inspect the fair allocation of its topology, or run the property suites.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::fairness::{solve_maxmin_qp, verify_maxmin, water_filling, FairnessError, FairnessProblem};
use crate::metrics::{self, RunMetrics};
use crate::model::RateVector;
use crate::scenario::{ScenarioError, ScenarioFile};
use crate::selftest;
use crate::sim::{self, Policy, SimError};

#[derive(Debug, Parser)]
#[command(name = "predictor", version, about = "Predictive per-circuit rate control for relay overlays, in simulation")]
pub struct Cli {
    /// Print nothing but errors and warnings.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write its traces.
    Run(RunArgs),
    /// Simulate a scenario under both policies and compare them.
    Compare(CompareArgs),
    /// Compare the quadratic fair allocation of a scenario's topology with
    /// water filling.
    Fairness(FairnessArgs),
    /// Run the randomized property suites.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory, created when missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario's policy.
    #[arg(long)]
    pub policy: Option<Policy>,
    /// Overrides the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory; each policy writes into its own subdirectory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct FairnessArgs {
    /// Scenario whose topology and `r_max` are used.
    #[arg(long)]
    pub scenario: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Random cases per suite.
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: io::Error },
}

/// Whether a command finished without any logged invariant violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Clean,
    Violations,
}

pub fn execute(cli: &Cli) -> Result<Verdict, CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a, cli.quiet).map(|m| verdict_of(&m)),
        Command::Compare(a) => cmd_compare(a, cli.quiet).map(|c| verdict_of(&c.predictor)),
        Command::Fairness(a) => cmd_fairness(&a.scenario, cli.quiet).map(|r| {
            if r.qp_fair && r.water_filling_fair {
                Verdict::Clean
            } else {
                Verdict::Violations
            }
        }),
        Command::Selftest(a) => Ok(cmd_selftest(a, cli.quiet)),
    }
}

fn verdict_of(m: &RunMetrics) -> Verdict {
    if m.queue_violations == 0 {
        Verdict::Clean
    } else {
        Verdict::Violations
    }
}

fn output_error(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.display().to_string(),
        source,
    }
}

fn simulate(scenario: &ScenarioFile, out: &Path) -> Result<RunMetrics, CliError> {
    let setup = scenario.setup()?;
    let trace = sim::run(&setup)?;
    let m = metrics::compute(&trace);
    fs::create_dir_all(out).map_err(output_error(out))?;
    metrics::write_outputs(out, &trace, &m).map_err(output_error(out))?;
    for v in trace.violations.iter().take(1) {
        log::warn!(
            "{} queue-limit violations; first at step {}: circuit {} at node {} held {} > {}",
            trace.violations.len(),
            v.step,
            v.circuit,
            v.node,
            v.queue,
            v.limit
        );
    }
    Ok(m)
}

pub fn cmd_run(args: &RunArgs, quiet: bool) -> Result<RunMetrics, CliError> {
    let mut scenario = ScenarioFile::load(&args.scenario)?;
    if let Some(p) = args.policy {
        scenario.policy = p;
    }
    if let Some(s) = args.seed {
        scenario.seed = s;
    }
    let m = simulate(&scenario, &args.out)?;
    if !quiet {
        print!("{}", metrics::render_summary(&m));
    }
    Ok(m)
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub predictor: RunMetrics,
    pub baseline: RunMetrics,
    /// Baseline mean latency over the predictive policy's.
    pub latency_ratio: Option<f64>,
    /// Baseline mean backlog over the predictive policy's, after start-up.
    pub backlog_ratio: Option<f64>,
}

pub fn cmd_compare(args: &CompareArgs, quiet: bool) -> Result<Comparison, CliError> {
    let mut scenario = ScenarioFile::load(&args.scenario)?;
    if let Some(s) = args.seed {
        scenario.seed = s;
    }
    let mut run_as = |policy: Policy| {
        scenario.policy = policy;
        simulate(&scenario, &args.out.join(policy.to_string()))
    };
    let predictor = run_as(Policy::Predictor)?;
    let baseline = run_as(Policy::Baseline)?;
    let ratio = |a: f64, b: f64| (b > 0.0).then(|| a / b);
    let cmp = Comparison {
        latency_ratio: baseline
            .mean_latency_ms
            .zip(predictor.mean_latency_ms)
            .and_then(|(b, p)| ratio(b, p)),
        backlog_ratio: ratio(baseline.mean_steady_backlog, predictor.mean_steady_backlog),
        predictor,
        baseline,
    };
    let path = args.out.join("compare.json");
    let json = serde_json::to_string_pretty(&cmp).expect("metrics serialize");
    fs::write(&path, json + "\n").map_err(output_error(&path))?;
    if !quiet {
        print!("{}", render_comparison(&cmp));
    }
    Ok(cmp)
}

fn render_comparison(c: &Comparison) -> String {
    let mut s = String::new();
    for m in [&c.predictor, &c.baseline] {
        s += &format!("== {}\n", m.policy);
        s += &metrics::render_summary(m);
    }
    let opt = |v: Option<f64>, prec: usize| v.map_or("n/a".to_string(), |x| format!("{x:.prec$}"));
    s += "== comparison\n";
    s += &format!("{:<28}{:>12}{:>12}\n", "", "predictor", "baseline");
    s += &format!(
        "{:<28}{:>12}{:>12}\n",
        "mean latency (ms)",
        opt(c.predictor.mean_latency_ms, 1),
        opt(c.baseline.mean_latency_ms, 1)
    );
    s += &format!(
        "{:<28}{:>12}{:>12}\n",
        "jain index",
        opt(c.predictor.jain_index, 4),
        opt(c.baseline.jain_index, 4)
    );
    s += &format!(
        "{:<28}{:>12}{:>12}\n",
        "delivered packets", c.predictor.delivered_total, c.baseline.delivered_total
    );
    s += &format!(
        "{:<28}{:>12.1}{:>12.1}\n",
        "mean backlog after start-up", c.predictor.mean_steady_backlog, c.baseline.mean_steady_backlog
    );
    s += &format!("latency ratio (baseline / predictor): {}\n", opt(c.latency_ratio, 2));
    s
}

#[derive(Debug, Clone)]
pub struct FairnessReport {
    pub qp: RateVector<f64>,
    pub water_filling: RateVector<f64>,
    pub linf: f64,
    pub qp_fair: bool,
    pub water_filling_fair: bool,
    pub bound_ok: bool,
}

pub fn cmd_fairness(scenario: &Path, quiet: bool) -> Result<FairnessReport, CliError> {
    let s = ScenarioFile::load(scenario)?;
    let problem = FairnessProblem::new(s.topology()?, s.controller.r_max);
    let bound_ok = problem.satisfies_bound();
    if !bound_ok {
        log::warn!(
            "r_max {} is below the largest relay capacity {}; the quadratic allocation need not be max-min fair",
            problem.r_max,
            problem.required_r_max()
        );
    }
    let qp = solve_maxmin_qp(&problem)?;
    let wf = water_filling(&problem);
    let report = FairnessReport {
        linf: qp.rates.linf_distance(&wf),
        qp_fair: verify_maxmin(&qp.rates, &problem.topology),
        water_filling_fair: verify_maxmin(&wf, &problem.topology),
        qp: qp.rates,
        water_filling: wf,
        bound_ok,
    };
    if !quiet {
        let fmt = |r: &RateVector<f64>| r.rates.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ");
        let word = |fair: bool| if fair { "fair" } else { "NOT fair" };
        println!("quadratic program: [{}]", fmt(&report.qp));
        println!("water filling:     [{}]", fmt(&report.water_filling));
        println!("L-inf difference:  {:.3e}", report.linf);
        println!(
            "verdict:           quadratic program {}, water filling {}",
            word(report.qp_fair),
            word(report.water_filling_fair)
        );
    }
    Ok(report)
}

pub fn cmd_selftest(args: &SelftestArgs, quiet: bool) -> Verdict {
    let results = selftest::run_all(args.seed, args.cases);
    for r in &results {
        if !quiet || !r.passed() {
            let status = if r.passed() { "PASS" } else { "FAIL" };
            println!("{status} {} ({}/{} cases)", r.name, r.cases - r.failures, r.cases);
        }
        if let Some(f) = &r.first_failure {
            println!("     first failure: {f}");
        }
    }
    if results.iter().all(|r| r.passed()) {
        Verdict::Clean
    } else {
        Verdict::Violations
    }
}
