//! Argument definitions and subcommand implementations.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use massdesign::analytic::{
    critical_ratio_holds, critical_vmax, d_distance, d_star, d_time_formula, gap_analysis, periodic_profile, GapReport,
    PeriodicProfileSpec,
};
use massdesign::dynamics::Profile;
use massdesign::estimator::{relative_error_bound, MassEstimate};
use massdesign::lifted::lift_problem;
use massdesign::problem::{check_feasibility, DesignProblem, Objective};
use massdesign::sim::{filter_acceleration, monte_carlo, run_pipeline, synthesize_log};
use massdesign::solver::{
    bang_bang_policy, min_distance_profile, min_time_profile, solve, solve_profile_parameterized, ProfileParam,
    SolveReport, SolveStatus,
};
use massdesign::wiener::{EbFit, EbSearch};

use crate::config::{parse_config, RunConfig, SolverMode};
use crate::io::{read_drive_log, read_profile, write_drive_log, write_profile};
use crate::CliError;

/// Largest horizon `export-lifted` accepts; the lifted vector grows quadratically.
pub const LIFTED_MAX_N: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "massdesign", version, about = "Excitation profile design and mass estimation")]
pub struct Cli {
    /// TOML configuration with dotted keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides `sim.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Main output file; standard output when omitted.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Base parameter set; overrides the `preset` key.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design an input profile; writes the profile CSV.
    Design(DesignArgs),
    /// Estimate the mass from a drive log; writes JSON.
    Estimate(EstimateArgs),
    /// Smooth the measured acceleration of a drive log.
    Filter(LogArgs),
    /// Synthesize drive logs from a profile, or run a coverage study.
    Simulate(SimulateArgs),
    /// Closed-form results for an ideal actuator; writes JSON.
    Analyze(AnalyzeArgs),
    /// Write the lifted formulation's relaxation in SDPA sparse format.
    ExportLifted(ExportArgs),
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Overrides the configured objective.
    #[arg(long)]
    pub objective: Option<String>,
    /// Where to write the JSON solve report; standard error when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LogArgs {
    /// Drive log CSV.
    #[arg(long)]
    pub log: PathBuf,
    /// Where to write the JSON side report; standard error when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Smooth the acceleration with the fitted Wiener filter first.
    #[arg(long)]
    pub wiener: bool,
    /// Estimate a constant force offset alongside the mass.
    #[arg(long)]
    pub offset: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Profile CSV to drive.
    #[arg(long)]
    pub profile: PathBuf,
    /// Trial index selecting the random stream.
    #[arg(long, default_value_t = 0)]
    pub trial: u64,
    /// Run many trials and report coverage as JSON instead of writing a log.
    #[arg(long)]
    pub monte_carlo: bool,
    /// Overrides `sim.trials`.
    #[arg(long)]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Velocity offsets for the distance-gap study: `start:stop:count` or a comma list.
    #[arg(long)]
    pub gap_grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Write the lifted problem as JSON instead of SDPA.
    #[arg(long)]
    pub json: bool,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text, cli.preset.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.sim.seed = s;
        cfg.search.seed = s;
    }
    Ok(cfg)
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn sink(path: Option<&Path>, fallback: impl Write + 'static) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(fallback),
    })
}

fn write_json<T: Serialize>(mut out: Box<dyn Write>, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    let output = cli.output.as_deref();
    match &cli.command {
        Command::Design(a) => design(cfg, a, output),
        Command::Estimate(a) => estimate(&cfg, a, output),
        Command::Filter(a) => filter(a, output),
        Command::Simulate(a) => simulate(cfg, a, output),
        Command::Analyze(a) => analyze(&cfg, a, output),
        Command::ExportLifted(a) => export_lifted(&cfg, a, output),
    }
}

/// JSON report of `design`.
#[derive(Debug, Serialize)]
pub struct DesignReport {
    pub objective: Objective,
    /// `certified` or `parameterized`.
    pub method: &'static str,
    pub n: usize,
    pub duration: f64,
    pub distance: f64,
    pub excitation: f64,
    pub r_designed: f64,
    pub feasible: bool,
    pub max_violation: f64,
    pub solver: SolveReport,
}

/// Solve the configured design problem. Returns the method used, the
/// report and the designed profile (absent when infeasible).
pub fn run_design(cfg: &RunConfig) -> Result<(&'static str, SolveReport, Option<Profile>), CliError> {
    let problem = &cfg.problem;
    let certified = match cfg.mode {
        SolverMode::Auto => problem.grid.n <= cfg.settings.max_n,
        SolverMode::Certified => true,
        SolverMode::Parameterized => false,
    };
    let (method, report) = if certified {
        ("certified", solve(problem, &cfg.settings)?.1)
    } else {
        ("parameterized", parameterized(problem, cfg)?)
    };
    let profile = if report.u_star.is_empty() || report.status == SolveStatus::Infeasible {
        None
    } else {
        Some(problem.with_n(report.u_star.len())?.simulate(&report.u_star)?)
    };
    Ok((method, report, profile))
}

fn parameterized(problem: &DesignProblem, cfg: &RunConfig) -> Result<SolveReport, CliError> {
    Ok(match problem.objective {
        Objective::MinTime => min_time_profile(problem, cfg.v_points, &cfg.search)?,
        Objective::MinDistance => min_distance_profile(problem, cfg.v_points, &cfg.search)?,
        Objective::MaxAccuracy => {
            let b = problem.bounds.at_distance(0.0);
            let u = bang_bang_policy(problem, b.v_min, b.v_max, None, None);
            solve_profile_parameterized(problem, &ProfileParam::from_input(&u), &cfg.search)?
        }
    })
}

fn design(mut cfg: RunConfig, args: &DesignArgs, output: Option<&Path>) -> Result<(), CliError> {
    if let Some(o) = &args.objective {
        cfg.problem.objective = o.parse()?;
    }
    let (method, report, profile) = run_design(&cfg)?;
    let (feasible, max_violation, n, distance, excitation) = match &profile {
        Some(p) => {
            let pr = cfg.problem.with_n(p.len())?;
            let chk = check_feasibility(&p.u, &pr, cfg.settings.feas_tol)?;
            (chk.feasible, chk.max_violation(), p.len(), p.distance(), p.excitation())
        }
        None => (false, f64::NAN, 0, f64::NAN, f64::NAN),
    };
    let status = report.status;
    let summary = DesignReport {
        objective: cfg.problem.objective,
        method,
        n,
        duration: n as f64 * cfg.problem.grid.ts,
        distance,
        excitation,
        r_designed: cfg.problem.target.r_designed,
        feasible,
        max_violation,
        solver: report,
    };
    write_json(sink(args.report.as_deref(), std::io::stderr())?, &summary)?;
    match status {
        SolveStatus::Infeasible => {
            return Err(massdesign::Error::Infeasible(format!(
                "certified upper bound on the excitation {} is below {}",
                summary.solver.upper_bound, summary.r_designed
            ))
            .into())
        }
        SolveStatus::BudgetExhausted => {
            return Err(massdesign::Error::BudgetExhausted(format!(
                "stopped after {} nodes with gap {:?}",
                summary.solver.nodes_explored, summary.solver.gap
            ))
            .into())
        }
        _ => {}
    }
    if let Some(p) = profile {
        write_profile(sink(output, std::io::stdout())?, &p)?;
    }
    Ok(())
}

/// JSON output of `estimate`.
#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub m_hat: f64,
    pub delta_hat: Option<f64>,
    pub sigma_e2_hat: f64,
    pub excitation: f64,
    pub samples: usize,
    /// Chi-square value of the configured confidence level.
    pub chi2: f64,
    /// `sqrt(sigma_e2_hat chi2 / (m_hat^2 R))`.
    pub relative_band: f64,
    pub interval: [f64; 2],
    pub theta_cov: Vec<Vec<f64>>,
}

pub fn estimate_report(est: &MassEstimate, chi2: f64) -> EstimateReport {
    let r = est.r_total();
    let band = relative_error_bound(est.sigma_e2_hat, chi2, est.m_hat, r);
    EstimateReport {
        m_hat: est.m_hat,
        delta_hat: est.delta_hat,
        sigma_e2_hat: est.sigma_e2_hat,
        excitation: r,
        samples: est.r_trace.len(),
        chi2,
        relative_band: band,
        interval: [est.m_hat * (1.0 - band), est.m_hat * (1.0 + band)],
        theta_cov: est.theta_cov.clone(),
    }
}

fn estimate(cfg: &RunConfig, args: &EstimateArgs, output: Option<&Path>) -> Result<(), CliError> {
    let log = read_drive_log(open(&args.log)?)?;
    let est = run_pipeline(&log, args.wiener, args.offset)?;
    write_json(sink(output, std::io::stdout())?, &estimate_report(&est, cfg.problem.target.chi2))
}

fn filter(args: &LogArgs, output: Option<&Path>) -> Result<(), CliError> {
    let mut log = read_drive_log(open(&args.log)?)?;
    let (a, fit): (Vec<f64>, EbFit) = filter_acceleration(&log.a_meas, &EbSearch::default())?;
    log.a_meas = a;
    write_drive_log(sink(output, std::io::stdout())?, &log)?;
    write_json(sink(args.report.as_deref(), std::io::stderr())?, &fit)
}

fn simulate(mut cfg: RunConfig, args: &SimulateArgs, output: Option<&Path>) -> Result<(), CliError> {
    let profile = read_profile(open(&args.profile)?)?;
    if let Some(t) = args.trials {
        cfg.sim.trials = t;
    }
    if args.monte_carlo {
        let rep = monte_carlo(&profile, &cfg.sim, &cfg.problem.target)?;
        write_json(sink(output, std::io::stdout())?, &rep)
    } else {
        let log = synthesize_log(&profile, &cfg.sim, args.trial)?;
        write_drive_log(sink(output, std::io::stdout())?, &log)
    }
}

/// JSON output of `analyze`.
#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub ts: f64,
    pub r_designed: f64,
    pub critical_vmax: f64,
    pub critical_ratio_holds: bool,
    pub periodic: PeriodicProfileSpec,
    pub periodic_distance: f64,
    pub d_time_formula: f64,
    pub d_distance: f64,
    pub d_star: f64,
    pub gap: Option<GapReport>,
}

/// Parse `start:stop:count` (inclusive, evenly spaced) or `x,y,z`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = |m: String| CliError::Usage(format!("--gap-grid {s:?}: {m}"));
    let num = |x: &str| x.trim().parse::<f64>().map_err(|_| bad(format!("{x:?} is not a number")));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, b, n] => {
            let (a, b) = (num(a)?, num(b)?);
            let n: usize = n.trim().parse().map_err(|_| bad(format!("{n:?} is not a count")))?;
            match n {
                0 => Err(bad("count must be positive".into())),
                1 => Ok(vec![a]),
                _ => Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()),
            }
        }
        [list] => list.split(',').map(num).collect(),
        _ => Err(bad("expected start:stop:count or a comma list".into())),
    }
}

fn analyze(cfg: &RunConfig, args: &AnalyzeArgs, output: Option<&Path>) -> Result<(), CliError> {
    let b = cfg.problem.bounds.at_distance(0.0);
    let ts = cfg.problem.grid.ts;
    let r = cfg.problem.target.r_designed;
    let (spec, prof) = periodic_profile(&b, ts, r)?;
    let gap = match &args.gap_grid {
        Some(g) => Some(gap_analysis(&b, ts, r, &parse_grid(g)?)?),
        None => None,
    };
    let rep = AnalysisReport {
        ts,
        r_designed: r,
        critical_vmax: critical_vmax(b.a_max, b.a_min, b.v_min),
        critical_ratio_holds: critical_ratio_holds(&b, 1e-9),
        periodic: spec,
        periodic_distance: prof.distance(),
        d_time_formula: d_time_formula(&b, ts, r),
        d_distance: d_distance(&b, ts, r),
        d_star: d_star(&b, ts, r)?,
        gap,
    };
    write_json(sink(output, std::io::stdout())?, &rep)
}

fn export_lifted(cfg: &RunConfig, args: &ExportArgs, output: Option<&Path>) -> Result<(), CliError> {
    let n = cfg.problem.grid.n;
    if n > LIFTED_MAX_N {
        return Err(massdesign::Error::Unsupported(format!(
            "horizon {n} exceeds {LIFTED_MAX_N} samples; set grid.n"
        ))
        .into());
    }
    let lifted = lift_problem(&cfg.problem)?;
    if args.json {
        write_json(sink(output, std::io::stdout())?, &lifted)
    } else {
        let mut out = sink(output, std::io::stdout())?;
        out.write_all(lifted.to_sdpa().as_bytes())?;
        out.flush()?;
        Ok(())
    }
}
