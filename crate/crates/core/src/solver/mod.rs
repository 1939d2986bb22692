//! Global and structured solvers for design problems.
//!
//! [`max_excitation`] and [`solve_fixed_horizon`] return certified bounds
//! from branch and bound for horizons up to [`SolverSettings::max_n`];
//! [`solve_min_time`] bisects on the horizon. For long horizons
//! [`solve_profile_parameterized`] searches a family of bang-bang inputs
//! and reports a feasible design without a global certificate.

mod bnb;
mod lp;
mod param;

use serde::{Deserialize, Serialize};

pub use param::{bang_bang_policy, min_distance_profile, min_time_profile, solve_profile_parameterized, ParamSearch, ProfileParam};

use crate::error::{Error, Result};
use crate::problem::{check_feasibility, resolve_varying_bounds, DesignProblem, Objective, SampleBounds};
use bnb::{Limits, Outcome};
use lp::{cost_in_acceleration, Polytope};

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    GapReached,
    Infeasible,
    BudgetExhausted,
}

/// Solution with certified bounds.
///
/// For maximization `lower_bound <= objective_value <= upper_bound` with
/// `lower_bound` the incumbent; for minimization `upper_bound` is the
/// incumbent. `gap = (upper - lower) / max(1, |upper|)`; it is `None` when no
/// certificate exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub u_star: Vec<f64>,
    pub objective_value: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub gap: Option<f64>,
    pub nodes_explored: usize,
    pub status: SolveStatus,
}

impl SolveReport {
    fn infeasible(lower: f64, upper: f64, nodes: usize) -> Self {
        Self {
            u_star: Vec::new(),
            objective_value: f64::NAN,
            lower_bound: lower,
            upper_bound: upper,
            gap: None,
            nodes_explored: nodes,
            status: SolveStatus::Infeasible,
        }
    }
}

/// Knobs shared by the certified solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative gap at which a solve is declared optimal.
    pub tol: f64,
    pub node_budget: usize,
    /// Largest horizon accepted by the certified solvers.
    pub max_n: usize,
    /// Slack allowed when re-checking incumbents by simulation.
    pub feas_tol: f64,
    /// Iteration cap for distance-varying bounds.
    pub max_bound_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            node_budget: 200_000,
            max_n: 64,
            feas_tol: 1e-7,
            max_bound_iters: 10,
        }
    }
}

fn gap(upper: f64, lower: f64) -> f64 {
    (upper - lower) / upper.abs().max(1.0)
}

fn check_size(problem: &DesignProblem, settings: &SolverSettings) -> Result<()> {
    if problem.grid.n > settings.max_n {
        return Err(Error::Unsupported(format!(
            "horizon of {} samples exceeds the certified-solver cap of {}; use the parameterized solver",
            problem.grid.n, settings.max_n
        )));
    }
    Ok(())
}

/// Input producing acceleration `a`, clipped onto the input limits to
/// remove LP round-off, and its simulation-based feasibility check.
fn to_input(problem: &DesignProblem, sb: &SampleBounds, a: &[f64]) -> Vec<f64> {
    problem
        .actuator
        .invert(a)
        .into_iter()
        .map(|u| u.clamp(sb.u_min, sb.u_max))
        .collect()
}

fn verified(problem: &DesignProblem, u: &[f64], settings: &SolverSettings) -> Result<bool> {
    // The quality row is judged by the caller; everything else must hold.
    let check = check_feasibility(u, &problem.with_objective(Objective::MaxAccuracy), settings.feas_tol)?;
    Ok(check.feasible)
}

fn root_box(poly: &Polytope) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    poly.bounding_box(&[])
}

struct ExcitationRun {
    outcome: Outcome,
    best: Option<(f64, Vec<f64>)>,
    upper: f64,
    nodes: usize,
}

fn run_max_excitation(
    problem: &DesignProblem,
    sb: &SampleBounds,
    settings: &SolverSettings,
    target: Option<f64>,
) -> Result<ExcitationRun> {
    let poly = Polytope::new(problem, sb);
    let Some((lo, hi)) = root_box(&poly)? else {
        return Ok(ExcitationRun {
            outcome: Outcome::Infeasible,
            best: None,
            upper: f64::NEG_INFINITY,
            nodes: 0,
        });
    };
    let res = bnb::maximize_excitation(
        &poly,
        lo,
        hi,
        &Limits {
            tol: settings.tol,
            node_budget: settings.node_budget,
            target,
        },
    )?;
    Ok(ExcitationRun {
        outcome: res.outcome,
        best: res.incumbent,
        upper: res.bound,
        nodes: res.nodes + 2 * problem.grid.n,
    })
}

fn excitation_report(problem: &DesignProblem, sb: &SampleBounds, run: ExcitationRun, settings: &SolverSettings) -> Result<SolveReport> {
    let Some((_, a)) = run.best else {
        return Ok(SolveReport::infeasible(f64::NEG_INFINITY, run.upper, run.nodes));
    };
    let u = to_input(problem, sb, &a);
    if !verified(problem, &u, settings)? {
        return Err(Error::NoFeasibleIncumbent(
            "the branch-and-bound incumbent failed the simulation check".into(),
        ));
    }
    let value = problem.simulate(&u)?.excitation();
    let upper = run.upper.max(value);
    let g = gap(upper, value);
    let status = match run.outcome {
        Outcome::Budget if g > settings.tol => SolveStatus::BudgetExhausted,
        _ if g <= settings.tol => SolveStatus::Optimal,
        _ => SolveStatus::GapReached,
    };
    Ok(SolveReport {
        u_star: u,
        objective_value: value,
        lower_bound: value,
        upper_bound: upper,
        gap: Some(g),
        nodes_explored: run.nodes,
        status,
    })
}

/// Largest excitation `a'a` reachable on the problem's horizon.
///
/// Quality target and objective of `problem` are ignored.
pub fn max_excitation(problem: &DesignProblem, settings: &SolverSettings) -> Result<SolveReport> {
    check_size(problem, settings)?;
    let fp = resolve_varying_bounds(problem, settings.max_bound_iters, |sb| {
        let run = run_max_excitation(problem, sb, settings, None)?;
        let rep = excitation_report(problem, sb, run, settings)?;
        let u = rep.u_star.clone();
        let u = if u.is_empty() { vec![0.0; problem.grid.n] } else { u };
        Ok((rep, u))
    })?;
    Ok(fp.result)
}

/// Whether excitation `r` is reachable: `Some(report)` with a feasible input,
/// `None` if certified unreachable. Budget exhaustion is an error.
fn reach_target(problem: &DesignProblem, sb: &SampleBounds, r: f64, settings: &SolverSettings) -> Result<(Option<SolveReport>, f64, usize)> {
    let run = run_max_excitation(problem, sb, settings, Some(r))?;
    let upper = run.upper;
    let nodes = run.nodes;
    match &run.best {
        Some((v, _)) if *v >= r => {
            let rep = excitation_report(problem, sb, run, settings)?;
            if rep.objective_value >= r - settings.feas_tol {
                return Ok((Some(rep), upper, nodes));
            }
            Err(Error::NoFeasibleIncumbent("excitation target lost in the simulation check".into()))
        }
        _ if run.outcome == Outcome::Budget => Ok((None, f64::NAN, nodes)),
        _ => Ok((None, upper, nodes)),
    }
}

/// Minimize a linear cost on `u` subject to every constraint of `problem`
/// including `a'a >= R_designed`. The cost value excludes constants.
pub fn solve_linear_cost(problem: &DesignProblem, cost_u: &[f64], settings: &SolverSettings) -> Result<SolveReport> {
    crate::error::check_len("cost vector", problem.grid.n, cost_u.len())?;
    let cost = cost_in_acceleration(&problem.actuator, cost_u);
    solve_cost_in_a(problem, &cost, 0.0, settings)
}

fn solve_cost_in_a(problem: &DesignProblem, cost: &[f64], constant: f64, settings: &SolverSettings) -> Result<SolveReport> {
    check_size(problem, settings)?;
    let r = problem.target.r_designed;
    let fp = resolve_varying_bounds(problem, settings.max_bound_iters, |sb| {
        let rep = solve_cost_once(problem, sb, cost, constant, r, settings)?;
        let u = if rep.u_star.is_empty() {
            vec![0.0; problem.grid.n]
        } else {
            rep.u_star.clone()
        };
        Ok((rep, u))
    })?;
    Ok(fp.result)
}

fn solve_cost_once(
    problem: &DesignProblem,
    sb: &SampleBounds,
    cost: &[f64],
    constant: f64,
    r: f64,
    settings: &SolverSettings,
) -> Result<SolveReport> {
    let (reach, reach_upper, reach_nodes) = reach_target(problem, sb, r, settings)?;
    let Some(anchor_rep) = reach else {
        if reach_upper.is_nan() {
            return Ok(SolveReport {
                u_star: Vec::new(),
                objective_value: f64::NAN,
                lower_bound: f64::NEG_INFINITY,
                upper_bound: f64::INFINITY,
                gap: None,
                nodes_explored: reach_nodes,
                status: SolveStatus::BudgetExhausted,
            });
        }
        // Certificate: the largest reachable excitation is below the target.
        return Ok(SolveReport::infeasible(f64::NEG_INFINITY, reach_upper, reach_nodes));
    };
    let anchor = problem.simulate(&anchor_rep.u_star)?.a;
    let poly = Polytope::new(problem, sb);
    let (lo, hi) = root_box(&poly)?.expect("polytope is non-empty when the target is reachable");
    let res = bnb::minimize_reverse_convex(
        &poly,
        cost,
        r,
        lo,
        hi,
        &[anchor],
        &Limits {
            tol: settings.tol,
            node_budget: settings.node_budget,
            target: None,
        },
    )?;
    let nodes = res.nodes + reach_nodes + 2 * problem.grid.n;
    let Some((_, a)) = res.incumbent else {
        return Ok(SolveReport::infeasible(res.bound + constant, f64::INFINITY, nodes));
    };
    let u = to_input(problem, sb, &a);
    if !verified(problem, &u, settings)? {
        return Err(Error::NoFeasibleIncumbent(
            "the branch-and-bound incumbent failed the simulation check".into(),
        ));
    }
    let a_sim = problem.simulate(&u)?.a;
    let value = cost.iter().zip(&a_sim).map(|(c, x)| c * x).sum::<f64>() + constant;
    let lower = (res.bound + constant).min(value);
    let g = gap(value, lower);
    let status = match res.outcome {
        Outcome::Budget if g > settings.tol => SolveStatus::BudgetExhausted,
        _ if g <= settings.tol => SolveStatus::Optimal,
        _ => SolveStatus::GapReached,
    };
    Ok(SolveReport {
        u_star: u,
        objective_value: value,
        lower_bound: lower,
        upper_bound: value,
        gap: Some(g),
        nodes_explored: nodes,
        status,
    })
}

/// Shortest distance on the problem's horizon that meets the quality target.
/// The objective value is the total distance `d(N)`.
pub fn solve_fixed_horizon(problem: &DesignProblem, settings: &SolverSettings) -> Result<SolveReport> {
    check_size(problem, settings)?;
    let poly = Polytope::new(problem, &problem.bounds.uniform(problem.grid.n));
    solve_cost_in_a(problem, &poly.distance, poly.distance_offset, settings)
}

/// Result of [`solve_min_time`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinTimeResult {
    pub n_star: usize,
    /// `n_star * Ts` in seconds.
    pub time: f64,
    pub report: SolveReport,
}

/// Smallest horizon in `n_lo..=n_hi` for which the quality target is reachable.
///
/// Bisection assumes that a feasible horizon stays feasible when extended,
/// which holds when holding the input at zero keeps the vehicle within its
/// velocity limits.
pub fn solve_min_time(problem: &DesignProblem, n_lo: usize, n_hi: usize, settings: &SolverSettings) -> Result<MinTimeResult> {
    if n_lo == 0 || n_lo > n_hi {
        return Err(Error::InvalidParameter(format!("invalid horizon range {n_lo}..={n_hi}")));
    }
    if n_hi > settings.max_n {
        return Err(Error::Unsupported(format!(
            "horizon range up to {n_hi} exceeds the certified-solver cap of {}",
            settings.max_n
        )));
    }
    let r = problem.target.r_designed;
    let try_n = |n: usize| -> Result<std::result::Result<SolveReport, SolveReport>> {
        let pn = problem.with_n(n)?;
        let fp = resolve_varying_bounds(&pn, settings.max_bound_iters, |sb2| {
            let out = reach_target(&pn, sb2, r, settings)?;
            let u = out.0.as_ref().map(|x| x.u_star.clone()).unwrap_or(vec![0.0; n]);
            Ok((out, u))
        });
        let (reach, upper, nodes) = fp?.result;
        match reach {
            Some(rep) => Ok(Ok(rep)),
            None if upper.is_nan() => Err(Error::BudgetExhausted(format!(
                "node budget exhausted while deciding horizon {n}"
            ))),
            None => Ok(Err(SolveReport::infeasible(f64::NEG_INFINITY, upper, nodes))),
        }
    };
    if r <= 0.0 {
        let rep = match try_n(n_lo)? {
            Ok(rep) => rep,
            Err(rep) => return Err(Error::Infeasible(format!("horizon {n_lo} violates the constraints: {rep:?}"))),
        };
        return Ok(MinTimeResult {
            n_star: n_lo,
            time: n_lo as f64 * problem.grid.ts,
            report: rep,
        });
    }
    let mut best = match try_n(n_hi)? {
        Ok(rep) => (n_hi, rep),
        Err(rep) => {
            return Err(Error::Infeasible(format!(
                "excitation {r} is unreachable within {n_hi} samples (certified upper bound {:.6})",
                rep.upper_bound
            )))
        }
    };
    let (mut lo, mut hi) = (n_lo, n_hi);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        match try_n(mid)? {
            Ok(rep) => {
                best = (mid, rep);
                hi = mid;
            }
            Err(_) => lo = mid + 1,
        }
    }
    Ok(MinTimeResult {
        n_star: best.0,
        time: best.0 as f64 * problem.grid.ts,
        report: best.1,
    })
}

/// Dispatch on the problem's objective with the certified solvers.
///
/// For `min_time` the problem's horizon is the upper end of the search.
pub fn solve(problem: &DesignProblem, settings: &SolverSettings) -> Result<(usize, SolveReport)> {
    match problem.objective {
        Objective::MaxAccuracy => Ok((problem.grid.n, max_excitation(problem, settings)?)),
        Objective::MinDistance => Ok((problem.grid.n, solve_fixed_horizon(problem, settings)?)),
        Objective::MinTime => {
            let res = solve_min_time(problem, 1, problem.grid.n, settings)?;
            Ok((res.n_star, res.report))
        }
    }
}

#[cfg(test)]
mod tests;
