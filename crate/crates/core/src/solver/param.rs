//! Structured search over piecewise-constant inputs for long horizons.
//!
//! Nothing here carries a global certificate. Every reported input has been
//! re-checked by simulation and the report says `gap_reached` with no gap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SolveReport, SolveStatus};
use crate::error::{Error, Result};
use crate::problem::{check_feasibility, DesignProblem, Objective};

/// Piecewise-constant input: `levels[s]` holds on segment `s`, and the level
/// changes after each sample listed in `switch_times` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileParam {
    pub switch_times: Vec<usize>,
    pub levels: Vec<f64>,
}

impl ProfileParam {
    pub fn new(switch_times: Vec<usize>, levels: Vec<f64>) -> Result<Self> {
        let p = Self { switch_times, levels };
        p.validate(usize::MAX)?;
        Ok(p)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.levels.len() != self.switch_times.len() + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} switch times need {} levels, got {}",
                self.switch_times.len(),
                self.switch_times.len() + 1,
                self.levels.len()
            )));
        }
        if self.levels.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("input levels must be finite".into()));
        }
        let mut prev = 0;
        for &t in &self.switch_times {
            if t <= prev || t > n {
                return Err(Error::InvalidParameter(format!(
                    "switch times must be strictly increasing within [1, {n}], got {:?}",
                    self.switch_times
                )));
            }
            prev = t;
        }
        Ok(())
    }

    /// Input sequence on `n` samples.
    pub fn expand(&self, n: usize) -> Result<Vec<f64>> {
        self.validate(n)?;
        let mut u = Vec::with_capacity(n);
        let mut seg = 0;
        for k in 1..=n {
            u.push(self.levels[seg]);
            if seg < self.switch_times.len() && self.switch_times[seg] == k {
                seg += 1;
            }
        }
        Ok(u)
    }

    /// Run-length compression of an input sequence.
    pub fn from_input(u: &[f64]) -> Self {
        let mut switch_times = Vec::new();
        let mut levels = Vec::new();
        for (k, &x) in u.iter().enumerate() {
            if levels.last() != Some(&x) {
                if k > 0 {
                    switch_times.push(k);
                }
                levels.push(x);
            }
        }
        Self { switch_times, levels }
    }
}

/// Settings for [`solve_profile_parameterized`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSearch {
    /// Number of starts; the first is the template itself.
    pub starts: usize,
    /// Passes over all coordinates per step size; zero evaluates the template only.
    pub max_sweeps: usize,
    /// Largest switch-time move in samples; halved down to one.
    pub initial_step: usize,
    /// Also move levels within the input limits.
    pub optimize_levels: bool,
    pub seed: u64,
    pub feas_tol: f64,
}

impl Default for ParamSearch {
    fn default() -> Self {
        Self {
            starts: 4,
            max_sweeps: 8,
            initial_step: 16,
            optimize_levels: false,
            seed: 0,
            feas_tol: 1e-7,
        }
    }
}

/// Score to minimize and the input that realizes it, or `None` if infeasible.
///
/// For min-time and min-distance the experiment stops at the first sample
/// where the excitation reaches the target, so the input is truncated there.
fn evaluate(problem: &DesignProblem, u: &[f64], tol: f64) -> Result<Option<(f64, Vec<f64>)>> {
    let prof = problem.simulate(u)?;
    match problem.objective {
        Objective::MaxAccuracy => {
            let rep = check_feasibility(u, problem, tol)?;
            Ok(rep.feasible.then(|| (-prof.excitation(), u.to_vec())))
        }
        Objective::MinTime | Objective::MinDistance => {
            let r = problem.target.r_designed;
            let Some(k) = prof.first_index_reaching(r) else {
                return Ok(None);
            };
            let k = k.max(1);
            let short = problem.with_n(k)?;
            let rep = check_feasibility(&u[..k], &short, tol)?;
            if !rep.feasible {
                return Ok(None);
            }
            let score = match problem.objective {
                Objective::MinTime => k as f64 * problem.grid.ts,
                _ => prof.d[k - 1],
            };
            Ok(Some((score, u[..k].to_vec())))
        }
    }
}

fn report(problem: &DesignProblem, score: f64, u: Vec<f64>, nodes: usize) -> SolveReport {
    let (value, lower, upper) = match problem.objective {
        Objective::MaxAccuracy => (-score, -score, f64::INFINITY),
        _ => (score, f64::NEG_INFINITY, score),
    };
    SolveReport {
        u_star: u,
        objective_value: value,
        lower_bound: lower,
        upper_bound: upper,
        gap: None,
        nodes_explored: nodes,
        status: SolveStatus::GapReached,
    }
}

/// Improve a template by coordinate descent on its switch times (and levels
/// when enabled) from several starts. The template is kept on the
/// problem's horizon; for min-time and min-distance the reported input
/// ends where the excitation target is first met.
pub fn solve_profile_parameterized(
    problem: &DesignProblem,
    template: &ProfileParam,
    search: &ParamSearch,
) -> Result<SolveReport> {
    let n = problem.grid.n;
    template.validate(n)?;
    let b = problem.bounds.at_distance(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut evals = 0usize;
    let mut best: Option<(f64, Vec<f64>)> = None;

    for start in 0..search.starts.max(1) {
        let mut cur = template.clone();
        if start > 0 {
            let w = search.initial_step.max(1) as i64;
            for t in cur.switch_times.iter_mut() {
                *t = (*t as i64 + rng.random_range(-w..=w)).clamp(1, n as i64) as usize;
            }
            cur.switch_times.sort_unstable();
            cur.switch_times.dedup();
            if cur.switch_times.len() != template.switch_times.len() {
                continue;
            }
        }
        evals += 1;
        let Some(mut cur_score) = evaluate(problem, &cur.expand(n)?, search.feas_tol)?.map(|x| x.0) else {
            continue;
        };
        let mut step = search.initial_step.max(1);
        let mut level_step = 0.25 * (b.u_max - b.u_min);
        loop {
            for _ in 0..search.max_sweeps {
                let mut improved = false;
                for i in 0..cur.switch_times.len() {
                    for dir in [-1i64, 1] {
                        let t = cur.switch_times[i] as i64 + dir * step as i64;
                        let lo = if i == 0 { 1 } else { cur.switch_times[i - 1] as i64 + 1 };
                        let hi = cur.switch_times.get(i + 1).map_or(n as i64, |&x| x as i64 - 1);
                        if t < lo || t > hi {
                            continue;
                        }
                        let mut cand = cur.clone();
                        cand.switch_times[i] = t as usize;
                        evals += 1;
                        if let Some((s, _)) = evaluate(problem, &cand.expand(n)?, search.feas_tol)? {
                            if s < cur_score - 1e-12 {
                                cur = cand;
                                cur_score = s;
                                improved = true;
                            }
                        }
                    }
                }
                if search.optimize_levels {
                    for i in 0..cur.levels.len() {
                        for dir in [-1.0, 1.0] {
                            let mut cand = cur.clone();
                            cand.levels[i] = (cand.levels[i] + dir * level_step).clamp(b.u_min, b.u_max);
                            if cand.levels[i] == cur.levels[i] {
                                continue;
                            }
                            evals += 1;
                            if let Some((s, _)) = evaluate(problem, &cand.expand(n)?, search.feas_tol)? {
                                if s < cur_score - 1e-12 {
                                    cur = cand;
                                    cur_score = s;
                                    improved = true;
                                }
                            }
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
            if step == 1 && (!search.optimize_levels || level_step < 1e-3 * (b.u_max - b.u_min)) {
                break;
            }
            step = (step / 2).max(1);
            level_step *= 0.5;
        }
        let (score, u) = evaluate(problem, &cur.expand(n)?, search.feas_tol)?.expect("search only accepts feasible moves");
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, u));
        }
    }
    match best {
        Some((score, u)) => Ok(report(problem, score, u, evals)),
        None => Err(Error::NoFeasibleIncumbent(
            "no start of the parameterized search was feasible".into(),
        )),
    }
}

/// Velocity-predictive bang-bang input.
///
/// Accelerates at the largest admissible level until holding it one more
/// sample would, after the actuator lag, carry the velocity above `v_high`;
/// then brakes until the same lookahead reaches `v_low`. After
/// `cycles_below` completed cycles the upper threshold becomes `v_max`
/// (the final ramp). Generation stops once the excitation reaches `stop_at`.
/// Thresholds are clipped to the velocity limits.
pub fn bang_bang_policy(
    problem: &DesignProblem,
    v_low: f64,
    v_high: f64,
    cycles_below: Option<usize>,
    stop_at: Option<f64>,
) -> Vec<f64> {
    let n = problem.grid.n;
    let ts = problem.grid.ts;
    let p = problem.actuator.p;
    let (mut a, mut v, mut d, mut r) = (0.0f64, problem.v0, 0.0f64, 0.0f64);
    let mut up = true;
    let mut cycles = 0usize;
    let mut u = Vec::with_capacity(n);
    while u.len() < n {
        let b = problem.bounds.at_distance(d);
        let hi_u = b.u_max.min(b.a_max);
        let lo_u = b.u_min.max(b.a_min);
        let top = match cycles_below {
            Some(m) if cycles >= m => b.v_max,
            _ => v_high.min(b.v_max),
        };
        // Extreme velocity reached if `first` is applied now and `then` afterwards.
        let extreme = |first: f64, then: f64, rising: bool| {
            let mut aa = p * a + (1.0 - p) * first;
            let mut vv = v + ts * aa;
            let mut ext = vv;
            for _ in 0..10_000 {
                aa = p * aa + (1.0 - p) * then;
                if (rising && aa <= 0.0) || (!rising && aa >= 0.0) {
                    break;
                }
                vv += ts * aa;
                ext = if rising { ext.max(vv) } else { ext.min(vv) };
            }
            ext
        };
        if up && extreme(hi_u, lo_u, true) > top {
            up = false;
        } else if !up && extreme(lo_u, hi_u, false) < v_low.max(b.v_min) {
            up = true;
            cycles += 1;
        }
        let uk = if up { hi_u } else { lo_u };
        let a_new = p * a + (1.0 - p) * uk;
        d += v * ts + 0.5 * a_new * ts * ts;
        v += ts * a_new;
        a = a_new;
        r += a * a;
        u.push(uk);
        if stop_at.is_some_and(|s| r >= s) {
            break;
        }
    }
    u
}

fn padded(problem: &DesignProblem, mut u: Vec<f64>) -> Vec<f64> {
    // Whatever follows the stopping sample is irrelevant to the truncated score.
    let last = u.last().copied().unwrap_or(0.0);
    u.resize(problem.grid.n, last);
    u
}

/// Min-time design for long horizons: the bang-bang policy up to `v_max`
/// and back down to a lower threshold, scanned on `v_low_points` values in
/// `[v_min, v_max)`; the fastest template is polished by
/// [`solve_profile_parameterized`].
pub fn min_time_profile(problem: &DesignProblem, v_low_points: usize, search: &ParamSearch) -> Result<SolveReport> {
    let problem = problem.with_objective(Objective::MinTime);
    let b = problem.bounds.at_distance(0.0);
    let r = problem.target.r_designed;
    let pts = v_low_points.max(1);
    let candidates = (0..pts).map(|i| {
        let v_low = b.v_min + (b.v_max - b.v_min) * i as f64 / pts as f64;
        bang_bang_policy(&problem, v_low, b.v_max, None, Some(r))
    });
    let u = best_template(&problem, candidates, search.feas_tol)?;
    let template = ProfileParam::from_input(&padded(&problem, u));
    solve_profile_parameterized(&problem, &template, search)
}

fn best_template(problem: &DesignProblem, candidates: impl Iterator<Item = Vec<f64>>, tol: f64) -> Result<Vec<f64>> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for u in candidates {
        if let Some((s, _)) = evaluate(problem, &padded(problem, u.clone()), tol)? {
            if best.as_ref().is_none_or(|(bs, _)| s < *bs) {
                best = Some((s, u));
            }
        }
    }
    best.map(|x| x.1)
        .ok_or_else(|| Error::NoFeasibleIncumbent("no policy template was feasible".into()))
}

/// Min-distance design for long horizons: cycles between `v_min` and a
/// lower ceiling `v1`, then a final ramp towards `v_max`. The ceiling is
/// scanned on `v1_points` values and the number of low cycles exhaustively;
/// the best template is then polished.
pub fn min_distance_profile(problem: &DesignProblem, v1_points: usize, search: &ParamSearch) -> Result<SolveReport> {
    let problem = problem.with_objective(Objective::MinDistance);
    let b = problem.bounds.at_distance(0.0);
    let r = problem.target.r_designed;
    // The plain up-and-down policy is always a candidate.
    let mut candidates = vec![bang_bang_policy(&problem, b.v_min, b.v_max, None, Some(r))];
    let pts = v1_points.max(1);
    for i in 1..=pts {
        let v1 = b.v_min + (b.v_max - b.v_min) * i as f64 / pts as f64;
        for m in 0..=problem.grid.n {
            let u = bang_bang_policy(&problem, b.v_min, v1, Some(m), Some(r));
            // Fewer completed cycles than requested: larger m changes nothing.
            let done = ProfileParam::from_input(&u).switch_times.len() < 2 * m;
            candidates.push(u);
            if done {
                break;
            }
        }
    }
    let u = best_template(&problem, candidates.into_iter(), search.feas_tol)?;
    let template = ProfileParam::from_input(&padded(&problem, u));
    solve_profile_parameterized(&problem, &template, search)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ActuatorModel, SamplingGrid};
    use crate::estimator::QualityTarget;
    use crate::problem::Bounds;

    fn target(r: f64) -> QualityTarget {
        QualityTarget {
            r_designed: r,
            gamma_acc: None,
            alpha: 0.99,
            chi2: 9.21,
            n_params: 1,
            m_nominal: 1000.0,
            sigma_e2: 1.0,
        }
    }

    fn problem(objective: Objective, n: usize, r: f64) -> DesignProblem {
        DesignProblem::new(
            objective,
            SamplingGrid::new(0.05, n).unwrap(),
            ActuatorModel::new(0.8).unwrap(),
            Bounds::new(-0.5, 1.0, 1.0, 3.0).unwrap(),
            target(r),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn expand_and_compress() {
        let p = ProfileParam::new(vec![2, 5], vec![1.0, -1.0, 0.5]).unwrap();
        let u = p.expand(6).unwrap();
        assert_eq!(u, vec![1.0, 1.0, -1.0, -1.0, -1.0, 0.5]);
        assert_eq!(ProfileParam::from_input(&u), p);
        assert!(p.expand(4).is_err());
        assert!(ProfileParam::new(vec![3, 3], vec![0.0; 3]).is_err());
        assert!(ProfileParam::new(vec![3], vec![0.0; 3]).is_err());
    }

    #[test]
    fn degenerate_search_is_direct_evaluation() {
        let pr = problem(Objective::MaxAccuracy, 60, 0.0);
        let tpl = ProfileParam::new(vec![20, 50], vec![1.0, -0.5, 1.0]).unwrap();
        let search = ParamSearch {
            starts: 1,
            max_sweeps: 0,
            ..ParamSearch::default()
        };
        let rep = solve_profile_parameterized(&pr, &tpl, &search).unwrap();
        let direct = pr.simulate(&tpl.expand(60).unwrap()).unwrap().excitation();
        assert_eq!(rep.objective_value, direct);
        assert_eq!(rep.status, SolveStatus::GapReached);
        assert!(rep.gap.is_none());
    }

    #[test]
    fn two_switch_template_rises_then_falls() {
        // Min-time with a target that needs one full ramp plus braking.
        let pr = problem(Objective::MinTime, 300, 45.0);
        let tpl = ProfileParam::new(vec![30, 200], vec![1.0, -0.5, 1.0]).unwrap();
        let rep = solve_profile_parameterized(&pr, &tpl, &ParamSearch::default()).unwrap();
        let n = rep.u_star.len();
        let prof = pr.with_n(n).unwrap().simulate(&rep.u_star).unwrap();
        let (k_peak, v_peak) = prof.v.iter().copied().enumerate().fold((0, f64::MIN), |m, x| if x.1 > m.1 { x } else { m });
        assert!(v_peak > 2.9 && v_peak <= 3.0 + 1e-7, "{v_peak}");
        assert!(k_peak > 10 && k_peak + 5 < n, "{k_peak} of {n}");
        assert!(prof.v[k_peak..].windows(2).all(|w| w[1] <= w[0]));
        assert!(prof.excitation() >= 45.0);
    }

    #[test]
    fn policy_is_feasible_and_reaches_target() {
        let pr = problem(Objective::MinTime, 2000, 40.0);
        let u = bang_bang_policy(&pr, 1.0, 3.0, None, Some(40.0));
        let short = pr.with_n(u.len()).unwrap();
        let rep = check_feasibility(&u, &short, 1e-9).unwrap();
        assert!(rep.feasible, "{rep:?}");
        assert!(rep.r_achieved >= 40.0);
    }

    #[test]
    fn min_distance_beats_min_time() {
        let pr = problem(Objective::MinDistance, 3000, 60.0);
        let t = min_time_profile(&pr, 4, &ParamSearch::default()).unwrap();
        let d = min_distance_profile(&pr, 8, &ParamSearch::default()).unwrap();
        let dist_t = pr.with_n(t.u_star.len()).unwrap().simulate(&t.u_star).unwrap().distance();
        assert!(d.objective_value < dist_t, "{} vs {dist_t}", d.objective_value);
        let check = check_feasibility(&d.u_star, &pr.with_n(d.u_star.len()).unwrap(), 1e-7).unwrap();
        assert!(check.feasible);
    }
}
