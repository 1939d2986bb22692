//! Input design problem instances and their constraint systems.
//!
//! A design problem asks for an input `u` on a fixed grid such that the
//! realized acceleration `a = F u` excites the mass enough,
//! `a'a >= R_designed`, while acceleration, velocity, input and distance stay
//! within bounds. Three objectives are supported: shortest horizon, shortest
//! distance, and largest excitation for a given horizon.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{build_actuator_toeplitz, build_kinematic_matrices, ActuatorModel, Profile, SamplingGrid};
use crate::error::{check_len, Error, Result};
use crate::estimator::QualityTarget;

/// Overrides that apply once the vehicle has travelled `from_distance` metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSegment {
    pub from_distance: f64,
    pub a_min: Option<f64>,
    pub a_max: Option<f64>,
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
}

/// Amplitude limits on acceleration, velocity and input, plus an optional
/// distance budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub a_min: f64,
    pub a_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub d_max: Option<f64>,
    /// Piecewise-constant overrides sorted by `from_distance`.
    pub varying: Vec<BoundSegment>,
}

impl Bounds {
    /// Constant bounds with input limits equal to the acceleration limits.
    pub fn new(a_min: f64, a_max: f64, v_min: f64, v_max: f64) -> Result<Self> {
        let b = Self {
            a_min,
            a_max,
            v_min,
            v_max,
            u_min: a_min,
            u_max: a_max,
            d_max: None,
            varying: Vec::new(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_d_max(mut self, d_max: f64) -> Self {
        self.d_max = Some(d_max);
        self
    }

    pub fn with_input_limits(mut self, u_min: f64, u_max: f64) -> Self {
        self.u_min = u_min;
        self.u_max = u_max;
        self
    }

    pub fn with_segments(mut self, mut segments: Vec<BoundSegment>) -> Self {
        segments.sort_by(|x, y| x.from_distance.total_cmp(&y.from_distance));
        self.varying = segments;
        self
    }

    pub fn is_constant(&self) -> bool {
        self.varying.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a_min, self.a_max, self.v_min, self.v_max, self.u_min, self.u_max];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("bounds must be finite".into()));
        }
        if !(self.a_min < 0.0 && self.a_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "acceleration limits must satisfy a_min < 0 < a_max, got [{}, {}]",
                self.a_min, self.a_max
            )));
        }
        if self.v_min > self.v_max {
            return Err(Error::InvalidParameter(format!(
                "velocity limits must satisfy v_min <= v_max, got [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        if self.u_min > self.u_max {
            return Err(Error::InvalidParameter("input limits must satisfy u_min <= u_max".into()));
        }
        if let Some(d) = self.d_max {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidParameter(format!("d_max must be positive, got {d}")));
            }
        }
        for s in &self.varying {
            self.at_distance_unchecked(s.from_distance).validate_constant()?;
        }
        Ok(())
    }

    fn validate_constant(&self) -> Result<()> {
        if !(self.a_min < 0.0 && self.a_max > 0.0 && self.v_min <= self.v_max) {
            return Err(Error::InvalidParameter(
                "a distance-varying override violates a_min < 0 < a_max or v_min <= v_max".into(),
            ));
        }
        Ok(())
    }

    fn at_distance_unchecked(&self, d: f64) -> Bounds {
        let mut b = Bounds {
            varying: Vec::new(),
            ..self.clone()
        };
        for s in self.varying.iter().take_while(|s| s.from_distance <= d) {
            b.a_min = s.a_min.unwrap_or(b.a_min);
            b.a_max = s.a_max.unwrap_or(b.a_max);
            b.v_min = s.v_min.unwrap_or(b.v_min);
            b.v_max = s.v_max.unwrap_or(b.v_max);
        }
        b
    }

    /// The constant bounds in force at distance `d`.
    ///
    /// Overrides accumulate: a later segment only replaces the fields it sets.
    pub fn at_distance(&self, d: f64) -> Bounds {
        self.at_distance_unchecked(d)
    }

    /// Per-sample limits, where sample `k` uses the bounds in force at the
    /// distance reached before it starts, `d_before[k]`.
    pub fn per_sample(&self, d_before: &[f64]) -> SampleBounds {
        let n = d_before.len();
        let mut sb = SampleBounds {
            a_min: Vec::with_capacity(n),
            a_max: Vec::with_capacity(n),
            v_min: Vec::with_capacity(n),
            v_max: Vec::with_capacity(n),
            u_min: self.u_min,
            u_max: self.u_max,
            d_max: self.d_max,
        };
        for &d in d_before {
            let b = self.at_distance_unchecked(d);
            sb.a_min.push(b.a_min);
            sb.a_max.push(b.a_max);
            sb.v_min.push(b.v_min);
            sb.v_max.push(b.v_max);
        }
        sb
    }

    /// Per-sample limits for constant bounds.
    pub fn uniform(&self, n: usize) -> SampleBounds {
        self.per_sample(&vec![0.0; n])
    }
}

/// Bounds resolved onto the sample grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBounds {
    pub a_min: Vec<f64>,
    pub a_max: Vec<f64>,
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
    pub d_max: Option<f64>,
}

impl SampleBounds {
    pub fn len(&self) -> usize {
        self.a_min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_min.is_empty()
    }
}

/// What the design minimizes or maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MinTime,
    MinDistance,
    MaxAccuracy,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::MinTime => "min_time",
            Objective::MinDistance => "min_distance",
            Objective::MaxAccuracy => "max_accuracy",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "min_time" => Ok(Objective::MinTime),
            "min_distance" => Ok(Objective::MinDistance),
            "max_accuracy" => Ok(Objective::MaxAccuracy),
            other => Err(Error::InvalidParameter(format!(
                "unknown objective '{other}', expected min_time, min_distance or max_accuracy"
            ))),
        }
    }
}

/// A complete design instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignProblem {
    pub objective: Objective,
    pub grid: SamplingGrid,
    pub actuator: ActuatorModel,
    pub bounds: Bounds,
    pub target: QualityTarget,
    pub v0: f64,
}

impl DesignProblem {
    pub fn new(
        objective: Objective,
        grid: SamplingGrid,
        actuator: ActuatorModel,
        bounds: Bounds,
        target: QualityTarget,
        v0: f64,
    ) -> Result<Self> {
        let p = Self {
            objective,
            grid,
            actuator,
            bounds,
            target,
            v0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Rejects instances that are infeasible by construction.
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !self.v0.is_finite() {
            return Err(Error::InvalidParameter("initial velocity must be finite".into()));
        }
        let b0 = self.bounds.at_distance(0.0);
        if self.v0 < b0.v_min || self.v0 > b0.v_max {
            return Err(Error::Infeasible(format!(
                "initial velocity {} lies outside [{}, {}]",
                self.v0, b0.v_min, b0.v_max
            )));
        }
        if self.objective != Objective::MaxAccuracy && !(self.target.r_designed >= 0.0) {
            return Err(Error::InvalidParameter("r_designed must be non-negative".into()));
        }
        Ok(())
    }

    /// Same problem on a different horizon.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Ok(Self {
            grid: self.grid.with_n(n)?,
            ..self.clone()
        })
    }

    pub fn with_objective(&self, objective: Objective) -> Self {
        Self {
            objective,
            ..self.clone()
        }
    }

    pub fn simulate(&self, u: &[f64]) -> Result<Profile> {
        Profile::simulate(u, &self.actuator, self.grid, self.v0)
    }
}

/// Which constraint family a row or violation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Quality,
    AccelMax,
    AccelMin,
    VelMax,
    VelMin,
    InputMax,
    InputMin,
    Distance,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 8] = [
        ConstraintKind::Quality,
        ConstraintKind::AccelMax,
        ConstraintKind::AccelMin,
        ConstraintKind::VelMax,
        ConstraintKind::VelMin,
        ConstraintKind::InputMax,
        ConstraintKind::InputMin,
        ConstraintKind::Distance,
    ];
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

/// `coeffs . u <= rhs`, tied to a 1-based sample (the last sample for the distance row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub kind: ConstraintKind,
    pub sample: usize,
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl LinearRow {
    /// Signed violation `coeffs . u - rhs`; positive means violated.
    pub fn violation(&self, u: &[f64]) -> f64 {
        self.coeffs.iter().zip(u).map(|(c, x)| c * x).sum::<f64>() - self.rhs
    }
}

/// The reverse-convex quality row `u' Q u >= r_designed` and the linear rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    pub quad: DMatrix<f64>,
    pub r_designed: f64,
    pub rows: Vec<LinearRow>,
}

impl ConstraintSystem {
    pub fn excitation(&self, u: &[f64]) -> f64 {
        let uv = DVector::from_column_slice(u);
        uv.dot(&(&self.quad * &uv))
    }

    /// First row (in assembly order) violated by more than `tol`.
    pub fn first_violation(&self, u: &[f64], tol: f64) -> Option<&LinearRow> {
        self.rows.iter().find(|r| r.violation(u) > tol)
    }

    pub fn is_feasible(&self, u: &[f64], tol: f64) -> bool {
        self.excitation(u) >= self.r_designed - tol && self.first_violation(u, tol).is_none()
    }
}

/// Matrix form of all constraints. Rows are ordered acceleration (upper then
/// lower), velocity, input, distance; within a family by sample index.
///
/// Distance-varying bounds are resolved at `d_before`, the distance reached
/// before each sample starts (zeros when `None`).
pub fn assemble_constraints(problem: &DesignProblem, d_before: Option<&[f64]>) -> Result<ConstraintSystem> {
    problem.validate()?;
    let n = problem.grid.n;
    let sb = match d_before {
        Some(d) => {
            check_len("reference distance", n, d.len())?;
            problem.bounds.per_sample(d)
        }
        None => problem.bounds.uniform(n),
    };
    let ts = problem.grid.ts;
    let f = build_actuator_toeplitz(&problem.actuator, &problem.grid);
    let (g, h) = build_kinematic_matrices(&problem.grid);
    let vel = &g * &f * ts;
    let row = |m: &DMatrix<f64>, k: usize, sign: f64| -> Vec<f64> { m.row(k).iter().map(|x| sign * x).collect() };

    let mut rows = Vec::with_capacity(6 * n + 1);
    for k in 0..n {
        rows.push(LinearRow {
            kind: ConstraintKind::AccelMax,
            sample: k + 1,
            coeffs: row(&f, k, 1.0),
            rhs: sb.a_max[k],
        });
        rows.push(LinearRow {
            kind: ConstraintKind::AccelMin,
            sample: k + 1,
            coeffs: row(&f, k, -1.0),
            rhs: -sb.a_min[k],
        });
    }
    for k in 0..n {
        rows.push(LinearRow {
            kind: ConstraintKind::VelMax,
            sample: k + 1,
            coeffs: row(&vel, k, 1.0),
            rhs: sb.v_max[k] - problem.v0,
        });
        rows.push(LinearRow {
            kind: ConstraintKind::VelMin,
            sample: k + 1,
            coeffs: row(&vel, k, -1.0),
            rhs: problem.v0 - sb.v_min[k],
        });
    }
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        rows.push(LinearRow {
            kind: ConstraintKind::InputMax,
            sample: k + 1,
            coeffs: e.clone(),
            rhs: sb.u_max,
        });
        e[k] = -1.0;
        rows.push(LinearRow {
            kind: ConstraintKind::InputMin,
            sample: k + 1,
            coeffs: e,
            rhs: -sb.u_min,
        });
    }
    if let Some(d_max) = sb.d_max {
        let dist = h.row(n - 1) * &f * (ts * ts);
        rows.push(LinearRow {
            kind: ConstraintKind::Distance,
            sample: n,
            coeffs: dist.iter().copied().collect(),
            rhs: d_max - problem.v0 * n as f64 * ts,
        });
    }
    Ok(ConstraintSystem {
        quad: f.transpose() * &f,
        r_designed: problem.target.r_designed,
        rows,
    })
}

/// Worst violation of one constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ConstraintKind,
    /// Largest amount by which the family is exceeded; zero when satisfied.
    pub worst: f64,
    /// First 1-based sample violated by more than the tolerance.
    pub first_index: Option<usize>,
}

/// Outcome of [`check_feasibility`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
    pub r_achieved: f64,
    pub distance: f64,
}

impl FeasibilityReport {
    pub fn get(&self, kind: ConstraintKind) -> &Violation {
        self.violations.iter().find(|v| v.kind == kind).expect("all kinds are reported")
    }

    pub fn max_violation(&self) -> f64 {
        self.violations.iter().map(|v| v.worst).fold(0.0, f64::max)
    }
}

/// Check `u` against every constraint by simulating the vehicle.
///
/// Distance-varying bounds are evaluated on the simulated trajectory itself.
/// The quality row is skipped for the max-accuracy objective, where the
/// excitation is the quantity being optimized.
pub fn check_feasibility(u: &[f64], problem: &DesignProblem, tol: f64) -> Result<FeasibilityReport> {
    check_len("input sequence", problem.grid.n, u.len())?;
    let prof = problem.simulate(u)?;
    let n = u.len();
    let mut d_before = Vec::with_capacity(n);
    d_before.push(0.0);
    d_before.extend_from_slice(&prof.d[..n - 1]);
    let sb = problem.bounds.per_sample(&d_before);

    let mut worst = [0.0f64; 8];
    let mut first: [Option<usize>; 8] = [None; 8];
    let mut record = |kind: ConstraintKind, k: usize, amount: f64| {
        let i = kind as usize;
        if amount > worst[i] {
            worst[i] = amount;
        }
        if amount > tol && first[i].is_none() {
            first[i] = Some(k);
        }
    };
    for k in 0..n {
        record(ConstraintKind::AccelMax, k + 1, prof.a[k] - sb.a_max[k]);
        record(ConstraintKind::AccelMin, k + 1, sb.a_min[k] - prof.a[k]);
        record(ConstraintKind::VelMax, k + 1, prof.v[k] - sb.v_max[k]);
        record(ConstraintKind::VelMin, k + 1, sb.v_min[k] - prof.v[k]);
        record(ConstraintKind::InputMax, k + 1, u[k] - sb.u_max);
        record(ConstraintKind::InputMin, k + 1, sb.u_min - u[k]);
    }
    if let Some(d_max) = sb.d_max {
        record(ConstraintKind::Distance, n, prof.distance() - d_max);
    }
    let r_achieved = prof.excitation();
    if problem.objective != Objective::MaxAccuracy {
        record(ConstraintKind::Quality, n, problem.target.r_designed - r_achieved);
    }
    let violations: Vec<Violation> = ConstraintKind::ALL
        .iter()
        .map(|&kind| Violation {
            kind,
            worst: worst[kind as usize],
            first_index: first[kind as usize],
        })
        .collect();
    Ok(FeasibilityReport {
        feasible: violations.iter().all(|v| v.first_index.is_none()),
        violations,
        r_achieved,
        distance: prof.distance(),
    })
}

/// Outcome of resolving distance-varying bounds by fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint<T> {
    pub result: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Solve with distance-dependent bounds by iterating: resolve the bounds on
/// the previous trajectory's distances, re-solve, and stop once the
/// per-sample bounds no longer change (at most `max_iters` solves).
///
/// `solve` receives the resolved per-sample bounds and returns its result
/// together with the input it found.
pub fn resolve_varying_bounds<T>(
    problem: &DesignProblem,
    max_iters: usize,
    mut solve: impl FnMut(&SampleBounds) -> Result<(T, Vec<f64>)>,
) -> Result<FixedPoint<T>> {
    let n = problem.grid.n;
    let mut sb = problem.bounds.uniform(n);
    if problem.bounds.is_constant() {
        let (result, _) = solve(&sb)?;
        return Ok(FixedPoint {
            result,
            iterations: 1,
            converged: true,
        });
    }
    let mut last = None;
    for it in 1..=max_iters.max(1) {
        let (result, u) = solve(&sb)?;
        let prof = problem.simulate(&u)?;
        let mut d_before = vec![0.0];
        d_before.extend_from_slice(&prof.d[..n - 1]);
        let next = problem.bounds.per_sample(&d_before);
        if next == sb {
            return Ok(FixedPoint {
                result,
                iterations: it,
                converged: true,
            });
        }
        sb = next;
        last = Some((result, it));
    }
    let (result, iterations) = last.expect("at least one iteration");
    Ok(FixedPoint {
        result,
        iterations,
        converged: false,
    })
}
