//! The feasible set in acceleration coordinates and LP access to it.
//!
//! Since `F` is invertible, `a = F u` is an equally good decision variable.
//! In these coordinates the excitation `a'a` is separable, acceleration
//! limits are plain variable bounds, and the input limits become the
//! bidiagonal rows `a_k - p a_(k-1) in (1 - p) [u_min, u_max]`.

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::dynamics::ActuatorModel;
use crate::error::{Error, Result};
use crate::problem::{DesignProblem, SampleBounds};

/// A sparse range row `lo <= coeffs . a <= hi`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RangeRow {
    pub coeffs: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
}

/// Polytope `{a : lo <= a <= hi, rows}` for one design instance.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Polytope {
    pub n: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rows: Vec<RangeRow>,
    /// Constant part of the distance, `v0 N Ts`.
    pub distance_offset: f64,
    /// Coefficients of the distance in `a`.
    pub distance: Vec<f64>,
}

impl Polytope {
    pub fn new(problem: &DesignProblem, sb: &SampleBounds) -> Self {
        let n = problem.grid.n;
        let ts = problem.grid.ts;
        let p = problem.actuator.p;
        let v0 = problem.v0;
        let mut rows = Vec::with_capacity(2 * n + 1);
        for k in 0..n {
            let mut coeffs = vec![(k, 1.0)];
            if k > 0 && p != 0.0 {
                coeffs.push((k - 1, -p));
            }
            rows.push(RangeRow {
                coeffs,
                lo: (1.0 - p) * sb.u_min,
                hi: (1.0 - p) * sb.u_max,
            });
        }
        for k in 0..n {
            rows.push(RangeRow {
                coeffs: (0..=k).map(|l| (l, ts)).collect(),
                lo: sb.v_min[k] - v0,
                hi: sb.v_max[k] - v0,
            });
        }
        let distance: Vec<f64> = (0..n).map(|l| ts * ts * ((n - 1 - l) as f64 + 0.5)).collect();
        let distance_offset = v0 * n as f64 * ts;
        if let Some(d_max) = sb.d_max {
            rows.push(RangeRow {
                coeffs: distance.iter().copied().enumerate().collect(),
                lo: f64::NEG_INFINITY,
                hi: d_max - distance_offset,
            });
        }
        Self {
            n,
            lo: sb.a_min.clone(),
            hi: sb.a_max.clone(),
            rows,
            distance_offset,
            distance,
        }
    }

    /// Optimize `cost . a` over the polytope restricted to `[lo, hi]` and
    /// the extra rows. `None` when infeasible.
    pub fn solve(
        &self,
        cost: &[f64],
        maximize: bool,
        lo: &[f64],
        hi: &[f64],
        extra: &[RangeRow],
    ) -> Result<Option<(f64, Vec<f64>)>> {
        if lo.iter().zip(hi).any(|(l, h)| l > h) {
            return Ok(None);
        }
        let dir = if maximize {
            OptimizationDirection::Maximize
        } else {
            OptimizationDirection::Minimize
        };
        let mut lp = Problem::new(dir);
        let vars: Vec<_> = (0..self.n).map(|k| lp.add_var(cost[k], (lo[k], hi[k]))).collect();
        for row in self.rows.iter().chain(extra) {
            let expr: Vec<_> = row.coeffs.iter().map(|&(i, c)| (vars[i], c)).collect();
            if row.lo == row.hi {
                lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, row.lo);
                continue;
            }
            if row.lo.is_finite() {
                lp.add_constraint(expr.as_slice(), ComparisonOp::Ge, row.lo);
            }
            if row.hi.is_finite() {
                lp.add_constraint(expr.as_slice(), ComparisonOp::Le, row.hi);
            }
        }
        match lp.solve() {
            Ok(outcome) => match outcome.solution() {
                Some(sol) => {
                    let a: Vec<f64> = vars.iter().map(|&v| sol.var_value(v)).collect();
                    Ok(Some((sol.objective(), a)))
                }
                None => Err(Error::Lp("solve interrupted without a solution".into())),
            },
            Err(microlp::Error::Infeasible) => Ok(None),
            Err(e) => Err(Error::Lp(e.to_string())),
        }
    }

    /// Tightest box around the polytope (two LPs per coordinate), or `None`
    /// when the polytope is empty.
    pub fn bounding_box(&self, extra: &[RangeRow]) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        let mut cost = vec![0.0; self.n];
        for k in 0..self.n {
            cost[k] = 1.0;
            let Some((min_k, _)) = self.solve(&cost, false, &lo, &hi, extra)? else {
                return Ok(None);
            };
            let Some((max_k, _)) = self.solve(&cost, true, &lo, &hi, extra)? else {
                return Ok(None);
            };
            cost[k] = 0.0;
            // Keep the box no tighter than the LP can certify.
            lo[k] = lo[k].max(min_k - 1e-9 * (1.0 + min_k.abs()));
            hi[k] = hi[k].min(max_k + 1e-9 * (1.0 + max_k.abs()));
            if lo[k] > hi[k] {
                let mid = 0.5 * (lo[k] + hi[k]);
                lo[k] = mid;
                hi[k] = mid;
            }
        }
        Ok(Some((lo, hi)))
    }

    /// Largest violation of the polytope by `a` (zero inside).
    #[cfg(test)]
    pub fn violation(&self, a: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.n {
            worst = worst.max(self.lo[k] - a[k]).max(a[k] - self.hi[k]);
        }
        for row in &self.rows {
            let v: f64 = row.coeffs.iter().map(|&(i, c)| c * a[i]).sum();
            worst = worst.max(row.lo - v).max(v - row.hi);
        }
        worst
    }
}

/// Map a cost on `u` to the equivalent cost on `a = F u`: `c_a = F^-T c_u`.
pub(crate) fn cost_in_acceleration(actuator: &ActuatorModel, cost_u: &[f64]) -> Vec<f64> {
    // u = F^-1 a with u_k = (a_k - p a_(k-1)) / (1 - p), so
    // c_u . u = sum_k a_k (c_u[k] - p c_u[k+1]) / (1 - p).
    let p = actuator.p;
    let n = cost_u.len();
    (0..n)
        .map(|k| {
            let next = if k + 1 < n { cost_u[k + 1] } else { 0.0 };
            (cost_u[k] - p * next) / (1.0 - p)
        })
        .collect()
}
