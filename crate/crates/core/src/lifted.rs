//! Lifted formulation over `(U, u)` with `U = u u'`.
//!
//! Every quadratic expression in `u` becomes linear in the entries of `U`,
//! so the design problem turns into a linear program over `(U, u)` plus the
//! condition that `[[U, u], [u', 1]]` is positive semidefinite and of rank
//! one. Dropping the rank condition gives a convex semidefinite relaxation.
//!
//! Variables are ordered as the upper triangle of `U` row by row
//! (`U_00, U_01, ..., U_0(n-1), U_11, ...`) followed by `u_0, ..., u_(n-1)`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::{build_actuator_toeplitz, build_kinematic_matrices};
use crate::error::{check_len, Error, Result};
use crate::problem::{ConstraintKind, DesignProblem, Objective};

/// Direction of a lifted row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Le,
    Ge,
}

/// Sparse linear row over the lifted variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedRow {
    pub kind: ConstraintKind,
    pub sample: usize,
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl LiftedRow {
    /// Amount by which `x` violates the row; non-positive when satisfied.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs: f64 = self.coeffs.iter().map(|&(i, c)| c * x[i]).sum();
        match self.relation {
            Relation::Le => lhs - self.rhs,
            Relation::Ge => self.rhs - lhs,
        }
    }
}

/// The lifted system: linear cost, linear rows and the implicit
/// semidefinite block `[[U, u], [u', 1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedProblem {
    pub n: usize,
    pub objective: Objective,
    /// Cost to minimize; `cost_constant` is added to its value.
    pub cost: Vec<f64>,
    pub cost_constant: f64,
    pub rows: Vec<LiftedRow>,
}

impl LiftedProblem {
    /// Number of lifted variables, `n(n+1)/2 + n`.
    pub fn dim(&self) -> usize {
        lifted_dim(self.n)
    }

    /// Position of `U_ij` in the variable vector.
    pub fn u_index(&self, i: usize, j: usize) -> usize {
        sym_index(self.n, i, j)
    }

    /// Position of `u_i` in the variable vector.
    pub fn vec_index(&self, i: usize) -> usize {
        self.n * (self.n + 1) / 2 + i
    }

    /// `(u u', u)` flattened into the variable order.
    pub fn lift_point(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("input", self.n, u.len())?;
        let mut x = vec![0.0; self.dim()];
        for i in 0..self.n {
            for j in i..self.n {
                x[self.u_index(i, j)] = u[i] * u[j];
            }
            x[self.vec_index(i)] = u[i];
        }
        Ok(x)
    }

    /// Unpack the variable vector into `(U, u)`.
    pub fn unpack(&self, x: &[f64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
        check_len("lifted vector", self.dim(), x.len())?;
        let u_mat = DMatrix::from_fn(self.n, self.n, |i, j| x[self.u_index(i, j)]);
        let u = (0..self.n).map(|i| x[self.vec_index(i)]).collect();
        Ok((u_mat, u))
    }

    /// Rows violated by more than `tol` at `x`.
    pub fn violated_rows(&self, x: &[f64], tol: f64) -> Vec<&LiftedRow> {
        self.rows.iter().filter(|r| r.violation(x) > tol).collect()
    }

    pub fn cost_value(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.cost_constant
    }

    /// Write the relaxation (rank condition dropped) in SDPA sparse format.
    ///
    /// The primal has one free variable per lifted variable and two blocks:
    /// the `(n+1) x (n+1)` matrix `[[U, u], [u', 1]]` and a diagonal block
    /// holding one slack per linear row, each written as `g . x - h >= 0`.
    /// Matrix 0 is the constant term `F0` with the convention
    /// `sum_i x_i F_i - F0 >= 0`; entries are listed once from the upper
    /// triangle as `matrix block row col value` with 1-based indices.
    pub fn to_sdpa(&self) -> String {
        let n = self.n;
        let m = self.dim();
        let mut s = String::new();
        let _ = writeln!(s, "\"lifted input design relaxation, objective {}", self.objective);
        let _ = writeln!(s, "\"variables: U upper triangle row-major, then u; n = {n}");
        let _ = writeln!(s, "\"cost constant {:e} omitted from the objective below", self.cost_constant);
        let _ = writeln!(s, "{m}");
        let _ = writeln!(s, "2");
        let _ = writeln!(s, "{} -{}", n + 1, self.rows.len().max(1));
        let costs: Vec<String> = self.cost.iter().map(|c| format!("{c:e}")).collect();
        let _ = writeln!(s, "{}", costs.join(" "));
        let _ = writeln!(s, "0 1 {} {} -1", n + 1, n + 1);
        for (r, row) in self.rows.iter().enumerate() {
            let h = match row.relation {
                Relation::Ge => row.rhs,
                Relation::Le => -row.rhs,
            };
            if h != 0.0 {
                let _ = writeln!(s, "0 2 {} {} {h:e}", r + 1, r + 1);
            }
        }
        // Per-variable entries, grouped by matrix number as the format expects.
        let mut per_var: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); m];
        for (r, row) in self.rows.iter().enumerate() {
            let sign = match row.relation {
                Relation::Ge => 1.0,
                Relation::Le => -1.0,
            };
            for &(i, c) in &row.coeffs {
                per_var[i].push((r + 1, r + 1, sign * c));
            }
        }
        for i in 0..n {
            for j in i..n {
                let v = self.u_index(i, j);
                let _ = writeln!(s, "{} 1 {} {} 1", v + 1, i + 1, j + 1);
                for &(a, b, c) in &per_var[v] {
                    let _ = writeln!(s, "{} 2 {a} {b} {c:e}", v + 1);
                }
            }
        }
        for i in 0..n {
            let v = self.vec_index(i);
            let _ = writeln!(s, "{} 1 {} {} 1", v + 1, i + 1, n + 1);
            for &(a, b, c) in &per_var[v] {
                let _ = writeln!(s, "{} 2 {a} {b} {c:e}", v + 1);
            }
        }
        s
    }
}

pub fn lifted_dim(n: usize) -> usize {
    n * (n + 1) / 2 + n
}

fn sym_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

/// Coefficients of `w' U w` over the upper-triangle variables.
fn quadratic_form(n: usize, w: &[f64]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        for j in i..n {
            let c = if i == j { w[i] * w[i] } else { 2.0 * w[i] * w[j] };
            if c != 0.0 {
                out.push((sym_index(n, i, j), c));
            }
        }
    }
    out
}

/// Lift every constraint of the design problem into `(U, u)`.
///
/// Two-sided amplitude limits `lo <= z <= hi` on a linear expression `z`
/// become the single row `z^2 - (lo + hi) z + lo hi <= 0`; with the initial
/// velocity the velocity expression is `v0 + Ts s` and the row expands
/// accordingly. Input and distance limits stay linear.
pub fn lift_problem(problem: &DesignProblem) -> Result<LiftedProblem> {
    problem.validate()?;
    if !problem.bounds.is_constant() {
        return Err(Error::Unsupported(
            "the lifted formulation requires constant bounds; resolve distance-varying bounds first".into(),
        ));
    }
    let n = problem.grid.n;
    let ts = problem.grid.ts;
    let b = &problem.bounds;
    let v0 = problem.v0;
    let f = build_actuator_toeplitz(&problem.actuator, &problem.grid);
    let (g, h) = build_kinematic_matrices(&problem.grid);
    let base = n * (n + 1) / 2;
    let linear = |w: &[f64], scale: f64| -> Vec<(usize, f64)> {
        w.iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| (base + i, scale * c))
            .collect()
    };
    let mut rows = Vec::new();

    let q = f.transpose() * &f;
    let mut quality = Vec::new();
    for i in 0..n {
        for j in i..n {
            let c = if i == j { q[(i, i)] } else { 2.0 * q[(i, j)] };
            quality.push((sym_index(n, i, j), c));
        }
    }
    rows.push(LiftedRow {
        kind: ConstraintKind::Quality,
        sample: n,
        coeffs: quality.clone(),
        relation: Relation::Ge,
        rhs: problem.target.r_designed,
    });

    for k in 0..n {
        let w: Vec<f64> = f.row(k).iter().copied().collect();
        let mut coeffs = quadratic_form(n, &w);
        coeffs.extend(linear(&w, -(b.a_min + b.a_max)));
        rows.push(LiftedRow {
            kind: ConstraintKind::AccelMax,
            sample: k + 1,
            coeffs,
            relation: Relation::Le,
            rhs: -b.a_min * b.a_max,
        });
    }
    let gf = &g * &f;
    for k in 0..n {
        // v = v0 + Ts s, s = (G F u)_k
        let w: Vec<f64> = gf.row(k).iter().copied().collect();
        let mut coeffs: Vec<(usize, f64)> = quadratic_form(n, &w).into_iter().map(|(i, c)| (i, ts * ts * c)).collect();
        coeffs.extend(linear(&w, ts * (2.0 * v0 - b.v_min - b.v_max)));
        rows.push(LiftedRow {
            kind: ConstraintKind::VelMax,
            sample: k + 1,
            coeffs,
            relation: Relation::Le,
            rhs: -(v0 - b.v_min) * (v0 - b.v_max),
        });
    }
    for k in 0..n {
        rows.push(LiftedRow {
            kind: ConstraintKind::InputMax,
            sample: k + 1,
            coeffs: vec![(base + k, 1.0)],
            relation: Relation::Le,
            rhs: b.u_max,
        });
        rows.push(LiftedRow {
            kind: ConstraintKind::InputMin,
            sample: k + 1,
            coeffs: vec![(base + k, 1.0)],
            relation: Relation::Ge,
            rhs: b.u_min,
        });
    }
    let dist: Vec<f64> = (h.row(n - 1) * &f * (ts * ts)).iter().copied().collect();
    let dist_const = v0 * n as f64 * ts;
    if let Some(d_max) = b.d_max {
        rows.push(LiftedRow {
            kind: ConstraintKind::Distance,
            sample: n,
            coeffs: linear(&dist, 1.0),
            relation: Relation::Le,
            rhs: d_max - dist_const,
        });
    }

    let dim = lifted_dim(n);
    let mut cost = vec![0.0; dim];
    let mut cost_constant = 0.0;
    match problem.objective {
        Objective::MinDistance => {
            for (i, c) in dist.iter().enumerate() {
                cost[base + i] = *c;
            }
            cost_constant = dist_const;
        }
        Objective::MaxAccuracy => {
            for (i, c) in quality {
                cost[i] = -c;
            }
            // The excitation is being maximized, so the quality row is dropped.
            rows.remove(0);
        }
        // A feasibility problem for each candidate horizon.
        Objective::MinTime => {}
    }
    Ok(LiftedProblem {
        n,
        objective: problem.objective,
        cost,
        cost_constant,
        rows,
    })
}

/// Spectral check of `[[U, u], [u', 1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneReport {
    /// Every eigenvalue but the largest is at most `tol` times the largest in magnitude.
    pub is_rank_one: bool,
    /// `u` read off the leading eigenvector, normalized so the last entry is 1.
    pub recovered_u: Vec<f64>,
    /// The recovered vector matches the given `u` within `tol (1 + |u|)`.
    pub matches_u: bool,
    /// Sum of singular values.
    pub nuclear_norm: f64,
    /// Eigenvalues in decreasing order.
    pub eigenvalues: Vec<f64>,
}

/// Test whether `(U, u)` comes from a single vector, and recover it.
pub fn verify_rank_one(u_mat: &DMatrix<f64>, u: &[f64], tol: f64) -> Result<RankOneReport> {
    let n = u.len();
    if u_mat.shape() != (n, n) {
        return Err(Error::LengthMismatch {
            what: "lifted matrix dimension",
            expected: n,
            got: u_mat.nrows(),
        });
    }
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(u_mat);
    for i in 0..n {
        m[(i, n)] = u[i];
        m[(n, i)] = u[i];
    }
    m[(n, n)] = 1.0;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..=n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let top = eigenvalues[0];
    let rest = eigenvalues[1..].iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let is_rank_one = top > 0.0 && rest <= tol * top;
    let v: DVector<f64> = eig.eigenvectors.column(order[0]).into_owned();
    let recovered_u: Vec<f64> = if v[n].abs() > 0.0 {
        (0..n).map(|i| v[i] / v[n]).collect()
    } else {
        vec![f64::NAN; n]
    };
    let unorm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let matches_u = recovered_u
        .iter()
        .zip(u)
        .all(|(r, x)| (r - x).abs() <= tol * (1.0 + unorm));
    Ok(RankOneReport {
        is_rank_one,
        recovered_u,
        matches_u,
        nuclear_norm: eigenvalues.iter().map(|x| x.abs()).sum(),
        eigenvalues,
    })
}
