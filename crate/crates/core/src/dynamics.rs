//! Discrete-time longitudinal vehicle model.
//!
//! The drive train is a first-order lag with unity static gain from the
//! acceleration request `u(k)` to the realized acceleration `a(k)`:
//!
//! ```text
//! a(k) = p a(k-1) + (1 - p) u(k),     a(0) = 0
//! ```
//!
//! Acceleration is held constant over each sample interval, so velocity is
//! piecewise linear and distance piecewise quadratic:
//!
//! ```text
//! v(k) = v0 + Ts * sum_{l<=k} a(l)
//! d(k) = v0 k Ts + Ts^2 * sum_{l<=k} (k - l + 1/2) a(l)
//! ```
//!
//! Sample indices are 1-based in the formulas; slices are 0-based.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Sampling period and horizon length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub ts: f64,
    pub n: usize,
}

impl SamplingGrid {
    pub fn new(ts: f64, n: usize) -> Result<Self> {
        if !(ts.is_finite() && ts > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling period must be positive, got {ts}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("horizon must have at least one sample".into()));
        }
        Ok(Self { ts, n })
    }

    /// Same period, different horizon.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.ts, n)
    }

    /// Experiment duration `n * ts` in seconds.
    pub fn duration(&self) -> f64 {
        self.n as f64 * self.ts
    }

    /// Timestamp of 1-based sample `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.ts
    }
}

/// First-order actuator `F(q) = (1 - p) / (1 - p q^-1)`.
///
/// `p = 0` is the identity actuator used for ideal-acceleration profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorModel {
    pub p: f64,
}

impl ActuatorModel {
    pub fn new(p: f64) -> Result<Self> {
        if !(p.is_finite() && (0.0..1.0).contains(&p)) {
            return Err(Error::InvalidParameter(format!(
                "actuator pole must lie in [0, 1), got {p}"
            )));
        }
        Ok(Self { p })
    }

    pub fn identity() -> Self {
        Self { p: 0.0 }
    }

    /// Impulse-response coefficient `(1 - p) p^j`.
    pub fn impulse(&self, j: usize) -> f64 {
        (1.0 - self.p) * self.p.powi(j as i32)
    }

    /// Input that produces `a` exactly, i.e. `F^{-1} a`.
    pub fn invert(&self, a: &[f64]) -> Vec<f64> {
        let mut prev = 0.0;
        a.iter()
            .map(|&ak| {
                let u = (ak - self.p * prev) / (1.0 - self.p);
                prev = ak;
                u
            })
            .collect()
    }
}

/// A realized drive: input, acceleration, velocity and distance on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub grid: SamplingGrid,
    pub u: Vec<f64>,
    pub a: Vec<f64>,
    pub v: Vec<f64>,
    pub d: Vec<f64>,
    pub v0: f64,
}

impl Profile {
    /// Drive the actuator with `u` and integrate the resulting motion.
    pub fn simulate(u: &[f64], actuator: &ActuatorModel, grid: SamplingGrid, v0: f64) -> Result<Self> {
        let a = simulate_response(u, actuator, &grid)?;
        let (v, d) = integrate_kinematics(&a, &grid, v0)?;
        Ok(Self {
            grid,
            u: u.to_vec(),
            a,
            v,
            d,
            v0,
        })
    }

    /// Profile for an ideal actuator: the input equals the acceleration.
    pub fn from_acceleration(a: &[f64], grid: SamplingGrid, v0: f64) -> Result<Self> {
        Self::simulate(a, &ActuatorModel::identity(), grid, v0)
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Total distance `d(N)`.
    pub fn distance(&self) -> f64 {
        self.d.last().copied().unwrap_or(0.0)
    }

    /// Excitation energy `R(N)`.
    pub fn excitation(&self) -> f64 {
        self.a.iter().map(|a| a * a).sum()
    }

    /// First 1-based sample at which the running excitation reaches `target`.
    pub fn first_index_reaching(&self, target: f64) -> Option<usize> {
        let mut r = 0.0;
        for (k, a) in self.a.iter().enumerate() {
            r += a * a;
            if r >= target {
                return Some(k + 1);
            }
        }
        None
    }

    /// The first `n` samples of this profile.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::IndexOutOfRange {
                index: n,
                len: self.len(),
            });
        }
        Ok(Self {
            grid: self.grid.with_n(n)?,
            u: self.u[..n].to_vec(),
            a: self.a[..n].to_vec(),
            v: self.v[..n].to_vec(),
            d: self.d[..n].to_vec(),
            v0: self.v0,
        })
    }
}

/// Lower-triangular Toeplitz matrix of the actuator impulse response.
pub fn build_actuator_toeplitz(actuator: &ActuatorModel, grid: &SamplingGrid) -> DMatrix<f64> {
    let n = grid.n;
    let column: Vec<f64> = (0..n).map(|j| actuator.impulse(j)).collect();
    DMatrix::from_fn(n, n, |i, j| if i >= j { column[i - j] } else { 0.0 })
}

/// Acceleration produced by the input sequence `u`, starting from rest.
pub fn simulate_response(u: &[f64], actuator: &ActuatorModel, grid: &SamplingGrid) -> Result<Vec<f64>> {
    check_len("input sequence", grid.n, u.len())?;
    let p = actuator.p;
    let mut a = 0.0;
    Ok(u
        .iter()
        .map(|&uk| {
            a = p * a + (1.0 - p) * uk;
            a
        })
        .collect())
}

/// Velocity and cumulative distance for piecewise-constant acceleration.
pub fn integrate_kinematics(a: &[f64], grid: &SamplingGrid, v0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("acceleration sequence", grid.n, a.len())?;
    if !v0.is_finite() {
        return Err(Error::InvalidParameter(format!("initial velocity must be finite, got {v0}")));
    }
    let ts = grid.ts;
    let mut v = Vec::with_capacity(a.len());
    let mut d = Vec::with_capacity(a.len());
    let (mut vk, mut dk) = (v0, 0.0);
    for &ak in a {
        dk += vk * ts + 0.5 * ak * ts * ts;
        vk += ak * ts;
        v.push(vk);
        d.push(dk);
    }
    Ok((v, d))
}

/// `G` (ones on and below the diagonal) and `H` (entries `k - l + 1/2`), so
/// that `v = Ts G a` and `d = Ts^2 H a` from rest.
pub fn build_kinematic_matrices(grid: &SamplingGrid) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = grid.n;
    let g = DMatrix::from_fn(n, n, |k, l| if l <= k { 1.0 } else { 0.0 });
    let h = DMatrix::from_fn(n, n, |k, l| if l <= k { (k - l) as f64 + 0.5 } else { 0.0 });
    (g, h)
}
