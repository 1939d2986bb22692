//! Least-squares mass estimation and the accuracy formulas used for design.
//!
//! With force `f(k) = m a(k) + e(k)`, the LS estimate is
//! `m_hat = sum f a / R(N)` where `R(t) = sum_{k<=t} a(k)^2` is the
//! excitation energy, and `var(m_hat) = sigma_e^2 / R(N)`. Requiring
//! `m_hat` to lie inside a relative-accuracy ellipsoid with probability
//! `alpha` turns into the scalar quality constraint `R(N) >= R_designed`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};

use crate::error::{check_len, Error, Result};

/// A recorded or synthesized drive: timestamps, measured acceleration and
/// resultant-force estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveLog {
    pub t: Vec<f64>,
    pub a_meas: Vec<f64>,
    pub f_res: Vec<f64>,
}

impl DriveLog {
    /// Validates equal lengths and a strictly increasing, uniform time axis.
    pub fn new(t: Vec<f64>, a_meas: Vec<f64>, f_res: Vec<f64>) -> Result<Self> {
        check_len("acceleration column", t.len(), a_meas.len())?;
        check_len("force column", t.len(), f_res.len())?;
        if t.is_empty() {
            return Err(Error::InvalidParameter("drive log is empty".into()));
        }
        if t.iter().chain(&a_meas).chain(&f_res).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("drive log contains non-finite values".into()));
        }
        if t.len() >= 2 {
            let step = t[1] - t[0];
            if step <= 0.0 {
                return Err(Error::InvalidParameter("timestamps must be strictly increasing".into()));
            }
            let tol = 1e-6 * step.max(t[t.len() - 1].abs() * 1e-6);
            for (i, w) in t.windows(2).enumerate() {
                if (w[1] - w[0] - step).abs() > tol.max(1e-9 * step) {
                    return Err(Error::InvalidParameter(format!(
                        "timestamps are not uniformly spaced at row {}",
                        i + 2
                    )));
                }
            }
        }
        Ok(Self { t, a_meas, f_res })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Sampling period, or `None` for a single-row log.
    pub fn ts(&self) -> Option<f64> {
        (self.t.len() >= 2).then(|| (self.t[self.t.len() - 1] - self.t[0]) / (self.t.len() - 1) as f64)
    }
}

/// Result of a least-squares fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub m_hat: f64,
    pub delta_hat: Option<f64>,
    /// Full parameter covariance, row-major, mass first.
    pub theta_cov: Vec<Vec<f64>>,
    pub r_trace: Vec<f64>,
    pub sigma_e2_hat: f64,
}

impl MassEstimate {
    /// Variance of the mass estimate.
    pub fn mass_variance(&self) -> f64 {
        self.theta_cov[0][0]
    }

    /// Excitation energy over the whole log.
    pub fn r_total(&self) -> f64 {
        self.r_trace.last().copied().unwrap_or(0.0)
    }

    /// First 1-based sample where `R(t) >= r`.
    pub fn first_index_reaching(&self, r: f64) -> Option<usize> {
        first_index_reaching(&self.r_trace, r)
    }
}

/// First 1-based index where a non-decreasing trace reaches `r`.
pub fn first_index_reaching(r_trace: &[f64], r: f64) -> Option<usize> {
    let i = r_trace.partition_point(|&x| x < r);
    (i < r_trace.len()).then_some(i + 1)
}

/// Running excitation energy `R(1), ..., R(N)`.
pub fn excitation_trace(a: &[f64]) -> Vec<f64> {
    let mut r = 0.0;
    a.iter()
        .map(|x| {
            r += x * x;
            r
        })
        .collect()
}

/// `R(t) = sum_{k=1..t} a(k)^2` for 1-based `t`.
pub fn excitation_energy(a: &[f64], t: usize) -> Result<f64> {
    if t == 0 || t > a.len() {
        return Err(Error::IndexOutOfRange { index: t, len: a.len() });
    }
    Ok(a[..t].iter().map(|x| x * x).sum())
}

/// Single-regressor LS fit `f = m a + e`.
pub fn estimate_mass(a: &[f64], f_res: &[f64]) -> Result<MassEstimate> {
    check_len("force sequence", a.len(), f_res.len())?;
    if a.is_empty() {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    let r_trace = excitation_trace(a);
    let r = r_trace[r_trace.len() - 1];
    if r <= 0.0 {
        return Err(Error::Unidentifiable("acceleration is identically zero".into()));
    }
    let m_hat = a.iter().zip(f_res).map(|(a, f)| a * f).sum::<f64>() / r;
    let rss: f64 = a.iter().zip(f_res).map(|(a, f)| (f - m_hat * a).powi(2)).sum();
    let sigma_e2_hat = residual_variance(rss, a.len(), 1);
    Ok(MassEstimate {
        m_hat,
        delta_hat: None,
        theta_cov: vec![vec![sigma_e2_hat / r]],
        r_trace,
        sigma_e2_hat,
    })
}

/// Unbiased residual variance; zero when there are no spare degrees of freedom.
fn residual_variance(rss: f64, n: usize, params: usize) -> f64 {
    if n > params {
        rss / (n - params) as f64
    } else {
        0.0
    }
}

/// Multi-regressor OLS. Column 0 must be the acceleration; further columns
/// are nuisance regressors. A column of ones is reported as `delta_hat`
/// when it is column 1.
pub fn estimate_with_nuisance(regressors: &DMatrix<f64>, y: &[f64]) -> Result<MassEstimate> {
    let (n, k) = regressors.shape();
    check_len("response", n, y.len())?;
    if k == 0 {
        return Err(Error::InvalidParameter("no regressors".into()));
    }
    if n <= k {
        return Err(Error::InvalidParameter(format!(
            "need more samples than parameters, got {n} samples for {k} parameters"
        )));
    }
    let qr = regressors.clone().qr();
    let r = qr.r();
    for j in 0..k {
        let norm = regressors.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= 1e-10 * norm {
            return Err(Error::RankDeficient { column: j });
        }
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let theta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { column: k - 1 })?;
    let resid = &yv - regressors * &theta;
    let sigma_e2_hat = residual_variance(resid.norm_squared(), n, k);
    let rinv = r
        .try_inverse()
        .ok_or(Error::RankDeficient { column: k - 1 })?;
    let cov = &rinv * rinv.transpose() * sigma_e2_hat;
    let a: Vec<f64> = regressors.column(0).iter().copied().collect();
    let is_offset = k >= 2 && regressors.column(1).iter().all(|&x| x == 1.0);
    Ok(MassEstimate {
        m_hat: theta[0],
        delta_hat: is_offset.then(|| theta[1]),
        theta_cov: (0..k).map(|i| (0..k).map(|j| cov[(i, j)]).collect()).collect(),
        r_trace: excitation_trace(&a),
        sigma_e2_hat,
    })
}

/// OLS with regressors `[a, 1]`, estimating mass and a constant force offset.
pub fn estimate_with_offset(a: &[f64], f_res: &[f64]) -> Result<MassEstimate> {
    check_len("force sequence", a.len(), f_res.len())?;
    let phi = DMatrix::from_fn(a.len(), 2, |i, j| if j == 0 { a[i] } else { 1.0 });
    estimate_with_nuisance(&phi, f_res)
}

/// Application requirement on the mass estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityTarget {
    pub r_designed: f64,
    pub gamma_acc: Option<f64>,
    pub alpha: f64,
    pub chi2: f64,
    pub n_params: usize,
    pub m_nominal: f64,
    pub sigma_e2: f64,
}

impl QualityTarget {
    /// Target given directly by the required excitation energy.
    pub fn from_r_designed(r_designed: f64, alpha: f64, n_params: usize, m_nominal: f64, sigma_e2: f64) -> Result<Self> {
        let t = Self {
            r_designed,
            gamma_acc: None,
            alpha,
            chi2: chi2_percentile(alpha, n_params)?,
            n_params,
            m_nominal,
            sigma_e2,
        };
        t.validate()?;
        Ok(t)
    }

    /// Target given by the accuracy parameter; `r_designed` is derived.
    pub fn from_accuracy(gamma_acc: f64, alpha: f64, n_params: usize, m_nominal: f64, sigma_e2: f64) -> Result<Self> {
        let mut t = Self {
            r_designed: 0.0,
            gamma_acc: Some(gamma_acc),
            alpha,
            chi2: chi2_percentile(alpha, n_params)?,
            n_params,
            m_nominal,
            sigma_e2,
        };
        t.r_designed = r_designed_from_accuracy(&t)?;
        t.validate()?;
        Ok(t)
    }

    /// Accuracy parameter implied by `r_designed`.
    pub fn implied_gamma_acc(&self) -> f64 {
        self.r_designed * self.m_nominal * self.m_nominal / (2.0 * self.sigma_e2 * self.chi2)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r_designed", self.r_designed),
            ("chi2", self.chi2),
            ("m_nominal", self.m_nominal),
            ("sigma_e2", self.sigma_e2),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n_params == 0 {
            return Err(Error::InvalidParameter("n_params must be at least 1".into()));
        }
        if let Some(g) = self.gamma_acc {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidParameter(format!("gamma_acc must be positive, got {g}")));
            }
            let implied = self.implied_gamma_acc();
            if (implied - g).abs() > 1e-9 * g {
                return Err(Error::InvalidParameter(format!(
                    "r_designed = {} implies gamma_acc = {implied}, but gamma_acc = {g} was given",
                    self.r_designed
                )));
            }
        }
        Ok(())
    }
}

/// `R_designed = 2 sigma_e^2 gamma chi2 / m0^2`.
pub fn r_designed_from_accuracy(target: &QualityTarget) -> Result<f64> {
    let g = target
        .gamma_acc
        .ok_or_else(|| Error::InvalidParameter("gamma_acc is not set".into()))?;
    Ok(2.0 * target.sigma_e2 * g * target.chi2 / (target.m_nominal * target.m_nominal))
}

/// Largest relative mass error admitted at confidence `alpha`:
/// `sqrt(sigma_e^2 chi2 / (m0^2 R_designed))`.
pub fn designed_relative_error(target: &QualityTarget) -> f64 {
    relative_error_bound(target.sigma_e2, target.chi2, target.m_nominal, target.r_designed)
}

/// The same band for arbitrary noise variance and excitation.
pub fn relative_error_bound(sigma_e2: f64, chi2: f64, m_nominal: f64, r: f64) -> f64 {
    (sigma_e2 * chi2 / (m_nominal * m_nominal * r)).sqrt()
}

/// `alpha`-quantile of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_percentile(alpha: f64, dof: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if dof == 0 {
        return Err(Error::InvalidParameter("degrees of freedom must be at least 1".into()));
    }
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    // The generic inverse is a bisection; a few Newton steps on the regularized
    // incomplete gamma sharpen it to full precision.
    let mut x = dist.inverse_cdf(alpha);
    for _ in 0..4 {
        let pdf = dist.pdf(x);
        if pdf <= 0.0 {
            break;
        }
        let step = (dist.cdf(x) - alpha) / pdf;
        if !step.is_finite() || step.abs() >= x {
            break;
        }
        x -= step;
    }
    Ok(x)
}
