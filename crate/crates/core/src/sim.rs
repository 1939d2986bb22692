//! Synthetic drive logs, the filter-and-estimate pipeline, Monte Carlo
//! coverage, and the shipped parameter presets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ActuatorModel, Profile, SamplingGrid};
use crate::error::{Error, Result};
use crate::estimator::{
    estimate_mass, estimate_with_offset, first_index_reaching, relative_error_bound, DriveLog, MassEstimate,
    QualityTarget,
};
use crate::problem::{Bounds, DesignProblem, Objective};
use crate::wiener::{fit_empirical_bayes, EbFit, EbSearch};

/// Ground truth and noise levels for synthetic experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub m_true: f64,
    /// Constant force offset in newtons.
    pub delta_true: f64,
    /// Force-noise standard deviation in newtons.
    pub sigma_e: f64,
    /// Accelerometer-noise standard deviation in m/s^2.
    pub sigma_a_meas: f64,
    pub trials: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Noise levels may be zero for noiseless checks.
    pub fn validate(&self) -> Result<()> {
        if !(self.m_true.is_finite() && self.m_true > 0.0) {
            return Err(Error::InvalidParameter(format!("m_true must be positive, got {}", self.m_true)));
        }
        if !self.delta_true.is_finite() {
            return Err(Error::InvalidParameter("delta_true must be finite".into()));
        }
        for (name, s) in [("sigma_e", self.sigma_e), ("sigma_a_meas", self.sigma_a_meas)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {s}")));
            }
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// Random stream for one trial: the base seed selects the key, the trial
/// index the stream, so any subset of trials can be replayed on its own.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Log of `profile` with force `m a + delta + e` and measured acceleration
/// `a + e_a`. Timestamps are `k ts` for `k = 1..N`.
pub fn synthesize_log(profile: &Profile, cfg: &SimConfig, trial_index: u64) -> Result<DriveLog> {
    cfg.validate()?;
    let mut rng = trial_rng(cfg.seed, trial_index);
    let n = profile.len();
    let mut a_meas = Vec::with_capacity(n);
    let mut f_res = Vec::with_capacity(n);
    for &a in &profile.a {
        let e: f64 = StandardNormal.sample(&mut rng);
        let ea: f64 = StandardNormal.sample(&mut rng);
        f_res.push(cfg.m_true * a + cfg.delta_true + cfg.sigma_e * e);
        a_meas.push(a + cfg.sigma_a_meas * ea);
    }
    let t = (1..=n).map(|k| profile.grid.time(k)).collect();
    DriveLog::new(t, a_meas, f_res)
}

/// Smooth a measured acceleration with the Wiener filter fitted by
/// Empirical Bayes.
pub fn filter_acceleration(a_meas: &[f64], search: &EbSearch) -> Result<(Vec<f64>, EbFit)> {
    let fit = fit_empirical_bayes(a_meas, search)?;
    Ok((fit.model.apply(a_meas), fit))
}

/// Estimate the mass from a log, optionally smoothing the acceleration first
/// and optionally estimating a force offset alongside.
///
/// The returned `r_trace` is built from the regressor actually used.
pub fn run_pipeline(log: &DriveLog, use_wiener: bool, use_offset: bool) -> Result<MassEstimate> {
    let a = if use_wiener {
        filter_acceleration(&log.a_meas, &EbSearch::default())?.0
    } else {
        log.a_meas.clone()
    };
    if use_offset {
        estimate_with_offset(&a, &log.f_res)
    } else {
        estimate_mass(&a, &log.f_res)
    }
}

/// Outcome of [`monte_carlo`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub m_hat: Vec<f64>,
    /// Designed relative error `sqrt(sigma_e^2 chi2 / (m0^2 R_designed))`.
    pub band: f64,
    /// Share of trials with `|m_hat - m_true| / m_true <= band`.
    pub fraction: f64,
    /// Binomial standard error of `fraction` at the nominal level.
    pub std_error: f64,
    /// The same share with the band recomputed from the mean of the
    /// per-trial noise-variance estimates.
    pub fraction_pooled: f64,
    pub pooled_band: f64,
    pub mean_sigma_e2_hat: f64,
    /// Mean time and distance until the regressor's running excitation
    /// reaches `R_designed`, over trials where it does.
    pub mean_time_to_r: Option<f64>,
    pub mean_distance_to_r: Option<f64>,
}

/// Run `cfg.trials` synthetic experiments on `profile` and count how often the
/// estimate falls inside the designed accuracy band.
///
/// The offset estimator is used when `delta_true != 0`; the Wiener filter
/// when the accelerometer is noisy.
pub fn monte_carlo(profile: &Profile, cfg: &SimConfig, target: &QualityTarget) -> Result<CoverageReport> {
    cfg.validate()?;
    if profile.excitation() < target.r_designed * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "profile excitation {} is below the designed {}",
            profile.excitation(),
            target.r_designed
        )));
    }
    let use_offset = cfg.delta_true != 0.0;
    let use_wiener = cfg.sigma_a_meas > 0.0;
    let band = relative_error_bound(target.sigma_e2, target.chi2, target.m_nominal, target.r_designed);
    let mut m_hat = Vec::with_capacity(cfg.trials);
    let mut s2 = Vec::with_capacity(cfg.trials);
    let (mut t_sum, mut d_sum, mut reached) = (0.0, 0.0, 0usize);
    for trial in 0..cfg.trials {
        let log = synthesize_log(profile, cfg, trial as u64)?;
        let est = run_pipeline(&log, use_wiener, use_offset)?;
        if let Some(k) = first_index_reaching(&est.r_trace, target.r_designed) {
            t_sum += profile.grid.time(k);
            d_sum += profile.d[k - 1];
            reached += 1;
        }
        m_hat.push(est.m_hat);
        s2.push(est.sigma_e2_hat);
    }
    let within = |b: f64| m_hat.iter().filter(|&&m| ((m - cfg.m_true) / cfg.m_true).abs() <= b).count() as f64 / cfg.trials as f64;
    let mean_s2 = s2.iter().sum::<f64>() / cfg.trials as f64;
    let pooled_band = relative_error_bound(mean_s2, target.chi2, target.m_nominal, target.r_designed);
    Ok(CoverageReport {
        fraction: within(band),
        std_error: (target.alpha * (1.0 - target.alpha) / cfg.trials as f64).sqrt(),
        fraction_pooled: within(pooled_band),
        pooled_band,
        band,
        mean_sigma_e2_hat: mean_s2,
        mean_time_to_r: (reached > 0).then(|| t_sum / reached as f64),
        mean_distance_to_r: (reached > 0).then(|| d_sum / reached as f64),
        m_hat,
    })
}

/// Sample time shared by the shipped presets.
pub const PRESET_TS: f64 = 0.01;

/// A shipped parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: &'static str,
    pub problem: DesignProblem,
    pub sim: SimConfig,
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 3] = ["paper-vii-a", "paper-vii-b", "paper-viii"];

/// Built-in parameter sets: the small and large velocity-range simulation
/// studies and the truck experiment. All use `R_designed = 600`, pole
/// `p = 0.979`, `ts = 0.01 s` and a 60 s horizon, starting at `v_min`.
/// Input limits equal the acceleration limits.
pub fn preset(name: &str) -> Result<Preset> {
    let kmh = |x: f64| x / 3.6;
    let (a_min, a_max, v_min, v_max, n_params, m0) = match name {
        "paper-vii-a" => (-0.3, 0.9, kmh(4.0), kmh(12.0), 1, 15_500.0),
        "paper-vii-b" => (-0.23, 0.9, kmh(4.0), kmh(23.0), 1, 15_500.0),
        "paper-viii" => (-0.4, 0.9, kmh(6.0), kmh(23.0), 2, 15_500.0),
        _ => {
            return Err(Error::InvalidParameter(format!(
                "unknown preset {name:?}; expected one of {PRESET_NAMES:?}"
            )))
        }
    };
    let sigma_e = 1000.0;
    let chi2 = if n_params == 2 { 9.21 } else { 6.63 };
    let target = QualityTarget {
        r_designed: 600.0,
        gamma_acc: None,
        alpha: 0.99,
        chi2,
        n_params,
        m_nominal: m0,
        sigma_e2: sigma_e * sigma_e,
    };
    let problem = DesignProblem::new(
        Objective::MinTime,
        SamplingGrid::new(PRESET_TS, 6000)?,
        ActuatorModel::new(0.979)?,
        Bounds::new(a_min, a_max, v_min, v_max)?,
        target,
        v_min,
    )?;
    let sim = SimConfig {
        m_true: m0,
        delta_true: if n_params == 2 { 500.0 } else { 0.0 },
        sigma_e,
        sigma_a_meas: 0.0,
        trials: 1000,
        seed: 0,
    };
    Ok(Preset { name: PRESET_NAMES.iter().find(|&&n| n == name).copied().unwrap_or("custom"), problem, sim })
}
