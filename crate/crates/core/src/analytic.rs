//! Constructive profiles and closed-form distances for ideal actuators.
//!
//! Everything here neglects actuator lag: profiles store `u = a` and are
//! simulated with [`ActuatorModel::identity`](crate::dynamics::ActuatorModel::identity).
//! Phases are integerized by rounding the sample count up and trimming the
//! last step so that each phase ends exactly on its target velocity.
//!
//! Symbols: `dv = v_max - v_min`, `|a_min|` is the braking magnitude, `R` is
//! the designed excitation and `ts` the sample time.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Profile, SamplingGrid};
use crate::error::{Error, Result};
use crate::problem::Bounds;

/// Shape of the periodic min-time profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodicProfileSpec {
    pub n_plus: usize,
    pub n_minus: usize,
    pub m_periods: usize,
    pub total_n: usize,
}

/// One point of the distance-gap study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapAnalysis {
    pub delta_v: f64,
    pub d_time: f64,
    pub d_distance: f64,
    pub delta_d: f64,
}

/// Output of [`gap_analysis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapAnalysis>,
    /// Axis of symmetry of the gap parabola.
    pub delta_v_star: f64,
    /// Whether `delta_d` strictly increases along the grid.
    pub strictly_increasing: bool,
}

fn check_bounds(b: &Bounds) -> Result<()> {
    if !(b.a_min < 0.0 && b.a_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need a_min < 0 < a_max, got [{}, {}]",
            b.a_min, b.a_max
        )));
    }
    if !(b.v_max > b.v_min) {
        return Err(Error::InvalidParameter(format!(
            "need v_max > v_min, got [{}, {}]",
            b.v_min, b.v_max
        )));
    }
    Ok(())
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::InvalidParameter(format!("{name} must be positive, got {x}")));
    }
    Ok(())
}

/// Constant-level phase that changes the velocity by `dv` (sign included),
/// `ceil(|dv| / (ts |level|))` samples long with the last step trimmed.
fn phase(dv: f64, level: f64, ts: f64) -> Vec<f64> {
    let steps = dv / (ts * level);
    // Absorb round-off so exact integers do not gain a sliver step.
    let n = (steps - 1e-9).ceil().max(1.0) as usize;
    let mut out = vec![level; n];
    out[n - 1] = dv / ts - (n - 1) as f64 * level;
    out
}

fn energy(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Periodic profile from `v_min`: full acceleration to `v_max`, full braking
/// back, repeated `M` times where `M` is the least period count whose
/// excitation reaches `r_designed` (at least one period).
///
/// With integer `n_plus`, `n_minus` this `M` is exactly
/// `ceil(R / (n_plus a_max^2 + n_minus a_min^2))`.
pub fn periodic_profile(bounds: &Bounds, ts: f64, r_designed: f64) -> Result<(PeriodicProfileSpec, Profile)> {
    check_bounds(bounds)?;
    check_positive("ts", ts)?;
    let dv = bounds.v_max - bounds.v_min;
    if ts * bounds.a_max > dv * (1.0 + 1e-12) {
        return Err(Error::Geometry(format!(
            "one sample at a_max changes the velocity by {} which exceeds the range {dv}",
            ts * bounds.a_max
        )));
    }
    let up = phase(dv, bounds.a_max, ts);
    let down = phase(-dv, bounds.a_min, ts);
    let e_period = energy(&up) + energy(&down);
    let m = ((r_designed.max(0.0) / e_period) - 1e-12).ceil().max(1.0) as usize;
    let mut a = Vec::with_capacity(m * (up.len() + down.len()));
    for _ in 0..m {
        a.extend_from_slice(&up);
        a.extend_from_slice(&down);
    }
    let spec = PeriodicProfileSpec {
        n_plus: up.len(),
        n_minus: down.len(),
        m_periods: m,
        total_n: a.len(),
    };
    let prof = Profile::from_acceleration(&a, SamplingGrid::new(ts, a.len())?, bounds.v_min)?;
    Ok((spec, prof))
}

/// Upper velocity limit that minimizes the limit-case min-distance:
/// `v_max = (a_max / |a_min|) v_min`.
pub fn critical_vmax(a_max: f64, a_min: f64, v_min: f64) -> f64 {
    a_max / a_min.abs() * v_min
}

/// Whether `v_max / v_min` equals `a_max / |a_min|` to relative tolerance `rel`.
pub fn critical_ratio_holds(bounds: &Bounds, rel: f64) -> bool {
    let c = critical_vmax(bounds.a_max, bounds.a_min, bounds.v_min);
    (bounds.v_max - c).abs() <= rel * c.abs().max(f64::MIN_POSITIVE)
}

/// Limit-case (`v1 -> v_min`) distance of the cycle-then-ramp profile:
///
/// `(R ts - a_max dv) v_min / (|a_min| a_max) + dv v_min / a_max + dv^2 / (2 a_max)`.
///
/// Valid while the final ramp alone does not exceed the target,
/// `R ts >= a_max dv`.
pub fn d_distance(bounds: &Bounds, ts: f64, r_designed: f64) -> f64 {
    let (am, an, vmin) = (bounds.a_max, bounds.a_min.abs(), bounds.v_min);
    let dv = bounds.v_max - vmin;
    (r_designed * ts - am * dv) * vmin / (an * am) + dv * vmin / am + dv * dv / (2.0 * am)
}

/// Lower bound on the min-distance at the critical velocity ratio:
/// `ts R v_max / a_max^2 - dv^2 / (2 a_max)`.
///
/// Returns an error when the value is negative, which signals parameters
/// outside the regime where the limit construction is meaningful. Callers
/// should check [`critical_ratio_holds`]; away from it the value is still
/// returned but no longer equals [`d_distance`].
pub fn d_star(bounds: &Bounds, ts: f64, r_designed: f64) -> Result<f64> {
    bounds.validate()?;
    check_positive("ts", ts)?;
    let dv = bounds.v_max - bounds.v_min;
    let d = ts * r_designed * bounds.v_max / (bounds.a_max * bounds.a_max) - dv * dv / (2.0 * bounds.a_max);
    if d < 0.0 {
        return Err(Error::Geometry(format!(
            "d* = {d} is negative; the target is too small for the limit construction"
        )));
    }
    Ok(d)
}

/// Distance of the periodic min-time profile in the continuous limit:
/// `R ts (v_max + v_min) / (2 a_max |a_min|)`.
pub fn d_time_formula(bounds: &Bounds, ts: f64, r_designed: f64) -> f64 {
    r_designed * ts * (bounds.v_max + bounds.v_min) / (2.0 * bounds.a_max * bounds.a_min.abs())
}

/// Cycle-then-ramp profile and its structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceOptimalProfile {
    pub profile: Profile,
    pub m_cycles: usize,
    pub n_up: usize,
    pub n_down: usize,
    pub n_final: usize,
    /// Continuous-time distance `M d_p + (v_max^2 - v_min^2) / (2 a_max)`.
    pub closed_form_distance: f64,
}

/// `M` cycles between `v_min` and `v1` followed by a ramp to `v_max`, with
/// the fewest cycles that make the total excitation reach `r_designed`.
pub fn distance_optimal_profile(bounds: &Bounds, ts: f64, r_designed: f64, v1: f64) -> Result<DistanceOptimalProfile> {
    check_bounds(bounds)?;
    check_positive("ts", ts)?;
    let (vmin, vmax) = (bounds.v_min, bounds.v_max);
    if !(v1 <= vmax) || v1 - vmin < ts * bounds.a_max * (1.0 - 1e-9) {
        return Err(Error::Geometry(format!(
            "v1 = {v1} must lie in [v_min + ts a_max, v_max] = [{}, {vmax}]",
            vmin + ts * bounds.a_max
        )));
    }
    let dv1 = v1 - vmin;
    let up = phase(dv1, bounds.a_max, ts);
    let down = phase(-dv1, bounds.a_min, ts);
    let ramp = phase(vmax - vmin, bounds.a_max, ts);
    let e_cycle = energy(&up) + energy(&down);
    let rest = r_designed - energy(&ramp);
    let m = if rest <= 0.0 { 0 } else { (rest / e_cycle - 1e-12).ceil() as usize };
    let mut a = Vec::with_capacity(m * (up.len() + down.len()) + ramp.len());
    for _ in 0..m {
        a.extend_from_slice(&up);
        a.extend_from_slice(&down);
    }
    a.extend_from_slice(&ramp);
    let profile = Profile::from_acceleration(&a, SamplingGrid::new(ts, a.len())?, vmin)?;
    let (am, an) = (bounds.a_max, bounds.a_min.abs());
    let d_p = (an + am) * dv1 * (v1 + vmin) / (2.0 * an * am);
    Ok(DistanceOptimalProfile {
        profile,
        m_cycles: m,
        n_up: up.len(),
        n_down: down.len(),
        n_final: ramp.len(),
        closed_form_distance: m as f64 * d_p + (vmax * vmax - vmin * vmin) / (2.0 * am),
    })
}

/// Closed-form distance gap `d_time - d_distance` as a function of
/// `dv = v_max - v_min` with `v_min` held fixed:
///
/// `-dv^2 / (2 a_max) + dv (v_min / |a_min| - v_min / a_max + R ts / (2 a_max |a_min|))`.
pub fn delta_d(bounds: &Bounds, ts: f64, r_designed: f64, dv: f64) -> f64 {
    let (am, an, vmin) = (bounds.a_max, bounds.a_min.abs(), bounds.v_min);
    -dv * dv / (2.0 * am) + dv * (vmin / an - vmin / am + r_designed * ts / (2.0 * am * an))
}

/// Axis of symmetry of [`delta_d`]:
/// `(a_max / |a_min|) v_min - v_min + R ts / (2 |a_min|)`.
pub fn delta_v_star(bounds: &Bounds, ts: f64, r_designed: f64) -> f64 {
    let an = bounds.a_min.abs();
    bounds.a_max / an * bounds.v_min - bounds.v_min + r_designed * ts / (2.0 * an)
}

/// Gap between min-time and min-distance distances over a grid of velocity
/// ranges, with `v_max = v_min + dv` for each grid value.
pub fn gap_analysis(bounds: &Bounds, ts: f64, r_designed: f64, delta_v_grid: &[f64]) -> Result<GapReport> {
    check_bounds(bounds)?;
    check_positive("ts", ts)?;
    let mut rows = Vec::with_capacity(delta_v_grid.len());
    for &dv in delta_v_grid {
        check_positive("delta_v", dv)?;
        let b = Bounds {
            v_max: bounds.v_min + dv,
            ..bounds.clone()
        };
        let d_time = d_time_formula(&b, ts, r_designed);
        let d_dist = d_distance(&b, ts, r_designed);
        rows.push(GapAnalysis {
            delta_v: dv,
            d_time,
            d_distance: d_dist,
            delta_d: delta_d(bounds, ts, r_designed, dv),
        });
    }
    let strictly_increasing = rows.windows(2).all(|w| w[1].delta_v > w[0].delta_v && w[1].delta_d > w[0].delta_d);
    Ok(GapReport {
        rows,
        delta_v_star: delta_v_star(bounds, ts, r_designed),
        strictly_increasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ActuatorModel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn b(a_min: f64, a_max: f64, v_min: f64, v_max: f64) -> Bounds {
        Bounds::new(a_min, a_max, v_min, v_max).unwrap()
    }

    #[test]
    fn periodic_example() {
        let (spec, prof) = periodic_profile(&b(-0.5, 1.0, 1.0, 3.0), 0.5, 18.0).unwrap();
        assert_eq!((spec.n_plus, spec.n_minus, spec.m_periods), (4, 8, 3));
        assert_eq!(spec.total_n, 36);
        // Direct summation: 4 * 1 + 8 * 0.25 = 6 per period.
        assert_relative_eq!(prof.excitation(), 18.0, epsilon = 1e-12);
        assert!(prof.v.iter().all(|&v| (1.0 - 1e-12..=3.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn periodic_symmetric_and_degenerate() {
        let (spec, prof) = periodic_profile(&b(-0.8, 0.8, 2.0, 2.8), 0.1, 20.0).unwrap();
        assert_eq!(spec.n_plus, spec.n_minus);
        let n_c = spec.n_plus as f64;
        assert!(spec.m_periods as f64 >= 20.0 / (2.0 * n_c * 0.64));
        assert!(prof.excitation() >= 20.0);
        let (spec, prof) = periodic_profile(&b(-0.8, 0.8, 2.0, 2.8), 0.1, 1e-9).unwrap();
        assert_eq!(spec.m_periods, 1);
        assert!(prof.v.iter().all(|&v| (2.0 - 1e-12..=2.8 + 1e-12).contains(&v)));
        assert!(periodic_profile(&b(-0.8, 0.8, 2.0, 2.05), 0.1, 1.0).is_err());
    }

    #[test]
    fn trimmed_phases_land_on_the_limits() {
        let (spec, prof) = periodic_profile(&b(-0.3, 0.9, 1.0, 2.0), 0.07, 30.0).unwrap();
        let top = prof.v[spec.n_plus - 1];
        assert_relative_eq!(top, 2.0, epsilon = 1e-12);
        assert_relative_eq!(prof.v[spec.n_plus + spec.n_minus - 1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn critical_ratio_values() {
        assert_relative_eq!(critical_vmax(0.9, -0.3, 4.0 / 3.6), 12.0 / 3.6, epsilon = 1e-12);
        assert_eq!(critical_vmax(0.5, -0.5, 2.0), 2.0);
    }

    #[test]
    fn d_star_symmetric_and_linear() {
        let bb = b(-0.5, 0.5, 2.0, 2.0);
        assert_relative_eq!(d_star(&bb, 0.01, 600.0).unwrap(), 0.01 * 600.0 * 2.0 / 0.25, epsilon = 1e-12);
        let bb = b(-0.3, 0.9, 4.0 / 3.6, 12.0 / 3.6);
        let d1 = d_star(&bb, 0.01, 600.0).unwrap();
        let d2 = d_star(&bb, 0.01, 1200.0).unwrap();
        assert_relative_eq!(d2 - d1, 0.01 * 600.0 * bb.v_max / 0.81, epsilon = 1e-12);
        assert_relative_eq!(d1, d_distance(&bb, 0.01, 600.0), epsilon = 1e-12);
    }

    #[test]
    fn d_time_collapses_when_symmetric() {
        let bb = b(-0.5, 0.5, 2.0, 2.0);
        assert_relative_eq!(d_time_formula(&bb, 0.1, 30.0), 30.0 * 0.1 * 2.0 / 0.25, epsilon = 1e-12);
    }

    #[test]
    fn d_time_is_cycles_times_cycle_distance() {
        let bb = b(-0.4, 0.8, 1.0, 3.0);
        let (ts, r) = (0.05, 200.0);
        let dv = bb.v_max - bb.v_min;
        let n_plus = dv / (ts * bb.a_max);
        let n_minus = dv / (ts * bb.a_min.abs());
        let m = r / (n_plus * bb.a_max.powi(2) + n_minus * bb.a_min.powi(2));
        let d_cyc = (bb.v_max.powi(2) - bb.v_min.powi(2)) / 2.0 * (1.0 / bb.a_max + 1.0 / bb.a_min.abs());
        assert_relative_eq!(d_time_formula(&bb, ts, r), m * d_cyc, epsilon = 1e-12);
    }

    #[test]
    fn simulated_periodic_distance_converges_to_d_time() {
        let bb = b(-0.4, 0.8, 1.0, 3.0);
        let mut errs = Vec::new();
        for ts in [0.05, 0.0125] {
            // Whole periods only, so compare per unit of excitation.
            let (_, prof) = periodic_profile(&bb, ts, 400.0).unwrap();
            let r = prof.excitation();
            errs.push((prof.distance() - d_time_formula(&bb, ts, r)).abs() / prof.distance());
        }
        assert!(errs[1] < 1e-9 || errs[1] < errs[0]);
        assert!(errs[1] < 0.01);
    }

    #[test]
    fn distance_profile_closed_form_and_ramp() {
        let bb = b(-0.5, 1.0, 1.0, 3.0);
        let dp = distance_optimal_profile(&bb, 0.1, 40.0, 1.5).unwrap();
        assert_eq!((dp.n_up, dp.n_down, dp.n_final), (5, 10, 20));
        assert_relative_eq!(dp.profile.distance(), dp.closed_form_distance, epsilon = 1e-9);
        assert!(dp.profile.excitation() >= 40.0);
        let pr = crate::problem::DesignProblem::new(
            crate::problem::Objective::MinDistance,
            dp.profile.grid,
            ActuatorModel::identity(),
            bb.clone(),
            crate::estimator::QualityTarget {
                r_designed: 40.0,
                gamma_acc: None,
                alpha: 0.99,
                chi2: 6.63,
                n_params: 1,
                m_nominal: 1.0,
                sigma_e2: 1.0,
            },
            1.0,
        )
        .unwrap();
        assert!(crate::problem::check_feasibility(&dp.profile.u, &pr, 1e-9).unwrap().feasible);
        let ramp = distance_optimal_profile(&bb, 0.1, 1.0, 3.0).unwrap();
        assert_eq!(ramp.m_cycles, 0);
        assert!(ramp.profile.a.iter().all(|&a| a > 0.0));
        assert!(distance_optimal_profile(&bb, 0.1, 40.0, 1.05).is_err());
    }

    #[test]
    fn distance_decreases_toward_the_bound() {
        let bb = b(-0.3, 0.9, 1.0, 3.0);
        let ts = 0.005;
        let mut prev = f64::INFINITY;
        for v1 in [2.0, 1.5, 1.2, 1.05] {
            let d = distance_optimal_profile(&bb, ts, 600.0, v1).unwrap().profile.distance();
            assert!(d < prev, "{v1}: {d} >= {prev}");
            prev = d;
        }
        assert!(prev >= d_star(&bb, ts, 600.0).unwrap() * 0.99);
    }

    #[test]
    fn gap_zero_at_origin_and_two_paths() {
        let bb = b(-0.3, 0.9, 4.0 / 3.6, 12.0 / 3.6);
        assert_eq!(delta_d(&bb, 0.01, 600.0, 0.0), 0.0);
        let grid: Vec<f64> = (1..=20).map(|i| i as f64 * 0.2).collect();
        let rep = gap_analysis(&bb, 0.01, 600.0, &grid).unwrap();
        for row in &rep.rows {
            assert_relative_eq!(row.delta_d, row.d_time - row.d_distance, epsilon = 1e-9);
        }
        assert!(rep.strictly_increasing);
        assert!(grid.iter().all(|&dv| dv <= rep.delta_v_star));
    }

    proptest! {
        #[test]
        fn periodic_profiles_are_feasible(
            a_max in 0.2f64..2.0, a_min in -2.0f64..-0.2, v_min in 0.0f64..5.0,
            dv in 0.5f64..5.0, ts in 0.01f64..0.1, r in 0.0f64..500.0,
        ) {
            let bb = b(a_min, a_max, v_min, v_min + dv);
            let (spec, prof) = periodic_profile(&bb, ts, r).unwrap();
            prop_assert!(prof.v.iter().all(|&v| v >= v_min - 1e-9 && v <= v_min + dv + 1e-9));
            prop_assert!(prof.excitation() >= r - 1e-9);
            prop_assert!(prof.a.iter().all(|&a| a >= a_min - 1e-12 && a <= a_max + 1e-12));
            prop_assert_eq!(spec.total_n, spec.m_periods * (spec.n_plus + spec.n_minus));
        }

        #[test]
        fn stationarity_at_critical_vmax(a_max in 0.3f64..1.5, ratio in 1.5f64..4.0, v_min in 0.5f64..3.0) {
            let a_min = -a_max / ratio;
            let vc = critical_vmax(a_max, a_min, v_min);
            let h = 1e-4;
            let at = |vm: f64| d_distance(&Bounds { v_max: vm, ..b(a_min, a_max, v_min, vm.max(v_min)) }, 0.01, 600.0);
            prop_assert!(at(vc - h) - at(vc - 2.0 * h) < 0.0);
            prop_assert!(at(vc + 2.0 * h) - at(vc + h) > 0.0);
        }
    }
}
