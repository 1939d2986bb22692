use super::*;
use crate::dynamics::{build_actuator_toeplitz, ActuatorModel, SamplingGrid};
use crate::estimator::QualityTarget;
use crate::problem::Bounds;
use approx::assert_relative_eq;
use nalgebra::DVector;
use proptest::prelude::*;

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

/// Box on `u` only: velocity limits far away.
fn boxed(objective: Objective, n: usize, p: f64, u_lo: f64, u_hi: f64, r: f64) -> DesignProblem {
    DesignProblem::new(
        objective,
        SamplingGrid::new(0.1, n).unwrap(),
        ActuatorModel::new(p).unwrap(),
        Bounds::new(u_lo, u_hi, -1e3, 1e3).unwrap(),
        target(r),
        0.0,
    )
    .unwrap()
}

#[test]
fn scalar_maximum_is_the_far_vertex() {
    let pr = boxed(Objective::MaxAccuracy, 1, 0.0, -1.0, 2.0, 0.0);
    let rep = max_excitation(&pr, &SolverSettings::default()).unwrap();
    assert_relative_eq!(rep.objective_value, 4.0, epsilon = 1e-9);
    assert_relative_eq!(rep.u_star[0], 2.0, epsilon = 1e-9);
    assert_eq!(rep.status, SolveStatus::Optimal);
}

#[test]
fn two_samples_match_vertex_enumeration() {
    let pr = boxed(Objective::MaxAccuracy, 2, 0.5, -1.0, 1.0, 0.0);
    let f = build_actuator_toeplitz(&pr.actuator, &pr.grid);
    let mut oracle = f64::MIN;
    for u0 in [-1.0, 1.0] {
        for u1 in [-1.0, 1.0] {
            oracle = oracle.max((&f * DVector::from_vec(vec![u0, u1])).norm_squared());
        }
    }
    let rep = max_excitation(&pr, &SolverSettings::default()).unwrap();
    assert_relative_eq!(rep.objective_value, oracle, epsilon = 1e-9);
    assert!(rep.lower_bound <= rep.objective_value && rep.objective_value <= rep.upper_bound);
}

#[test]
fn scalar_min_cost_picks_the_far_side() {
    let pr = boxed(Objective::MinDistance, 1, 0.0, -1.0, 2.0, 1.0);
    let rep = solve_linear_cost(&pr, &[1.0], &SolverSettings::default()).unwrap();
    assert_relative_eq!(rep.u_star[0], -1.0, epsilon = 1e-9);
    assert_relative_eq!(rep.objective_value, -1.0, epsilon = 1e-9);
    assert_eq!(rep.status, SolveStatus::Optimal);
}

#[test]
fn target_above_maximum_is_infeasible() {
    let pr = boxed(Objective::MinDistance, 3, 0.5, -1.0, 1.0, 0.0);
    let best = max_excitation(&pr, &SolverSettings::default()).unwrap();
    let mut above = pr.clone();
    above.target.r_designed = best.upper_bound * 1.01 + 1e-6;
    let rep = solve_fixed_horizon(&above, &SolverSettings::default()).unwrap();
    assert_eq!(rep.status, SolveStatus::Infeasible);
    assert!(rep.upper_bound < above.target.r_designed);
    let mut below = pr.clone();
    below.target.r_designed = best.objective_value * 0.99;
    let rep = solve_fixed_horizon(&below, &SolverSettings::default()).unwrap();
    assert_eq!(rep.status, SolveStatus::Optimal);
    let check = check_feasibility(&rep.u_star, &below, 1e-7).unwrap();
    assert!(check.feasible, "{check:?}");
}

#[test]
fn min_time_degenerate_and_alternating_bound() {
    let pr = boxed(Objective::MinTime, 40, 0.0, -1.0, 1.0, 0.0);
    let res = solve_min_time(&pr, 1, 40, &SolverSettings::default()).unwrap();
    assert_eq!(res.n_star, 1);

    // Symmetric limits with the velocity window wide enough to alternate.
    let pr = DesignProblem::new(
        Objective::MinTime,
        SamplingGrid::new(0.1, 40).unwrap(),
        ActuatorModel::identity(),
        Bounds::new(-0.8, 0.8, 1.0, 1.5).unwrap(),
        target(5.0),
        1.0,
    )
    .unwrap();
    let res = solve_min_time(&pr, 1, 40, &SolverSettings::default()).unwrap();
    let bound = (5.0f64 / 0.64).ceil() as usize;
    assert!(res.n_star <= bound, "{} > {bound}", res.n_star);
    assert!(res.report.objective_value >= 5.0 - 1e-7);
    assert!(solve_min_time(&pr, 1, 7, &SolverSettings::default()).is_err());
}

#[test]
fn horizon_cap_is_enforced() {
    let pr = boxed(Objective::MaxAccuracy, 65, 0.5, -1.0, 1.0, 0.0);
    assert!(matches!(max_excitation(&pr, &SolverSettings::default()), Err(Error::Unsupported(_))));
}

#[test]
fn velocity_rows_bind() {
    // With p = 0 and v in [0, 0.1], a single step of 1 m/s^2 at Ts = 0.1 is the most.
    let pr = DesignProblem::new(
        Objective::MaxAccuracy,
        SamplingGrid::new(0.1, 3).unwrap(),
        ActuatorModel::identity(),
        Bounds::new(-1.0, 1.0, 0.0, 0.1).unwrap(),
        target(0.0),
        0.0,
    )
    .unwrap();
    let rep = max_excitation(&pr, &SolverSettings::default()).unwrap();
    // up, down, up: a = (1, -1, 1) keeps v in {0.1, 0, 0.1}.
    assert_relative_eq!(rep.objective_value, 3.0, epsilon = 1e-7);
}

fn random_problem(seed: u64, n: usize) -> DesignProblem {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a_max = rng.random_range(0.3..1.0);
    let a_min = -rng.random_range(0.3..1.0);
    let v_min = rng.random_range(0.0..1.0);
    let v_max = v_min + rng.random_range(0.05..0.3);
    DesignProblem::new(
        Objective::MaxAccuracy,
        SamplingGrid::new(0.2, n).unwrap(),
        ActuatorModel::new(rng.random_range(0.0..0.8)).unwrap(),
        Bounds::new(a_min, a_max, v_min, v_max).unwrap(),
        target(0.0),
        v_min + 0.5 * (v_max - v_min),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn excitation_is_monotone_in_horizon(seed in 0u64..1000) {
        let s = SolverSettings::default();
        let mut prev = 0.0f64;
        for n in 1..=4 {
            let rep = max_excitation(&random_problem(seed, n), &s).unwrap();
            prop_assert!(rep.lower_bound <= rep.objective_value + 1e-12);
            prop_assert!(rep.objective_value <= rep.upper_bound + 1e-12);
            prop_assert!(rep.objective_value >= prev - 1e-6 * prev.max(1.0));
            prev = rep.objective_value;
        }
    }

    #[test]
    fn reports_are_deterministic(seed in 0u64..1000) {
        let mut pr = random_problem(seed, 4);
        let s = SolverSettings::default();
        let best = max_excitation(&pr, &s).unwrap();
        pr.objective = Objective::MinDistance;
        pr.target.r_designed = 0.7 * best.objective_value;
        let x = solve_fixed_horizon(&pr, &s).unwrap();
        let y = solve_fixed_horizon(&pr, &s).unwrap();
        prop_assert_eq!(x, y);
    }
}
