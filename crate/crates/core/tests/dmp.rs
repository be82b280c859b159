use cdmp::dmp::*;
use cdmp::Pose6;
use nalgebra::Vector6;
use proptest::prelude::*;

fn axis_pose(d: usize, v: f64) -> Pose6 {
    let mut p = Pose6::zeros();
    p.0[d] = v;
    p
}

/// Max deviation of the fitted rollout from the analytic quintic, as a
/// fraction of |g − y₀|.
fn fit_error(k: f64, tau: f64, n: usize) -> f64 {
    let start = axis_pose(0, 0.0);
    let goal = axis_pose(0, 1.0);
    let mut cfg = DmpConfig::critically_damped(k, k, tau, start, goal).unwrap();
    cfg.basis = BasisSet::equally_spaced(n, cfg.alpha_s).unwrap();
    cfg.basis = fit_min_jerk(&start, &goal, tau, &cfg.basis, &cfg.gains(), DEFAULT_DT).unwrap();
    let steps = (2.0 * tau / DEFAULT_DT) as usize;
    let traj = rollout(&cfg, DEFAULT_DT, steps, |_| Vector6::zeros()).unwrap();
    traj.iter()
        .map(|p| (p.y.0[0] - min_jerk(0.0, 1.0, tau, p.t).0).abs())
        .fold(0.0, f64::max)
}

#[test]
fn fitted_rollout_tracks_min_jerk() {
    for k in [25.0, 100.0, 400.0] {
        let err = fit_error(k, 1.0, 20);
        println!("k={k}: max deviation {err:.5}");
        assert!(err < 0.02, "k={k}: {err}");
    }
}

#[test]
fn forcing_matches_direct_summation() {
    let start = axis_pose(2, 0.0);
    let goal = axis_pose(2, -0.1);
    let mut cfg = DmpConfig::critically_damped(80.0, 80.0, 1.0, start, goal).unwrap();
    cfg.basis = BasisSet::equally_spaced(10, cfg.alpha_s).unwrap();
    cfg.basis = fit_min_jerk(&start, &goal, 1.0, &cfg.basis, &cfg.gains(), DEFAULT_DT).unwrap();
    let s = 0.5_f64;
    // independent summation in extended form: Σ wᵢ exp(..) / Σ exp(..) · s
    let mut num = 0.0_f64;
    let mut den = 0.0_f64;
    for i in 0..cfg.basis.len() {
        let z = (s - cfg.basis.centers[i]) / cfg.basis.widths[i];
        let psi = (-0.5 * z * z).exp();
        num += psi * cfg.basis.weights[i][2];
        den += psi;
    }
    let expected = num / den * s;
    let got = eval_forcing(&cfg.basis, s).unwrap().value[2];
    assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
}

#[test]
fn midpoint_of_fitted_rollout_is_halfway() {
    let start = axis_pose(1, 0.2);
    let goal = axis_pose(1, 0.6);
    let cfg = DmpConfig::min_jerk(100.0, 100.0, 1.0, start, goal).unwrap();
    let traj = rollout(&cfg, DEFAULT_DT, 250, |_| Vector6::zeros()).unwrap();
    let mid = traj.last().unwrap();
    assert!((mid.t - 0.5).abs() < 1e-9);
    assert!((mid.y.0[1] - 0.4).abs() < 0.02 * 0.4);
}

#[test]
fn unforced_rollout_converges_without_overshoot() {
    let start = Pose6(Vector6::new(0.3, -0.2, 0.1, 0.2, -0.1, 0.05));
    let goal = Pose6(Vector6::new(0.5, 0.1, -0.1, 0.0, 0.1, -0.3));
    let tau = 1.0;
    let cfg = DmpConfig::critically_damped(40.0, 20.0, tau, start, goal).unwrap();
    // slowest settling constant τ/ω with ω = sqrt(k/τ)
    let settle = tau * (tau / 20.0_f64).sqrt();
    let steps = (10.0 * tau * settle.max(1.0) / DEFAULT_DT) as usize;
    let traj = rollout(&cfg, DEFAULT_DT, steps, |_| Vector6::zeros()).unwrap();
    let e0 = (start.0 - goal.0).norm();
    let last = traj.last().unwrap();
    assert!((last.y.0 - goal.0).norm() < 1e-3 * e0);
    for d in 0..6 {
        let sign0 = (start.0[d] - goal.0[d]).signum();
        for p in &traj {
            assert!((p.y.0[d] - goal.0[d]) * sign0 >= -1e-12, "axis {d} overshoots at t={}", p.t);
        }
    }
}

#[test]
fn goal_scaling_is_linear() {
    let a = 0.37;
    let unit = DmpConfig::min_jerk(60.0, 60.0, 1.0, axis_pose(0, 0.0), axis_pose(0, 1.0)).unwrap();
    let mut scaled = unit.clone();
    scaled.goal = axis_pose(0, a);
    let t1 = rollout(&unit, DEFAULT_DT, 800, |_| Vector6::zeros()).unwrap();
    let t2 = rollout(&scaled, DEFAULT_DT, 800, |_| Vector6::zeros()).unwrap();
    for (p, q) in t1.iter().zip(&t2) {
        assert!((a * p.y.0[0] - q.y.0[0]).abs() < 1e-12);
    }
}

#[test]
fn doubling_tau_traverses_the_same_path_twice_as_slowly() {
    let cfg = DmpConfig::min_jerk(60.0, 30.0, 1.0, axis_pose(0, 0.0), axis_pose(0, 0.2)).unwrap();
    let slow = cfg.time_scaled(2.0).unwrap();
    assert!((slow.tau - 2.0).abs() < 1e-15);
    let dt = 0.0005;
    let fast = rollout(&cfg, dt, 3000, |_| Vector6::zeros()).unwrap();
    let slow_traj = rollout(&slow, 2.0 * dt, 3000, |_| Vector6::zeros()).unwrap();
    let scale = 0.2;
    for (p, q) in fast.iter().zip(&slow_traj) {
        assert!((q.t - 2.0 * p.t).abs() < 1e-9);
        assert!((p.y.0[0] - q.y.0[0]).abs() < 1e-4 * scale);
    }
    // same step size on both sides: discretisation error only
    let slow_fine = rollout(&slow, dt, 6000, |_| Vector6::zeros()).unwrap();
    for (i, p) in fast.iter().enumerate() {
        let q = &slow_fine[2 * i];
        assert!((p.y.0[0] - q.y.0[0]).abs() < 1e-3 * scale);
    }
}

proptest! {
    #[test]
    fn phase_positive_and_decreasing(steps in prop::collection::vec(1e-5f64..0.5, 1..200)) {
        let mut p = PhaseState::new(DEFAULT_ALPHA_S, 1.3).unwrap();
        for dt in steps {
            let next = step_phase(&p, dt).unwrap();
            prop_assert!(next.s > 0.0);
            prop_assert!(next.s < p.s);
            p = next;
        }
    }

    #[test]
    fn unforced_system_is_globally_stable(
        y0 in prop::array::uniform6(-1.0f64..1.0),
        v0 in prop::array::uniform6(-2.0f64..2.0),
        g in prop::array::uniform6(-1.0f64..1.0),
    ) {
        let goal = Pose6(Vector6::from_row_slice(&g));
        let cfg = DmpConfig::critically_damped(50.0, 25.0, 0.8, Pose6(Vector6::from_row_slice(&y0)), goal).unwrap();
        let mut st = TrajectorySample::at_rest(cfg.start);
        st.ydot = Vector6::from_row_slice(&v0);
        let e0 = (cfg.start.0 - goal.0).norm() + st.ydot.norm();
        let mut s = 1.0;
        for _ in 0..(10.0 / DEFAULT_DT) as usize {
            st = step_dmp(&cfg, &st, s, &Vector6::zeros(), DEFAULT_DT).unwrap();
            s *= (-cfg.alpha_s * DEFAULT_DT / cfg.tau).exp();
        }
        prop_assert!((st.y.0 - goal.0).norm() < 1e-3 * e0.max(1e-9));
    }
}
