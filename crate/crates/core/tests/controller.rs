use lyosim::baseline::{simulate_fixed_control, CvpControl};
use lyosim::config::builtin;
use lyosim::controller::{replay_detect, run, start_state, EventTrigger};
use lyosim::model::interface_velocity;
use lyosim::policies::PolicyId;
use lyosim::trajectory::{Piece, Trajectory};
use lyosim::Error;

#[test]
fn unconstrained_run_is_one_heating_segment() {
    let sc = builtin("custom").unwrap();
    let sol = run(&sc).unwrap();
    assert_eq!(sol.segments.len(), 1);
    assert_eq!(sol.events.len(), 1);
    assert_eq!(sol.events[0].trigger, EventTrigger::Termination);
    assert!(sol.trajectory.controls().iter().all(|&u| u == sc.bounds.tb_max));

    let fixed = simulate_fixed_control(&CvpControl::constant(sc.bounds.tb_max, 1, sc.horizon).unwrap(), &sc).unwrap();
    let t_f = fixed.t_f.expect("dries within the horizon");
    assert!((t_f - sol.t_f).abs() / sol.t_f < 1e-3, "{t_f} vs {}", sol.t_f);
}

#[test]
fn replay_finds_the_temperature_crossing_of_the_run() {
    let sc = builtin("problem1").unwrap();
    let sol = run(&sc).unwrap();
    let switch = sol.events.iter().find(|e| e.policy_after == Some(PolicyId::Policy2)).unwrap().time;

    let x0 = start_state(&sc).unwrap();
    let span = 2.0 * switch;
    let mut control = Trajectory::new(0.0, x0.clone(), sc.bounds.tb_max);
    control.push_sample(span, x0.clone(), sc.bounds.tb_max);
    control.push_piece(Piece::new(
        0.0,
        span,
        vec![0.0, 1.0],
        vec![x0.clone(), x0.clone()],
        vec![0.0],
        vec![sc.bounds.tb_max],
    ));
    let replay = replay_detect(&control, &x0, 0.0, &sc, PolicyId::Policy1, false).unwrap();
    let (trigger, hit) = replay.event.expect("temperature limit is reached");
    assert_eq!(trigger, EventTrigger::TemperatureLimit);
    assert!((hit.t - switch).abs() < 1.0, "{} vs {switch}", hit.t);
    assert!((replay.trajectory.t_end() - hit.t).abs() < 1e-9);
}

#[test]
fn no_constant_shelf_temperature_beats_the_switching_run() {
    for name in ["problem1", "problem2"] {
        let sc = builtin(name).unwrap();
        let sol = run(&sc).unwrap();
        let mut feasible = 0;
        for k in 0..=15 {
            let tb = sc.bounds.tb_min + (sc.bounds.tb_max - sc.bounds.tb_min) * k as f64 / 15.0;
            let fixed = simulate_fixed_control(&CvpControl::constant(tb, 1, sc.horizon).unwrap(), &sc).unwrap();
            if let (Some(t_f), true) = (fixed.t_f, fixed.violation < 1e-6) {
                feasible += 1;
                assert!(t_f >= sol.t_f, "{name}: constant {tb} K dries in {t_f} s, switching run {}", sol.t_f);
            }
        }
        assert!(feasible > 0, "{name}: no feasible constant control on the grid");
    }
}

#[test]
fn problem2_opening_tracks_the_velocity_limit() {
    let sc = builtin("problem2").unwrap();
    let x0 = start_state(&sc).unwrap();
    let p = &sc.params;
    let v0 = interface_velocity(x0[0], x0[p.n], p).unwrap();
    assert!((v0 - sc.limits.v_max.unwrap()).abs() < 1e-12);
    let sol = run(&sc).unwrap();
    assert_eq!(sol.policies[0], PolicyId::Policy3);
    let early: Vec<f64> = sol
        .trajectory
        .times()
        .iter()
        .zip(sol.trajectory.controls())
        .filter(|(t, _)| **t <= 600.0)
        .map(|(_, u)| *u)
        .collect();
    assert!(early.windows(2).all(|w| w[1] >= w[0]), "{early:?}");
}

#[test]
fn unreachable_velocity_limit_opens_on_the_upper_bound() {
    let mut sc = builtin("problem2").unwrap();
    sc.limits.v_max = Some(3.3e-7);
    sc.bounds.tb_max = 250.0;
    let sol = run(&sc).unwrap();
    assert_eq!(sol.events[0].trigger, EventTrigger::ControlUpperBound);
    assert_eq!(sol.policies[0], PolicyId::Policy1);
    assert_eq!(sol.trajectory.controls()[0], 250.0);
}

#[test]
fn short_horizon_returns_the_partial_run() {
    let mut sc = builtin("problem2").unwrap();
    sc.horizon = 7200.0;
    match run(&sc) {
        Err(Error::IncompleteDrying { fraction, partial }) => {
            assert!(fraction > 0.0 && fraction < 1.0);
            assert!((partial.trajectory.t_end() - 7200.0).abs() < 1e-6);
            assert!(!partial.complete);
            assert_eq!(partial.events.last().unwrap().policy_after, Some(PolicyId::Policy1));
        }
        other => panic!("expected incomplete drying, got {other:?}"),
    }
}

#[test]
fn switch_budget_reports_chattering() {
    let mut sc = builtin("problem2").unwrap();
    sc.solver.max_switches = 1;
    let err = run(&sc).unwrap_err();
    assert!(matches!(err.root(), Error::Chattering { switches: 2, .. }), "{err}");
}

#[test]
fn tighter_temperature_limit_dries_slower() {
    let mut last = 0.0;
    for t_max in [245.0, 243.0, 241.0, 239.0] {
        let mut sc = builtin("problem1").unwrap();
        sc.limits.t_max = Some(t_max);
        let sol = run(&sc).unwrap();
        assert!(sol.t_f > last, "T_max {t_max}: {} after {last}", sol.t_f);
        last = sol.t_f;
    }
}
