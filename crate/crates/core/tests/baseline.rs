use lyosim::baseline::{optimize_cvp, simulate_fixed_control, CvpControl, CvpOptions};
use lyosim::config::builtin;
use lyosim::controller::run;
use lyosim::Error;

#[test]
fn unconstrained_optimum_sits_on_the_upper_bound() {
    let sc = builtin("custom").unwrap();
    let opts = CvpOptions {
        intervals: 4,
        max_evaluations: 200,
        ..Default::default()
    };
    let res = optimize_cvp(&sc, &opts, None).unwrap();
    assert!(res.control.values.iter().all(|&v| v == sc.bounds.tb_max), "{:?}", res.control.values);
    let sol = run(&sc).unwrap();
    assert!((res.t_f - sol.t_f).abs() / sol.t_f < 1e-3);
    assert!(res.evaluations <= 200);
}

#[test]
fn resampled_switching_control_is_feasible() {
    for name in ["problem1", "problem2"] {
        let sc = builtin(name).unwrap();
        let sol = run(&sc).unwrap();
        let u = CvpControl::resample(&sol, 32, 1.05 * sol.t_f).unwrap();
        let fixed = simulate_fixed_control(&u, &sc).unwrap();
        assert!(fixed.violation < 1e-3, "{name}: violation {}", fixed.violation);
        let t_f = fixed.t_f.expect("dries within the resampled horizon");
        assert!(t_f >= sol.t_f && t_f < 1.02 * sol.t_f, "{name}: {t_f} vs {}", sol.t_f);
    }
}

#[test]
fn finer_control_grid_does_not_slow_drying() {
    let sc = builtin("problem1").unwrap();
    let sol = run(&sc).unwrap();
    let solve = |intervals| {
        let opts = CvpOptions {
            intervals,
            ..Default::default()
        };
        optimize_cvp(&sc, &opts, Some(&sol)).unwrap()
    };
    let coarse = solve(8);
    let fine = solve(32);
    assert!(fine.t_f <= coarse.t_f, "N=32 {} vs N=8 {}", fine.t_f, coarse.t_f);
    assert!(coarse.violation < 1e-3 && fine.violation < 1e-3);
}

#[test]
fn interval_count_is_validated() {
    let sc = builtin("problem1").unwrap();
    for intervals in [3, 65] {
        let opts = CvpOptions {
            intervals,
            ..Default::default()
        };
        assert!(matches!(optimize_cvp(&sc, &opts, None), Err(Error::Config { .. })));
    }
}

#[test]
fn search_is_reproducible_for_a_seed() {
    let sc = builtin("problem1").unwrap();
    let opts = CvpOptions {
        intervals: 4,
        max_evaluations: 120,
        seed: 7,
        ..Default::default()
    };
    let sol = run(&sc).unwrap();
    let a = optimize_cvp(&sc, &opts, Some(&sol)).unwrap();
    let b = optimize_cvp(&sc, &opts, Some(&sol)).unwrap();
    assert_eq!(a.control, b.control);
    assert_eq!(a.t_f, b.t_f);
}
