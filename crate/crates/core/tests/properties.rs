use proptest::prelude::*;

use lyosim::baseline::CvpControl;
use lyosim::config::{builtin, dump_config, parse_config, set_key};
use lyosim::controller::run;
use lyosim::integrator::{integrate, Direction, Event, EventSpec, IntegrationOptions};
use lyosim::model::{interface_velocity, rhs_into, saturation_pressure, ModelParams};
use lyosim::policies::{ControlBounds, PolicyId};
use lyosim::radau::{lagrange_weights, radau_nodes};
use lyosim::roots::brent;

fn profile(n: usize, base: f64, amp: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let xi = i as f64 / (n - 1) as f64;
            base + amp.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * 2.5 * xi).sin()).sum::<f64>()
        })
        .collect()
}

proptest! {
    #[test]
    fn front_moves_with_the_pressure_gradient(t1 in 200.0f64..270.0, s in 0.0f64..0.0099) {
        let p = ModelParams::default();
        let v = interface_velocity(t1, s, &p).unwrap();
        let drive = saturation_pressure(t1, &p).unwrap() - p.p_wc;
        prop_assert_eq!(v > 0.0, drive > 0.0);
        prop_assert!(v.is_finite());
    }

    #[test]
    fn shelf_temperature_reaches_only_the_bottom_node(
        amp in prop::collection::vec(-5.0f64..5.0, 3),
        s in 0.0f64..0.009,
        tb1 in 228.0f64..273.0,
        tb2 in 228.0f64..273.0,
    ) {
        let p = ModelParams::default();
        let mut x = profile(p.n, 235.0, &amp);
        x.push(s);
        let mut f1 = vec![0.0; p.n + 1];
        let mut f2 = vec![0.0; p.n + 1];
        rhs_into(&x, tb1, &p, &mut f1).unwrap();
        rhs_into(&x, tb2, &p, &mut f2).unwrap();
        for i in 0..p.n - 1 {
            prop_assert_eq!(f1[i], f2[i]);
        }
        prop_assert_eq!(f1[p.n], f2[p.n]);
        prop_assert_eq!(f1[p.n - 1] > f2[p.n - 1], tb1 > tb2);
    }

    #[test]
    fn isolated_layer_conserves_enthalpy(
        amp in prop::collection::vec(-8.0f64..8.0, 4),
        s in 0.0f64..0.009,
        n in 4usize..40,
    ) {
        let mut p = ModelParams::default();
        p.n = n;
        p.f_side = 0.0;
        p.k_v = 0.0;
        p.r_p = 1e30;
        let mut x = profile(n, 230.0, &amp);
        x.push(s);
        let mut f = vec![0.0; n + 1];
        rhs_into(&x, 250.0, &p, &mut f).unwrap();
        let rate: f64 = (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * f[i] } else { f[i] }).sum();
        let scale: f64 = f[..n].iter().map(|v| v.abs()).sum::<f64>() + 1e-300;
        prop_assert!(rate.abs() <= 1e-12 * scale, "rate {rate:e} scale {scale:e}");
    }

    #[test]
    fn lagrange_weights_reproduce_low_degree(stages in 1usize..6, x in 0.0f64..1.0, c in prop::collection::vec(-3.0f64..3.0, 6)) {
        let mut points = vec![0.0];
        points.extend(radau_nodes(stages));
        let w = lagrange_weights(&points, x);
        let poly = |t: f64| c.iter().take(points.len()).rev().fold(0.0, |acc, a| acc * t + a);
        let approx: f64 = points.iter().zip(&w).map(|(pt, wi)| wi * poly(*pt)).sum();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((approx - poly(x)).abs() < 1e-9);
    }

    #[test]
    fn brent_finds_cube_roots(c in 0.01f64..100.0) {
        let r = brent(|x| Ok(x * x * x - c), 0.0, 5.0, 1e-13, 200).unwrap();
        prop_assert!((r - c.cbrt()).abs() < 1e-10);
    }

    #[test]
    fn decay_event_matches_closed_form(a in 1e-4f64..1e-2, level in 0.05f64..0.9) {
        let mut events = EventSpec::none();
        events.push(Event::new(move |_t, x: &[f64], _u| x[0] - level, Direction::Falling));
        let opts = IntegrationOptions { rtol: 1e-9, atol: 1e-12, ..Default::default() };
        let out = integrate(
            |_t, x, _u, f| { f[0] = -a * x[0]; Ok(()) },
            |_| 0.0,
            &[1.0],
            0.0,
            1e6,
            &events,
            &opts,
        )
        .unwrap();
        let hit = out.event.expect("level is crossed");
        let exact = -level.ln() / a;
        prop_assert!((hit.t - exact).abs() <= opts.event_tol, "{} vs {}", hit.t, exact);
        prop_assert!((hit.state[0] - (-a * hit.t).exp()).abs() < 1e-8);
        let times = out.trajectory.times();
        prop_assert!(times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn piecewise_control_is_left_continuous(values in prop::collection::vec(228.0f64..273.0, 1..40), horizon in 1e3f64..1e5) {
        let u = CvpControl::new(values.clone(), horizon).unwrap();
        let b = u.boundaries();
        prop_assert_eq!(b.len(), values.len() + 1);
        for k in 0..values.len() {
            let mid = 0.5 * (b[k] + b[k + 1]);
            prop_assert_eq!(u.value_at(mid), values[k]);
            prop_assert_eq!(u.value_at(b[k + 1]), values[k]);
        }
        prop_assert_eq!(u.value_at(2.0 * horizon), *values.last().unwrap());
    }

    #[test]
    fn clamp_stays_in_bounds(lo in 200.0f64..260.0, width in 0.1f64..60.0, tb in 150.0f64..350.0) {
        let b = ControlBounds::new(lo, lo + width).unwrap();
        let c = b.clamp(tb);
        prop_assert!(c >= lo && c <= lo + width);
        if tb >= lo && tb <= lo + width {
            prop_assert_eq!(c, tb);
        }
    }

    #[test]
    fn config_dump_round_trips(
        k_v in 1.0f64..50.0,
        r_p in 1e3f64..1e5,
        n in 3usize..60,
        t_max in 235.0f64..250.0,
        horizon in 3600.0f64..400000.0,
    ) {
        let mut sc = builtin("problem1").unwrap();
        set_key(&mut sc, "K_v", &k_v.to_string()).unwrap();
        set_key(&mut sc, "R_p", &r_p.to_string()).unwrap();
        set_key(&mut sc, "n", &n.to_string()).unwrap();
        set_key(&mut sc, "T_max", &t_max.to_string()).unwrap();
        set_key(&mut sc, "horizon", &horizon.to_string()).unwrap();
        let text = dump_config(&sc);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back.params, &sc.params);
        prop_assert_eq!(back.limits.t_max, sc.limits.t_max);
        prop_assert_eq!(back.horizon, sc.horizon);
        prop_assert_eq!(dump_config(&back), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn controlled_runs_respect_limits_and_dry_monotonically(t_max in 236.0f64..246.0, v_max in 2.4e-7f64..3.6e-7) {
        let mut sc = builtin("problem2").unwrap();
        sc.limits.t_max = Some(t_max);
        sc.limits.v_max = Some(v_max);
        let sol = run(&sc).unwrap();
        let p = &sc.params;
        let tr = &sol.trajectory;
        prop_assert!(sol.complete);
        prop_assert!(tr.times().windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(tr.states().windows(2).all(|w| w[1][p.n] >= w[0][p.n] - 1e-12));
        prop_assert!(tr.states().iter().all(|x| x[..p.n].iter().all(|&t| t <= t_max + 0.1)));
        // a start already above the velocity limit is heated at a bound until the limit is met
        let rates = sol.interface_rates(p).unwrap();
        let met = rates.iter().position(|&v| v <= v_max * 1.001).unwrap();
        prop_assert!(sol.policies[..met].iter().all(|&id| id == PolicyId::Policy1));
        prop_assert!(rates[met..].iter().all(|&v| v <= v_max * 1.001));
        prop_assert!(tr.controls().iter().all(|&u| u >= sc.bounds.tb_min - 1e-9 && u <= sc.bounds.tb_max + 1e-9));
        prop_assert!((tr.last_state()[p.n] - p.end_position()).abs() < 1e-9 * p.height);

        let mut looser = sc.clone();
        looser.limits.t_max = Some(t_max + 1.0);
        let faster = run(&looser).unwrap();
        prop_assert!(faster.t_f <= sol.t_f * (1.0 + 1e-6), "{} vs {}", faster.t_f, sol.t_f);
    }
}
