use normsol::fibering::{descartes_certificate, numeric_critical_points, DescartesNorms};
use normsol::field::{RadialField, RadialGrid};
use normsol::nonlinearity::{compute_c0, make_multipower, C0Scan, MultiPowerSpec, PowerTerm};
use normsol::scalar_bounds::{bound_from_above, bound_from_below};
use normsol::thresholds::{find_r0_r1, g_value, rho_threshold, s_max, Roots};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn from_above_bounds_every_solution(
        a in log_uniform(1e-3, 1e3),
        b in log_uniform(1e-3, 1e3),
        p in 0.01f64..1.99,
        x in log_uniform(1e-6, 1e3),
    ) {
        let Ok(ub) = bound_from_above(a, b, p) else {
            // overflowing roots only occur where no claim is made
            prop_assert!(b * (a.sqrt() + 0.5).powf(p) > a.sqrt() + 0.25);
            return Ok(());
        };
        let t = ub.t1;
        prop_assert!((1.0 - a / (t * t) - b * t.powf(p - 2.0)).abs() <= 1e-12);
        if ub.admissible {
            prop_assert!(t <= ub.bound);
            if x * x <= a + b * x.powf(p) {
                prop_assert!(x <= ub.bound);
            }
        }
    }

    #[test]
    fn from_below_bounds_every_solution(
        a in log_uniform(1e-3, 1e3),
        b in log_uniform(1e-3, 1e3),
        p in 2.01f64..6.0,
        dq in 0.01f64..4.0,
        x in log_uniform(1e-6, 1e3),
    ) {
        let q = p + dq;
        let Ok(lb) = bound_from_below(a, b, p, q) else { return Ok(()) };
        prop_assert!(lb.x_min >= lb.xi * (1.0 - 1e-12));
        if x * x <= a * x.powf(p) + b * x.powf(q) {
            prop_assert!(x >= lb.xi);
        }
    }
}

proptest! {
    #[test]
    fn upper_function_turns_at_t0(a in log_uniform(1e-2, 1e2), b in log_uniform(1e-2, 1e2), p in 0.1f64..1.9) {
        let ub = bound_from_above(a, b, p).unwrap();
        // A only shifts the function
        let phi = |t: f64| t * t - b * t.powf(p);
        let d = |t: f64| (phi(t * (1.0 + 1e-6)) - phi(t * (1.0 - 1e-6))) / (2e-6 * t);
        prop_assert!(d(0.5 * ub.t0) < 0.0);
        prop_assert!(d(2.0 * ub.t0) > 0.0);
        prop_assert!(ub.t1 > ub.t0);
    }

    #[test]
    fn roots_straddle_the_maximum(c0 in 0.05f64..5.0, s in 0.5f64..10.0, dim in 3usize..7, frac in 0.01f64..0.99) {
        let rho = (frac * rho_threshold(c0, s, dim)).sqrt();
        let Roots::Found { r0, r1 } = find_r0_r1(c0, s, dim, rho).unwrap() else {
            return Err(TestCaseError::fail("no roots below the threshold"));
        };
        let sm = s_max(c0, s, dim);
        prop_assert!(r0 < sm && sm < r1);
        let scale = g_value(c0, s, dim, rho, sm).unwrap();
        prop_assert!(g_value(c0, s, dim, rho, r0).unwrap().abs() <= 1e-9 * scale);
        prop_assert!(g_value(c0, s, dim, rho, r1).unwrap().abs() <= 1e-9 * scale);
    }

    #[test]
    fn laplacian_is_negative(seed in any::<u64>(), k in 1usize..8) {
        let grid = RadialGrid::new(3, 512, 15.0).unwrap();
        let mut u = RadialField::random_smooth(grid, &mut ChaCha8Rng::seed_from_u64(seed), k, 1.0, false);
        u.close_boundary();
        let q = u.inner(&u.laplacian());
        prop_assert!(q <= 0.0);
        prop_assert!((q + u.grad_sq()).abs() <= 1e-10 * u.grad_sq());
    }

    #[test]
    fn scaling_is_a_group_action(s in 0.8f64..1.25, t in 0.8f64..1.25) {
        let grid = RadialGrid::new(3, 4096, 20.0).unwrap();
        let mut u = RadialField::gaussian(grid, 1.0, 1.0);
        u.close_boundary();
        let twice = u.scale_star(t).unwrap().scale_star(s).unwrap();
        let once = u.scale_star(s * t).unwrap();
        let diff: Vec<f64> = twice.values().iter().zip(once.values()).map(|(a, b)| a - b).collect();
        let err = RadialField::from_values(once.grid().clone(), diff).unwrap().mass();
        prop_assert!(err <= 1e-8, "{}", err);
        prop_assert!((once.mass() - 1.0).abs() <= 1e-6);
        prop_assert!((once.grad_norm() - s * t * u.grad_norm()).abs() <= 1e-4 * u.grad_norm());
    }

    #[test]
    fn rearrangement_is_idempotent(seed in any::<u64>()) {
        let grid = RadialGrid::new(3, 512, 15.0).unwrap();
        let mut u = RadialField::random_smooth(grid, &mut ChaCha8Rng::seed_from_u64(seed), 5, 1.0, false);
        u.close_boundary();
        let v = u.rearrange_decreasing();
        prop_assert!((v.mass() - u.mass()).abs() <= 1e-12);
        prop_assert!(v.values()[1..].windows(2).all(|w| w[1] <= w[0]));
        let w = v.rearrange_decreasing();
        let top = v.max_modulus();
        prop_assert!(w.values().iter().zip(v.values()).all(|(x, y)| (x - y).abs() <= 1e-14 * top));
    }
}

fn two_power_spec() -> impl Strategy<Value = MultiPowerSpec> {
    (
        prop::sample::subsequence(vec![7i64, 8, 9], 1..=3),
        prop::sample::subsequence(vec![11i64, 12, 13, 14, 15, 16, 17], 1..=3),
        prop::collection::vec(log_uniform(0.1, 10.0), 6),
    )
        .prop_map(|(sub, sup, c)| MultiPowerSpec {
            sub: sub.iter().zip(&c).map(|(&q, &k)| PowerTerm::new(k, q, 3)).collect(),
            sup: sup.iter().zip(&c[3..]).map(|(&p, &k)| PowerTerm::new(k, p, 3)).collect(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn descartes_count_bounds_the_numeric_roots(spec in two_power_spec(), g in log_uniform(1e-2, 1e2), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick = |n: usize| (0..n).map(|_| rand::Rng::gen_range(&mut rng, 1e-2f64..1e2)).collect::<Vec<_>>();
        let norms = DescartesNorms { grad_sq: g, sub: pick(spec.sub.len()), sup: pick(spec.sup.len()) };
        let cert = descartes_certificate(&spec, 3, &norms).unwrap();
        prop_assert!(cert.sign_changes >= numeric_critical_points(&spec, 3, &norms));
    }

    #[test]
    fn c0_does_not_depend_on_the_scan_density(spec in two_power_spec()) {
        let model = make_multipower(spec, 3).unwrap();
        let a = compute_c0(&model, C0Scan::default()).unwrap().value;
        let b = compute_c0(&model, C0Scan { n: 4001, ..C0Scan::default() }).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-10 * a, "{} vs {}", a, b);
    }
}
