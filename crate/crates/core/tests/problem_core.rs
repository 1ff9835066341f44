use fracsparse::assembly::TraceField;
use fracsparse::mesh::build_base;
use fracsparse::problem::{
    cost_j, ds_of_s, gamma, optimal_control_pointwise, proj_interval, soft_threshold, subgradient_pointwise,
    ControlField, DesiredState, ProblemConfig,
};
use proptest::prelude::*;

/// `ln Γ(x)` by upward recursion to `x ≥ 30` and the Stirling series.
fn ln_gamma_stirling(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 30.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series =
        inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 / 1188.0))));
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

#[test]
fn gamma_matches_stirling_oracle() {
    for i in 1..400 {
        let x = 0.05 * i as f64;
        let want = ln_gamma_stirling(x).exp();
        let got = gamma(x);
        assert!((got - want).abs() <= 1e-12 * want, "x = {x}: {got} vs {want}");
    }
}

#[test]
fn gamma_reflection_identity() {
    for i in 1..40 {
        let x = 0.025 * i as f64;
        let lhs = gamma(x) * gamma(1.0 - x);
        let rhs = std::f64::consts::PI / (std::f64::consts::PI * x).sin();
        assert!((lhs - rhs).abs() <= 1e-12 * rhs, "x = {x}");
    }
}

#[test]
fn ds_values_against_high_precision() {
    // reference values computed with 30-digit arithmetic
    let cases = [
        (0.25, 0.477_988_797_486_125),
        (0.3, 0.572_540_458_568_312),
        (0.5, 1.0),
        (0.7, 1.746_601_458_525_025),
        (0.75, 2.092_099_240_106_203),
    ];
    for (s, want) in cases {
        assert!((ds_of_s(s).unwrap() - want).abs() < 1e-12, "s = {s}");
    }
    for s in [0.1, 0.25, 0.4, 0.45] {
        assert!((ds_of_s(s).unwrap() * ds_of_s(1.0 - s).unwrap() - 1.0).abs() < 1e-12);
    }
    assert!(ds_of_s(0.0).is_err() && ds_of_s(1.0).is_err());
}

#[test]
fn subgradient_examples() {
    assert_eq!(subgradient_pointwise(0.0, 0.05, 0.1), -0.5);
    assert_eq!(subgradient_pointwise(0.0, -3.0, 0.1), 1.0);
    assert_eq!(subgradient_pointwise(0.0, 3.0, 0.1), -1.0);
}

#[test]
fn prox_identity_on_grid() {
    let cfg = ProblemConfig {
        sigma: 0.7,
        nu: 0.3,
        a_lo: -0.9,
        b_hi: 1.4,
        ..Default::default()
    };
    for i in 0..10_000 {
        let p = -5.0 + 10.0 * i as f64 / 9_999.0;
        let lam = subgradient_pointwise(0.0, p, cfg.nu);
        let two_stage = proj_interval(cfg.a_lo, cfg.b_hi, -(p + cfg.nu * lam) / cfg.sigma).unwrap();
        let direct = proj_interval(cfg.a_lo, cfg.b_hi, soft_threshold(-p / cfg.sigma, cfg.nu / cfg.sigma)).unwrap();
        assert!((two_stage - direct).abs() < 1e-13, "p = {p}");
        assert_eq!(direct, optimal_control_pointwise(p, &cfg));
    }
}

fn cfg_strategy() -> impl Strategy<Value = ProblemConfig> {
    (0.01f64..10.0, 0.0f64..5.0, 0.01f64..5.0, 0.01f64..5.0).prop_map(|(sigma, nu, a, b)| ProblemConfig {
        sigma,
        nu,
        a_lo: -a,
        b_hi: b,
        ..Default::default()
    })
}

proptest! {
    #[test]
    fn projection_is_idempotent(lo in -10.0f64..0.0, width in 0.0f64..10.0, w in -50.0f64..50.0) {
        let hi = lo + width;
        let once = proj_interval(lo, hi, w).unwrap();
        prop_assert_eq!(proj_interval(lo, hi, once).unwrap(), once);
        prop_assert!(lo <= once && once <= hi);
    }

    #[test]
    fn control_vanishes_exactly_in_dead_zone(cfg in cfg_strategy(), p in -20.0f64..20.0) {
        let z = optimal_control_pointwise(p, &cfg);
        prop_assert_eq!(z == 0.0, p.abs() <= cfg.nu);
    }

    #[test]
    fn subdifferential_is_monotone(cfg in cfg_strategy(), p1 in -20.0f64..20.0, p2 in -20.0f64..20.0) {
        let (z1, z2) = (optimal_control_pointwise(p1, &cfg), optimal_control_pointwise(p2, &cfg));
        let (l1, l2) = (subgradient_pointwise(z1, p1, cfg.nu), subgradient_pointwise(z2, p2, cfg.nu));
        prop_assert!((l1 - l2) * (z1 - z2) >= -1e-15);
        // the selection is a genuine subgradient of |z|
        for (z, l) in [(z1, l1), (z2, l2)] {
            prop_assert!(l.abs() <= 1.0);
            if z != 0.0 && cfg.nu > 0.0 {
                prop_assert_eq!(l, z.signum());
            }
        }
    }

    #[test]
    fn cost_is_midpoint_convex(
        z1 in prop::collection::vec(-2.0f64..2.0, 6),
        z2 in prop::collection::vec(-2.0f64..2.0, 6),
        cfg in cfg_strategy(),
    ) {
        let base = build_base(1, 1.0, 6).unwrap();
        let cfg = ProblemConfig { desired_state: DesiredState::zero(1.0), ..cfg };
        let u = TraceField::interpolate(&base, |x| (3.0 * x[0]).sin());
        let mid: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| 0.5 * (a + b)).collect();
        let j = |v: &[f64]| cost_j(&u, &ControlField::from_values(&base, v.to_vec()).unwrap(), &cfg, &base).unwrap();
        prop_assert!(j(&mid) <= 0.5 * (j(&z1) + j(&z2)) + 1e-12);
    }
}
