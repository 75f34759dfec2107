use lse_core::energy::{el_gradient, energy_total, PerturbationParams, Potential};
use lse_core::grid::{forward_gradient, integrate, make_grid, neg_laplacian_apply, Field, Grid};
use lse_core::verify::{check_energy_identity, check_log_sobolev, check_scaling};
use proptest::prelude::*;

fn grid_and_values(max_n: usize) -> impl Strategy<Value = (Grid, Vec<f64>, Vec<f64>)> {
    (1usize..=2, 3usize..=max_n, 1.0f64..8.0).prop_flat_map(|(dim, n, l)| {
        let g = make_grid(dim, l, n).unwrap();
        let len = g.len();
        (
            Just(g),
            prop::collection::vec(-3.0f64..3.0, len),
            prop::collection::vec(-3.0f64..3.0, len),
        )
    })
}

fn pairing(g: &Grid, a: &Field, b: &Field) -> f64 {
    integrate(g, &a.hadamard(b).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_is_symmetric_and_matches_dirichlet((g, a, b) in grid_and_values(12)) {
        let u = Field::new(g, a).unwrap();
        let w = Field::new(g, b).unwrap();
        let lu = neg_laplacian_apply(&g, &u).unwrap();
        let lw = neg_laplacian_apply(&g, &w).unwrap();
        let (x, y) = (pairing(&g, &lu, &w), pairing(&g, &u, &lw));
        prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        let du = forward_gradient(&g, &u).unwrap();
        let dirichlet = du.inner(&du).unwrap();
        let quad = pairing(&g, &lu, &u);
        prop_assert!((dirichlet - quad).abs() <= 1e-9 * (1.0 + dirichlet));
    }

    #[test]
    fn energy_is_even_and_gradient_odd(
        (g, a, _) in grid_and_values(12),
        lam in prop::sample::select(vec![0.0, 0.37, 1.0]),
        p in 1.05f64..1.95,
    ) {
        let v = Potential::Harmonic(2.0).shifted(1.0).evaluate(&g).unwrap();
        let params = PerturbationParams::new(lam, p, 1e-10).unwrap();
        let u = Field::new(g, a).unwrap();
        let neg = u.scaled(-1.0);
        let e = energy_total(&g, &v, &u, &params).unwrap();
        prop_assert_eq!(e, energy_total(&g, &v, &neg, &params).unwrap());
        let gu = el_gradient(&g, &v, &u, &params).unwrap();
        let gn = el_gradient(&g, &v, &neg, &params).unwrap();
        prop_assert!(gu.add_scaled(1.0, &gn).unwrap().max_abs() <= 1e-12 * (1.0 + gu.max_abs()));
    }

    #[test]
    fn energy_identity_on_arbitrary_fields(
        (g, a, _) in grid_and_values(16),
        lam in prop::sample::select(vec![0.0, 0.37, 1.0]),
        p in prop::sample::select(vec![1.2, 1.5, 1.9]),
    ) {
        let v = Potential::Quartic(0.5).shifted(0.2).evaluate(&g).unwrap();
        let params = PerturbationParams::new(lam, p, 1e-10).unwrap();
        let r = check_energy_identity(&g, &v, &Field::new(g, a).unwrap(), &params).unwrap();
        prop_assert!(r.passed(), "margin {}", r.margin);
    }

    #[test]
    fn scaling_identity_on_arbitrary_fields(
        (g, a, _) in grid_and_values(16),
        mu in prop::sample::select(vec![0.3, 1.0, -2.0, 5.0]),
    ) {
        let v = Potential::Harmonic(1.0).shifted(0.5).evaluate(&g).unwrap();
        let r = check_scaling(&g, &v, &Field::new(g, a).unwrap(), mu).unwrap();
        prop_assert!(r.passed(), "margin {}", r.margin);
    }

    #[test]
    fn log_sobolev_on_arbitrary_fields(
        (g, a, _) in grid_and_values(40),
        scale in prop::sample::select(vec![1e-3, 1.0, 30.0]),
        param in prop::sample::select(vec![0.5, 1.0, 2.0]),
    ) {
        // a one-node spike breaks the continuum inequality once h > 0.68 a
        prop_assume!(g.spacing() <= 0.5 * param);
        let u = Field::new(g, a).unwrap().scaled(scale);
        prop_assume!(!u.is_zero());
        let r = check_log_sobolev(&g, &u, param).unwrap();
        prop_assert!(r.passed(), "margin {}", r.margin);
    }
}

#[test]
fn log_sobolev_spike_marks_coarse_grid_limit() {
    // per unit mass the spike margin is N (2 a^2 / (pi h^2) + log(h / a) - 1)
    for (n, fails) in [(3, true), (40, false)] {
        let g = make_grid(1, 2.7613451800503044, n).unwrap();
        let mut values = vec![0.0; n];
        values[n - 1] = -2.0;
        let u = Field::new(g, values).unwrap();
        let r = check_log_sobolev(&g, &u, 1.0).unwrap();
        let x = g.spacing();
        let predicted = (2.0 / (std::f64::consts::PI * x * x) + x.ln() - 1.0) * 4.0 * x;
        assert_eq!(!r.passed(), fails, "n {n}: margin {}", r.margin);
        assert!((r.margin - predicted).abs() <= 1e-6 * (1.0 + predicted.abs()), "{} vs {predicted}", r.margin);
    }
}
