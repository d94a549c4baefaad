use feeder::exec::Execution;
use feeder::netmodel::BusId;
use feeder::uncertainty::*;
use proptest::prelude::*;

fn model(mean: f64, sigma: f64, eps: f64) -> UncertaintyModel {
    let mut m = UncertaintyModel::new(eps);
    m.insert(BusId(2), PvForecast { mean, sigma, lo: 0.0, hi: 10.0 });
    m
}

proptest! {
    #[test]
    fn quantile_inverts_cdf(p in 1e-6f64..(1.0 - 1e-6)) {
        let x = inv_norm_cdf(p).unwrap();
        prop_assert!((norm_cdf(x) - p).abs() < 1e-12);
    }

    #[test]
    fn tighter_eps_shrinks_margin(c in -2.0f64..2.0, mu in -1.0f64..1.0, sigma in 0.0f64..0.5, b in -1.0f64..1.0,
                                  e1 in 0.001f64..0.49, e2 in 0.001f64..0.49) {
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(tighten_scalar(c, mu, sigma, b, lo).unwrap() <= tighten_scalar(c, mu, sigma, b, hi).unwrap());
        // Zero variance leaves the deterministic margin.
        prop_assert_eq!(tighten_scalar(c, mu, 0.0, b, lo).unwrap(), b - c * mu);
    }

    #[test]
    fn soc_margin_matches_scalar_form(c in -2.0f64..2.0, mu in -1.0f64..1.0, sigma in 0.0f64..0.5, b in -1.0f64..1.0, eps in 0.001f64..0.49) {
        let soc = soc_margin(&[c], &[mu], &[vec![sigma * sigma]], b, eps).unwrap();
        prop_assert!((soc - tighten_scalar(c, mu, sigma, b, eps).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn analytic_violation_equals_eps_on_a_tight_row(mu in 0.1f64..1.0, frac in 0.01f64..0.3, eps in 0.01f64..0.4) {
        // Row −p + (μ − zσ) ≤ 0 holds with probability exactly 1 − ε.
        let m = model(mu, frac * mu, eps);
        let z = quantile(eps).unwrap();
        let row = GaussianRow { label: "t".into(), terms: vec![(BusId(2), -1.0)], constant: mu - z * frac * mu, enforced: true };
        prop_assert!((row.analytic_violation(&m).unwrap() - eps).abs() < 1e-9);
        prop_assert!(row.analytic_margin(&m, eps).unwrap().abs() < 1e-12);
    }
}

#[test]
fn monte_carlo_is_repeatable_and_worker_independent() {
    let m = model(0.5, 0.05, 0.05);
    let z = quantile(0.05).unwrap();
    let row = GaussianRow { label: "t".into(), terms: vec![(BusId(2), -1.0)], constant: 0.5 - z * 0.05, enforced: true };
    let a = monte_carlo_violation(&m, std::slice::from_ref(&row), 50_000, 9, Execution::Sequential).unwrap();
    let b = monte_carlo_violation(&m, std::slice::from_ref(&row), 50_000, 9, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert!(a[0].passes(0.05), "{:?}", a[0]);
    let c = monte_carlo_violation(&m, &[row], 50_000, 10, Execution::Sequential).unwrap();
    assert_ne!(a[0].violations, c[0].violations);
}

#[test]
fn pf_capability_example() {
    // cos φ = 0.9, μ = 1, σ = 0.1, ε = 0.05 → 0.9 (1 − 1.6449·0.1).
    let m = model(1.0, 0.1, 0.05);
    let cap = pf_capability(BusId(2), &m, 0.9).unwrap();
    assert!((cap - 0.9 * (1.0 - 0.164_485_362_695_147_2)).abs() < 1e-9);
}
