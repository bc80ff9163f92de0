use thiele_core::fixtures;
use thiele_core::modifications::frozen_value_functions;
use thiele_core::montecarlo::{compare_to_solver, estimate_reserve, estimate_with_reserve, CashflowKind};
use thiele_core::reserve_nonlinear::{solve_nonlinear_markov, NonlinearDriver};

fn term_exact() -> f64 {
    0.01 / 0.04 * (1.0 - (-0.4f64).exp())
}

#[test]
fn two_stderr_coverage_over_fifty_seeds() {
    let spec = fixtures::term_insurance();
    let exact = term_exact();
    let hits = (0..50)
        .filter(|&seed| {
            let e = estimate_reserve(&spec, CashflowKind::Plain, 10_000, 1_000 + seed, None).unwrap();
            (e.mean - exact).abs() <= 2.0 * e.stderr
        })
        .count();
    assert!(hits as f64 / 50.0 >= 0.90, "{hits}/50");
}

#[test]
fn disjoint_seeds_agree_within_pooled_error() {
    let spec = fixtures::pure_endowment();
    let a = estimate_reserve(&spec, CashflowKind::Plain, 20_000, 1, None).unwrap();
    let b = estimate_reserve(&spec, CashflowKind::Plain, 20_000, 2, None).unwrap();
    assert_ne!(a.mean, b.mean);
    let z = (a.mean - b.mean) / (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    assert!(z.abs() <= 4.0, "z = {z}");
}

#[test]
fn identical_requests_give_identical_reports() {
    let spec = fixtures::endowment_revival();
    let frozen = frozen_value_functions(&spec, 1e-2).unwrap();
    let run = || estimate_reserve(&spec, CashflowKind::Adjusted, 3_000, 99, Some(&frozen)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.report(), b.report());
    assert!(a.report().starts_with("kind = adjusted\n"));
    assert!(a.stderr > 0.0 && a.mean.is_finite());
}

#[test]
fn surrender_estimate_matches_nonlinear_solver() {
    let spec = fixtures::surrender();
    let v = solve_nonlinear_markov(&spec, &NonlinearDriver::zero(), 1e-3, 1e-12, 50).unwrap();
    let e = estimate_with_reserve(&spec, 20_000, 5, &v).unwrap();
    let c = compare_to_solver(&e, 0.01 / 0.045 * (1.0 - (-0.45f64).exp()));
    assert!(c.z.abs() <= 4.0, "{c}");
}
