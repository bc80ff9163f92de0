use thiele_core::model::PaymentModel;
use thiele_core::quadrature::adaptive_simpson;
use thiele_core::reserve_nonlinear::{solve_nonlinear_markov, solve_nonlinear_markov_with_stats, NonlinearDriver};
use thiele_core::simulate::{Event, EventKind, Path};
use thiele_core::{
    fixtures, load_contract, pathwise_bsde_residual, solve_thiele_markov, solve_thiele_semimarkov, sum_at_risk,
};

fn exit_benefit(mu: f64, r: f64, t: f64) -> f64 {
    mu / r * (1.0 - (-r * t).exp())
}

#[test]
fn term_insurance_and_endowment_closed_forms() {
    let term = solve_thiele_markov(&fixtures::term_insurance(), 1e-3).unwrap();
    assert!((term.value(0.0, 0, 0) - 0.0824200).abs() <= 1e-6);
    assert!((term.value(0.0, 0, 0) - exit_benefit(0.01, 0.04, 10.0)).abs() <= 1e-12);
    let endow = solve_thiele_markov(&fixtures::pure_endowment(), 1e-3).unwrap();
    assert!((endow.value(0.0, 0, 0) - 0.6703200).abs() <= 1e-6);
}

#[test]
fn occupation_probability_quadrature_agrees() {
    // V(0) = ∫ e^{−δs} p(s) μ ds with p(s) = e^{−μs}.
    let (mu, delta) = (0.01, 0.03);
    let q = adaptive_simpson(|s| (-delta * s).exp() * (-mu * s).exp() * mu, 0.0, 10.0, 1e-14);
    let v = solve_thiele_markov(&fixtures::term_insurance(), 1e-3).unwrap();
    assert!((v.value(0.0, 0, 0) - q).abs() <= 1e-8);
}

#[test]
fn zero_payments_and_dead_state_give_zero() {
    let mut spec = fixtures::free_policy();
    spec.payments = PaymentModel::none();
    let v = solve_thiele_markov(&spec, 1e-2).unwrap();
    assert_eq!(v.max_abs(), 0.0);
    let v = solve_thiele_markov(&fixtures::term_insurance(), 1e-2).unwrap();
    assert!((0..=v.steps()).all(|n| v.node(n, 1, 0) == 0.0));
    let mut semi = fixtures::disability();
    semi.payments = PaymentModel::none();
    assert_eq!(solve_thiele_semimarkov(&semi, 0.1, 0.1).unwrap().max_abs(), 0.0);
}

#[test]
fn discount_shift_scales_endowment() {
    let spec = fixtures::pure_endowment();
    let base = solve_thiele_markov(&spec, 1e-3).unwrap().value(0.0, 0, 0);
    for c in [0.01, -0.02, 0.05] {
        let shifted = solve_thiele_markov(&spec.with_discount_shift(c), 1e-3)
            .unwrap()
            .value(0.0, 0, 0);
        let expected = base * (-c * 10.0f64).exp();
        assert!(((shifted - expected) / expected).abs() <= 1e-8, "c = {c}");
    }
}

#[test]
fn sums_at_risk() {
    let spec = fixtures::term_insurance();
    let v = solve_thiele_markov(&spec, 1e-3).unwrap();
    let r = sum_at_risk(&v, &spec);
    assert!((r.state(0.0, 0, 1, 0) - 0.9175800).abs() <= 1e-6);

    let endow = fixtures::pure_endowment();
    let v = solve_thiele_markov(&endow, 1e-3).unwrap();
    assert!((sum_at_risk(&v, &endow).state_left(10.0, 0, 1, 0) + 1.0).abs() < 1e-12);

    // Without transition payments, R_ij = −R_ji.
    let markov = fixtures::DISABILITY
        .replace("duration_decay = 1.0", "")
        .replace("kind = \"semi_markov\"", "kind = \"markov\"");
    let spec = load_contract(&markov).unwrap();
    let v = solve_thiele_markov(&spec, 1e-2).unwrap();
    let r = sum_at_risk(&v, &spec);
    for t in [0.0, 2.5, 7.3] {
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((r.state(t, i, j, 0) + r.state(t, j, i, 0)).abs() < 1e-15);
        }
    }
}

#[test]
fn single_state_without_payments_has_no_sum_at_risk() {
    let text = r#"
horizon = 5.0
[states]
labels = ["only"]
[discount]
breakpoints = [0.0]
values = [0.02]
[[payments.sojourn]]
state = "only"
breakpoints = [0.0]
values = [1.0]
"#;
    let spec = load_contract(text).unwrap();
    let v = solve_thiele_markov(&spec, 1e-2).unwrap();
    let annuity = (1.0 - (-0.1f64).exp()) / 0.02;
    assert!((v.value(0.0, 0, 0) - annuity).abs() < 1e-10);
    assert_eq!(sum_at_risk(&v, &spec).state(1.0, 0, 0, 0), 0.0);
}

#[test]
fn bsde_residual_examples() {
    let h = 1e-3;
    let spec = fixtures::term_insurance();
    let v = solve_thiele_markov(&spec, h).unwrap();
    let mut path = Path::empty(&spec);
    path.events.push(Event {
        time: 3.21,
        kind: EventKind::StateJump,
        from: 0,
        to: 1,
    });
    let r = pathwise_bsde_residual(&path, &v, &spec, h).unwrap();
    assert!(r.jump <= 10.0 * h && r.continuous <= 10.0 * h, "{r:?}");
    // The jump of Y at death equals the sum-at-risk net of the payment.
    let before = v.value_left(3.21, 0, 0);
    let z = sum_at_risk(&v, &spec).state(3.21, 0, 1, 0) - 1.0;
    assert!((-before - z).abs() <= 10.0 * h);

    let mut zero = spec.clone();
    zero.payments = PaymentModel::none();
    let v0 = solve_thiele_markov(&zero, h).unwrap();
    assert_eq!(pathwise_bsde_residual(&path, &v0, &zero, h).unwrap().total(), 0.0);
}

#[test]
fn bsde_residual_on_modal_and_semi_markov_paths() {
    let spec = fixtures::endowment_revival();
    let v = solve_thiele_markov(&spec, 1e-2).unwrap();
    for n in 0..30 {
        let path = thiele_core::simulate::simulate_path_indexed(&spec, 5, n, None).unwrap();
        let r = pathwise_bsde_residual(&path, &v, &spec, 1e-2).unwrap();
        assert!(r.total() < 1e-6, "path {n}: {r:?}");
    }
    let dis = fixtures::disability();
    let v = solve_thiele_semimarkov(&dis, 1e-2, 1e-2).unwrap();
    for n in 0..10 {
        let path = thiele_core::simulate::simulate_path_indexed(&dis, 5, n, None).unwrap();
        let r = pathwise_bsde_residual(&path, &v, &dis, 1e-2).unwrap();
        assert!(r.total() < 1e-4, "path {n}: {r:?}");
    }
}

#[test]
fn surrender_fee_limits() {
    let zero_fee = fixtures::surrender_with_fee(0.0);
    let v = solve_nonlinear_markov(&zero_fee, &NonlinearDriver::zero(), 1e-3, 1e-12, 50).unwrap();
    assert!((v.value(0.0, 0, 0) - exit_benefit(0.01, 0.04, 10.0)).abs() <= 1e-6);
    let full_fee = fixtures::surrender_with_fee(1.0);
    let v = solve_nonlinear_markov(&full_fee, &NonlinearDriver::zero(), 1e-3, 1e-12, 50).unwrap();
    assert!((v.value(0.0, 0, 0) - exit_benefit(0.01, 0.09, 10.0)).abs() <= 1e-6);
}

#[test]
fn picard_iteration_is_stable_and_contracting() {
    let spec = fixtures::surrender();
    let d = NonlinearDriver::zero();
    let (a, stats) = solve_nonlinear_markov_with_stats(&spec, &d, 1e-3, 1e-10, 20).unwrap();
    let b = solve_nonlinear_markov(&spec, &d, 1e-3, 1e-10, 40).unwrap();
    assert!(a.max_diff(&b).unwrap() <= 1e-10);
    assert!(stats.max_contraction <= 0.5, "{stats:?}");
    assert!(stats.max_iterations >= 2);
}

#[test]
fn nonlinear_driver_in_z_converges() {
    // Premium refund of 10% of the death sum-at-risk, paid continuously.
    let spec = fixtures::term_insurance();
    let d = NonlinearDriver::sojourn(
        std::sync::Arc::new(|_, i, _, _, _, z| if i == 0 { 0.1 * 0.01 * z.state[1] } else { 0.0 }),
        0.1,
    );
    let v = solve_nonlinear_markov(&spec, &d, 1e-2, 1e-13, 50).unwrap();
    // Equivalent to a linear contract with benefit 1 and extra rate 0.001·(0 − V).
    let r = 0.04 + 0.001;
    let oracle = 0.01 / r * (1.0 - (-r * 10.0f64).exp());
    assert!((v.value(0.0, 0, 0) - oracle).abs() < 1e-8, "{}", v.value(0.0, 0, 0));
}
