use thiele_core::model::PaymentModel;
use thiele_core::modifications::{
    adjusted_cashflow_value, adjustment_factors, adjustment_factors_capped, cantelli_residual, discounted_cashflow,
    frozen_value_functions, uniform_grid, AdjustmentRule, AdjustmentTrace,
};
use thiele_core::simulate::{simulate_path_indexed, Event, EventKind, Path};
use thiele_core::{fixtures, load_contract, solve_thiele_markov, Error};

/// Frozen reserve of the free-policy example in state alive, mode `k`.
/// Mode 0 nets `μ − π = −0.01` per year, mode 1 nets `μ = 0.01`; both face
/// the effective exit rate `δ + μ + κσ = 0.045`.
fn frozen_oracle(k: usize, t: f64) -> f64 {
    let net = if k == 0 { -0.01 } else { 0.01 };
    net / 0.045 * (1.0 - (-0.045 * (10.0 - t)).exp())
}

fn path_with(spec: &thiele_core::ContractSpec, events: &[(f64, EventKind, usize, usize)]) -> Path {
    let mut p = Path::empty(spec);
    for &(time, kind, from, to) in events {
        p.events.push(Event { time, kind, from, to });
    }
    p
}

#[test]
fn frozen_values_of_the_free_policy_example() {
    let spec = fixtures::free_policy();
    let frozen = frozen_value_functions(&spec, 1e-3).unwrap();
    assert!((frozen.value(0, 0.0, 0) - (-0.0805270)).abs() <= 1e-6);
    for t in [0.0, 1.7, 4.0, 9.99] {
        for k in 0..2 {
            assert!(
                (frozen.value(k, t, 0) - frozen_oracle(k, t)).abs() <= 1e-9,
                "k = {k}, t = {t}"
            );
        }
    }
}

#[test]
fn zero_payments_freeze_to_zero_and_single_mode_matches_solver() {
    let mut spec = fixtures::free_policy();
    spec.payments = PaymentModel::none();
    let frozen = frozen_value_functions(&spec, 1e-2).unwrap();
    assert!((0..2).all(|k| frozen.mode(k).max_abs() == 0.0));

    let term = fixtures::term_insurance();
    let frozen = frozen_value_functions(&term, 1e-2).unwrap();
    let v = solve_thiele_markov(&term, 1e-2).unwrap();
    assert_eq!(frozen.mode(0).max_diff(&v).unwrap(), 0.0);
}

#[test]
fn semi_markov_contracts_are_not_frozen() {
    assert!(matches!(
        frozen_value_functions(&fixtures::disability(), 1e-2),
        Err(Error::Configuration(_))
    ));
}

#[test]
fn free_policy_factor_and_unadjusted_residual() {
    let spec = fixtures::free_policy();
    let frozen = frozen_value_functions(&spec, 1e-3).unwrap();
    let tau = 3.5;
    let path = path_with(&spec, &[(tau, EventKind::ModeJump, 0, 1)]);
    let trace = adjustment_factors(&path, &frozen, &spec).unwrap();
    assert_eq!(trace.len(), 1);
    let oracle = frozen_oracle(0, tau) / frozen_oracle(1, tau);
    assert!((trace.records[0].rho - oracle).abs() <= 1e-8);
    assert!(trace.records[0].rho < 0.0);

    let grid = uniform_grid(spec.horizon, 1e-2).unwrap();
    let unadjusted = cantelli_residual(&frozen, &spec, &grid, AdjustmentRule::Unadjusted);
    let gap = grid
        .iter()
        .map(|&t| (frozen_oracle(0, t) - frozen_oracle(1, t)).abs())
        .fold(0.0, f64::max);
    assert!((unadjusted - gap).abs() <= 1e-8 && gap > 0.16);
    assert!(cantelli_residual(&frozen, &spec, &grid, AdjustmentRule::Cantelli) <= 1e-12);
}

#[test]
fn path_without_mode_jumps_keeps_the_original_cash_flow() {
    let spec = fixtures::free_policy();
    let frozen = frozen_value_functions(&spec, 1e-3).unwrap();
    let path = Path::empty(&spec);
    let trace = adjustment_factors(&path, &frozen, &spec).unwrap();
    assert!(trace.is_empty());
    let adjusted = adjusted_cashflow_value(&path, &trace, &spec, Some(&frozen)).unwrap();
    let plain = discounted_cashflow(&path, &AdjustmentTrace::identity(), &spec, Some(&frozen)).unwrap();
    assert_eq!(adjusted, plain);
    let premiums = -0.02 * (1.0 - (-0.3f64).exp()) / 0.03;
    assert!((adjusted - premiums).abs() <= 1e-10);
}

#[test]
fn surrender_pays_the_fraction_of_the_frozen_reserve() {
    let spec = fixtures::free_policy();
    let frozen = frozen_value_functions(&spec, 1e-3).unwrap();
    let s = 2.25;
    let path = path_with(&spec, &[(s, EventKind::StateJump, 0, 2)]);
    let trace = adjustment_factors(&path, &frozen, &spec).unwrap();
    let value = adjusted_cashflow_value(&path, &trace, &spec, Some(&frozen)).unwrap();
    let premiums = -0.02 * (1.0 - (-0.03 * s).exp()) / 0.03;
    let payout = (-0.03 * s).exp() * 0.9 * frozen_oracle(0, s);
    assert!((value - premiums - payout).abs() <= 1e-9, "{value}");
    assert!(adjusted_cashflow_value(&path, &trace, &spec, None).is_err());
}

#[test]
fn payments_after_a_modification_carry_the_factor() {
    let spec = fixtures::free_policy();
    let frozen = frozen_value_functions(&spec, 1e-3).unwrap();
    let (tau, death) = (1.0, 4.0);
    let path = path_with(
        &spec,
        &[(tau, EventKind::ModeJump, 0, 1), (death, EventKind::StateJump, 0, 1)],
    );
    let trace = adjustment_factors(&path, &frozen, &spec).unwrap();
    let rho = frozen_oracle(0, tau) / frozen_oracle(1, tau);
    let value = adjusted_cashflow_value(&path, &trace, &spec, Some(&frozen)).unwrap();
    let premiums = -0.02 * (1.0 - (-0.03 * tau).exp()) / 0.03;
    let benefit = rho * (-0.03 * death).exp();
    assert!((value - premiums - benefit).abs() <= 1e-8, "{value}");
}

#[test]
fn finitely_many_modifications() {
    // Mode rate 0.1 each way on [0, 10]: at most Poisson(1) mode jumps.
    let text = fixtures::ENDOWMENT_REVIVAL
        .replace("values = [0.08]", "values = [0.1]")
        .replace("values = [0.15]", "values = [0.1]");
    let spec = load_contract(&text).unwrap();
    let mut term = (-1.0f64).exp();
    let mut tail = 0.0;
    for n in 1..=60 {
        term /= n as f64;
        if n > 20 {
            tail += term;
        }
    }
    assert!(tail < 1e-12);

    let frozen = frozen_value_functions(&spec, 1e-2).unwrap();
    let mut most = 0;
    for n in 0..20_000 {
        let path = simulate_path_indexed(&spec, 11, n, None).unwrap();
        most = most.max(path.mode_jumps().count());
        let trace = adjustment_factors(&path, &frozen, &spec).unwrap();
        assert_eq!(trace.len(), path.mode_jumps().count());
        assert!(trace.records.windows(2).all(|w| w[0].tau < w[1].tau));
    }
    assert!((1..=20).contains(&most), "{most}");

    let busy = (0..1_000)
        .map(|n| simulate_path_indexed(&spec, 12, n, None).unwrap())
        .find(|p| p.mode_jumps().count() >= 3)
        .unwrap();
    assert!(matches!(
        adjustment_factors_capped(&busy, &frozen, &spec, 2),
        Err(Error::TooManyModifications { cap: 2 })
    ));
    let limited = simulate_path_indexed(&spec, 12, 0, Some(1)).unwrap();
    assert!(limited.mode_jumps().count() <= 1);
}
