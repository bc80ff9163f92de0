use proptest::prelude::*;
use thiele_core::simulate::{simulate_path_indexed, EventKind};
use thiele_core::{fixtures, load_contract, solve_thiele_markov};

fn term_with_benefit(b: f64) -> thiele_core::ContractSpec {
    let text = fixtures::TERM_INSURANCE.replace("values = [1.0]", &format!("values = [{b:?}]"));
    load_contract(&text).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn simulated_paths_are_well_formed(seed in any::<u64>(), index in 0u64..1_000, which in 0usize..fixtures::ALL.len()) {
        let spec = load_contract(fixtures::ALL[which].1).unwrap();
        let path = simulate_path_indexed(&spec, seed, index, None).unwrap();
        prop_assert!(path.check_invariants(spec.n_states(), spec.n_modes()).is_ok());
        prop_assert!(path.events.windows(2).all(|w| w[0].time < w[1].time));
        prop_assert!(path.events.iter().all(|e| e.time > 0.0 && e.time <= spec.horizon && e.from != e.to));
        let (mut state, mut mode) = (path.initial_state, path.initial_mode);
        for e in &path.events {
            match e.kind {
                EventKind::StateJump => {
                    prop_assert_eq!(e.from, state);
                    state = e.to;
                }
                EventKind::ModeJump => {
                    prop_assert_eq!(e.from, mode);
                    mode = e.to;
                }
            }
        }
        let again = simulate_path_indexed(&spec, seed, index, None).unwrap();
        prop_assert_eq!(path, again);
    }

    #[test]
    fn reserve_increases_with_the_death_benefit(b in 0.0f64..5.0, extra in 0.01f64..2.0) {
        let low = solve_thiele_markov(&term_with_benefit(b), 1e-2).unwrap().value(0.0, 0, 0);
        let high = solve_thiele_markov(&term_with_benefit(b + extra), 1e-2).unwrap().value(0.0, 0, 0);
        prop_assert!(high > low);
        let unit = 0.01 / 0.04 * (1.0 - (-0.4f64).exp());
        prop_assert!((high - low - extra * unit).abs() <= 1e-9);
    }

    #[test]
    fn discount_shift_scales_a_survival_benefit(c in -0.02f64..0.05) {
        let spec = fixtures::pure_endowment();
        let base = solve_thiele_markov(&spec, 1e-2).unwrap().value(0.0, 0, 0);
        let shifted = solve_thiele_markov(&spec.with_discount_shift(c), 1e-2).unwrap().value(0.0, 0, 0);
        prop_assert!((shifted - base * (-c * 10.0f64).exp()).abs() <= 1e-9 * base);
    }
}
