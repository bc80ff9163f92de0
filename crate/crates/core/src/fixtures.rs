//! Reference contracts shipped with the crate, all expressed as contract
//! documents and loaded through [`load_contract`](crate::config::load_contract).

use crate::config::load_contract;
use crate::model::ContractSpec;

pub const TERM_INSURANCE: &str = include_str!("../fixtures/term_insurance.toml");
pub const PURE_ENDOWMENT: &str = include_str!("../fixtures/pure_endowment.toml");
pub const SURRENDER: &str = include_str!("../fixtures/surrender.toml");
pub const DISABILITY: &str = include_str!("../fixtures/disability.toml");
pub const FREE_POLICY: &str = include_str!("../fixtures/free_policy.toml");
pub const ENDOWMENT_REVIVAL: &str = include_str!("../fixtures/endowment_revival.toml");

/// Name and document of every shipped fixture.
pub const ALL: [(&str, &str); 6] = [
    ("term_insurance", TERM_INSURANCE),
    ("pure_endowment", PURE_ENDOWMENT),
    ("surrender", SURRENDER),
    ("disability", DISABILITY),
    ("free_policy", FREE_POLICY),
    ("endowment_revival", ENDOWMENT_REVIVAL),
];

fn load(text: &str) -> ContractSpec {
    load_contract(text).expect("shipped fixture must load")
}

/// Alive/dead, constant mortality 0.01, δ = 0.03, death benefit 1, T = 10.
pub fn term_insurance() -> ContractSpec {
    load(TERM_INSURANCE)
}

/// Term insurance with the given mortality and discount rate.
pub fn term_insurance_with(mu: f64, delta: f64) -> ContractSpec {
    load(&format!(
        r#"
horizon = 10.0
[states]
labels = ["alive", "dead"]
[discount]
breakpoints = [0.0]
values = [{delta:?}]
[[intensities]]
from_state = "alive"
to_state = "dead"
breakpoints = [0.0]
values = [{mu:?}]
[[payments.transition]]
from_state = "alive"
to_state = "dead"
breakpoints = [0.0]
values = [1.0]
"#
    ))
}

/// Endowment of 1 at T = 10 on survival, mortality 0.01, δ = 0.03.
pub fn pure_endowment() -> ContractSpec {
    load(PURE_ENDOWMENT)
}

/// Term insurance with surrender at rate 0.05 paying `(1 − κ)·Y(t−)`, κ = 0.1.
pub fn surrender() -> ContractSpec {
    load(SURRENDER)
}

/// The surrender contract with a different lapse fee `κ`.
pub fn surrender_with_fee(kappa: f64) -> ContractSpec {
    let fraction = 1.0 - kappa;
    load(&SURRENDER.replace("fraction = 0.9", &format!("fraction = {fraction:?}")))
}

/// Semi-Markov disability annuity (rate 1 while disabled), recovery
/// intensity `0.1·e^{−u}`.
pub fn disability() -> ContractSpec {
    load(DISABILITY)
}

/// Premium-paying survival contract with surrender and a free-policy option.
pub fn free_policy() -> ContractSpec {
    load(FREE_POLICY)
}

/// Endowment with conversion to free policy and back, each with a fee.
pub fn endowment_revival() -> ContractSpec {
    load(ENDOWMENT_REVIVAL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_assumptions;

    #[test]
    fn every_fixture_loads_and_validates() {
        for (name, text) in ALL {
            let spec = load_contract(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            let report = validate_assumptions(&spec, 200);
            assert!(report.all_passed(), "{name}:\n{report}");
        }
    }

    #[test]
    fn free_policy_has_three_states_two_modes() {
        let spec = free_policy();
        assert_eq!(spec.n_states(), 3);
        assert_eq!(spec.n_modes(), 2);
        assert_eq!(spec.modes.labels(), ["premium", "free"]);
    }
}
