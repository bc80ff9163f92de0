//! Browser front end: reserve curves, adjustment factors and a Monte Carlo
//! check for a contract pasted into the page. The plain functions do the work
//! and are tested natively; the `#[wasm_bindgen]` wrappers only convert types.

use thiele_core::modifications::{equivalence_ratio, frozen_value_functions};
use thiele_core::montecarlo::{compare_to_solver, estimate_reserve, estimate_with_reserve, CashflowKind};
use thiele_core::{fixtures, load_contract, solve_thiele_markov, solve_thiele_semimarkov, ContractSpec, ModelKind};
use wasm_bindgen::prelude::*;

/// Largest number of solver nodes the page will ask for.
const NODE_BUDGET: f64 = 2e7;

/// Curves sharing one time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McCheck {
    pub solver: f64,
    pub mean: f64,
    pub stderr: f64,
    pub z: f64,
}

fn parse(contract: &str) -> Result<ContractSpec, String> {
    load_contract(contract).map_err(|e| e.to_string())
}

fn check_budget(spec: &ContractSpec, step: f64) -> Result<(), String> {
    if !(step.is_finite() && step > 0.0) {
        return Err(format!("step must be positive, got {step}"));
    }
    let n = spec.horizon / step;
    let nodes = match spec.kind() {
        ModelKind::Markov => n * (spec.n_states() * spec.n_modes()) as f64,
        ModelKind::SemiMarkov => 0.5 * n * n * (spec.n_states() * spec.n_modes()) as f64,
    };
    if nodes > NODE_BUDGET {
        return Err(format!("step {step} needs about {nodes:.1e} nodes; use a coarser step"));
    }
    Ok(())
}

fn sample_times(horizon: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points).map(|n| horizon * n as f64 / (points - 1) as f64).collect()
}

/// `V(t, i, j₀)` for every state `i` in the initial mode (duration 0 for
/// semi-Markov contracts).
pub fn reserve_curves(contract: &str, step: f64, points: usize) -> Result<Curves, String> {
    let spec = parse(contract)?;
    check_budget(&spec, step)?;
    let v = match spec.kind() {
        ModelKind::Markov => solve_thiele_markov(&spec, step),
        ModelKind::SemiMarkov => solve_thiele_semimarkov(&spec, step, step),
    }
    .map_err(|e| e.to_string())?;
    let times = sample_times(spec.horizon, points);
    let k = spec.modes.initial();
    let values = (0..spec.n_states())
        .map(|i| times.iter().map(|&t| v.value_at(t, i, k, 0.0)).collect())
        .collect();
    Ok(Curves {
        labels: spec.states.labels().to_vec(),
        times,
        values,
    })
}

/// Factor `ρ(t) = (V_k(t−) − β̄_kl(t)) / V_l(t)` a first modification `k → l`
/// at `t` would set, in the initial state, for every mode pair that can occur.
/// Times where no factor exists are `NaN`.
pub fn adjustment_curves(contract: &str, step: f64, points: usize) -> Result<Curves, String> {
    let spec = parse(contract)?;
    if spec.n_modes() < 2 {
        return Err("the contract has a single mode; there is nothing to adjust".into());
    }
    check_budget(&spec, step)?;
    let frozen = frozen_value_functions(&spec, step).map_err(|e| e.to_string())?;
    let i = spec.states.initial();
    let times: Vec<f64> = sample_times(spec.horizon, points + 1);
    let times = times[..times.len() - 1].to_vec();
    let modes = spec.modes.labels();
    let (mut labels, mut values) = (Vec::new(), Vec::new());
    for k in 0..spec.n_modes() {
        for l in 0..spec.n_modes() {
            if k == l || times.iter().all(|&t| spec.mode_rate(t, k, l, i) == 0.0) {
                continue;
            }
            labels.push(format!("{} → {}", modes[k], modes[l]));
            values.push(
                times
                    .iter()
                    .map(|&t| {
                        let num = frozen.value_left(k, t, i) - spec.mode_payment(t, k, l, i, 0.0);
                        equivalence_ratio(num, frozen.value(l, t, i), t).unwrap_or(f64::NAN)
                    })
                    .collect(),
            );
        }
    }
    Ok(Curves { labels, times, values })
}

/// Monte Carlo estimate of the time-zero reserve against the solver. Contracts
/// with modifications are valued with the adjusted cash flow.
pub fn monte_carlo_check(contract: &str, step: f64, paths: usize, seed: u64) -> Result<McCheck, String> {
    let spec = parse(contract)?;
    check_budget(&spec, step)?;
    let err = |e: thiele_core::Error| e.to_string();
    let (i, k) = (spec.states.initial(), spec.modes.initial());
    let (e, solver) = match spec.kind() {
        ModelKind::SemiMarkov => {
            let v = solve_thiele_semimarkov(&spec, step, step).map_err(err)?;
            let e = estimate_reserve(&spec, CashflowKind::Plain, paths, seed, None).map_err(err)?;
            (e, v.value_at(0.0, i, k, 0.0))
        }
        ModelKind::Markov if spec.n_modes() > 1 => {
            let frozen = frozen_value_functions(&spec, step).map_err(err)?;
            let e = estimate_reserve(&spec, CashflowKind::Adjusted, paths, seed, Some(&frozen)).map_err(err)?;
            (e, frozen.value(k, 0.0, i))
        }
        ModelKind::Markov => {
            let v = solve_thiele_markov(&spec, step).map_err(err)?;
            let e = estimate_with_reserve(&spec, paths, seed, &v).map_err(err)?;
            (e, v.value(0.0, i, k))
        }
    };
    let c = compare_to_solver(&e, solver);
    Ok(McCheck {
        solver,
        mean: c.mean,
        stderr: c.stderr,
        z: c.z,
    })
}

#[wasm_bindgen]
pub struct Series {
    inner: Curves,
}

#[wasm_bindgen]
impl Series {
    pub fn labels(&self) -> Vec<String> {
        self.inner.labels.clone()
    }

    pub fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    pub fn count(&self) -> usize {
        self.inner.values.len()
    }

    pub fn values(&self, n: usize) -> Vec<f64> {
        self.inner.values.get(n).cloned().unwrap_or_default()
    }
}

#[wasm_bindgen(js_name = fixtureNames)]
pub fn fixture_names() -> Vec<String> {
    fixtures::ALL.iter().map(|(name, _)| name.to_string()).collect()
}

#[wasm_bindgen]
pub fn fixture(name: &str) -> Option<String> {
    fixtures::ALL
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| text.to_string())
}

#[wasm_bindgen(js_name = reserveCurves)]
pub fn reserve_curves_js(contract: &str, step: f64, points: usize) -> Result<Series, JsError> {
    reserve_curves(contract, step, points)
        .map(|inner| Series { inner })
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = adjustmentCurves)]
pub fn adjustment_curves_js(contract: &str, step: f64, points: usize) -> Result<Series, JsError> {
    adjustment_curves(contract, step, points)
        .map(|inner| Series { inner })
        .map_err(|e| JsError::new(&e))
}

/// `[solver, mean, stderr, z]`.
#[wasm_bindgen(js_name = monteCarloCheck)]
pub fn monte_carlo_check_js(contract: &str, step: f64, paths: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    monte_carlo_check(contract, step, paths, seed)
        .map(|c| vec![c.solver, c.mean, c.stderr, c.z])
        .map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_insurance_curve_starts_at_the_closed_form() {
        let c = reserve_curves(fixtures::TERM_INSURANCE, 1e-2, 11).unwrap();
        assert_eq!(c.labels, ["alive", "dead"]);
        assert_eq!(c.times.len(), 11);
        let exact = 0.25 * (1.0 - (-0.4f64).exp());
        assert!((c.values[0][0] - exact).abs() < 1e-9);
        assert_eq!(c.values[0][10], 0.0);
        assert!(c.values[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn free_policy_factor_is_minus_one() {
        // Mode values are ±0.01/0.045·(1 − e^{−0.045(T−t)}).
        let c = adjustment_curves(fixtures::FREE_POLICY, 1e-2, 50).unwrap();
        assert_eq!(c.labels, ["premium → free"]);
        assert!(c.times.iter().all(|&t| t < 10.0));
        assert!(c.values[0].iter().all(|&r| (r + 1.0).abs() < 1e-9));
        assert!(adjustment_curves(fixtures::TERM_INSURANCE, 1e-2, 10).is_err());
    }

    #[test]
    fn monte_carlo_agrees_with_solver() {
        for text in [
            fixtures::TERM_INSURANCE,
            fixtures::SURRENDER,
            fixtures::ENDOWMENT_REVIVAL,
        ] {
            let c = monte_carlo_check(text, 1e-2, 20_000, 4).unwrap();
            assert!(c.z.abs() <= 4.0, "{c:?}");
        }
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(reserve_curves("horizon = ", 1e-2, 10).is_err());
        assert!(reserve_curves(fixtures::TERM_INSURANCE, 0.0, 10).is_err());
        assert!(reserve_curves(fixtures::DISABILITY, 1e-4, 10).is_err());
        assert_eq!(fixture_names().len(), fixtures::ALL.len());
        assert!(fixture("no_such").is_none());
    }
}
