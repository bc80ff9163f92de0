//! Monte Carlo estimates of the reserve at time 0 and their comparison with
//! the deterministic solvers.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::ContractSpec;
use crate::modifications::{adjustment_factors, discounted_cashflow, AdjustmentTrace, FrozenValues};
use crate::parallel::map_indexed;
use crate::quadrature::mean_and_stderr;
use crate::simulate::simulate_path_indexed;
use crate::value::ReserveLookup;

/// Smallest sample accepted by the estimators.
pub const MIN_PATHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CashflowKind {
    /// The contract's own payments.
    Plain,
    /// Payments scaled by the adjustment factors of each path.
    Adjusted,
}

impl fmt::Display for CashflowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CashflowKind::Plain => "plain",
            CashflowKind::Adjusted => "adjusted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReserveEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub path_count: usize,
    pub seed: u64,
    pub kind: CashflowKind,
}

impl ReserveEstimate {
    /// `key = value` lines; identical inputs give identical text.
    pub fn report(&self) -> String {
        format!(
            "kind = {}\nmean = {:e}\nstderr = {:e}\nn = {}\nseed = {}\n",
            self.kind, self.mean, self.stderr, self.path_count, self.seed
        )
    }
}

/// Estimates `V(0, x₀, j₀)` from `path_count` simulated paths.
///
/// `frozen` is needed for adjusted cash flows and for reserve-linked
/// surrender payments on single-mode contracts. Paths use the streams
/// `0..path_count` of `seed`.
pub fn estimate_reserve(
    spec: &ContractSpec,
    kind: CashflowKind,
    path_count: usize,
    seed: u64,
    frozen: Option<&FrozenValues>,
) -> Result<ReserveEstimate> {
    match kind {
        CashflowKind::Adjusted => {
            let frozen = frozen.ok_or_else(|| Error::Missing("adjusted cash flows need frozen values".into()))?;
            run(spec, kind, path_count, seed, |path| {
                let trace = adjustment_factors(path, frozen, spec)?;
                discounted_cashflow(path, &trace, spec, Some(frozen))
            })
        }
        CashflowKind::Plain => {
            let reserve: Option<&dyn ReserveLookup> = if spec.has_surrender() {
                let f = frozen.ok_or_else(|| {
                    Error::Missing("surrender payments reference the reserve; pass frozen values".into())
                })?;
                if spec.n_modes() > 1 {
                    return Err(Error::Configuration(
                        "plain cash flows of a multi-mode contract with surrender need the full reserve, not the \
                         frozen ones; use estimate_with_reserve"
                            .into(),
                    ));
                }
                Some(f)
            } else {
                None
            };
            let identity = AdjustmentTrace::identity();
            run(spec, kind, path_count, seed, |path| {
                discounted_cashflow(path, &identity, spec, reserve)
            })
        }
    }
}

/// Plain estimate with reserve-linked payments read from `reserve`.
pub fn estimate_with_reserve(
    spec: &ContractSpec,
    path_count: usize,
    seed: u64,
    reserve: &dyn ReserveLookup,
) -> Result<ReserveEstimate> {
    let identity = AdjustmentTrace::identity();
    run(spec, CashflowKind::Plain, path_count, seed, |path| {
        discounted_cashflow(path, &identity, spec, Some(reserve))
    })
}

fn run<F>(spec: &ContractSpec, kind: CashflowKind, path_count: usize, seed: u64, value: F) -> Result<ReserveEstimate>
where
    F: Fn(&crate::simulate::Path) -> Result<f64> + Sync,
{
    if path_count < MIN_PATHS {
        return Err(Error::Configuration(format!(
            "path_count must be at least {MIN_PATHS}, got {path_count}"
        )));
    }
    let values = map_indexed(path_count, |n| {
        let path = simulate_path_indexed(spec, seed, n as u64, None)?;
        value(&path)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let (mean, stderr) = mean_and_stderr(&values);
    if !mean.is_finite() {
        return Err(Error::NonFinite { time: 0.0 });
    }
    Ok(ReserveEstimate {
        mean,
        stderr,
        path_count,
        seed,
        kind,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub solver: f64,
    pub mean: f64,
    pub stderr: f64,
    /// `(solver − mean)/stderr`; 0 or ±∞ when the standard error is 0.
    pub z: f64,
    pub pass: bool,
}

/// z-score of a solver value against an estimate; passes for `|z| ≤ 3`
/// (exact equality when the standard error is 0).
pub fn compare_to_solver(estimate: &ReserveEstimate, solver_value: f64) -> Comparison {
    let diff = solver_value - estimate.mean;
    let (z, pass) = if estimate.stderr > 0.0 {
        let z = diff / estimate.stderr;
        (z, z.abs() <= 3.0)
    } else if diff == 0.0 {
        (0.0, true)
    } else {
        (diff.signum() * f64::INFINITY, false)
    };
    Comparison {
        solver: solver_value,
        mean: estimate.mean,
        stderr: estimate.stderr,
        z,
        pass,
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "solver = {:.7} mean = {:.7} stderr = {:.2e} z = {:.3} {}",
            self.solver,
            self.mean,
            self.stderr,
            self.z,
            if self.pass { "pass" } else { "fail" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::modifications::frozen_value_functions;

    fn estimate(mean: f64, stderr: f64) -> ReserveEstimate {
        ReserveEstimate {
            mean,
            stderr,
            path_count: 100,
            seed: 0,
            kind: CashflowKind::Plain,
        }
    }

    #[test]
    fn z_scores() {
        let c = compare_to_solver(&estimate(0.0824, 0.0005), 0.08242);
        assert!((c.z - 0.04).abs() < 1e-9 && c.pass);
        let c = compare_to_solver(&estimate(0.05, 0.0005), 0.0824);
        assert!((c.z.abs() - 64.8).abs() < 1e-9 && !c.pass);
        assert!(compare_to_solver(&estimate(0.3, 0.0), 0.3).pass);
        assert!(!compare_to_solver(&estimate(0.3, 0.0), 0.31).pass);
    }

    #[test]
    fn zero_payments_give_zero_estimate() {
        let mut spec = fixtures::term_insurance();
        spec.payments = crate::model::PaymentModel::none();
        let e = estimate_reserve(&spec, CashflowKind::Plain, 500, 1, None).unwrap();
        assert_eq!((e.mean, e.stderr), (0.0, 0.0));
    }

    #[test]
    fn estimates_are_deterministic_and_close() {
        let spec = fixtures::term_insurance();
        let a = estimate_reserve(&spec, CashflowKind::Plain, 5000, 9, None).unwrap();
        let b = estimate_reserve(&spec, CashflowKind::Plain, 5000, 9, None).unwrap();
        assert_eq!(a.report(), b.report());
        let exact = 0.25 * (1.0 - (-0.4f64).exp());
        assert!(compare_to_solver(&a, exact).z.abs() < 4.0);
    }

    #[test]
    fn missing_inputs_are_reported() {
        let spec = fixtures::free_policy();
        assert!(matches!(
            estimate_reserve(&spec, CashflowKind::Adjusted, 100, 1, None),
            Err(Error::Missing(_))
        ));
        let fv = frozen_value_functions(&spec, 1e-2).unwrap();
        assert!(matches!(
            estimate_reserve(&spec, CashflowKind::Plain, 100, 1, Some(&fv)),
            Err(Error::Configuration(_))
        ));
        assert!(estimate_reserve(&fixtures::term_insurance(), CashflowKind::Plain, 10, 1, None).is_err());
    }
}
