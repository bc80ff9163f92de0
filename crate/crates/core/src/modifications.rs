//! Contract modifications: frozen-mode reserves, adjustment factors, adjusted
//! cash flows and checks of the equivalence condition.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{ContractSpec, ModelKind};
use crate::quadrature::integrate_pieces;
use crate::reserve_linear::solve_thiele_markov;
use crate::reserve_nonlinear::{solve_nonlinear_markov, ModeCoupling, NonlinearDriver};
use crate::simulate::{EventKind, Path};
use crate::value::{ReserveLookup, TimeGrid, ValueFunction};

/// Reserves this small are treated as zero when forming adjustment factors.
pub const NEGLIGIBLE_RESERVE: f64 = 1e-13;

/// Default cap on the number of modifications per path.
pub const DEFAULT_MODIFICATION_CAP: usize = 100;

const CASHFLOW_REL_TOL: f64 = 1e-10;

/// One reserve per mode, each solved with the mode frozen (no further mode jumps).
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenValues {
    per_mode: Vec<ValueFunction>,
}

impl FrozenValues {
    pub fn n_modes(&self) -> usize {
        self.per_mode.len()
    }

    pub fn mode(&self, k: usize) -> &ValueFunction {
        &self.per_mode[k]
    }

    /// `V_k(t, i)`.
    pub fn value(&self, k: usize, t: f64, i: usize) -> f64 {
        self.per_mode[k].value(t, i, 0)
    }

    /// `V_k(t−, i)`.
    pub fn value_left(&self, k: usize, t: f64, i: usize) -> f64 {
        self.per_mode[k].value_left(t, i, 0)
    }

    pub fn horizon(&self) -> f64 {
        self.per_mode[0].horizon()
    }
}

impl ReserveLookup for FrozenValues {
    fn reserve_before(&self, t: f64, state: usize, mode: usize, _duration: f64) -> f64 {
        self.value_left(mode, t, state)
    }
}

/// Solves the single-mode restriction of `spec` for every mode.
pub fn frozen_value_functions(spec: &ContractSpec, step: f64) -> Result<FrozenValues> {
    if spec.kind() != ModelKind::Markov {
        return Err(Error::Configuration(
            "frozen value functions need a markov contract; semi-markov modifications are valued by simulation only"
                .into(),
        ));
    }
    let per_mode = (0..spec.n_modes())
        .map(|k| solve_thiele_markov(&spec.restrict_to_mode(k)?, step))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrozenValues { per_mode })
}

/// `num / den` under the convention `0/0 := 1`.
pub fn equivalence_ratio(num: f64, den: f64, tau: f64) -> Result<f64> {
    if den.abs() <= NEGLIGIBLE_RESERVE {
        if num.abs() <= NEGLIGIBLE_RESERVE {
            return Ok(1.0);
        }
        return Err(Error::EquivalenceInfeasible {
            time: tau,
            numerator: num,
        });
    }
    Ok(num / den)
}

/// The factor set at one modification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adjustment {
    pub tau: f64,
    pub from_mode: usize,
    pub to_mode: usize,
    pub state: usize,
    pub rho: f64,
}

/// Adjustment factors along one path, in time order.
///
/// Payments on `(0, τ₁]` carry factor 1; payments on `(τ_m, τ_{m+1}]` carry `ρ_m`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdjustmentTrace {
    pub records: Vec<Adjustment>,
}

impl AdjustmentTrace {
    /// No adjustment at all.
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Factor applied to a payment due at `t`: the last `ρ` with `τ < t`.
    pub fn payment_factor(&self, t: f64) -> f64 {
        let n = self.records.partition_point(|r| r.tau < t);
        if n == 0 {
            1.0
        } else {
            self.records[n - 1].rho
        }
    }

    /// Factor in force at `t` for the reserve process: the last `ρ` with `τ ≤ t`.
    pub fn factor_at(&self, t: f64) -> f64 {
        let n = self.records.partition_point(|r| r.tau <= t);
        if n == 0 {
            1.0
        } else {
            self.records[n - 1].rho
        }
    }
}

/// Writes `path_id,m,tau,from_mode,to_mode,state,rho` rows.
pub fn write_traces<'a, W: Write>(
    out: &mut W,
    traces: impl IntoIterator<Item = (usize, &'a AdjustmentTrace)>,
) -> std::io::Result<()> {
    writeln!(out, "path_id,m,tau,from_mode,to_mode,state,rho")?;
    for (id, trace) in traces {
        for (m, r) in trace.records.iter().enumerate() {
            writeln!(
                out,
                "{id},{},{},{},{},{},{}",
                m + 1,
                r.tau,
                r.from_mode,
                r.to_mode,
                r.state,
                r.rho
            )?;
        }
    }
    Ok(())
}

fn check_path(path: &Path, frozen: &FrozenValues, spec: &ContractSpec) -> Result<()> {
    if frozen.n_modes() != spec.n_modes() {
        return Err(Error::Mismatch(format!(
            "frozen values cover {} modes, contract has {}",
            frozen.n_modes(),
            spec.n_modes()
        )));
    }
    if (path.horizon - spec.horizon).abs() > 1e-12 || (frozen.horizon() - spec.horizon).abs() > 1e-12 {
        return Err(Error::Mismatch(
            "path, frozen values and contract disagree on the horizon".into(),
        ));
    }
    path.check_invariants(spec.n_states(), spec.n_modes())
}

/// Adjustment factors along `path` with the default cap.
pub fn adjustment_factors(path: &Path, frozen: &FrozenValues, spec: &ContractSpec) -> Result<AdjustmentTrace> {
    adjustment_factors_capped(path, frozen, spec, DEFAULT_MODIFICATION_CAP)
}

/// Walks the mode jumps of `path`; at a jump `k → l` in state `i` at `τ`,
/// `ρ_{m+1} = ρ_m·(V_k(τ−, i) − β̄_kl(τ, i)) / V_l(τ, i)`, with `ρ = 1`
/// before the first modification.
pub fn adjustment_factors_capped(
    path: &Path,
    frozen: &FrozenValues,
    spec: &ContractSpec,
    cap: usize,
) -> Result<AdjustmentTrace> {
    check_path(path, frozen, spec)?;
    let mut trace = AdjustmentTrace::identity();
    let mut rho = 1.0;
    for e in path.mode_jumps() {
        if trace.records.len() == cap {
            return Err(Error::TooManyModifications { cap });
        }
        let (i, k, u) = path.before(e.time);
        let num = rho * frozen.value_left(k, e.time, i) - rho * spec.mode_payment(e.time, k, e.to, i, u);
        let den = frozen.value(e.to, e.time, i);
        let next = equivalence_ratio(num, den, e.time)?;
        if next < 0.0 {
            log::debug!("negative adjustment factor {next} at tau = {}", e.time);
        }
        trace.records.push(Adjustment {
            tau: e.time,
            from_mode: k,
            to_mode: e.to,
            state: i,
            rho: next,
        });
        rho = next;
    }
    Ok(trace)
}

/// Discounted value at time 0 of the cash flow along `path`, every payment
/// scaled by the factor of `trace` in force when it falls due.
///
/// Reserve-linked surrender payments read the reserve from `reserve`.
pub fn discounted_cashflow(
    path: &Path,
    trace: &AdjustmentTrace,
    spec: &ContractSpec,
    reserve: Option<&dyn ReserveLookup>,
) -> Result<f64> {
    let bps = spec.breakpoints();
    let disc = |s: f64| (-spec.discount_integral(0.0, s)).exp();
    let mut parts = Vec::new();
    for seg in path.segments() {
        if seg.end <= seg.start {
            continue;
        }
        let f = trace.payment_factor(seg.end);
        let (i, k, o) = (seg.state, seg.mode, seg.duration_origin);
        let soj = integrate_pieces(
            |s| disc(s) * spec.sojourn_rate(s, i, k, s - o),
            seg.start,
            seg.end,
            &bps,
            CASHFLOW_REL_TOL,
        );
        parts.push(f * soj);
        for &ta in &spec.payments.lump_times {
            if ta > seg.start && ta <= seg.end && ta <= spec.horizon {
                parts.push(f * disc(ta) * spec.lump_amount(ta, i, k, ta - o));
            }
        }
    }
    for e in &path.events {
        let (i, k, u) = path.before(e.time);
        let pay = match e.kind {
            EventKind::StateJump => match spec.surrender_fraction(i, e.to) {
                Some(fr) => {
                    let r = reserve.ok_or_else(|| {
                        Error::Missing("surrender payments need the reserve (frozen values) on the path".into())
                    })?;
                    fr * r.reserve_before(e.time, i, k, u)
                }
                None => spec.state_payment(e.time, i, e.to, k, u),
            },
            EventKind::ModeJump => spec.mode_payment(e.time, k, e.to, i, u),
        };
        parts.push(trace.payment_factor(e.time) * disc(e.time) * pay);
    }
    Ok(parts.iter().sum())
}

/// Discounted adjusted cash flow `∫ e^{−∫δ} dÂ` of one path.
pub fn adjusted_cashflow_value(
    path: &Path,
    trace: &AdjustmentTrace,
    spec: &ContractSpec,
    frozen: Option<&FrozenValues>,
) -> Result<f64> {
    discounted_cashflow(path, trace, spec, frozen.map(|f| f as &dyn ReserveLookup))
}

/// How the factor at a mode jump is chosen in [`cantelli_residual`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjustmentRule {
    /// `ρ` from the equivalence condition.
    Cantelli,
    /// `ρ ≡ 1`.
    Unadjusted,
}

/// Largest adjusted mode-jump sum-at-risk `ρ·V_l(t, i) − (V_k(t−, i) − β̄_kl(t, i))`
/// over the times of `grid` before the horizon, all states and every mode pair
/// with positive intensity. A modification at `T` itself is a null event with
/// nothing left to scale, so `T` is skipped.
pub fn cantelli_residual(frozen: &FrozenValues, spec: &ContractSpec, grid: &[f64], rule: AdjustmentRule) -> f64 {
    let mut worst = 0.0f64;
    for &t in grid.iter().filter(|&&t| t < spec.horizon) {
        for i in 0..spec.n_states() {
            for k in 0..spec.n_modes() {
                for l in 0..spec.n_modes() {
                    if l == k || spec.mode_rate(t, k, l, i) <= 0.0 {
                        continue;
                    }
                    let num = frozen.value_left(k, t, i) - spec.mode_payment(t, k, l, i, 0.0);
                    let den = frozen.value(l, t, i);
                    let rho = match rule {
                        AdjustmentRule::Cantelli => equivalence_ratio(num, den, t).ok(),
                        AdjustmentRule::Unadjusted => Some(1.0),
                    };
                    let r = match rho {
                        Some(rho) => rho * den - num,
                        None => num,
                    };
                    worst = worst.max(r.abs());
                }
            }
        }
    }
    worst
}

/// The grid times `0, h, …, T`.
pub fn uniform_grid(horizon: f64, step: f64) -> Result<Vec<f64>> {
    let g = TimeGrid::new(horizon, step)?;
    Ok((0..=g.steps).map(|n| g.time(n)).collect())
}

/// Mode-jump bracket `β̄ + ρ·target − y` with `ρ` set from the candidate `y`.
fn adjusted_bracket(y: f64, beta: f64, target: f64) -> f64 {
    match equivalence_ratio(y - beta, target, f64::NAN) {
        Ok(rho) => beta + rho * target - y,
        Err(_) => 0.0,
    }
}

/// Reserves `W_k` under the measure allowing exactly one more modification
/// from mode `k`, whose factor is set from `W_k(t−)` itself. Solved with the
/// nonlinear solver on the mode-`k` restriction.
pub fn one_more_modification_values(
    spec: &ContractSpec,
    frozen: &FrozenValues,
    step: f64,
    picard_tol: f64,
) -> Result<Vec<ValueFunction>> {
    let shared = Arc::new((spec.clone(), frozen.clone()));
    (0..spec.n_modes())
        .map(|k| {
            let s = shared.clone();
            let driver = NonlinearDriver::sojourn(
                Arc::new(move |t, i, _, u, y, _| {
                    let (spec, frozen) = (&s.0, &s.1);
                    (0..spec.n_modes())
                        .filter(|&l| l != k)
                        .map(|l| {
                            let rate = spec.mode_rate(t, k, l, i);
                            if rate == 0.0 {
                                return 0.0;
                            }
                            rate * adjusted_bracket(y, spec.mode_payment(t, k, l, i, u), frozen.value(l, t, i))
                        })
                        .sum()
                }),
                spec.intensities.rate_bound,
            );
            solve_nonlinear_markov(&spec.restrict_to_mode(k)?, &driver, step, picard_tol, 100)
        })
        .collect()
}

/// Largest gap between `ρ_{m+1}` from the recursion (through the frozen
/// reserve of the old mode) and `ρ_{m+1}` recomputed from the one-more-
/// modification reserve `ρ_m·W_k(τ−)`.
pub fn recursion_consistency(
    path: &Path,
    trace: &AdjustmentTrace,
    frozen: &FrozenValues,
    one_more: &[ValueFunction],
    spec: &ContractSpec,
) -> Result<f64> {
    let mut prev = 1.0;
    let mut worst = 0.0f64;
    for r in &trace.records {
        let y = prev * one_more[r.from_mode].value_left(r.tau, r.state, 0);
        let (_, _, u) = path.before(r.tau);
        let beta = spec.mode_payment(r.tau, r.from_mode, r.to_mode, r.state, u);
        let alt = equivalence_ratio(y - prev * beta, frozen.value(r.to_mode, r.tau, r.state), r.tau)?;
        worst = worst.max((alt - r.rho).abs());
        prev = r.rho;
    }
    Ok(worst)
}

/// Reserve of the adjusted contract with unlimited modifications, per unit
/// of in-force factor: the mode-jump terms use factors set from the
/// candidate reserve itself.
pub fn adjusted_reserve(spec: &ContractSpec, step: f64, picard_tol: f64) -> Result<ValueFunction> {
    let s = Arc::new(spec.clone());
    let driver = NonlinearDriver::sojourn(
        Arc::new(move |t, i, k, u, y, z| {
            (0..s.n_modes())
                .filter(|&l| l != k)
                .map(|l| {
                    let rate = s.mode_rate(t, k, l, i);
                    if rate == 0.0 {
                        return 0.0;
                    }
                    rate * adjusted_bracket(y, s.mode_payment(t, k, l, i, u), y + z.mode[l])
                })
                .sum()
        }),
        spec.intensities.rate_bound,
    )
    .with_mode_coupling(ModeCoupling::Driver);
    solve_nonlinear_markov(spec, &driver, step, picard_tol, 100)
}

/// Largest gap, at the grid times along `path`, between the adjusted reserve
/// process `ρ(t)·Ŵ(t, X, J)` and `ρ(t)·V_J(t, X)` from the frozen reserves.
pub fn reserve_invariance(
    path: &Path,
    trace: &AdjustmentTrace,
    frozen: &FrozenValues,
    adjusted: &ValueFunction,
    step: f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for t in uniform_grid(path.horizon, step)? {
        let (i, k, _) = path.at(t);
        let f = trace.factor_at(t);
        worst = worst.max((f * adjusted.value(t, i, k) - f * frozen.value(k, t, i)).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::simulate::{simulate_path_indexed, Event};

    fn example_value(rate: f64) -> f64 {
        rate / 0.045 * (1.0 - (-0.45f64).exp())
    }

    fn jump_path(spec: &ContractSpec, events: &[(f64, EventKind, usize, usize)]) -> Path {
        let mut p = Path::empty(spec);
        for &(time, kind, from, to) in events {
            p.events.push(Event { time, kind, from, to });
        }
        p
    }

    #[test]
    fn frozen_values_of_free_policy_example() {
        let spec = fixtures::free_policy();
        let fv = frozen_value_functions(&spec, 1e-3).unwrap();
        assert!((fv.value(0, 0.0, 0) - example_value(-0.01)).abs() < 1e-9);
        assert!((fv.value(1, 0.0, 0) - example_value(0.01)).abs() < 1e-9);
    }

    #[test]
    fn single_mode_frozen_values_equal_solver_output() {
        let spec = fixtures::term_insurance();
        let fv = frozen_value_functions(&spec, 1e-2).unwrap();
        let v = solve_thiele_markov(&spec, 1e-2).unwrap();
        assert_eq!(fv.mode(0).max_diff(&v).unwrap(), 0.0);
    }

    #[test]
    fn free_policy_factor_is_ratio_of_frozen_values() {
        let spec = fixtures::free_policy();
        let fv = frozen_value_functions(&spec, 1e-2).unwrap();
        let path = jump_path(&spec, &[(3.3, EventKind::ModeJump, 0, 1)]);
        let trace = adjustment_factors(&path, &fv, &spec).unwrap();
        assert_eq!(trace.len(), 1);
        let expected = fv.value_left(0, 3.3, 0) / fv.value(1, 3.3, 0);
        assert_eq!(trace.records[0].rho, expected);
        assert!((expected + 1.0).abs() < 1e-9);
        assert_eq!(trace.payment_factor(3.3), 1.0);
        assert_eq!(trace.payment_factor(3.4), expected);
    }

    #[test]
    fn zero_over_zero_is_one_and_x_over_zero_fails() {
        assert_eq!(equivalence_ratio(0.0, 0.0, 1.0).unwrap(), 1.0);
        assert!(matches!(
            equivalence_ratio(0.5, 0.0, 2.0),
            Err(Error::EquivalenceInfeasible { time, .. }) if time == 2.0
        ));
        let spec = fixtures::free_policy();
        let fv = frozen_value_functions(&spec, 1e-2).unwrap();
        let path = jump_path(&spec, &[(10.0, EventKind::ModeJump, 0, 1)]);
        assert_eq!(adjustment_factors(&path, &fv, &spec).unwrap().records[0].rho, 1.0);
    }

    #[test]
    fn cap_is_enforced() {
        let spec = fixtures::endowment_revival();
        let fv = frozen_value_functions(&spec, 1e-2).unwrap();
        let path = jump_path(
            &spec,
            &[
                (1.0, EventKind::ModeJump, 0, 1),
                (2.0, EventKind::ModeJump, 1, 0),
                (3.0, EventKind::ModeJump, 0, 1),
            ],
        );
        assert!(adjustment_factors_capped(&path, &fv, &spec, 3).is_ok());
        assert!(matches!(
            adjustment_factors_capped(&path, &fv, &spec, 2),
            Err(Error::TooManyModifications { cap: 2 })
        ));
    }

    #[test]
    fn surrender_payment_uses_frozen_reserve() {
        let spec = fixtures::free_policy();
        let fv = frozen_value_functions(&spec, 1e-2).unwrap();
        let path = jump_path(&spec, &[(2.0, EventKind::StateJump, 0, 2)]);
        let trace = AdjustmentTrace::identity();
        let v = adjusted_cashflow_value(&path, &trace, &spec, Some(&fv)).unwrap();
        let premiums = -0.02 * (1.0 - (-0.06f64).exp()) / 0.03;
        let surrender = (-0.06f64).exp() * 0.9 * fv.value(0, 2.0, 0);
        assert!((v - (premiums + surrender)).abs() < 1e-12, "{v}");
        assert!(adjusted_cashflow_value(&path, &trace, &spec, None).is_err());
    }

    #[test]
    fn cantelli_residual_vanishes_only_with_adjustment() {
        let spec = fixtures::free_policy();
        let fv = frozen_value_functions(&spec, 1e-2).unwrap();
        let grid = uniform_grid(10.0, 1e-2).unwrap();
        assert!(cantelli_residual(&fv, &spec, &grid, AdjustmentRule::Cantelli) < 1e-12);
        let gap = grid
            .iter()
            .map(|&t| (fv.value(0, t, 0) - fv.value(1, t, 0)).abs())
            .fold(0.0, f64::max);
        let un = cantelli_residual(&fv, &spec, &grid, AdjustmentRule::Unadjusted);
        assert!(gap > 0.1 && (un - gap).abs() < 1e-12);
        let single = fixtures::term_insurance();
        let fs = frozen_value_functions(&single, 1e-2).unwrap();
        assert_eq!(cantelli_residual(&fs, &single, &grid, AdjustmentRule::Cantelli), 0.0);
    }

    #[test]
    fn recursion_and_invariance_on_revival_fixture() {
        let spec = fixtures::endowment_revival();
        let fv = frozen_value_functions(&spec, 1e-3).unwrap();
        let more = one_more_modification_values(&spec, &fv, 1e-3, 1e-14).unwrap();
        let adj = adjusted_reserve(&spec, 1e-3, 1e-14).unwrap();
        let mut jumps = 0;
        for n in 0..200 {
            let path = simulate_path_indexed(&spec, 11, n, None).unwrap();
            let trace = adjustment_factors(&path, &fv, &spec).unwrap();
            jumps += trace.len();
            assert!(recursion_consistency(&path, &trace, &fv, &more, &spec).unwrap() < 1e-9);
            let gap = reserve_invariance(&path, &trace, &fv, &adj, 0.1).unwrap();
            assert!(gap < 1e-9, "{gap} {trace:?}");
        }
        assert!(jumps > 20);
    }
}
