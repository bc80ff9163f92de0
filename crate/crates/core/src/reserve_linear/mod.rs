//! Backward solvers for the linear prospective reserve, sums-at-risk and the
//! pathwise BSDE residual.

mod residual;
mod semimarkov;

pub use residual::{pathwise_bsde_residual, BsdeResidual};
pub use semimarkov::solve_thiele_semimarkov;

use crate::error::{Error, Result};
use crate::model::{ContractSpec, ModelKind};
use crate::thiele::{atoms_by_node, check_step, ensure_finite, markov_rhs, sub_steps, Coupling, Rk4};
use crate::value::{TimeGrid, ValueFunction};

/// Solves the modulated Markov Thiele system backward from `V(T) = 0` with RK4.
///
/// The step is shrunk so that it divides the horizon. Lump atoms are snapped
/// to the nearest grid node; integration restarts at every table breakpoint.
pub fn solve_thiele_markov(spec: &ContractSpec, step: f64) -> Result<ValueFunction> {
    if spec.kind() != ModelKind::Markov {
        return Err(Error::Configuration(
            "solve_thiele_markov needs a markov contract; use solve_thiele_semimarkov".into(),
        ));
    }
    let grid = TimeGrid::new(spec.horizon, step)?;
    let bps = check_step(spec, &grid)?;
    let atoms = atoms_by_node(spec, &grid);
    let width = spec.width();
    let nm = spec.n_modes();
    let mut vf = ValueFunction::new(spec, grid, ModelKind::Markov);
    let mut v = vec![0.0; width];
    let mut rk = Rk4::new(width);
    let mut rhs = |t: f64, y: &[f64], out: &mut [f64]| markov_rhs(spec, Coupling::FULL, t, y, out);

    let apply_atoms = |vf: &mut ValueFunction, n: usize, v: &mut [f64]| -> Result<()> {
        if let Some(times) = atoms.get(&n) {
            for &ta in times {
                for (idx, x) in v.iter_mut().enumerate() {
                    *x += spec.lump_amount(ta, idx / nm, idx % nm, 0.0);
                }
            }
            ensure_finite(v, grid.time(n))?;
            vf.set_left_row(n, v.to_vec());
        }
        Ok(())
    };

    apply_atoms(&mut vf, grid.steps, &mut v)?;
    for n in (0..grid.steps).rev() {
        for (hi, lo) in sub_steps(&grid, &bps, n) {
            rk.step_back(&mut rhs, hi, lo, &mut v);
        }
        ensure_finite(&v, grid.time(n))?;
        vf.row_mut(n).copy_from_slice(&v);
        apply_atoms(&mut vf, n, &mut v)?;
    }
    Ok(vf)
}

/// Sums-at-risk read off a solved value function.
#[derive(Clone, Copy)]
pub struct SumAtRisk<'a> {
    v: &'a ValueFunction,
    spec: &'a ContractSpec,
}

/// Pairs a value function with its contract.
pub fn sum_at_risk<'a>(v: &'a ValueFunction, spec: &'a ContractSpec) -> SumAtRisk<'a> {
    SumAtRisk { v, spec }
}

impl SumAtRisk<'_> {
    /// `R_ij(t, k) = β_ij(t, k) + V(t, j, k) − V(t, i, k)`.
    pub fn state(&self, t: f64, i: usize, j: usize, k: usize) -> f64 {
        self.state_at(t, i, j, k, 0.0, false)
    }

    /// The same with left limits of `V` (the value a jump at `t` actually sees).
    pub fn state_left(&self, t: f64, i: usize, j: usize, k: usize) -> f64 {
        self.state_at(t, i, j, k, 0.0, true)
    }

    /// Duration-aware form; the new state starts at duration 0.
    pub fn state_at(&self, t: f64, i: usize, j: usize, k: usize, u: f64, left: bool) -> f64 {
        let (vi, vj) = if left {
            (self.v.value_left_at(t, i, k, u), self.v.value_left_at(t, j, k, 0.0))
        } else {
            (self.v.value_at(t, i, k, u), self.v.value_at(t, j, k, 0.0))
        };
        let beta = match self.spec.surrender_fraction(i, j) {
            Some(f) => f * self.v.value_left_at(t, i, k, u),
            None => self.spec.state_payment(t, i, j, k, u),
        };
        beta + vj - vi
    }

    /// `β̄_kl(t, i) + V(t, i, l) − V(t, i, k)`.
    pub fn mode(&self, t: f64, k: usize, l: usize, i: usize) -> f64 {
        self.spec.mode_payment(t, k, l, i, 0.0) + self.v.value(t, i, l) - self.v.value(t, i, k)
    }
}
