//! Shared pieces of the backward Thiele solvers: the right-hand side of the
//! modulated Markov system, the RK4 step and grid bookkeeping.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ContractSpec;
use crate::quadrature::prev_float;
use crate::value::TimeGrid;

/// Which parts of the transition terms the linear right-hand side carries.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Coupling {
    /// Surrender pairs contribute `λ(f·y + V_j − y)`; otherwise only `λ·V_j`
    /// and the remainder is left to a driver.
    pub surrender_linear: bool,
    /// Include mode-jump terms `λ¹(β̄ + V_l − V_k)`.
    pub mode_coupling: bool,
}

impl Coupling {
    pub const FULL: Coupling = Coupling {
        surrender_linear: true,
        mode_coupling: true,
    };
}

/// `d/dt V(t, i, k)` of the modulated Markov Thiele system.
pub(crate) fn markov_rhs(spec: &ContractSpec, c: Coupling, t: f64, v: &[f64], out: &mut [f64]) {
    let (ns, nm) = (spec.n_states(), spec.n_modes());
    let delta = spec.discount_rate(t);
    for i in 0..ns {
        for k in 0..nm {
            let idx = i * nm + k;
            let y = v[idx];
            let mut d = delta * y - spec.sojourn_rate(t, i, k, 0.0);
            for j in 0..ns {
                if j == i {
                    continue;
                }
                let rate = spec.state_rate(t, i, j, k, 0.0);
                if rate == 0.0 {
                    continue;
                }
                let vj = v[j * nm + k];
                d -= match spec.surrender_fraction(i, j) {
                    Some(f) if c.surrender_linear => rate * (f * y + vj - y),
                    Some(_) => rate * vj,
                    None => rate * (spec.state_payment(t, i, j, k, 0.0) + vj - y),
                };
            }
            if c.mode_coupling {
                for l in 0..nm {
                    if l == k {
                        continue;
                    }
                    let rate = spec.mode_rate(t, k, l, i);
                    if rate != 0.0 {
                        d -= rate * (spec.mode_payment(t, k, l, i, 0.0) + v[i * nm + l] - y);
                    }
                }
            }
            out[idx] = d;
        }
    }
}

/// Scratch vectors for one RK4 step.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(width: usize) -> Self {
        Self {
            k1: vec![0.0; width],
            k2: vec![0.0; width],
            k3: vec![0.0; width],
            k4: vec![0.0; width],
            tmp: vec![0.0; width],
        }
    }

    /// One classical RK4 step backward from `hi` to `lo`, in place.
    ///
    /// Stage times stay inside `[lo, hi)` so that right-continuous tables are
    /// read from the piece that covers the open interval.
    pub fn step_back<F>(&mut self, f: &mut F, hi: f64, lo: f64, v: &mut [f64])
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let h = hi - lo;
        let top = prev_float(hi).max(lo);
        let mid = lo + 0.5 * h;
        f(top, v, &mut self.k1);
        for (t, (x, k)) in self.tmp.iter_mut().zip(v.iter().zip(&self.k1)) {
            *t = x - 0.5 * h * k;
        }
        f(mid, &self.tmp, &mut self.k2);
        for (t, (x, k)) in self.tmp.iter_mut().zip(v.iter().zip(&self.k2)) {
            *t = x - 0.5 * h * k;
        }
        f(mid, &self.tmp, &mut self.k3);
        for (t, (x, k)) in self.tmp.iter_mut().zip(v.iter().zip(&self.k3)) {
            *t = x - h * k;
        }
        f(lo, &self.tmp, &mut self.k4);
        for (idx, x) in v.iter_mut().enumerate() {
            *x -= h / 6.0 * (self.k1[idx] + 2.0 * self.k2[idx] + 2.0 * self.k3[idx] + self.k4[idx]);
        }
    }
}

/// Rejects steps that do not resolve the gaps between table breakpoints.
pub(crate) fn check_step(spec: &ContractSpec, grid: &TimeGrid) -> Result<Vec<f64>> {
    let bps = spec.breakpoints();
    let mut knots = Vec::with_capacity(bps.len() + 2);
    knots.push(0.0);
    knots.extend(&bps);
    knots.push(spec.horizon);
    let min_gap = knots.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if grid.step > min_gap * (1.0 + 1e-9) {
        return Err(Error::Configuration(format!(
            "step {} exceeds the smallest breakpoint gap {min_gap}",
            grid.step
        )));
    }
    Ok(bps)
}

/// Sub-intervals of `[t_n, t_{n+1}]` between breakpoints, latest first.
pub(crate) fn sub_steps(grid: &TimeGrid, bps: &[f64], n: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = (grid.time(n), grid.time(n + 1));
    let start = bps.partition_point(|&b| b <= lo);
    let mut cuts = vec![hi];
    for &b in bps[start..].iter().rev() {
        if b < hi && b > lo {
            cuts.push(b);
        }
    }
    cuts.push(lo);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Lump atoms grouped by the node they snap to.
pub(crate) fn atoms_by_node(spec: &ContractSpec, grid: &TimeGrid) -> BTreeMap<usize, Vec<f64>> {
    let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &t in &spec.payments.lump_times {
        out.entry(grid.snap(t)).or_default().push(t);
    }
    out
}

pub(crate) fn ensure_finite(v: &[f64], time: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { time })
    }
}
