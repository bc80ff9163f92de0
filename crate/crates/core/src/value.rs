//! Grid-backed reserve functions `V(t, i, k)` and `V(t, i, k, u)`.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{ContractSpec, ModelKind};

/// Something that can report the reserve held just before time `t`.
pub trait ReserveLookup: Sync {
    /// `V(t−, state, mode, duration)`.
    fn reserve_before(&self, t: f64, state: usize, mode: usize, duration: f64) -> f64;
}

/// Reserve on a uniform time grid `0 = t₀ < … < t_N = T`.
///
/// Node values are right-continuous (`V(t_n)`); at lump atoms the left limit
/// `V(t_n−) = V(t_n) + a` is stored separately. Markov functions hold one
/// value per `(node, state, mode)`. Semi-Markov functions hold, at time node
/// `n`, durations `u_m = m·h` for `m = 0..=n` (the triangle `u ≤ t`).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    kind: ModelKind,
    horizon: f64,
    step: f64,
    steps: usize,
    n_states: usize,
    n_modes: usize,
    state_labels: Vec<String>,
    mode_labels: Vec<String>,
    values: Vec<f64>,
    left: BTreeMap<usize, Vec<f64>>,
}

/// Grid parameters shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub steps: usize,
    pub step: f64,
    pub horizon: f64,
}

impl TimeGrid {
    /// Uniform grid with the largest step `≤ step` that divides the horizon.
    pub fn new(horizon: f64, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Configuration(format!("step must be positive, got {step}")));
        }
        let steps = (horizon / step - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            steps,
            step: horizon / steps as f64,
            horizon,
        })
    }

    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.step
        }
    }

    /// Nearest node.
    pub fn snap(&self, t: f64) -> usize {
        ((t / self.step).round().max(0.0) as usize).min(self.steps)
    }

    /// `Some(n)` if `t` sits on node `n` up to rounding.
    pub fn node_at(&self, t: f64) -> Option<usize> {
        let x = t / self.step;
        let n = x.round();
        ((x - n).abs() < 1e-9 && n >= 0.0 && n <= self.steps as f64).then_some(n as usize)
    }

    /// Node index `n` with `t_n ≤ t < t_{n+1}` (clamped to the last cell).
    pub fn cell(&self, t: f64) -> usize {
        ((t / self.step).floor().max(0.0) as usize).min(self.steps - 1)
    }
}

impl ValueFunction {
    pub(crate) fn new(spec: &ContractSpec, grid: TimeGrid, kind: ModelKind) -> Self {
        let width = spec.width();
        let len = match kind {
            ModelKind::Markov => width * (grid.steps + 1),
            ModelKind::SemiMarkov => width * (grid.steps + 1) * (grid.steps + 2) / 2,
        };
        Self {
            kind,
            horizon: grid.horizon,
            step: grid.step,
            steps: grid.steps,
            n_states: spec.n_states(),
            n_modes: spec.n_modes(),
            state_labels: spec.states.labels().to_vec(),
            mode_labels: spec.modes.labels().to_vec(),
            values: vec![0.0; len],
            left: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            steps: self.steps,
            step: self.step,
            horizon: self.horizon,
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn width(&self) -> usize {
        self.n_states * self.n_modes
    }

    #[inline]
    fn idx(&self, state: usize, mode: usize) -> usize {
        state * self.n_modes + mode
    }

    /// Number of values stored on row `n`.
    #[inline]
    pub(crate) fn row_len(&self, n: usize) -> usize {
        match self.kind {
            ModelKind::Markov => self.width(),
            ModelKind::SemiMarkov => self.width() * (n + 1),
        }
    }

    #[inline]
    fn row_start(&self, n: usize) -> usize {
        match self.kind {
            ModelKind::Markov => self.width() * n,
            ModelKind::SemiMarkov => self.width() * n * (n + 1) / 2,
        }
    }

    pub(crate) fn row(&self, n: usize) -> &[f64] {
        let s = self.row_start(n);
        &self.values[s..s + self.row_len(n)]
    }

    pub(crate) fn row_mut(&mut self, n: usize) -> &mut [f64] {
        let s = self.row_start(n);
        let len = self.row_len(n);
        &mut self.values[s..s + len]
    }

    /// Left-limit row at node `n` (equal to the node row unless `n` is an atom).
    pub(crate) fn left_row(&self, n: usize) -> &[f64] {
        match self.left.get(&n) {
            Some(r) => r,
            None => self.row(n),
        }
    }

    pub(crate) fn set_left_row(&mut self, n: usize, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.row_len(n));
        self.left.insert(n, row);
    }

    /// Nodes carrying a lump atom.
    pub fn atom_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.left.keys().copied()
    }

    pub fn atom_times(&self) -> Vec<f64> {
        let g = self.grid();
        self.left.keys().map(|&n| g.time(n)).collect()
    }

    /// Right-continuous node value (Markov layout; duration 0 for semi-Markov).
    pub fn node(&self, n: usize, state: usize, mode: usize) -> f64 {
        self.node_u(n, state, mode, 0)
    }

    pub fn node_left(&self, n: usize, state: usize, mode: usize) -> f64 {
        self.node_left_u(n, state, mode, 0)
    }

    /// Node value at duration node `m` (always `m = 0` for Markov functions).
    pub fn node_u(&self, n: usize, state: usize, mode: usize, m: usize) -> f64 {
        self.row(n)[self.offset(n, state, mode, m)]
    }

    pub fn node_left_u(&self, n: usize, state: usize, mode: usize, m: usize) -> f64 {
        self.left_row(n)[self.offset(n, state, mode, m)]
    }

    #[inline]
    pub(crate) fn offset(&self, n: usize, state: usize, mode: usize, m: usize) -> usize {
        match self.kind {
            ModelKind::Markov => self.idx(state, mode),
            ModelKind::SemiMarkov => self.idx(state, mode) * (n + 1) + m.min(n),
        }
    }

    /// `V(t, i, k)` for Markov functions; `V(t, i, k, 0)` for semi-Markov ones.
    pub fn value(&self, t: f64, state: usize, mode: usize) -> f64 {
        self.eval(t, state, mode, 0.0, false)
    }

    /// `V(t−, i, k)`.
    pub fn value_left(&self, t: f64, state: usize, mode: usize) -> f64 {
        self.eval(t, state, mode, 0.0, true)
    }

    /// `V(t, i, k, u)`; the duration is ignored for Markov functions.
    pub fn value_at(&self, t: f64, state: usize, mode: usize, u: f64) -> f64 {
        self.eval(t, state, mode, u, false)
    }

    /// `V(t−, i, k, u)`.
    pub fn value_left_at(&self, t: f64, state: usize, mode: usize, u: f64) -> f64 {
        self.eval(t, state, mode, u, true)
    }

    fn eval(&self, t: f64, state: usize, mode: usize, u: f64, left: bool) -> f64 {
        let g = self.grid();
        if t > self.horizon {
            return 0.0;
        }
        let t = t.max(0.0);
        match self.kind {
            ModelKind::Markov => {
                if let Some(n) = g.node_at(t) {
                    return if left {
                        self.node_left(n, state, mode)
                    } else {
                        self.node(n, state, mode)
                    };
                }
                let n = g.cell(t);
                let w = (t - g.time(n)) / self.step;
                let a = self.node(n, state, mode);
                let b = self.node_left(n + 1, state, mode);
                a + w * (b - a)
            }
            ModelKind::SemiMarkov => self.eval_semi(t, state, mode, u, left),
        }
    }

    /// Linear interpolation in duration along row `n`.
    fn row_interp(&self, n: usize, state: usize, mode: usize, u: f64, left: bool) -> f64 {
        let row = if left { self.left_row(n) } else { self.row(n) };
        let base = self.idx(state, mode) * (n + 1);
        let x = (u / self.step).clamp(0.0, n as f64);
        let m = (x.floor() as usize).min(n.saturating_sub(1));
        if n == 0 {
            return row[base];
        }
        let w = x - m as f64;
        row[base + m] + w * (row[base + m + 1] - row[base + m])
    }

    fn eval_semi(&self, t: f64, state: usize, mode: usize, u: f64, left: bool) -> f64 {
        let g = self.grid();
        if u > t + 1e-9 * self.step.max(1.0) {
            log::warn!("duration {u} exceeds time {t}; clamped to the triangle u <= t");
        }
        let u = u.clamp(0.0, t);
        if let Some(n) = g.node_at(t) {
            return self.row_interp(n, state, mode, u, left);
        }
        // Interpolate along the characteristic through (t, u).
        let n = g.cell(t);
        let (t0, t1) = (g.time(n), g.time(n + 1));
        let s = t - t0;
        let foot = u - s;
        if foot >= 0.0 {
            let a = self.row_interp(n, state, mode, foot, false);
            let b = self.row_interp(n + 1, state, mode, foot + (t1 - t0), true);
            a + (s / (t1 - t0)) * (b - a)
        } else {
            // The characteristic starts at duration 0 inside the cell.
            let entry = t - u;
            let we = (entry - t0) / (t1 - t0);
            let a0 = self.row_interp(n, state, mode, 0.0, false);
            let a1 = self.row_interp(n + 1, state, mode, 0.0, true);
            let a = a0 + we * (a1 - a0);
            let b = self.row_interp(n + 1, state, mode, u + (t1 - t), true);
            a + ((t - entry) / (t1 - entry)) * (b - a)
        }
    }

    /// Largest absolute value on the grid.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .chain(self.left.values().flatten())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values
            .iter()
            .chain(self.left.values().flatten())
            .all(|v| v.is_finite())
    }

    /// Largest node-wise difference to another function on the same grid.
    pub fn max_diff(&self, other: &ValueFunction) -> Result<f64> {
        if self.values.len() != other.values.len() || self.steps != other.steps {
            return Err(Error::Mismatch("value functions live on different grids".into()));
        }
        let mut m = self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        for n in self.left.keys().chain(other.left.keys()) {
            let (a, b) = (self.left_row(*n), other.left_row(*n));
            m = a.iter().zip(b).fold(m, |m, (x, y)| m.max((x - y).abs()));
        }
        Ok(m)
    }

    /// Writes `t,state,mode[,duration],value` rows (right-continuous values;
    /// atom nodes get a second row tagged with `t-` holding the left limit).
    pub fn write_table<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let g = self.grid();
        match self.kind {
            ModelKind::Markov => writeln!(out, "t,state,mode,value")?,
            ModelKind::SemiMarkov => writeln!(out, "t,state,mode,duration,value")?,
        }
        for n in 0..=self.steps {
            let t = g.time(n);
            let rows: Vec<(String, &[f64])> = match self.left.get(&n) {
                Some(l) => vec![(format!("{t}-"), l.as_slice()), (format!("{t}"), self.row(n))],
                None => vec![(format!("{t}"), self.row(n))],
            };
            for (label, row) in rows {
                for i in 0..self.n_states {
                    for k in 0..self.n_modes {
                        let (s, m) = (&self.state_labels[i], &self.mode_labels[k]);
                        match self.kind {
                            ModelKind::Markov => writeln!(out, "{label},{s},{m},{}", row[self.idx(i, k)])?,
                            ModelKind::SemiMarkov => {
                                let base = self.idx(i, k) * (n + 1);
                                for mm in 0..=n {
                                    writeln!(out, "{label},{s},{m},{},{}", g.time(mm), row[base + mm])?;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl ReserveLookup for ValueFunction {
    fn reserve_before(&self, t: f64, state: usize, mode: usize, duration: f64) -> f64 {
        self.value_left_at(t, state, mode, duration)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn grid_divides_horizon() {
        let g = TimeGrid::new(10.0, 0.003).unwrap();
        assert_eq!(g.steps, 3334);
        assert!((g.step * g.steps as f64 - 10.0).abs() < 1e-12);
        assert_eq!(g.time(g.steps), 10.0);
        assert_eq!(TimeGrid::new(10.0, 1e-3).unwrap().steps, 10_000);
        assert!(TimeGrid::new(10.0, 0.0).is_err());
    }

    #[test]
    fn markov_interpolation_is_linear_and_cadlag() {
        let spec = fixtures::pure_endowment();
        let grid = TimeGrid::new(10.0, 1.0).unwrap();
        let mut v = ValueFunction::new(&spec, grid, ModelKind::Markov);
        for n in 0..=10 {
            v.row_mut(n)[0] = n as f64;
        }
        v.row_mut(10)[0] = 0.0;
        v.set_left_row(10, vec![10.0, 0.0]);
        assert_eq!(v.value(2.5, 0, 0), 2.5);
        assert_eq!(v.value(9.5, 0, 0), 9.5);
        assert_eq!(v.value(10.0, 0, 0), 0.0);
        assert_eq!(v.value_left(10.0, 0, 0), 10.0);
        assert_eq!(v.value(11.0, 0, 0), 0.0);
    }

    #[test]
    fn semi_markov_interpolation_is_exact_for_affine_functions() {
        let spec = fixtures::disability();
        let grid = TimeGrid::new(10.0, 0.5).unwrap();
        let mut v = ValueFunction::new(&spec, grid, ModelKind::SemiMarkov);
        let f = |t: f64, u: f64| 1.0 + 2.0 * t - 0.5 * u;
        for n in 0..=grid.steps {
            let t = grid.time(n);
            for i in 0..3 {
                for m in 0..=n {
                    let off = v.offset(n, i, 0, m);
                    v.row_mut(n)[off] = f(t, grid.time(m));
                }
            }
        }
        for &(t, u) in &[(3.2, 1.1), (3.2, 0.1), (0.3, 0.2), (7.75, 7.7), (5.0, 2.25)] {
            assert!((v.value_at(t, 1, 0, u) - f(t, u)).abs() < 1e-12, "({t}, {u})");
        }
    }
}
