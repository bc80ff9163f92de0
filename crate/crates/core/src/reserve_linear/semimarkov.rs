use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{ContractSpec, ModelKind};
use crate::parallel::map_indexed;
use crate::thiele::{atoms_by_node, ensure_finite};
use crate::value::{TimeGrid, ValueFunction};

const MAX_NODES: usize = 200_000_000;
const CHUNK: usize = 128;
const COUPLING_ITERS: usize = 60;

/// Solves the semi-Markov Thiele equation along the characteristics `u − t = const`.
///
/// Values live on the triangle `u ≤ t` with `duration_step` equal to the
/// time step. The duration-zero coupling `V(t, j, k, 0)` at the lower end of
/// each step is found by fixed-point iteration; its midpoint value comes from
/// cubic interpolation over the already solved later nodes.
pub fn solve_thiele_semimarkov(spec: &ContractSpec, step: f64, duration_step: f64) -> Result<ValueFunction> {
    if spec.kind() != ModelKind::SemiMarkov {
        return Err(Error::Configuration(
            "solve_thiele_semimarkov needs a semi_markov contract".into(),
        ));
    }
    let grid = TimeGrid::new(spec.horizon, step)?;
    if !(duration_step > 0.0) || (duration_step - grid.step).abs() > 1e-6 * grid.step {
        return Err(Error::Configuration(format!(
            "duration step {duration_step} must equal the time step {} on the characteristic grid",
            grid.step
        )));
    }
    let width = spec.width();
    let nodes = (grid.steps + 1)
        .checked_mul(grid.steps + 2)
        .map(|x| x / 2 * width)
        .unwrap_or(usize::MAX);
    if nodes > MAX_NODES {
        return Err(Error::Configuration(format!(
            "semi-markov grid with {nodes} nodes is too large; increase the step"
        )));
    }
    // Nodes across which the coupling is not smooth.
    let mut kinks = BTreeSet::new();
    for b in spec.breakpoints() {
        match grid.node_at(b) {
            Some(n) => {
                kinks.insert(n);
            }
            None => {
                return Err(Error::Configuration(format!(
                    "breakpoint {b} is not on the grid with step {}; the semi-markov solver needs aligned breakpoints",
                    grid.step
                )))
            }
        }
    }
    let atoms = atoms_by_node(spec, &grid);
    kinks.extend(atoms.keys().copied());

    let mut vf = ValueFunction::new(spec, grid, ModelKind::SemiMarkov);
    apply_atoms(spec, &mut vf, &atoms, grid.steps)?;
    let solver = Characteristics { spec, h: grid.step };

    for n in (0..grid.steps).rev() {
        let (t_lo, t_hi) = (grid.time(n), grid.time(n + 1));
        let g_top = duration_zero(&vf, n + 1, width);
        // Later coupling values usable for interpolation on (t_n, t_{n+1}).
        let mut later = vec![g_top.clone()];
        for d in 2..=3 {
            if n + d <= grid.steps && !(n + 1..n + d).any(|m| kinks.contains(&m)) {
                later.push(duration_zero(&vf, n + d, width));
            } else {
                break;
            }
        }
        let top_row = vf.left_row(n + 1).to_vec();
        let top = |m: usize| -> Vec<f64> { (0..width).map(|idx| top_row[idx * (n + 2) + m + 1]).collect() };

        // Duration-zero characteristic, coupled to its own end value.
        let w_top0 = top(0);
        let mut g_lo = if later.len() >= 2 {
            later[0].iter().zip(&later[1]).map(|(a, b)| 2.0 * a - b).collect()
        } else {
            later[0].clone()
        };
        let mut converged = false;
        let mut residual = f64::INFINITY;
        for _ in 0..COUPLING_ITERS {
            let g_mid = midpoint(&g_lo, &later);
            let next = solver.step(t_hi, t_lo, 0.0, &w_top0, [&g_top, &g_mid, &g_lo]);
            residual = next.iter().zip(&g_lo).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let scale = next.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            g_lo = next;
            if residual <= 1e-15 * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                time: t_lo,
                iterations: COUPLING_ITERS,
                residual,
            });
        }
        let g_mid = midpoint(&g_lo, &later);
        let gs = [&g_top, &g_mid, &g_lo];

        // Remaining characteristics m = 1..=n, in parallel chunks.
        let chunks = n.div_ceil(CHUNK);
        let solved: Vec<Vec<f64>> = map_indexed(chunks, |c| {
            let (a, b) = (1 + c * CHUNK, (1 + (c + 1) * CHUNK).min(n + 1));
            let mut out = Vec::with_capacity((b - a) * width);
            for m in a..b {
                out.extend(solver.step(t_hi, t_lo, m as f64 * grid.step, &top(m), gs));
            }
            out
        });
        let row = vf.row_mut(n);
        for idx in 0..width {
            row[idx * (n + 1)] = g_lo[idx];
        }
        for (c, block) in solved.iter().enumerate() {
            for (r, w) in block.chunks(width).enumerate() {
                let m = 1 + c * CHUNK + r;
                for idx in 0..width {
                    row[idx * (n + 1) + m] = w[idx];
                }
            }
        }
        ensure_finite(vf.row(n), t_lo)?;
        apply_atoms(spec, &mut vf, &atoms, n)?;
    }
    Ok(vf)
}

/// Left-limit values at duration 0 on row `n`, one per `(state, mode)`.
fn duration_zero(vf: &ValueFunction, n: usize, width: usize) -> Vec<f64> {
    let row = vf.left_row(n);
    (0..width).map(|idx| row[idx * (n + 1)]).collect()
}

/// Value at `t_n + h/2` of the polynomial through `g_lo` at `t_n` and the
/// later nodes `t_{n+1}, …`.
fn midpoint(g_lo: &[f64], later: &[Vec<f64>]) -> Vec<f64> {
    const W2: [f64; 2] = [0.5, 0.5];
    const W3: [f64; 3] = [0.375, 0.75, -0.125];
    const W4: [f64; 4] = [0.3125, 0.9375, -0.3125, 0.0625];
    let w: &[f64] = match later.len() {
        1 => &W2,
        2 => &W3,
        _ => &W4,
    };
    (0..g_lo.len())
        .map(|idx| w[0] * g_lo[idx] + later.iter().zip(&w[1..]).map(|(g, c)| c * g[idx]).sum::<f64>())
        .collect()
}

fn apply_atoms(
    spec: &ContractSpec,
    vf: &mut ValueFunction,
    atoms: &std::collections::BTreeMap<usize, Vec<f64>>,
    n: usize,
) -> Result<()> {
    let Some(times) = atoms.get(&n) else {
        return Ok(());
    };
    let grid = vf.grid();
    let nm = spec.n_modes();
    let mut row = vf.row(n).to_vec();
    for &ta in times {
        for (pos, x) in row.iter_mut().enumerate() {
            let (idx, m) = (pos / (n + 1), pos % (n + 1));
            *x += spec.lump_amount(ta, idx / nm, idx % nm, grid.time(m));
        }
    }
    ensure_finite(&row, grid.time(n))?;
    vf.set_left_row(n, row);
    Ok(())
}

struct Characteristics<'a> {
    spec: &'a ContractSpec,
    h: f64,
}

impl Characteristics<'_> {
    /// RK4 along one characteristic from `(t_hi, u0 + h)` down to `(t_lo, u0)`.
    /// `g` holds the duration-zero coupling at the top, middle and bottom.
    fn step(&self, t_hi: f64, t_lo: f64, u0: f64, w_top: &[f64], g: [&Vec<f64>; 3]) -> Vec<f64> {
        let h = t_hi - t_lo;
        let width = w_top.len();
        let top = crate::quadrature::prev_float(t_hi).max(t_lo);
        let mid = t_lo + 0.5 * h;
        let stages = [(top, u0 + self.h), (mid, u0 + 0.5 * self.h), (t_lo, u0)];
        let mut k = [vec![0.0; width], vec![0.0; width], vec![0.0; width], vec![0.0; width]];
        let mut tmp = w_top.to_vec();
        self.rhs(stages[0], &tmp, g[0], &mut k[0]);
        for idx in 0..width {
            tmp[idx] = w_top[idx] - 0.5 * h * k[0][idx];
        }
        self.rhs(stages[1], &tmp, g[1], &mut k[1]);
        for idx in 0..width {
            tmp[idx] = w_top[idx] - 0.5 * h * k[1][idx];
        }
        self.rhs(stages[1], &tmp, g[1], &mut k[2]);
        for idx in 0..width {
            tmp[idx] = w_top[idx] - h * k[2][idx];
        }
        self.rhs(stages[2], &tmp, g[2], &mut k[3]);
        (0..width)
            .map(|idx| w_top[idx] - h / 6.0 * (k[0][idx] + 2.0 * k[1][idx] + 2.0 * k[2][idx] + k[3][idx]))
            .collect()
    }

    /// `(∂_t + ∂_u) V` at `(t, u)` given values `w` on the characteristic.
    fn rhs(&self, (t, u): (f64, f64), w: &[f64], g: &[f64], out: &mut [f64]) {
        let spec = self.spec;
        let (ns, nm) = (spec.n_states(), spec.n_modes());
        let delta = spec.discount_rate(t);
        let reset = spec.duration_resets_on_mode_jump;
        for i in 0..ns {
            for k in 0..nm {
                let idx = i * nm + k;
                let y = w[idx];
                let mut d = delta * y - spec.sojourn_rate(t, i, k, u);
                for j in 0..ns {
                    if j == i {
                        continue;
                    }
                    let rate = spec.state_rate(t, i, j, k, u);
                    if rate == 0.0 {
                        continue;
                    }
                    let gj = g[j * nm + k];
                    d -= match spec.surrender_fraction(i, j) {
                        Some(f) => rate * (f * y + gj - y),
                        None => rate * (spec.state_payment(t, i, j, k, u) + gj - y),
                    };
                }
                for l in 0..nm {
                    if l == k {
                        continue;
                    }
                    let rate = spec.mode_rate(t, k, l, i);
                    if rate != 0.0 {
                        let target = if reset { g[i * nm + l] } else { w[i * nm + l] };
                        d -= rate * (spec.mode_payment(t, k, l, i, u) + target - y);
                    }
                }
                out[idx] = d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_contract;
    use crate::fixtures;
    use crate::reserve_linear::solve_thiele_markov;

    #[test]
    fn duration_free_rates_reproduce_markov_solver() {
        let semi = fixtures::DISABILITY.replace("duration_decay = 1.0", "");
        let markov = semi.replace("kind = \"semi_markov\"", "kind = \"markov\"");
        let vs = solve_thiele_semimarkov(&load_contract(&semi).unwrap(), 0.05, 0.05).unwrap();
        let vm = solve_thiele_markov(&load_contract(&markov).unwrap(), 0.05).unwrap();
        for n in 0..=vs.steps() {
            for i in 0..3 {
                for m in 0..=n {
                    let d = (vs.node_u(n, i, 0, m) - vm.node(n, i, 0)).abs();
                    assert!(d < 1e-6, "n={n} i={i} m={m}: {d}");
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_duration_step() {
        let spec = fixtures::disability();
        assert!(matches!(
            solve_thiele_semimarkov(&spec, 0.1, 0.05),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn dead_state_stays_zero_and_terminal_row_vanishes() {
        let v = solve_thiele_semimarkov(&fixtures::disability(), 0.1, 0.1).unwrap();
        for n in 0..=v.steps() {
            for m in 0..=n {
                assert_eq!(v.node_u(n, 2, 0, m), 0.0);
            }
        }
        for m in 0..=v.steps() {
            assert_eq!(v.node_u(v.steps(), 1, 0, m), 0.0);
        }
        assert!(v.value_at(0.0, 0, 0, 0.0) > 0.0);
    }
}
