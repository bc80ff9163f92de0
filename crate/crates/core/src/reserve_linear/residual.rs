use crate::error::{Error, Result};
use crate::model::{ContractSpec, ModelKind};
use crate::quadrature::prev_float;
use crate::simulate::{EventKind, Path};
use crate::value::{TimeGrid, ValueFunction};

/// Largest discrepancies of `Y(t) = V(t, X(t), J(t)[, U(t)])` against the
/// BSDE increments along one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsdeResidual {
    /// Over cells without jumps of `X` or `J`.
    pub continuous: f64,
    /// Over cells containing at least one jump.
    pub jump: f64,
}

impl BsdeResidual {
    pub fn total(&self) -> f64 {
        self.continuous + self.jump
    }
}

/// Compares, cell by cell on a grid of width `step`, the increment of the
/// reserve process with drift `δY − γ + compensator` (trapezoid in time),
/// the lump-sum jumps `−a Δν` and the jump coefficients `Z` at events.
pub fn pathwise_bsde_residual(path: &Path, v: &ValueFunction, spec: &ContractSpec, step: f64) -> Result<BsdeResidual> {
    if (path.horizon - spec.horizon).abs() > 1e-12 || (v.horizon() - spec.horizon).abs() > 1e-12 {
        return Err(Error::Mismatch(format!(
            "path horizon {} / value horizon {} differ from contract horizon {}",
            path.horizon,
            v.horizon(),
            spec.horizon
        )));
    }
    if v.n_states() != spec.n_states() || v.n_modes() != spec.n_modes() {
        return Err(Error::Mismatch(
            "value function and contract have different state spaces".into(),
        ));
    }
    path.check_invariants(spec.n_states(), spec.n_modes())?;
    let grid = TimeGrid::new(spec.horizon, step)?;
    let semi = v.kind() == ModelKind::SemiMarkov;
    let atoms = v.atom_times();
    let mut cuts: Vec<f64> = spec.breakpoints();
    cuts.extend(atoms.iter().copied().filter(|&a| a > 0.0 && a < spec.horizon));
    cuts.extend(path.events.iter().map(|e| e.time));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let segs = path.segments();
    let y = |t: f64, left: bool| -> f64 {
        let (i, k, u) = if left { path.before(t) } else { path.at(t) };
        let u = if semi { u } else { 0.0 };
        if left {
            v.value_left_at(t, i, k, u)
        } else {
            v.value_at(t, i, k, u)
        }
    };

    let mut out = BsdeResidual {
        continuous: 0.0,
        jump: 0.0,
    };
    let mut seg_at = 0usize;
    for n in 0..grid.steps {
        let (a, b) = (grid.time(n), grid.time(n + 1));
        let mut actual = y(b, false) - y(a, false);
        let mut expected = 0.0;
        let mut had_jump = false;
        let mut p = a;
        let inner = cuts.partition_point(|&c| c <= a);
        let mut points: Vec<f64> = cuts[inner..].iter().copied().take_while(|&c| c <= b).collect();
        if points.last() != Some(&b) {
            points.push(b);
        }
        for q in points {
            if q > p {
                while segs[seg_at].end <= p {
                    seg_at += 1;
                }
                let s = segs[seg_at];
                let (up, uq) = if semi {
                    (p - s.duration_origin, q - s.duration_origin)
                } else {
                    (0.0, 0.0)
                };
                let dp = drift(spec, v, p, p, s.state, s.mode, up, false);
                let dq = drift(spec, v, prev_float(q).max(p), q, s.state, s.mode, uq, true);
                expected += 0.5 * (dp + dq) * (q - p);
            }
            if q > a && q <= b {
                // Lump atoms at q.
                let (i, k, u) = path.before(q);
                let u = if semi { u } else { 0.0 };
                if atoms.contains(&q) {
                    expected -= v.value_left_at(q, i, k, u) - v.value_at(q, i, k, u);
                }
                for e in path.events.iter().filter(|e| e.time == q) {
                    had_jump = true;
                    expected += match e.kind {
                        EventKind::StateJump => v.value_at(q, e.to, k, 0.0) - v.value_at(q, e.from, k, u),
                        EventKind::ModeJump => {
                            let u_new = if semi && !path.duration_resets_on_mode_jump {
                                u
                            } else {
                                0.0
                            };
                            v.value_at(q, i, e.to, u_new) - v.value_at(q, i, e.from, u)
                        }
                    };
                }
            }
            p = q;
        }
        actual -= expected;
        let r = actual.abs();
        if had_jump {
            out.jump = out.jump.max(r);
        } else {
            out.continuous = out.continuous.max(r);
        }
    }
    Ok(out)
}

/// `d/dt` of `V` along a sojourn in `(i, k)`: the Thiele right-hand side
/// `δV − α − Σ λ(β + V_j − V_i) − Σ λ¹(β̄ + V_l − V_k)` evaluated at rate
/// time `tr` and value time `tv` (left limits when `left`).
#[allow(clippy::too_many_arguments)]
fn drift(spec: &ContractSpec, v: &ValueFunction, tr: f64, tv: f64, i: usize, k: usize, u: f64, left: bool) -> f64 {
    let val = |s: usize, m: usize, uu: f64| {
        if left {
            v.value_left_at(tv, s, m, uu)
        } else {
            v.value_at(tv, s, m, uu)
        }
    };
    let y = val(i, k, u);
    let mut d = spec.discount_rate(tr) * y - spec.sojourn_rate(tr, i, k, u);
    for j in 0..spec.n_states() {
        let rate = spec.state_rate(tr, i, j, k, u);
        if j == i || rate == 0.0 {
            continue;
        }
        let beta = match spec.surrender_fraction(i, j) {
            Some(f) => f * y,
            None => spec.state_payment(tr, i, j, k, u),
        };
        d -= rate * (beta + val(j, k, 0.0) - y);
    }
    for l in 0..spec.n_modes() {
        let rate = spec.mode_rate(tr, k, l, i);
        if l == k || rate == 0.0 {
            continue;
        }
        let ul = if spec.duration_resets_on_mode_jump { 0.0 } else { u };
        d -= rate * (spec.mode_payment(tr, k, l, i, u) + val(i, l, ul) - y);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::reserve_linear::solve_thiele_markov;
    use crate::simulate::{simulate_path, Event};

    #[test]
    fn residual_is_small_on_term_insurance_paths() {
        let spec = fixtures::term_insurance_with(0.2, 0.03);
        let v = solve_thiele_markov(&spec, 1e-2).unwrap();
        for seed in 0..10 {
            let path = simulate_path(&spec, seed, None).unwrap();
            let r = pathwise_bsde_residual(&path, &v, &spec, 1e-2).unwrap();
            assert!(r.total() < 1e-6, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn a_wrong_reserve_is_detected() {
        let spec = fixtures::term_insurance();
        let v = solve_thiele_markov(&fixtures::term_insurance_with(0.02, 0.03), 1e-2).unwrap();
        let mut path = Path::empty(&spec);
        path.events.push(Event {
            time: 4.0,
            kind: EventKind::StateJump,
            from: 0,
            to: 1,
        });
        let r = pathwise_bsde_residual(&path, &v, &spec, 1e-2).unwrap();
        assert!(r.continuous > 1e-5);
    }

    #[test]
    fn horizon_mismatch_is_an_error() {
        let spec = fixtures::term_insurance();
        let v = solve_thiele_markov(&spec, 1e-2).unwrap();
        let mut path = Path::empty(&spec);
        path.horizon = 5.0;
        assert!(pathwise_bsde_residual(&path, &v, &spec, 1e-2).is_err());
    }
}
