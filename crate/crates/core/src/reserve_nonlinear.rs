//! Reserves with payments that depend on the reserve itself and on the jump
//! coefficients, solved by RK4 with a per-step fixed-point iteration.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ContractSpec, ModelKind};
use crate::quadrature::prev_float;
use crate::thiele::{atoms_by_node, check_step, ensure_finite, markov_rhs, sub_steps, Coupling};
use crate::value::{TimeGrid, ValueFunction};

/// Candidate jump coefficients seen by a driver at `(i, k)`:
/// `state[j] = V(t, j, k) − V(t, i, k)` and `mode[l] = V(t, i, l) − V(t, i, k)`.
#[derive(Debug, Clone, Copy)]
pub struct JumpCoefficients<'a> {
    pub state: &'a [f64],
    pub mode: &'a [f64],
}

/// `(t, i, k, u, y, z) → value`.
pub type DriverFn = Arc<dyn Fn(f64, usize, usize, f64, f64, &JumpCoefficients<'_>) -> f64 + Send + Sync>;

/// How the mode-jump terms enter the equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeCoupling {
    /// The linear terms `λ¹(β̄ + V_l − V_k)` stay in the equation.
    Linear,
    /// The driver carries the whole mode-jump contribution.
    Driver,
}

/// Reserve-dependent part of the payment stream.
///
/// The equation solved is `dV/dt = (linear Thiele terms) − γ(t, i, k, u, V, Z)`
/// with lump condition `V(t−) = V(t) + a_lin + a(t, i, k, u, V(t−), Z)`.
#[derive(Clone)]
pub struct NonlinearDriver {
    pub sojourn: DriverFn,
    pub lump: DriverFn,
    /// Declared Lipschitz constant of `γ` in `(y, z)`.
    pub lipschitz: f64,
    /// Declared `C₁` and `C₂` bounding `|Δa|² ≤ C₁|Δy|² + C₂‖Δz‖²`.
    pub lump_y: f64,
    pub lump_z: f64,
    pub mode_coupling: ModeCoupling,
}

impl std::fmt::Debug for NonlinearDriver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonlinearDriver")
            .field("lipschitz", &self.lipschitz)
            .field("lump_y", &self.lump_y)
            .field("lump_z", &self.lump_z)
            .field("mode_coupling", &self.mode_coupling)
            .finish_non_exhaustive()
    }
}

impl NonlinearDriver {
    pub fn zero() -> Self {
        Self::sojourn(Arc::new(|_, _, _, _, _, _| 0.0), 0.0)
    }

    /// A driver that ignores `(y, z)`.
    pub fn constant(value: f64) -> Self {
        Self::sojourn(Arc::new(move |_, _, _, _, _, _| value), 0.0)
    }

    /// Sojourn driver only, with declared constant `C`.
    pub fn sojourn(f: DriverFn, lipschitz: f64) -> Self {
        Self {
            sojourn: f,
            lump: Arc::new(|_, _, _, _, _, _| 0.0),
            lipschitz,
            lump_y: 0.0,
            lump_z: 0.0,
            mode_coupling: ModeCoupling::Linear,
        }
    }

    pub fn with_lump(mut self, f: DriverFn, c1: f64, c2: f64) -> Self {
        self.lump = f;
        self.lump_y = c1;
        self.lump_z = c2;
        self
    }

    pub fn with_mode_coupling(mut self, m: ModeCoupling) -> Self {
        self.mode_coupling = m;
        self
    }

    /// The surrender payments `f·Y(t−)` of `spec` written as a driver:
    /// `−Σ_j (1 − f_ij)·λ_ij·y`, the part not kept in the linear terms.
    pub fn surrender(spec: &ContractSpec) -> Self {
        let pairs: Vec<(usize, usize, f64)> = spec
            .payments
            .surrender_fraction
            .iter()
            .map(|(&(i, j), &f)| (i, j, f))
            .collect();
        // Rates are read on a fine grid and at every breakpoint, which is exact
        // for tabulated rates.
        let mut times: Vec<f64> = (0..=256).map(|n| spec.horizon * n as f64 / 256.0).collect();
        times.extend(spec.breakpoints());
        let c: f64 = pairs
            .iter()
            .map(|&(i, j, f)| {
                let m = times
                    .iter()
                    .flat_map(|&t| (0..spec.n_modes()).map(move |k| (t, k)))
                    .fold(0.0f64, |m, (t, k)| m.max(spec.state_rate(t, i, j, k, 0.0)));
                (1.0 - f).abs() * m
            })
            .sum();
        let s = spec.clone();
        Self::sojourn(
            Arc::new(move |t, i, k, u, y, _| {
                pairs
                    .iter()
                    .filter(|p| p.0 == i)
                    .map(|&(_, j, f)| -(1.0 - f) * s.state_rate(t, i, j, k, u) * y)
                    .sum()
            }),
            c,
        )
    }

    /// Pointwise sum of two drivers; constants add.
    pub fn plus(&self, other: &NonlinearDriver) -> Self {
        let (a, b) = (self.sojourn.clone(), other.sojourn.clone());
        let (la, lb) = (self.lump.clone(), other.lump.clone());
        let mode_coupling = if self.mode_coupling == ModeCoupling::Driver || other.mode_coupling == ModeCoupling::Driver
        {
            ModeCoupling::Driver
        } else {
            ModeCoupling::Linear
        };
        let c1 = (self.lump_y.sqrt() + other.lump_y.sqrt()).powi(2);
        let c2 = (self.lump_z.sqrt() + other.lump_z.sqrt()).powi(2);
        Self {
            sojourn: Arc::new(move |t, i, k, u, y, z| a(t, i, k, u, y, z) + b(t, i, k, u, y, z)),
            lump: Arc::new(move |t, i, k, u, y, z| la(t, i, k, u, y, z) + lb(t, i, k, u, y, z)),
            lipschitz: self.lipschitz + other.lipschitz,
            lump_y: c1,
            lump_z: c2,
            mode_coupling,
        }
    }

    fn check_declared(&self) -> Result<()> {
        if !(self.lipschitz.is_finite() && self.lipschitz >= 0.0) {
            return Err(Error::Assumption(format!(
                "Lipschitz constant C = {} must be finite and >= 0",
                self.lipschitz
            )));
        }
        if !(self.lump_y >= 0.0 && self.lump_y < 1.0) {
            return Err(Error::Assumption(format!(
                "lump constant C1 = {} must lie in [0, 1)",
                self.lump_y
            )));
        }
        if !(self.lump_z.is_finite() && self.lump_z >= 0.0) {
            return Err(Error::Assumption(format!(
                "lump constant C2 = {} must be finite and >= 0",
                self.lump_z
            )));
        }
        Ok(())
    }
}

/// Iteration statistics of a nonlinear solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PicardStats {
    /// Most inner iterations used by any step.
    pub max_iterations: usize,
    /// Largest ratio of successive inner residuals.
    pub max_contraction: f64,
}

/// Solves the reserve equation with a reserve-dependent driver.
///
/// Surrender fractions declared in `spec` are folded into the driver
/// automatically, so `driver` carries only additional nonlinear payments.
pub fn solve_nonlinear_markov(
    spec: &ContractSpec,
    driver: &NonlinearDriver,
    step: f64,
    picard_tol: f64,
    max_iters: usize,
) -> Result<ValueFunction> {
    solve_nonlinear_markov_with_stats(spec, driver, step, picard_tol, max_iters).map(|(v, _)| v)
}

/// As [`solve_nonlinear_markov`], also returning iteration statistics.
pub fn solve_nonlinear_markov_with_stats(
    spec: &ContractSpec,
    driver: &NonlinearDriver,
    step: f64,
    picard_tol: f64,
    max_iters: usize,
) -> Result<(ValueFunction, PicardStats)> {
    if spec.kind() != ModelKind::Markov {
        return Err(Error::Configuration(
            "solve_nonlinear_markov needs a markov contract".into(),
        ));
    }
    driver.check_declared()?;
    if !(picard_tol > 0.0) || max_iters == 0 {
        return Err(Error::Configuration("picard_tol must be > 0 and max_iters >= 1".into()));
    }
    let full = if spec.has_surrender() {
        driver.plus(&NonlinearDriver::surrender(spec))
    } else {
        driver.clone()
    };
    let grid = TimeGrid::new(spec.horizon, step)?;
    let bps = check_step(spec, &grid)?;
    let atoms = atoms_by_node(spec, &grid);
    let coupling = Coupling {
        surrender_linear: false,
        mode_coupling: full.mode_coupling == ModeCoupling::Linear,
    };
    let mut sys = System::new(spec, &full, coupling);
    let mut vf = ValueFunction::new(spec, grid, ModelKind::Markov);
    let mut stats = PicardStats::default();
    let mut v = vec![0.0; spec.width()];

    sys.apply_atoms(&atoms, &grid, grid.steps, &mut v, &mut vf, picard_tol, max_iters)?;
    for n in (0..grid.steps).rev() {
        for (hi, lo) in sub_steps(&grid, &bps, n) {
            sys.step(hi, lo, &mut v, picard_tol, max_iters, &mut stats)?;
        }
        ensure_finite(&v, grid.time(n))?;
        vf.row_mut(n).copy_from_slice(&v);
        sys.apply_atoms(&atoms, &grid, n, &mut v, &mut vf, picard_tol, max_iters)?;
    }
    log::debug!(
        "nonlinear solve: at most {} inner iterations, contraction ratio <= {:.3e}",
        stats.max_iterations,
        stats.max_contraction
    );
    Ok((vf, stats))
}

struct System<'a> {
    spec: &'a ContractSpec,
    driver: &'a NonlinearDriver,
    coupling: Coupling,
    zs: Vec<f64>,
    zm: Vec<f64>,
}

impl<'a> System<'a> {
    fn new(spec: &'a ContractSpec, driver: &'a NonlinearDriver, coupling: Coupling) -> Self {
        Self {
            spec,
            driver,
            coupling,
            zs: vec![0.0; spec.n_states()],
            zm: vec![0.0; spec.n_modes()],
        }
    }

    /// `γ(t, ·, V, Z(V))` for every `(i, k)`.
    fn forcing(&mut self, t: f64, v: &[f64], out: &mut [f64]) {
        let (ns, nm) = (self.spec.n_states(), self.spec.n_modes());
        for i in 0..ns {
            for k in 0..nm {
                let y = v[i * nm + k];
                for j in 0..ns {
                    self.zs[j] = v[j * nm + k] - y;
                }
                for l in 0..nm {
                    self.zm[l] = v[i * nm + l] - y;
                }
                let z = JumpCoefficients {
                    state: &self.zs,
                    mode: &self.zm,
                };
                out[i * nm + k] = (self.driver.sojourn)(t, i, k, 0.0, y, &z);
            }
        }
    }

    /// Full derivative (linear part minus driver) at `(t, v)`.
    fn derivative(&mut self, t: f64, v: &[f64], out: &mut [f64]) {
        markov_rhs(self.spec, self.coupling, t, v, out);
        let mut g = vec![0.0; v.len()];
        self.forcing(t, v, &mut g);
        for (o, g) in out.iter_mut().zip(&g) {
            *o -= g;
        }
    }

    /// One step from `hi` down to `lo`. The driver enters as forcing read at
    /// the candidate solution; the candidate is refined until it reproduces itself.
    fn step(
        &mut self,
        hi: f64,
        lo: f64,
        v: &mut [f64],
        tol: f64,
        max_iters: usize,
        stats: &mut PicardStats,
    ) -> Result<()> {
        let w = v.len();
        let h = hi - lo;
        let top = prev_float(hi).max(lo);
        let mid = lo + 0.5 * h;
        let mut g_top = vec![0.0; w];
        self.forcing(top, v, &mut g_top);
        let mut d_top = vec![0.0; w];
        markov_rhs(self.spec, self.coupling, top, v, &mut d_top);
        for (d, g) in d_top.iter_mut().zip(&g_top) {
            *d -= g;
        }

        let mut cand = v.to_vec();
        let (mut g_mid, mut g_lo, mut d_lo) = (vec![0.0; w], vec![0.0; w], vec![0.0; w]);
        let mut mid_v = vec![0.0; w];
        let mut last_res = f64::NAN;
        for iter in 1..=max_iters {
            // Cubic Hermite midpoint of the candidate step.
            self.derivative(lo, &cand, &mut d_lo);
            for idx in 0..w {
                mid_v[idx] = 0.5 * (v[idx] + cand[idx]) + h / 8.0 * (d_top[idx] - d_lo[idx]);
            }
            self.forcing(mid, &mid_v, &mut g_mid);
            self.forcing(lo, &cand, &mut g_lo);
            let next = self.rk4_forced(hi, lo, v, [&g_top, &g_mid, &g_lo]);
            let res = next.iter().zip(&cand).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if iter > 1 && last_res > 0.0 && res > 0.0 {
                stats.max_contraction = stats.max_contraction.max(res / last_res);
            }
            cand = next;
            if !res.is_finite() {
                return Err(Error::NonFinite { time: lo });
            }
            if res < tol {
                stats.max_iterations = stats.max_iterations.max(iter);
                v.copy_from_slice(&cand);
                return Ok(());
            }
            last_res = res;
        }
        Err(Error::NonConvergence {
            time: lo,
            iterations: max_iters,
            residual: last_res,
        })
    }

    fn rk4_forced(&self, hi: f64, lo: f64, v: &[f64], g: [&Vec<f64>; 3]) -> Vec<f64> {
        let w = v.len();
        let h = hi - lo;
        let top = prev_float(hi).max(lo);
        let mid = lo + 0.5 * h;
        let mut k = [vec![0.0; w], vec![0.0; w], vec![0.0; w], vec![0.0; w]];
        let mut tmp = v.to_vec();
        let stages = [(top, 0usize, 0.5), (mid, 1, 0.5), (mid, 1, 1.0), (lo, 2, 0.0)];
        for (s, &(t, gi, next)) in stages.iter().enumerate() {
            markov_rhs(self.spec, self.coupling, t, &tmp, &mut k[s]);
            for (kk, gg) in k[s].iter_mut().zip(g[gi]) {
                *kk -= gg;
            }
            if s < 3 {
                for idx in 0..w {
                    tmp[idx] = v[idx] - next * h * k[s][idx];
                }
            }
        }
        (0..w)
            .map(|idx| v[idx] - h / 6.0 * (k[0][idx] + 2.0 * k[1][idx] + 2.0 * k[2][idx] + k[3][idx]))
            .collect()
    }

    /// `V(t−) = V(t) + a_lin + a(t, ·, V(t−), Z(V(t)))`, by fixed-point iteration.
    #[allow(clippy::too_many_arguments)]
    fn apply_atoms(
        &mut self,
        atoms: &std::collections::BTreeMap<usize, Vec<f64>>,
        grid: &TimeGrid,
        n: usize,
        v: &mut [f64],
        vf: &mut ValueFunction,
        tol: f64,
        max_iters: usize,
    ) -> Result<()> {
        let Some(times) = atoms.get(&n) else {
            return Ok(());
        };
        let (ns, nm) = (self.spec.n_states(), self.spec.n_modes());
        let right = v.to_vec();
        for &ta in times {
            let base: Vec<f64> = (0..right.len())
                .map(|idx| v[idx] + self.spec.lump_amount(ta, idx / nm, idx % nm, 0.0))
                .collect();
            let mut cand = base.clone();
            let mut done = false;
            let mut res = f64::NAN;
            for _ in 0..max_iters {
                let mut next = base.clone();
                for i in 0..ns {
                    for k in 0..nm {
                        let y = right[i * nm + k];
                        for j in 0..ns {
                            self.zs[j] = right[j * nm + k] - y;
                        }
                        for l in 0..nm {
                            self.zm[l] = right[i * nm + l] - y;
                        }
                        let z = JumpCoefficients {
                            state: &self.zs,
                            mode: &self.zm,
                        };
                        next[i * nm + k] += (self.driver.lump)(ta, i, k, 0.0, cand[i * nm + k], &z);
                    }
                }
                res = next.iter().zip(&cand).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                cand = next;
                if res < tol {
                    done = true;
                    break;
                }
            }
            if !done {
                return Err(Error::NonConvergence {
                    time: ta,
                    iterations: max_iters,
                    residual: res,
                });
            }
            v.copy_from_slice(&cand);
        }
        ensure_finite(v, grid.time(n))?;
        vf.set_left_row(n, v.to_vec());
        Ok(())
    }
}

/// Empirical Lipschitz ratios of a driver against its declared constants.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub samples: usize,
    /// Largest `|γ(y,z) − γ(ȳ,z̄)| / (|y − ȳ| + ‖z − z̄‖_Λ)`.
    pub max_ratio: f64,
    /// Largest `|Δa|² / (C₁|Δy|² + C₂‖Δz‖²_Λ)`; above 1 is a violation.
    pub max_lump_ratio: f64,
    /// Whether `γ(·, 0, 0)` and `a(·, 0, 0)` were finite at every sample.
    pub finite_at_zero: bool,
    /// Declared constants fit (A3)/(A5) shape constraints.
    pub declared_ok: bool,
    pub violations: Vec<String>,
}

impl LipschitzReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for LipschitzReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "samples = {}", self.samples)?;
        writeln!(f, "max_ratio = {:e}", self.max_ratio)?;
        writeln!(f, "max_lump_ratio = {:e}", self.max_lump_ratio)?;
        writeln!(f, "finite_at_zero = {}", self.finite_at_zero)?;
        writeln!(f, "declared_ok = {}", self.declared_ok)?;
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        Ok(())
    }
}

const SAMPLE_RANGE: f64 = 10.0;

/// Samples `(t, i, k, u)` and pairs `(y, z)`, `(ȳ, z̄)` in `[−10, 10]` and
/// compares the driver's increments with its declared constants, measuring
/// `z` in the intensity-weighted norm at the sampled point.
pub fn check_lipschitz(
    driver: &NonlinearDriver,
    spec: &ContractSpec,
    sample_count: usize,
    seed: u64,
) -> LipschitzReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ns, nm) = (spec.n_states(), spec.n_modes());
    let semi = spec.kind() == ModelKind::SemiMarkov;
    let mut report = LipschitzReport {
        samples: sample_count,
        max_ratio: 0.0,
        max_lump_ratio: 0.0,
        finite_at_zero: true,
        declared_ok: driver.check_declared().is_ok(),
        violations: Vec::new(),
    };
    if let Err(e) = driver.check_declared() {
        report.violations.push(e.to_string());
    }
    let zero_s = vec![0.0; ns];
    let zero_m = vec![0.0; nm];
    let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-SAMPLE_RANGE..=SAMPLE_RANGE)).collect()
    };
    let mut worst = None;
    let mut worst_lump = None;
    for _ in 0..sample_count {
        let t = rng.random_range(0.0..=spec.horizon);
        let i = rng.random_range(0..ns);
        let k = rng.random_range(0..nm);
        let u = if semi { rng.random_range(0.0..=t) } else { 0.0 };
        let (y, yb) = (
            rng.random_range(-SAMPLE_RANGE..=SAMPLE_RANGE),
            rng.random_range(-SAMPLE_RANGE..=SAMPLE_RANGE),
        );
        let (mut zs, mut zsb) = (draw(&mut rng, ns), draw(&mut rng, ns));
        let (mut zm, mut zmb) = (draw(&mut rng, nm), draw(&mut rng, nm));
        // Own coordinates carry no information.
        zs[i] = 0.0;
        zsb[i] = 0.0;
        zm[k] = 0.0;
        zmb[k] = 0.0;
        let mut norm2 = 0.0;
        for j in 0..ns {
            norm2 += spec.state_rate(t, i, j, k, u) * (zs[j] - zsb[j]).powi(2);
        }
        for l in 0..nm {
            norm2 += spec.mode_rate(t, k, l, i) * (zm[l] - zmb[l]).powi(2);
        }
        let z = JumpCoefficients { state: &zs, mode: &zm };
        let zb = JumpCoefficients {
            state: &zsb,
            mode: &zmb,
        };
        let z0 = JumpCoefficients {
            state: &zero_s,
            mode: &zero_m,
        };
        let (g, gb) = (
            (driver.sojourn)(t, i, k, u, y, &z),
            (driver.sojourn)(t, i, k, u, yb, &zb),
        );
        let denom = (y - yb).abs() + norm2.sqrt();
        if denom > 0.0 {
            let r = (g - gb).abs() / denom;
            if !(r <= report.max_ratio) {
                report.max_ratio = r;
                worst = Some((t, i, k, u, y, yb));
            }
        }
        let (a, ab) = ((driver.lump)(t, i, k, u, y, &z), (driver.lump)(t, i, k, u, yb, &zb));
        let lump_den = driver.lump_y * (y - yb).powi(2) + driver.lump_z * norm2;
        let da2 = (a - ab).powi(2);
        if da2 > 0.0 {
            let r = if lump_den > 0.0 { da2 / lump_den } else { f64::INFINITY };
            if !(r <= report.max_lump_ratio) {
                report.max_lump_ratio = r;
                worst_lump = Some((t, i, k, u, y, yb));
            }
        }
        if !((driver.sojourn)(t, i, k, u, 0.0, &z0).is_finite() && (driver.lump)(t, i, k, u, 0.0, &z0).is_finite()) {
            report.finite_at_zero = false;
        }
    }
    let slack = 1e-9;
    if report.max_ratio > driver.lipschitz * (1.0 + slack) + 1e-15 {
        let (t, i, k, u, y, yb) = worst.unwrap_or_default();
        report.violations.push(format!(
            "sojourn driver ratio {:e} exceeds declared C = {} (t = {t}, state {i}, mode {k}, u = {u}, y = {y}, y' = {yb})",
            report.max_ratio, driver.lipschitz
        ));
    }
    if report.max_lump_ratio > 1.0 + slack {
        let (t, i, k, u, y, yb) = worst_lump.unwrap_or_default();
        report.violations.push(format!(
            "lump driver exceeds C1 = {}, C2 = {} by factor {:e} (t = {t}, state {i}, mode {k}, u = {u}, y = {y}, y' = {yb})",
            driver.lump_y, driver.lump_z, report.max_lump_ratio
        ));
    }
    if !report.finite_at_zero {
        report.violations.push("driver is not finite at (y, z) = (0, 0)".into());
    }
    report
}
