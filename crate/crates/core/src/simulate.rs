//! Exact simulation of the bivariate jump process `(X, J)` by thinning, and
//! empirical checks of the compensated counting-process martingales.
//!
//! Every path draws from its own ChaCha stream, selected by `(seed, path
//! index)`, so results do not depend on how paths are scheduled across
//! threads.

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ContractSpec;
use crate::parallel::map_indexed;
use crate::quadrature::{integrate_pieces, mean_and_stderr, next_float};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    StateJump,
    ModeJump,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::StateJump => "state_jump",
            EventKind::ModeJump => "mode_jump",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub from: usize,
    pub to: usize,
}

/// A piece of a path on which state, mode and duration origin are fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub state: usize,
    pub mode: usize,
    /// Time the duration clock was last reset; `U(t) = t − duration_origin`.
    pub duration_origin: f64,
}

/// One realised trajectory of `(X, J)` on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub events: Vec<Event>,
    pub initial_state: usize,
    pub initial_mode: usize,
    pub horizon: f64,
    pub duration_resets_on_mode_jump: bool,
}

impl Path {
    pub fn empty(spec: &ContractSpec) -> Self {
        Self {
            events: Vec::new(),
            initial_state: spec.states.initial(),
            initial_mode: spec.modes.initial(),
            horizon: spec.horizon,
            duration_resets_on_mode_jump: spec.duration_resets_on_mode_jump,
        }
    }

    pub fn mode_jumps(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.kind == EventKind::ModeJump)
    }

    /// Sojourn segments covering `[0, T]` in order.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(self.events.len() + 1);
        let (mut state, mut mode, mut origin, mut start) = (self.initial_state, self.initial_mode, 0.0, 0.0);
        for e in &self.events {
            out.push(Segment {
                start,
                end: e.time,
                state,
                mode,
                duration_origin: origin,
            });
            match e.kind {
                EventKind::StateJump => {
                    state = e.to;
                    origin = e.time;
                }
                EventKind::ModeJump => {
                    mode = e.to;
                    if self.duration_resets_on_mode_jump {
                        origin = e.time;
                    }
                }
            }
            start = e.time;
        }
        out.push(Segment {
            start,
            end: self.horizon,
            state,
            mode,
            duration_origin: origin,
        });
        out
    }

    /// `(X(t), J(t), U(t))`, right-continuous.
    pub fn at(&self, t: f64) -> (usize, usize, f64) {
        let segs = self.segments();
        let n = segs.partition_point(|s| s.start <= t).saturating_sub(1);
        let s = segs[n];
        (s.state, s.mode, t - s.duration_origin)
    }

    /// `(X(t−), J(t−), U(t−))`.
    pub fn before(&self, t: f64) -> (usize, usize, f64) {
        let segs = self.segments();
        let n = segs.partition_point(|s| s.start < t).saturating_sub(1);
        let s = segs[n];
        (s.state, s.mode, t - s.duration_origin)
    }

    /// Checks ordering, time range and event chaining.
    pub fn check_invariants(&self, n_states: usize, n_modes: usize) -> Result<()> {
        let (mut state, mut mode, mut last) = (self.initial_state, self.initial_mode, 0.0);
        for (n, e) in self.events.iter().enumerate() {
            if !(e.time > last && e.time <= self.horizon) {
                return Err(Error::Mismatch(format!(
                    "event {n} at {} is not in ({last}, T]",
                    e.time
                )));
            }
            match e.kind {
                EventKind::StateJump => {
                    if e.from != state || e.to == e.from || e.to >= n_states {
                        return Err(Error::Mismatch(format!(
                            "event {n}: bad state jump {}->{}",
                            e.from, e.to
                        )));
                    }
                    state = e.to;
                }
                EventKind::ModeJump => {
                    if e.from != mode || e.to == e.from || e.to >= n_modes {
                        return Err(Error::Mismatch(format!(
                            "event {n}: bad mode jump {}->{}",
                            e.from, e.to
                        )));
                    }
                    mode = e.to;
                }
            }
            last = e.time;
        }
        Ok(())
    }
}

/// Per-path random stream: ChaCha8 seeded from `seed`, stream `index`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates one path from stream 0 of `seed`.
///
/// With `mode_jump_limit = Some(m)` the mode intensities are switched off after
/// the `m`-th mode jump (the measure under which at most `m` modifications
/// happen).
pub fn simulate_path(spec: &ContractSpec, seed: u64, mode_jump_limit: Option<usize>) -> Result<Path> {
    simulate_path_indexed(spec, seed, 0, mode_jump_limit)
}

/// Simulates the path with the given index; paths with different indices
/// use independent streams.
pub fn simulate_path_indexed(
    spec: &ContractSpec,
    seed: u64,
    index: u64,
    mode_jump_limit: Option<usize>,
) -> Result<Path> {
    let mut rng = path_rng(seed, index);
    simulate_with(spec, &mut rng, mode_jump_limit)
}

/// Lewis–Shedler thinning against `spec.intensities.rate_bound`.
pub fn simulate_with<R: Rng>(spec: &ContractSpec, rng: &mut R, mode_jump_limit: Option<usize>) -> Result<Path> {
    let mut path = Path::empty(spec);
    let bound = spec.intensities.rate_bound;
    if bound <= 0.0 {
        return Ok(path);
    }
    let (ns, nm) = (spec.n_states(), spec.n_modes());
    let horizon = spec.horizon;
    let atoms = &spec.payments.lump_times;
    let (mut state, mut mode) = (path.initial_state, path.initial_mode);
    let (mut t, mut origin, mut mode_jumps) = (0.0f64, 0.0f64, 0usize);
    let mut rates = vec![0.0; ns + nm];

    loop {
        let e: f64 = -(1.0 - rng.random::<f64>()).ln();
        t += e / bound;
        if atoms.binary_search_by(|a| a.total_cmp(&t)).is_ok() {
            t = next_float(t);
        }
        if t > horizon {
            break;
        }
        let u = t - origin;
        let modes_open = mode_jump_limit.is_none_or(|m| mode_jumps < m);
        let mut total = 0.0;
        for (j, r) in rates[..ns].iter_mut().enumerate() {
            *r = spec.state_rate(t, state, j, mode, u);
            total += *r;
        }
        for l in 0..nm {
            rates[ns + l] = if modes_open {
                spec.mode_rate(t, mode, l, state)
            } else {
                0.0
            };
            total += rates[ns + l];
        }
        if total > bound * (1.0 + 1e-12) || !total.is_finite() {
            return Err(Error::RateBoundExceeded {
                time: t,
                state,
                mode,
                duration: u,
                rate: total,
                bound,
            });
        }
        let v = rng.random::<f64>() * bound;
        if v >= total {
            continue;
        }
        let mut cum = 0.0;
        let mut pick = None;
        for (n, &r) in rates.iter().enumerate() {
            cum += r;
            if r > 0.0 && v < cum {
                pick = Some(n);
                break;
            }
        }
        // Rounding can leave v just above the last partial sum.
        let pick = pick.unwrap_or_else(|| rates.iter().rposition(|&r| r > 0.0).unwrap_or(0));
        if pick < ns {
            path.events.push(Event {
                time: t,
                kind: EventKind::StateJump,
                from: state,
                to: pick,
            });
            state = pick;
            origin = t;
        } else {
            let to = pick - ns;
            path.events.push(Event {
                time: t,
                kind: EventKind::ModeJump,
                from: mode,
                to,
            });
            mode = to;
            mode_jumps += 1;
            if spec.duration_resets_on_mode_jump {
                origin = t;
            }
        }
    }
    Ok(path)
}

/// Simulates `count` paths with indices `0..count`.
pub fn simulate_paths(
    spec: &ContractSpec,
    count: usize,
    seed: u64,
    mode_jump_limit: Option<usize>,
) -> Result<Vec<Path>> {
    map_indexed(count, |n| simulate_path_indexed(spec, seed, n as u64, mode_jump_limit))
        .into_iter()
        .collect()
}

/// Delimiter-separated event dump: `path_id,time,kind,from,to`.
pub fn write_path_dump<W: std::io::Write>(out: &mut W, paths: &[Path]) -> std::io::Result<()> {
    writeln!(out, "path_id,time,kind,from,to")?;
    for (id, p) in paths.iter().enumerate() {
        for e in &p.events {
            writeln!(out, "{id},{},{},{},{}", e.time, e.kind, e.from, e.to)?;
        }
    }
    Ok(())
}

/// Which counting process a statistic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    State { from: usize, to: usize },
    Mode { from: usize, to: usize },
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transition::State { from, to } => write!(f, "N0[{from}->{to}]"),
            Transition::Mode { from, to } => write!(f, "N1[{from}->{to}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleStat {
    pub transition: Transition,
    pub mean: f64,
    pub stderr: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceStat {
    pub first: Transition,
    pub second: Transition,
    pub covariance: f64,
    pub stderr: f64,
    pub z: f64,
}

/// Empirical moments of the terminal values `M(T)` of all compensated
/// counting processes.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub path_count: usize,
    pub means: Vec<MartingaleStat>,
    pub covariances: Vec<CovarianceStat>,
}

impl MartingaleReport {
    pub fn max_abs_mean_z(&self) -> f64 {
        self.means.iter().fold(0.0, |m, s| m.max(s.z.abs()))
    }

    pub fn max_abs_covariance_z(&self) -> f64 {
        self.covariances.iter().fold(0.0, |m, s| m.max(s.z.abs()))
    }

    pub fn mean_of(&self, t: Transition) -> Option<&MartingaleStat> {
        self.means.iter().find(|s| s.transition == t)
    }
}

impl fmt::Display for MartingaleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        writeln!(s, "paths = {}", self.path_count)?;
        for m in &self.means {
            writeln!(
                s,
                "mean {}: {:.6e} (se {:.3e}, z {:.3})",
                m.transition, m.mean, m.stderr, m.z
            )?;
        }
        for c in &self.covariances {
            writeln!(
                s,
                "cov {} x {}: {:.6e} (se {:.3e}, z {:.3})",
                c.first, c.second, c.covariance, c.stderr, c.z
            )?;
        }
        f.write_str(&s)
    }
}

fn z_score(value: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        value / stderr
    } else if value == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(value)
    }
}

/// Relative tolerance of the compensator quadrature.
pub const COMPENSATOR_REL_TOL: f64 = 1e-8;

/// `M(T) = N(T) − ∫_0^T I(s−) λ(s) ds` for every transition pair on one path.
pub fn terminal_martingales(spec: &ContractSpec, path: &Path, transitions: &[Transition]) -> Vec<f64> {
    let breaks = spec.breakpoints();
    let mut values = vec![0.0; transitions.len()];
    for (n, tr) in transitions.iter().enumerate() {
        let count = path
            .events
            .iter()
            .filter(|e| match *tr {
                Transition::State { from, to } => e.kind == EventKind::StateJump && e.from == from && e.to == to,
                Transition::Mode { from, to } => e.kind == EventKind::ModeJump && e.from == from && e.to == to,
            })
            .count() as f64;
        values[n] = count;
    }
    for seg in path.segments() {
        for (n, tr) in transitions.iter().enumerate() {
            let comp = match *tr {
                Transition::State { from, to } if from == seg.state => integrate_pieces(
                    |s| spec.state_rate(s, from, to, seg.mode, s - seg.duration_origin),
                    seg.start,
                    seg.end,
                    &breaks,
                    COMPENSATOR_REL_TOL,
                ),
                Transition::Mode { from, to } if from == seg.mode => integrate_pieces(
                    |s| spec.mode_rate(s, from, to, seg.state),
                    seg.start,
                    seg.end,
                    &breaks,
                    COMPENSATOR_REL_TOL,
                ),
                _ => 0.0,
            };
            values[n] -= comp;
        }
    }
    values
}

pub fn all_transitions(spec: &ContractSpec) -> Vec<Transition> {
    let mut out = Vec::new();
    for from in 0..spec.n_states() {
        for to in (0..spec.n_states()).filter(|&to| to != from) {
            out.push(Transition::State { from, to });
        }
    }
    for from in 0..spec.n_modes() {
        for to in (0..spec.n_modes()).filter(|&to| to != from) {
            out.push(Transition::Mode { from, to });
        }
    }
    out
}

/// Simulates `path_count` paths and reports mean, standard error and z-score of
/// every `M(T)` together with all pairwise covariances.
pub fn martingale_diagnostics(spec: &ContractSpec, path_count: usize, seed: u64) -> Result<MartingaleReport> {
    if path_count < 2 {
        return Err(Error::Configuration(
            "martingale diagnostics need at least 2 paths".into(),
        ));
    }
    let transitions = all_transitions(spec);
    let rows: Vec<Vec<f64>> = map_indexed(path_count, |n| {
        simulate_path_indexed(spec, seed, n as u64, None).map(|p| terminal_martingales(spec, &p, &transitions))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let columns: Vec<Vec<f64>> = (0..transitions.len()).map(column).collect();
    let means: Vec<MartingaleStat> = transitions
        .iter()
        .zip(&columns)
        .map(|(&transition, col)| {
            let (mean, stderr) = mean_and_stderr(col);
            MartingaleStat {
                transition,
                mean,
                stderr,
                z: z_score(mean, stderr),
            }
        })
        .collect();

    let mut covariances = Vec::new();
    for a in 0..transitions.len() {
        for b in (a + 1)..transitions.len() {
            let (ma, mb) = (means[a].mean, means[b].mean);
            let products: Vec<f64> = columns[a]
                .iter()
                .zip(&columns[b])
                .map(|(x, y)| (x - ma) * (y - mb))
                .collect();
            let (covariance, stderr) = mean_and_stderr(&products);
            covariances.push(CovarianceStat {
                first: transitions[a],
                second: transitions[b],
                covariance,
                stderr,
                z: z_score(covariance, stderr),
            });
        }
    }
    Ok(MartingaleReport {
        path_count,
        means,
        covariances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn zero_intensity_gives_no_events() {
        let spec = fixtures::term_insurance_with(0.0, 0.03);
        for seed in 0..50 {
            assert!(simulate_path(&spec, seed, None).unwrap().events.is_empty());
        }
    }

    #[test]
    fn same_seed_same_path() {
        let spec = fixtures::free_policy();
        for seed in 0..20 {
            assert_eq!(
                simulate_path(&spec, seed, None).unwrap(),
                simulate_path(&spec, seed, None).unwrap()
            );
        }
    }

    #[test]
    fn mode_jump_limit_zero_blocks_modifications() {
        let spec = fixtures::free_policy();
        for seed in 0..500 {
            let p = simulate_path(&spec, seed, Some(0)).unwrap();
            assert_eq!(p.mode_jumps().count(), 0);
        }
    }

    #[test]
    fn rate_bound_violation_is_an_error() {
        let mut spec = fixtures::term_insurance_with(0.5, 0.03);
        spec.intensities.rate_bound = 0.1;
        let err = (0..100).find_map(|s| simulate_path(&spec, s, None).err());
        assert!(matches!(err, Some(Error::RateBoundExceeded { .. })));
    }

    #[test]
    fn segments_track_durations() {
        let mut p = Path::empty(&fixtures::free_policy());
        p.events = vec![
            Event {
                time: 1.0,
                kind: EventKind::ModeJump,
                from: 0,
                to: 1,
            },
            Event {
                time: 2.5,
                kind: EventKind::StateJump,
                from: 0,
                to: 1,
            },
        ];
        let segs = p.segments();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[1].duration_origin, 0.0);
        assert_eq!(segs[2].duration_origin, 2.5);
        assert_eq!(p.at(2.5), (1, 1, 0.0));
        assert_eq!(p.before(2.5), (0, 1, 2.5));
        p.duration_resets_on_mode_jump = true;
        assert_eq!(p.segments()[1].duration_origin, 1.0);
    }

    #[test]
    fn zero_intensity_martingales_are_exactly_zero() {
        let spec = fixtures::term_insurance_with(0.0, 0.03);
        let report = martingale_diagnostics(&spec, 100, 3).unwrap();
        assert!(report.means.iter().all(|m| m.mean == 0.0 && m.z == 0.0));
    }

    #[test]
    fn path_dump_format() {
        let mut p = Path::empty(&fixtures::term_insurance());
        p.events.push(Event {
            time: 2.5,
            kind: EventKind::StateJump,
            from: 0,
            to: 1,
        });
        let mut buf = Vec::new();
        write_path_dump(&mut buf, &[p]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "path_id,time,kind,from,to\n0,2.5,state_jump,0,1\n"
        );
    }
}
