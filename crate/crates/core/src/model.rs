//! Contract description: state and mode spaces, transition intensities,
//! payment functions, discounting and horizon.
//!
//! All rate and payment functions take the signature `(time, state, mode,
//! duration)` (plus the target for transitions). Times and durations are in
//! years. A [`ContractSpec`] is immutable once built and can be shared freely
//! across threads.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::piecewise::PiecewiseConstant;

/// `(t, from_state, to_state, mode, duration) -> rate per year`.
pub type StateRateFn = Arc<dyn Fn(f64, usize, usize, usize, f64) -> f64 + Send + Sync>;
/// `(t, from_mode, to_mode, state) -> rate per year`.
pub type ModeRateFn = Arc<dyn Fn(f64, usize, usize, usize) -> f64 + Send + Sync>;
/// `(t, state, mode, duration) -> money` (per year for sojourn rates).
pub type StateModeFn = Arc<dyn Fn(f64, usize, usize, f64) -> f64 + Send + Sync>;
/// `(t, from_state, to_state, mode, duration) -> money`.
pub type StatePaymentFn = Arc<dyn Fn(f64, usize, usize, usize, f64) -> f64 + Send + Sync>;
/// `(t, from_mode, to_mode, state, duration) -> money`.
pub type ModePaymentFn = Arc<dyn Fn(f64, usize, usize, usize, f64) -> f64 + Send + Sync>;

fn check_labels(labels: &[String], initial: usize, what: &str) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Validation {
            key: what.into(),
            message: "at least one label is required".into(),
        });
    }
    for (n, l) in labels.iter().enumerate() {
        if labels[..n].contains(l) {
            return Err(Error::Validation {
                key: what.into(),
                message: format!("duplicate label `{l}`"),
            });
        }
    }
    if initial >= labels.len() {
        return Err(Error::Validation {
            key: what.into(),
            message: format!("initial index {initial} out of range"),
        });
    }
    Ok(())
}

/// Policyholder states `S` and the initial state `x₀`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    labels: Vec<String>,
    initial: usize,
}

impl StateSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>, initial: usize) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        check_labels(&labels, initial, "states")?;
        Ok(Self { labels, initial })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Contract modes `J` and the initial mode `j₀`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeSpace {
    labels: Vec<String>,
    initial: usize,
}

impl ModeSpace {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>, initial: usize) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        check_labels(&labels, initial, "modes")?;
        Ok(Self { labels, initial })
    }

    pub fn single() -> Self {
        Self {
            labels: vec!["standard".into()],
            initial: 0,
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Markov,
    SemiMarkov,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Markov => f.write_str("markov"),
            ModelKind::SemiMarkov => f.write_str("semi_markov"),
        }
    }
}

/// Transition intensities of the state process and of the mode process.
#[derive(Clone)]
pub struct IntensityModel {
    pub kind: ModelKind,
    pub state_rates: StateRateFn,
    pub mode_rates: ModeRateFn,
    /// Upper bound on the total exit rate over `[0, T]`; drives thinning.
    pub rate_bound: f64,
    /// Times where the rates may jump.
    pub breakpoints: Vec<f64>,
}

impl IntensityModel {
    pub fn new(kind: ModelKind, state_rates: StateRateFn, mode_rates: ModeRateFn, rate_bound: f64) -> Self {
        Self {
            kind,
            state_rates,
            mode_rates,
            rate_bound,
            breakpoints: Vec::new(),
        }
    }

    /// Intensities for the state process only; the mode never changes.
    pub fn states_only(kind: ModelKind, state_rates: StateRateFn, rate_bound: f64) -> Self {
        Self::new(kind, state_rates, Arc::new(|_, _, _, _| 0.0), rate_bound)
    }

    pub fn with_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        self.breakpoints = breakpoints;
        self
    }
}

impl fmt::Debug for IntensityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntensityModel")
            .field("kind", &self.kind)
            .field("rate_bound", &self.rate_bound)
            .field("breakpoints", &self.breakpoints)
            .finish_non_exhaustive()
    }
}

/// Contractual payments: sojourn rates `α`, lump sums `a` on the atoms of `ν`,
/// transition payments `β` (state) and `β̄` (mode), and optional
/// reserve-linked surrender payments `(1 − κ)·Y(t−)`.
#[derive(Clone)]
pub struct PaymentModel {
    pub sojourn_rate: StateModeFn,
    /// Sorted atoms of `ν` inside `[0, T]`.
    pub lump_times: Vec<f64>,
    pub lump_amount: StateModeFn,
    pub state_transition: StatePaymentFn,
    pub mode_transition: ModePaymentFn,
    /// `(from_state, to_state) -> 1 − κ`. A listed transition pays that
    /// fraction of the reserve held just before the jump instead of
    /// `state_transition`.
    pub surrender_fraction: BTreeMap<(usize, usize), f64>,
    pub breakpoints: Vec<f64>,
}

impl PaymentModel {
    pub fn none() -> Self {
        Self {
            sojourn_rate: Arc::new(|_, _, _, _| 0.0),
            lump_times: Vec::new(),
            lump_amount: Arc::new(|_, _, _, _| 0.0),
            state_transition: Arc::new(|_, _, _, _, _| 0.0),
            mode_transition: Arc::new(|_, _, _, _, _| 0.0),
            surrender_fraction: BTreeMap::new(),
            breakpoints: Vec::new(),
        }
    }

    pub fn with_sojourn(mut self, f: StateModeFn) -> Self {
        self.sojourn_rate = f;
        self
    }

    pub fn with_lumps(mut self, times: Vec<f64>, amount: StateModeFn) -> Self {
        self.lump_times = times;
        self.lump_amount = amount;
        self
    }

    pub fn with_state_transition(mut self, f: StatePaymentFn) -> Self {
        self.state_transition = f;
        self
    }

    pub fn with_mode_transition(mut self, f: ModePaymentFn) -> Self {
        self.mode_transition = f;
        self
    }

    pub fn with_surrender(mut self, from: usize, to: usize, fraction: f64) -> Self {
        self.surrender_fraction.insert((from, to), fraction);
        self
    }

    pub fn with_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        self.breakpoints = breakpoints;
        self
    }
}

impl fmt::Debug for PaymentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PaymentModel")
            .field("lump_times", &self.lump_times)
            .field("surrender_fraction", &self.surrender_fraction)
            .field("breakpoints", &self.breakpoints)
            .finish_non_exhaustive()
    }
}

/// Deterministic short rate `δ(t)`, piecewise constant.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountModel {
    pub rate: PiecewiseConstant,
}

impl DiscountModel {
    pub fn constant(delta: f64) -> Self {
        Self {
            rate: PiecewiseConstant::constant(delta),
        }
    }

    pub fn piecewise(rate: PiecewiseConstant) -> Self {
        Self { rate }
    }

    pub fn bound(&self) -> f64 {
        self.rate.max_abs()
    }
}

/// Everything needed to reserve, simulate and value one contract.
#[derive(Clone, Debug)]
pub struct ContractSpec {
    pub states: StateSpace,
    pub modes: ModeSpace,
    pub intensities: IntensityModel,
    pub payments: PaymentModel,
    pub discount: DiscountModel,
    pub horizon: f64,
    /// Whether the duration clock restarts on mode jumps as well as on state
    /// jumps. Off by default.
    pub duration_resets_on_mode_jump: bool,
}

impl ContractSpec {
    pub fn new(
        states: StateSpace,
        modes: ModeSpace,
        intensities: IntensityModel,
        payments: PaymentModel,
        discount: DiscountModel,
        horizon: f64,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Validation {
                key: "horizon".into(),
                message: format!("horizon must be finite and positive, got {horizon}"),
            });
        }
        if !(intensities.rate_bound.is_finite() && intensities.rate_bound >= 0.0) {
            return Err(Error::Validation {
                key: "rate_bound".into(),
                message: format!(
                    "rate bound must be finite and nonnegative, got {}",
                    intensities.rate_bound
                ),
            });
        }
        let lumps = &payments.lump_times;
        if lumps.windows(2).any(|w| !(w[1] > w[0])) || lumps.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
            return Err(Error::Validation {
                key: "lump_times".into(),
                message: "lump times must be strictly increasing and inside [0, horizon]".into(),
            });
        }
        for &(i, j) in payments.surrender_fraction.keys() {
            if i >= states.len() || j >= states.len() || i == j {
                return Err(Error::Validation {
                    key: "surrender_fraction".into(),
                    message: format!("invalid transition ({i}, {j})"),
                });
            }
        }
        Ok(Self {
            states,
            modes,
            intensities,
            payments,
            discount,
            horizon,
            duration_resets_on_mode_jump: false,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.intensities.kind
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Number of `(state, mode)` pairs.
    pub fn width(&self) -> usize {
        self.n_states() * self.n_modes()
    }

    /// Flat index of `(state, mode)`.
    #[inline]
    pub fn index(&self, state: usize, mode: usize) -> usize {
        state * self.n_modes() + mode
    }

    #[inline]
    pub fn state_rate(&self, t: f64, i: usize, j: usize, k: usize, u: f64) -> f64 {
        if i == j {
            0.0
        } else {
            (self.intensities.state_rates)(t, i, j, k, u)
        }
    }

    #[inline]
    pub fn mode_rate(&self, t: f64, k: usize, l: usize, i: usize) -> f64 {
        if k == l {
            0.0
        } else {
            (self.intensities.mode_rates)(t, k, l, i)
        }
    }

    #[inline]
    pub fn sojourn_rate(&self, t: f64, i: usize, k: usize, u: f64) -> f64 {
        if t > self.horizon {
            0.0
        } else {
            (self.payments.sojourn_rate)(t, i, k, u)
        }
    }

    #[inline]
    pub fn lump_amount(&self, t: f64, i: usize, k: usize, u: f64) -> f64 {
        if t > self.horizon {
            0.0
        } else {
            (self.payments.lump_amount)(t, i, k, u)
        }
    }

    /// Fixed state-transition payment `β_ij(t, k)`; zero for surrender
    /// transitions, whose payment is reserve-linked.
    #[inline]
    pub fn state_payment(&self, t: f64, i: usize, j: usize, k: usize, u: f64) -> f64 {
        if t > self.horizon || i == j || self.payments.surrender_fraction.contains_key(&(i, j)) {
            0.0
        } else {
            (self.payments.state_transition)(t, i, j, k, u)
        }
    }

    #[inline]
    pub fn mode_payment(&self, t: f64, k: usize, l: usize, i: usize, u: f64) -> f64 {
        if t > self.horizon || k == l {
            0.0
        } else {
            (self.payments.mode_transition)(t, k, l, i, u)
        }
    }

    #[inline]
    pub fn surrender_fraction(&self, i: usize, j: usize) -> Option<f64> {
        self.payments.surrender_fraction.get(&(i, j)).copied()
    }

    pub fn has_surrender(&self) -> bool {
        !self.payments.surrender_fraction.is_empty()
    }

    pub fn discount_rate(&self, t: f64) -> f64 {
        self.discount.rate.eval(t)
    }

    /// `∫_a^b δ(s) ds`, exact.
    pub fn discount_integral(&self, a: f64, b: f64) -> f64 {
        self.discount.rate.integral(a, b)
    }

    /// Sorted, deduplicated breakpoints of all tables inside `(0, T)`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self
            .intensities
            .breakpoints
            .iter()
            .chain(&self.payments.breakpoints)
            .chain(self.discount.rate.breakpoints())
            .copied()
            .filter(|&b| b > 0.0 && b < self.horizon)
            .collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }

    /// The single-mode contract obtained by freezing the mode at `mode`.
    pub fn restrict_to_mode(&self, mode: usize) -> Result<ContractSpec> {
        if mode >= self.n_modes() {
            return Err(Error::Configuration(format!("mode {mode} out of range")));
        }
        let sr = self.intensities.state_rates.clone();
        let soj = self.payments.sojourn_rate.clone();
        let lump = self.payments.lump_amount.clone();
        let beta = self.payments.state_transition.clone();
        let intensities = IntensityModel {
            kind: self.intensities.kind,
            state_rates: Arc::new(move |t, i, j, _, u| sr(t, i, j, mode, u)),
            mode_rates: Arc::new(|_, _, _, _| 0.0),
            rate_bound: self.intensities.rate_bound,
            breakpoints: self.intensities.breakpoints.clone(),
        };
        let payments = PaymentModel {
            sojourn_rate: Arc::new(move |t, i, _, u| soj(t, i, mode, u)),
            lump_times: self.payments.lump_times.clone(),
            lump_amount: Arc::new(move |t, i, _, u| lump(t, i, mode, u)),
            state_transition: Arc::new(move |t, i, j, _, u| beta(t, i, j, mode, u)),
            mode_transition: Arc::new(|_, _, _, _, _| 0.0),
            surrender_fraction: self.payments.surrender_fraction.clone(),
            breakpoints: self.payments.breakpoints.clone(),
        };
        let modes = ModeSpace {
            labels: vec![self.modes.labels[mode].clone()],
            initial: 0,
        };
        let mut spec = ContractSpec::new(
            self.states.clone(),
            modes,
            intensities,
            payments,
            self.discount.clone(),
            self.horizon,
        )?;
        spec.duration_resets_on_mode_jump = self.duration_resets_on_mode_jump;
        Ok(spec)
    }

    /// Same contract with the discount rate shifted by `c` everywhere.
    pub fn with_discount_shift(&self, c: f64) -> ContractSpec {
        let mut spec = self.clone();
        spec.discount = DiscountModel::piecewise(self.discount.rate.shifted(c));
        spec
    }

    /// Same contract with every mode intensity set to zero.
    pub fn without_mode_jumps(&self) -> ContractSpec {
        let mut spec = self.clone();
        spec.intensities.mode_rates = Arc::new(|_, _, _, _| 0.0);
        spec
    }
}

/// Outcome of one named assumption check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// First sampled point that failed, if any.
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            write!(f, "{:<28} {}", c.name, if c.passed { "pass" } else { "FAIL" })?;
            if let Some(w) = &c.witness {
                write!(f, "  ({w})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

struct Recorder {
    name: &'static str,
    witness: Option<String>,
}

impl Recorder {
    fn new(name: &'static str) -> Self {
        Self { name, witness: None }
    }

    fn fail_if(&mut self, bad: bool, witness: impl FnOnce() -> String) {
        if bad && self.witness.is_none() {
            self.witness = Some(witness());
        }
    }

    fn finish(self) -> Check {
        Check {
            name: self.name,
            passed: self.witness.is_none(),
            witness: self.witness,
        }
    }
}

/// Samples `(t, i, j, k, u)` points and checks the standing assumptions on
/// rates and payments. Failures are reported, never thrown.
///
/// The sample set always contains a uniform grid over `[0, T]` plus
/// `sample_count` random points (fixed seed), so the outcome is reproducible.
pub fn validate_assumptions(spec: &ContractSpec, sample_count: usize) -> ValidationReport {
    let sample_count = sample_count.max(1);
    let horizon = spec.horizon;
    let (ns, nm) = (spec.n_states(), spec.n_modes());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_a55e);

    let mut times: Vec<f64> = (0..=sample_count)
        .map(|n| horizon * n as f64 / sample_count as f64)
        .collect();
    times.extend((0..sample_count).map(|_| rng.random::<f64>() * horizon));
    times.extend(spec.breakpoints());
    let durations = |t: f64, rng: &mut ChaCha8Rng| [0.0, t, rng.random::<f64>() * t];

    let mut state_nonneg = Recorder::new("state_rates_nonnegative");
    let mut mode_nonneg = Recorder::new("mode_rates_nonnegative");
    let mut bound = Recorder::new("rate_bound");
    let mut markov_u = Recorder::new("markov_duration_free");
    let mut payments_finite = Recorder::new("payments_bounded");
    let mut discount = Recorder::new("discount_bounded");
    let mut after_horizon = Recorder::new("payments_vanish_after_T");
    let mut surrender = Recorder::new("surrender_fraction_range");

    let rate_bound = spec.intensities.rate_bound;
    let discount_bound = spec.discount.bound();

    for &t in &times {
        let d = spec.discount_rate(t);
        discount.fail_if(!d.is_finite() || d.abs() > discount_bound, || {
            format!("t={t}, delta={d}")
        });
        for i in 0..ns {
            for k in 0..nm {
                for u in durations(t, &mut rng) {
                    let mut total = 0.0;
                    for j in (0..ns).filter(|&j| j != i) {
                        let r = spec.state_rate(t, i, j, k, u);
                        state_nonneg.fail_if(!(r.is_finite() && r >= 0.0), || {
                            format!("t={t}, i={i}, j={j}, k={k}, u={u}, rate={r}")
                        });
                        if spec.kind() == ModelKind::Markov {
                            let r0 = spec.state_rate(t, i, j, k, 0.0);
                            markov_u.fail_if(r0 != r, || format!("t={t}, i={i}, j={j}, k={k}, u={u}"));
                        }
                        total += r;
                        let b = spec.state_payment(t, i, j, k, u);
                        payments_finite.fail_if(!b.is_finite(), || format!("beta t={t}, i={i}, j={j}, k={k}"));
                    }
                    for l in (0..nm).filter(|&l| l != k) {
                        let r = spec.mode_rate(t, k, l, i);
                        mode_nonneg.fail_if(!(r.is_finite() && r >= 0.0), || {
                            format!("t={t}, k={k}, l={l}, i={i}, rate={r}")
                        });
                        total += r;
                        let b = spec.mode_payment(t, k, l, i, u);
                        payments_finite.fail_if(!b.is_finite(), || format!("beta_bar t={t}, k={k}, l={l}, i={i}"));
                    }
                    bound.fail_if(!(total <= rate_bound), || {
                        format!("t={t}, i={i}, k={k}, u={u}, total={total}, bound={rate_bound}")
                    });
                    let a = spec.sojourn_rate(t, i, k, u);
                    payments_finite.fail_if(!a.is_finite(), || format!("alpha t={t}, i={i}, k={k}, u={u}"));
                }
            }
        }
    }
    for &t in &spec.payments.lump_times {
        for i in 0..ns {
            for k in 0..nm {
                let a = spec.lump_amount(t, i, k, 0.0);
                payments_finite.fail_if(!a.is_finite(), || format!("lump t={t}, i={i}, k={k}"));
            }
        }
    }
    // Raw payment functions, read without the horizon cut, must vanish too.
    for n in 1..=sample_count.min(100) {
        let t = horizon * (1.0 + n as f64 / 100.0);
        for i in 0..ns {
            for k in 0..nm {
                let mut nonzero = (spec.payments.sojourn_rate)(t, i, k, 0.0) != 0.0
                    || (spec.payments.lump_amount)(t, i, k, 0.0) != 0.0;
                for j in (0..ns).filter(|&j| j != i) {
                    nonzero |= (spec.payments.state_transition)(t, i, j, k, 0.0) != 0.0;
                }
                for l in (0..nm).filter(|&l| l != k) {
                    nonzero |= (spec.payments.mode_transition)(t, k, l, i, 0.0) != 0.0;
                }
                after_horizon.fail_if(nonzero, || format!("t={t}, i={i}, k={k}"));
            }
        }
    }
    for (&(i, j), &f) in &spec.payments.surrender_fraction {
        surrender.fail_if(!(0.0..=1.0).contains(&f), || format!("({i}, {j}) fraction={f}"));
    }

    let mut checks = vec![state_nonneg.finish(), mode_nonneg.finish(), bound.finish()];
    if spec.kind() == ModelKind::Markov {
        checks.push(markov_u.finish());
    }
    checks.extend([
        payments_finite.finish(),
        discount.finish(),
        after_horizon.finish(),
        surrender.finish(),
    ]);
    ValidationReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term(mu: f64) -> ContractSpec {
        ContractSpec::new(
            StateSpace::new(["alive", "dead"], 0).unwrap(),
            ModeSpace::single(),
            IntensityModel::states_only(
                ModelKind::Markov,
                Arc::new(move |_, i, j, _, _| if (i, j) == (0, 1) { mu } else { 0.0 }),
                mu,
            ),
            PaymentModel::none().with_state_transition(Arc::new(
                |t, i, j, _, _| {
                    if t <= 10.0 && (i, j) == (0, 1) {
                        1.0
                    } else {
                        0.0
                    }
                },
            )),
            DiscountModel::constant(0.03),
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn term_insurance_passes_all_checks() {
        let report = validate_assumptions(&term(0.01), 1000);
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn negative_rate_is_reported_with_witness() {
        let mut spec = term(0.01);
        spec.intensities.state_rates = Arc::new(|t, i, j, _, _| {
            if (i, j) == (0, 1) {
                if (3.0..4.0).contains(&t) {
                    -0.1
                } else {
                    0.01
                }
            } else {
                0.0
            }
        });
        let report = validate_assumptions(&spec, 1000);
        let check = report.check("state_rates_nonnegative").unwrap();
        assert!(!check.passed);
        assert!(check.witness.as_ref().unwrap().contains("rate=-0.1"));
    }

    #[test]
    fn surrender_fraction_out_of_range_is_reported() {
        let mut spec = term(0.01);
        spec.payments.surrender_fraction.insert((0, 1), 1.2);
        let report = validate_assumptions(&spec, 10);
        assert!(!report.check("surrender_fraction_range").unwrap().passed);
    }

    #[test]
    fn rate_bound_violation_is_reported() {
        let mut spec = term(0.01);
        spec.intensities.rate_bound = 0.005;
        assert!(!validate_assumptions(&spec, 10).check("rate_bound").unwrap().passed);
    }

    #[test]
    fn payments_vanish_after_horizon() {
        let spec = term(0.01);
        assert_eq!(spec.state_payment(10.5, 0, 1, 0, 0.0), 0.0);
        assert_eq!(spec.state_payment(10.0, 0, 1, 0, 0.0), 1.0);
        let mut leaky = spec.clone();
        leaky.payments.sojourn_rate = Arc::new(|_, _, _, _| 1.0);
        assert_eq!(leaky.sojourn_rate(11.0, 0, 0, 0.0), 0.0);
        assert!(
            !validate_assumptions(&leaky, 10)
                .check("payments_vanish_after_T")
                .unwrap()
                .passed
        );
    }

    #[test]
    fn rejects_structural_defects() {
        assert!(StateSpace::new(["a", "a"], 0).is_err());
        assert!(StateSpace::new(Vec::<String>::new(), 0).is_err());
        assert!(ModeSpace::new(["m"], 1).is_err());
        let spec = term(0.01);
        let err = ContractSpec::new(
            spec.states.clone(),
            spec.modes.clone(),
            spec.intensities.clone(),
            spec.payments.clone(),
            spec.discount.clone(),
            0.0,
        );
        assert!(matches!(err, Err(Error::Validation { key, .. }) if key == "horizon"));
    }

    #[test]
    fn restriction_fixes_the_mode() {
        let spec = ContractSpec::new(
            StateSpace::new(["alive", "dead"], 0).unwrap(),
            ModeSpace::new(["paying", "free"], 0).unwrap(),
            IntensityModel::new(
                ModelKind::Markov,
                Arc::new(|_, i, j, k, _| if (i, j) == (0, 1) { 0.01 * (k + 1) as f64 } else { 0.0 }),
                Arc::new(|_, _, _, _| 0.3),
                1.0,
            ),
            PaymentModel::none(),
            DiscountModel::constant(0.0),
            5.0,
        )
        .unwrap();
        let free = spec.restrict_to_mode(1).unwrap();
        assert_eq!(free.n_modes(), 1);
        assert_eq!(free.state_rate(1.0, 0, 1, 0, 0.0), 0.02);
        assert_eq!(free.mode_rate(1.0, 0, 0, 0), 0.0);
        assert_eq!(free.modes.labels()[0], "free");
    }
}
