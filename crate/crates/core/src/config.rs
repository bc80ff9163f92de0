//! TOML contract documents.
//!
//! ```toml
//! horizon = 10.0
//! kind = "markov"                      # or "semi_markov"
//!
//! [states]
//! labels = ["alive", "dead"]
//! initial = "alive"
//!
//! [modes]                              # optional, defaults to one mode
//! labels = ["standard"]
//!
//! [discount]
//! breakpoints = [0.0]
//! values = [0.03]
//!
//! [[intensities]]                      # state transition
//! from_state = "alive"
//! to_state = "dead"
//! mode = "standard"                    # optional, default: every mode
//! breakpoints = [0.0]
//! values = [0.01]
//! duration_decay = 1.0                 # optional, semi-Markov: × exp(-decay·u)
//!
//! [[intensities]]                      # mode transition
//! from_mode = "paying"
//! to_mode = "free"
//! state = "alive"                      # optional, default: every state
//! breakpoints = [0.0]
//! values = [0.04]
//!
//! [[payments.sojourn]]                 # α, money per year
//! state = "alive"
//! breakpoints = [0.0]
//! values = [-0.02]
//!
//! [[payments.lump]]                    # atom of ν
//! time = 10.0
//! state = "alive"
//! amount = 1.0
//!
//! [[payments.transition]]              # β (from_state/to_state) or β̄ (from_mode/to_mode)
//! from_state = "alive"
//! to_state = "dead"
//! breakpoints = [0.0]
//! values = [1.0]
//!
//! [[payments.surrender_fraction]]      # pays fraction · Y(t−)
//! from_state = "alive"
//! to_state = "surrendered"
//! fraction = 0.9
//! ```
//!
//! Tables are piecewise constant with right-continuous pieces starting at
//! their breakpoints; the first breakpoint must be 0.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{ContractSpec, DiscountModel, IntensityModel, ModeSpace, ModelKind, PaymentModel, StateSpace};
use crate::piecewise::PiecewiseConstant;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    horizon: Option<f64>,
    kind: Option<String>,
    duration_resets_on_mode_jump: Option<bool>,
    rate_bound: Option<f64>,
    states: Option<Labels>,
    modes: Option<Labels>,
    discount: Option<Table>,
    #[serde(default)]
    intensities: Vec<Entry>,
    #[serde(default)]
    payments: Payments,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Labels {
    labels: Vec<String>,
    initial: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Table {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

/// A rate or transition-payment table, for either a state or a mode jump.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    from_state: Option<String>,
    to_state: Option<String>,
    mode: Option<String>,
    from_mode: Option<String>,
    to_mode: Option<String>,
    state: Option<String>,
    breakpoints: Option<Vec<f64>>,
    values: Option<Vec<f64>>,
    duration_decay: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Payments {
    #[serde(default)]
    sojourn: Vec<Sojourn>,
    #[serde(default)]
    lump: Vec<Lump>,
    #[serde(default)]
    transition: Vec<Entry>,
    #[serde(default)]
    surrender_fraction: Vec<Surrender>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sojourn {
    state: String,
    mode: Option<String>,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Lump {
    time: f64,
    state: String,
    mode: Option<String>,
    amount: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Surrender {
    from_state: String,
    to_state: String,
    fraction: f64,
}

fn parse_err(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        key: key.into(),
        message: message.into(),
    }
}

fn invalid(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Validation {
        key: key.into(),
        message: message.into(),
    }
}

/// Table with an optional exponential duration factor.
#[derive(Debug, Clone)]
struct RateTable {
    table: PiecewiseConstant,
    decay: f64,
}

impl RateTable {
    #[inline]
    fn eval(&self, t: f64, u: f64) -> f64 {
        let r = self.table.eval(t);
        if self.decay == 0.0 {
            r
        } else {
            r * (-self.decay * u).exp()
        }
    }
}

/// Dense `[a][b][c]` lookup of optional tables.
#[derive(Debug, Clone)]
struct Cube {
    dims: [usize; 3],
    cells: Vec<Option<RateTable>>,
}

impl Cube {
    fn new(dims: [usize; 3]) -> Self {
        Self {
            dims,
            cells: vec![None; dims[0] * dims[1] * dims[2]],
        }
    }

    fn slot(&mut self, a: usize, b: usize, c: usize) -> &mut Option<RateTable> {
        &mut self.cells[(a * self.dims[1] + b) * self.dims[2] + c]
    }

    #[inline]
    fn get(&self, a: usize, b: usize, c: usize) -> Option<&RateTable> {
        if a >= self.dims[0] || b >= self.dims[1] || c >= self.dims[2] {
            return None;
        }
        self.cells[(a * self.dims[1] + b) * self.dims[2] + c].as_ref()
    }
}

struct Resolver<'a> {
    states: &'a StateSpace,
    modes: &'a ModeSpace,
}

impl Resolver<'_> {
    fn state(&self, key: &str, label: &str) -> Result<usize> {
        self.states
            .index_of(label)
            .ok_or_else(|| parse_err(key, format!("unknown state `{label}`")))
    }

    fn mode(&self, key: &str, label: &str) -> Result<usize> {
        self.modes
            .index_of(label)
            .ok_or_else(|| parse_err(key, format!("unknown mode `{label}`")))
    }

    fn state_or_all(&self, key: &str, label: Option<&String>) -> Result<Vec<usize>> {
        match label {
            Some(l) => Ok(vec![self.state(key, l)?]),
            None => Ok((0..self.states.len()).collect()),
        }
    }

    fn mode_or_all(&self, key: &str, label: Option<&String>) -> Result<Vec<usize>> {
        match label {
            Some(l) => Ok(vec![self.mode(key, l)?]),
            None => Ok((0..self.modes.len()).collect()),
        }
    }
}

fn table(key: &str, breakpoints: Option<Vec<f64>>, values: Option<Vec<f64>>) -> Result<PiecewiseConstant> {
    let breakpoints = breakpoints.ok_or_else(|| parse_err(format!("{key}.breakpoints"), "missing"))?;
    let values = values.ok_or_else(|| parse_err(format!("{key}.values"), "missing"))?;
    PiecewiseConstant::new(breakpoints, values).map_err(|e| match e {
        Error::Validation { key: sub, message } => invalid(format!("{key}.{sub}"), message),
        other => other,
    })
}

enum Target {
    State { from: usize, to: usize, modes: Vec<usize> },
    Mode { from: usize, to: usize, states: Vec<usize> },
}

fn target(key: &str, e: &Entry, r: &Resolver<'_>) -> Result<Target> {
    match (&e.from_state, &e.from_mode) {
        (Some(from), None) => {
            if e.to_mode.is_some() || e.state.is_some() {
                return Err(parse_err(
                    key,
                    "state transition entries take `mode`, not `to_mode`/`state`",
                ));
            }
            let to = e
                .to_state
                .as_ref()
                .ok_or_else(|| parse_err(format!("{key}.to_state"), "missing"))?;
            let from = r.state(&format!("{key}.from_state"), from)?;
            let to = r.state(&format!("{key}.to_state"), to)?;
            if from == to {
                return Err(invalid(format!("{key}.to_state"), "transition to the same state"));
            }
            Ok(Target::State {
                from,
                to,
                modes: r.mode_or_all(&format!("{key}.mode"), e.mode.as_ref())?,
            })
        }
        (None, Some(from)) => {
            if e.to_state.is_some() || e.mode.is_some() {
                return Err(parse_err(
                    key,
                    "mode transition entries take `state`, not `to_state`/`mode`",
                ));
            }
            let to = e
                .to_mode
                .as_ref()
                .ok_or_else(|| parse_err(format!("{key}.to_mode"), "missing"))?;
            let from = r.mode(&format!("{key}.from_mode"), from)?;
            let to = r.mode(&format!("{key}.to_mode"), to)?;
            if from == to {
                return Err(invalid(format!("{key}.to_mode"), "transition to the same mode"));
            }
            Ok(Target::Mode {
                from,
                to,
                states: r.state_or_all(&format!("{key}.state"), e.state.as_ref())?,
            })
        }
        (Some(_), Some(_)) => Err(parse_err(key, "entry has both `from_state` and `from_mode`")),
        (None, None) => Err(parse_err(format!("{key}.from_state"), "missing (or `from_mode`)")),
    }
}

fn place(cube: &mut Cube, idx: (usize, usize, usize), t: RateTable, key: &str) -> Result<()> {
    let slot = cube.slot(idx.0, idx.1, idx.2);
    if slot.is_some() {
        return Err(invalid(key, "duplicate entry for the same transition"));
    }
    *slot = Some(t);
    Ok(())
}

fn labels(section: Option<Labels>, key: &str) -> Result<(Vec<String>, usize)> {
    let section = section.ok_or_else(|| parse_err(key, "missing section"))?;
    let initial = match &section.initial {
        Some(l) => section
            .labels
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| parse_err(format!("{key}.initial"), format!("unknown label `{l}`")))?,
        None => 0,
    };
    Ok((section.labels, initial))
}

fn toml_key(err: &toml::de::Error) -> String {
    let msg = err.message();
    msg.split('`')
        .nth(1)
        .map(str::to_owned)
        .unwrap_or_else(|| "document".into())
}

/// Parses and validates a contract document.
pub fn load_contract(config_text: &str) -> Result<ContractSpec> {
    let doc: Document = toml::from_str(config_text).map_err(|e| parse_err(toml_key(&e), e.message().to_owned()))?;

    let horizon = doc
        .horizon
        .ok_or_else(|| parse_err("horizon", "missing required key"))?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(invalid(
            "horizon",
            format!("must be finite and positive, got {horizon}"),
        ));
    }
    let kind = match doc.kind.as_deref() {
        None | Some("markov") => ModelKind::Markov,
        Some("semi_markov") => ModelKind::SemiMarkov,
        Some(other) => return Err(parse_err("kind", format!("unknown kind `{other}`"))),
    };
    let (state_labels, x0) = labels(doc.states, "states")?;
    let states = StateSpace::new(state_labels, x0)?;
    let modes = match doc.modes {
        Some(section) => {
            let (l, j0) = labels(Some(section), "modes")?;
            ModeSpace::new(l, j0)?
        }
        None => ModeSpace::single(),
    };
    let discount_doc = doc.discount.ok_or_else(|| parse_err("discount", "missing section"))?;
    let discount = table("discount", Some(discount_doc.breakpoints), Some(discount_doc.values))?;

    let (ns, nm) = (states.len(), modes.len());
    let r = Resolver {
        states: &states,
        modes: &modes,
    };
    let mut breakpoints = Vec::new();

    let mut state_rates = Cube::new([ns, ns, nm]);
    let mut mode_rates = Cube::new([nm, nm, ns]);
    for (n, e) in doc.intensities.into_iter().enumerate() {
        let key = format!("intensities[{n}]");
        let tgt = target(&key, &e, &r)?;
        let tab = table(&key, e.breakpoints, e.values)?;
        if tab.values().iter().any(|&v| v < 0.0) {
            return Err(invalid(format!("{key}.values"), "negative rate"));
        }
        let decay = e.duration_decay.unwrap_or(0.0);
        if decay != 0.0 {
            if kind == ModelKind::Markov {
                return Err(invalid(
                    format!("{key}.duration_decay"),
                    "duration dependence requires kind = \"semi_markov\"",
                ));
            }
            if !(decay.is_finite() && decay > 0.0) {
                return Err(invalid(format!("{key}.duration_decay"), "must be positive"));
            }
        }
        breakpoints.extend_from_slice(tab.breakpoints());
        let rt = RateTable { table: tab, decay };
        match tgt {
            Target::State { from, to, modes } => {
                for k in modes {
                    place(&mut state_rates, (from, to, k), rt.clone(), &key)?;
                }
            }
            Target::Mode { from, to, states } => {
                if decay != 0.0 {
                    return Err(invalid(
                        format!("{key}.duration_decay"),
                        "not supported for mode transitions",
                    ));
                }
                for i in states {
                    place(&mut mode_rates, (from, to, i), rt.clone(), &key)?;
                }
            }
        }
    }

    let payments_doc = doc.payments;
    let mut sojourn = Cube::new([ns, nm, 1]);
    for (n, s) in payments_doc.sojourn.into_iter().enumerate() {
        let key = format!("payments.sojourn[{n}]");
        let i = r.state(&format!("{key}.state"), &s.state)?;
        let tab = table(&key, Some(s.breakpoints), Some(s.values))?;
        breakpoints.extend_from_slice(tab.breakpoints());
        for k in r.mode_or_all(&format!("{key}.mode"), s.mode.as_ref())? {
            place(
                &mut sojourn,
                (i, k, 0),
                RateTable {
                    table: tab.clone(),
                    decay: 0.0,
                },
                &key,
            )?;
        }
    }

    let mut lumps: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (n, l) in payments_doc.lump.into_iter().enumerate() {
        let key = format!("payments.lump[{n}]");
        if !(l.time.is_finite() && (0.0..=horizon).contains(&l.time)) {
            return Err(invalid(format!("{key}.time"), "lump time outside [0, horizon]"));
        }
        if !l.amount.is_finite() {
            return Err(invalid(format!("{key}.amount"), "must be finite"));
        }
        let i = r.state(&format!("{key}.state"), &l.state)?;
        let cells = lumps.entry(l.time.to_bits()).or_insert_with(|| vec![0.0; ns * nm]);
        for k in r.mode_or_all(&format!("{key}.mode"), l.mode.as_ref())? {
            cells[i * nm + k] += l.amount;
        }
    }
    let mut lump_list: Vec<(f64, Vec<f64>)> = lumps.into_iter().map(|(b, v)| (f64::from_bits(b), v)).collect();
    lump_list.sort_by(|a, b| a.0.total_cmp(&b.0));
    let lump_times: Vec<f64> = lump_list.iter().map(|(t, _)| *t).collect();

    let mut state_pay = Cube::new([ns, ns, nm]);
    let mut mode_pay = Cube::new([nm, nm, ns]);
    for (n, e) in payments_doc.transition.into_iter().enumerate() {
        let key = format!("payments.transition[{n}]");
        if e.duration_decay.is_some() {
            return Err(parse_err(format!("{key}.duration_decay"), "not allowed for payments"));
        }
        let tgt = target(&key, &e, &r)?;
        let tab = table(&key, e.breakpoints, e.values)?;
        breakpoints.extend_from_slice(tab.breakpoints());
        let rt = RateTable { table: tab, decay: 0.0 };
        match tgt {
            Target::State { from, to, modes } => {
                for k in modes {
                    place(&mut state_pay, (from, to, k), rt.clone(), &key)?;
                }
            }
            Target::Mode { from, to, states } => {
                for i in states {
                    place(&mut mode_pay, (from, to, i), rt.clone(), &key)?;
                }
            }
        }
    }

    let mut surrender = BTreeMap::new();
    for (n, s) in payments_doc.surrender_fraction.into_iter().enumerate() {
        let key = format!("payments.surrender_fraction[{n}]");
        let from = r.state(&format!("{key}.from_state"), &s.from_state)?;
        let to = r.state(&format!("{key}.to_state"), &s.to_state)?;
        if from == to {
            return Err(invalid(format!("{key}.to_state"), "transition to the same state"));
        }
        if !(0.0..=1.0).contains(&s.fraction) {
            return Err(invalid(format!("{key}.fraction"), "must lie in [0, 1]"));
        }
        if state_pay.get(from, to, 0).is_some() || (0..nm).any(|k| state_pay.get(from, to, k).is_some()) {
            return Err(invalid(key, "transition already has a fixed payment table"));
        }
        if surrender.insert((from, to), s.fraction).is_some() {
            return Err(invalid(key, "duplicate surrender entry"));
        }
    }

    let mut bound: f64 = 0.0;
    for i in 0..ns {
        for k in 0..nm {
            let mut total = 0.0;
            for j in 0..ns {
                if let Some(t) = state_rates.get(i, j, k) {
                    total += t.table.max_value();
                }
            }
            for l in 0..nm {
                if let Some(t) = mode_rates.get(k, l, i) {
                    total += t.table.max_value();
                }
            }
            bound = bound.max(total);
        }
    }
    let rate_bound = match doc.rate_bound {
        Some(b) if b.is_finite() && b >= bound => b,
        Some(b) => {
            return Err(invalid(
                "rate_bound",
                format!("{b} is below the tabulated maximum {bound}"),
            ))
        }
        None => bound,
    };

    breakpoints.retain(|&b| b > 0.0 && b < horizon);
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();

    let state_rates = Arc::new(state_rates);
    let mode_rates = Arc::new(mode_rates);
    let intensities = IntensityModel::new(
        kind,
        Arc::new(move |t, i, j, k, u| state_rates.get(i, j, k).map_or(0.0, |r| r.eval(t, u))),
        Arc::new(move |t, k, l, i| mode_rates.get(k, l, i).map_or(0.0, |r| r.table.eval(t))),
        rate_bound,
    )
    .with_breakpoints(breakpoints.clone());

    let sojourn = Arc::new(sojourn);
    let state_pay = Arc::new(state_pay);
    let mode_pay = Arc::new(mode_pay);
    let lump_list = Arc::new(lump_list);
    let h = horizon;
    let payments = PaymentModel {
        sojourn_rate: Arc::new(move |t, i, k, _| {
            if t > h {
                0.0
            } else {
                sojourn.get(i, k, 0).map_or(0.0, |r| r.table.eval(t))
            }
        }),
        lump_times,
        lump_amount: Arc::new(move |t, i, k, _| {
            lump_list
                .binary_search_by(|(s, _)| s.total_cmp(&t))
                .map_or(0.0, |n| lump_list[n].1.get(i * nm + k).copied().unwrap_or(0.0))
        }),
        state_transition: Arc::new(move |t, i, j, k, _| {
            if t > h {
                0.0
            } else {
                state_pay.get(i, j, k).map_or(0.0, |r| r.table.eval(t))
            }
        }),
        mode_transition: Arc::new(move |t, k, l, i, _| {
            if t > h {
                0.0
            } else {
                mode_pay.get(k, l, i).map_or(0.0, |r| r.table.eval(t))
            }
        }),
        surrender_fraction: surrender,
        breakpoints,
    };

    let mut spec = ContractSpec::new(
        states,
        modes,
        intensities,
        payments,
        DiscountModel::piecewise(discount),
        horizon,
    )?;
    spec.duration_resets_on_mode_jump = doc.duration_resets_on_mode_jump.unwrap_or(false);
    Ok(spec)
}
