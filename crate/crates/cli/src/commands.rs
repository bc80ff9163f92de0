use std::error::Error;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiele_core::modifications::{
    adjustment_factors_capped, cantelli_residual, frozen_value_functions, one_more_modification_values,
    recursion_consistency, uniform_grid, write_traces, AdjustmentRule,
};
use thiele_core::montecarlo::{compare_to_solver, estimate_reserve, estimate_with_reserve, CashflowKind};
use thiele_core::reserve_nonlinear::{solve_nonlinear_markov_with_stats, NonlinearDriver};
use thiele_core::simulate::{simulate_paths, write_path_dump};
use thiele_core::{
    load_contract, solve_thiele_markov, solve_thiele_semimarkov, validate_assumptions, ContractSpec, ModelKind,
    ValueFunction,
};

use crate::{ContractArgs, EstimateArgs, Options};

pub type Outcome = Result<bool, Box<dyn Error>>;

/// Bound on the modification checks.
const CHECK_TOL: f64 = 1e-9;
/// Picard tolerance for the one-more-modification reserves; tighter than
/// `CHECK_TOL` so the check measures the recursion, not the iteration.
const CHECK_PICARD_TOL: f64 = 1e-14;
const MAX_PICARD: usize = 200;

pub fn read_contract(path: &Path) -> Result<ContractSpec, Box<dyn Error>> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let spec = load_contract(&text)?;
    let report = validate_assumptions(&spec, 1_000);
    for c in report.failures() {
        log::warn!(
            "{}: assumption {} fails ({})",
            path.display(),
            c.name,
            c.witness.as_deref().unwrap_or("-")
        );
    }
    Ok(spec)
}

pub fn output(opts: &Options, name: &str) -> Result<PathBuf, Box<dyn Error>> {
    fs::create_dir_all(&opts.out).map_err(|e| format!("cannot create {}: {e}", opts.out.display()))?;
    Ok(opts.out.join(name))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), Box<dyn Error>> {
    let file = File::create(path).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn start_value(spec: &ContractSpec, v: &ValueFunction) -> f64 {
    v.value_at(0.0, spec.states.initial(), spec.modes.initial(), 0.0)
}

pub fn solve_linear(spec: &ContractSpec, opts: &Options) -> thiele_core::Result<ValueFunction> {
    match spec.kind() {
        ModelKind::Markov => solve_thiele_markov(spec, opts.step),
        ModelKind::SemiMarkov => solve_thiele_semimarkov(spec, opts.step, opts.duration_step()),
    }
}

pub fn solve(a: &ContractArgs) -> Outcome {
    let spec = read_contract(&a.contract)?;
    let v = solve_linear(&spec, &a.opts)?;
    let path = output(&a.opts, "value.csv")?;
    write_file(&path, |w| v.write_table(w))?;
    println!("V(0) = {:.9}", start_value(&spec, &v));
    println!("wrote {}", path.display());
    Ok(true)
}

pub fn solve_nonlinear(a: &ContractArgs) -> Outcome {
    let spec = read_contract(&a.contract)?;
    let (v, stats) =
        solve_nonlinear_markov_with_stats(&spec, &NonlinearDriver::zero(), a.opts.step, a.opts.tol, MAX_PICARD)?;
    let path = output(&a.opts, "value.csv")?;
    write_file(&path, |w| v.write_table(w))?;
    println!("V(0) = {:.9}", start_value(&spec, &v));
    println!(
        "picard: at most {} iterations per step, contraction {:.3e}",
        stats.max_iterations, stats.max_contraction
    );
    println!("wrote {}", path.display());
    Ok(true)
}

pub fn simulate(a: &ContractArgs) -> Outcome {
    let spec = read_contract(&a.contract)?;
    let paths = simulate_paths(&spec, a.opts.paths as usize, a.opts.seed, None)?;
    let path = output(&a.opts, "paths.csv")?;
    write_file(&path, |w| write_path_dump(w, &paths))?;
    let events: usize = paths.iter().map(|p| p.events.len()).sum();
    println!("{} paths, {events} events", paths.len());
    println!("wrote {}", path.display());
    Ok(true)
}

pub fn estimate(a: &EstimateArgs) -> Outcome {
    let opts = &a.contract.opts;
    let spec = read_contract(&a.contract.contract)?;
    let (n, seed) = (opts.paths as usize, opts.seed);
    let frozen = match spec.kind() {
        ModelKind::Markov => Some(frozen_value_functions(&spec, opts.step)?),
        ModelKind::SemiMarkov => None,
    };
    let start = Instant::now();
    let (e, solver) = if a.adjusted {
        let frozen = frozen.as_ref().ok_or("adjusted cash flows need a markov contract")?;
        let e = estimate_reserve(&spec, CashflowKind::Adjusted, n, seed, Some(frozen))?;
        (e, frozen.value(spec.modes.initial(), 0.0, spec.states.initial()))
    } else if spec.has_surrender() && spec.n_modes() > 1 {
        let v = solve_linear(&spec, opts)?;
        let e = estimate_with_reserve(&spec, n, seed, &v)?;
        (e, start_value(&spec, &v))
    } else {
        let e = estimate_reserve(&spec, CashflowKind::Plain, n, seed, frozen.as_ref())?;
        let solver = if a.no_compare {
            f64::NAN
        } else {
            start_value(&spec, &solve_linear(&spec, opts)?)
        };
        (e, solver)
    };
    let elapsed = start.elapsed();

    let mut text = e.report();
    let mut pass = true;
    if !a.no_compare {
        let c = compare_to_solver(&e, solver);
        text.push_str(&format!("solver = {:e}\nz = {:.6}\npass = {}\n", c.solver, c.z, c.pass));
        pass = c.pass;
    }
    let path = output(opts, "estimate.txt")?;
    fs::write(&path, &text)?;
    fs::write(
        output(opts, "estimate_timing.txt")?,
        format!("elapsed_seconds = {:.6}\n", elapsed.as_secs_f64()),
    )?;
    print!("{text}");
    println!("wrote {}", path.display());
    Ok(pass)
}

pub fn modifications(a: &ContractArgs) -> Outcome {
    let opts = &a.opts;
    let spec = read_contract(&a.contract)?;
    let frozen = frozen_value_functions(&spec, opts.step)?;
    let more = one_more_modification_values(&spec, &frozen, opts.step, CHECK_PICARD_TOL)?;
    let paths = simulate_paths(&spec, opts.paths as usize, opts.seed, None)?;
    let mut traces = Vec::with_capacity(paths.len());
    let mut consistency = 0.0f64;
    for p in &paths {
        let t = adjustment_factors_capped(p, &frozen, &spec, opts.mode_jump_cap as usize)?;
        consistency = consistency.max(recursion_consistency(p, &t, &frozen, &more, &spec)?);
        traces.push(t);
    }
    let count: usize = traces.iter().map(|t| t.len()).sum();
    let negative = traces.iter().flat_map(|t| &t.records).filter(|r| r.rho < 0.0).count();
    if negative > 0 {
        log::warn!("{negative} of {count} adjustment factors are negative");
    }
    let path = output(opts, "trace.csv")?;
    write_file(&path, |w| write_traces(w, traces.iter().enumerate()))?;

    let grid = uniform_grid(spec.horizon, opts.step)?;
    let residual = cantelli_residual(&frozen, &spec, &grid, AdjustmentRule::Cantelli);
    let unadjusted = cantelli_residual(&frozen, &spec, &grid, AdjustmentRule::Unadjusted);
    let pass = residual <= CHECK_TOL && consistency <= CHECK_TOL;
    let mut text = String::new();
    for (k, label) in spec.modes.labels().iter().enumerate() {
        text.push_str(&format!(
            "frozen_value[{label}] = {:e}\n",
            frozen.value(k, 0.0, spec.states.initial())
        ));
    }
    text.push_str(&format!(
        "cantelli_residual = {residual:e}\nunadjusted_residual = {unadjusted:e}\nmodifications = {count}\nnegative_factors = {negative}\n\
         recursion_consistency = {consistency:e}\npass = {pass}\n"
    ));
    fs::write(output(opts, "modifications.txt")?, &text)?;
    print!("{text}");
    println!("wrote {}", path.display());
    Ok(pass)
}
