//! Subcommand implementations: simulate, fit, compare, dd-plan, validate.
//!
//! Every writing command puts its files plus a `manifest.toml` into one
//! output directory. The manifest opens with a timestamp comment line (the
//! only line excluded from byte-reproducibility) followed by the tool
//! version, the subcommand, and an echo of the fully resolved inputs that
//! suffices to repeat the run.

use crate::config::{load_config, Resolved, RunConfig, Scenario, SolverKind};
use crate::CliError;
use paritydyn::characterization::{
    self as chr, binomial_sigma, DecayDataset, FitResult, ModelVariant, RamseyDataset,
    RamseyParams,
};
use paritydyn::dense::evolve_dense;
use paritydyn::device::angular;
use paritydyn::mpdo::{evolve_mpdo, TrotterPlan};
use paritydyn::observables::mean_projection;
use paritydyn::statecraft::{dd_schedule, two_coloring};
use paritydyn::Trajectory;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub fn simulate(config_path: &Path, sets: &[String]) -> Result<(), CliError> {
    let cfg = load_config(config_path, sets)?;
    let out = run_scenario(&cfg)?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))?;

    write_file(&dir.join("trajectory.csv"), &out.trajectory.to_csv())?;
    println!(
        "wrote {} ({} rows, {} columns)",
        dir.join("trajectory.csv").display(),
        out.trajectory.times.len(),
        out.trajectory.columns.len()
    );
    if let Some(stab) = &out.stabilizers {
        write_file(&dir.join("stabilizers.csv"), &stab.to_csv())?;
        println!("wrote {}", dir.join("stabilizers.csv").display());
    }
    if let Some(ds) = &out.ramsey {
        write_file(&dir.join("ramsey.csv"), &ds.sampled.to_csv())?;
        write_file(&dir.join("ramsey_exact.csv"), &ds.exact.to_csv())?;
        println!("wrote {} and ramsey_exact.csv", dir.join("ramsey.csv").display());
    }
    if let Some(ds) = &out.decay {
        write_file(&dir.join("t1.csv"), &ds.sampled.to_csv())?;
        write_file(&dir.join("t1_exact.csv"), &ds.exact.to_csv())?;
        println!("wrote {} and t1_exact.csv", dir.join("t1.csv").display());
    }
    write_manifest(dir, "simulate", &cfg)?;
    Ok(())
}

pub fn validate(config_path: &Path, sets: &[String]) -> Result<(), CliError> {
    let cfg = load_config(config_path, sets)?;
    let resolved = cfg.resolve()?;
    println!(
        "configuration ok: {} qubits, scenario {}, solver {}, {} record times, {} pulses, {} observable columns",
        resolved.device.len(),
        scenario_name(cfg.run.scenario),
        match cfg.run.solver {
            SolverKind::Dense => "dense",
            SolverKind::Tensor => "tensor",
        },
        resolved.times.len(),
        resolved.schedule.events.len(),
        resolved.solver_obs.len(),
    );
    Ok(())
}

pub fn fit(
    data: &Path,
    variant: &str,
    omega_s_hz: f64,
    out_dir: &Path,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(data)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", data.display())))?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", out_dir.display())))?;

    let (report, residuals) = match variant {
        "t1" => {
            let ds = DecayDataset::from_csv(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", data.display())))?;
            let fit = chr::fit_t1(&ds, None).map_err(fit_error)?;
            let mut csv = String::from("time_us,p1,sigma,model,residual\n");
            let (a, _) = fit.get("A").expect("fit parameter");
            let (b, _) = fit.get("B").expect("fit parameter");
            let (t1, _) = fit.get("t1_us").expect("fit parameter");
            for i in 0..ds.times.len() {
                let m = chr::t1_model(ds.times[i], a, b, t1);
                let _ = writeln!(
                    csv,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    ds.times[i],
                    ds.p1[i],
                    binomial_sigma(ds.p1[i], ds.shots[i]),
                    m,
                    ds.p1[i] - m
                );
            }
            (fit, csv)
        }
        _ => {
            let model = parse_variant(variant)?;
            let ds = RamseyDataset::from_csv(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", data.display())))?;
            let fit = chr::fit_ramsey(&ds, model, omega_s_hz, None).map_err(fit_error)?;
            let params = ramsey_params_from(&fit, omega_s_hz);
            let mut csv =
                String::from("time_us,p_x,p_y,sigma_x,sigma_y,model_x,model_y,res_x,res_y\n");
            for i in 0..ds.times.len() {
                let (mx, my) = chr::ramsey_model(ds.times[i], &params, model);
                let _ = writeln!(
                    csv,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    ds.times[i],
                    ds.p_x[i],
                    ds.p_y[i],
                    binomial_sigma(ds.p_x[i], ds.shots[i]),
                    binomial_sigma(ds.p_y[i], ds.shots[i]),
                    mx,
                    my,
                    ds.p_x[i] - mx,
                    ds.p_y[i] - my
                );
            }
            (fit, csv)
        }
    };

    write_file(&out_dir.join("fit.txt"), &report.to_report())?;
    write_file(&out_dir.join("residuals.csv"), &residuals)?;
    print!("{}", report.to_report());

    #[derive(Serialize)]
    struct FitArgs<'a> {
        data: &'a Path,
        variant: &'a str,
        omega_s_hz: f64,
    }
    write_manifest(out_dir, "fit", &FitArgs { data, variant, omega_s_hz })?;
    Ok(())
}

pub fn compare(
    config_a: &Path,
    config_b: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let cfg_a = load_config(config_a, &[])?;
    let cfg_b = load_config(config_b, &[])?;
    let run_a = run_scenario(&cfg_a)?;
    let run_b = run_scenario(&cfg_b)?;
    let ta = &run_a.trajectory;
    let tb = &run_b.trajectory;

    if ta.times != tb.times {
        return Err(CliError::Validation(format!(
            "time grids differ: {} vs {} records",
            ta.times.len(),
            tb.times.len()
        )));
    }
    let wanted: Vec<String> = ta
        .columns
        .iter()
        .filter(|c| !is_diagnostic(c))
        .cloned()
        .collect();
    let wanted_b: Vec<String> =
        tb.columns.iter().filter(|c| !is_diagnostic(c)).cloned().collect();
    if wanted != wanted_b {
        return Err(CliError::Validation(format!(
            "observable columns differ: [{}] vs [{}]",
            wanted.join(" "),
            wanted_b.join(" ")
        )));
    }
    if wanted.is_empty() {
        return Err(CliError::Validation("no comparable observable columns".into()));
    }

    let mut header = String::from("time_us");
    for name in &wanted {
        let _ = write!(header, ",{name}_a,{name}_b,{name}_delta,{name}_ratio");
    }
    let mut csv = header;
    csv.push('\n');
    let mut max_abs = vec![0.0f64; wanted.len()];
    for (i, &t) in ta.times.iter().enumerate() {
        let _ = write!(csv, "{t:.16e}");
        for (k, name) in wanted.iter().enumerate() {
            let va = ta.rows[i][ta.column_index(name).expect("checked")];
            let vb = tb.rows[i][tb.column_index(name).expect("checked")];
            let delta = vb - va;
            max_abs[k] = max_abs[k].max(delta.abs());
            let _ = write!(csv, ",{va:.16e},{vb:.16e},{delta:.16e},{:.16e}", vb / va);
        }
        csv.push('\n');
    }

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", out_dir.display())))?;
    write_file(&out_dir.join("compare.csv"), &csv)?;
    for (name, m) in wanted.iter().zip(&max_abs) {
        println!("max |delta| {name} = {m:.6e}");
    }
    println!("wrote {}", out_dir.join("compare.csv").display());

    #[derive(Serialize)]
    struct ComparePair {
        config_a: RunConfig,
        config_b: RunConfig,
    }
    write_manifest(out_dir, "compare", &ComparePair { config_a: cfg_a, config_b: cfg_b })?;
    Ok(())
}

pub fn dd_plan(
    device_path: &Path,
    slice_us: f64,
    n_dd: usize,
    out_dir: &Path,
) -> Result<(), CliError> {
    if !(slice_us > 0.0) {
        return Err(CliError::Validation(format!("slice must be positive, got {slice_us}")));
    }
    if n_dd == 0 {
        return Err(CliError::Validation("n-dd must be at least 1".into()));
    }
    let device = paritydyn::DeviceModel::load(device_path)
        .map_err(|e| CliError::Validation(format!("device {}: {e}", device_path.display())))?;
    let coloring =
        two_coloring(&device).map_err(|e| CliError::Validation(format!("dd scheduling: {e}")))?;
    let schedule = dd_schedule(&coloring, slice_us, n_dd);
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", out_dir.display())))?;
    write_file(&out_dir.join("schedule.csv"), &schedule.to_csv())?;
    println!(
        "wrote {} ({} pulses over {} slices of {slice_us} us)",
        out_dir.join("schedule.csv").display(),
        schedule.events.len(),
        n_dd
    );

    #[derive(Serialize)]
    struct PlanArgs<'a> {
        device: &'a Path,
        slice_us: f64,
        n_dd: usize,
    }
    write_manifest(out_dir, "dd-plan", &PlanArgs { device: device_path, slice_us, n_dd })?;
    Ok(())
}

struct SampledPair<D> {
    exact: D,
    sampled: D,
}

struct ScenarioOutput {
    trajectory: Trajectory,
    stabilizers: Option<Trajectory>,
    ramsey: Option<SampledPair<RamseyDataset>>,
    decay: Option<SampledPair<DecayDataset>>,
}

/// Runs the configured scenario and assembles the output tables in memory.
fn run_scenario(cfg: &RunConfig) -> Result<ScenarioOutput, CliError> {
    let resolved = cfg.resolve()?;
    let raw = match cfg.run.solver {
        SolverKind::Dense => evolve_dense(
            &resolved.device,
            &resolved.prep,
            &resolved.times,
            &resolved.schedule,
            cfg.parity_mode()?.expect("dense solver"),
            &resolved.solver_obs,
            cfg.dense.dt,
        )
        .map_err(solver_error)?,
        SolverKind::Tensor => evolve_mpdo(
            &resolved.device,
            &resolved.prep,
            &resolved.times,
            &resolved.schedule,
            &TrotterPlan::new(cfg.tensor.dt),
            cfg.tensor.max_bond,
            cfg.tensor.trunc_eps,
            &resolved.solver_obs,
        )
        .map_err(tensor_error)?,
    };

    match cfg.run.scenario {
        Scenario::Idle | Scenario::Dd => build_idle_output(&resolved, raw),
        Scenario::Ramsey => build_ramsey_output(cfg, &resolved, raw),
        Scenario::T1 => build_decay_output(cfg, &resolved, raw),
    }
}

fn build_idle_output(
    resolved: &Resolved,
    raw: Trajectory,
) -> Result<ScenarioOutput, CliError> {
    let stab_cols: Vec<usize> = resolved
        .stab_names
        .iter()
        .map(|n| raw.column_index(n).expect("stabilizers were recorded"))
        .collect();

    let p_bar: Option<Vec<f64>> = if resolved.p_bar {
        let mut vals = Vec::with_capacity(raw.rows.len());
        for row in &raw.rows {
            let z: Vec<f64> = stab_cols.iter().map(|&k| row[k]).collect();
            vals.push(mean_projection(&z).map_err(|e| CliError::Validation(e.to_string()))?);
        }
        Some(vals)
    } else {
        None
    };

    // main table: drop the stabilizer block unless it was asked for by name
    let hidden: Vec<usize> = if resolved.show_stabilizers {
        Vec::new()
    } else {
        let mut h = stab_cols.clone();
        // a sampled dense run interleaves <name>_se columns
        for &k in &stab_cols {
            if raw.columns.get(k + 1).is_some_and(|c| c.ends_with("_se")) {
                h.push(k + 1);
            }
        }
        h
    };
    let keep: Vec<usize> =
        (0..raw.columns.len()).filter(|k| !hidden.contains(k)).collect();
    let mut columns: Vec<String> = keep.iter().map(|&k| raw.columns[k].clone()).collect();
    if p_bar.is_some() {
        columns.push("p_bar".into());
    }
    let mut trajectory = Trajectory::new(columns);
    for (i, &t) in raw.times.iter().enumerate() {
        let mut row: Vec<f64> = keep.iter().map(|&k| raw.rows[i][k]).collect();
        if let Some(p) = &p_bar {
            row.push(p[i]);
        }
        trajectory.push(t, row);
    }

    let stabilizers = if resolved.stab_names.is_empty() {
        None
    } else {
        let mut columns = resolved.stab_names.clone();
        columns.push("p_bar".into());
        let mut table = Trajectory::new(columns);
        for (i, &t) in raw.times.iter().enumerate() {
            let z: Vec<f64> = stab_cols.iter().map(|&k| raw.rows[i][k]).collect();
            let mut row = z.clone();
            row.push(mean_projection(&z).map_err(|e| CliError::Validation(e.to_string()))?);
            table.push(t, row);
        }
        Some(table)
    };

    Ok(ScenarioOutput { trajectory: trajectory_or(raw, trajectory), stabilizers, ramsey: None, decay: None })
}

/// Guards against an all-columns-hidden main table.
fn trajectory_or(raw: Trajectory, filtered: Trajectory) -> Trajectory {
    if filtered.columns.is_empty() {
        raw
    } else {
        filtered
    }
}

fn build_ramsey_output(
    cfg: &RunConfig,
    resolved: &Resolved,
    raw: Trajectory,
) -> Result<ScenarioOutput, CliError> {
    let r = cfg.ramsey.as_ref().expect("validated");
    let seed = cfg.run.seed.expect("validated");
    let x = raw.column(&resolved.solver_obs[0].name()).expect("recorded");
    let y = raw.column(&resolved.solver_obs[1].name()).expect("recorded");
    // detection frame rotating at omega_s: the quadratures mix X and Y
    let theta: Vec<f64> = raw.times.iter().map(|&t| angular(r.omega_s_hz) * t).collect();
    let p_x: Vec<f64> = (0..raw.times.len())
        .map(|i| 0.5 * (1.0 + x[i] * theta[i].cos() - y[i] * theta[i].sin()))
        .collect();
    let p_y: Vec<f64> = (0..raw.times.len())
        .map(|i| 0.5 * (1.0 + x[i] * theta[i].sin() + y[i] * theta[i].cos()))
        .collect();
    let exact = RamseyDataset {
        times: raw.times.clone(),
        p_x: p_x.clone(),
        p_y: p_y.clone(),
        shots: vec![0; raw.times.len()],
    };
    let sampled = chr::sample_ramsey_points(&raw.times, &p_x, &p_y, r.shots, seed)
        .map_err(fit_error)?;
    Ok(ScenarioOutput {
        trajectory: raw,
        stabilizers: None,
        ramsey: Some(SampledPair { exact, sampled }),
        decay: None,
    })
}

fn build_decay_output(
    cfg: &RunConfig,
    resolved: &Resolved,
    raw: Trajectory,
) -> Result<ScenarioOutput, CliError> {
    let t = cfg.t1.as_ref().expect("validated");
    let seed = cfg.run.seed.expect("validated");
    let z = raw.column(&resolved.solver_obs[0].name()).expect("recorded");
    let p1: Vec<f64> = z.iter().map(|&v| 0.5 * (1.0 - v)).collect();
    let exact = DecayDataset {
        times: raw.times.clone(),
        p1: p1.clone(),
        shots: vec![0; raw.times.len()],
    };
    let sampled =
        chr::sample_decay_points(&raw.times, &p1, t.shots, seed).map_err(fit_error)?;
    Ok(ScenarioOutput {
        trajectory: raw,
        stabilizers: None,
        ramsey: None,
        decay: Some(SampledPair { exact, sampled }),
    })
}

fn parse_variant(s: &str) -> Result<ModelVariant, CliError> {
    match s {
        "fixed_b" => Ok(ModelVariant::FixedB),
        "free_b" => Ok(ModelVariant::FreeB),
        "gaussian" => Ok(ModelVariant::Gaussian),
        "t1" => Ok(ModelVariant::T1Decay),
        other => Err(CliError::Validation(format!(
            "variant must be fixed_b, free_b, gaussian or t1, got {other:?}"
        ))),
    }
}

fn ramsey_params_from(fit: &FitResult, omega_s: f64) -> RamseyParams {
    let v = |name: &str, fallback: f64| fit.get(name).map(|(v, _)| v).unwrap_or(fallback);
    RamseyParams {
        a: v("A", 0.0),
        b_offset: v("B", 0.0),
        phi: v("phi", 0.0),
        t2: v("t2_us", 1.0),
        delta: v("delta_hz", 0.0),
        nu: v("nu_hz", 0.0),
        omega_s,
        even_fraction: v("b", 0.5),
        kappa: v("kappa_per_us", 0.0),
    }
}

fn is_diagnostic(name: &str) -> bool {
    name == "max_bond" || name == "trunc_weight" || name.ends_with("_se")
}

fn scenario_name(s: Scenario) -> &'static str {
    match s {
        Scenario::Idle => "idle",
        Scenario::Dd => "dd",
        Scenario::Ramsey => "ramsey",
        Scenario::T1 => "t1",
    }
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

/// Timestamp comment first (excluded from reproducibility checks), then the
/// version, subcommand, and a TOML echo of the resolved inputs.
fn write_manifest<T: Serialize>(dir: &Path, command: &str, inputs: &T) -> Result<(), CliError> {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let body = toml::to_string(inputs)
        .map_err(|e| CliError::Validation(format!("cannot serialize manifest: {e}")))?;
    let text = format!(
        "# generated_at_unix: {now}\nversion = {:?}\ncommand = {command:?}\n\n[inputs]\n{}",
        env!("CARGO_PKG_VERSION"),
        indent_tables(&body)
    );
    write_file(&dir.join("manifest.toml"), &text)
}

/// Nests a serialized TOML document one level deeper under `[inputs]`.
fn indent_tables(body: &str) -> String {
    let mut out = String::new();
    for line in body.lines() {
        let trimmed = line.trim_start();
        if trimmed.starts_with("[[") && trimmed.ends_with("]]") {
            let _ = writeln!(out, "[[inputs.{}]]", &trimmed[2..trimmed.len() - 2]);
        } else if trimmed.starts_with('[') && trimmed.ends_with(']') {
            let _ = writeln!(out, "[inputs.{}]", &trimmed[1..trimmed.len() - 1]);
        } else {
            let _ = writeln!(out, "{line}");
        }
    }
    out
}

fn fit_error(e: chr::FitError) -> CliError {
    use chr::FitError::*;
    match e {
        NonConvergence(_) | Singular => CliError::Numeric(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

fn solver_error(e: paritydyn::dense::SolverError) -> CliError {
    use paritydyn::dense::SolverError::*;
    match e {
        Numeric(_) => CliError::Numeric(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

fn tensor_error(e: paritydyn::mpdo::TensorError) -> CliError {
    use paritydyn::mpdo::TensorError::*;
    match e {
        Numeric(_) | BondCeiling { .. } => CliError::Numeric(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}
