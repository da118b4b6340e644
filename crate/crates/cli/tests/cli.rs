//! End-to-end checks of the command-line interface: exit codes, file
//! layout, and byte-level reproducibility of seeded runs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_paritydyn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Minimal idle config against the bundled three-qubit chain.
fn chain3_config(dir: &Path, extra: &str) -> PathBuf {
    let device = repo_file("devices/chain3_graph.toml");
    let out = dir.join("out");
    let text = format!(
        r#"
[run]
scenario = "idle"
solver = "dense"

[device]
path = {device:?}

[times]
start = 0.0
stop = 2.0
step = 1.0

[output]
dir = {out:?}

{extra}
"#,
        device = device.to_str().unwrap(),
        out = out.to_str().unwrap()
    );
    let path = dir.join("run.toml");
    write(&path, &text);
    path
}

#[test]
fn validate_accepts_a_good_config_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = chain3_config(dir.path(), "[observables]\nstabilizers = true\n");
    let ok = run(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_exit(&ok, 0);
    assert!(String::from_utf8_lossy(&ok.stdout).contains("configuration ok"));

    let bad = dir.path().join("bad.toml");
    write(&bad, &format!("{}\n[typo_section]\nx = 1\n", read(&cfg)));
    assert_exit(&run(&["validate", "--config", bad.to_str().unwrap()]), 2);

    // overrides are applied before validation
    let over = run(&[
        "validate",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "times.step=-1.0",
    ]);
    assert_exit(&over, 2);
}

#[test]
fn simulate_writes_reproducible_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = chain3_config(
        dir.path(),
        "[observables]\nstabilizers = true\np_bar = true\nbloch = [0]\n",
    );
    let out_a = dir.path().join("out");
    assert_exit(&run(&["simulate", "--config", cfg.to_str().unwrap()]), 0);
    for name in ["trajectory.csv", "stabilizers.csv", "manifest.toml"] {
        assert!(out_a.join(name).exists(), "missing {name}");
    }
    let traj = read(&out_a.join("trajectory.csv"));
    let header = traj.lines().next().unwrap();
    assert_eq!(header, "time_us,XII,YII,ZII,XZI,ZXZ,IZX,p_bar");
    assert_eq!(traj.lines().count(), 4, "header plus three record times");
    let stab = read(&out_a.join("stabilizers.csv"));
    assert_eq!(stab.lines().next().unwrap(), "time_us,XZI,ZXZ,IZX,p_bar");

    // graph state at t = 0: every stabilizer at +1, mean projection 1
    let first = stab.lines().nth(1).unwrap();
    let vals: Vec<f64> = first.split(',').map(|v| v.parse().unwrap()).collect();
    for v in &vals[1..] {
        assert!((v - 1.0).abs() < 1e-9, "row: {first}");
    }

    let out_b = dir.path().join("out_b");
    let rerun = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        &format!("output.dir = {:?}", out_b.to_str().unwrap()),
    ]);
    assert_exit(&rerun, 0);
    assert_eq!(traj, read(&out_b.join("trajectory.csv")), "identical inputs, identical bytes");
    assert_eq!(stab, read(&out_b.join("stabilizers.csv")));
    // manifests agree apart from the timestamp comment and the overridden
    // output directory, both of which are expected to differ
    let tail = |p: &Path| {
        read(p)
            .lines()
            .skip(1)
            .filter(|l| !l.starts_with("dir = "))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let manifest_a = tail(&out_a.join("manifest.toml"));
    assert_eq!(manifest_a, tail(&out_b.join("manifest.toml")));
    assert!(manifest_a.contains("command = \"simulate\""));
    assert!(manifest_a.contains("scenario = \"idle\""));
}

#[test]
fn idle_run_with_no_observables_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = chain3_config(dir.path(), "");
    assert_exit(&run(&["simulate", "--config", cfg.to_str().unwrap()]), 2);
}

#[test]
fn decoupling_scenario_runs_on_the_tensor_solver() {
    let dir = tempfile::tempdir().unwrap();
    let device = repo_file("devices/chain3_graph.toml");
    let out = dir.path().join("out");
    let cfg = dir.path().join("dd.toml");
    write(
        &cfg,
        &format!(
            r#"
[run]
scenario = "dd"
solver = "tensor"

[device]
path = {device:?}

[dd]
slice_us = 4.0
n_dd = 2

[tensor]
dt = 0.05
max_bond = 16

[observables]
graph_fidelity = true

[output]
dir = {out:?}
"#,
            device = device.to_str().unwrap(),
            out = out.to_str().unwrap()
        ),
    );
    assert_exit(&run(&["simulate", "--config", cfg.to_str().unwrap()]), 0);
    let traj = read(&out.join("trajectory.csv"));
    let lines: Vec<&str> = traj.lines().collect();
    assert_eq!(lines[0], "time_us,graph_fidelity,max_bond,trunc_weight");
    assert_eq!(lines.len(), 1 + 3, "records at 0, T, 2T");
    let last: Vec<f64> = lines[3].split(',').map(|v| v.parse().unwrap()).collect();
    assert!((last[0] - 8.0).abs() < 1e-12);
    assert!(last[1] > 0.5 && last[1] <= 1.0, "fidelity stays physical: {}", last[1]);
}

#[test]
fn ramsey_simulation_feeds_the_fitter() {
    let dir = tempfile::tempdir().unwrap();
    let device = dir.path().join("single.toml");
    write(
        &device,
        r#"
[units]
time = "us"
frequency = "Hz"
zeta = "kHz"

[device]
name = "single"
topology = "general"

[[qubit]]
label = 0
t1 = 123.0
t2 = 84.0
nu = 3308.0
delta = -9088.0
"#,
    );
    let out = dir.path().join("out");
    let cfg = dir.path().join("ramsey.toml");
    write(
        &cfg,
        &format!(
            r#"
[run]
scenario = "ramsey"
solver = "dense"
seed = 11

[device]
path = {device:?}

[times]
start = 0.0
stop = 147.0
step = 3.0

[ramsey]
qubit = 0
omega_s_hz = 5000.0
shots = 4096

[output]
dir = {out:?}
"#,
            device = device.to_str().unwrap(),
            out = out.to_str().unwrap()
        ),
    );
    assert_exit(&run(&["simulate", "--config", cfg.to_str().unwrap()]), 0);
    let data = out.join("ramsey.csv");
    assert!(out.join("ramsey_exact.csv").exists());
    assert_eq!(read(&data).lines().next().unwrap(), "time_us,p_x,p_y,shots");

    let fit_dir = dir.path().join("fit");
    let fit = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--variant",
        "fixed_b",
        "--omega-s-hz",
        "5000.0",
        "--out-dir",
        fit_dir.to_str().unwrap(),
    ]);
    assert_exit(&fit, 0);
    let report = read(&fit_dir.join("fit.txt"));
    assert!(report.contains("reduced_chi2"), "report:\n{report}");
    assert!(fit_dir.join("residuals.csv").exists());

    // the recovered parity splitting matches the device value
    let nu_line = report.lines().find(|l| l.starts_with("nu_hz:")).unwrap();
    let fields: Vec<&str> = nu_line.split_whitespace().collect();
    let nu: f64 = fields[1].parse().unwrap();
    let sigma: f64 = fields[3].parse().unwrap();
    assert!(
        (nu - 3308.0).abs() < 4.0 * sigma + 1.0,
        "nu = {nu} +- {sigma}, expected about 3308"
    );
}

#[test]
fn fit_rejects_malformed_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("junk.csv");
    write(&data, "time_us,p_x,p_y,shots\n0.0,0.5,not_a_number,100\n");
    let out = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--variant",
        "fixed_b",
        "--out-dir",
        dir.path().join("fit").to_str().unwrap(),
    ]);
    assert_exit(&out, 2);

    let bad_variant = run(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--variant",
        "quadratic",
        "--out-dir",
        dir.path().join("fit").to_str().unwrap(),
    ]);
    assert_exit(&bad_variant, 2);
}

#[test]
fn compare_reports_zero_delta_for_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = chain3_config(dir.path(), "[observables]\nbloch = [1]\n");
    let out = dir.path().join("cmp");
    let res = run(&[
        "compare",
        "--config-a",
        cfg.to_str().unwrap(),
        "--config-b",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);
    let table = read(&out.join("compare.csv"));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "time_us,IXI_a,IXI_b,IXI_delta,IXI_ratio,IYI_a,IYI_b,IYI_delta,IYI_ratio,IZI_a,IZI_b,IZI_delta,IZI_ratio"
    );
    for line in &lines[1..] {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        for k in [3, 7, 11] {
            assert_eq!(v[k], 0.0, "delta column in {line}");
        }
    }
    assert!(String::from_utf8_lossy(&res.stdout).contains("max |delta|"));
}

#[test]
fn compare_refuses_mismatched_grids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_a = chain3_config(dir.path(), "[observables]\nbloch = [0]\n");
    let text = read(&cfg_a).replace("stop = 2.0", "stop = 3.0");
    let cfg_b = dir.path().join("run_b.toml");
    write(&cfg_b, &text);
    let res = run(&[
        "compare",
        "--config-a",
        cfg_a.to_str().unwrap(),
        "--config-b",
        cfg_b.to_str().unwrap(),
        "--out-dir",
        dir.path().join("cmp").to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
}

#[test]
fn dd_plan_emits_the_staggered_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let device = repo_file("devices/ring12.toml");
    let out = dir.path().join("plan");
    let res = run(&[
        "dd-plan",
        "--device",
        device.to_str().unwrap(),
        "--slice-us",
        "5.7570",
        "--n-dd",
        "2",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);
    let csv = read(&out.join("schedule.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "time_us,qubit,gate");
    // 12 qubits, 4 pulse groups of 6 qubits per slice, 2 slices
    assert_eq!(lines.len(), 1 + 2 * 4 * 6);
    assert!(lines[1..].iter().all(|l| l.ends_with(",X")));
}

#[test]
fn dd_plan_rejects_an_odd_ring() {
    let dir = tempfile::tempdir().unwrap();
    let device = dir.path().join("ring3.toml");
    write(
        &device,
        r#"
[units]
time = "us"
frequency = "Hz"
zeta = "kHz"

[device]
name = "ring3"
topology = "ring"

[[qubit]]
label = 0
t1 = 100.0
t2 = 80.0
nu = 1000.0
delta = 0.0

[[qubit]]
label = 1
t1 = 100.0
t2 = 80.0
nu = 1000.0
delta = 0.0

[[qubit]]
label = 2
t1 = 100.0
t2 = 80.0
nu = 1000.0
delta = 0.0

[[edge]]
qubits = [0, 1]
zeta = -30.0

[[edge]]
qubits = [1, 2]
zeta = -30.0

[[edge]]
qubits = [2, 0]
zeta = -30.0
"#,
    );
    let res = run(&[
        "dd-plan",
        "--device",
        device.to_str().unwrap(),
        "--slice-us",
        "4.0",
        "--n-dd",
        "1",
        "--out-dir",
        dir.path().join("plan").to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
}
