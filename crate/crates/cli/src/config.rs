//! Run configuration: TOML schema, command-line overrides, and resolution
//! into concrete solver inputs.
//!
//! A config file fully determines a run. Any field can be overridden from
//! the command line with `--set section.key=value`, which edits the parsed
//! TOML tree before deserialization, so overrides obey the same validation
//! as the file itself.

use crate::CliError;
use paritydyn::dense::{ParityMode, MAX_DENSE_QUBITS};
use paritydyn::device::DeviceModel;
use paritydyn::observables::{stabilizer_set, Observable};
use paritydyn::statecraft::{dd_schedule, two_coloring, BlochVector, PulseSchedule, StatePrep};
use paritydyn::trajectory::time_grid;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub device: DeviceSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<TimesSection>,
    #[serde(default)]
    pub dense: DenseSection,
    #[serde(default)]
    pub tensor: TensorSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dd: Option<DdSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramsey: Option<RamseySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<T1Section>,
    #[serde(default)]
    pub observables: ObsSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub scenario: Scenario,
    pub solver: SolverKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Idle,
    Dd,
    Ramsey,
    T1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Dense,
    Tensor,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub path: PathBuf,
}

/// Initial state: the device graph state (default), an inline product of
/// Bloch vectors, or a CSV file of Bloch vectors (header `x,y,z`).
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bloch: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn default_kind() -> String {
    "graph".into()
}

impl Default for InitialSection {
    fn default() -> Self {
        Self { kind: default_kind(), bloch: None, path: None }
    }
}

/// Either an explicit list or an even grid; the grid hits both endpoints.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TimesSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DenseSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_parity")]
    pub parity: String,
    #[serde(default)]
    pub samples: usize,
}

fn default_dt() -> f64 {
    0.05
}

fn default_parity() -> String {
    "enumerate".into()
}

impl Default for DenseSection {
    fn default() -> Self {
        Self { dt: default_dt(), parity: default_parity(), samples: 0 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_max_bond")]
    pub max_bond: usize,
    #[serde(default = "default_trunc_eps")]
    pub trunc_eps: f64,
}

fn default_max_bond() -> usize {
    64
}

fn default_trunc_eps() -> f64 {
    1e-12
}

impl Default for TensorSection {
    fn default() -> Self {
        Self { dt: default_dt(), max_bond: default_max_bond(), trunc_eps: default_trunc_eps() }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DdSection {
    pub slice_us: f64,
    pub n_dd: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RamseySection {
    pub qubit: usize,
    #[serde(default)]
    pub omega_s_hz: f64,
    pub shots: u64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct T1Section {
    pub qubit: usize,
    pub shots: u64,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ObsSection {
    #[serde(default)]
    pub paulis: Vec<String>,
    #[serde(default)]
    pub bloch: Vec<usize>,
    #[serde(default)]
    pub stabilizers: bool,
    #[serde(default)]
    pub p_bar: bool,
    #[serde(default)]
    pub graph_fidelity: bool,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

/// Parses the file, applies `--set key=value` overrides onto the TOML tree,
/// then deserializes with unknown-field rejection.
pub fn load_config(path: &Path, sets: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut tree: toml::Value = text
        .parse()
        .map_err(|e| CliError::Validation(format!("cannot parse {}: {e}", path.display())))?;
    for spec in sets {
        apply_set(&mut tree, spec)?;
    }
    let cfg: RunConfig = tree
        .try_into()
        .map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))?;
    Ok(cfg)
}

fn apply_set(root: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("--set needs key=value, got {spec:?}")))?;
    let key = key.trim();
    let doc: toml::Value = format!("value = {raw}")
        .parse()
        .or_else(|_| format!("value = {raw:?}").parse())
        .map_err(|e| CliError::Validation(format!("cannot parse --set value {raw:?}: {e}")))?;
    let value = doc.get("value").cloned().expect("just parsed");

    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("bad --set key {key:?}")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("--set {key}: {part} is not a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Validation(format!("--set {key}: parent is not a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Everything a scenario run needs, resolved and cross-checked.
pub struct Resolved {
    pub device: DeviceModel,
    pub times: Vec<f64>,
    pub schedule: PulseSchedule,
    pub prep: StatePrep,
    /// Observables handed to the solver, in column order.
    pub solver_obs: Vec<Observable>,
    /// Column names of the stabilizer block inside `solver_obs`.
    pub stab_names: Vec<String>,
    pub show_stabilizers: bool,
    pub p_bar: bool,
}

impl RunConfig {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let device = DeviceModel::load(&self.device.path).map_err(|e| {
            CliError::Validation(format!("device {}: {e}", self.device.path.display()))
        })?;
        let n = device.len();
        if self.run.solver == SolverKind::Dense && n > MAX_DENSE_QUBITS {
            return Err(CliError::Validation(format!(
                "dense solver is limited to {MAX_DENSE_QUBITS} qubits; {} has {n}",
                self.device.path.display()
            )));
        }
        // surface parity-mode misconfiguration before any solver work
        let _ = self.parity_mode()?;

        let (times, schedule) = match self.run.scenario {
            Scenario::Dd => {
                let dd = self.dd.as_ref().ok_or_else(|| {
                    CliError::Validation("scenario dd needs a [dd] section".into())
                })?;
                if !(dd.slice_us > 0.0) {
                    return Err(CliError::Validation(format!(
                        "dd.slice_us must be positive, got {}",
                        dd.slice_us
                    )));
                }
                if dd.n_dd == 0 {
                    return Err(CliError::Validation("dd.n_dd must be at least 1".into()));
                }
                let coloring = two_coloring(&device)
                    .map_err(|e| CliError::Validation(format!("dd scheduling: {e}")))?;
                let schedule = dd_schedule(&coloring, dd.slice_us, dd.n_dd);
                // take the slice boundaries bit-for-bit from the schedule so
                // the refocusing pulses fire before each record, never one
                // rounding ulp after it
                let mut times = vec![0.0];
                times.extend(schedule.grouped().iter().skip(3).step_by(4).map(|(t, _)| *t));
                (times, schedule)
            }
            _ => (self.time_grid()?, PulseSchedule::empty()),
        };

        let prep = match self.run.scenario {
            Scenario::Ramsey => {
                let r = self.ramsey.as_ref().ok_or_else(|| {
                    CliError::Validation("scenario ramsey needs a [ramsey] section".into())
                })?;
                single_qubit_prep(n, r.qubit, BlochVector::plus())?
            }
            Scenario::T1 => {
                let t = self.t1.as_ref().ok_or_else(|| {
                    CliError::Validation("scenario t1 needs a [t1] section".into())
                })?;
                single_qubit_prep(n, t.qubit, BlochVector::new(0.0, 0.0, -1.0).expect("unit"))?
            }
            _ => self.initial_prep(n)?,
        };

        let (solver_obs, stab_names) = self.observable_set(&device)?;
        if matches!(self.run.scenario, Scenario::Ramsey | Scenario::T1) {
            let shots = match self.run.scenario {
                Scenario::Ramsey => self.ramsey.as_ref().map(|r| r.shots).unwrap_or(0),
                _ => self.t1.as_ref().map(|t| t.shots).unwrap_or(0),
            };
            if shots == 0 {
                return Err(CliError::Validation("shots must be at least 1".into()));
            }
            if self.run.seed.is_none() {
                return Err(CliError::Validation(
                    "run.seed is required when shots are sampled".into(),
                ));
            }
        }
        if matches!(self.dense_parity_kind()?, ParityKind::Sample) && self.run.seed.is_none() {
            return Err(CliError::Validation(
                "run.seed is required for sampled parity configurations".into(),
            ));
        }

        Ok(Resolved {
            device,
            times,
            schedule,
            prep,
            solver_obs,
            stab_names,
            show_stabilizers: self.observables.stabilizers,
            p_bar: self.observables.p_bar,
        })
    }

    fn time_grid(&self) -> Result<Vec<f64>, CliError> {
        let t = self
            .times
            .as_ref()
            .ok_or_else(|| CliError::Validation("this scenario needs a [times] section".into()))?;
        match (&t.list, t.start, t.stop, t.step) {
            (Some(list), None, None, None) => {
                if list.is_empty() {
                    return Err(CliError::Validation("times.list is empty".into()));
                }
                Ok(list.clone())
            }
            (None, Some(start), Some(stop), Some(step)) => {
                if !(step > 0.0 && stop >= start && start >= 0.0) {
                    return Err(CliError::Validation(format!(
                        "bad time grid: start {start}, stop {stop}, step {step}"
                    )));
                }
                Ok(time_grid(start, stop, step))
            }
            _ => Err(CliError::Validation(
                "[times] needs either list or all of start/stop/step".into(),
            )),
        }
    }

    fn initial_prep(&self, n: usize) -> Result<StatePrep, CliError> {
        match self.initial.kind.as_str() {
            "graph" => Ok(StatePrep::Graph),
            "product" => {
                let rows = self.initial.bloch.as_ref().ok_or_else(|| {
                    CliError::Validation("initial.kind = product needs initial.bloch".into())
                })?;
                Ok(StatePrep::Product(bloch_vectors(rows, n)?))
            }
            "file" => {
                let path = self.initial.path.as_ref().ok_or_else(|| {
                    CliError::Validation("initial.kind = file needs initial.path".into())
                })?;
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Validation(format!("cannot read {}: {e}", path.display()))
                })?;
                let mut rows = Vec::new();
                let mut lines = text.lines().filter(|l| !l.trim().is_empty());
                match lines.next() {
                    Some(h) if h.trim() == "x,y,z" => {}
                    other => {
                        return Err(CliError::Validation(format!(
                            "{}: expected header x,y,z, got {other:?}",
                            path.display()
                        )))
                    }
                }
                for (k, line) in lines.enumerate() {
                    let f: Vec<&str> = line.trim().split(',').collect();
                    if f.len() != 3 {
                        return Err(CliError::Validation(format!(
                            "{} row {}: expected 3 fields",
                            path.display(),
                            k + 2
                        )));
                    }
                    let mut v = [0.0; 3];
                    for (slot, field) in v.iter_mut().zip(&f) {
                        *slot = field.parse().map_err(|e| {
                            CliError::Validation(format!(
                                "{} row {}: {e}",
                                path.display(),
                                k + 2
                            ))
                        })?;
                    }
                    rows.push(v);
                }
                Ok(StatePrep::Product(bloch_vectors(&rows, n)?))
            }
            other => Err(CliError::Validation(format!(
                "initial.kind must be graph, product or file, got {other:?}"
            ))),
        }
    }

    /// Solver observable list and the names of its stabilizer block.
    fn observable_set(&self, device: &DeviceModel) -> Result<(Vec<Observable>, Vec<String>), CliError> {
        let n = device.len();
        match self.run.scenario {
            Scenario::Ramsey => {
                let q = self.ramsey.as_ref().map(|r| r.qubit).unwrap_or(0);
                check_qubit(q, n)?;
                return Ok((
                    vec![
                        Observable::Pauli(single(n, q, 'X')),
                        Observable::Pauli(single(n, q, 'Y')),
                    ],
                    Vec::new(),
                ));
            }
            Scenario::T1 => {
                let q = self.t1.as_ref().map(|t| t.qubit).unwrap_or(0);
                check_qubit(q, n)?;
                return Ok((vec![Observable::Pauli(single(n, q, 'Z'))], Vec::new()));
            }
            Scenario::Idle | Scenario::Dd => {}
        }

        let o = &self.observables;
        if o.paulis.is_empty() && o.bloch.is_empty() && !o.stabilizers && !o.p_bar && !o.graph_fidelity
        {
            return Err(CliError::Validation(
                "nothing to record: [observables] selects no observable".into(),
            ));
        }
        let mut obs: Vec<Observable> = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        let mut push_pauli = |obs: &mut Vec<Observable>, p: paritydyn::PauliString| {
            if seen.insert(p.to_string()) {
                obs.push(Observable::Pauli(p));
            }
        };
        for s in &o.paulis {
            let p: paritydyn::PauliString = s
                .parse()
                .map_err(|e| CliError::Validation(format!("observable {s:?}: {e}")))?;
            if p.len() != n {
                return Err(CliError::Validation(format!(
                    "observable {s:?} has {} sites but the device has {n} qubits",
                    p.len()
                )));
            }
            push_pauli(&mut obs, p);
        }
        for &q in &o.bloch {
            check_qubit(q, n)?;
            for axis in ['X', 'Y', 'Z'] {
                push_pauli(&mut obs, single(n, q, axis));
            }
        }
        let mut stab_names = Vec::new();
        if o.stabilizers || o.p_bar {
            for p in stabilizer_set(device) {
                stab_names.push(p.to_string());
                push_pauli(&mut obs, p);
            }
        }
        if o.graph_fidelity {
            obs.push(Observable::GraphFidelity);
        }
        Ok((obs, stab_names))
    }

    pub fn parity_mode(&self) -> Result<Option<ParityMode>, CliError> {
        if self.run.solver != SolverKind::Dense {
            return Ok(None);
        }
        Ok(Some(match self.dense_parity_kind()? {
            ParityKind::Enumerate => ParityMode::Enumerate,
            ParityKind::Sample => ParityMode::Sample {
                k: self.dense.samples,
                seed: self.run.seed.unwrap_or(0),
            },
        }))
    }

    fn dense_parity_kind(&self) -> Result<ParityKind, CliError> {
        if self.run.solver != SolverKind::Dense {
            return Ok(ParityKind::Enumerate);
        }
        match self.dense.parity.as_str() {
            "enumerate" => Ok(ParityKind::Enumerate),
            "sample" => {
                if self.dense.samples == 0 {
                    return Err(CliError::Validation(
                        "dense.parity = sample needs dense.samples >= 1".into(),
                    ));
                }
                Ok(ParityKind::Sample)
            }
            other => Err(CliError::Validation(format!(
                "dense.parity must be enumerate or sample, got {other:?}"
            ))),
        }
    }
}

enum ParityKind {
    Enumerate,
    Sample,
}

fn check_qubit(q: usize, n: usize) -> Result<(), CliError> {
    if q >= n {
        return Err(CliError::Validation(format!("qubit {q} out of range for {n} qubits")));
    }
    Ok(())
}

fn single(n: usize, q: usize, axis: char) -> paritydyn::PauliString {
    let op = match axis {
        'X' => paritydyn::PauliOp::X,
        'Y' => paritydyn::PauliOp::Y,
        _ => paritydyn::PauliOp::Z,
    };
    paritydyn::PauliString::single(n, q, op)
}

fn bloch_vectors(rows: &[[f64; 3]], n: usize) -> Result<Vec<BlochVector>, CliError> {
    if rows.len() != n {
        return Err(CliError::Validation(format!(
            "{} Bloch vectors for {n} qubits",
            rows.len()
        )));
    }
    rows.iter()
        .map(|&[x, y, z]| {
            BlochVector::new(x, y, z)
                .map_err(|e| CliError::Validation(format!("initial state: {e}")))
        })
        .collect()
}

fn single_qubit_prep(n: usize, qubit: usize, state: BlochVector) -> Result<StatePrep, CliError> {
    check_qubit(qubit, n)?;
    let mut vecs = vec![BlochVector::ground(); n];
    vecs[qubit] = state;
    Ok(StatePrep::Product(vecs))
}
