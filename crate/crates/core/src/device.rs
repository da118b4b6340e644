//! Device parameters: per-qubit noise/frequency numbers, the coupling graph,
//! unit conversions, and the Lindblad rates derived from T1/T2.
//!
//! All quantities are stored in the units the device files quote them in
//! (times in microseconds, qubit frequencies in Hz, couplings in kHz) and
//! converted to angular frequencies in rad/us at the solver boundary via
//! [`angular`].

use serde::Deserialize;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Converts a cyclic frequency in Hz to an angular frequency in rad/us.
pub fn angular(f_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * f_hz * 1e-6
}

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("cannot read device file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse device file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid device: {path}: {reason}")]
    Invalid { path: String, reason: String },
}

impl DeviceError {
    fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, DeviceError>;

/// Per-qubit physical parameters.
///
/// `nu` and `delta` are cyclic frequencies (values over 2 pi) in Hz; `t1` and
/// `t2` are in microseconds. `even_fraction` is the probability of the even
/// charge-parity branch, and `heating_fraction` the asymptotic excited-state
/// population of the T1 decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitParams {
    pub t1: f64,
    pub t2: f64,
    pub nu: f64,
    pub delta: f64,
    pub even_fraction: f64,
    pub heating_fraction: f64,
}

impl QubitParams {
    pub fn validate(&self, path: &str) -> Result<()> {
        let bad = |field: &str, reason: String| -> Result<()> {
            Err(DeviceError::invalid(format!("{path}.{field}"), reason))
        };
        // infinities are legal: they turn the corresponding rates off exactly
        if !(self.t1 > 0.0) {
            return bad("t1", format!("must be positive, got {}", self.t1));
        }
        if !(self.t2 > 0.0) {
            return bad("t2", format!("must be positive, got {}", self.t2));
        }
        if self.t2 > 2.0 * self.t1 {
            return bad("t2", format!("t2 = {} exceeds 2*t1 = {}", self.t2, 2.0 * self.t1));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return bad("nu", format!("must be non-negative, got {}", self.nu));
        }
        if !self.delta.is_finite() {
            return bad("delta", "must be finite".to_string());
        }
        if !(0.0..=1.0).contains(&self.even_fraction) {
            return bad("even_fraction", format!("must lie in [0, 1], got {}", self.even_fraction));
        }
        if !(0.0..1.0).contains(&self.heating_fraction) {
            return bad("heating_fraction", format!("must lie in [0, 1), got {}", self.heating_fraction));
        }
        Ok(())
    }
}

/// One edge of the coupling graph with its ZZ strength.
///
/// `zeta` is the cyclic coupling frequency in Hz (device files quote kHz and
/// the loader converts). The edge is stored with `edge.0 < edge.1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingParams {
    pub edge: (usize, usize),
    pub zeta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    Chain,
    Ring,
    General,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Chain => write!(f, "chain"),
            Self::Ring => write!(f, "ring"),
            Self::General => write!(f, "general"),
        }
    }
}

/// A register of qubits with its coupling graph.
///
/// Qubit indices are contiguous from 0 in file order. `labels`, when present,
/// carries the physical qubit numbers the source hardware used; they only
/// matter for reporting and for resolving edge references in device files.
#[derive(Debug, Clone)]
pub struct DeviceModel {
    pub qubits: Vec<QubitParams>,
    pub edges: Vec<CouplingParams>,
    pub topology: TopologyKind,
    pub labels: Option<Vec<u32>>,
}

/// Lindblad rates of one qubit, all in 1/us.
///
/// `g0` drives relaxation toward the ground state, `g1` the (usually
/// negligible) heating toward the excited state, and `g2` pure dephasing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub g0: f64,
    pub g1: f64,
    pub g2: f64,
}

/// Splits 1/T1 into relaxation and heating and derives the dephasing rate.
///
/// The heating fraction fixes g1 = h/t1 while keeping g0 + g1 = 1/t1, so the
/// population relaxation time stays at T1 regardless of the split.
pub fn lindblad_rates(q: &QubitParams) -> Rates {
    let inv_t1 = 1.0 / q.t1;
    let g1 = q.heating_fraction * inv_t1;
    let g0 = inv_t1 - g1;
    let g2 = (1.0 / q.t2 - 0.5 * inv_t1) / 2.0;
    Rates { g0, g1, g2 }
}

/// A single qubit's reduced dynamics as a classical mixture of detunings.
///
/// `frequencies` are angular (rad/us). Owning qubit parity contributes the
/// +nu/-nu split; each neighbor contributes a 0 or 2*zeta shift depending on
/// whether it sits in the ground or excited state.
#[derive(Debug, Clone)]
pub struct EffectiveMixture {
    pub frequencies: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DeviceModel {
    pub fn len(&self) -> usize {
        self.qubits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qubits.is_empty()
    }

    /// Neighbors of qubit `i` in ascending index order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|c| {
                if c.edge.0 == i {
                    Some(c.edge.1)
                } else if c.edge.1 == i {
                    Some(c.edge.0)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// ZZ strength between `i` and `j` in Hz, or None if not an edge.
    pub fn zeta_between(&self, i: usize, j: usize) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.edges.iter().find(|c| c.edge == key).map(|c| c.zeta)
    }

    /// Index of the qubit carrying physical label `label`.
    pub fn index_of_label(&self, label: u32) -> Option<usize> {
        self.labels.as_ref()?.iter().position(|&l| l == label)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.qubits.len();
        if n == 0 {
            return Err(DeviceError::invalid("qubit", "device must contain at least one qubit"));
        }
        for (i, q) in self.qubits.iter().enumerate() {
            q.validate(&format!("qubit[{i}]"))?;
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(DeviceError::invalid("qubit.label", "either all qubits or none carry labels"));
            }
            let mut seen = labels.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != n {
                return Err(DeviceError::invalid("qubit.label", "labels must be unique"));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (k, c) in self.edges.iter().enumerate() {
            let path = format!("edge[{k}]");
            let (a, b) = c.edge;
            if a == b {
                return Err(DeviceError::invalid(path, "edge endpoints must be distinct"));
            }
            if a.max(b) >= n {
                return Err(DeviceError::invalid(path, format!("endpoint {} out of range (device has {n} qubits)", a.max(b))));
            }
            if a > b {
                return Err(DeviceError::invalid(path, "edge must be stored with ascending endpoints"));
            }
            if !c.zeta.is_finite() {
                return Err(DeviceError::invalid(format!("{path}.zeta"), "must be finite"));
            }
            if !seen.insert((a, b)) {
                return Err(DeviceError::invalid(path, format!("duplicate edge ({a}, {b})")));
            }
        }
        self.validate_topology()
    }

    fn validate_topology(&self) -> Result<()> {
        let n = self.qubits.len();
        let degrees = {
            let mut d = vec![0usize; n];
            for c in &self.edges {
                d[c.edge.0] += 1;
                d[c.edge.1] += 1;
            }
            d
        };
        match self.topology {
            TopologyKind::General => Ok(()),
            TopologyKind::Chain => {
                let ok = self.edges.len() + 1 == n
                    && self.connected()
                    && degrees.iter().all(|&d| d <= 2);
                if ok {
                    Ok(())
                } else {
                    Err(DeviceError::invalid(
                        "device.topology",
                        format!("edges do not form a single chain over {n} qubits"),
                    ))
                }
            }
            TopologyKind::Ring => {
                let ok = n >= 3
                    && self.edges.len() == n
                    && self.connected()
                    && degrees.iter().all(|&d| d == 2);
                if ok {
                    Ok(())
                } else {
                    Err(DeviceError::invalid(
                        "device.topology",
                        format!("edges do not form a single cycle over {n} qubits"),
                    ))
                }
            }
        }
    }

    fn connected(&self) -> bool {
        let n = self.qubits.len();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Parses a device file; see the bundled files under `devices/`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawDeviceFile = toml::from_str(text)?;
        raw.into_model()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Enumerates the reduced single-qubit dynamics of qubit `i` as a detuning
/// mixture: one branch per (own parity) x (neighbor ground/excited) choice.
///
/// `neighbor_populations` maps each neighbor of `i` to its excited-state
/// probability. Branches are ordered with the parity sign as the slowest
/// index (even first) and neighbors toggling in ascending index order.
pub fn effective_mixture(
    device: &DeviceModel,
    i: usize,
    neighbor_populations: &[(usize, f64)],
) -> Result<EffectiveMixture> {
    if i >= device.len() {
        return Err(DeviceError::invalid("qubit", format!("index {i} out of range")));
    }
    let neighbors = device.neighbors(i);
    let pops: BTreeMap<usize, f64> = neighbor_populations.iter().copied().collect();
    for &j in &neighbors {
        let p = pops.get(&j).ok_or_else(|| {
            DeviceError::invalid("neighbor_populations", format!("missing population for neighbor {j}"))
        })?;
        if !(0.0..=1.0).contains(p) {
            return Err(DeviceError::invalid(
                "neighbor_populations",
                format!("population {p} for neighbor {j} outside [0, 1]"),
            ));
        }
    }

    let q = &device.qubits[i];
    let m = neighbors.len();
    let count = 1usize << (1 + m);
    let mut frequencies = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for parity_odd in [false, true] {
        let (sign, parity_weight) = if parity_odd {
            (-1.0, 1.0 - q.even_fraction)
        } else {
            (1.0, q.even_fraction)
        };
        for mask in 0..(1usize << m) {
            let mut f_hz = q.delta + sign * q.nu;
            let mut w = parity_weight;
            for (bit, &j) in neighbors.iter().enumerate() {
                let excited = mask >> bit & 1 == 1;
                let p = pops[&j];
                if excited {
                    f_hz += 2.0 * device.zeta_between(i, j).expect("neighbor implies edge");
                    w *= p;
                } else {
                    w *= 1.0 - p;
                }
            }
            frequencies.push(angular(f_hz));
            weights.push(w);
        }
    }
    Ok(EffectiveMixture { frequencies, weights })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDeviceFile {
    units: RawUnits,
    device: RawDeviceHeader,
    #[serde(rename = "qubit", default)]
    qubits: Vec<RawQubit>,
    #[serde(rename = "edge", default)]
    edges: Vec<RawEdge>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUnits {
    time: String,
    frequency: String,
    zeta: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDeviceHeader {
    topology: String,
    #[serde(default)]
    #[allow(dead_code)]
    name: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQubit {
    #[serde(default)]
    label: Option<u32>,
    t1: f64,
    t2: f64,
    nu: f64,
    delta: f64,
    #[serde(default)]
    even_fraction: Option<f64>,
    #[serde(default)]
    heating_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    qubits: [u32; 2],
    zeta: f64,
}

impl RawDeviceFile {
    fn into_model(self) -> Result<DeviceModel> {
        if self.units.time != "us" {
            return Err(DeviceError::invalid("units.time", format!("expected \"us\", got \"{}\"", self.units.time)));
        }
        if self.units.frequency != "Hz" {
            return Err(DeviceError::invalid("units.frequency", format!("expected \"Hz\", got \"{}\"", self.units.frequency)));
        }
        if self.units.zeta != "kHz" {
            return Err(DeviceError::invalid("units.zeta", format!("expected \"kHz\", got \"{}\"", self.units.zeta)));
        }
        let topology = match self.device.topology.as_str() {
            "chain" => TopologyKind::Chain,
            "ring" => TopologyKind::Ring,
            "general" => TopologyKind::General,
            other => {
                return Err(DeviceError::invalid(
                    "device.topology",
                    format!("expected chain, ring, or general, got \"{other}\""),
                ))
            }
        };

        let labelled = self.qubits.iter().filter(|q| q.label.is_some()).count();
        if labelled != 0 && labelled != self.qubits.len() {
            return Err(DeviceError::invalid("qubit.label", "either all qubits or none carry labels"));
        }
        let labels: Option<Vec<u32>> = if labelled == 0 {
            None
        } else {
            Some(self.qubits.iter().map(|q| q.label.unwrap()).collect())
        };

        let qubits: Vec<QubitParams> = self
            .qubits
            .iter()
            .map(|q| QubitParams {
                t1: q.t1,
                t2: q.t2,
                nu: q.nu,
                delta: q.delta,
                even_fraction: q.even_fraction.unwrap_or(0.5),
                heating_fraction: q.heating_fraction.unwrap_or(0.0),
            })
            .collect();

        let resolve = |r: u32, k: usize| -> Result<usize> {
            let path = format!("edge[{k}].qubits");
            match &labels {
                Some(labels) => labels
                    .iter()
                    .position(|&l| l == r)
                    .ok_or_else(|| DeviceError::invalid(path, format!("no qubit labelled {r}"))),
                None => {
                    let idx = r as usize;
                    if idx < qubits.len() {
                        Ok(idx)
                    } else {
                        Err(DeviceError::invalid(path, format!("index {r} out of range")))
                    }
                }
            }
        };
        let mut edges = Vec::with_capacity(self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            let a = resolve(e.qubits[0], k)?;
            let b = resolve(e.qubits[1], k)?;
            if a == b {
                return Err(DeviceError::invalid(format!("edge[{k}]"), "edge endpoints must be distinct"));
            }
            edges.push(CouplingParams { edge: (a.min(b), a.max(b)), zeta: e.zeta * 1e3 });
        }

        let model = DeviceModel { qubits, edges, topology, labels };
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn devices_dir() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../devices")
    }

    #[test]
    fn angular_matches_hand_values() {
        assert_eq!(angular(0.0), 0.0);
        assert_abs_diff_eq!(angular(3308.0), 2.0785e-2, epsilon = 5e-6);
        assert_abs_diff_eq!(angular(-142_600.0), -0.8960, epsilon = 5e-5);
    }

    #[test]
    fn rates_from_t1_t2() {
        let q = QubitParams {
            t1: 123.0,
            t2: 84.0,
            nu: 3308.0,
            delta: -9088.0,
            even_fraction: 0.5,
            heating_fraction: 0.0,
        };
        let r = lindblad_rates(&q);
        assert_abs_diff_eq!(r.g0, 8.1301e-3, epsilon = 1e-7);
        assert_eq!(r.g1, 0.0);
        assert_abs_diff_eq!(r.g2, 3.9199e-3, epsilon = 1e-7);
    }

    #[test]
    fn rates_with_heating_split() {
        let q = QubitParams {
            t1: 100.0,
            t2: 100.0,
            nu: 0.0,
            delta: 0.0,
            even_fraction: 0.5,
            heating_fraction: 0.043,
        };
        let r = lindblad_rates(&q);
        assert_abs_diff_eq!(r.g1, 4.3e-4, epsilon = 1e-12);
        assert_abs_diff_eq!(r.g0, 9.57e-3, epsilon = 1e-12);
    }

    #[test]
    fn rates_boundary_t2_equals_2t1() {
        let q = QubitParams {
            t1: 50.0,
            t2: 100.0,
            nu: 0.0,
            delta: 0.0,
            even_fraction: 0.5,
            heating_fraction: 0.0,
        };
        assert!(q.validate("qubit[0]").is_ok());
        assert_abs_diff_eq!(lindblad_rates(&q).g2, 0.0, epsilon = 1e-18);
    }

    #[test]
    fn load_ring12_table_values() {
        let dev = DeviceModel::load(devices_dir().join("ring12.toml")).unwrap();
        assert_eq!(dev.len(), 12);
        assert_eq!(dev.edges.len(), 12);
        assert_eq!(dev.topology, TopologyKind::Ring);
        let i = dev.index_of_label(22).unwrap();
        let q = &dev.qubits[i];
        assert_eq!(q.t1, 100.0);
        assert_eq!(q.t2, 93.0);
        assert_eq!(q.nu, 3126.0);
        assert_eq!(q.delta, -6368.0);
        let j = dev.index_of_label(15).unwrap();
        assert_eq!(dev.zeta_between(i, j), Some(-142.6e3));
    }

    #[test]
    fn load_chain_devices() {
        let plus = DeviceModel::load(devices_dir().join("chain3_plus.toml")).unwrap();
        assert_eq!(plus.topology, TopologyKind::Chain);
        assert_eq!(plus.qubits[0].t1, 123.0);
        assert_eq!(plus.zeta_between(0, 1), Some(-39.4e3));
        assert_eq!(plus.zeta_between(0, 2), None);
        let graph = DeviceModel::load(devices_dir().join("chain3_graph.toml")).unwrap();
        assert_eq!(graph.qubits[1].delta, -13795.0);
        assert_eq!(graph.zeta_between(1, 2), Some(-31.1e3));
    }

    #[test]
    fn duplicate_edge_rejected() {
        let text = r#"
            [units]
            time = "us"
            frequency = "Hz"
            zeta = "kHz"
            [device]
            topology = "general"
            [[qubit]]
            t1 = 100.0
            t2 = 100.0
            nu = 0.0
            delta = 0.0
            [[qubit]]
            t1 = 100.0
            t2 = 100.0
            nu = 0.0
            delta = 0.0
            [[edge]]
            qubits = [0, 1]
            zeta = -30.0
            [[edge]]
            qubits = [1, 0]
            zeta = -30.0
        "#;
        let err = DeviceModel::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("duplicate edge"), "{err}");
    }

    #[test]
    fn t2_above_2t1_rejected_with_field_path() {
        let text = r#"
            [units]
            time = "us"
            frequency = "Hz"
            zeta = "kHz"
            [device]
            topology = "general"
            [[qubit]]
            t1 = 50.0
            t2 = 101.0
            nu = 0.0
            delta = 0.0
        "#;
        let err = DeviceModel::from_toml_str(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("qubit[0].t2"), "{msg}");
    }

    #[test]
    fn wrong_units_rejected() {
        let text = r#"
            [units]
            time = "ns"
            frequency = "Hz"
            zeta = "kHz"
            [device]
            topology = "general"
            [[qubit]]
            t1 = 50.0
            t2 = 60.0
            nu = 0.0
            delta = 0.0
        "#;
        assert!(DeviceModel::from_toml_str(text).is_err());
    }

    #[test]
    fn mixture_degenerate_all_zero() {
        let dev = DeviceModel::load(devices_dir().join("chain3_plus.toml")).unwrap();
        let mut dev = dev;
        dev.qubits[1].nu = 0.0;
        for e in &mut dev.edges {
            e.zeta = 0.0;
        }
        let mix = effective_mixture(&dev, 1, &[(0, 0.5), (2, 0.5)]).unwrap();
        assert_eq!(mix.frequencies.len(), 8);
        let d0 = angular(dev.qubits[1].delta);
        for f in &mix.frequencies {
            assert_abs_diff_eq!(*f, d0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(mix.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mixture_middle_qubit_of_chain() {
        let dev = DeviceModel::load(devices_dir().join("chain3_plus.toml")).unwrap();
        let mix = effective_mixture(&dev, 1, &[(0, 0.5), (2, 0.5)]).unwrap();
        assert_eq!(mix.frequencies.len(), 8);
        for w in &mix.weights {
            assert_abs_diff_eq!(*w, 0.125, epsilon = 1e-15);
        }
        let (delta, nu) = (-12093.0, 2253.0);
        let (z01, z12) = (-39.4e3, -30.6e3);
        let mut expect: Vec<f64> = Vec::new();
        for sign in [1.0, -1.0] {
            for shift in [0.0, 2.0 * z01, 2.0 * z12, 2.0 * (z01 + z12)] {
                expect.push(angular(delta + sign * nu + shift));
            }
        }
        let mut got = mix.frequencies.clone();
        let mut want = expect;
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn mixture_missing_population_rejected() {
        let dev = DeviceModel::load(devices_dir().join("chain3_plus.toml")).unwrap();
        assert!(effective_mixture(&dev, 1, &[(0, 0.5)]).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rate_split_closes(
                t1 in 1.0f64..500.0,
                ratio in 0.01f64..2.0,
                h in 0.0f64..0.99,
            ) {
                let q = QubitParams {
                    t1,
                    t2: (ratio * t1).min(2.0 * t1),
                    nu: 0.0,
                    delta: 0.0,
                    even_fraction: 0.5,
                    heating_fraction: h,
                };
                let r = lindblad_rates(&q);
                prop_assert!(r.g0 >= 0.0 && r.g1 >= 0.0);
                let sum = r.g0 + r.g1;
                let target = 1.0 / t1;
                prop_assert!((sum - target).abs() <= f64::EPSILON * target);
            }

            #[test]
            fn angular_is_linear(a in -1e7f64..1e7, b in -1e7f64..1e7) {
                let lhs = angular(a + b);
                let rhs = angular(a) + angular(b);
                prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            }

            #[test]
            fn mixture_weights_normalized(
                b in 0.0f64..1.0,
                p0 in 0.0f64..1.0,
                p2 in 0.0f64..1.0,
            ) {
                let mut dev = DeviceModel::load(
                    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../devices/chain3_plus.toml"),
                ).unwrap();
                dev.qubits[1].even_fraction = b;
                let mix = effective_mixture(&dev, 1, &[(0, p0), (2, p2)]).unwrap();
                prop_assert_eq!(mix.frequencies.len(), 8);
                prop_assert!(mix.weights.iter().all(|&w| w >= 0.0));
                let sum: f64 = mix.weights.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
}
