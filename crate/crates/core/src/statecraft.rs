//! Initial-state specification, instantaneous-gate plumbing, and the
//! staggered echo schedule generator.
//!
//! States are prepared either as a product of per-qubit Bloch vectors (which
//! covers both ideal |+> products and imperfect preparations characterized
//! externally) or as the ideal graph state of the device's coupling graph.
//! The solvers own the concrete representations; this module owns the
//! specifications and the gate/schedule bookkeeping shared by both.

use crate::device::DeviceModel;
use crate::C64;
use ndarray::Array1;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("Bloch vector ({x}, {y}, {z}) has norm {norm} > 1")]
    BlochNorm { x: f64, y: f64, z: f64, norm: f64 },
    #[error("expected {want} Bloch vectors, got {got}")]
    BlochCount { got: usize, want: usize },
    #[error("coupling graph is not bipartite: odd cycle through qubit {0}")]
    OddCycle(usize),
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("qubit index {0} out of range")]
    IndexRange(usize),
}

pub type Result<T> = std::result::Result<T, StateError>;

/// Single-qubit state as (x, y, z) with |r| <= 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if norm * norm > 1.0 + 1e-12 {
            return Err(StateError::BlochNorm { x, y, z, norm });
        }
        Ok(Self { x, y, z })
    }

    /// |+>, the +1 eigenstate of X.
    pub fn plus() -> Self {
        Self { x: 1.0, y: 0.0, z: 0.0 }
    }

    /// |0>, the ground state.
    pub fn ground() -> Self {
        Self { x: 0.0, y: 0.0, z: 1.0 }
    }

    /// 2x2 density matrix (I + x X + y Y + z Z) / 2, row-major.
    pub fn density(&self) -> [[C64; 2]; 2] {
        let h = 0.5;
        [
            [C64::new(h * (1.0 + self.z), 0.0), C64::new(h * self.x, -h * self.y)],
            [C64::new(h * self.x, h * self.y), C64::new(h * (1.0 - self.z), 0.0)],
        ]
    }
}

/// How the register is prepared at t = 0. Parity sites always start in the
/// diagonal mixture given by each qubit's `even_fraction`.
#[derive(Debug, Clone)]
pub enum StatePrep {
    /// Product of per-qubit Bloch vectors (one per qubit).
    Product(Vec<BlochVector>),
    /// CZ over every device edge applied to |+> on all qubits.
    Graph,
}

/// Validates one Bloch vector per qubit and wraps them as a preparation.
pub fn product_state(bloch: Vec<BlochVector>, n_qubits: usize) -> Result<StatePrep> {
    if bloch.len() != n_qubits {
        return Err(StateError::BlochCount { got: bloch.len(), want: n_qubits });
    }
    for b in &bloch {
        BlochVector::new(b.x, b.y, b.z)?;
    }
    Ok(StatePrep::Product(bloch))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Color {
    A,
    B,
}

/// Proper two-coloring of the device's qubits.
#[derive(Debug, Clone)]
pub struct Coloring {
    pub assignment: Vec<Color>,
}

impl Coloring {
    pub fn group(&self, color: Color) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c == color).then_some(i))
            .collect()
    }
}

/// Breadth-first two-coloring from the lowest index, root colored A.
/// Disconnected components are each rooted at their lowest index.
pub fn two_coloring(device: &DeviceModel) -> Result<Coloring> {
    let n = device.len();
    let mut assignment: Vec<Option<Color>> = vec![None; n];
    for root in 0..n {
        if assignment[root].is_some() {
            continue;
        }
        assignment[root] = Some(Color::A);
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            let next = match assignment[i].unwrap() {
                Color::A => Color::B,
                Color::B => Color::A,
            };
            for j in device.neighbors(i) {
                match assignment[j] {
                    None => {
                        assignment[j] = Some(next);
                        queue.push_back(j);
                    }
                    Some(c) if c == assignment[i].unwrap() => return Err(StateError::OddCycle(j)),
                    Some(_) => {}
                }
            }
        }
    }
    Ok(Coloring { assignment: assignment.into_iter().map(Option::unwrap).collect() })
}

/// Groups the device's edges into parallel CZ layers (no qubit twice per
/// layer) by greedy first-fit over edges in sorted order. A chain or an
/// even ring yields exactly two layers, alternating edges.
pub fn cz_layers(device: &DeviceModel) -> Vec<Vec<(usize, usize)>> {
    let mut edges: Vec<(usize, usize)> = device.edges.iter().map(|c| c.edge).collect();
    edges.sort_unstable();
    let mut layers: Vec<Vec<(usize, usize)>> = Vec::new();
    for e in edges {
        let slot = layers
            .iter()
            .position(|layer| layer.iter().all(|&(a, b)| a != e.0 && a != e.1 && b != e.0 && b != e.1));
        match slot {
            Some(k) => layers[k].push(e),
            None => layers.push(vec![e]),
        }
    }
    layers
}

/// Amplitudes of the device's graph state in the computational basis, qubit 0
/// most significant: 2^(-N/2) (-1)^(sum of bit products over edges).
pub fn graph_state_vector(device: &DeviceModel) -> Result<Array1<C64>> {
    let n = device.len();
    if n > 20 {
        return Err(StateError::IndexRange(n));
    }
    let dim = 1usize << n;
    let amp = (dim as f64).sqrt().recip();
    let mut psi = Array1::from_elem(dim, C64::new(amp, 0.0));
    for c in &device.edges {
        let ma = 1usize << (n - 1 - c.edge.0);
        let mb = 1usize << (n - 1 - c.edge.1);
        for s in 0..dim {
            if s & ma != 0 && s & mb != 0 {
                psi[s] = -psi[s];
            }
        }
    }
    Ok(psi)
}

/// One instantaneous X gate at `time` (in us) on `qubit`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseEvent {
    pub time: f64,
    pub qubit: usize,
}

/// A timed list of instantaneous X gates.
#[derive(Debug, Clone, Default)]
pub struct PulseSchedule {
    pub events: Vec<PulseEvent>,
    pub total_time: f64,
}

impl PulseSchedule {
    pub fn empty() -> Self {
        Self { events: Vec::new(), total_time: 0.0 }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Event times with their target qubits, grouped by exact time value.
    pub fn grouped(&self) -> Vec<(f64, Vec<usize>)> {
        let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
        for e in &self.events {
            match out.last_mut() {
                Some((t, qs)) if *t == e.time => qs.push(e.qubit),
                _ => out.push((e.time, vec![e.qubit])),
            }
        }
        out
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let mut counts = vec![0usize; n_qubits];
        let mut prev = 0.0f64;
        for e in &self.events {
            if e.qubit >= n_qubits {
                return Err(StateError::IndexRange(e.qubit));
            }
            if !(e.time > 0.0) {
                return Err(StateError::BadSchedule(format!("event time {} not strictly positive", e.time)));
            }
            if e.time > self.total_time {
                return Err(StateError::BadSchedule(format!(
                    "event time {} beyond total time {}",
                    e.time, self.total_time
                )));
            }
            if e.time < prev {
                return Err(StateError::BadSchedule("events not sorted by time".into()));
            }
            prev = e.time;
            counts[e.qubit] += 1;
        }
        if let Some(q) = counts.iter().position(|c| c % 2 == 1) {
            return Err(StateError::BadSchedule(format!("qubit {q} receives an odd number of X gates")));
        }
        Ok(())
    }

    /// Serializes as CSV with header `time_us,qubit,gate`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_us,qubit,gate\n");
        for e in &self.events {
            out.push_str(&format!("{:.16e},{},X\n", e.time, e.qubit));
        }
        out
    }

    pub fn from_csv(text: &str, n_qubits: usize) -> Result<Self> {
        let mut events = Vec::new();
        let mut total = 0.0f64;
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (k == 0 && line.starts_with("time_us")) {
                continue;
            }
            let mut parts = line.split(',');
            let err = |what: &str| StateError::BadSchedule(format!("line {}: {what}", k + 1));
            let time: f64 = parts
                .next()
                .ok_or_else(|| err("missing time"))?
                .trim()
                .parse()
                .map_err(|_| err("unparseable time"))?;
            let qubit: usize = parts
                .next()
                .ok_or_else(|| err("missing qubit"))?
                .trim()
                .parse()
                .map_err(|_| err("unparseable qubit"))?;
            let gate = parts.next().ok_or_else(|| err("missing gate"))?.trim();
            if gate != "X" {
                return Err(err(&format!("unsupported gate \"{gate}\"")));
            }
            events.push(PulseEvent { time, qubit });
            total = total.max(time);
        }
        let sched = Self { events, total_time: total };
        sched.validate(n_qubits)?;
        Ok(sched)
    }
}

/// Builds the staggered echo schedule: over each slice of length `slice_us`,
/// color A qubits get X gates at offsets {T/2, T} and color B qubits at
/// {T/4, 3T/4}. With `n_dd` slices every qubit sees 2*n_dd gates and the
/// accumulated phase of every Z, Z, and ZZ term vanishes slice by slice.
pub fn dd_schedule(coloring: &Coloring, slice_us: f64, n_dd: usize) -> PulseSchedule {
    assert!(slice_us > 0.0, "slice length must be positive");
    let mut events = Vec::new();
    for k in 0..n_dd {
        let base = k as f64 * slice_us;
        for (offset, color) in [
            (0.25 * slice_us, Color::B),
            (0.5 * slice_us, Color::A),
            (0.75 * slice_us, Color::B),
            (slice_us, Color::A),
        ] {
            let time = base + offset;
            for q in coloring.group(color) {
                events.push(PulseEvent { time, qubit: q });
            }
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.qubit.cmp(&b.qubit)));
    // the last slice boundary, taken from the event arithmetic itself so the
    // comparison in validate() cannot lose by one rounding ulp
    let total_time = events.last().map(|e| e.time).unwrap_or(0.0);
    PulseSchedule { events, total_time }
}
