//! Pauli expectations, stabilizer sets, the mean stabilizer projection, and
//! graph-state fidelity for dense states. (The matrix-product solver carries
//! its own contraction code for the same [`Observable`] requests.)

use crate::dense::DenseState;
use crate::device::{DeviceModel, TopologyKind};
use crate::pauli::{PauliOp, PauliString};
use crate::statecraft::BlochVector;
use crate::C64;
use ndarray::Array1;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObsError {
    #[error("observable length {got} does not match qubit count {want}")]
    SizeMismatch { got: usize, want: usize },
    #[error("no stabilizer expectations supplied")]
    Empty,
    #[error("measurement settings need a ring topology, got {0}")]
    NotRing(TopologyKind),
    #[error("two alternating settings cover the stabilizers only on an even ring (N = {0} is odd)")]
    OddRing(usize),
    #[error("graph-state target unavailable: {0}")]
    Target(String),
}

pub type Result<T> = std::result::Result<T, ObsError>;

/// A single recorded quantity.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Observable {
    /// Expectation of a Pauli string over the qubits (parity sites traced).
    Pauli(PauliString),
    /// Overlap of the state with the device's ideal graph state.
    GraphFidelity,
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Self::Pauli(p) => p.to_string(),
            Self::GraphFidelity => "graph_fidelity".to_string(),
        }
    }
}

/// One stabilizer per qubit: X there, Z on every coupling-graph neighbor.
pub fn stabilizer_set(device: &DeviceModel) -> Vec<PauliString> {
    let n = device.len();
    (0..n)
        .map(|k| {
            let mut ops = vec![PauliOp::I; n];
            ops[k] = PauliOp::X;
            for j in device.neighbors(k) {
                ops[j] = PauliOp::Z;
            }
            PauliString { ops }
        })
        .collect()
}

/// Mean projection (1/N) sum (1 + <S_i>)/2 over stabilizer expectations.
pub fn mean_projection(expectations: &[f64]) -> Result<f64> {
    if expectations.is_empty() {
        return Err(ObsError::Empty);
    }
    let n = expectations.len() as f64;
    Ok(expectations.iter().map(|s| 0.5 * (1.0 + s)).sum::<f64>() / n)
}

/// The two alternating measurement bases XZXZ... and ZXZX... that jointly
/// cover all ring stabilizers. Only even rings admit this pair.
pub fn measurement_settings(device: &DeviceModel) -> Result<[PauliString; 2]> {
    if device.topology != TopologyKind::Ring {
        return Err(ObsError::NotRing(device.topology));
    }
    let n = device.len();
    if n % 2 == 1 {
        return Err(ObsError::OddRing(n));
    }
    let build = |x_on_even: bool| PauliString {
        ops: (0..n)
            .map(|i| if (i % 2 == 0) == x_on_even { PauliOp::X } else { PauliOp::Z })
            .collect(),
    };
    Ok([build(true), build(false)])
}

/// Sparse action table of one Pauli string: tr(rho P) = sum_a phase(a) *
/// rho[a, a ^ xmask], with phase(a) = i^{#Y} * (-1)^{popcount(a & sign_mask)}.
struct PauliKernel {
    xmask: usize,
    sign_mask: usize,
    y_count: u32,
}

impl PauliKernel {
    fn new(p: &PauliString) -> Self {
        let n = p.len();
        let mut xmask = 0usize;
        let mut sign_mask = 0usize;
        let mut y_count = 0u32;
        for (i, &op) in p.ops.iter().enumerate() {
            let bit = 1usize << (n - 1 - i);
            match op {
                PauliOp::I => {}
                PauliOp::X => xmask |= bit,
                PauliOp::Y => {
                    xmask |= bit;
                    sign_mask |= bit;
                    y_count += 1;
                }
                PauliOp::Z => sign_mask |= bit,
            }
        }
        Self { xmask, sign_mask, y_count }
    }

    fn evaluate(&self, rho: &ndarray::Array2<C64>) -> f64 {
        let dim = rho.nrows();
        let i_pow = match self.y_count % 4 {
            0 => C64::new(1.0, 0.0),
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        };
        let mut acc = C64::new(0.0, 0.0);
        for a in 0..dim {
            let sign = if (a & self.sign_mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * rho[(a, a ^ self.xmask)];
        }
        let val = acc * i_pow;
        debug_assert!(val.im.abs() < 1e-8, "Pauli expectation must be real, got {val}");
        val.re
    }
}

/// Expectation tr(rho P) of a Pauli string on a dense state.
pub fn expect(state: &DenseState, p: &PauliString) -> Result<f64> {
    if p.len() != state.n {
        return Err(ObsError::SizeMismatch { got: p.len(), want: state.n });
    }
    Ok(PauliKernel::new(p).evaluate(&state.rho))
}

/// Bloch vector (<X>, <Y>, <Z>) of one qubit.
pub fn bloch(state: &DenseState, qubit: usize) -> Result<BlochVector> {
    let n = state.n;
    if qubit >= n {
        return Err(ObsError::SizeMismatch { got: qubit, want: n });
    }
    let x = expect(state, &PauliString::single(n, qubit, PauliOp::X))?;
    let y = expect(state, &PauliString::single(n, qubit, PauliOp::Y))?;
    let z = expect(state, &PauliString::single(n, qubit, PauliOp::Z))?;
    Ok(BlochVector { x, y, z })
}

/// Overlap <g| rho |g> with the device's ideal graph state.
pub fn graph_fidelity(state: &DenseState, device: &DeviceModel) -> Result<f64> {
    let psi = crate::statecraft::graph_state_vector(device)
        .map_err(|e| ObsError::Target(e.to_string()))?;
    Ok(fidelity_with_vector(state, &psi))
}

/// Overlap <psi| rho |psi> against an explicit pure state.
pub fn fidelity_with_vector(state: &DenseState, psi: &Array1<C64>) -> f64 {
    let mut acc = C64::new(0.0, 0.0);
    for (a, pa) in psi.iter().enumerate() {
        let mut row = C64::new(0.0, 0.0);
        for (b, pb) in psi.iter().enumerate() {
            row += state.rho[(a, b)] * pb;
        }
        acc += pa.conj() * row;
    }
    debug_assert!(acc.im.abs() < 1e-8);
    acc.re
}

/// Pre-resolved observable set for the dense solver's record loop.
pub(crate) struct DenseObsContext {
    kernels: Vec<ObsKernel>,
}

enum ObsKernel {
    Pauli(PauliKernel),
    Fidelity(Array1<C64>),
}

impl DenseObsContext {
    pub fn prepare(device: &DeviceModel, obs: &[Observable]) -> Result<Self> {
        let n = device.len();
        let kernels = obs
            .iter()
            .map(|o| match o {
                Observable::Pauli(p) => {
                    if p.len() != n {
                        Err(ObsError::SizeMismatch { got: p.len(), want: n })
                    } else {
                        Ok(ObsKernel::Pauli(PauliKernel::new(p)))
                    }
                }
                Observable::GraphFidelity => crate::statecraft::graph_state_vector(device)
                    .map(ObsKernel::Fidelity)
                    .map_err(|e| ObsError::Target(e.to_string())),
            })
            .collect::<Result<_>>()?;
        Ok(Self { kernels })
    }

    pub fn evaluate(&self, state: &DenseState) -> Vec<f64> {
        self.kernels
            .iter()
            .map(|k| match k {
                ObsKernel::Pauli(p) => p.evaluate(&state.rho),
                ObsKernel::Fidelity(psi) => fidelity_with_vector(state, psi),
            })
            .collect()
    }
}
