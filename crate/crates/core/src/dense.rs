//! Brute-force reference solver for small registers.
//!
//! The Hamiltonian is diagonal in the computational basis for every fixed
//! charge-parity configuration, so the coherent part of the master equation
//! reduces to elementwise phase differences of a per-configuration energy
//! vector. Relaxation, heating, and dephasing act per qubit through bit
//! masks. The full state is the parity-weighted convex sum over
//! configurations, evaluated by exact enumeration or Monte-Carlo sampling;
//! each configuration integrates with fixed-step RK4.

use crate::device::{angular, lindblad_rates, DeviceModel, Rates};
use crate::observables::{self, Observable};
use crate::statecraft::{PulseSchedule, StatePrep, StateError};
use crate::trajectory::{build_timeline, Trajectory};
use crate::C64;
use ndarray::{Array1, Array2, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

/// Largest register the dense solver accepts (2^N x 2^N storage).
pub const MAX_DENSE_QUBITS: usize = 10;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dense solver limited to {MAX_DENSE_QUBITS} qubits, got {0}")]
    TooLarge(usize),
    #[error("bad timeline: {0}")]
    Timeline(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Observable(#[from] crate::observables::ObsError),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, SolverError>;

/// One assignment of even/odd parity to every qubit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityConfig {
    /// +1 for even, -1 for odd, one entry per qubit.
    pub signs: Vec<i8>,
}

impl ParityConfig {
    /// Configuration from the bits of `mask`: bit i set means qubit i odd.
    pub fn from_mask(n: usize, mask: usize) -> Self {
        Self { signs: (0..n).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect() }
    }

    /// Probability of this configuration under the device's parity mixture.
    pub fn weight(&self, device: &DeviceModel) -> f64 {
        self.signs
            .iter()
            .zip(&device.qubits)
            .map(|(&s, q)| if s > 0 { q.even_fraction } else { 1.0 - q.even_fraction })
            .product()
    }
}

/// Diagonal Hamiltonian energies (rad/us) of all 2^N basis states for one
/// parity configuration; qubit 0 owns the most significant bit.
pub fn hamiltonian_diagonal(device: &DeviceModel, parity: &ParityConfig) -> Array1<f64> {
    let n = device.len();
    assert_eq!(parity.signs.len(), n, "parity length must match device");
    let dim = 1usize << n;
    let mut energies = Array1::zeros(dim);
    for (i, q) in device.qubits.iter().enumerate() {
        let omega = angular(q.delta + f64::from(parity.signs[i]) * q.nu);
        let mask = 1usize << (n - 1 - i);
        for s in 0..dim {
            if s & mask != 0 {
                energies[s] += omega;
            }
        }
    }
    for c in &device.edges {
        let shift = 2.0 * angular(c.zeta);
        let ma = 1usize << (n - 1 - c.edge.0);
        let mb = 1usize << (n - 1 - c.edge.1);
        for s in 0..dim {
            if s & ma != 0 && s & mb != 0 {
                energies[s] += shift;
            }
        }
    }
    energies
}

/// Time derivative of `rho` under the diagonal Hamiltonian given by
/// `energies` plus each qubit's relaxation, heating, and dephasing.
pub fn liouvillian_apply(
    device: &DeviceModel,
    parity: &ParityConfig,
    rho: &Array2<C64>,
) -> Array2<C64> {
    let energies = hamiltonian_diagonal(device, parity);
    let rates: Vec<Rates> = device.qubits.iter().map(lindblad_rates).collect();
    let mut out = Array2::zeros(rho.raw_dim());
    liouvillian_into(&energies, &rates, rho, &mut out);
    out
}

/// Core kernel: writes d(rho)/dt into `out`.
///
/// Coherent part: d rho_rc = i (E_r - E_c) rho_rc, the sign chosen so that a
/// positive detuning advances the phase of X toward Y. Dissipative part per
/// qubit i with masks: population transfer between bit values plus coherence
/// decay of every element whose indices differ on qubit i.
fn liouvillian_into(
    energies: &Array1<f64>,
    rates: &[Rates],
    rho: &Array2<C64>,
    out: &mut Array2<C64>,
) {
    let dim = energies.len();
    let n = rates.len();
    for r in 0..dim {
        for c in 0..dim {
            let mut v = C64::new(0.0, energies[r] - energies[c]) * rho[(r, c)];
            for (i, g) in rates.iter().enumerate() {
                let mask = 1usize << (n - 1 - i);
                let (br, bc) = (r & mask != 0, c & mask != 0);
                // relaxation: gain from the excited manifold, loss from it
                if !br && !bc {
                    v += g.g0 * rho[(r | mask, c | mask)];
                    v += g.g1 * (rho[(r, c)] * -1.0);
                } else if br && bc {
                    v += g.g1 * rho[(r & !mask, c & !mask)];
                    v += g.g0 * (rho[(r, c)] * -1.0);
                } else {
                    v -= 0.5 * (g.g0 + g.g1) * rho[(r, c)];
                    v -= 2.0 * g.g2 * rho[(r, c)];
                }
            }
            out[(r, c)] = v;
        }
    }
}

/// Dense density matrix with qubit 0 most significant.
#[derive(Debug, Clone)]
pub struct DenseState {
    pub rho: Array2<C64>,
    pub n: usize,
}

impl DenseState {
    /// Builds the qubit part of the initial state (parity handled by the
    /// evolution's configuration mixture).
    pub fn from_prep(device: &DeviceModel, prep: &StatePrep) -> Result<Self> {
        let n = device.len();
        if n > MAX_DENSE_QUBITS {
            return Err(SolverError::TooLarge(n));
        }
        let rho = match prep {
            StatePrep::Product(bloch) => {
                if bloch.len() != n {
                    return Err(StateError::BlochCount { got: bloch.len(), want: n }.into());
                }
                let mut rho = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
                for b in bloch {
                    let q = b.density();
                    let dim = rho.nrows();
                    let mut next = Array2::zeros((2 * dim, 2 * dim));
                    for r in 0..dim {
                        for c in 0..dim {
                            for (qr, qrow) in q.iter().enumerate() {
                                for (qc, &val) in qrow.iter().enumerate() {
                                    next[(r * 2 + qr, c * 2 + qc)] = rho[(r, c)] * val;
                                }
                            }
                        }
                    }
                    rho = next;
                }
                rho
            }
            StatePrep::Graph => {
                let psi = crate::statecraft::graph_state_vector(device)?;
                let dim = psi.len();
                Array2::from_shape_fn((dim, dim), |(r, c)| psi[r] * psi[c].conj())
            }
        };
        Ok(Self { rho, n })
    }

    /// Applies an instantaneous X gate on `qubit` by conjugation.
    pub fn apply_x(&mut self, qubit: usize) {
        let mask = 1usize << (self.n - 1 - qubit);
        let dim = self.rho.nrows();
        let mut next = Array2::zeros((dim, dim));
        for r in 0..dim {
            for c in 0..dim {
                next[(r, c)] = self.rho[(r ^ mask, c ^ mask)];
            }
        }
        self.rho = next;
    }

    /// Applies an instantaneous CZ gate on the pair by conjugation.
    pub fn apply_cz(&mut self, a: usize, b: usize) {
        let ma = 1usize << (self.n - 1 - a);
        let mb = 1usize << (self.n - 1 - b);
        let dim = self.rho.nrows();
        let flip = |s: usize| s & ma != 0 && s & mb != 0;
        for r in 0..dim {
            for c in 0..dim {
                if flip(r) != flip(c) {
                    self.rho[(r, c)] = -self.rho[(r, c)];
                }
            }
        }
    }

    pub fn trace(&self) -> C64 {
        self.rho.diag().sum()
    }

    /// Largest absolute deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let dim = self.rho.nrows();
        let mut worst = 0.0f64;
        for r in 0..dim {
            for c in r..dim {
                worst = worst.max((self.rho[(r, c)] - self.rho[(c, r)].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue (Hermitian part), for positivity checks.
    pub fn min_eigenvalue(&self) -> f64 {
        use ndarray_linalg::Eigh;
        let (vals, _) = self
            .rho
            .eigh(ndarray_linalg::UPLO::Lower)
            .expect("eigendecomposition of a finite matrix");
        vals.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// How the parity mixture is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParityMode {
    /// All 2^N configurations with exact weights.
    Enumerate,
    /// `k` configurations drawn per-qubit Bernoulli(even_fraction).
    Sample { k: usize, seed: u64 },
}

/// Default RK4 step in us; fine enough that the largest tabulated angular
/// frequency advances by well under 0.05 rad per step.
pub const DEFAULT_DENSE_DT: f64 = 0.05;

/// Evolves the register and records the requested observables.
///
/// `dt` is the RK4 step ceiling; every segment between record or gate times
/// is subdivided into equal steps no longer than `dt`. Record rows are the
/// parity-weighted averages. In sampling mode every observable column is
/// followed by a `<name>_se` column carrying the sample standard error of
/// the Monte-Carlo mean.
pub fn evolve_dense(
    device: &DeviceModel,
    prep: &StatePrep,
    times: &[f64],
    schedule: &PulseSchedule,
    mode: ParityMode,
    obs: &[Observable],
    dt: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(SolverError::Numeric(format!("dt must be positive, got {dt}")));
    }
    let n = device.len();
    if n > MAX_DENSE_QUBITS {
        return Err(SolverError::TooLarge(n));
    }
    schedule.validate(n)?;
    let timeline = build_timeline(times, schedule).map_err(SolverError::Timeline)?;
    let rho0 = DenseState::from_prep(device, prep)?;
    let obs_ctx = observables::DenseObsContext::prepare(device, obs)?;
    let rates: Vec<Rates> = device.qubits.iter().map(lindblad_rates).collect();

    let (configs, weights): (Vec<ParityConfig>, Vec<f64>) = match mode {
        ParityMode::Enumerate => {
            let mut cs = Vec::new();
            let mut ws = Vec::new();
            for mask in 0..(1usize << n) {
                let config = ParityConfig::from_mask(n, mask);
                let w = config.weight(device);
                if w != 0.0 {
                    cs.push(config);
                    ws.push(w);
                }
            }
            (cs, ws)
        }
        ParityMode::Sample { k, seed } => {
            if k == 0 {
                return Err(SolverError::Numeric("parity sampling needs k >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cs = (0..k)
                .map(|_| ParityConfig {
                    signs: device
                        .qubits
                        .iter()
                        .map(|q| if rng.gen::<f64>() < q.even_fraction { 1 } else { -1 })
                        .collect(),
                })
                .collect();
            (cs, vec![1.0 / k as f64; k])
        }
    };

    // independent configurations, deterministic order-preserving reduction
    let per_config: Vec<Result<Vec<Vec<f64>>>> = configs
        .par_iter()
        .map(|config| run_config(device, &rates, config, &rho0, &timeline, &obs_ctx, dt))
        .collect();

    let n_records = timeline.record_at_zero as usize
        + timeline.segments.iter().filter(|s| s.record).count();
    let n_obs = obs.len();
    let mut mean = vec![vec![0.0f64; n_obs]; n_records];
    let mut sumsq = vec![vec![0.0f64; n_obs]; n_records];
    for (rows, w) in per_config.into_iter().zip(&weights) {
        let rows = rows?;
        for (rec, row) in rows.into_iter().enumerate() {
            for (k, v) in row.into_iter().enumerate() {
                mean[rec][k] += w * v;
                sumsq[rec][k] += w * v * v;
            }
        }
    }

    let sample_k = match mode {
        ParityMode::Sample { k, .. } => Some(k),
        ParityMode::Enumerate => None,
    };
    let mut columns = Vec::new();
    for o in obs {
        columns.push(o.name());
        if sample_k.is_some() {
            columns.push(format!("{}_se", o.name()));
        }
    }
    let mut traj = Trajectory::new(columns);
    let mut rec_times: Vec<f64> = Vec::new();
    if timeline.record_at_zero {
        rec_times.push(0.0);
    }
    rec_times.extend(timeline.segments.iter().filter(|s| s.record).map(|s| s.t_end));
    for (rec, t) in rec_times.into_iter().enumerate() {
        let mut row = Vec::with_capacity(traj.columns.len());
        for k in 0..n_obs {
            row.push(mean[rec][k]);
            if let Some(kk) = sample_k {
                let var = (sumsq[rec][k] - mean[rec][k] * mean[rec][k]).max(0.0);
                let se = if kk > 1 { (var / (kk as f64 - 1.0)).sqrt() } else { 0.0 };
                row.push(se);
            }
        }
        traj.push(t, row);
    }
    Ok(traj)
}

/// Integrates one parity configuration over the timeline and returns one row
/// of observable values per record.
fn run_config(
    device: &DeviceModel,
    rates: &[Rates],
    config: &ParityConfig,
    rho0: &DenseState,
    timeline: &crate::trajectory::Timeline,
    obs_ctx: &observables::DenseObsContext,
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    let energies = hamiltonian_diagonal(device, config);
    let mut state = rho0.clone();
    let mut rows = Vec::new();
    if timeline.record_at_zero {
        rows.push(obs_ctx.evaluate(&state));
    }
    let mut t = 0.0f64;
    let mut work = Rk4Work::new(state.rho.nrows());
    for seg in &timeline.segments {
        let span = seg.t_end - t;
        if span > 0.0 {
            let steps = step_count(span, dt);
            let h = span / steps as f64;
            for _ in 0..steps {
                rk4_step(&energies, rates, &mut state.rho, h, &mut work);
            }
        }
        t = seg.t_end;
        for &q in &seg.gates {
            state.apply_x(q);
        }
        if seg.record {
            let tr = state.trace();
            if (tr.re - 1.0).abs() > 1e-6 || tr.im.abs() > 1e-6 {
                return Err(SolverError::Numeric(format!(
                    "trace drifted to {tr} at t = {t} us; reduce dt"
                )));
            }
            rows.push(obs_ctx.evaluate(&state));
        }
    }
    Ok(rows)
}

pub(crate) fn step_count(span: f64, dt: f64) -> usize {
    let ratio = span / dt;
    let rounded = ratio.round();
    let n = if (ratio - rounded).abs() < 1e-9 * ratio.max(1.0) { rounded } else { ratio.ceil() };
    (n as usize).max(1)
}

struct Rk4Work {
    k: Array2<C64>,
    stage: Array2<C64>,
    acc: Array2<C64>,
}

impl Rk4Work {
    fn new(dim: usize) -> Self {
        Self {
            k: Array2::zeros((dim, dim)),
            stage: Array2::zeros((dim, dim)),
            acc: Array2::zeros((dim, dim)),
        }
    }
}

/// One classical RK4 step of d(rho)/dt = L(rho) with step `h`.
fn rk4_step(
    energies: &Array1<f64>,
    rates: &[Rates],
    rho: &mut Array2<C64>,
    h: f64,
    w: &mut Rk4Work,
) {
    // k1
    liouvillian_into(energies, rates, rho, &mut w.k);
    w.acc.assign(&w.k);
    // k2
    Zip::from(&mut w.stage).and(&*rho).and(&w.k).for_each(|s, &r, &k| *s = r + 0.5 * h * k);
    liouvillian_into(energies, rates, &w.stage, &mut w.k);
    Zip::from(&mut w.acc).and(&w.k).for_each(|a, &k| *a += 2.0 * k);
    // k3
    Zip::from(&mut w.stage).and(&*rho).and(&w.k).for_each(|s, &r, &k| *s = r + 0.5 * h * k);
    liouvillian_into(energies, rates, &w.stage, &mut w.k);
    Zip::from(&mut w.acc).and(&w.k).for_each(|a, &k| *a += 2.0 * k);
    // k4
    Zip::from(&mut w.stage).and(&*rho).and(&w.k).for_each(|s, &r, &k| *s = r + h * k);
    liouvillian_into(energies, rates, &w.stage, &mut w.k);
    Zip::from(&mut w.acc).and(&w.k).for_each(|a, &k| *a += k);
    Zip::from(rho).and(&w.acc).for_each(|r, &a| *r += h / 6.0 * a);
}
