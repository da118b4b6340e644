//! Simulation and characterization of the dissipative dynamics of coupled
//! superconducting qubits subject to charge-parity frequency splitting.
//!
//! The physical model is a Lindblad master equation whose Hamiltonian is
//! diagonal in the computational basis: per-qubit detunings that take one of
//! two values depending on a fluctuating charge parity, plus always-on ZZ
//! crosstalk between neighboring qubits. The parity fluctuation is captured by
//! attaching a fictitious two-level "parity site" to every qubit, prepared in
//! a diagonal mixture and traced out at readout.
//!
//! Two solvers share this model:
//!
//! * [`dense`]: an exact brute-force integrator for small registers that
//!   enumerates (or samples) parity configurations and integrates the master
//!   equation with fixed-step RK4. It serves as the oracle.
//! * [`mpdo`]: a matrix-product density-operator engine that keeps the parity
//!   sites explicit and scales to the 12-qubit ring, using a second-order
//!   Trotter splitting with exact one-site dissipative propagators and exact
//!   diagonal two-site phase gates.
//!
//! Around the solvers: [`device`] holds parameters and unit conversions,
//! [`statecraft`] builds initial states and staggered echo schedules,
//! [`observables`] evaluates Pauli strings, stabilizer sets and graph-state
//! fidelity, and [`characterization`] generates synthetic shot-sampled data
//! sets and fits the closed-form decay models to them.

pub mod characterization;
pub mod dense;
pub mod device;
pub mod mpdo;
pub mod observables;
pub mod pauli;
pub mod statecraft;
pub mod trajectory;

pub use device::{DeviceModel, QubitParams, Rates};
pub use pauli::{PauliOp, PauliString};
pub use trajectory::Trajectory;

/// Shorthand used throughout for double-precision complex numbers.
pub type C64 = num_complex::Complex64;
