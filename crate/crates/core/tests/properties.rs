//! Property-based invariants: density-matrix structure under gates and
//! dissipative flow, conservation laws, pulse-schedule refocusing, readout
//! mitigation round trips, and scheduler/measurement coverage guarantees.

use ndarray::Array2;
use paritydyn::characterization::{apply_confusion, mitigate, ConfusionMatrix};
use paritydyn::dense::{evolve_dense, liouvillian_apply, DenseState, ParityConfig, ParityMode};
use paritydyn::device::{CouplingParams, DeviceModel, QubitParams, TopologyKind};
use paritydyn::mpdo::{evolve_mpdo, MpdoState, TrotterPlan};
use paritydyn::observables::{measurement_settings, stabilizer_set, Observable};
use paritydyn::statecraft::{two_coloring, BlochVector, PulseEvent, PulseSchedule, StatePrep};
use paritydyn::{PauliOp, PauliString, C64};
use proptest::prelude::*;

fn qubit(t1: f64, t2: f64, nu: f64, delta: f64, even: f64, heating: f64) -> QubitParams {
    QubitParams { t1, t2, nu, delta, even_fraction: even, heating_fraction: heating }
}

fn single_qubit_device(t1: f64, t2: f64, nu: f64, delta: f64, even: f64) -> DeviceModel {
    let dev = DeviceModel {
        qubits: vec![qubit(t1, t2, nu, delta, even, 0.0)],
        edges: vec![],
        topology: TopologyKind::General,
        labels: None,
    };
    dev.validate().expect("valid by construction");
    dev
}

fn coupled_pair(params: [(f64, f64, f64, f64, f64); 2], zeta: f64) -> DeviceModel {
    let dev = DeviceModel {
        qubits: params
            .iter()
            .map(|&(t1, t2, nu, delta, even)| qubit(t1, t2, nu, delta, even, 0.0))
            .collect(),
        edges: vec![CouplingParams { edge: (0, 1), zeta }],
        topology: TopologyKind::Chain,
        labels: None,
    };
    dev.validate().expect("valid by construction");
    dev
}

fn ring_device(n: usize) -> DeviceModel {
    DeviceModel {
        qubits: vec![qubit(100.0, 90.0, 3000.0, -5000.0, 0.5, 0.0); n],
        edges: (0..n)
            .map(|i| CouplingParams { edge: (i, (i + 1) % n), zeta: -30e3 })
            .map(|c| CouplingParams { edge: (c.edge.0.min(c.edge.1), c.edge.0.max(c.edge.1)), zeta: c.zeta })
            .collect(),
        topology: TopologyKind::Ring,
        labels: None,
    }
}

fn bloch_from_angles(theta: f64, phi: f64) -> BlochVector {
    BlochVector::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
        .expect("unit vector")
}

/// Fourth-order step of d(rho)/dt under the device Liouvillian.
fn rk4_step(dev: &DeviceModel, parity: &ParityConfig, rho: &Array2<C64>, dt: f64) -> Array2<C64> {
    let s = |x: f64| C64::new(x, 0.0);
    let k1 = liouvillian_apply(dev, parity, rho);
    let k2 = liouvillian_apply(dev, parity, &(rho + &(&k1 * s(0.5 * dt))));
    let k3 = liouvillian_apply(dev, parity, &(rho + &(&k2 * s(0.5 * dt))));
    let k4 = liouvillian_apply(dev, parity, &(rho + &(&k3 * s(dt))));
    rho + &((&k1 + &(&k2 * s(2.0)) + &(&k3 * s(2.0)) + &k4) * s(dt / 6.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gates_preserve_density_matrix_structure(
        n in 2usize..=4,
        angles in proptest::collection::vec((0.0f64..std::f64::consts::PI, 0.0f64..std::f64::consts::TAU), 4),
        gates in proptest::collection::vec((0usize..4, 0usize..4), 1..8),
    ) {
        let dev = DeviceModel {
            qubits: vec![qubit(100.0, 90.0, 3000.0, -5000.0, 0.5, 0.0); n],
            edges: vec![],
            topology: TopologyKind::General,
            labels: None,
        };
        let bloch: Vec<BlochVector> =
            angles.iter().take(n).map(|&(t, p)| bloch_from_angles(t, p)).collect();
        let mut state = DenseState::from_prep(&dev, &StatePrep::Product(bloch)).unwrap();
        for &(a, b) in &gates {
            let (a, b) = (a % n, b % n);
            if a == b {
                state.apply_x(a);
            } else {
                state.apply_cz(a, b);
            }
        }
        prop_assert!((state.trace() - C64::new(1.0, 0.0)).norm() < 1e-12);
        prop_assert!(state.hermiticity_error() < 1e-12);
        prop_assert!(state.min_eigenvalue() > -1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dissipative_flow_keeps_the_state_physical(
        t1a in 2.0f64..200.0,
        t1b in 2.0f64..200.0,
        r2a in 0.1f64..2.0,
        r2b in 0.1f64..2.0,
        zeta in -80e3f64..80e3,
        mask in 0usize..4,
        theta in 0.0f64..std::f64::consts::PI,
    ) {
        let dev = coupled_pair(
            [
                (t1a, r2a * t1a, 3000.0, -5000.0, 0.5),
                (t1b, r2b * t1b, 1000.0, 7000.0, 0.5),
            ],
            zeta,
        );
        let parity = ParityConfig::from_mask(2, mask);
        let prep = StatePrep::Product(vec![
            bloch_from_angles(theta, 0.3),
            BlochVector::plus(),
        ]);
        let mut rho = DenseState::from_prep(&dev, &prep).unwrap().rho;
        for _ in 0..25 {
            rho = rk4_step(&dev, &parity, &rho, 0.02);
        }
        let state = DenseState { rho, n: 2 };
        prop_assert!((state.trace() - C64::new(1.0, 0.0)).norm() < 1e-9);
        prop_assert!(state.hermiticity_error() < 1e-9);
        prop_assert!(state.min_eigenvalue() > -1e-9);
    }

    #[test]
    fn relaxation_follows_the_population_law_dense(
        t1 in 5.0f64..200.0,
        r2 in 0.1f64..2.0,
        nu in 0.0f64..20e3,
        delta in -20e3f64..20e3,
        even in 0.0f64..1.0,
        theta in 0.0f64..std::f64::consts::PI,
    ) {
        let dev = single_qubit_device(t1, r2 * t1, nu, delta, even);
        let z0 = theta.cos();
        let prep = StatePrep::Product(vec![bloch_from_angles(theta, 1.1)]);
        let times = [0.0, 1.0, 2.0, 4.0];
        let obs = [Observable::Pauli(PauliString::single(1, 0, PauliOp::Z))];
        let traj = evolve_dense(
            &dev,
            &prep,
            &times,
            &PulseSchedule::empty(),
            ParityMode::Enumerate,
            &obs,
            0.05,
        )
        .unwrap();
        let z = traj.column("Z").unwrap();
        for (&t, &zt) in times.iter().zip(&z) {
            let law = 1.0 - (1.0 - z0) * (-t / t1).exp();
            prop_assert!((zt - law).abs() < 1e-8, "t = {t}: {zt} vs {law}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn relaxation_follows_the_population_law_tensor(
        t1 in 5.0f64..200.0,
        r2 in 0.1f64..2.0,
        theta in 0.0f64..std::f64::consts::PI,
    ) {
        let dev = single_qubit_device(t1, r2 * t1, 4000.0, -3000.0, 0.5);
        let z0 = theta.cos();
        let prep = StatePrep::Product(vec![bloch_from_angles(theta, 0.4)]);
        let times = [0.0, 1.5, 3.0];
        let obs = [Observable::Pauli(PauliString::single(1, 0, PauliOp::Z))];
        let traj = evolve_mpdo(
            &dev,
            &prep,
            &times,
            &PulseSchedule::empty(),
            &TrotterPlan::new(0.05),
            8,
            1e-12,
            &obs,
        )
        .unwrap();
        let z = traj.column("Z").unwrap();
        for (&t, &zt) in times.iter().zip(&z) {
            let law = 1.0 - (1.0 - z0) * (-t / t1).exp();
            prop_assert!((zt - law).abs() < 1e-8, "t = {t}: {zt} vs {law}");
        }
    }

    #[test]
    fn parity_populations_are_constants_of_motion(
        even0 in 0.0f64..1.0,
        even1 in 0.0f64..1.0,
        theta in 0.0f64..std::f64::consts::PI,
    ) {
        let dev = coupled_pair(
            [
                (80.0, 60.0, 3000.0, -5000.0, even0),
                (150.0, 110.0, 1000.0, 7000.0, even1),
            ],
            -40e3,
        );
        let prep = StatePrep::Product(vec![bloch_from_angles(theta, 0.9), BlochVector::plus()]);
        let mut state = MpdoState::from_prep(&dev, &prep, 16, 1e-12).unwrap();
        state.advance(&dev, 2.0, 0.05).unwrap();
        prop_assert!((state.trace() - 1.0).abs() < 1e-9);
        for (q, want) in [(0, even0), (1, even1)] {
            let (even, odd) = state.parity_marginal(q);
            prop_assert!((even - want).abs() < 1e-9, "qubit {q}: even {even} vs {want}");
            prop_assert!((even + odd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn echo_refocuses_static_detunings(
        t2 in 10.0f64..300.0,
        nu in 0.0f64..30e3,
        delta in -30e3f64..30e3,
        even in 0.0f64..1.0,
        half in 1.0f64..6.0,
    ) {
        let span = 2.0 * half;
        let dev = single_qubit_device(f64::INFINITY, t2, nu, delta, even);
        let schedule = PulseSchedule {
            events: vec![
                PulseEvent { time: half, qubit: 0 },
                PulseEvent { time: span, qubit: 0 },
            ],
            total_time: span,
        };
        let obs = [
            Observable::Pauli(PauliString::single(1, 0, PauliOp::X)),
            Observable::Pauli(PauliString::single(1, 0, PauliOp::Y)),
        ];
        let traj = evolve_dense(
            &dev,
            &StatePrep::Product(vec![BlochVector::plus()]),
            &[0.0, span],
            &schedule,
            ParityMode::Enumerate,
            &obs,
            0.02,
        )
        .unwrap();
        let x = traj.column("X").unwrap()[1];
        let y = traj.column("Y").unwrap()[1];
        let want = (-span / t2).exp();
        prop_assert!((x - want).abs() < 1e-7, "echo amplitude {x} vs {want}");
        prop_assert!(y.abs() < 1e-7, "echo quadrature {y}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn readout_mitigation_round_trips(
        p00 in 0.55f64..1.0,
        p11 in 0.55f64..1.0,
        q00 in 0.55f64..1.0,
        q11 in 0.55f64..1.0,
        value in -1.0f64..1.0,
        weight in 1usize..=3,
    ) {
        let cms = vec![
            ConfusionMatrix::new(p00, p11).unwrap(),
            ConfusionMatrix::new(q00, q11).unwrap(),
            ConfusionMatrix::ideal(),
        ];
        let support: Vec<usize> = (0..weight).collect();
        let raw = apply_confusion(value, &support, &cms);
        let back = mitigate(raw, &support, &cms).unwrap();
        prop_assert!((back - value).abs() < 1e-9, "{value} -> {raw} -> {back}");
        if weight == 1 {
            // a degraded readout always shrinks the observed magnitude
            prop_assert!(raw.abs() <= value.abs() + (p00 - p11).abs() + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn two_coloring_is_proper_where_it_exists(
        half in 2usize..=6,
        chain_len in 2usize..=12,
        pick in 0usize..3,
    ) {
        let dev = match pick {
            0 => ring_device(2 * half),
            1 => {
                let n = chain_len;
                DeviceModel {
                    qubits: vec![qubit(100.0, 90.0, 3000.0, -5000.0, 0.5, 0.0); n],
                    edges: (0..n - 1)
                        .map(|i| CouplingParams { edge: (i, i + 1), zeta: -30e3 })
                        .collect(),
                    topology: TopologyKind::Chain,
                    labels: None,
                }
            }
            _ => {
                // star graph: always bipartite
                let n = chain_len.max(2);
                DeviceModel {
                    qubits: vec![qubit(100.0, 90.0, 3000.0, -5000.0, 0.5, 0.0); n],
                    edges: (1..n).map(|i| CouplingParams { edge: (0, i), zeta: -30e3 }).collect(),
                    topology: TopologyKind::General,
                    labels: None,
                }
            }
        };
        let coloring = two_coloring(&dev).unwrap();
        for c in &dev.edges {
            prop_assert_ne!(
                coloring.assignment[c.edge.0],
                coloring.assignment[c.edge.1],
                "edge {:?} monochromatic",
                c.edge
            );
        }

        let odd = ring_device(2 * half + 1);
        prop_assert!(two_coloring(&odd).is_err(), "odd ring must not two-color");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn alternating_settings_cover_even_rings(half in 2usize..=7) {
        let dev = ring_device(2 * half);
        let settings = measurement_settings(&dev).unwrap();
        for stab in stabilizer_set(&dev) {
            let hits = settings.iter().filter(|s| stab.covered_by(s)).count();
            prop_assert!(hits >= 1, "stabilizer {stab} covered by no setting");
        }

        prop_assert!(measurement_settings(&ring_device(2 * half + 1)).is_err());
        let chain = DeviceModel {
            qubits: vec![qubit(100.0, 90.0, 3000.0, -5000.0, 0.5, 0.0); 4],
            edges: (0..3).map(|i| CouplingParams { edge: (i, i + 1), zeta: -30e3 }).collect(),
            topology: TopologyKind::Chain,
            labels: None,
        };
        prop_assert!(measurement_settings(&chain).is_err());
    }
}
