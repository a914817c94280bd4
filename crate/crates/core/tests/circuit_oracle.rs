//! Circuit kernels checked against a dense Kronecker-product simulator.

use nalgebra::DMatrix;
use num_complex::Complex64;
use qrc_core::quantum::{
    gates_from_angles, run_gates_noisy, run_gates_pure, Backend, Channel, CircuitLayout, CircuitModel, DensityMatrix,
    Encoding, Gate, TrigExpansion,
};
use qrc_core::tangent::parameter_shift_dprobs_du;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type CMat = DMatrix<Complex64>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Embeds a one-qubit operator; qubit 0 is the leftmost Kronecker factor.
fn embed(op: &CMat, qubit: usize, n: usize) -> CMat {
    let id = CMat::identity(2, 2);
    (0..n).fold(CMat::identity(1, 1), |acc, q| kron(&acc, if q == qubit { op } else { &id }))
}

fn ry(angle: f64) -> CMat {
    let (s, co) = (angle / 2.0).sin_cos();
    CMat::from_row_slice(2, 2, &[c(co), c(-s), c(s), c(co)])
}

fn cnot(control: usize, target: usize, n: usize) -> CMat {
    let p0 = CMat::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(0.0)]);
    let p1 = CMat::from_row_slice(2, 2, &[c(0.0), c(0.0), c(0.0), c(1.0)]);
    let x = CMat::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
    let id = CMat::identity(2, 2);
    let branch = |first: &CMat, second: &CMat| {
        (0..n).fold(CMat::identity(1, 1), |acc, q| {
            kron(&acc, if q == control { first } else if q == target { second } else { &id })
        })
    };
    branch(&p0, &id) + branch(&p1, &x)
}

fn gate_matrix(g: &Gate, n: usize) -> CMat {
    match *g {
        Gate::Ry { qubit, angle } => embed(&ry(angle), qubit, n),
        Gate::Cnot { control, target } => cnot(control, target, n),
    }
}

fn kraus_2x2(channel: &Channel) -> Vec<CMat> {
    channel.kraus().unwrap().iter().map(|k| CMat::from_fn(2, 2, |i, j| k.0[i][j])).collect()
}

fn dense_noisy(gates: &[Gate], n: usize, channel: &Channel) -> CMat {
    let dim = 1 << n;
    let mut rho = CMat::zeros(dim, dim);
    rho[(0, 0)] = c(1.0);
    let ks = kraus_2x2(channel);
    for g in gates {
        let u = gate_matrix(g, n);
        rho = &u * &rho * u.adjoint();
        let wires: Vec<usize> = match *g {
            Gate::Ry { qubit, .. } => vec![qubit],
            Gate::Cnot { control, target } => vec![control, target],
        };
        for w in wires {
            let mut next = CMat::zeros(dim, dim);
            for k in &ks {
                let big = embed(k, w, n);
                next += &big * &rho * big.adjoint();
            }
            rho = next;
        }
    }
    rho
}

fn random_layout(n: usize, d: usize, seed: u64) -> CircuitLayout {
    CircuitLayout::random(n, d, seed).unwrap()
}

fn random_angles(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-3.0..3.0)).collect()
}

#[test]
fn statevector_matches_dense_unitaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=5 {
        for trial in 0..4 {
            let layout = random_layout(n, 2, trial);
            let xi = random_angles(layout.n_slots(), &mut rng);
            let p = random_angles(n, &mut rng);
            let p_opt = (trial % 2 == 0).then_some(p.as_slice());
            let gates = gates_from_angles(p_opt, &xi, &layout).unwrap();
            let state = run_gates_pure(&gates, n).unwrap();

            let mut psi = DMatrix::<Complex64>::zeros(1 << n, 1);
            psi[(0, 0)] = c(1.0);
            for g in &gates {
                psi = gate_matrix(g, n) * psi;
            }
            for (a, b) in state.amplitudes.iter().zip(psi.iter()) {
                assert!((a - b).norm() < 1e-13, "n={n}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn noisy_circuit_matches_dense_kraus() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for channel in [Channel::Depolarizing(0.07), Channel::AmplitudeDamping(0.2)] {
        for n in 2..=4 {
            let layout = random_layout(n, 3, n as u64);
            let xi = random_angles(layout.n_slots(), &mut rng);
            let gates = gates_from_angles(None, &xi, &layout).unwrap();
            let rho = run_gates_noisy(&gates, n, &channel).unwrap();
            let want = dense_noisy(&gates, n, &channel);
            let dim = 1 << n;
            for i in 0..dim {
                for j in 0..dim {
                    assert!((rho.get(i, j) - want[(i, j)]).norm() < 1e-13);
                }
            }
        }
    }
}

#[test]
fn unitary_evolution_preserves_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let layout = random_layout(6, 3, 2);
    for _ in 0..2000 {
        let xi = random_angles(layout.n_slots(), &mut rng);
        let gates = gates_from_angles(None, &xi, &layout).unwrap();
        let s = run_gates_pure(&gates, 6).unwrap();
        assert!((s.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn kraus_sets_are_complete() {
    for p in [0.0, 1e-3, 0.05, 0.3, 0.77, 1.0] {
        for ch in [Channel::Depolarizing(p), Channel::AmplitudeDamping(p)] {
            let ks = kraus_2x2(&ch);
            let sum = ks.iter().fold(CMat::zeros(2, 2), |acc, k| acc + k.adjoint() * k);
            assert!((sum - CMat::identity(2, 2)).iter().all(|v| v.norm() < 1e-14), "{ch:?}");
        }
    }
}

#[test]
fn full_depolarizing_gives_uniform_outcomes() {
    let layout = random_layout(4, 3, 5);
    let model = CircuitModel { layout: layout.clone(), backend: Backend::Density(Channel::Depolarizing(1.0)) };
    let probs = model.probabilities(None, &vec![0.4; layout.n_slots()]).unwrap();
    assert!(probs.iter().all(|p| (p - 1.0 / 16.0).abs() < 1e-10));
}

#[test]
fn noisy_states_stay_physical() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let layout = random_layout(5, 3, 7);
    for p in [0.01, 0.1, 0.5] {
        for ch in [Channel::Depolarizing(p), Channel::AmplitudeDamping(p)] {
            let xi = random_angles(layout.n_slots(), &mut rng);
            let gates = gates_from_angles(None, &xi, &layout).unwrap();
            let rho = run_gates_noisy(&gates, 5, &ch).unwrap();
            assert!((rho.trace() - c(1.0)).norm() < 1e-10);
            assert!(rho.hermiticity_error() < 1e-12);
            assert!(rho.probabilities().iter().all(|&v| v > -1e-12));
        }
    }
}

#[test]
fn channels_contract_trace_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let random_state = |rng: &mut ChaCha8Rng| {
        let mut v: Vec<Complex64> =
            (0..8).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        DensityMatrix::from_pure(&v).unwrap()
    };
    for ch in [Channel::Depolarizing(0.2), Channel::AmplitudeDamping(0.3)] {
        for _ in 0..20 {
            let (mut a, mut b) = (random_state(&mut rng), random_state(&mut rng));
            let mut d = a.trace_distance(&b);
            for q in 0..3 {
                a.apply_channel(q, &ch).unwrap();
                b.apply_channel(q, &ch).unwrap();
                let next = a.trace_distance(&b);
                assert!(next <= d + 1e-12);
                d = next;
            }
        }
    }
}

fn input_axes(layout: &CircuitLayout) -> Vec<Vec<usize>> {
    (0..layout.input_dim).map(|j| layout.slots_of(j)).collect()
}

#[test]
fn expansion_agrees_with_density_values_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for (encoding, ch) in [
        (Encoding::Tiled, Channel::Depolarizing(0.05)),
        (Encoding::Single, Channel::AmplitudeDamping(0.1)),
    ] {
        let layout = random_layout(4, 3, 21).with_encoding(encoding);
        let density = CircuitModel { layout: layout.clone(), backend: Backend::Density(ch) };
        let exp = TrigExpansion::compile(layout.n_slots(), input_axes(&layout), |a| density.probabilities(None, a))
            .unwrap();
        let expanded = CircuitModel { layout: layout.clone(), backend: Backend::Expanded(exp) };
        for _ in 0..10 {
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-0.05..1.05)).collect();
            let xi = qrc_core::quantum::encode_angles(&u, &layout).unwrap();
            let want = density.probabilities(None, &xi).unwrap();
            let got = expanded.probabilities(None, &xi).unwrap();
            assert!(want.iter().zip(&got).all(|(a, b)| (a - b).abs() < 1e-12));

            // Analytic expansion gradient against parameter shift on the density route.
            let shift = parameter_shift_dprobs_du(&density, &u, None).unwrap();
            let analytic = parameter_shift_dprobs_du(&expanded, &u, None).unwrap();
            assert!((shift - analytic).abs().max() < 1e-11);
        }
    }
}
