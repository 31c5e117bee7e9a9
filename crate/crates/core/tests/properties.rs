mod common;

use common::{max_abs, random_state, random_theta, rng};
use proptest::prelude::*;
use qst_core::linalg::hs_inner;
use qst_core::mapping::{
    map_abs_p, map_chol_hermitian, map_forward, matrix_to_theta, simplex_project, theta_to_matrix, MappingStrategy,
    ParamVector, TransitionKind,
};
use qst_core::measurement::{adjoint_accumulate, born_probabilities_dense, born_probabilities_fast, ProductPovm};
use qst_core::states::{
    classical_fidelity, depolarize, fidelity_from_spectral, purity, quantum_fidelity, random_expdecay_state, PureState,
};
use qst_core::C64;
use rand::Rng;
use rand_distr::StandardNormal;

fn strategies() -> Vec<MappingStrategy> {
    vec![
        MappingStrategy::CholLower,
        MappingStrategy::CholHermitian,
        MappingStrategy::abs_p(0.5).unwrap(),
        MappingStrategy::abs_p(1.5).unwrap(),
        MappingStrategy::abs_p(2.0).unwrap(),
        MappingStrategy::frobenius(),
        MappingStrategy::SimplexProj,
    ]
}

/// Exhaustive KKT search: for every support set the optimum is a shifted copy of `v`.
fn simplex_oracle(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let shift = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let mut x = vec![0.0; n];
        let mut feasible = true;
        for &i in &support {
            x[i] = v[i] - shift;
            if x[i] < -1e-15 {
                feasible = false;
            }
        }
        if !feasible {
            continue;
        }
        let dist: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    }
    best.unwrap().1
}

fn random_pure(qubits: usize, seed: u64) -> PureState {
    let mut r = rng(seed);
    let d = 1usize << qubits;
    let amps: Vec<C64> = (0..d).map(|_| C64::new(r.sample(StandardNormal), r.sample(StandardNormal))).collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    PureState::new(amps.into_iter().map(|a| a / norm).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn fidelity_is_symmetric(seed in any::<u64>(), qubits in 1usize..=3) {
        let mut r = rng(seed);
        let a = random_state(qubits, &mut r);
        let b = random_state(qubits, &mut r);
        let ab = quantum_fidelity(&a, &b).unwrap();
        let ba = quantum_fidelity(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-8, "{ab} vs {ba}");
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn spectral_fidelity_matches_direct(seed in any::<u64>(), qubits in 1usize..=3) {
        let mut r = rng(seed);
        let est = random_state(qubits, &mut r);
        let target = random_state(qubits, &mut r);
        let direct = quantum_fidelity(&est, &target).unwrap();
        let spectral = fidelity_from_spectral(&est.spectral(), &target).unwrap();
        prop_assert!((direct - spectral).abs() <= 1e-8, "{direct} vs {spectral}");
    }

    #[test]
    fn classical_fidelity_bounds_quantum(seed in any::<u64>(), qubits in 1usize..=3) {
        let mut r = rng(seed);
        let est = random_state(qubits, &mut r);
        let target = random_state(qubits, &mut r);
        let povm = ProductPovm::tetrahedral(qubits).unwrap();
        let fc = classical_fidelity(
            &born_probabilities_fast(&povm, &est).unwrap(),
            &born_probabilities_fast(&povm, &target).unwrap(),
        ).unwrap();
        let fq = quantum_fidelity(&est, &target).unwrap();
        prop_assert!(fc >= fq - 1e-8, "fc {fc} < fq {fq}");
    }

    #[test]
    fn depolarized_purity_formula(seed in any::<u64>(), qubits in 1usize..=4, lambda in 0.0f64..=1.0) {
        let psi = random_pure(qubits, seed);
        let rho = depolarize(&psi, lambda).unwrap();
        rho.check_invariants().unwrap();
        let d = (1usize << qubits) as f64;
        let expected = (1.0 - 1.0 / d) * (1.0 - lambda).powi(2) + 1.0 / d;
        prop_assert!((purity(&rho) - expected).abs() <= 1e-10);
    }

    #[test]
    fn expdecay_states_are_valid(seed in any::<u64>(), qubits in 1usize..=4, u in 0.0f64..=1.0) {
        let d = (1usize << qubits) as f64;
        let target = 1.0 / d + u * (1.0 - 1.0 / d);
        let rho = random_expdecay_state(qubits, target, seed).unwrap();
        rho.check_invariants().unwrap();
        prop_assert!((purity(&rho) - target).abs() <= 1e-6);
    }

    #[test]
    fn fast_contraction_matches_dense(seed in any::<u64>(), qubits in 1usize..=4) {
        let rho = random_state(qubits, &mut rng(seed));
        let povm = ProductPovm::tetrahedral(qubits).unwrap();
        let fast = born_probabilities_fast(&povm, &rho).unwrap();
        let dense = born_probabilities_dense(&povm, &rho).unwrap();
        for (a, b) in fast.values().iter().zip(dense.values()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!(fast.values().iter().all(|&p| p >= -1e-12));
        prop_assert!((fast.values().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn adjoint_is_consistent(seed in any::<u64>(), qubits in 1usize..=4) {
        let mut r = rng(seed);
        let rho = random_state(qubits, &mut r);
        let povm = ProductPovm::tetrahedral(qubits).unwrap();
        let w: Vec<f64> = (0..povm.outcome_count()).map(|_| r.sample(StandardNormal)).collect();
        let lhs = hs_inner(&adjoint_accumulate(&povm, &w).unwrap(), rho.matrix());
        let probs = born_probabilities_fast(&povm, &rho).unwrap();
        let rhs: f64 = w.iter().zip(probs.values()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn adjoint_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let povm = ProductPovm::tetrahedral(2).unwrap();
        let w1: Vec<f64> = (0..16).map(|_| r.sample(StandardNormal)).collect();
        let w2: Vec<f64> = (0..16).map(|_| r.sample(StandardNormal)).collect();
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
        let lhs = adjoint_accumulate(&povm, &mix).unwrap();
        let rhs = adjoint_accumulate(&povm, &w1).unwrap() * C64::new(a, 0.0)
            + adjoint_accumulate(&povm, &w2).unwrap() * C64::new(b, 0.0);
        prop_assert!(max_abs(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn theta_packing_round_trips(seed in any::<u64>(), qubits in 1usize..=3, lower in any::<bool>()) {
        let theta = random_theta(qubits, &mut rng(seed));
        let kind = if lower { TransitionKind::LowerTriangular } else { TransitionKind::Hermitian };
        let t = theta_to_matrix(&theta, kind).unwrap();
        prop_assert_eq!(matrix_to_theta(&t), theta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_strategy_yields_a_density_matrix(seed in any::<u64>(), qubits in 1usize..=3) {
        let theta = random_theta(qubits, &mut rng(seed));
        for s in strategies() {
            let mapped = map_forward(s, &theta).unwrap();
            prop_assert!(mapped.rho.check_invariants().is_ok(), "{s}: {:?}", mapped.rho.check_invariants());
        }
    }

    #[test]
    fn chol_h_equals_abs_p_two(seed in any::<u64>(), qubits in 1usize..=3) {
        let theta = random_theta(qubits, &mut rng(seed));
        let a = map_chol_hermitian(&theta).unwrap();
        let b = map_abs_p(&theta, 2.0).unwrap();
        prop_assert!(max_abs(a.matrix(), b.matrix()) <= 1e-10);
    }

    #[test]
    fn trace_normalized_maps_are_scale_invariant(
        seed in any::<u64>(),
        qubits in 1usize..=3,
        c in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
        order in 0.5f64..3.0,
    ) {
        let theta = random_theta(qubits, &mut rng(seed));
        let scaled = ParamVector(theta.values().iter().map(|x| c * x).collect());
        let a = map_chol_hermitian(&theta).unwrap();
        let b = map_chol_hermitian(&scaled).unwrap();
        prop_assert!(max_abs(a.matrix(), b.matrix()) <= 1e-10);
        let a = map_abs_p(&theta, order).unwrap();
        let b = map_abs_p(&scaled, order).unwrap();
        prop_assert!(max_abs(a.matrix(), b.matrix()) <= 1e-10);
    }

    #[test]
    fn simplex_projection_is_the_qp_optimum(v in prop::collection::vec(-2.0f64..2.0, 8)) {
        let got = simplex_project(&v);
        let want = simplex_oracle(&v);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-8, "{got:?} vs {want:?}");
        }
    }
}

