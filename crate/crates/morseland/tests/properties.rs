//! Property tests over generated planar landscapes. Landscape generation
//! runs a census, so case counts are kept small for the expensive ones.

mod common;

use common::{census, random_morse_landscapes, random_polynomial, v2};
use morseland::connectome::{build_dag, diagram_isomorphic};
use morseland::critical::{find_critical_points, poincare_hopf_check};
use morseland::flow::{integrate, ENERGY_SLACK};
use morseland::hopfield::ModernHopfield;
use morseland::landscape::{fd_gradient, fd_hessian};
use morseland::stochastic::gibbs_measure;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn point_in_disc(r: f64) -> impl Strategy<Value = DVector<f64>> {
    (0.0..r, 0.0..std::f64::consts::TAU).prop_map(|(rho, th)| v2(rho * th.cos(), rho * th.sin()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_derivatives_match_differences(seed in any::<u64>(), x in point_in_disc(2.7)) {
        let land = random_polynomial(&mut ChaCha8Rng::seed_from_u64(seed));
        let g = land.gradient(&x);
        let fd = fd_gradient(|y| land.value(y), &x);
        prop_assert!((&g - fd).norm() < 1e-6 * (1.0 + g.norm()));
        let h = land.hessian(&x).unwrap();
        let fdh = fd_hessian(|y| land.gradient(y), &x);
        prop_assert!((&h - fdh).norm() < 1e-5 * (1.0 + h.norm()));
    }

    #[test]
    fn energy_never_rises_along_the_flow(seed in any::<u64>(), x in point_in_disc(2.5)) {
        let land = random_polynomial(&mut ChaCha8Rng::seed_from_u64(seed));
        if let Ok(rec) = integrate(&land, &x, 1e-2, 5.0) {
            for w in rec.energies.windows(2) {
                prop_assert!(w[1] <= w[0] + ENERGY_SLACK);
            }
        }
    }

    #[test]
    fn modern_update_is_a_convex_combination(
        xs in prop::collection::vec(-2.0f64..2.0, 6),
        beta in 0.01f64..50.0,
        v in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let m = ModernHopfield::new(DMatrix::from_column_slice(2, 3, &xs), beta).unwrap();
        let v = DVector::from_vec(v);
        let p = m.probabilities(&v);
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&q| q >= 0.0));
        prop_assert!((m.update(&v) - m.patterns() * &p).norm() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn census_invariants_hold(seed in any::<u64>()) {
        let (land, robust) = random_morse_landscapes(1, seed).remove(0);
        let c = census(&land);
        prop_assert!(poincare_hopf_check(&c, 2).pass, "index sum off for {:?}", c);
        prop_assert_eq!(c.len(), robust.len());
        let fine = find_critical_points(&land, 48).unwrap();
        prop_assert_eq!(fine.len(), c.len());
        for p in &c {
            prop_assert!(fine.iter().any(|q| (&p.location - &q.location).norm() < 1e-6 && p.kind == q.kind));
        }
    }

    #[test]
    fn dags_satisfy_axioms_and_survive_small_tilts(seed in any::<u64>(), angle in 0.0..std::f64::consts::TAU) {
        let (land, _) = random_morse_landscapes(1, seed).remove(0);
        let dag = build_dag(&land, &census(&land)).unwrap();
        prop_assert!(dag.axioms.all());
        let tilted = land.clone().with_tilt(&[1e-4 * angle.cos(), 1e-4 * angle.sin()]);
        let other = build_dag(&tilted, &census(&tilted)).unwrap();
        prop_assert!(diagram_isomorphic(&dag, &other));
    }

    #[test]
    fn gibbs_mass_is_a_probability(seed in any::<u64>(), eps in 0.3f64..2.0) {
        let land = random_polynomial(&mut ChaCha8Rng::seed_from_u64(seed));
        let g = gibbs_measure(&land, eps, 60).unwrap();
        let total: f64 = g.mass.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(g.mass.iter().all(|&m| m >= 0.0));
    }
}
