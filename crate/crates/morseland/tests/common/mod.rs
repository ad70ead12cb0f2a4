//! Shared fixtures for integration tests.

#![allow(dead_code)]

use morseland::bifurcation::robust_census;
use morseland::critical::{find_critical_points, CensusOptions, CriticalPoint};
use morseland::flow::boundary_transversality;
use morseland::landscape::{make_builtin, polynomial_landscape, Polynomial, PotentialForm};
use morseland::Landscape;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smallest |Hessian eigenvalue| a generated landscape may have.
pub const MORSE_MARGIN: f64 = 1e-2;

pub fn v2(a: f64, b: f64) -> DVector<f64> {
    DVector::from_vec(vec![a, b])
}

/// Confining quartic plus random terms of degree <= 3, radius 3.
pub fn random_polynomial(rng: &mut ChaCha8Rng) -> Landscape {
    let mut terms: Vec<(Vec<u32>, f64)> = vec![(vec![4, 0], 0.25), (vec![0, 4], 0.25), (vec![2, 2], rng.random_range(0.0..0.3))];
    for i in 0..=3u32 {
        for j in 0..=(3 - i) {
            if i + j == 0 {
                continue;
            }
            terms.push((vec![i, j], rng.random_range(-1.0..1.0)));
        }
    }
    let refs: Vec<(&[u32], f64)> = terms.iter().map(|(e, c)| (e.as_slice(), *c)).collect();
    polynomial_landscape(Polynomial::from_terms(2, &refs).expect("valid terms"), 3.0).expect("valid landscape")
}

/// Well-conditioned generated landscapes: Morse with margin, inward on the
/// boundary, and with every critical point well inside the disc.
pub fn random_morse_landscapes(count: usize, seed: u64) -> Vec<(Landscape, Vec<CriticalPoint>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let land = random_polynomial(&mut rng);
        if !boundary_transversality(&land, 256).is_ok_and(|r| r.pass) {
            continue;
        }
        let Ok(census) = robust_census(&land, &CensusOptions::default()) else {
            continue;
        };
        let ok = census
            .iter()
            .all(|p| p.min_abs_eigenvalue() > MORSE_MARGIN && p.location.norm() < 0.9 * land.radius());
        if ok && !census.is_empty() {
            out.push((land, census));
        }
    }
    out
}

/// Builtin planar landscapes, at fixed Morse parameter values for families.
pub fn builtins() -> Vec<(&'static str, Landscape)> {
    vec![
        ("dual-well", make_builtin(PotentialForm::DualWell, &[]).unwrap()),
        ("dual-cusp", make_builtin(PotentialForm::DualCusp, &[]).unwrap()),
        ("saddle-node-family(0.0)", make_builtin(PotentialForm::SaddleNodeFamily, &[0.0]).unwrap()),
        ("flip-family(-0.5)", make_builtin(PotentialForm::FlipFamily, &[-0.5]).unwrap()),
        ("flip-family(0.5)", make_builtin(PotentialForm::FlipFamily, &[0.5]).unwrap()),
    ]
}

pub fn census(land: &Landscape) -> Vec<CriticalPoint> {
    find_critical_points(land, 24).expect("census")
}
