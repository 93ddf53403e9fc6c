mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use speclab_core::operators::{
    build_conjugate, build_hamiltonian, commutator, conjugate_via_dilation, conjugated_hamiltonian,
    free_commutator_symbol, laplacian, similarity_conjugate, spectral_projector, weight_field, ConjugateSpec,
    OperatorRep, WeightSpec,
};
use speclab_core::potentials::{build_potential, PotentialSpec};
use speclab_core::spectral::{eigenpairs, Window};
use speclab_core::{inner, Grid, ScalarField, StateVector, C64};

fn packet(grid: &Grid, x0: f64, sigma: f64, k: f64) -> StateVector {
    StateVector::from_fn(grid, |x| {
        C64::from_polar((-(x - x0) * (x - x0) / (2.0 * sigma * sigma)).exp(), k * x)
    })
}

fn rel(a: &StateVector, b: &StateVector) -> f64 {
    a.sub(b).unwrap().norm() / (a.norm() + b.norm())
}

const PRESETS: [ConjugateSpec; 2] = [ConjugateSpec::Dilation, ConjugateSpec::BoundedStandard];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conjugate_identities_on_interior_states(x0 in -8.0f64..8.0, sigma in 1.0f64..3.0, k in -4.0f64..4.0) {
        let g = Grid::new(40.0, 1024).unwrap();
        let f = packet(&g, x0, sigma, k);
        prop_assert!(f.mass_fraction_inside(0.8 * 40.0) > 1.0 - 1e-10);
        let lap = laplacian(&g);
        for spec in PRESETS.iter() {
            let au = build_conjugate(spec, &g).unwrap();
            let lhs = commutator(&lap, &au, true).unwrap().apply(&f).unwrap();
            let rhs = free_commutator_symbol(spec, &g).unwrap().apply(&f).unwrap();
            prop_assert!(rel(&lhs, &rhs) < 1e-8, "{:?}: [Δ, iA_u] residual {}", spec, rel(&lhs, &rhs));
            let direct = au.apply(&f).unwrap();
            let via = conjugate_via_dilation(spec, &g).unwrap().apply(&f).unwrap();
            prop_assert!(rel(&direct, &via) < 1e-8, "{:?}: decomposition residual {}", spec, rel(&direct, &via));
        }
    }

    #[test]
    fn hermitian_parts_stay_hermitian(a in -6.0f64..6.0, b in -6.0f64..6.0, k1 in -3.0f64..3.0, k2 in -3.0f64..3.0) {
        let g = Grid::new(20.0, 512).unwrap();
        let v = build_potential(&PotentialSpec::ShortRange { amplitude: -2.0, rho: 1.0 }, &g).unwrap();
        let h = build_hamiltonian(&v, &g).unwrap();
        let f = packet(&g, a, 1.5, k1);
        let u = packet(&g, b, 2.0, k2);
        let au = build_conjugate(&ConjugateSpec::BoundedStandard, &g).unwrap();
        let c = commutator(&h, &au, true).unwrap();
        for op in [&h, &au, &c] {
            prop_assert!(op.is_hermitian());
            let norm = op.norm_estimate().unwrap();
            prop_assert!(op.hermiticity_defect(&f, &u, norm).unwrap() < 1e-12);
        }
    }

    #[test]
    fn similarity_matches_closed_form(alpha in 0.0f64..1.0, beta in 0.3f64..0.95, x0 in -4.0f64..4.0) {
        let g = Grid::new(20.0, 512).unwrap();
        let v = build_potential(&PotentialSpec::ShortRange { amplitude: -1.0, rho: 1.0 }, &g).unwrap();
        let h = build_hamiltonian(&v, &g).unwrap();
        let spec = WeightSpec::pure(alpha, beta);
        let f = packet(&g, x0, 1.0, 0.5);
        let a = conjugated_hamiltonian(&h, &spec, &g).unwrap().apply(&f).unwrap();
        let b = similarity_conjugate(&h, &spec, &g).unwrap().apply(&f).unwrap();
        prop_assert!(a.sub(&b).unwrap().norm() < 1e-7 * f.norm_l1().max(f.norm()));
    }
}

#[test]
fn hamiltonian_on_plane_wave() {
    let g = Grid::new(10.0, 128).unwrap();
    let h = build_hamiltonian(&ScalarField::zeros(&g), &g).unwrap();
    let xi = 7.0 * PI / 10.0;
    let f = StateVector::from_fn(&g, |x| C64::from_polar(1.0, xi * x));
    let hf = h.apply(&f).unwrap();
    assert!(hf.sub(&f.scaled(C64::new(xi * xi, 0.0))).unwrap().norm() < 1e-10 * f.norm());
}

#[test]
fn square_well_binds_below_zero() {
    let g = Grid::new(30.0, 2048).unwrap();
    let v = build_potential(&PotentialSpec::SquareWell { depth: 2.0, radius: 1.0 }, &g).unwrap();
    let h = build_hamiltonian(&v, &g).unwrap();
    let e0 = eigenpairs(&h, Window::Lowest { count: 1 }).unwrap()[0].eigenvalue;
    let oracle = common::square_well_ground(2.0, 1.0);
    assert!(e0 < 0.0 && oracle < 0.0);
    assert!((e0 - oracle).abs() < 1e-5, "E0 {e0} vs {oracle}");
}

#[test]
fn hamiltonian_hermitian_on_random_interior_states() {
    let g = Grid::new(20.0, 512).unwrap();
    let v = build_potential(&PotentialSpec::WignerVonNeumann { w: 1.0, k: 2.0 }, &g).unwrap();
    let h = build_hamiltonian(&v, &g).unwrap();
    let norm = h.norm_estimate().unwrap();
    let mut state = 12345u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..100 {
        let f = packet(&g, 8.0 * (next() - 0.5), 0.8 + next(), 4.0 * (next() - 0.5));
        let u = packet(&g, 8.0 * (next() - 0.5), 0.8 + next(), 4.0 * (next() - 0.5));
        assert!(h.hermiticity_defect(&f, &u, norm).unwrap() < 1e-12);
    }
}

#[test]
fn dilation_expectation_vanishes_on_centered_gaussian() {
    let g = Grid::new(20.0, 512).unwrap();
    let ad = build_conjugate(&ConjugateSpec::Dilation, &g).unwrap();
    let f = packet(&g, 0.0, 1.3, 0.0).scaled(C64::new(2.5, 0.0));
    assert!(inner(&f, &ad.apply(&f).unwrap()).unwrap().norm() < 1e-12 * f.norm().powi(2));
}

#[test]
fn commutator_examples() {
    let g = Grid::new(40.0, 2048).unwrap();
    let f = packet(&g, 1.0, 1.5, 0.7);
    let q = OperatorRep::position(&g);
    let p = OperatorRep::momentum(&g);
    let qp = commutator(&q, &p, false).unwrap().apply(&f).unwrap();
    assert!(rel(&qp, &f.scaled(C64::new(0.0, 1.0))) < 1e-8);
    let ad = build_conjugate(&ConjugateSpec::Dilation, &g).unwrap();
    let zero = commutator(&ad, &ad, true).unwrap().apply(&f).unwrap();
    assert!(zero.norm() < 1e-12 * ad.apply(&f).unwrap().norm());
    let lap = laplacian(&g);
    let lhs = commutator(&lap, &ad, true).unwrap().apply(&f).unwrap();
    let rhs = lap.apply(&f).unwrap().scaled(C64::new(2.0, 0.0));
    assert!(rel(&lhs, &rhs) < 1e-8);
}

#[test]
fn weight_field_examples() {
    let g = Grid::new(10.0, 256).unwrap();
    let w = weight_field(&WeightSpec::Subexp { alpha: 0.0, beta: 0.5, tau: 1.0, gamma: 0.0 }, &g).unwrap();
    assert!(w.f.values().iter().all(|v| *v == 0.0));
    assert!(w.g.values().iter().all(|v| *v == 0.0));

    let spec = WeightSpec::pure(2.0, 0.5);
    let (_, grad, g_val, _) = spec.eval(3f64.sqrt());
    assert!((grad * grad - 0.375).abs() < 1e-12);
    assert!((grad - 3f64.sqrt() * g_val).abs() < 1e-12);

    let (f0, _, _, _) = WeightSpec::LogType { tau: 3.0, epsilon: 1.0 }.eval(0.0);
    assert!((f0 + 3.0 * 2f64.ln()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_gradient_factorizes_and_differentiates(alpha in 0.0f64..3.0, beta in 0.1f64..0.99, tau in 0.1f64..3.0, gamma in 0.0f64..2.0, x in -30.0f64..30.0) {
        for spec in [WeightSpec::Subexp { alpha, beta, tau, gamma }, WeightSpec::LogType { tau, epsilon: 0.1 + gamma }] {
            let (_, grad, g, lapl) = spec.eval(x);
            prop_assert!((grad - x * g).abs() < 1e-12 * (1.0 + grad.abs()));
            let h = 1e-4;
            let fd = (spec.eval(x + h).0 - spec.eval(x - h).0) / (2.0 * h);
            prop_assert!((fd - grad).abs() < 1e-6 * (1.0 + grad.abs()));
            let fd2 = (spec.eval(x + h).1 - spec.eval(x - h).1) / (2.0 * h);
            prop_assert!((fd2 - lapl).abs() < 1e-6 * (1.0 + lapl.abs()));
        }
    }
}

#[test]
fn trivial_weight_leaves_hamiltonian_unchanged() {
    let g = Grid::new(10.0, 256).unwrap();
    let v = build_potential(&PotentialSpec::ShortRange { amplitude: 1.0, rho: 0.5 }, &g).unwrap();
    let h = build_hamiltonian(&v, &g).unwrap();
    let hf = conjugated_hamiltonian(&h, &WeightSpec::pure(0.0, 0.5), &g).unwrap();
    let f = packet(&g, 0.5, 1.0, 1.0);
    let a = h.apply(&f).unwrap();
    let b = hf.apply(&f).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn projector_examples() {
    let m = 4.0;
    let g = Grid::new(PI * m, 128).unwrap();
    let h = build_hamiltonian(&ScalarField::zeros(&g), &g).unwrap();
    let f = packet(&g, 1.0, 1.0, 0.3);
    let all = spectral_projector(&h, -1.0, 1e6).unwrap().apply(&f).unwrap();
    assert!(all.sub(&f).unwrap().norm() < 1e-10 * f.norm());
    let e = spectral_projector(&h, 1.0, 2.0).unwrap();
    let ef = e.apply(&f).unwrap();
    let eef = e.apply(&ef).unwrap();
    assert!(eef.sub(&ef).unwrap().norm() < 1e-10 * f.norm());
    let mi = m as i64;
    let count = (-64i64..64).filter(|j| (mi * mi..=2 * mi * mi).contains(&(j * j))).count();
    let d = e.dense().unwrap();
    let trace: f64 = (0..128).map(|i| d[(i, i)].re).sum();
    assert_eq!(trace.round() as usize, count);
    assert!(count > 0);
}
