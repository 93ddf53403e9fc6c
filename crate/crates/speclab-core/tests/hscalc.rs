use faer::{Mat, Side};
use proptest::prelude::*;
use speclab_core::hscalc::{
    build_extension, dbar_decay_exponent, hs_apply_matrix, hs_commutator_expansion, hs_commutator_expansion_matrix,
    random_hermitian, remainder_study, remainder_weighted_norm, seminorm, QuadratureSpec, SymbolFunction,
};
use speclab_core::operators::{build_conjugate, ConjugateSpec, OperatorRep};
use speclab_core::{Grid, C64};

fn spectral_norm(m: &Mat<C64>) -> f64 {
    m.singular_values().unwrap()[0]
}

/// `φ(B)` from an independent eigendecomposition.
fn eigen_oracle(b: &Mat<C64>, f: impl Fn(f64) -> f64) -> Mat<C64> {
    let e = b.self_adjoint_eigen(Side::Lower).unwrap();
    let s = e.S();
    let u = e.U();
    let n = b.nrows();
    let vals: Vec<f64> = (0..n).map(|k| f(s[k].re)).collect();
    Mat::from_fn(n, n, |i, j| (0..n).map(|k| u[(i, k)] * u[(j, k)].conj() * vals[k]).sum())
}

/// `(4u(1 − u))^p` with `u` the position in `[lo, hi]`.
fn bump(lo: f64, hi: f64, p: i32, t: f64) -> f64 {
    if t <= lo || t >= hi {
        return 0.0;
    }
    let u = (t - lo) / (hi - lo);
    (4.0 * u * (1.0 - u)).powi(p)
}

#[test]
fn seminorm_examples() {
    let j = SymbolFunction::japanese(-2.0).unwrap();
    assert!((seminorm(&j, 0, 100.0).unwrap() - 1.0).abs() < 1e-12);
    let c = SymbolFunction::constant(3.0).unwrap();
    assert_eq!(seminorm(&c, 1, 100.0).unwrap(), 0.0);
    let g = SymbolFunction::gaussian();
    assert!((seminorm(&g, 0, 100.0).unwrap() - 1.0).abs() < 1e-12);
    assert!(seminorm(&g, 0, 0.0).is_err());
}

#[test]
fn extension_is_analytic_on_the_axis_and_bounded() {
    let phi = SymbolFunction::japanese(-2.0).unwrap();
    let ext = build_extension(&phi, 2, 0.5).unwrap();
    assert!(ext.c1.is_finite() && ext.c1 > 0.0);
    for x in [-7.3, -1.0, 0.0, 0.4, 12.0] {
        assert_eq!(ext.evaluate_dbar(x, 0.0).norm(), 0.0);
        assert!((ext.evaluate(x, 0.0).re - 1.0 / (1.0 + x * x)).abs() < 1e-14);
    }
    for i in 0..400 {
        let x = -40.0 + 80.0 * (i as f64 + 0.37) / 400.0;
        let jx = (1.0 + x * x).sqrt();
        for s in [0.05, 0.2, 0.45] {
            let y = s * 0.5 * jx;
            let d = ext.evaluate_dbar(x, y).norm();
            let third = 24.0 * x * (1.0 - x * x) / (1.0 + x * x).powi(4);
            let exact = 0.5 * third.abs() * y * y / 2.0;
            assert!((d - exact).abs() < 1e-12 * (1.0 + exact), "plateau ∂̄ at ({x}, {y})");
            assert!(d <= ext.c1 * jx.powi(-5) * y * y * (1.0 + 1e-9), "bound at ({x}, {y})");
        }
        assert_eq!(ext.evaluate_dbar(x, 1.01 * 0.5 * jx).norm(), 0.0);
    }
}

#[test]
fn bump_extension_vanishes_off_support() {
    let phi = SymbolFunction::poly_bump(1.0, 2.0, 8).unwrap();
    let ext = build_extension(&phi, 3, 0.05).unwrap();
    for y in [1e-3, 0.01, 0.1, 1.0] {
        assert_eq!(ext.evaluate_dbar(5.0, y).norm(), 0.0);
        assert_eq!(ext.evaluate_dbar(0.5, y).norm(), 0.0);
    }
    assert!(build_extension(&phi, 8, 0.05).is_err());
    assert!(build_extension(&phi, 2, 0.0).is_err());
}

#[test]
fn dbar_vanishes_to_extension_order() {
    let phi = SymbolFunction::japanese(-1.0).unwrap();
    for m in 1..=4 {
        let ext = build_extension(&phi, m, 0.5).unwrap();
        let e = dbar_decay_exponent(&ext, 0.7, 1e-4, 1e-2, 12).unwrap();
        assert!(e >= m as f64 - 1e-6, "m = {m}: exponent {e}");
    }
}

#[test]
fn diagonal_matrix_example() {
    let b = Mat::from_fn(3, 3, |i, j| if i == j { C64::new([0.0, 1.0, 4.0][i], 0.0) } else { C64::new(0.0, 0.0) });
    let phi = SymbolFunction::japanese(-2.0).unwrap();
    let out = hs_apply_matrix(&phi, &b, &QuadratureSpec::default()).unwrap();
    let expect = [1.0, 0.5, 1.0 / 17.0];
    for i in 0..3 {
        for j in 0..3 {
            let e = if i == j { expect[i] } else { 0.0 };
            assert!((out.matrix[(i, j)] - C64::new(e, 0.0)).norm() < 1e-6);
        }
    }
    assert!(out.refinement_change < 1e-7);
}

#[test]
fn zero_symbol_gives_zero_operator() {
    let b = random_hermitian(12, 3, 0.0, 2.0);
    let out = hs_apply_matrix(&SymbolFunction::constant(0.0).unwrap(), &b, &QuadratureSpec::default()).unwrap();
    assert!(spectral_norm(&out.matrix) < 1e-14);
}

#[test]
fn bump_matches_eigendecomposition_oracle() {
    let phi = SymbolFunction::poly_bump(1.0, 2.0, 8).unwrap();
    let b = random_hermitian(50, 7, 1.5, 0.75);
    let out = hs_apply_matrix(&phi, &b, &QuadratureSpec::for_bump()).unwrap();
    let oracle = eigen_oracle(&b, |t| bump(1.0, 2.0, 8, t));
    assert!(spectral_norm(&(&out.matrix - &oracle)) < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn japanese_matches_eigendecomposition_oracle(n in 4usize..40, seed in 0u64..1000, center in -3.0f64..3.0) {
        let phi = SymbolFunction::japanese(-2.0).unwrap();
        let b = random_hermitian(n, seed, center, 2.0);
        let out = hs_apply_matrix(&phi, &b, &QuadratureSpec::default()).unwrap();
        let oracle = eigen_oracle(&b, |t| 1.0 / (1.0 + t * t));
        prop_assert!(spectral_norm(&(&out.matrix - &oracle)) < 1e-6);
        let adj = Mat::from_fn(n, n, |i, j| out.matrix[(j, i)].conj());
        prop_assert!(spectral_norm(&(&out.matrix - &adj)) < 1e-10);
    }

    #[test]
    fn expansion_telescopes(n in 4usize..24, seed in 0u64..1000, k in 1usize..4) {
        let phi = SymbolFunction::japanese(-1.0).unwrap();
        let b = random_hermitian(n, seed, 0.0, 2.0);
        let t = random_hermitian(n, seed + 1, 0.0, 1.0);
        let e = hs_commutator_expansion_matrix(&phi, &b, &t, k, &QuadratureSpec::default()).unwrap();
        prop_assert_eq!(e.terms.len(), k - 1);
        prop_assert!(e.telescoping_defect() < 1e-8);
        prop_assert!(e.discrepancy < 1e-6);
    }
}

#[test]
fn commuting_pair_has_vanishing_expansion() {
    let b = random_hermitian(16, 11, 0.0, 2.0);
    let t = &b * &b;
    let phi = SymbolFunction::japanese(-2.0).unwrap();
    let e = hs_commutator_expansion_matrix(&phi, &b, &t, 2, &QuadratureSpec::default()).unwrap();
    assert!(spectral_norm(&e.commutator) < 1e-6);
    assert!(e.terms.iter().all(|m| spectral_norm(m) < 1e-10));
    assert!(spectral_norm(&e.remainder_quadrature) < 1e-6);
}

#[test]
fn first_order_remainder_is_the_commutator() {
    let b = random_hermitian(10, 5, 0.5, 1.5);
    let t = random_hermitian(10, 6, 0.0, 1.0);
    let phi = SymbolFunction::japanese(-2.0).unwrap();
    let e = hs_commutator_expansion_matrix(&phi, &b, &t, 1, &QuadratureSpec::default()).unwrap();
    assert!(e.terms.is_empty());
    assert!(spectral_norm(&(&e.remainder_quadrature - &e.commutator)) < 1e-6);
}

#[test]
fn position_and_conjugate_routes_agree() {
    let g = Grid::new(5.0, 64).unwrap();
    let b = OperatorRep::position(&g);
    let t = build_conjugate(&ConjugateSpec::BoundedStandard, &g).unwrap();
    let phi = SymbolFunction::japanese(-2.0).unwrap();
    let e = hs_commutator_expansion(&phi, &b, &t, 2, &QuadratureSpec::default()).unwrap();
    assert!(e.discrepancy < 1e-6, "routes differ by {}", e.discrepancy);
    assert!(e.telescoping_defect() < 1e-8);
}

#[test]
fn unweighted_remainder_norm_is_plain_norm() {
    let b = random_hermitian(12, 21, 0.0, 2.0);
    let t = random_hermitian(12, 22, 0.0, 1.0);
    let phi = SymbolFunction::japanese(-2.0).unwrap();
    let e = hs_commutator_expansion_matrix(&phi, &b, &t, 2, &QuadratureSpec::default()).unwrap();
    let w = remainder_weighted_norm(&e.remainder_quadrature, &b, 0.0, 0.0, 2, phi.rho()).unwrap();
    assert!(w.in_regime);
    assert!((w.norm - spectral_norm(&e.remainder_quadrature)).abs() < 1e-10 * (1.0 + w.norm));
    let v = remainder_weighted_norm(&e.remainder_quadrature, &b, 4.5, 0.5, 2, phi.rho()).unwrap();
    assert!(!v.in_regime);
    assert!(!v.violations.is_empty());
}

#[test]
fn weighted_remainder_stable_in_regime_and_grows_outside() {
    let g = Grid::new(10.0, 128).unwrap();
    let phi = SymbolFunction::japanese(-2.0).unwrap();
    let q = QuadratureSpec::default();
    let inside = remainder_study(&phi, &g, 2, 1.5, 0.5, &q, 0.05).unwrap();
    assert!(inside.base.weighted.in_regime);
    assert!(inside.stable, "mesh {} box {}", inside.mesh_change, inside.box_change);
    let outside = remainder_study(&phi, &g, 2, 4.5, 0.5, &q, 0.05).unwrap();
    assert!(!outside.base.weighted.in_regime);
    assert!(outside.growth_factor > 1.5, "growth {}", outside.growth_factor);
}
