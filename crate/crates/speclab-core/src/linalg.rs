//! Dense linear algebra helpers: Hermitian eigendecomposition with real and
//! parity fast paths, matvecs, norms and matrix functions.

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::par;
use crate::C64;

/// Eigenvalues in ascending order with orthonormal eigenvector columns.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Mat<C64>,
}

/// Dense matvec `M f`.
pub fn matvec(m: &Mat<C64>, f: &[C64]) -> Vec<C64> {
    let n = m.nrows();
    let cols = m.ncols();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for j in 0..cols {
        let fj = f[j];
        if fj == C64::new(0.0, 0.0) {
            continue;
        }
        let col = m.col(j);
        for i in 0..n {
            out[i] += col[i] * fj;
        }
    }
    out
}

/// Dense adjoint matvec `M* f`.
pub fn matvec_adjoint(m: &Mat<C64>, f: &[C64]) -> Vec<C64> {
    (0..m.ncols())
        .map(|j| {
            let col = m.col(j);
            (0..m.nrows()).map(|i| col[i].conj() * f[i]).sum()
        })
        .collect()
}

/// Largest entry modulus.
pub fn max_abs(m: &Mat<C64>) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            best = best.max(m[(i, j)].norm());
        }
    }
    best
}

/// `max |M − M*|` relative to `max |M|`.
pub fn hermitian_defect(m: &Mat<C64>) -> f64 {
    let n = m.nrows();
    let mut d: f64 = 0.0;
    for j in 0..n {
        for i in 0..=j {
            d = d.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    d / max_abs(m).max(1e-300)
}

fn is_real(m: &Mat<C64>, tol: f64) -> bool {
    let scale = max_abs(m).max(1e-300);
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)].im.abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

fn commutes_with_mirror(m: &Mat<C64>, mirror: &dyn Fn(usize) -> usize, tol: f64) -> bool {
    let n = m.nrows();
    let scale = max_abs(m).max(1e-300);
    for j in 0..n {
        let mj = mirror(j);
        for i in 0..n {
            if (m[(i, j)] - m[(mirror(i), mj)]).norm() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Eigendecomposition of a dense Hermitian matrix, without symmetry reduction.
fn plain_eigen(m: &Mat<C64>) -> Result<Eigen> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Eigen {
            values: Vec::new(),
            vectors: Mat::zeros(0, 0),
        });
    }
    if is_real(m, 1e-13) {
        let r = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (m[(i, j)].re + m[(j, i)].re));
        let e = r
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
        let s = e.S();
        let u = e.U();
        Ok(Eigen {
            values: (0..n).map(|k| s[k]).collect(),
            vectors: Mat::from_fn(n, n, |i, j| C64::new(u[(i, j)], 0.0)),
        })
    } else {
        let h = Mat::<C64>::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)].conj()));
        let e = h
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
        let s = e.S();
        Ok(Eigen {
            values: (0..n).map(|k| s[k].re).collect(),
            vectors: e.U().to_owned(),
        })
    }
}

/// Orthonormal basis of one parity sector, each element a sparse
/// `(index, coefficient)` list.
pub type SectorBasis = Vec<Vec<(usize, f64)>>;

/// Even (`odd = false`) or odd sector basis for the involution `mirror`.
pub fn parity_basis(n: usize, mirror: &dyn Fn(usize) -> usize, odd: bool) -> SectorBasis {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut basis = Vec::new();
    for j in 0..n {
        let m = mirror(j);
        if m == j {
            if !odd {
                basis.push(vec![(j, 1.0)]);
            }
        } else if j < m {
            basis.push(vec![(j, r), (m, if odd { -r } else { r })]);
        }
    }
    basis
}

/// Even and odd sector bases when `m` commutes with the mirror permutation.
pub fn parity_sectors(m: &Mat<C64>, mirror: &dyn Fn(usize) -> usize) -> Option<[SectorBasis; 2]> {
    let n = m.nrows();
    if n < 4 || !commutes_with_mirror(m, mirror, 1e-12) {
        return None;
    }
    Some([parity_basis(n, mirror, false), parity_basis(n, mirror, true)])
}

/// Compression `U* M U` onto a sector.
pub fn compress(m: &Mat<C64>, basis: &SectorBasis) -> Mat<C64> {
    let d = basis.len();
    Mat::<C64>::from_fn(d, d, |a, b| {
        let mut s = C64::new(0.0, 0.0);
        for &(i, ci) in &basis[a] {
            for &(l, cl) in &basis[b] {
                s += m[(i, l)] * (ci * cl);
            }
        }
        s
    })
}

/// Sector coordinates `U* f`.
pub fn restrict(f: &[C64], basis: &SectorBasis) -> Vec<C64> {
    basis
        .iter()
        .map(|support| support.iter().map(|&(i, c)| f[i] * c).sum())
        .collect()
}

/// Full vector `U y` from sector coordinates.
pub fn extend(y: &[C64], basis: &SectorBasis, n: usize) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); n];
    for (support, &ya) in basis.iter().zip(y) {
        for &(i, c) in support {
            v[i] += ya * c;
        }
    }
    v
}

/// Hermitian eigendecomposition. When `mirror` is given and the matrix
/// commutes with the induced permutation, the even and odd sectors are
/// diagonalized separately.
pub fn hermitian_eigen(m: &Mat<C64>, mirror: Option<&dyn Fn(usize) -> usize>) -> Result<Eigen> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::invalid("matrix", "must be square"));
    }
    let Some(sectors) = mirror.and_then(|mr| parity_sectors(m, mr)) else {
        return plain_eigen(m);
    };
    let blocks: Vec<Result<Eigen>> = par::map(&sectors, |basis| plain_eigen(&compress(m, basis)));
    let mut entries: Vec<(f64, Vec<C64>)> = Vec::with_capacity(n);
    for (basis, eig) in sectors.iter().zip(blocks) {
        let eig = eig?;
        for k in 0..eig.values.len() {
            let y: Vec<C64> = (0..basis.len()).map(|a| eig.vectors[(a, k)]).collect();
            entries.push((eig.values[k], extend(&y, basis, n)));
        }
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let values = entries.iter().map(|e| e.0).collect();
    let vectors = Mat::from_fn(n, n, |i, j| entries[j].1[i]);
    Ok(Eigen { values, vectors })
}

/// Largest singular value of a dense matrix.
pub fn spectral_norm(m: &Mat<C64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() <= 1024 {
        if let Ok(s) = m.singular_values() {
            return s.first().copied().unwrap_or(0.0);
        }
    }
    top_singular(m.ncols(), |v| matvec(m, v), |v| matvec_adjoint(m, v), 1e-13, 300).0
}

/// Deterministic pseudo-random start vector.
pub fn start_vector(n: usize) -> Vec<C64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_0f_a11 ^ n as u64);
    (0..n)
        .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
        .collect()
}

fn euclid(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value of `K` by Lanczos iteration on `K*K` with full
/// reorthogonalization, given matvecs with `K` and `K*`.
///
/// Returns `(σ_max, steps, converged)`; convergence means the Ritz residual
/// bound falls below `tol · σ_max²`.
pub fn top_singular<F, G>(n: usize, k: F, kt: G, tol: f64, max_steps: usize) -> (f64, usize, bool)
where
    F: Fn(&[C64]) -> Vec<C64>,
    G: Fn(&[C64]) -> Vec<C64>,
{
    let mut q = start_vector(n);
    let nq = euclid(&q);
    q.iter_mut().for_each(|x| *x /= nq);
    let mut basis: Vec<Vec<C64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut theta = 0.0;
    let steps = max_steps.min(n).max(1);
    for j in 0..steps {
        let mut w = kt(&k(&basis[j]));
        let a = dot(&basis[j], &w).re;
        alpha.push(a);
        for _ in 0..2 {
            for v in &basis {
                let c = dot(v, &w);
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = euclid(&w);
        let (top, last) = tridiagonal_top(&alpha, &beta);
        theta = top;
        if b * last.abs() <= tol * top.abs().max(1e-300) || b <= 1e-14 * top.abs() || j + 1 == n {
            return (theta.max(0.0).sqrt(), j + 1, true);
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
    (theta.max(0.0).sqrt(), steps, false)
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Largest eigenvalue of the symmetric tridiagonal `(alpha, beta)` and the
/// last component of its eigenvector.
fn tridiagonal_top(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let m = alpha.len();
    let t = Mat::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    match t.self_adjoint_eigen(Side::Lower) {
        Ok(e) => (e.S()[m - 1], e.U()[(m - 1, m - 1)]),
        Err(_) => (alpha[m - 1], 1.0),
    }
}

/// Matrix exponential `exp(i t H)` of a Hermitian matrix through its eigendecomposition.
pub fn unitary_flow(eig: &Eigen, t: f64) -> Mat<C64> {
    let n = eig.values.len();
    let phases: Vec<C64> = eig.values.iter().map(|&e| C64::from_polar(1.0, t * e)).collect();
    let scaled = Mat::from_fn(n, n, |i, k| eig.vectors[(i, k)] * phases[k]);
    &scaled * eig.vectors.adjoint()
}

/// `f(H) = U f(Λ) U*` for a Hermitian matrix given by its eigendecomposition.
pub fn spectral_function<F: Fn(f64) -> C64>(eig: &Eigen, f: F) -> Mat<C64> {
    let n = eig.values.len();
    let fv: Vec<C64> = eig.values.iter().map(|&e| f(e)).collect();
    let scaled = Mat::from_fn(n, n, |i, k| eig.vectors[(i, k)] * fv[k]);
    &scaled * eig.vectors.adjoint()
}
