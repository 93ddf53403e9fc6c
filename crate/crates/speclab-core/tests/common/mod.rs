//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64 as C64;

/// Ground-state energy of `−d² − depth·1_{|x|<radius}` from the even matching
/// condition `k tan(k a) = κ`, `k = √(depth + E)`, `κ = √(−E)`, by bisection.
pub fn square_well_ground(depth: f64, radius: f64) -> f64 {
    let f = |e: f64| {
        let k = (depth + e).sqrt();
        let kappa = (-e).sqrt();
        k * (k * radius).tan() - kappa
    };
    let kmax = (std::f64::consts::FRAC_PI_2 / radius).min(depth.sqrt());
    let mut lo = -depth + 1e-15;
    let mut hi = (kmax * kmax - depth).min(-1e-15) - 1e-12;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn wvn(w: f64, k: f64, x: f64) -> f64 {
    if x.abs() < 1e-12 {
        w * k
    } else {
        w * (k * x.abs()).sin() / x.abs()
    }
}

/// `u(0)` of the solution of `u″ = (V − E)u`, `V = w sin(k|x|)/|x|`, integrated
/// inward by RK4 from `x_max` with `(u, u′) = (1, 0)`, as a fraction of
/// `|(u, u′)|`. Zeros in `w` are odd L² eigenstates at energy `E`.
pub fn wvn_odd_shooting(w: f64, k: f64, e: f64, x_max: f64, step: f64) -> f64 {
    let steps = (x_max / step).round() as usize;
    let h = -x_max / steps as f64;
    let rhs = |x: f64, u: f64, v: f64| (v, (wvn(w, k, x) - e) * u);
    let (mut u, mut v) = (1.0f64, 0.0f64);
    for i in 0..steps {
        let x = x_max + i as f64 * h;
        let (a1, b1) = rhs(x, u, v);
        let (a2, b2) = rhs(x + 0.5 * h, u + 0.5 * h * a1, v + 0.5 * h * b1);
        let (a3, b3) = rhs(x + 0.5 * h, u + 0.5 * h * a2, v + 0.5 * h * b2);
        let (a4, b4) = rhs(x + h, u + h * a3, v + h * b3);
        u += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        v += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        let m = u.abs().max(v.abs());
        if m > 1e100 {
            u /= m;
            v /= m;
        }
    }
    u / (u * u + v * v).sqrt()
}

/// Amplitude `w` in `[lo, hi]` with an odd WvN eigenstate at energy `e`, by bisection.
pub fn pin_wvn_amplitude(lo: f64, hi: f64, k: f64, e: f64, x_max: f64, step: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let mut fa = wvn_odd_shooting(a, k, e, x_max, step);
    let fb = wvn_odd_shooting(b, k, e, x_max, step);
    assert!(fa * fb < 0.0, "bracket [{lo}, {hi}] holds no sign change");
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        let fm = wvn_odd_shooting(m, k, e, x_max, step);
        if fa * fm <= 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

/// `‖⟨x⟩^{-s}(−d² − λ − i0)^{-1}⟨x⟩^{-s}‖` on `[−r, r]` from the free kernel
/// `i e^{i√λ|x−y|}/(2√λ)` by Nyström discretization and power iteration.
pub fn free_weighted_resolvent_norm(lambda: f64, s: f64, r: f64, nodes: usize) -> f64 {
    let h = 2.0 * r / nodes as f64;
    let xs: Vec<f64> = (0..nodes).map(|i| -r + (i as f64 + 0.5) * h).collect();
    let wt: Vec<f64> = xs.iter().map(|x| (1.0 + x * x).powf(-0.5 * s)).collect();
    let kk = lambda.sqrt();
    let kernel = |i: usize, j: usize| {
        let d = (xs[i] - xs[j]).abs();
        C64::new(0.0, 1.0) * C64::from_polar(1.0, kk * d) / (2.0 * kk) * (h * wt[i] * wt[j])
    };
    let apply = |f: &[C64], adjoint: bool| -> Vec<C64> {
        (0..nodes)
            .map(|i| {
                (0..nodes)
                    .map(|j| if adjoint { kernel(j, i).conj() * f[j] } else { kernel(i, j) * f[j] })
                    .sum()
            })
            .collect()
    };
    let mut f: Vec<C64> = wt.iter().map(|&w| C64::new(w, 0.0)).collect();
    let mut sigma = 0.0;
    for _ in 0..300 {
        let n = f.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        f.iter_mut().for_each(|v| *v /= n);
        let g = apply(&f, false);
        let next = g.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        f = apply(&g, true);
        if (next - sigma).abs() < 1e-12 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// Squared grid frequencies `(πj/L)²`, `j = −n/2 … n/2 − 1`, sorted.
pub fn free_spectrum(half_length: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let j = i as f64 - (n / 2) as f64;
            (std::f64::consts::PI * j / half_length).powi(2)
        })
        .collect();
    v.sort_by(f64::total_cmp);
    v
}
