//! Eigenpair post-processing shared by the Krylov solvers.

use super::{Eigenpair, C64};
use crate::assembly::PencilMatrices;
use crate::error::Result;
use crate::lu::SparseLu;

/// Roots of a μ² + b μ + c, computed without cancellation.
pub(crate) fn quadratic_roots(a: C64, b: C64, c: C64) -> Option<[C64; 2]> {
    if a.norm() == 0.0 {
        return None;
    }
    let disc = (b * b - 4.0 * a * c).sqrt();
    let q = if (b.conj() * disc).re >= 0.0 {
        -0.5 * (b + disc)
    } else {
        -0.5 * (b - disc)
    };
    if q.norm() == 0.0 {
        return Some([C64::default(); 2]);
    }
    Some([q / a, c / q])
}

fn nearest(roots: [C64; 2], mu: C64) -> C64 {
    if (roots[0] - mu).norm() <= (roots[1] - mu).norm() {
        roots[0]
    } else {
        roots[1]
    }
}

/// Root of uᴴQ(μ)u = 0 nearest `mu`. The coefficients are real, imaginary
/// and real by the symmetry of M, G, K, so a negative discriminant yields
/// an exactly imaginary μ.
pub(crate) fn rayleigh_hermitian(p: &PencilMatrices, u: &[C64], mu: C64) -> Option<C64> {
    let form = |v: Vec<C64>| -> C64 { u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum() };
    let a = form(p.m.mul_vec(u)).re;
    let b = form(p.g.mul_vec(u)).im;
    let c = form(p.k.mul_vec(u)).re;
    if a <= 0.0 {
        return None;
    }
    // a μ² + i b μ + c = 0
    let disc = -b * b - 4.0 * a * c;
    let roots = if disc < 0.0 {
        let s = (-disc).sqrt();
        [
            C64::new(0.0, (-b + s) / (2.0 * a)),
            C64::new(0.0, (-b - s) / (2.0 * a)),
        ]
    } else {
        let s = disc.sqrt();
        [
            C64::new(s / (2.0 * a), -b / (2.0 * a)),
            C64::new(-s / (2.0 * a), -b / (2.0 * a)),
        ]
    };
    Some(nearest(roots, mu))
}

/// Root of wᵀQ(μ)u = 0 nearest `mu`, with `w` an approximate right
/// eigenvector for −μ (hence a left eigenvector for μ).
pub(crate) fn rayleigh_two_sided(p: &PencilMatrices, w: &[C64], u: &[C64], mu: C64) -> Option<C64> {
    let form = |v: Vec<C64>| -> C64 { w.iter().zip(&v).map(|(a, b)| a * b).sum() };
    let a = form(p.m.mul_vec(u));
    let b = form(p.g.mul_vec(u));
    let c = form(p.k.mul_vec(u));
    quadratic_roots(a, b, c).map(|r| nearest(r, mu))
}

/// Exact zero for components below relative rounding, so that symmetric
/// partners coincide.
pub(crate) fn snap(mu: C64) -> C64 {
    let s = mu.norm() * 1e-13;
    C64::new(
        if mu.re.abs() <= s { 0.0 } else { mu.re },
        if mu.im.abs() <= s { 0.0 } else { mu.im },
    )
}

pub(crate) fn conj_vec(u: &[C64]) -> Vec<C64> {
    u.iter().map(|c| c.conj()).collect()
}

/// Inverse iteration near `target`; returns an eigenvector estimate and its
/// residual at `target`.
pub(crate) fn inverse_iteration(
    p: &PencilMatrices,
    target: C64,
    start: &[C64],
) -> Result<(Vec<C64>, f64)> {
    let delta = 1e-9 * target.norm().max(1e-3);
    let sigma = target + C64::new(delta, delta);
    let lu = SparseLu::factor(p.pattern(), p.q_values(sigma))?;
    let mut v = start.to_vec();
    for _ in 0..3 {
        v = lu.solve(&v)?;
        let s = crate::assembly::norm(&v);
        if s == 0.0 || !s.is_finite() {
            break;
        }
        v.iter_mut().for_each(|x| *x /= s);
    }
    let r = p.residual(target, &v)?;
    Ok((v, r))
}

/// Inverse iteration for μ and −μ together: Q(−σ) = Q(σ)ᵀ, so the
/// factorization at σ ≈ μ also solves near −μ. Returns the refined
/// (μ, u₊, u₋) and the residual of (μ, u₊).
pub(crate) fn polish_pair(
    p: &PencilMatrices,
    mu: C64,
    u_plus: &[C64],
    u_minus: &[C64],
) -> Result<(C64, Vec<C64>, Vec<C64>, f64)> {
    let delta = 1e-9 * mu.norm().max(1e-3);
    let sigma = mu + C64::new(delta, delta);
    let lu = SparseLu::factor(p.pattern(), p.q_values(sigma))?;
    let normalize = |v: &mut Vec<C64>| {
        let s = crate::assembly::norm(v);
        if s > 0.0 && s.is_finite() {
            v.iter_mut().for_each(|x| *x /= s);
        }
    };
    let mut v = u_plus.to_vec();
    let mut w = u_minus.to_vec();
    normalize(&mut v);
    normalize(&mut w);
    for _ in 0..2 {
        v = lu.solve(&v)?;
        w = lu.solve_transpose(&w)?;
        normalize(&mut v);
        normalize(&mut w);
    }
    let mut best = (mu, p.residual(mu, &v)?);
    let mut cur = mu;
    for _ in 0..3 {
        let Some(c) = rayleigh_two_sided(p, &w, &v, cur) else {
            break;
        };
        if !(c.re.is_finite() && c.im.is_finite()) {
            break;
        }
        cur = c;
        let r = p.residual(c, &v)?;
        if r < best.1 {
            best = (c, r);
        }
    }
    Ok((best.0, v, w, best.1))
}

/// Add the symmetry class {μ, μ̄, −μ, −μ̄} of a found pair (μ, u₊) with
/// mirror vector u₋ for −μ. Coincident members are merged; mirrors whose
/// residual exceeds `tol` are repaired by inverse iteration and dropped if
/// that fails.
#[allow(clippy::too_many_arguments)]
pub(crate) fn push_symmetry_class(
    p: &PencilMatrices,
    out: &mut Vec<Eigenpair>,
    mu: C64,
    u_plus: Vec<C64>,
    u_minus: Option<Vec<C64>>,
    tol: f64,
    keep_vectors: bool,
    factorizations: &mut usize,
) -> Result<()> {
    let mu = snap(mu);
    let mut class: Vec<(C64, Vec<C64>, bool)> = Vec::with_capacity(4);
    let r_plus = p.residual(mu, &u_plus)?;
    class.push((mu, u_plus.clone(), false));
    if mu.conj() != mu {
        class.push((mu.conj(), conj_vec(&u_plus), false));
    }
    let present = |c: &[(C64, Vec<C64>, bool)], x: C64| c.iter().any(|e| e.0 == x);
    if !present(&class, -mu) || !present(&class, -mu.conj()) {
        let start = u_minus.unwrap_or_else(|| conj_vec(&u_plus));
        let mut v = start;
        let mut r = p.residual(-mu, &v)?;
        if r > tol {
            *factorizations += 1;
            let (w, rw) = inverse_iteration(p, -mu, &v)?;
            if rw < r {
                v = w;
                r = rw;
            }
        }
        if r <= tol {
            if !present(&class, -mu) {
                class.push((-mu, v.clone(), true));
            }
            if !present(&class, -mu.conj()) {
                class.push((-mu.conj(), conj_vec(&v), true));
            }
        }
    }
    for (m, v, mirrored) in class {
        let residual = if mirrored || m != mu {
            p.residual(m, &v)?
        } else {
            r_plus
        };
        out.push(Eigenpair {
            mu: m,
            residual,
            mirrored,
            vector: keep_vectors.then_some(v),
        });
    }
    Ok(())
}
