use tracing::debug;

use super::extract::{push_symmetry_class, rayleigh_hermitian};
use super::krylov::{conjugate_partner, select_conjugate_closed, KrylovSchur, Ritz};
use super::{Algorithm, Eigenpair, SolveStats, SolverOptions, Spectrum, C64};
use crate::assembly::PencilMatrices;
use crate::error::{Error, Result};
use crate::lu::SparseLu;

/// Shift-invert Arnoldi on the standard linearization A x = μ B x with the
/// real operator ((T − σ)(T − σ̄))⁻¹, T = B⁻¹A. Mirrors −μ, −μ̄ not found
/// directly are recomputed and kept only if their residual verifies.
pub fn arnoldi_eigs(p: &PencilMatrices, opts: &SolverOptions) -> Result<Spectrum> {
    opts.validate()?;
    let n = p.n_dofs();
    let mut stats = SolveStats::default();
    let mut shift = opts.shift;
    let lu = match factor_checked(p, shift) {
        Ok(lu) => lu,
        Err(Error::Factorization(_)) => {
            shift *= C64::new(1.0 + 1e-3, 1e-3);
            stats.shift_perturbed = true;
            stats.factorizations += 1;
            factor_checked(p, shift)?
        }
        Err(e) => return Err(e),
    };
    stats.factorizations += 1;

    let mut applications = 0usize;
    let mut op = |x: &[f64], y: &mut [f64]| -> Result<()> {
        applications += 1;
        let xc: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
        let (x1, x2) = xc.split_at(n);
        let mut z = resolvent(p, &lu, shift, x1, x2)?;
        if shift.im != 0.0 {
            let t: Vec<C64> = z.iter().map(|v| C64::new(v.im / shift.im, 0.0)).collect();
            z = t;
        } else {
            let (z1, z2) = z.split_at(n);
            z = resolvent(p, &lu, shift, z1, z2)?;
        }
        for (yi, zi) in y.iter_mut().zip(&z) {
            *yi = zi.re;
        }
        Ok(())
    };

    let m = opts.subspace_dim().min(2 * n).max(1);
    let want = opts.n_wanted.min(m);
    let mut ks = KrylovSchur::new(2 * n, m, false, opts.seed);
    let mut found: Vec<(C64, Vec<C64>, f64)> = Vec::new();
    let mut converged = false;
    for restart in 0..=opts.max_restarts {
        ks.expand(&mut op)?;
        let d = ks.decompose()?;
        let (keep, n_sel) = select_conjugate_closed(&d.ritz, want);
        found.clear();
        let mut nconv = 0;
        for (i, r) in d.ritz.iter().enumerate() {
            if !keep[r.schur_index] {
                continue;
            }
            let partner = conjugate_partner(&d.ritz, i);
            if let Some(j) = partner {
                if r.theta.im < d.ritz[j].theta.im {
                    continue;
                }
            }
            let (mu, u, res) = extract(p, &ks, r, shift)?;
            if res <= opts.tol {
                nconv += if partner.is_some() { 2 } else { 1 };
            }
            found.push((mu, u, res));
        }
        debug!(restart, nconv, n_sel, "ira cycle");
        if nconv >= n_sel || ks.exhausted() {
            converged = nconv >= n_sel;
            break;
        }
        if restart == opts.max_restarts {
            break;
        }
        let kplus = (want + nconv.min((m - want) / 2)).min(m.saturating_sub(2));
        if kplus == 0 {
            break;
        }
        let (keep, _) = select_conjugate_closed(&d.ritz, kplus);
        ks.restart(d, &keep)?;
        stats.restarts += 1;
    }
    stats.operator_applications = applications;

    // (μ, μ̄) come from the operator; −μ̄ may already be among them
    let mut entries: Vec<Eigenpair> = Vec::new();
    let good: Vec<_> = found.into_iter().filter(|f| f.2 <= opts.tol).collect();
    let close = |a: C64, b: C64| (a - b).norm() <= 1e-8 * (1.0 + a.norm());
    let mut done: Vec<C64> = Vec::new();
    for (mu, u, _) in &good {
        let mu = *mu;
        if done.iter().any(|&d| close(d, mu) || close(d, mu.conj())) {
            continue;
        }
        // partner found directly: use its vector for the mirror class
        let partner = good
            .iter()
            .find(|g| close(g.0, -mu.conj()) || close(g.0, -mu))
            .map(|g| {
                if close(g.0, -mu) {
                    g.1.clone()
                } else {
                    g.1.iter().map(|c| c.conj()).collect()
                }
            });
        if let Some(g) = good
            .iter()
            .find(|g| close(g.0, -mu.conj()) || close(g.0, -mu))
        {
            done.push(g.0);
        }
        done.push(mu);
        push_symmetry_class(
            p,
            &mut entries,
            mu,
            u.clone(),
            partner,
            opts.tol,
            opts.keep_vectors,
            &mut stats.factorizations,
        )?;
    }
    for e in entries.iter_mut() {
        // a mirror that was found by the iteration itself is not synthesized
        if e.mirrored
            && good
                .iter()
                .any(|g| close(g.0, e.mu) || close(g.0, e.mu.conj()))
        {
            e.mirrored = false;
        }
    }
    let mut spec = Spectrum {
        entries,
        shift,
        algorithm: Algorithm::Ira,
        converged,
        stats,
    };
    spec.sort_canonical();
    Ok(spec)
}

fn factor_checked(p: &PencilMatrices, sigma: C64) -> Result<SparseLu> {
    let lu = SparseLu::factor(p.pattern(), p.q_values(sigma))?;
    if lu.perturbed_pivots() > 0 {
        return Err(Error::Factorization(format!(
            "Q(σ) is numerically singular at σ = {sigma}"
        )));
    }
    Ok(lu)
}

/// (T − σ)⁻¹ x: z₁ = −Q(σ)⁻¹(M x₂ + G x₁ + σ M x₁), z₂ = x₁ + σ z₁.
fn resolvent(
    p: &PencilMatrices,
    lu: &SparseLu,
    sigma: C64,
    x1: &[C64],
    x2: &[C64],
) -> Result<Vec<C64>> {
    let n = p.n_dofs();
    let mx2 = p.m.mul_vec(x2);
    let gx1 = p.g.mul_vec(x1);
    let mx1 = p.m.mul_vec(x1);
    let rhs: Vec<C64> = (0..n)
        .map(|i| -(mx2[i] + gx1[i] + sigma * mx1[i]))
        .collect();
    let z1 = lu.solve(&rhs)?;
    let mut z: Vec<C64> = z1.clone();
    z.extend((0..n).map(|i| x1[i] + sigma * z1[i]));
    Ok(z)
}

fn extract(
    p: &PencilMatrices,
    ks: &KrylovSchur,
    r: &Ritz,
    sigma: C64,
) -> Result<(C64, Vec<C64>, f64)> {
    let n = p.n_dofs();
    let z = ks.combine(&r.y);
    let u = z[..n].to_vec();
    // ν = 1 / ((μ − σ)(μ − σ̄)), or 1 / (μ − σ)² for a real shift
    let cands = if sigma.im != 0.0 {
        let s = (1.0 / r.theta - sigma.im * sigma.im).sqrt();
        [sigma.re + s, sigma.re - s]
    } else {
        let s = (1.0 / r.theta).sqrt();
        [sigma + s, sigma - s]
    };
    let mut best = (cands[0], p.residual(cands[0], &u)?);
    let r1 = p.residual(cands[1], &u)?;
    if r1 < best.1 {
        best = (cands[1], r1);
    }
    if let Some(c) = rayleigh_hermitian(p, &u, best.0) {
        let rc = p.residual(c, &u)?;
        if rc < best.1 {
            best = (c, rc);
        }
    }
    Ok((best.0, u, best.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qep::dense::tests::random_pencil;
    use crate::qep::dense_eigs;

    #[test]
    fn matches_dense_on_random_pencil() {
        let p = random_pencil(20, 9);
        let opts = SolverOptions {
            n_wanted: 6,
            shift: C64::new(0.1, 0.5),
            ..Default::default()
        };
        let s = arnoldi_eigs(&p, &opts).unwrap();
        assert!(s.converged);
        let d = dense_eigs(&p).unwrap();
        for e in &s.entries {
            let near = d
                .entries
                .iter()
                .map(|f| (f.mu - e.mu).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(
                near <= 1e-8 * e.mu.norm().max(1.0),
                "{} off by {near}",
                e.mu
            );
        }
        assert!(s.conjugation_defect() < 1e-12);
    }
}
