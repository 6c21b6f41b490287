use tracing::debug;

use super::extract::{polish_pair, push_symmetry_class, rayleigh_hermitian, rayleigh_two_sided};
use super::krylov::{conjugate_partner, select_conjugate_closed, KrylovSchur, Ritz};
use super::linearize::ShiftedOperator;
use super::{Algorithm, Eigenpair, SolveStats, SolverOptions, Spectrum, C64};
use crate::assembly::PencilMatrices;
use crate::error::{Error, Result};
use crate::lu::SparseLu;

/// Ritz estimate, relative to |θ|, below which R-level convergence is
/// complete and only extraction accuracy remains.
const STAGNANT: f64 = 1e-12;

/// Structure-preserving shift-invert Arnoldi on the Hamiltonian
/// linearization.
///
/// Each eigenvalue θ of R belongs to a pair ±μ; the isotropic Krylov space
/// holds one vector of that pair's eigenspace, from which both eigenvectors
/// are recovered. Returned entries are closed under μ ↦ μ̄ and carry the
/// −μ, −μ̄ partners flagged as mirrored.
pub fn shira_eigs(p: &PencilMatrices, opts: &SolverOptions) -> Result<Spectrum> {
    opts.validate()?;
    let n = p.n_dofs();
    let mut stats = SolveStats::default();
    let (mut op, shift) = match ShiftedOperator::new(p, opts.shift) {
        Ok(op) => (op, opts.shift),
        Err(Error::Factorization(msg)) => {
            debug!(%msg, "shift hit the spectrum; perturbing");
            let s = opts.shift * C64::new(1.0 + 1e-3, 1e-3);
            stats.shift_perturbed = true;
            stats.factorizations += 1;
            (ShiftedOperator::new(p, s)?, s)
        }
        Err(e) => return Err(e),
    };
    stats.factorizations += 1;
    let m_lu = p.mass_lu()?;

    // isotropic subspaces of ℝ^{2N} have dimension at most N
    let m = opts.subspace_dim().min(n).max(1);
    let want = opts.n_wanted.min(m);
    let mut ks = KrylovSchur::new(2 * n, m, true, opts.seed);
    let mut defect = 0.0f64;
    let mut found: Vec<Found> = Vec::new();
    let mut unresolved: Vec<C64> = Vec::new();
    // polished stagnant pairs, by Ritz value, reused across restarts
    let mut polished: Vec<(C64, Found)> = Vec::new();
    let mut converged = false;

    for restart in 0..=opts.max_restarts {
        ks.expand(|x, y| op.apply(x, y))?;
        if opts.track_isotropy {
            defect = defect.max(ks.isotropy_defect());
        }
        let d = ks.decompose()?;
        let (keep, n_sel) = select_conjugate_closed(&d.ritz, want);
        found.clear();
        let mut nconv = 0;
        let mut nstuck = 0;
        unresolved.clear();
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
            let stagnant = r.estimate <= STAGNANT * r.theta.norm();
            let cached = stagnant
                .then(|| {
                    polished
                        .iter()
                        .find(|(t, _)| (*t - r.theta).norm() <= 1e-10 * r.theta.norm())
                })
                .flatten()
                .map(|(_, f)| f.clone());
            let f = match cached {
                Some(f) => f,
                None => {
                    let mut f = extract(p, &ks, r, shift, m_lu)?;
                    if f.residual > opts.tol && stagnant {
                        // R has converged this pair; the loss is in the extraction
                        let (mu, u_plus, u_minus, residual) =
                            polish_pair(p, f.mu, &f.u_plus, &f.u_minus)?;
                        stats.factorizations += 1;
                        if residual < f.residual {
                            f = Found {
                                mu,
                                u_plus,
                                u_minus,
                                residual,
                            };
                        }
                        polished.push((r.theta, f.clone()));
                    }
                    f
                }
            };
            if f.residual > opts.tol && stagnant {
                nstuck += if partner.is_some() { 2 } else { 1 };
                unresolved.push(f.mu);
            }
            if f.residual <= opts.tol {
                nconv += if partner.is_some() { 2 } else { 1 };
            } else {
                debug!(theta = %r.theta, mu = %f.mu, res = f.residual, est = r.estimate, "unconverged");
            }
            found.push(f);
        }
        debug!(restart, nconv, n_sel, "shira cycle");
        // pairs lost only in extraction do not converge further; they
        // bound the covered disc instead
        if nconv + nstuck >= n_sel || ks.exhausted() {
            converged = nconv + nstuck >= n_sel;
            break;
        }
        if restart == opts.max_restarts {
            break;
        }
        let kplus = (want + nconv.min((m - want) / 2)).min(m.saturating_sub(2));
        if kplus == 0 || kplus < n_sel.min(m.saturating_sub(2)) && kplus < want {
            break;
        }
        let (keep, _) = select_conjugate_closed(&d.ritz, kplus);
        ks.restart(d, &keep)?;
        stats.restarts += 1;
        if opts.track_isotropy {
            defect = defect.max(ks.isotropy_defect());
        }
    }
    stats.operator_applications = op.applications();
    stats.isotropy_defect = opts.track_isotropy.then_some(defect);

    let mut entries: Vec<Eigenpair> = Vec::new();
    for f in found.into_iter().filter(|f| f.residual <= opts.tol) {
        push_symmetry_class(
            p,
            &mut entries,
            f.mu,
            f.u_plus,
            Some(f.u_minus),
            opts.tol,
            opts.keep_vectors,
            &mut stats.factorizations,
        )?;
    }
    let mut spec = Spectrum {
        entries,
        shift,
        algorithm: Algorithm::Shira,
        converged,
        stats,
    };
    spec.stats.unresolved = unresolved;
    spec.sort_canonical();
    Ok(spec)
}

#[derive(Clone)]
struct Found {
    mu: C64,
    u_plus: Vec<C64>,
    u_minus: Vec<C64>,
    residual: f64,
}

/// Recover (μ, u) for μ and −μ from a Ritz pair of R.
fn extract(
    p: &PencilMatrices,
    ks: &KrylovSchur,
    r: &Ritz,
    shift: C64,
    m_lu: &SparseLu,
) -> Result<Found> {
    let n = p.n_dofs();
    let z = ks.combine(&r.y);
    let (z1, z2) = z.split_at(n);
    // z = (μMu + Gu/2, u) for each W eigenvector, so y₁ = μu
    let gz2 = p.g.mul_vec(z2);
    let rhs: Vec<C64> = (0..n).map(|i| z1[i] - 0.5 * gz2[i]).collect();
    let y1 = m_lu.solve(&rhs)?;
    let combine = |mu: C64, sign: f64| -> Vec<C64> {
        y1.iter().zip(z2).map(|(a, b)| a + sign * mu * b).collect()
    };

    // θ = 1 / ((μ² − μ₀²)(μ² − μ̄₀²))
    let a = shift * shift;
    let root = (C64::new(a.re * a.re - a.norm_sqr(), 0.0) + 1.0 / r.theta).sqrt();
    let mut best: Option<(C64, f64)> = None;
    // the Ritz vector mixes the +μ and −μ eigenvectors; u₊ is accurate
    // only if its +μ component dominates, so both signs are tried
    for t in [a.re + root, a.re - root] {
        for mu in [t.sqrt(), -t.sqrt()] {
            let res = p.residual(mu, &combine(mu, 1.0))?;
            if best.is_none_or(|b| res < b.1) {
                best = Some((mu, res));
            }
        }
    }
    let (mut mu, mut res) = best.expect("two candidates");
    for _ in 0..2 {
        let u = combine(mu, 1.0);
        let w = combine(mu, -1.0);
        let cands = [
            rayleigh_hermitian(p, &u, mu),
            rayleigh_two_sided(p, &w, &u, mu),
        ];
        for c in cands.into_iter().flatten() {
            if !(c.re.is_finite() && c.im.is_finite()) {
                continue;
            }
            let rc = p.residual(c, &combine(c, 1.0))?;
            if rc < res {
                mu = c;
                res = rc;
            }
        }
    }
    Ok(Found {
        mu,
        u_plus: combine(mu, 1.0),
        u_minus: combine(mu, -1.0),
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qep::dense::tests::random_pencil;
    use crate::qep::dense_eigs;

    #[test]
    fn matches_dense_on_random_pencil() {
        let p = random_pencil(20, 5);
        let opts = SolverOptions {
            n_wanted: 6,
            shift: C64::new(0.1, 0.5),
            keep_vectors: true,
            ..Default::default()
        };
        let s = shira_eigs(&p, &opts).unwrap();
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
            assert!(e.residual <= opts.tol);
        }
        assert!(s.conjugation_defect() < 1e-12);
        assert!(s.stats.isotropy_defect.unwrap() < 1e-10);
        // purely imaginary pairs are closed without mirrors
        assert!(s.entries.iter().all(|e| e.mu.re == 0.0 && !e.mirrored));
    }

    #[test]
    fn complex_quadruple_gets_verified_mirrors() {
        let p = random_pencil(20, 5);
        let opts = SolverOptions {
            n_wanted: 2,
            shift: C64::new(0.27, 0.02),
            ..Default::default()
        };
        let s = shira_eigs(&p, &opts).unwrap();
        assert!(s.converged);
        let mus: Vec<C64> = s.entries.iter().map(|e| e.mu).collect();
        for &mu in &mus {
            for img in [mu.conj(), -mu, -mu.conj()] {
                assert!(
                    mus.iter().any(|x| (x - img).norm() < 1e-10),
                    "{mu} missing {img}"
                );
            }
        }
        let mirrors: Vec<_> = s.entries.iter().filter(|e| e.mirrored).collect();
        assert!(!mirrors.is_empty());
        assert!(mirrors.iter().all(|e| e.residual <= opts.tol));
    }
}
