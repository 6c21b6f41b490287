use nalgebra::{DMatrix, DVector};

use super::linearize::dense_triple;
use super::{Algorithm, Eigenpair, SolveStats, Spectrum, C64};
use crate::assembly::PencilMatrices;
use crate::error::{Error, Result};

/// Largest linearization size accepted by [`dense_eigs`].
pub const DENSE_LIMIT: usize = 2000;

/// All 2N eigenvalues of the standard linearization, by a dense complex
/// Schur decomposition of [[0, I], [−M⁻¹K, −M⁻¹G]].
pub fn dense_eigs(p: &PencilMatrices) -> Result<Spectrum> {
    let n = p.n_dofs();
    if 2 * n > DENSE_LIMIT {
        return Err(Error::TooLarge {
            size: 2 * n,
            limit: DENSE_LIMIT,
        });
    }
    let (m, g, k) = dense_triple(p);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Solver("mass matrix is not positive definite".into()))?;
    let mk = chol.solve(&k);
    let mg = chol.solve(&g);
    let mut t = DMatrix::<C64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        t[(i, n + i)] = C64::new(1.0, 0.0);
        for j in 0..n {
            t[(n + i, j)] = C64::new(-mk[(i, j)], 0.0);
            t[(n + i, n + j)] = C64::new(-mg[(i, j)], 0.0);
        }
    }
    let (z, tri) = nalgebra::Schur::try_new(t, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Solver("dense Schur iteration did not converge".into()))?
        .unpack();
    let scale = tri
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut entries = Vec::with_capacity(2 * n);
    for i in 0..2 * n {
        let mu = tri[(i, i)];
        let mut s = DVector::<C64>::zeros(2 * n);
        s[i] = C64::new(1.0, 0.0);
        for r in (0..i).rev() {
            let mut acc = C64::default();
            for c in r + 1..=i {
                acc += tri[(r, c)] * s[c];
            }
            let mut den = tri[(r, r)] - mu;
            if den.norm() < f64::EPSILON * scale {
                den = C64::new(f64::EPSILON * scale, 0.0);
            }
            s[r] = -acc / den;
        }
        let x = &z * s;
        let u: Vec<C64> = x.as_slice()[..n].to_vec();
        let residual = p.residual(mu, &u)?;
        entries.push(Eigenpair {
            mu,
            residual,
            mirrored: false,
            vector: Some(u),
        });
    }
    let mut spec = Spectrum {
        entries,
        shift: C64::default(),
        algorithm: Algorithm::Dense,
        converged: true,
        stats: SolveStats::default(),
    };
    spec.sort_canonical();
    Ok(spec)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// M SPD, G skew, K symmetric, all dense with exact structure.
    pub(crate) fn random_pencil(n: usize, seed: u64) -> PencilMatrices {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rnd = |_, _| rng.random::<f64>() * 2.0 - 1.0;
        let a = DMatrix::from_fn(n, n, &mut rnd);
        let b = DMatrix::from_fn(n, n, &mut rnd);
        let c = DMatrix::from_fn(n, n, &mut rnd);
        let x = a.transpose() * &a + DMatrix::identity(n, n) * n as f64;
        let m = (&x + x.transpose()) * 0.5;
        let g = &b - b.transpose();
        let k = &c + c.transpose();
        PencilMatrices::from_dense(&m, &g, &k).unwrap()
    }

    fn scalar_pencil(m: f64, g: f64, k: f64) -> PencilMatrices {
        let d = |v| DMatrix::from_element(1, 1, v);
        PencilMatrices::from_dense(&d(m), &d(g), &d(k)).unwrap()
    }

    #[test]
    fn scalar_example() {
        let s = dense_eigs(&scalar_pencil(1.0, 0.0, -1.0)).unwrap();
        let mut mus: Vec<f64> = s.entries.iter().map(|e| e.mu.re).collect();
        mus.sort_by(f64::total_cmp);
        assert!(
            (mus[0] + 1.0).abs() < 1e-14 && (mus[1] - 1.0).abs() < 1e-14,
            "{mus:?}"
        );
    }

    #[test]
    fn two_by_two_example() {
        let id = DMatrix::<f64>::identity(2, 2);
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        let p = PencilMatrices::from_dense(&id, &g, &id).unwrap();
        let s = dense_eigs(&p).unwrap();
        let r2 = 2f64.sqrt();
        let expected = [r2 - 1.0, r2 + 1.0];
        for e in &s.entries {
            assert!(e.mu.re.abs() < 1e-12);
            assert!(
                expected.iter().any(|x| (e.mu.im.abs() - x).abs() < 1e-12),
                "{}",
                e.mu
            );
            assert!(e.residual < 1e-12);
        }
        assert_eq!(s.entries.len(), 4);
    }

    #[test]
    fn random_spectrum_is_quadruple_closed() {
        let p = random_pencil(20, 1);
        let s = dense_eigs(&p).unwrap();
        let mus: Vec<C64> = s.entries.iter().map(|e| e.mu).collect();
        for &mu in &mus {
            for img in [mu.conj(), -mu, -mu.conj()] {
                let d = mus
                    .iter()
                    .map(|x| (x - img).norm())
                    .fold(f64::INFINITY, f64::min);
                assert!(d < 1e-8 * mu.norm().max(1.0), "{mu} missing partner {img}");
            }
        }
    }

    #[test]
    fn size_guard() {
        let n = 1001;
        let pairs = (0..n).map(|i| (i, i));
        let pat = std::sync::Arc::new(crate::sparse::SparsePattern::from_pairs(n, pairs));
        let eye = crate::sparse::CsrMatrix::new(pat.clone(), vec![1.0; n]).unwrap();
        let zero = crate::sparse::CsrMatrix::new(pat, vec![0.0; n]).unwrap();
        let p = PencilMatrices::new(eye.clone(), zero.clone(), zero, 0.0, [1.0, 0.0]).unwrap();
        assert!(matches!(dense_eigs(&p), Err(Error::TooLarge { .. })));
    }
}
