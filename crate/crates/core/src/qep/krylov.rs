//! Real restarted Arnoldi with Krylov–Schur truncation.
//!
//! The decomposition A V = V H + v_k bᵀ is kept in the general form that a
//! truncation produces. Restarting keeps an ordered partial Schur form of
//! the wanted Ritz values, which is equivalent to an implicit restart with
//! the unwanted Ritz values as exact shifts.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::C64;
use crate::error::{Error, Result};

/// Ritz pair in the coordinates of the current basis.
#[derive(Debug, Clone)]
pub(crate) struct Ritz {
    pub theta: C64,
    pub y: DVector<C64>,
    /// |bᵀy|, the residual norm of the Ritz pair for the operator.
    pub estimate: f64,
    /// Position on the Schur diagonal.
    pub schur_index: usize,
}

/// Schur form of the projected matrix with Ritz pairs sorted by |θ|,
/// largest first.
pub(crate) struct Decomposition {
    z: DMatrix<C64>,
    t: DMatrix<C64>,
    pub ritz: Vec<Ritz>,
}

pub(crate) struct KrylovSchur {
    n: usize,
    m: usize,
    v: Vec<Vec<f64>>,
    h: DMatrix<f64>,
    k: usize,
    isotropic: bool,
    rng: ChaCha8Rng,
    exhausted: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn nrm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// ⟨a, J b⟩ with J (b₁, b₂) = (b₂, −b₁).
fn jdot(a: &[f64], b: &[f64]) -> f64 {
    let h = a.len() / 2;
    dot(&a[..h], &b[h..]) - dot(&a[h..], &b[..h])
}

impl KrylovSchur {
    /// `n` is the operator dimension, `m` the maximal basis size.
    pub fn new(n: usize, m: usize, isotropic: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v0: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let s = nrm(&v0);
        v0.iter_mut().for_each(|x| *x /= s);
        Self {
            n,
            m,
            v: vec![v0],
            h: DMatrix::zeros(m + 1, m),
            k: 0,
            isotropic,
            rng,
            exhausted: false,
        }
    }

    pub fn exhausted(&self) -> bool {
        self.exhausted
    }

    /// Orthogonalize `w` against the first `j` basis vectors (and their J
    /// images when isotropic); returns the accumulated coefficients.
    fn orthogonalize(&self, w: &mut [f64], j: usize) -> Vec<f64> {
        let h = self.n / 2;
        let mut coef = vec![0.0; j];
        for _ in 0..2 {
            for (i, vi) in self.v[..j].iter().enumerate() {
                let c = dot(vi, w);
                coef[i] += c;
                w.iter_mut().zip(vi).for_each(|(a, b)| *a -= c * b);
            }
            if self.isotropic {
                for vi in &self.v[..j] {
                    // w -= ⟨w, J v_i⟩ J v_i
                    let c = jdot(w, vi);
                    for t in 0..h {
                        w[t] -= c * vi[h + t];
                        w[h + t] += c * vi[t];
                    }
                }
            }
        }
        coef
    }

    /// Extend the basis to `m` vectors.
    pub fn expand<F>(&mut self, mut op: F) -> Result<usize>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    {
        let mut applied = 0;
        while self.k < self.m && !self.exhausted {
            let j = self.k;
            let mut w = vec![0.0; self.n];
            op(&self.v[j], &mut w)?;
            applied += 1;
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::Solver("operator produced non-finite values".into()));
            }
            let w0 = nrm(&w);
            let coef = self.orthogonalize(&mut w, j + 1);
            for (i, c) in coef.iter().enumerate() {
                self.h[(i, j)] += c;
            }
            let mut beta = nrm(&w);
            if beta <= 1e-12 * w0 || beta == 0.0 {
                // invariant subspace: continue with a fresh direction
                beta = 0.0;
                let mut ok = false;
                for _ in 0..3 {
                    let mut r: Vec<f64> = (0..self.n)
                        .map(|_| self.rng.random::<f64>() - 0.5)
                        .collect();
                    let r0 = nrm(&r);
                    self.orthogonalize(&mut r, j + 1);
                    let rn = nrm(&r);
                    if rn > 1e-8 * r0 {
                        w = r.iter().map(|x| x / rn).collect();
                        ok = true;
                        break;
                    }
                }
                if !ok {
                    self.exhausted = true;
                    w = vec![0.0; self.n];
                }
            } else {
                w.iter_mut().for_each(|x| *x /= beta);
            }
            self.h[(j + 1, j)] = beta;
            self.v.push(w);
            self.k += 1;
        }
        Ok(applied)
    }

    /// Largest |⟨v_i, J v_j⟩| over the basis including the residual vector.
    pub fn isotropy_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.v.len() {
            for j in 0..i {
                worst = worst.max(jdot(&self.v[i], &self.v[j]).abs());
            }
        }
        worst
    }

    pub fn decompose(&self) -> Result<Decomposition> {
        let k = self.k;
        if k == 0 {
            return Err(Error::Solver("empty Krylov basis".into()));
        }
        let hk = self.h.view((0, 0), (k, k)).map(|x| C64::new(x, 0.0));
        let b: Vec<f64> = (0..k).map(|j| self.h[(k, j)]).collect();
        let schur = nalgebra::Schur::try_new(hk, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Solver("projected eigenproblem did not converge".into()))?;
        let (z, t) = schur.unpack();
        let scale = t
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut ritz: Vec<Ritz> = (0..k)
            .map(|i| {
                let s = triangular_eigvec(&t, i, scale);
                let mut y = &z * s;
                let yn = y.norm();
                y /= C64::new(yn, 0.0);
                let est = (0..k).map(|j| y[j] * b[j]).sum::<C64>().norm();
                Ritz {
                    theta: t[(i, i)],
                    y,
                    estimate: est,
                    schur_index: i,
                }
            })
            .collect();
        ritz.sort_by(|a, b| b.theta.norm().total_cmp(&a.theta.norm()));
        Ok(Decomposition { z, t, ritz })
    }

    /// Basis combination V y.
    pub fn combine(&self, y: &DVector<C64>) -> Vec<C64> {
        let mut out = vec![C64::default(); self.n];
        for (l, vl) in self.v[..self.k].iter().enumerate() {
            let c = y[l];
            for (o, &x) in out.iter_mut().zip(vl) {
                *o += c * x;
            }
        }
        out
    }

    /// Keep the invariant subspace of the Schur values marked in `keep`
    /// (indexed by Schur position). The kept set should be closed under
    /// conjugation; the retained real dimension is returned.
    pub fn restart(&mut self, d: Decomposition, keep: &[bool]) -> Result<usize> {
        let k = self.k;
        let Decomposition { mut z, mut t, .. } = d;
        let mut sel = keep.to_vec();
        let mut p = 0;
        for i in 0..k {
            if sel[i] {
                for j in (p..i).rev() {
                    swap_schur(&mut t, &mut z, j);
                    sel.swap(j, j + 1);
                }
                p += 1;
            }
        }
        if p == 0 {
            return Err(Error::Solver("restart keeps no vectors".into()));
        }
        // real orthonormal basis of span(Z[:, :p]) ∪ its conjugate
        let mut y = DMatrix::<f64>::zeros(k, 2 * p);
        for c in 0..p {
            for r in 0..k {
                y[(r, c)] = z[(r, c)].re;
                y[(r, p + c)] = z[(r, c)].im;
            }
        }
        let svd = nalgebra::SVD::new(y, true, false);
        let u = svd.u.as_ref().expect("left singular vectors requested");
        let sv = &svd.singular_values;
        let mut idx: Vec<usize> = (0..sv.len()).collect();
        idx.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
        let smax = sv[idx[0]];
        let r = idx
            .iter()
            .take_while(|&&i| sv[i] > 1e-8 * smax)
            .count()
            .min(self.m - 1);
        let mut q = DMatrix::<f64>::zeros(k, r);
        for (c, &i) in idx[..r].iter().enumerate() {
            q.set_column(c, &u.column(i));
        }
        let hk = self.h.view((0, 0), (k, k)).clone_owned();
        let b = DVector::from_iterator(k, (0..k).map(|j| self.h[(k, j)]));
        let tn = q.transpose() * &hk * &q;
        let bn = q.transpose() * b;

        let mut vnew = Vec::with_capacity(self.m + 1);
        for c in 0..r {
            let mut acc = vec![0.0; self.n];
            for l in 0..k {
                let s = q[(l, c)];
                if s != 0.0 {
                    acc.iter_mut()
                        .zip(&self.v[l])
                        .for_each(|(a, x)| *a += s * x);
                }
            }
            vnew.push(acc);
        }
        vnew.push(std::mem::take(&mut self.v[k]));
        self.v = vnew;
        self.h.fill(0.0);
        self.h.view_mut((0, 0), (r, r)).copy_from(&tn);
        for j in 0..r {
            self.h[(r, j)] = bn[j];
        }
        self.k = r;
        Ok(r)
    }
}

/// Eigenvector of upper-triangular `t` for its i-th diagonal entry.
fn triangular_eigvec(t: &DMatrix<C64>, i: usize, scale: f64) -> DVector<C64> {
    let n = t.nrows();
    let lam = t[(i, i)];
    let mut s = DVector::<C64>::zeros(n);
    s[i] = C64::new(1.0, 0.0);
    let floor = f64::EPSILON * scale;
    for r in (0..i).rev() {
        let mut acc = C64::default();
        for c in r + 1..=i {
            acc += t[(r, c)] * s[c];
        }
        let mut den = t[(r, r)] - lam;
        if den.norm() < floor {
            den = C64::new(floor, 0.0);
        }
        s[r] = -acc / den;
    }
    s
}

/// Swap adjacent diagonal entries j, j+1 of the triangular factor.
fn swap_schur(t: &mut DMatrix<C64>, z: &mut DMatrix<C64>, j: usize) {
    let n = t.nrows();
    let (t1, t2, x) = (t[(j, j)], t[(j + 1, j + 1)], t[(j, j + 1)]);
    let d = t2 - t1;
    let r = (x.norm_sqr() + d.norm_sqr()).sqrt();
    if r == 0.0 {
        return;
    }
    let (c, s) = (x / r, d / r);
    // G = [[c, −s̄], [s, c̄]], first column along the eigenvector of t2
    let g = [[c, -s.conj()], [s, c.conj()]];
    for col in 0..n {
        let (a, b) = (t[(j, col)], t[(j + 1, col)]);
        t[(j, col)] = g[0][0].conj() * a + g[1][0].conj() * b;
        t[(j + 1, col)] = g[0][1].conj() * a + g[1][1].conj() * b;
    }
    for row in 0..n {
        let (a, b) = (t[(row, j)], t[(row, j + 1)]);
        t[(row, j)] = a * g[0][0] + b * g[1][0];
        t[(row, j + 1)] = a * g[0][1] + b * g[1][1];
        let (a, b) = (z[(row, j)], z[(row, j + 1)]);
        z[(row, j)] = a * g[0][0] + b * g[1][0];
        z[(row, j + 1)] = a * g[0][1] + b * g[1][1];
    }
    t[(j + 1, j)] = C64::default();
}

/// Select the `want` largest Ritz values, closed under conjugation.
/// Returns Schur-position flags and the number of selected values.
pub(crate) fn select_conjugate_closed(ritz: &[Ritz], want: usize) -> (Vec<bool>, usize) {
    let k = ritz.len();
    let mut keep = vec![false; k];
    let mut count = 0;
    for i in 0..want.min(k) {
        keep[ritz[i].schur_index] = true;
        count += 1;
    }
    for i in 0..want.min(k) {
        if let Some(j) = conjugate_partner(ritz, i) {
            if !keep[ritz[j].schur_index] {
                keep[ritz[j].schur_index] = true;
                count += 1;
            }
        }
    }
    (keep, count)
}

/// Index of the Ritz value that is the conjugate of `ritz[i]`, if `ritz[i]`
/// is not (numerically) real.
pub(crate) fn conjugate_partner(ritz: &[Ritz], i: usize) -> Option<usize> {
    let th = ritz[i].theta;
    let self_dist = (th - th.conj()).norm();
    let (j, dist) = ritz
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, r)| (j, (r.theta - th.conj()).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    (dist < self_dist).then_some(j)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_matrix(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                (i + 1) as f64
            } else {
                (((i * 31 + j * 17) % 13) as f64 - 6.0) * 0.05
            }
        })
    }

    #[test]
    fn finds_dominant_eigenvalues_with_restarts() {
        let n = 60;
        let a = test_matrix(n);
        let mut reference = a
            .complex_eigenvalues()
            .iter()
            .map(|c| c.norm())
            .collect::<Vec<_>>();
        reference.sort_by(|x, y| y.total_cmp(x));
        let mut ks = KrylovSchur::new(n, 16, false, 1);
        let want = 4;
        for _ in 0..200 {
            ks.expand(|x, y| {
                let r = &a * DVector::from_column_slice(x);
                y.copy_from_slice(r.as_slice());
                Ok(())
            })
            .unwrap();
            let d = ks.decompose().unwrap();
            if d.ritz[..want].iter().all(|r| r.estimate < 1e-10) {
                for (r, e) in d.ritz[..want].iter().zip(&reference) {
                    assert!((r.theta.norm() - e).abs() < 1e-8, "{} vs {e}", r.theta);
                }
                return;
            }
            let (keep, _) = select_conjugate_closed(&d.ritz, want + 3);
            ks.restart(d, &keep).unwrap();
        }
        panic!("no convergence");
    }

    #[test]
    fn schur_swap_preserves_similarity() {
        let a = test_matrix(6).map(|x| C64::new(x, 0.1 * x));
        let (mut z, mut t) = nalgebra::Schur::new(a.clone()).unpack();
        let d0 = (t[(2, 2)], t[(3, 3)]);
        swap_schur(&mut t, &mut z, 2);
        assert!((t[(2, 2)] - d0.1).norm() < 1e-12);
        assert!((t[(3, 3)] - d0.0).norm() < 1e-12);
        let back = &z * &t * z.adjoint();
        assert!((back - a).norm() < 1e-11);
    }
}
