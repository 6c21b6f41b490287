//! 2N×2N linearizations, applied blockwise without forming them.

use nalgebra::DMatrix;

use super::C64;
use crate::assembly::PencilMatrices;
use crate::error::{Error, Result};
use crate::lu::SparseLu;

/// A x = μ B x with A = [[0, I], [−K, −G]], B = diag(I, M) and x = (u, μu).
#[derive(Debug, Clone, Copy)]
pub struct StandardLinearization<'a> {
    pub pencil: &'a PencilMatrices,
}

impl<'a> StandardLinearization<'a> {
    pub fn new(pencil: &'a PencilMatrices) -> Self {
        Self { pencil }
    }

    pub fn dim(&self) -> usize {
        2 * self.pencil.n_dofs()
    }

    pub fn apply_a(&self, x: &[C64]) -> Vec<C64> {
        let n = self.pencil.n_dofs();
        let (x1, x2) = x.split_at(n);
        let kx = self.pencil.k.mul_vec(x1);
        let gx = self.pencil.g.mul_vec(x2);
        let mut y = x2.to_vec();
        y.extend(kx.iter().zip(&gx).map(|(a, b)| -a - b));
        y
    }

    pub fn apply_b(&self, x: &[C64]) -> Vec<C64> {
        let n = self.pencil.n_dofs();
        let (x1, x2) = x.split_at(n);
        let mut y = x1.to_vec();
        y.extend(self.pencil.m.mul_vec(x2));
        y
    }

    /// Dense (A, B) for small problems.
    pub fn to_dense(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.pencil.n_dofs();
        let (m, g, k) = dense_triple(self.pencil);
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        let mut b = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            a[(i, n + i)] = 1.0;
            b[(i, i)] = 1.0;
        }
        a.view_mut((n, 0), (n, n)).copy_from(&(-k));
        a.view_mut((n, n), (n, n)).copy_from(&(-g));
        b.view_mut((n, n), (n, n)).copy_from(&m);
        (a, b)
    }
}

pub(crate) fn dense_triple(p: &PencilMatrices) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    (p.m.to_dense(), p.g.to_dense(), p.k.to_dense())
}

/// H y = μ S y with H = [[0, −K], [M, 0]], S = [[M, G], [0, M]] = F₁F₂ and
/// W = F₁⁻¹ H F₂⁻¹, F₁ = [[I, G/2], [0, M]], F₂ = [[M, G/2], [0, I]].
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianLinearization<'a> {
    pub pencil: &'a PencilMatrices,
}

impl<'a> HamiltonianLinearization<'a> {
    pub fn new(pencil: &'a PencilMatrices) -> Self {
        Self { pencil }
    }

    pub fn dim(&self) -> usize {
        2 * self.pencil.n_dofs()
    }

    pub fn apply_h(&self, x: &[f64]) -> Vec<f64> {
        let n = self.pencil.n_dofs();
        let (x1, x2) = x.split_at(n);
        let mut y: Vec<f64> = self.pencil.k.mul_vec(x2).iter().map(|v| -v).collect();
        y.extend(self.pencil.m.mul_vec(x1));
        y
    }

    pub fn apply_s(&self, x: &[f64]) -> Vec<f64> {
        let n = self.pencil.n_dofs();
        let (x1, x2) = x.split_at(n);
        let mx1 = self.pencil.m.mul_vec(x1);
        let gx2 = self.pencil.g.mul_vec(x2);
        let mut y: Vec<f64> = mx1.iter().zip(&gx2).map(|(a, b)| a + b).collect();
        y.extend(self.pencil.m.mul_vec(x2));
        y
    }

    /// J (x₁, x₂) = (x₂, −x₁).
    pub fn apply_j(x: &[f64]) -> Vec<f64> {
        let n = x.len() / 2;
        let mut y = x[n..].to_vec();
        y.extend(x[..n].iter().map(|v| -v));
        y
    }

    /// W = F₁⁻¹ H F₂⁻¹ applied to x, via dense solves; for small checks.
    pub fn dense_w(&self) -> Result<DMatrix<f64>> {
        let n = self.pencil.n_dofs();
        let (m, g, k) = dense_triple(self.pencil);
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        h.view_mut((0, n), (n, n)).copy_from(&(-&k));
        h.view_mut((n, 0), (n, n)).copy_from(&m);
        let mut f1 = DMatrix::identity(2 * n, 2 * n);
        f1.view_mut((0, n), (n, n)).copy_from(&(&g * 0.5));
        f1.view_mut((n, n), (n, n)).copy_from(&m);
        let mut f2 = DMatrix::identity(2 * n, 2 * n);
        f2.view_mut((0, 0), (n, n)).copy_from(&m);
        f2.view_mut((0, n), (n, n)).copy_from(&(&g * 0.5));
        let singular = || Error::Solver("singular mass matrix".into());
        let f1i = f1.try_inverse().ok_or_else(singular)?;
        let f2i = f2.try_inverse().ok_or_else(singular)?;
        Ok(f1i * h * f2i)
    }
}

/// Real operator R = ((W − μ₀)(W + μ₀)(W − μ̄₀)(W + μ̄₀))⁻¹.
///
/// Solves with W − σ need one solve with Q(σ) = σ²M + σG + K. Because
/// Q(−σ) = Q(σ)ᵀ and the matrices are real, one factorization at σ = μ₀
/// serves all four shifts.
#[derive(Debug)]
pub struct ShiftedOperator<'a> {
    pencil: &'a PencilMatrices,
    mu0: C64,
    lu: SparseLu,
    applications: usize,
}

impl<'a> ShiftedOperator<'a> {
    pub fn new(pencil: &'a PencilMatrices, mu0: C64) -> Result<Self> {
        let lu = SparseLu::factor(pencil.pattern(), pencil.q_values(mu0))?;
        if lu.perturbed_pivots() > 0 {
            return Err(Error::Factorization(format!(
                "Q(μ₀) is numerically singular at μ₀ = {mu0}"
            )));
        }
        Ok(Self {
            pencil,
            mu0,
            lu,
            applications: 0,
        })
    }

    pub fn shift(&self) -> C64 {
        self.mu0
    }

    pub fn applications(&self) -> usize {
        self.applications
    }

    /// (W − σ)⁻¹ x for σ = ±μ₀.
    ///
    /// With c = x₁ + G x₂ / 2 and d = M x₂, b = −Q(σ)⁻¹(c + σd) and the
    /// result is ((σM + G/2) b + M x₂, b).
    pub fn resolvent(&self, negate: bool, x: &[C64]) -> Result<Vec<C64>> {
        let p = self.pencil;
        let n = p.n_dofs();
        let sigma = if negate { -self.mu0 } else { self.mu0 };
        let (x1, x2) = x.split_at(n);
        let gx2 = p.g.mul_vec(x2);
        let d = p.m.mul_vec(x2);
        let rhs: Vec<C64> = (0..n)
            .map(|i| -(x1[i] + 0.5 * gx2[i] + sigma * d[i]))
            .collect();
        let b = if negate {
            self.lu.solve_transpose(&rhs)?
        } else {
            self.lu.solve(&rhs)?
        };
        let mb = p.m.mul_vec(&b);
        let gb = p.g.mul_vec(&b);
        let mut out: Vec<C64> = (0..n).map(|i| sigma * mb[i] + 0.5 * gb[i] + d[i]).collect();
        out.extend(b);
        Ok(out)
    }

    /// y = R x.
    pub fn apply(&mut self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.applications += 1;
        let xc: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
        let im = self.mu0.im;
        let result: Vec<f64> = if im != 0.0 {
            // ((W−a)(W−ā))⁻¹ x = Im((W−a)⁻¹x) / Im a for real x
            let t = self.resolvent(true, &xc)?;
            let t: Vec<C64> = t.iter().map(|v| C64::new(-v.im / im, 0.0)).collect();
            let s = self.resolvent(false, &t)?;
            s.iter().map(|v| v.im / im).collect()
        } else {
            let mut t = xc;
            for negate in [true, true, false, false] {
                t = self.resolvent(negate, &t)?;
            }
            t.iter().map(|v| v.re).collect()
        };
        y.copy_from_slice(&result);
        Ok(())
    }
}
