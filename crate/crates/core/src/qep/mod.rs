//! Gyroscopic quadratic eigenvalue problem μ²M + μG + K.
//!
//! Three solvers share the [`Spectrum`] result type: structure-preserving
//! shift-invert Arnoldi on the Hamiltonian linearization ([`shira_eigs`]),
//! plain shift-invert Arnoldi on the standard linearization
//! ([`arnoldi_eigs`]) and a dense full-spectrum solve ([`dense_eigs`]).

mod dense;
mod extract;
mod ira;
mod krylov;
mod linearize;
mod shira;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::assembly::PencilMatrices;
use crate::error::{Error, Result};

pub use dense::{dense_eigs, DENSE_LIMIT};
pub use ira::arnoldi_eigs;
pub use linearize::{HamiltonianLinearization, ShiftedOperator, StandardLinearization};
pub use shira::shira_eigs;

pub(crate) type C64 = Complex64;

/// Which eigensolver to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Shira,
    Ira,
    Dense,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Shira => "shira",
            Algorithm::Ira => "ira",
            Algorithm::Dense => "dense",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shira" => Ok(Algorithm::Shira),
            "ira" => Ok(Algorithm::Ira),
            "dense" => Ok(Algorithm::Dense),
            other => Err(Error::Argument(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Default shift μ₀ = 0.05 + 0.25i.
pub const DEFAULT_SHIFT: C64 = C64::new(0.05, 0.25);

/// Krylov solver settings.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub shift: C64,
    /// Number of eigenvalues of the shifted operator to converge; a complex
    /// conjugate pair counts twice.
    pub n_wanted: usize,
    /// Bound on ‖Q(μ)u‖ / ‖u‖.
    pub tol: f64,
    pub max_restarts: usize,
    /// Krylov subspace dimension; `None` means max(2·n_wanted + 8, 20).
    pub subspace: Option<usize>,
    pub keep_vectors: bool,
    /// Seed of the random start vector.
    pub seed: u64,
    /// Measure max |⟨v_i, J v_j⟩| at every restart (SHIRA only).
    pub track_isotropy: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            shift: DEFAULT_SHIFT,
            n_wanted: 24,
            tol: 1e-9,
            max_restarts: 50,
            subspace: None,
            keep_vectors: false,
            seed: 0x5eed,
            track_isotropy: true,
        }
    }
}

impl SolverOptions {
    pub fn subspace_dim(&self) -> usize {
        self.subspace
            .unwrap_or_else(|| (2 * self.n_wanted + 8).max(20))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_wanted == 0 {
            return Err(Error::Argument("n_wanted must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Argument("tolerance must be positive".into()));
        }
        if !self.shift.re.is_finite() || !self.shift.im.is_finite() {
            return Err(Error::Argument("shift must be finite".into()));
        }
        Ok(())
    }
}

/// One eigenvalue μ of the pencil, with λ = −iμ.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub mu: C64,
    /// ‖Q(μ)u‖ / ‖u‖.
    pub residual: f64,
    /// Synthesized from the μ ↦ −μ symmetry rather than found directly.
    pub mirrored: bool,
    pub vector: Option<Vec<C64>>,
}

impl Eigenpair {
    pub fn lambda(&self) -> C64 {
        mu_to_lambda(self.mu)
    }
}

pub fn mu_to_lambda(mu: C64) -> C64 {
    C64::new(mu.im, -mu.re)
}

pub fn lambda_to_mu(lambda: C64) -> C64 {
    C64::new(-lambda.im, lambda.re)
}

/// Counters and diagnostics of one solve.
#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub restarts: usize,
    pub operator_applications: usize,
    pub factorizations: usize,
    /// Largest |⟨v_i, J v_j⟩| seen at any restart.
    pub isotropy_defect: Option<f64>,
    /// The shift was moved because the first factorization was singular.
    pub shift_perturbed: bool,
    /// The structured solver did not converge and the fallback was used.
    pub fell_back: bool,
    /// Wanted eigenvalues the iteration located (converged Ritz value) but
    /// whose eigenvector missed the tolerance; one μ per symmetry class.
    /// They count towards coverage but are not in the spectrum.
    pub unresolved: Vec<C64>,
}

/// Converged eigenvalues of one pencil.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub entries: Vec<Eigenpair>,
    pub shift: C64,
    pub algorithm: Algorithm,
    pub converged: bool,
    pub stats: SolveStats,
}

impl Spectrum {
    pub fn lambdas(&self) -> Vec<C64> {
        self.entries.iter().map(Eigenpair::lambda).collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.entries.iter().map(|e| e.residual).fold(0.0, f64::max)
    }

    /// Sort by (Re λ, Im λ).
    pub fn sort_canonical(&mut self) {
        self.entries.sort_by(|a, b| {
            let (la, lb) = (a.lambda(), b.lambda());
            la.re.total_cmp(&lb.re).then(la.im.total_cmp(&lb.im))
        });
    }

    /// Radius R such that every eigenvalue with |μ| ≤ R is in the set.
    ///
    /// The Krylov solvers return the eigenvalues with the smallest
    /// shift distance ρ(μ) (|(μ² − μ₀²)(μ² − μ̄₀²)| for SHIRA,
    /// |μ − σ||μ − σ̄| for IRA); the disc is covered when the largest ρ on
    /// it stays below the largest ρ found, unresolved pairs included.
    /// Zero when not converged.
    pub fn covered_radius(&self) -> f64 {
        if !self.converged {
            return 0.0;
        }
        if self.algorithm == Algorithm::Dense {
            return f64::INFINITY;
        }
        let rho = self
            .entries
            .iter()
            .filter(|e| !e.mirrored)
            .map(|e| e.mu)
            .chain(self.stats.unresolved.iter().copied())
            .map(|mu| self.shift_distance(mu))
            .fold(0.0, f64::max);
        let s = self.shift;
        match self.algorithm {
            Algorithm::Shira => (rho.sqrt() - s.norm_sqr()).max(0.0).sqrt(),
            _ => (rho.sqrt() - s.norm()).max(0.0),
        }
    }

    /// ρ(μ) for this spectrum's algorithm and shift.
    pub fn shift_distance(&self, mu: C64) -> f64 {
        let s = self.shift;
        match self.algorithm {
            Algorithm::Shira => {
                let (a, b) = (s * s, (s * s).conj());
                ((mu * mu - a) * (mu * mu - b)).norm()
            }
            _ => (mu - s).norm() * (mu - s.conj()).norm(),
        }
    }

    /// Largest distance from any μ to the nearest μ̄ in the set.
    pub fn conjugation_defect(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                self.entries
                    .iter()
                    .map(|f| (f.mu - e.mu.conj()).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
}

/// Run the chosen algorithm; if SHIRA fails to converge (or returns
/// eigenvalues clustered tighter than `cluster_fallback`) and `fallback` is
/// set, rerun with plain shift-invert Arnoldi.
pub fn solve(
    p: &PencilMatrices,
    algorithm: Algorithm,
    opts: &SolverOptions,
    fallback: bool,
    cluster_fallback: Option<f64>,
) -> Result<Spectrum> {
    match algorithm {
        Algorithm::Dense => dense_eigs(p),
        Algorithm::Ira => arnoldi_eigs(p, opts),
        Algorithm::Shira => {
            let first = shira_eigs(p, opts);
            let clustered =
                |s: &Spectrum| cluster_fallback.is_some_and(|d| min_separation(&s.entries) < d);
            match first {
                Ok(s) if s.converged && !clustered(&s) => Ok(s),
                Ok(s) if !fallback => Ok(s),
                Err(e) if !fallback => Err(e),
                first => {
                    tracing::debug!(omega = p.omega, "structured solve fell back");
                    let mut alt = arnoldi_eigs(p, opts)?;
                    alt.stats.fell_back = true;
                    if let Ok(s) = &first {
                        alt.stats.isotropy_defect = s.stats.isotropy_defect;
                        if !alt.converged && s.converged {
                            return first;
                        }
                    }
                    Ok(alt)
                }
            }
        }
    }
}

/// Smallest distance between two eigenvalues that are not related by the
/// quadruple symmetry.
fn min_separation(entries: &[Eigenpair]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in entries.iter().enumerate() {
        for b in &entries[i + 1..] {
            let related = [b.mu.conj(), -b.mu, -b.mu.conj()]
                .iter()
                .any(|&m| (m - a.mu).norm() <= 1e-10 * (1.0 + a.mu.norm()));
            if !related {
                best = best.min((a.mu - b.mu).norm());
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(mus: &[C64], unresolved: Vec<C64>) -> Spectrum {
        Spectrum {
            entries: mus
                .iter()
                .map(|&mu| Eigenpair {
                    mu,
                    residual: 0.0,
                    mirrored: false,
                    vector: None,
                })
                .collect(),
            shift: C64::new(0.0, 0.5),
            algorithm: Algorithm::Shira,
            converged: true,
            stats: SolveStats {
                unresolved,
                ..SolveStats::default()
            },
        }
    }

    #[test]
    fn unresolved_pairs_count_towards_coverage() {
        let one = C64::new(1.0, 0.0);
        let three = C64::new(3.0, 0.0);
        // s = 0.5i: ρ(3) = |9 + 0.25|² = 85.5625, radius √(9.25 − 0.25) = 3
        let full = spectrum(&[one, three], Vec::new());
        assert!((full.covered_radius() - 3.0).abs() < 1e-12);
        let partial = spectrum(&[one], vec![three]);
        assert_eq!(partial.covered_radius(), full.covered_radius());
        assert!(spectrum(&[one], Vec::new()).covered_radius() < 1.0 + 1e-12);
    }
}
