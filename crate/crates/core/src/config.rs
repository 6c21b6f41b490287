//! Run configuration: a sectioned TOML file.
//!
//! All quantities are dimensionless with lattice constant 2π, so the cell
//! is (−π, π]² and h = 2π / n_per_side.
//!
//! ```toml
//! [mesh]
//! n_per_side = 20
//!
//! [material]
//! inclusion_center = [0.0, 0.0]
//! inclusion_radius = 2.356194490192345
//! valid_range = [0.0, 0.7]
//! background = { law = "constant", value = 1.0 }
//! inclusion = { law = "rational", a = 1.0, b = 5.34, c = 1.0 }
//!
//! [sweep]
//! omega_range = [0.0, 0.7]
//!
//! [solver]
//! algorithm = "shira"
//!
//! [output]
//! directory = "out"
//! ```
//!
//! Every key except the material section has a default; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::material::MaterialModel;
use crate::mesh::PeriodicMesh;
use crate::qep::{Algorithm, SolverOptions, DEFAULT_SHIFT};
use crate::sweep::SweepConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub n_per_side: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { n_per_side: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub omega_range: [f64; 2],
    pub omega_step: f64,
    pub theta_count: usize,
    pub n_eigs: usize,
    pub bz_filter_constant: f64,
    pub gap_threshold: f64,
    pub endpoint_tolerance: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self {
            omega_range: d.omega_range,
            omega_step: d.omega_step,
            theta_count: d.theta_count,
            n_eigs: d.n_eigs,
            bz_filter_constant: d.bz_filter_constant,
            gap_threshold: d.gap_threshold,
            endpoint_tolerance: d.endpoint_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub algorithm: Algorithm,
    /// μ₀ as [re, im].
    pub shift: [f64; 2],
    pub tolerance: f64,
    pub max_restarts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subspace: Option<usize>,
    pub seed: u64,
    pub fallback: bool,
    /// Fall back to plain Arnoldi when two unrelated eigenvalues are closer
    /// than this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_fallback: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            algorithm: Algorithm::Shira,
            shift: [DEFAULT_SHIFT.re, DEFAULT_SHIFT.im],
            tolerance: d.tol,
            max_restarts: d.max_restarts,
            subspace: None,
            seed: d.seed,
            fallback: true,
            cluster_fallback: None,
        }
    }
}

/// Data files written by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Eigs,
    Gaps,
    Tube,
    Surfaces,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec![Format::Eigs, Format::Gaps, Format::Tube, Format::Surfaces],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mesh: MeshSection,
    pub material: MaterialModel,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    /// Parse and validate.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh.n_per_side < 2 {
            return Err(Error::Config(format!(
                "mesh.n_per_side must be at least 2, got {}",
                self.mesh.n_per_side
            )));
        }
        self.material
            .clone()
            .checked()
            .map_err(|e| Error::Config(e.to_string()))?;
        let [lo, hi] = self.material.valid_range;
        let [a, b] = self.sweep.omega_range;
        if a < lo || b > hi {
            return Err(Error::Config(format!(
                "sweep.omega_range [{a}, {b}] leaves material.valid_range [{lo}, {hi}]"
            )));
        }
        if self.solver.shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("solver.shift must be finite".into()));
        }
        if self.output.formats.is_empty() {
            return Err(Error::Config("output.formats is empty".into()));
        }
        let sweep = self.sweep_config();
        sweep
            .solver
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        sweep.validate()
    }

    pub fn mesh(&self) -> Result<PeriodicMesh> {
        PeriodicMesh::structured(self.mesh.n_per_side)
    }

    pub fn sweep_config(&self) -> SweepConfig {
        let s = &self.sweep;
        let v = &self.solver;
        SweepConfig {
            omega_range: s.omega_range,
            omega_step: s.omega_step,
            theta_count: s.theta_count,
            n_eigs: s.n_eigs,
            bz_filter_constant: s.bz_filter_constant,
            gap_threshold: s.gap_threshold,
            endpoint_tolerance: s.endpoint_tolerance,
            algorithm: v.algorithm,
            solver: SolverOptions {
                shift: Complex64::new(v.shift[0], v.shift[1]),
                n_wanted: s.n_eigs,
                tol: v.tolerance,
                max_restarts: v.max_restarts,
                subspace: v.subspace,
                keep_vectors: false,
                seed: v.seed,
                track_isotropy: true,
            },
            fallback: v.fallback,
            cluster_fallback: v.cluster_fallback,
        }
    }

    /// SHA-256 of the canonical JSON serialization (fixed field order,
    /// shortest round-trip floats), hex encoded.
    pub fn canonical_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOBSON: &str = r#"
[mesh]
n_per_side = 20

[material]
inclusion_center = [0.0, 0.0]
inclusion_radius = 2.356194490192345
valid_range = [0.0, 0.7]
background = { law = "constant", value = 1.0 }
inclusion = { law = "constant", value = 8.9 }
"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_toml(DOBSON).unwrap();
        assert_eq!(c.material, MaterialModel::dobson());
        let s = c.sweep_config();
        let d = SweepConfig::default();
        assert_eq!(s.omega_step, d.omega_step);
        assert_eq!(s.theta_count, 17);
        assert_eq!(s.solver.shift, DEFAULT_SHIFT);
        assert_eq!(s.solver.n_wanted, 24);
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut c = RunConfig::from_toml(DOBSON).unwrap();
        c.solver.cluster_fallback = Some(1e-6);
        c.material = MaterialModel::rational_cylinders();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.canonical_hash(), c.canonical_hash());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = format!("{DOBSON}\n[sweep]\nomega_stp = 0.01\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
        let text = DOBSON.replace("n_per_side = 20", "n_per_side = 20\nsize = 3");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_errors() {
        for (from, to) in [
            ("n_per_side = 20", "n_per_side = 1"),
            ("value = 8.9", "value = -1.0"),
            ("valid_range = [0.0, 0.7]", "valid_range = [0.0, 0.4]"),
        ] {
            let text = DOBSON.replace(from, to);
            assert!(
                matches!(RunConfig::from_toml(&text), Err(Error::Config(_))),
                "{to}"
            );
        }
        let text = format!("{DOBSON}\n[solver]\nalgorithm = \"qz\"\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_toml(DOBSON).unwrap();
        let mut b = a.clone();
        b.sweep.omega_step = 1e-3;
        assert_ne!(a.canonical_hash(), b.canonical_hash());
        assert_eq!(a.canonical_hash().len(), 64);
    }
}
