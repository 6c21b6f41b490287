//! Frequency × angle sweeps: Brillouin-zone filtering, gap classification,
//! endpoint bisection and the constant-permittivity oracle.

use std::f64::consts::{FRAC_PI_4, PI};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tracing::{debug, info, warn};

use crate::assembly::PencilAssembler;
use crate::error::{Error, Result};
use crate::material::MaterialModel;
use crate::mesh::PeriodicMesh;
use crate::qep::{self, Algorithm, Eigenpair, SolverOptions, Spectrum};
use num_complex::Complex64 as C64;

/// Upper end of the irreducible angle range.
pub const THETA_MAX: f64 = FRAC_PI_4;
/// Directions solved together during endpoint refinement.
const EDGE_BATCH: usize = 4;

/// Sweep parameters.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub omega_range: [f64; 2],
    pub omega_step: f64,
    /// Number of equispaced directions on [0, π/4].
    pub theta_count: usize,
    /// Eigenvalues requested per (ω, θ); raised automatically when the
    /// filter window is not covered.
    pub n_eigs: usize,
    /// Keep |λ| ≤ c / cos θ.
    pub bz_filter_constant: f64,
    /// τ_gap: |Im λ| at or below this counts as real.
    pub gap_threshold: f64,
    pub endpoint_tolerance: f64,
    pub algorithm: Algorithm,
    pub solver: SolverOptions,
    /// Rerun with plain Arnoldi when SHIRA does not converge.
    pub fallback: bool,
    /// Also fall back when two unrelated eigenvalues are closer than this.
    pub cluster_fallback: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            omega_range: [0.0, 0.7],
            omega_step: 2e-3,
            theta_count: 17,
            n_eigs: 24,
            bz_filter_constant: 1.0,
            gap_threshold: 1e-6,
            endpoint_tolerance: 1e-5,
            algorithm: Algorithm::Shira,
            solver: SolverOptions::default(),
            fallback: true,
            cluster_fallback: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [a, b] = self.omega_range;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return bad(format!("omega_range must satisfy a < b, got [{a}, {b}]"));
        }
        if !(self.omega_step > 0.0) {
            return bad("omega_step must be positive".into());
        }
        if self.theta_count == 0 {
            return bad("theta_count must be at least 1".into());
        }
        if self.n_eigs == 0 {
            return bad("n_eigs must be at least 1".into());
        }
        if !(self.bz_filter_constant > 0.0) {
            return bad("bz_filter_constant must be positive".into());
        }
        if !(self.gap_threshold > self.solver.tol) {
            return bad(format!(
                "gap_threshold {} must exceed the solver tolerance {}",
                self.gap_threshold, self.solver.tol
            ));
        }
        if !(self.endpoint_tolerance > 0.0) {
            return bad("endpoint_tolerance must be positive".into());
        }
        Ok(())
    }

    pub fn thetas(&self) -> Vec<f64> {
        theta_grid(self.theta_count)
    }

    /// ω_a, ω_a + Δω, … up to ω_b.
    pub fn omegas(&self) -> Vec<f64> {
        let [a, b] = self.omega_range;
        let n = ((b - a) / self.omega_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| (a + i as f64 * self.omega_step).min(b))
            .collect()
    }
}

/// `count` equispaced angles on [0, π/4], both ends included.
pub fn theta_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n)
            .map(|i| THETA_MAX * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// An eigenvalue kept by the zone filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointEig {
    pub re_lambda: f64,
    pub im_lambda: f64,
    pub residual: f64,
    pub mirrored: bool,
}

impl PointEig {
    pub fn lambda(&self) -> C64 {
        C64::new(self.re_lambda, self.im_lambda)
    }
}

impl From<&Eigenpair> for PointEig {
    fn from(e: &Eigenpair) -> Self {
        let l = e.lambda();
        Self {
            re_lambda: l.re,
            im_lambda: l.im,
            residual: e.residual,
            mirrored: e.mirrored,
        }
    }
}

/// Entries with |λ| ≤ c / cos θ, for 0 ≤ θ ≤ π/4.
pub fn filter_bz(spectrum: &Spectrum, theta: f64, c: f64) -> Vec<PointEig> {
    debug_assert!((0.0..=THETA_MAX + 1e-12).contains(&theta));
    let bound = c / theta.cos();
    spectrum
        .entries
        .iter()
        .filter(|e| e.mu.norm() <= bound)
        .map(PointEig::from)
        .collect()
}

/// How a point's spectrum was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PointStatus {
    Converged,
    /// Converged after moving the shift.
    Retried,
    /// Converged only with the unstructured fallback solver.
    FellBack,
    /// No trustworthy spectrum; never counted as gap evidence.
    Indeterminate,
}

/// Filtered spectrum at one (ω, θ).
#[derive(Debug, Clone, Serialize)]
pub struct PointRecord {
    pub omega: f64,
    pub theta: f64,
    pub eigs: Vec<PointEig>,
    /// min |Im λ| over the filtered eigenvalues; infinite if none.
    pub min_im: f64,
    /// Filtered eigenvalues with |λ| ≤ τ_gap.
    pub zero_count: usize,
    pub status: PointStatus,
    pub n_wanted: usize,
    pub covered_radius: f64,
    pub isotropy_defect: Option<f64>,
    /// Largest residual among synthesized mirrors (0 if none).
    pub max_mirror_residual: f64,
}

impl PointRecord {
    pub fn is_determinate(&self) -> bool {
        self.status != PointStatus::Indeterminate
    }
}

/// Solver diagnostics accumulated over many points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolveSummary {
    pub points: usize,
    pub indeterminate: usize,
    pub fell_back: usize,
    pub max_mirror_residual: f64,
    /// Largest |⟨v_i, J v_j⟩| over every structured run.
    pub max_isotropy_defect: f64,
}

impl SolveSummary {
    pub fn absorb(&mut self, p: &PointRecord) {
        self.points += 1;
        self.indeterminate += usize::from(!p.is_determinate());
        self.fell_back += usize::from(p.status == PointStatus::FellBack);
        self.max_mirror_residual = self.max_mirror_residual.max(p.max_mirror_residual);
        if let Some(d) = p.isotropy_defect {
            self.max_isotropy_defect = self.max_isotropy_defect.max(d);
        }
    }

    pub fn merge(&mut self, o: &SolveSummary) {
        self.points += o.points;
        self.indeterminate += o.indeterminate;
        self.fell_back += o.fell_back;
        self.max_mirror_residual = self.max_mirror_residual.max(o.max_mirror_residual);
        self.max_isotropy_defect = self.max_isotropy_defect.max(o.max_isotropy_defect);
    }
}

fn perturb_shift(shift: C64) -> C64 {
    shift + C64::new(0.0131, 0.0173) * shift.norm().max(0.1)
}

/// Solve at one (ω, θ) and filter to the zone. Solver failures yield an
/// indeterminate record; only assembly and argument errors are returned.
pub fn solve_point(
    asm: &PencilAssembler,
    cfg: &SweepConfig,
    omega: f64,
    theta: f64,
) -> Result<PointRecord> {
    if !(0.0..=THETA_MAX + 1e-12).contains(&theta) {
        return Err(Error::Argument(format!("theta = {theta} outside [0, π/4]")));
    }
    let p = asm.pencil_at_angle(omega, theta)?;
    let bound = cfg.bz_filter_constant / theta.cos();
    let cap = (p.n_dofs() / 2).max(1).min(8 * cfg.n_eigs.max(4));
    let mut opts = cfg.solver.clone();
    opts.n_wanted = cfg.n_eigs.min(cap);
    opts.keep_vectors = false;

    let run = |opts: &SolverOptions| -> Result<Option<Spectrum>> {
        match qep::solve(&p, cfg.algorithm, opts, cfg.fallback, cfg.cluster_fallback) {
            Ok(s) if s.converged => Ok(Some(s)),
            Ok(_) => Ok(None),
            Err(Error::Factorization(_) | Error::Solver(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let mut status = PointStatus::Converged;
    let mut spec = run(&opts)?;
    if spec.is_none() {
        debug!(omega, theta, "retrying with a perturbed shift");
        opts.shift = perturb_shift(opts.shift);
        status = PointStatus::Retried;
        spec = run(&opts)?;
    }
    // widen the request until the filter window is covered
    let usable = |s: &Spectrum| {
        s.covered_radius() >= bound && s.stats.unresolved.iter().all(|mu| mu.norm() > bound)
    };
    loop {
        while let Some(s) = &spec {
            if s.covered_radius() >= bound || opts.n_wanted >= cap {
                break;
            }
            opts.n_wanted = (2 * opts.n_wanted).min(cap);
            debug!(
                omega,
                theta,
                n_wanted = opts.n_wanted,
                "window not covered; widening"
            );
            spec = run(&opts)?;
        }
        // an unresolved pair inside the window may resolve from another shift
        let retry = matches!(&spec, Some(s) if !usable(s)) && status != PointStatus::Retried;
        if !retry {
            break;
        }
        debug!(
            omega,
            theta, "unresolved pair in the window; moving the shift"
        );
        opts.shift = perturb_shift(opts.shift);
        status = PointStatus::Retried;
        spec = run(&opts)?;
    }
    let spec = spec.filter(|s| usable(s));

    let Some(spec) = spec else {
        warn!(omega, theta, "indeterminate point");
        return Ok(PointRecord {
            omega,
            theta,
            eigs: Vec::new(),
            min_im: f64::INFINITY,
            zero_count: 0,
            status: PointStatus::Indeterminate,
            n_wanted: opts.n_wanted,
            covered_radius: 0.0,
            isotropy_defect: None,
            max_mirror_residual: 0.0,
        });
    };
    if spec.stats.fell_back {
        status = PointStatus::FellBack;
    }
    let eigs = filter_bz(&spec, theta, cfg.bz_filter_constant);
    let min_im = eigs
        .iter()
        .map(|e| e.im_lambda.abs())
        .fold(f64::INFINITY, f64::min);
    let zero_count = eigs
        .iter()
        .filter(|e| e.lambda().norm() <= cfg.gap_threshold)
        .count();
    let max_mirror_residual = spec
        .entries
        .iter()
        .filter(|e| e.mirrored)
        .map(|e| e.residual)
        .fold(0.0, f64::max);
    Ok(PointRecord {
        omega,
        theta,
        eigs,
        min_im,
        zero_count,
        status,
        n_wanted: opts.n_wanted,
        covered_radius: spec.covered_radius(),
        isotropy_defect: spec.stats.isotropy_defect,
        max_mirror_residual,
    })
}

/// Classification of one frequency over all directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Gap,
    NoGap,
    Indeterminate,
}

/// All directions at one frequency.
#[derive(Debug, Clone, Serialize)]
pub struct FrequencyRecord {
    pub omega: f64,
    pub verdict: Verdict,
    /// min over θ of min |Im λ|, determinate points only.
    pub gap_margin: f64,
    pub points: Vec<PointRecord>,
}

/// A real eigenvalue at any determinate direction rules the gap out; an
/// indeterminate direction otherwise blocks a positive verdict.
pub fn classify(points: &[PointRecord], gap_threshold: f64) -> (Verdict, f64) {
    let margin = points
        .iter()
        .filter(|p| p.is_determinate())
        .map(|p| p.min_im)
        .fold(f64::INFINITY, f64::min);
    let verdict = if margin <= gap_threshold {
        Verdict::NoGap
    } else if points.iter().any(|p| !p.is_determinate()) {
        Verdict::Indeterminate
    } else {
        Verdict::Gap
    };
    (verdict, margin)
}

/// Evaluate every direction at `omega`. With `early_exit` the directions
/// are visited in order and the scan stops at the first real eigenvalue.
pub fn evaluate_frequency(
    asm: &PencilAssembler,
    cfg: &SweepConfig,
    omega: f64,
    early_exit: bool,
) -> Result<FrequencyRecord> {
    let thetas = cfg.thetas();
    let points = if early_exit {
        let mut pts = Vec::with_capacity(thetas.len());
        for &t in &thetas {
            let p = solve_point(asm, cfg, omega, t)?;
            let stop = p.is_determinate() && p.min_im <= cfg.gap_threshold;
            pts.push(p);
            if stop {
                break;
            }
        }
        pts
    } else {
        thetas
            .par_iter()
            .map(|&t| solve_point(asm, cfg, omega, t))
            .collect::<Result<Vec<_>>>()?
    };
    let (verdict, gap_margin) = classify(&points, cfg.gap_threshold);
    Ok(FrequencyRecord {
        omega,
        verdict,
        gap_margin,
        points,
    })
}

/// Gap decision at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapDecision {
    pub is_gap: bool,
    pub gap_margin: f64,
    pub indeterminate: bool,
}

pub fn is_gap_frequency(
    asm: &PencilAssembler,
    cfg: &SweepConfig,
    omega: f64,
) -> Result<GapDecision> {
    let r = evaluate_frequency(asm, cfg, omega, false)?;
    Ok(GapDecision {
        is_gap: r.verdict == Verdict::Gap,
        gap_margin: r.gap_margin,
        indeterminate: r.verdict == Verdict::Indeterminate,
    })
}

/// One band-gap interval. `lo`/`hi` are the gap-side ends of the final
/// bisection brackets; `lo_outside`/`hi_outside` the pass-band side, absent
/// when the gap reaches the end of the scanned range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapInterval {
    pub lo: f64,
    pub hi: f64,
    pub lo_outside: Option<f64>,
    pub hi_outside: Option<f64>,
    /// Smallest gap margin over the grid samples inside the interval.
    pub min_margin: f64,
    pub samples: usize,
    /// An indeterminate sample or bisection step touched this interval.
    pub indeterminate: bool,
}

impl GapInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy)]
struct Endpoint {
    inside: f64,
    outside: f64,
    indeterminate: bool,
}

/// Early-exit frequency evaluation that visits the directions most likely
/// to close the gap first. The order adapts after every call.
struct EdgeProbe<'a> {
    asm: &'a PencilAssembler,
    cfg: &'a SweepConfig,
    thetas: Vec<f64>,
    order: Vec<usize>,
    summary: SolveSummary,
}

impl<'a> EdgeProbe<'a> {
    fn new(asm: &'a PencilAssembler, cfg: &'a SweepConfig) -> Self {
        let thetas = cfg.thetas();
        let order = (0..thetas.len()).collect();
        Self {
            asm,
            cfg,
            thetas,
            order,
            summary: SolveSummary::default(),
        }
    }

    /// Visit directions in order of increasing margin at a gap-side sample.
    fn prioritize(&mut self, gap_side: &FrequencyRecord) {
        if gap_side.points.len() != self.thetas.len() {
            return;
        }
        let mut by_margin: Vec<(usize, f64)> = gap_side
            .points
            .iter()
            .map(|p| p.min_im)
            .enumerate()
            .collect();
        by_margin.sort_by(|a, b| a.1.total_cmp(&b.1));
        self.order = by_margin.into_iter().map(|(i, _)| i).collect();
    }

    fn eval(&mut self, omega: f64) -> Result<FrequencyRecord> {
        let tau = self.cfg.gap_threshold;
        let mut pts: Vec<(usize, PointRecord)> = Vec::with_capacity(self.order.len());
        let mut closing = None;
        // first direction alone, then fixed-size batches (fixed so the
        // search path does not depend on the thread count)
        let mut start = 0;
        while start < self.order.len() && closing.is_none() {
            let len = if start == 0 { 1 } else { EDGE_BATCH };
            let idx = &self.order[start..(start + len).min(self.order.len())];
            let got = idx
                .par_iter()
                .map(|&i| solve_point(self.asm, self.cfg, omega, self.thetas[i]).map(|p| (i, p)))
                .collect::<Result<Vec<_>>>()?;
            for (i, p) in got {
                self.summary.absorb(&p);
                if closing.is_none() && p.is_determinate() && p.min_im <= tau {
                    closing = Some(i);
                }
                pts.push((i, p));
            }
            start += len;
        }
        if let Some(i) = closing {
            self.order.retain(|&j| j != i);
            self.order.insert(0, i);
        }
        pts.sort_by_key(|(i, _)| *i);
        let points: Vec<PointRecord> = pts.into_iter().map(|(_, p)| p).collect();
        let (verdict, gap_margin) = classify(&points, tau);
        let rec = FrequencyRecord {
            omega,
            verdict,
            gap_margin,
            points,
        };
        if closing.is_none() {
            self.prioritize(&rec);
        }
        Ok(rec)
    }

    /// Shrink the bracket [pass-band `outside`, gap `inside`] below the
    /// endpoint tolerance.
    ///
    /// Bisection runs on the single direction that closes the gap at
    /// `outside`; the resulting gap-side end is then confirmed over all
    /// directions. If another direction closes there it becomes the critical
    /// one and the search resumes from the confirmed bracket.
    fn refine(&mut self, mut outside: f64, mut inside: f64) -> Result<Endpoint> {
        let tol = self.cfg.endpoint_tolerance;
        let tau = self.cfg.gap_threshold;
        let rec = self.eval(outside)?;
        if rec.verdict != Verdict::NoGap {
            return Ok(Endpoint {
                inside,
                outside,
                indeterminate: true,
            });
        }
        let mut indeterminate = false;
        loop {
            let theta = self.thetas[self.order[0]];
            let mut candidate = inside;
            while (candidate - outside).abs() > tol {
                let mid = 0.5 * (candidate + outside);
                let p = solve_point(self.asm, self.cfg, mid, theta)?;
                self.summary.absorb(&p);
                if !p.is_determinate() {
                    break;
                }
                if p.min_im <= tau {
                    outside = mid;
                } else {
                    candidate = mid;
                }
            }
            if candidate == inside {
                if (inside - outside).abs() > tol {
                    // critical direction indeterminate right at the bracket
                    indeterminate = true;
                }
                break;
            }
            let rec = self.eval(candidate)?;
            debug!(candidate, verdict = ?rec.verdict, solved = rec.points.len(), "edge candidate");
            match rec.verdict {
                Verdict::Gap => inside = candidate,
                Verdict::NoGap => outside = candidate,
                Verdict::Indeterminate => {
                    indeterminate = true;
                    break;
                }
            }
            if (inside - outside).abs() <= tol {
                break;
            }
        }
        debug!(inside, outside, "endpoint refined");
        Ok(Endpoint {
            inside,
            outside,
            indeterminate,
        })
    }
}

/// Provenance of a report.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub n_per_side: usize,
    pub h: f64,
    pub h_over_2pi: f64,
    pub n_dofs: usize,
    pub model_id: String,
    pub config_hash: Option<String>,
    pub algorithm: Algorithm,
    pub bz_filter_constant: f64,
    pub gap_threshold: f64,
    pub endpoint_tolerance: f64,
    pub omega_step: f64,
    pub theta_count: usize,
    pub version: String,
}

/// Short content hash of a material model.
pub fn model_id(model: &MaterialModel) -> String {
    let json = serde_json::to_string(model).expect("model serializes");
    hex::encode(&Sha256::digest(json.as_bytes())[..6])
}

/// Point on a real-eigenvalue surface λ(ω, θ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfacePoint {
    pub theta: f64,
    pub lambda: f64,
    pub omega: f64,
}

/// Full sweep output.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub provenance: Provenance,
    pub frequencies: Vec<FrequencyRecord>,
    pub gaps: Vec<GapInterval>,
    /// Diagnostics over every solve, endpoint refinement included.
    pub summary: SolveSummary,
}

impl GapReport {
    pub fn points(&self) -> impl Iterator<Item = &PointRecord> {
        self.frequencies.iter().flat_map(|f| f.points.iter())
    }

    pub fn indeterminate_count(&self) -> usize {
        self.points().filter(|p| !p.is_determinate()).count()
    }

    /// Real eigenvalues (|Im λ| ≤ τ_gap) sorted by (θ, λ, ω).
    pub fn surfaces(&self) -> Vec<SurfacePoint> {
        let tau = self.provenance.gap_threshold;
        let mut out: Vec<SurfacePoint> = self
            .points()
            .flat_map(|p| {
                p.eigs
                    .iter()
                    .filter(move |e| e.im_lambda.abs() <= tau)
                    .map(move |e| SurfacePoint {
                        theta: p.theta,
                        lambda: e.re_lambda,
                        omega: p.omega,
                    })
            })
            .collect();
        out.sort_by(|a, b| {
            a.theta
                .total_cmp(&b.theta)
                .then(a.lambda.total_cmp(&b.lambda))
                .then(a.omega.total_cmp(&b.omega))
        });
        out
    }

    /// (ω, θ, min |Im λ|) per point.
    pub fn tube(&self) -> Vec<(f64, f64, f64)> {
        self.points()
            .map(|p| (p.omega, p.theta, p.min_im))
            .collect()
    }
}

/// Scan the ω grid over all directions, group gap frequencies into
/// intervals and bisect each interior endpoint.
pub fn sweep_band_structure(
    cfg: &SweepConfig,
    mesh: &PeriodicMesh,
    model: &MaterialModel,
) -> Result<GapReport> {
    cfg.validate()?;
    cfg.solver.validate()?;
    let asm = PencilAssembler::new(mesh, model)?;
    for w in cfg.omega_range {
        model.check_frequency(w)?;
    }
    let provenance = Provenance {
        n_per_side: mesh.n_per_side(),
        h: mesh.h(),
        h_over_2pi: mesh.h() / (2.0 * PI),
        n_dofs: mesh.n_dofs(),
        model_id: model_id(model),
        config_hash: None,
        algorithm: cfg.algorithm,
        bz_filter_constant: cfg.bz_filter_constant,
        gap_threshold: cfg.gap_threshold,
        endpoint_tolerance: cfg.endpoint_tolerance,
        omega_step: cfg.omega_step,
        theta_count: cfg.theta_count,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };

    let omegas = cfg.omegas();
    let thetas = cfg.thetas();
    info!(
        n_omega = omegas.len(),
        n_theta = thetas.len(),
        n_dofs = mesh.n_dofs(),
        "sweep started"
    );
    let tasks: Vec<(f64, f64)> = omegas
        .iter()
        .flat_map(|&w| thetas.iter().map(move |&t| (w, t)))
        .collect();
    let points = tasks
        .par_iter()
        .map(|&(w, t)| solve_point(&asm, cfg, w, t))
        .collect::<Result<Vec<_>>>()?;
    let frequencies: Vec<FrequencyRecord> = points
        .chunks(thetas.len())
        .zip(&omegas)
        .map(|(chunk, &omega)| {
            let (verdict, gap_margin) = classify(chunk, cfg.gap_threshold);
            FrequencyRecord {
                omega,
                verdict,
                gap_margin,
                points: chunk.to_vec(),
            }
        })
        .collect();

    let mut summary = SolveSummary::default();
    for p in &points {
        summary.absorb(p);
    }
    let (gaps, refinement) = refine_runs(&asm, cfg, &frequencies)?;
    summary.merge(&refinement);
    info!(gaps = gaps.len(), "sweep finished");
    Ok(GapReport {
        provenance,
        frequencies,
        gaps,
        summary,
    })
}

/// Runs of non-pass-band samples containing at least one gap sample.
fn gap_runs(freqs: &[FrequencyRecord]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < freqs.len() {
        if freqs[i].verdict == Verdict::NoGap {
            i += 1;
            continue;
        }
        let start = i;
        while i < freqs.len() && freqs[i].verdict != Verdict::NoGap {
            i += 1;
        }
        if freqs[start..i].iter().any(|f| f.verdict == Verdict::Gap) {
            runs.push((start, i - 1));
        }
    }
    runs
}

fn refine_runs(
    asm: &PencilAssembler,
    cfg: &SweepConfig,
    freqs: &[FrequencyRecord],
) -> Result<(Vec<GapInterval>, SolveSummary)> {
    let runs = gap_runs(freqs);
    // endpoints bisect from the outermost gap sample of each run
    let first_gap =
        |a: usize, b: usize| (a..=b).find(|&i| freqs[i].verdict == Verdict::Gap).unwrap();
    let last_gap = |a: usize, b: usize| {
        (a..=b)
            .rev()
            .find(|&i| freqs[i].verdict == Verdict::Gap)
            .unwrap()
    };
    let mut jobs: Vec<(f64, usize)> = Vec::new();
    let mut slots: Vec<(Option<usize>, Option<usize>)> = Vec::new();
    for &(a, b) in &runs {
        let (fa, fb) = (first_gap(a, b), last_gap(a, b));
        let lo = (fa > 0 && a == fa).then(|| {
            jobs.push((freqs[fa - 1].omega, fa));
            jobs.len() - 1
        });
        let hi = (fb + 1 < freqs.len() && b == fb).then(|| {
            jobs.push((freqs[fb + 1].omega, fb));
            jobs.len() - 1
        });
        slots.push((lo, hi));
    }
    let ends = jobs
        .par_iter()
        .map(|&(out, inside)| {
            let mut probe = EdgeProbe::new(asm, cfg);
            probe.prioritize(&freqs[inside]);
            let e = probe.refine(out, freqs[inside].omega)?;
            Ok((e, probe.summary))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = SolveSummary::default();
    for (_, s) in &ends {
        summary.merge(s);
    }
    let ends: Vec<Endpoint> = ends.into_iter().map(|(e, _)| e).collect();

    let mut gaps = Vec::with_capacity(runs.len());
    for (&(a, b), &(lo, hi)) in runs.iter().zip(&slots) {
        let (fa, fb) = (first_gap(a, b), last_gap(a, b));
        let mut indeterminate = freqs[a..=b]
            .iter()
            .any(|f| f.verdict == Verdict::Indeterminate);
        let lo_end = lo.map(|j| ends[j]);
        let hi_end = hi.map(|j| ends[j]);
        indeterminate |=
            lo_end.is_some_and(|e| e.indeterminate) || hi_end.is_some_and(|e| e.indeterminate);
        let min_margin = freqs[a..=b]
            .iter()
            .filter(|f| f.verdict == Verdict::Gap)
            .map(|f| f.gap_margin)
            .fold(f64::INFINITY, f64::min);
        gaps.push(GapInterval {
            lo: lo_end.map_or(freqs[fa].omega, |e| e.inside),
            hi: hi_end.map_or(freqs[fb].omega, |e| e.inside),
            lo_outside: lo_end.map(|e| e.outside),
            hi_outside: hi_end.map(|e| e.outside),
            min_margin,
            samples: b + 1 - a,
            indeterminate,
        });
    }
    Ok((gaps, summary))
}

/// Relocate gap endpoints on another mesh starting from known intervals.
///
/// For each seed the midpoint must be a gap; each end is bracketed by
/// stepping `search` outward until the pass band is hit, then bisected.
pub fn refine_from_seeds(
    asm: &PencilAssembler,
    cfg: &SweepConfig,
    seeds: &[[f64; 2]],
    search: f64,
) -> Result<SeedRefinement> {
    cfg.validate()?;
    if !(search > 0.0) {
        return Err(Error::Argument("search step must be positive".into()));
    }
    let [wa, wb] = asm.model().valid_range;
    let clamp = |w: f64| w.clamp(wa, wb);
    let mut probe = EdgeProbe::new(asm, cfg);
    let mut out = Vec::with_capacity(seeds.len());
    for &[lo, hi] in seeds {
        let mid = 0.5 * (lo + hi);
        let centre = probe.eval(mid)?;
        let centre_order = probe.order.clone();
        if centre.verdict != Verdict::Gap {
            warn!(lo, hi, "seed midpoint is not a gap");
            out.push(None);
            continue;
        }
        let mut ends = [None, None];
        let mut indeterminate = false;
        for (slot, (seed, dir)) in ends.iter_mut().zip([(lo, -1.0), (hi, 1.0)]) {
            probe.order = centre_order.clone();
            let mut inside = mid;
            let p = clamp(seed - dir * search);
            if (p - mid) * dir > 0.0 {
                let r = probe.eval(p)?;
                if r.verdict == Verdict::Gap {
                    inside = p;
                }
            }
            let mut outside = clamp(seed + dir * search);
            let mut step = search;
            let mut reached = false;
            loop {
                let r = probe.eval(outside)?;
                match r.verdict {
                    Verdict::NoGap => {
                        reached = true;
                        break;
                    }
                    Verdict::Gap => inside = outside,
                    Verdict::Indeterminate => indeterminate = true,
                }
                step *= 2.0;
                let next = clamp(outside + dir * step);
                if next == outside {
                    break;
                }
                outside = next;
            }
            if reached {
                let e = probe.refine(outside, inside)?;
                indeterminate |= e.indeterminate;
                *slot = Some(e);
            } else {
                *slot = Some(Endpoint {
                    inside,
                    outside: f64::NAN,
                    indeterminate: true,
                });
                indeterminate = true;
            }
        }
        let [l, h] = ends.map(|e| e.expect("both ends visited"));
        out.push(Some(GapInterval {
            lo: l.inside,
            hi: h.inside,
            lo_outside: l.outside.is_finite().then_some(l.outside),
            hi_outside: h.outside.is_finite().then_some(h.outside),
            min_margin: centre.gap_margin,
            samples: 1,
            indeterminate,
        }));
    }
    Ok(SeedRefinement {
        gaps: out,
        summary: probe.summary,
    })
}

/// Result of [`refine_from_seeds`].
#[derive(Debug, Clone)]
pub struct SeedRefinement {
    /// One entry per seed; `None` when the seed midpoint is not a gap.
    pub gaps: Vec<Option<GapInterval>>,
    pub summary: SolveSummary,
}

/// Exact Bloch spectrum for constant ε: for each m ∈ ℤ² with
/// |m₁|, |m₂| ≤ `m_range`, λ = −m·k̂ ± √((m·k̂)² − |m|² + ω²ε). Sorted by
/// (Re λ, Im λ).
pub fn analytic_homogeneous_spectrum(
    omega: f64,
    k_hat: [f64; 2],
    eps: f64,
    m_range: i32,
) -> Vec<C64> {
    let r = m_range.max(0);
    let mut out = Vec::with_capacity(2 * (2 * r as usize + 1).pow(2));
    for m1 in -r..=r {
        for m2 in -r..=r {
            let (m1, m2) = (m1 as f64, m2 as f64);
            let mk = m1 * k_hat[0] + m2 * k_hat[1];
            let s = C64::new(mk * mk - (m1 * m1 + m2 * m2) + omega * omega * eps, 0.0).sqrt();
            out.push(-mk + s);
            out.push(-mk - s);
        }
    }
    out.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    out
}
