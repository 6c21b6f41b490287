//! Sweep artifacts: eigs.csv, gaps.json, tube.csv, surfaces.csv.
//!
//! Floats carry 9 significant digits. Each file is written to a temporary
//! sibling and renamed into place, so readers never see a partial file.
//!
//! gaps.json layout (`schema` = "bandgap-gaps/1"):
//!
//! ```text
//! { schema, provenance: { n_per_side, h, h_over_2pi, n_dofs, model_id,
//!                         config_hash, algorithm, bz_filter_constant,
//!                         gap_threshold, endpoint_tolerance, omega_step,
//!                         theta_count, version },
//!   gaps: [ { lo, hi, lo_outside, hi_outside, min_margin, samples,
//!             indeterminate } ],
//!   margins: [ { omega, gap_margin, verdict } ],
//!   zero_eigenvalues: [ { omega, theta, count } ],
//!   indeterminate_points: [ { omega, theta } ],
//!   solver_summary: { points, indeterminate, fell_back,
//!                     max_mirror_residual, max_isotropy_defect } }
//! ```
//! Infinite margins (no eigenvalue in the window) are written as null.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Format;
use crate::error::{Error, Result};
use crate::sweep::{GapInterval, GapReport, Provenance, SolveSummary, Verdict};

pub const GAPS_SCHEMA: &str = "bandgap-gaps/1";

/// Round to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// 9-significant-digit text form; plain notation for moderate magnitudes.
pub fn fmt9(x: f64) -> String {
    let r = sig9(x);
    let a = r.abs();
    if r == 0.0 {
        "0".to_string()
    } else if !r.is_finite() || (1e-4..1e9).contains(&a) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

/// Write `path` atomically through a temporary file in the same directory.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header).map_err(csv_err)?;
        for r in rows {
            out.write_record(&r).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    })
}

/// omega, theta, re_lambda, im_lambda, residual, mirrored_flag; rows in
/// sweep order, eigenvalues sorted by (Re λ, Im λ).
pub fn write_eigs_csv(report: &GapReport, path: &Path) -> Result<()> {
    let rows = report.points().flat_map(|p| {
        let mut eigs = p.eigs.clone();
        eigs.sort_by(|a, b| {
            a.re_lambda
                .total_cmp(&b.re_lambda)
                .then(a.im_lambda.total_cmp(&b.im_lambda))
        });
        eigs.into_iter().map(move |e| {
            vec![
                fmt9(p.omega),
                fmt9(p.theta),
                fmt9(e.re_lambda),
                fmt9(e.im_lambda),
                fmt9(e.residual),
                u8::from(e.mirrored).to_string(),
            ]
        })
    });
    write_csv(
        path,
        &[
            "omega",
            "theta",
            "re_lambda",
            "im_lambda",
            "residual",
            "mirrored_flag",
        ],
        rows,
    )
}

/// omega, theta, gap_margin (min |Im λ| at that point).
pub fn write_tube_csv(report: &GapReport, path: &Path) -> Result<()> {
    let rows = report
        .tube()
        .into_iter()
        .map(|(w, t, m)| vec![fmt9(w), fmt9(t), fmt9(m)]);
    write_csv(path, &["omega", "theta", "gap_margin"], rows)
}

/// theta, lambda, omega for real eigenvalues.
pub fn write_surfaces_csv(report: &GapReport, path: &Path) -> Result<()> {
    let rows = report
        .surfaces()
        .into_iter()
        .map(|s| vec![fmt9(s.theta), fmt9(s.lambda), fmt9(s.omega)]);
    write_csv(path, &["theta", "lambda", "omega"], rows)
}

#[derive(Debug, Serialize)]
struct Margin {
    omega: f64,
    gap_margin: Option<f64>,
    verdict: Verdict,
}

#[derive(Debug, Serialize)]
struct ZeroCount {
    omega: f64,
    theta: f64,
    count: usize,
}

#[derive(Debug, Serialize)]
struct PointRef {
    omega: f64,
    theta: f64,
}

#[derive(Debug, Serialize)]
struct GapsDocument {
    schema: &'static str,
    provenance: Provenance,
    gaps: Vec<GapInterval>,
    margins: Vec<Margin>,
    zero_eigenvalues: Vec<ZeroCount>,
    indeterminate_points: Vec<PointRef>,
    solver_summary: SolveSummary,
}

fn finite9(x: f64) -> Option<f64> {
    x.is_finite().then(|| sig9(x))
}

fn gaps_document(report: &GapReport) -> GapsDocument {
    let mut provenance = report.provenance.clone();
    provenance.h = sig9(provenance.h);
    provenance.h_over_2pi = sig9(provenance.h_over_2pi);
    let gaps = report
        .gaps
        .iter()
        .map(|g| GapInterval {
            lo: sig9(g.lo),
            hi: sig9(g.hi),
            lo_outside: g.lo_outside.map(sig9),
            hi_outside: g.hi_outside.map(sig9),
            min_margin: sig9(g.min_margin),
            ..g.clone()
        })
        .collect();
    GapsDocument {
        schema: GAPS_SCHEMA,
        provenance,
        gaps,
        margins: report
            .frequencies
            .iter()
            .map(|f| Margin {
                omega: sig9(f.omega),
                gap_margin: finite9(f.gap_margin),
                verdict: f.verdict,
            })
            .collect(),
        zero_eigenvalues: report
            .points()
            .filter(|p| p.zero_count > 0)
            .map(|p| ZeroCount {
                omega: sig9(p.omega),
                theta: sig9(p.theta),
                count: p.zero_count,
            })
            .collect(),
        indeterminate_points: report
            .points()
            .filter(|p| !p.is_determinate())
            .map(|p| PointRef {
                omega: sig9(p.omega),
                theta: sig9(p.theta),
            })
            .collect(),
        solver_summary: SolveSummary {
            max_mirror_residual: sig9(report.summary.max_mirror_residual),
            max_isotropy_defect: sig9(report.summary.max_isotropy_defect),
            ..report.summary
        },
    }
}

pub fn write_gaps_json(report: &GapReport, path: &Path) -> Result<()> {
    let doc = gaps_document(report);
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &doc).map_err(|e| Error::Io(e.into()))?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn file_name(format: Format) -> &'static str {
    match format {
        Format::Eigs => "eigs.csv",
        Format::Gaps => "gaps.json",
        Format::Tube => "tube.csv",
        Format::Surfaces => "surfaces.csv",
    }
}

/// Write the requested artifacts into `dir`, creating it if needed.
pub fn write_all(report: &GapReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &f in formats {
        let path = dir.join(file_name(f));
        match f {
            Format::Eigs => write_eigs_csv(report, &path)?,
            Format::Gaps => write_gaps_json(report, &path)?,
            Format::Tube => write_tube_csv(report, &path)?,
            Format::Surfaces => write_surfaces_csv(report, &path)?,
        }
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_digits() {
        assert_eq!(sig9(0.123456789123), 0.123456789);
        assert_eq!(fmt9(0.247193751234), "0.247193751");
        assert_eq!(fmt9(1.234567891234e-12), "1.23456789e-12");
        assert_eq!(fmt9(0.0), "0");
        assert_eq!(fmt9(-0.0), "0");
        assert_eq!(fmt9(f64::INFINITY), "inf");
        assert_eq!("inf".parse::<f64>().unwrap(), f64::INFINITY);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, |w| Ok(w.write_all(b"one")?)).unwrap();
        write_atomic(&p, |w| Ok(w.write_all(b"two")?)).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        let failed = write_atomic(&p, |_| Err(Error::Solver("boom".into())));
        assert!(failed.is_err());
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
