//! Command-line front end: `sweep`, `point`, `oracle`, `mesh-info`.
//!
//! Exit codes: 0 success, 1 internal failure, 2 configuration or argument
//! error, 3 solver indeterminate (artifacts still written), 4 I/O error.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tracing::info;

use crate::assembly::PencilAssembler;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mesh::PeriodicMesh;
use crate::output::{self, fmt9};
use crate::qep::Algorithm;
use crate::sweep::{self, GapReport, PointStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INDETERMINATE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "bandgap",
    version,
    about = "Band gaps of 2D periodic dielectric media"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Eigensolver; overrides `solver.algorithm`.
    #[arg(long, global = true, value_parser = parse_algorithm)]
    pub algorithm: Option<Algorithm>,
    /// Zone filter constant c in |λ| ≤ c / cos θ; overrides the config.
    #[arg(long, global = true, value_parser = parse_bz_constant)]
    pub bz_constant: Option<f64>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan the frequency range and write eigs.csv, gaps.json, tube.csv, surfaces.csv.
    Sweep,
    /// Solve at one (ω, θ) and print the filtered spectrum.
    Point {
        #[arg(long)]
        omega: f64,
        #[arg(long, allow_negative_numbers = true)]
        theta: f64,
    },
    /// Print the exact spectrum for constant permittivity.
    Oracle {
        #[arg(long, default_value_t = 0.0)]
        omega: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        theta: f64,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 2)]
        m_range: i32,
    },
    /// Mesh statistics; optionally dump the mesh or assembled matrices.
    MeshInfo {
        /// Mesh size; defaults to `mesh.n_per_side` from the config.
        #[arg(long)]
        n_per_side: Option<usize>,
        /// Write a plain-text node/element listing.
        #[arg(long, value_name = "PATH")]
        dump: Option<PathBuf>,
        /// Write M, G, K in Matrix Market format into this directory
        /// (needs --config).
        #[arg(long, value_name = "DIR")]
        matrices: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, requires = "matrices")]
        omega: f64,
        #[arg(long, default_value_t = 0.0, requires = "matrices")]
        theta: f64,
    },
}

fn parse_algorithm(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_bz_constant(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(c) if c == 1.0 || c == 0.5 => Ok(c),
        _ => Err(format!("expected 1.0 or 0.5, got `{s}`")),
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Argument(_)
        | Error::FrequencyOutOfRange { .. }
        | Error::Material(_)
        | Error::Mesh(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

/// Result of a successful command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Indeterminate,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Complete => EXIT_OK,
            Outcome::Indeterminate => EXIT_INDETERMINATE,
        }
    }
}

/// Load the config and apply command-line overrides.
pub fn effective_config(global: &GlobalArgs) -> Result<RunConfig> {
    let path = global
        .config
        .as_deref()
        .ok_or_else(|| Error::Argument("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(a) = global.algorithm {
        cfg.solver.algorithm = a;
    }
    if let Some(c) = global.bz_constant {
        cfg.sweep.bz_filter_constant = c;
    }
    if let Some(dir) = &global.out {
        cfg.output.directory = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run a parsed command, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<Outcome> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Error::Argument("--threads must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Solver(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, out))
}

fn dispatch(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<Outcome> {
    match &cli.command {
        Command::Sweep => run_sweep(&effective_config(&cli.global)?, out),
        Command::Point { omega, theta } => {
            run_point(&effective_config(&cli.global)?, *omega, *theta, out)
        }
        Command::Oracle {
            omega,
            theta,
            eps,
            m_range,
        } => run_oracle(*omega, *theta, *eps, *m_range, out),
        Command::MeshInfo {
            n_per_side,
            dump,
            matrices,
            omega,
            theta,
        } => {
            let cfg = match &cli.global.config {
                Some(_) => Some(effective_config(&cli.global)?),
                None => None,
            };
            let n = n_per_side
                .or(cfg.as_ref().map(|c| c.mesh.n_per_side))
                .ok_or_else(|| Error::Argument("need --n-per-side or --config".into()))?;
            let mat = match matrices {
                Some(dir) => {
                    let cfg = cfg
                        .as_ref()
                        .ok_or_else(|| Error::Argument("--matrices needs --config".into()))?;
                    Some((cfg, dir.as_path(), *omega, *theta))
                }
                None => None,
            };
            run_mesh_info(n, dump.as_deref(), mat, out)
        }
    }
}

/// Full sweep; artifacts go to `cfg.output.directory`.
pub fn run_sweep(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<Outcome> {
    let mesh = cfg.mesh()?;
    let mut report = sweep::sweep_band_structure(&cfg.sweep_config(), &mesh, &cfg.material)?;
    report.provenance.config_hash = Some(cfg.canonical_hash());
    let written = output::write_all(&report, &cfg.output.directory, &cfg.output.formats)?;
    for p in &written {
        info!(path = %p.display(), "wrote");
    }
    print_summary(&report, out)?;
    let flagged = report.indeterminate_count() > 0 || report.gaps.iter().any(|g| g.indeterminate);
    Ok(if flagged {
        Outcome::Indeterminate
    } else {
        Outcome::Complete
    })
}

fn print_summary(report: &GapReport, out: &mut (dyn Write + Send)) -> Result<()> {
    let p = &report.provenance;
    writeln!(
        out,
        "n_per_side {}  h/2pi {}  dofs {}  model {}",
        p.n_per_side,
        fmt9(p.h_over_2pi),
        p.n_dofs,
        p.model_id
    )?;
    writeln!(out, "gaps {}", report.gaps.len())?;
    for g in &report.gaps {
        writeln!(
            out,
            "  ({}, {}){}",
            fmt9(g.lo),
            fmt9(g.hi),
            if g.indeterminate {
                "  indeterminate"
            } else {
                ""
            }
        )?;
    }
    let n = report.indeterminate_count();
    if n > 0 {
        writeln!(out, "indeterminate points {n}")?;
    }
    Ok(())
}

/// Solve one (ω, θ) and print the filtered spectrum sorted by (Re λ, Im λ).
pub fn run_point(
    cfg: &RunConfig,
    omega: f64,
    theta: f64,
    out: &mut (dyn Write + Send),
) -> Result<Outcome> {
    if !(0.0..=sweep::THETA_MAX).contains(&theta) {
        return Err(Error::Argument(format!(
            "theta = {theta} outside [0, pi/4]"
        )));
    }
    cfg.material.check_frequency(omega)?;
    let mesh = cfg.mesh()?;
    let asm = PencilAssembler::new(&mesh, &cfg.material)?;
    let rec = sweep::solve_point(&asm, &cfg.sweep_config(), omega, theta)?;
    let mut eigs = rec.eigs.clone();
    eigs.sort_by(|a, b| {
        a.re_lambda
            .total_cmp(&b.re_lambda)
            .then(a.im_lambda.total_cmp(&b.im_lambda))
    });
    writeln!(out, "re_lambda,im_lambda,residual,mirrored_flag")?;
    for e in &eigs {
        writeln!(
            out,
            "{},{},{},{}",
            fmt9(e.re_lambda),
            fmt9(e.im_lambda),
            fmt9(e.residual),
            u8::from(e.mirrored)
        )?;
    }
    writeln!(
        out,
        "# status {:?}  min|Im| {}  covered {}",
        rec.status,
        fmt9(rec.min_im),
        fmt9(rec.covered_radius)
    )?;
    Ok(if rec.status == PointStatus::Indeterminate {
        Outcome::Indeterminate
    } else {
        Outcome::Complete
    })
}

/// Print the exact homogeneous-medium spectrum for k̂ = (cos θ, sin θ).
pub fn run_oracle(
    omega: f64,
    theta: f64,
    eps: f64,
    m_range: i32,
    out: &mut (dyn Write + Send),
) -> Result<Outcome> {
    if !omega.is_finite() || !theta.is_finite() || !(eps > 0.0) || m_range < 0 {
        return Err(Error::Argument(
            "oracle needs finite omega and theta, eps > 0, m_range >= 0".into(),
        ));
    }
    let k_hat = [theta.cos(), theta.sin()];
    writeln!(out, "re_lambda,im_lambda")?;
    for l in sweep::analytic_homogeneous_spectrum(omega, k_hat, eps, m_range) {
        writeln!(out, "{},{}", fmt9(l.re), fmt9(l.im))?;
    }
    Ok(Outcome::Complete)
}

pub fn run_mesh_info(
    n_per_side: usize,
    dump: Option<&Path>,
    matrices: Option<(&RunConfig, &Path, f64, f64)>,
    out: &mut (dyn Write + Send),
) -> Result<Outcome> {
    let mesh = PeriodicMesh::structured(n_per_side)?;
    writeln!(out, "n_per_side {}", mesh.n_per_side())?;
    writeln!(out, "h {}", fmt9(mesh.h()))?;
    writeln!(out, "h/2pi {}", fmt9(mesh.h() / (2.0 * PI)))?;
    writeln!(out, "element_order {}", mesh.element_order())?;
    writeln!(out, "cells {}", mesh.n_cells())?;
    writeln!(out, "dofs {}", mesh.n_dofs())?;
    writeln!(out, "area {}", fmt9(mesh.total_area()))?;
    if let Some(path) = dump {
        output::write_atomic(path, |w| mesh.write_dump(w))?;
    }
    if let Some((cfg, dir, omega, theta)) = matrices {
        let asm = PencilAssembler::new(&mesh, &cfg.material)?;
        writeln!(out, "nnz {}", asm.pattern().nnz())?;
        writeln!(
            out,
            "inclusion_area {}",
            fmt9(asm.quadrature_inclusion_area())
        )?;
        let p = asm.pencil_at_angle(omega, theta)?;
        std::fs::create_dir_all(dir)?;
        for (name, m) in [("M.mtx", &p.m), ("G.mtx", &p.g), ("K.mtx", &p.k)] {
            output::write_atomic(&dir.join(name), |w| m.write_matrix_market(w))?;
        }
    }
    Ok(Outcome::Complete)
}

/// Process entry: parse, run, map the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let level = match cli.global.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        2 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .try_init();
    match run(&cli, &mut std::io::stdout()) {
        Ok(o) => o.code(),
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "bandgap",
            "--config",
            "c.toml",
            "point",
            "--omega",
            "0.26",
            "--theta",
            "0",
            "--algorithm",
            "ira",
            "--bz-constant",
            "0.5",
            "--threads",
            "2",
        ])
        .unwrap();
        assert_eq!(cli.global.algorithm, Some(Algorithm::Ira));
        assert_eq!(cli.global.bz_constant, Some(0.5));
        assert_eq!(cli.global.threads, Some(2));
        assert!(matches!(cli.command, Command::Point { omega, .. } if omega == 0.26));
        for bad in [
            vec!["bandgap", "sweep", "--bz-constant", "0.7"],
            vec!["bandgap", "sweep", "--algorithm", "qz"],
            vec!["bandgap", "frobnicate"],
        ] {
            assert!(Cli::try_parse_from(bad).is_err());
        }
    }

    #[test]
    fn error_codes_are_distinct() {
        let io = Error::Io(std::io::Error::other("x"));
        let codes = [
            exit_code(&Error::Config("x".into())),
            exit_code(&io),
            exit_code(&Error::Solver("x".into())),
            Outcome::Indeterminate.code(),
            Outcome::Complete.code(),
        ];
        assert_eq!(codes, [2, 4, 1, 3, 0]);
    }

    #[test]
    fn oracle_prints_gaussian_integers() {
        let mut buf = Vec::new();
        run_oracle(0.0, 0.0, 1.0, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<(f64, f64)> = text
            .lines()
            .skip(1)
            .map(|l| {
                let (a, b) = l.split_once(',').unwrap();
                (a.parse().unwrap(), b.parse().unwrap())
            })
            .collect();
        assert_eq!(rows.len(), 18);
        for (re, im) in rows {
            assert_eq!(re, re.round());
            assert_eq!(im, im.round());
        }
    }
}
