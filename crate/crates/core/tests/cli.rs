use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bandgap::config::RunConfig;

const BIN: &str = env!("CARGO_BIN_EXE_bandgap");

fn config_text(
    n: usize,
    inclusion: &str,
    omega_range: [f64; 2],
    step: f64,
    thetas: usize,
) -> String {
    format!(
        r#"[mesh]
n_per_side = {n}

[material]
inclusion_center = [0.0, 0.0]
inclusion_radius = 2.356194490192345
valid_range = [0.0, 0.7]
background = {{ law = "constant", value = 1.0 }}
inclusion = {inclusion}

[sweep]
omega_range = [{}, {}]
omega_step = {step}
theta_count = {thetas}
"#,
        omega_range[0], omega_range[1]
    )
}

const DOBSON: &str = r#"{ law = "constant", value = 8.9 }"#;
const VACUUM: &str = r#"{ law = "constant", value = 1.0 }"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn malformed_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for text in [
        "this is not toml".to_string(),
        config_text(6, DOBSON, [0.0, 0.7], 0.05, 3) + "\n[solver]\ntolerence = 1e-9\n",
        config_text(1, DOBSON, [0.0, 0.7], 0.05, 3),
        config_text(6, DOBSON, [0.0, 0.9], 0.05, 3),
    ] {
        let cfg = write_config(dir.path(), &text);
        let o = run(&["--config", s(&cfg), "--out", s(&out), "sweep"]);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(!out.exists());
    }
    let o = run(&["--config", s(&dir.path().join("missing.toml")), "sweep"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config_text(4, DOBSON, [0.0, 0.7], 0.05, 3));
    for args in [
        vec![
            "--config",
            s(&cfg),
            "point",
            "--omega",
            "0.3",
            "--theta",
            "0.8",
        ],
        vec![
            "--config",
            s(&cfg),
            "point",
            "--omega",
            "0.3",
            "--theta",
            "-0.1",
        ],
        vec![
            "--config",
            s(&cfg),
            "point",
            "--omega",
            "0.9",
            "--theta",
            "0.1",
        ],
        vec![
            "--config",
            s(&cfg),
            "--threads",
            "0",
            "point",
            "--omega",
            "0.3",
            "--theta",
            "0",
        ],
        vec!["--config", s(&cfg), "--bz-constant", "2", "sweep"],
        vec!["point", "--omega", "0.3", "--theta", "0"],
        vec!["oracle", "--eps", "-1"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config_text(2, VACUUM, [0.1, 0.2], 0.1, 2));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = run(&["--config", s(&cfg), "--out", s(&out), "sweep"]);
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn homogeneous_sweep_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &config_text(4, VACUUM, [0.05, 0.7], 0.05, 5));
    let o = run(&["--config", s(&cfg), "--out", s(&out), "sweep"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let gaps: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("gaps.json")).unwrap()).unwrap();
    assert_eq!(gaps["schema"], "bandgap-gaps/1");
    assert_eq!(gaps["gaps"].as_array().unwrap().len(), 0);
    assert_eq!(gaps["margins"].as_array().unwrap().len(), 14);
    assert!(gaps["margins"]
        .as_array()
        .unwrap()
        .iter()
        .all(|m| m["verdict"] == "nogap"));
    let mut expected = RunConfig::load(&cfg).unwrap();
    expected.output.directory = out.clone();
    assert_eq!(
        gaps["provenance"]["config_hash"].as_str().unwrap(),
        expected.canonical_hash()
    );
    assert_eq!(gaps["provenance"]["n_dofs"], 64);

    let (h, eigs) = read_rows(&out.join("eigs.csv"));
    assert_eq!(
        h,
        [
            "omega",
            "theta",
            "re_lambda",
            "im_lambda",
            "residual",
            "mirrored_flag"
        ]
    );
    assert!(!eigs.is_empty());
    // sweep order: (omega, theta) nondecreasing lexicographically
    for w in eigs.windows(2) {
        assert!((w[0][0], w[0][1]) <= (w[1][0], w[1][1]));
    }
    for r in &eigs {
        let bound = 1.0 / r[1].cos();
        assert!(r[2].hypot(r[3]) <= bound * (1.0 + 1e-8));
        assert!(r[5] == 0.0 || r[5] == 1.0);
    }
    let (h, tube) = read_rows(&out.join("tube.csv"));
    assert_eq!(h, ["omega", "theta", "gap_margin"]);
    assert_eq!(tube.len(), 14 * 5);
    let (h, surf) = read_rows(&out.join("surfaces.csv"));
    assert_eq!(h, ["theta", "lambda", "omega"]);
    assert!(!surf.is_empty());
    for w in surf.windows(2) {
        assert!((w[0][0], w[0][1], w[0][2]) <= (w[1][0], w[1][1], w[1][2]));
    }
    // 9 significant digits at most
    let text = std::fs::read_to_string(out.join("eigs.csv")).unwrap();
    for field in text.lines().skip(1).flat_map(|l| l.split(',')) {
        let mantissa = field.split('e').next().unwrap();
        let digits = mantissa
            .chars()
            .filter(char::is_ascii_digit)
            .collect::<String>();
        assert!(digits.trim_start_matches('0').len() <= 9, "{field}");
    }
}

#[test]
fn sweep_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config_text(4, DOBSON, [0.2, 0.3], 0.02, 3));
    let out = dir.path().join("out");
    let mut files = Vec::new();
    for threads in ["1", "3"] {
        let o = run(&[
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--threads",
            threads,
            "sweep",
        ]);
        assert!(matches!(o.status.code(), Some(0 | 3)));
        files.push(
            ["eigs.csv", "gaps.json", "tube.csv", "surfaces.csv"]
                .map(|f| std::fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn dobson_coarse_sweep_finds_three_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &config_text(10, DOBSON, [0.0, 0.7], 0.02, 5));
    let o = run(&["--config", s(&cfg), "--out", s(&out), "sweep"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let gaps: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("gaps.json")).unwrap()).unwrap();
    let gaps = gaps["gaps"].as_array().unwrap();
    let table = [[0.24719, 0.27015], [0.41064, 0.45632], [0.61757, 0.66173]];
    assert_eq!(gaps.len(), 3);
    for (g, t) in gaps.iter().zip(table) {
        let (lo, hi) = (g["lo"].as_f64().unwrap(), g["hi"].as_f64().unwrap());
        assert!(lo < t[1] && hi > t[0], "({lo}, {hi}) vs {t:?}");
        assert!(hi - lo > 0.01);
    }
}

fn point_rows(stdout: &[u8]) -> Vec<(f64, f64)> {
    String::from_utf8_lossy(stdout)
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (v[0], v[1])
        })
        .collect()
}

#[test]
fn point_in_dobson_gap_has_no_real_eigenvalue() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config_text(10, DOBSON, [0.0, 0.7], 0.01, 17));
    let o = run(&[
        "--config",
        s(&cfg),
        "point",
        "--omega",
        "0.26",
        "--theta",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows = point_rows(&o.stdout);
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|(_, im)| im.abs() > 1e-6), "{rows:?}");
}

#[test]
fn homogeneous_point_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config_text(10, VACUUM, [0.0, 0.7], 0.01, 17));
    let (omega, theta) = ("0.3", "0.5");
    let o = run(&[
        "--config",
        s(&cfg),
        "point",
        "--omega",
        omega,
        "--theta",
        theta,
    ]);
    assert_eq!(o.status.code(), Some(0));
    let computed = point_rows(&o.stdout);
    let o = run(&[
        "oracle",
        "--omega",
        omega,
        "--theta",
        theta,
        "--m-range",
        "3",
    ]);
    let exact = point_rows(&o.stdout);
    // stay clear of the filter bound, where eigenvalues may sit on either side
    let bound = 0.95 / 0.5f64.cos();
    let near = |a: (f64, f64), set: &[(f64, f64)]| {
        set.iter()
            .map(|b| (a.0 - b.0).hypot(a.1 - b.1))
            .fold(f64::INFINITY, f64::min)
    };
    let inner = |v: &[(f64, f64)]| {
        v.iter()
            .copied()
            .filter(|p| p.0.hypot(p.1) <= bound)
            .collect::<Vec<_>>()
    };
    assert!(inner(&exact).len() >= 4);
    for e in inner(&exact) {
        assert!(near(e, &computed) < 1e-2, "{e:?} missing");
    }
    for c in inner(&computed) {
        assert!(near(c, &exact) < 1e-2, "{c:?} spurious");
    }
}

#[test]
fn oracle_subcommand() {
    let o = run(&["oracle", "--omega", "0", "--theta", "0", "--m-range", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = point_rows(&o.stdout);
    assert_eq!(rows.len(), 18);
    assert!(rows.contains(&(0.0, 1.0)) && rows.contains(&(-1.0, -1.0)));

    // ω = 0.5, m = 0: λ = ±0.5
    let o = run(&["oracle", "--omega", "0.5", "--m-range", "0"]);
    assert_eq!(point_rows(&o.stdout), vec![(-0.5, 0.0), (0.5, 0.0)]);
}

#[test]
fn mesh_info_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["mesh-info", "--n-per-side", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("dofs 36"), "{text}");
    assert!(text.contains("cells 18"));

    let cfg = write_config(dir.path(), &config_text(3, DOBSON, [0.0, 0.7], 0.01, 17));
    let dump = dir.path().join("mesh.txt");
    let mats = dir.path().join("mtx");
    let o = run(&[
        "--config",
        s(&cfg),
        "mesh-info",
        "--dump",
        s(&dump),
        "--matrices",
        s(&mats),
        "--omega",
        "0.3",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let listing = std::fs::read_to_string(&dump).unwrap();
    assert!(listing.starts_with("# nodes"));
    for m in ["M.mtx", "G.mtx", "K.mtx"] {
        let t = std::fs::read_to_string(mats.join(m)).unwrap();
        assert!(t.starts_with("%%MatrixMarket"), "{m}");
    }
    let o = run(&["mesh-info"]);
    assert_eq!(o.status.code(), Some(2));
}
