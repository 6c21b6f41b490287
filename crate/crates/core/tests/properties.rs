use std::f64::consts::PI;

use bandgap::assembly::{PencilAssembler, PencilMatrices};
use bandgap::config::RunConfig;
use bandgap::material::MaterialModel;
use bandgap::mesh::{reduce_to_cell, PeriodicMesh};
use bandgap::output::{fmt9, sig9};
use bandgap::qep::{self, Algorithm, Eigenpair, SolveStats, Spectrum};
use bandgap::sweep::{
    analytic_homogeneous_spectrum, classify, filter_bz, solve_point, PointRecord, PointStatus,
    SweepConfig, Verdict, THETA_MAX,
};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn structured_pencil(n: usize, vals: &[f64]) -> PencilMatrices {
    let mut it = vals.iter().copied().cycle();
    let mut rnd = |_, _| it.next().unwrap();
    let a = DMatrix::from_fn(n, n, &mut rnd);
    let b = DMatrix::from_fn(n, n, &mut rnd);
    let c = DMatrix::from_fn(n, n, &mut rnd);
    let x = a.transpose() * &a + DMatrix::identity(n, n);
    let m = (&x + x.transpose()) * 0.5;
    let g = &b - b.transpose();
    let k = &c + c.transpose();
    PencilMatrices::from_dense(&m, &g, &k).unwrap()
}

fn record(min_ims: Option<f64>) -> PointRecord {
    PointRecord {
        omega: 0.3,
        theta: 0.0,
        eigs: Vec::new(),
        min_im: min_ims.unwrap_or(f64::INFINITY),
        zero_count: 0,
        status: if min_ims.is_some() {
            PointStatus::Converged
        } else {
            PointStatus::Indeterminate
        },
        n_wanted: 24,
        covered_radius: 2.0,
        isotropy_defect: None,
        max_mirror_residual: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permittivity_is_periodic(
        x in -3.0 * PI..3.0 * PI,
        y in -3.0 * PI..3.0 * PI,
        i in -3i32..=3,
        j in -3i32..=3,
        w in 0.0f64..0.7,
    ) {
        let m = MaterialModel::rational_cylinders();
        let shifted = [x + 2.0 * PI * i as f64, y + 2.0 * PI * j as f64];
        let r = reduce_to_cell([x, y]);
        prop_assert!(r.iter().all(|c| *c > -PI - 1e-12 && *c <= PI + 1e-12));
        let a = m.eval_permittivity([x, y], w).unwrap();
        let b = m.eval_permittivity(shifted, w).unwrap();
        // points within rounding of the disk boundary may flip
        let on_edge = (r[0].hypot(r[1]) - m.inclusion_radius).abs() < 1e-9;
        prop_assert!(a == b || on_edge);
    }

    #[test]
    fn dense_spectrum_is_quadruple_closed(
        n in 2usize..7,
        vals in prop::collection::vec(-1.0f64..1.0, 8..40),
    ) {
        let p = structured_pencil(n, &vals);
        let s = qep::dense_eigs(&p).unwrap();
        let mus: Vec<C64> = s.entries.iter().map(|e| e.mu).collect();
        prop_assert_eq!(mus.len(), 2 * n);
        let scale = mus.iter().map(|m| m.norm()).fold(1.0, f64::max);
        for &mu in &mus {
            for img in [mu.conj(), -mu, -mu.conj()] {
                let d = mus.iter().map(|x| (x - img).norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(d < 1e-6 * scale, "{} missing {}", mu, img);
            }
        }
    }

    #[test]
    fn analytic_spectrum_translation(
        w in 0.0f64..0.7,
        eps in 1.0f64..10.0,
    ) {
        let r = 6;
        let all = analytic_homogeneous_spectrum(w, [1.0, 0.0], eps, r);
        // m = (m1, m2) maps to (m1 - 1, m2): λ ↦ λ + 1
        for l in all.iter().filter(|l| l.re.abs() < (r - 3) as f64 && l.im.abs() < 2.0) {
            let t = l + 1.0;
            let d = all.iter().map(|x| (x - t).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(d < 1e-9, "{} + 1 missing", l);
        }
    }

    #[test]
    fn filter_keeps_exactly_the_zone(
        theta in 0.0f64..=THETA_MAX,
        c in prop::sample::select(vec![0.5, 1.0]),
        pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 0..30),
    ) {
        let spectrum = Spectrum {
            entries: pts
                .iter()
                .map(|&(re, im)| Eigenpair {
                    mu: qep::lambda_to_mu(C64::new(re, im)),
                    residual: 0.0,
                    mirrored: false,
                    vector: None,
                })
                .collect(),
            shift: qep::DEFAULT_SHIFT,
            algorithm: Algorithm::Dense,
            converged: true,
            stats: SolveStats::default(),
        };
        let kept = filter_bz(&spectrum, theta, c);
        let bound = c / theta.cos();
        let inside = pts.iter().filter(|(a, b)| a.hypot(*b) <= bound).count();
        prop_assert_eq!(kept.len(), inside);
        for e in kept {
            prop_assert!(e.re_lambda.hypot(e.im_lambda) <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn classification_rules(
        margins in prop::collection::vec(prop::option::weighted(0.9, 0.0f64..0.2), 1..17),
        tau in prop::sample::select(vec![1e-6, 1e-3, 0.05]),
    ) {
        let points: Vec<PointRecord> = margins.iter().map(|&m| record(m)).collect();
        let (v, margin) = classify(&points, tau);
        let det_min = margins.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(margin, det_min);
        let expected = if det_min <= tau {
            Verdict::NoGap
        } else if margins.iter().any(Option::is_none) {
            Verdict::Indeterminate
        } else {
            Verdict::Gap
        };
        prop_assert_eq!(v, expected);
    }

    #[test]
    fn nine_digit_output_round_trips(x in prop::num::f64::NORMAL) {
        let r: f64 = fmt9(x).parse().unwrap();
        prop_assert_eq!(r, sig9(x));
        prop_assert!(((r - x) / x).abs() <= 5.0000001e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn assembled_pencil_structure(
        n in 2usize..6,
        w in 0.0f64..0.7,
        theta in 0.0f64..=THETA_MAX,
    ) {
        let mesh = PeriodicMesh::structured(n).unwrap();
        let asm = PencilAssembler::new(&mesh, &MaterialModel::rational_cylinders()).unwrap();
        let p = asm.pencil_at_angle(w, theta).unwrap();
        prop_assert_eq!(p.m.max_asymmetry(1.0), 0.0);
        prop_assert_eq!(p.k.max_asymmetry(1.0), 0.0);
        prop_assert_eq!(p.g.max_asymmetry(-1.0), 0.0);
        // Q(−μ) = Q(μ)ᵀ on a probe vector pair
        let mu = C64::new(0.3, -0.7);
        let u: Vec<C64> = (0..p.n_dofs()).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.7).cos())).collect();
        let v: Vec<C64> = (0..p.n_dofs()).map(|i| C64::new((i as f64 * 1.3).cos(), 0.2)).collect();
        let dot = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<C64>();
        let lhs = dot(&v, &p.apply(mu, &u).unwrap());
        let rhs = dot(&u, &p.apply(-mu, &v).unwrap());
        prop_assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn config_round_trip(
        n in 2usize..200,
        step in 1e-4f64..0.1,
        thetas in 1usize..40,
        c in prop::sample::select(vec![0.5, 1.0]),
        tol in 1e-14f64..1e-6,
        seed in 0..=i64::MAX as u64,
        alg in prop::sample::select(vec![Algorithm::Shira, Algorithm::Ira, Algorithm::Dense]),
    ) {
        let base = format!(
            "[mesh]\nn_per_side = {n}\n[material]\ninclusion_center = [0.0, 0.0]\n\
             inclusion_radius = 2.0\nvalid_range = [0.0, 0.7]\n\
             background = {{ law = \"constant\", value = 1.0 }}\n\
             inclusion = {{ law = \"rational\", a = 1.0, b = 5.34, c = 1.0 }}\n"
        );
        let mut cfg = RunConfig::from_toml(&base).unwrap();
        cfg.sweep.omega_step = step;
        cfg.sweep.theta_count = thetas;
        cfg.sweep.bz_filter_constant = c;
        cfg.solver.tolerance = tol;
        cfg.solver.seed = seed;
        cfg.solver.algorithm = alg;
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.canonical_hash(), cfg.canonical_hash());
    }
}

#[test]
fn point_solves_are_deterministic() {
    let mesh = PeriodicMesh::structured(6).unwrap();
    let asm = PencilAssembler::new(&mesh, &MaterialModel::dobson()).unwrap();
    let cfg = SweepConfig::default();
    for (w, t) in [(0.26, 0.0), (0.35, 0.4), (0.6, THETA_MAX)] {
        let a = solve_point(&asm, &cfg, w, t).unwrap();
        let b = solve_point(&asm, &cfg, w, t).unwrap();
        assert_eq!(a.eigs, b.eigs);
        assert_eq!(a.status, b.status);
    }
}
