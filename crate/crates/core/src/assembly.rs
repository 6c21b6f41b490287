//! Finite-element assembly of the gyroscopic triple (M, G, K).
//!
//! The frequency- and direction-independent pieces (mass, stiffness, the two
//! directional first-order forms and the inclusion-weighted mass) are built
//! once per mesh and geometry; a pencil at (ω, k̂) is then a linear
//! combination of value arrays over one shared pattern.

use std::sync::{Arc, OnceLock};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lu::SparseLu;
use crate::material::{MaterialModel, Region};
use crate::mesh::{shape_functions, PeriodicMesh, Quadrature, NODES_PER_CELL};
use crate::sparse::{CsrMatrix, SparsePattern};

type C64 = Complex64;

/// Default depth of the subtriangle refinement of interface elements.
pub const INTERFACE_DEPTH: usize = 6;

type ElementMatrix = [[f64; NODES_PER_CELL]; NODES_PER_CELL];

/// Real gyroscopic pencil μ²M + μG + K at one (ω, k̂).
#[derive(Debug, Clone)]
pub struct PencilMatrices {
    pub m: CsrMatrix<f64>,
    pub g: CsrMatrix<f64>,
    pub k: CsrMatrix<f64>,
    pub omega: f64,
    pub k_hat: [f64; 2],
    mass_lu: Arc<OnceLock<SparseLu>>,
}

impl PencilMatrices {
    /// Build from explicit matrices; checks shapes and the symmetry structure.
    pub fn new(
        m: CsrMatrix<f64>,
        g: CsrMatrix<f64>,
        k: CsrMatrix<f64>,
        omega: f64,
        k_hat: [f64; 2],
    ) -> Result<Self> {
        let n = m.n();
        for other in [&g, &k] {
            if !Arc::ptr_eq(m.pattern(), other.pattern()) {
                return Err(Error::Assembly("matrices must share one pattern".into()));
            }
            if other.n() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: other.n(),
                });
            }
        }
        if m.max_asymmetry(1.0) != 0.0 || k.max_asymmetry(1.0) != 0.0 {
            return Err(Error::Assembly("M and K must be symmetric".into()));
        }
        if g.max_asymmetry(-1.0) != 0.0 {
            return Err(Error::Assembly("G must be skew-symmetric".into()));
        }
        Ok(Self {
            m,
            g,
            k,
            omega,
            k_hat,
            mass_lu: Arc::default(),
        })
    }

    /// Dense-input convenience for small problems and tests.
    pub fn from_dense(
        m: &nalgebra::DMatrix<f64>,
        g: &nalgebra::DMatrix<f64>,
        k: &nalgebra::DMatrix<f64>,
    ) -> Result<Self> {
        let n = m.nrows();
        if [m.ncols(), g.nrows(), g.ncols(), k.nrows(), k.ncols()]
            .iter()
            .any(|&d| d != n)
        {
            return Err(Error::Dimension {
                expected: n,
                got: g.nrows(),
            });
        }
        let pairs = (0..n).flat_map(|i| (0..n).map(move |j| (i, j)));
        let pattern = Arc::new(SparsePattern::from_pairs(n, pairs));
        let pick = |d: &nalgebra::DMatrix<f64>| {
            let vals = (0..n)
                .flat_map(|i| pattern.row_range(i).map(move |p| (i, p)))
                .map(|(i, p)| d[(i, pattern.col_idx()[p])])
                .collect();
            CsrMatrix::new(pattern.clone(), vals)
        };
        Self::new(pick(m)?, pick(g)?, pick(k)?, f64::NAN, [1.0, 0.0])
    }

    pub fn n_dofs(&self) -> usize {
        self.m.n()
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        self.m.pattern()
    }

    /// Values of Q(σ) = σ²M + σG + K on the shared pattern.
    pub fn q_values(&self, sigma: C64) -> Vec<C64> {
        let s2 = sigma * sigma;
        self.m
            .values()
            .iter()
            .zip(self.g.values())
            .zip(self.k.values())
            .map(|((&m, &g), &k)| s2 * m + sigma * g + k)
            .collect()
    }

    /// μ²Mu + μGu + Ku.
    pub fn apply(&self, mu: C64, u: &[C64]) -> Result<Vec<C64>> {
        if u.len() != self.n_dofs() {
            return Err(Error::Dimension {
                expected: self.n_dofs(),
                got: u.len(),
            });
        }
        let s2 = mu * mu;
        let pat = self.pattern();
        let cols = pat.col_idx();
        let (m, g, k) = (self.m.values(), self.g.values(), self.k.values());
        Ok((0..u.len())
            .map(|i| {
                let r = pat.row_range(i);
                let (mut am, mut ag, mut ak) = (C64::default(), C64::default(), C64::default());
                for (((&c, &mv), &gv), &kv) in cols[r.clone()]
                    .iter()
                    .zip(&m[r.clone()])
                    .zip(&g[r.clone()])
                    .zip(&k[r])
                {
                    let x = u[c];
                    am += x * mv;
                    ag += x * gv;
                    ak += x * kv;
                }
                s2 * am + mu * ag + ak
            })
            .collect())
    }

    /// LU factors of M, computed once and shared by every pencil built
    /// from the same assembler.
    pub fn mass_lu(&self) -> Result<&SparseLu> {
        if let Some(lu) = self.mass_lu.get() {
            return Ok(lu);
        }
        let vals = self.m.values().iter().map(|&v| C64::new(v, 0.0)).collect();
        let lu = SparseLu::factor(self.pattern(), vals)?;
        let _ = self.mass_lu.set(lu);
        Ok(self.mass_lu.get().expect("just set"))
    }

    /// ‖Q(μ)u‖ / ‖u‖.
    pub fn residual(&self, mu: C64, u: &[C64]) -> Result<f64> {
        let r = self.apply(mu, u)?;
        let un = norm(u);
        if un == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(norm(&r) / un)
    }
}

/// Free-function form of [`PencilMatrices::apply`].
pub fn apply_pencil(p: &PencilMatrices, mu: C64, u: &[C64]) -> Result<Vec<C64>> {
    p.apply(mu, u)
}

pub(crate) fn norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Pencil building blocks for one mesh and inclusion geometry.
#[derive(Debug, Clone)]
pub struct PencilAssembler {
    model: MaterialModel,
    h: f64,
    pattern: Arc<SparsePattern>,
    mass: Vec<f64>,
    mass_inclusion: Vec<f64>,
    stiffness: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
    mass_lu: Arc<OnceLock<SparseLu>>,
}

impl PencilAssembler {
    pub fn new(mesh: &PeriodicMesh, model: &MaterialModel) -> Result<Self> {
        Self::with_depth(mesh, model, INTERFACE_DEPTH)
    }

    pub fn with_depth(mesh: &PeriodicMesh, model: &MaterialModel, depth: usize) -> Result<Self> {
        let violations = model.validate();
        if let Some(v) = violations.first() {
            return Err(Error::Material(v.to_string()));
        }
        let n = mesh.n_dofs();
        let pairs = (0..mesh.n_cells()).flat_map(|c| {
            let d = mesh.cell_dofs(c);
            (0..NODES_PER_CELL).flat_map(move |a| (0..NODES_PER_CELL).map(move |b| (d[a], d[b])))
        });
        let pattern = Arc::new(SparsePattern::from_pairs(n, pairs));
        let nnz = pattern.nnz();
        let mut out = Self {
            model: model.clone(),
            h: mesh.h(),
            pattern: pattern.clone(),
            mass: vec![0.0; nnz],
            mass_inclusion: vec![0.0; nnz],
            stiffness: vec![0.0; nnz],
            gx: vec![0.0; nnz],
            gy: vec![0.0; nnz],
            mass_lu: Arc::default(),
        };
        let quad = Quadrature::degree4();
        let tables: Vec<_> = quad.points.iter().map(|&p| shape_functions(p)).collect();

        for cell in 0..mesh.n_cells() {
            let verts = mesh.cell_vertices(cell);
            let map = mesh.cell_map(cell);
            if !(map.det > 0.0) {
                return Err(Error::Assembly(format!(
                    "element {cell} has non-positive Jacobian {}",
                    map.det
                )));
            }
            let mut me = [[0.0; NODES_PER_CELL]; NODES_PER_CELL];
            let mut se = me;
            let mut px = me;
            let mut py = me;
            for ((val, grad), &w) in tables.iter().zip(&quad.weights) {
                let wd = w * map.det;
                let pg: Vec<[f64; 2]> = grad.iter().map(|&g| map.physical_gradient(g)).collect();
                for a in 0..NODES_PER_CELL {
                    for b in 0..NODES_PER_CELL {
                        me[a][b] += wd * (val[a] * val[b]);
                        se[a][b] += wd * (pg[a][0] * pg[b][0] + pg[a][1] * pg[b][1]);
                        px[a][b] += wd * val[a] * pg[b][0];
                        py[a][b] += wd * val[a] * pg[b][1];
                    }
                }
            }
            let mi = match model.classify_triangle(&verts) {
                Region::Background => None,
                Region::Inclusion => Some(me),
                Region::Interface => Some(interface_mass(model, &map, &quad, depth)),
            };
            let dofs = mesh.cell_dofs(cell);
            for a in 0..NODES_PER_CELL {
                for b in 0..NODES_PER_CELL {
                    let p = pattern.find(dofs[a], dofs[b]).expect("entry in pattern");
                    out.mass[p] += me[a][b];
                    out.stiffness[p] += se[a][b];
                    // G_ab = -2∫φ_b ∂φ_a, written in the skew form that
                    // integration by parts on the torus makes equivalent
                    out.gx[p] += px[a][b] - px[b][a];
                    out.gy[p] += py[a][b] - py[b][a];
                    if let Some(mi) = &mi {
                        out.mass_inclusion[p] += mi[a][b];
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn model(&self) -> &MaterialModel {
        &self.model
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_dofs(&self) -> usize {
        self.pattern.n()
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    /// Area of the inclusion as seen by the quadrature.
    pub fn quadrature_inclusion_area(&self) -> f64 {
        self.mass_inclusion.iter().sum()
    }

    /// Pencil at frequency `omega` and direction `k_hat`.
    pub fn pencil(&self, omega: f64, k_hat: [f64; 2]) -> Result<PencilMatrices> {
        check_direction(k_hat)?;
        let (eb, ei) = self.model.region_values(omega)?;
        let w2 = omega * omega;
        let k: Vec<f64> = (0..self.pattern.nnz())
            .map(|p| {
                let mi = self.mass_inclusion[p];
                w2 * (eb * (self.mass[p] - mi) + ei * mi) - self.stiffness[p]
            })
            .collect();
        let g: Vec<f64> = self
            .gx
            .iter()
            .zip(&self.gy)
            .map(|(&x, &y)| k_hat[0] * x + k_hat[1] * y)
            .collect();
        let pat = self.pattern.clone();
        Ok(PencilMatrices {
            m: CsrMatrix::new(pat.clone(), self.mass.clone())?,
            g: CsrMatrix::new(pat.clone(), g)?,
            k: CsrMatrix::new(pat, k)?,
            omega,
            k_hat,
            mass_lu: self.mass_lu.clone(),
        })
    }

    /// Pencil at direction angle `theta`.
    pub fn pencil_at_angle(&self, omega: f64, theta: f64) -> Result<PencilMatrices> {
        self.pencil(omega, [theta.cos(), theta.sin()])
    }
}

fn check_direction(k_hat: [f64; 2]) -> Result<()> {
    let len = k_hat[0].hypot(k_hat[1]);
    if !((len - 1.0).abs() <= 1e-12) {
        return Err(Error::Argument(format!(
            "k_hat must be a unit vector, |k_hat| = {len}"
        )));
    }
    Ok(())
}

/// One-shot assembly; prefer [`PencilAssembler`] when sweeping.
pub fn assemble_pencil(
    mesh: &PeriodicMesh,
    model: &MaterialModel,
    omega: f64,
    k_hat: [f64; 2],
) -> Result<PencilMatrices> {
    check_direction(k_hat)?;
    model.check_frequency(omega)?;
    PencilAssembler::new(mesh, model)?.pencil(omega, k_hat)
}

/// ∫_{T ∩ disk} φ_a φ_b over an interface element, by recursive subdivision
/// of the cut subtriangles in reference coordinates.
fn interface_mass(
    model: &MaterialModel,
    map: &crate::mesh::AffineMap,
    quad: &Quadrature,
    depth: usize,
) -> ElementMatrix {
    let mut acc = [[0.0; NODES_PER_CELL]; NODES_PER_CELL];
    let root = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let mut stack = vec![(root, 0usize)];
    while let Some((tri, level)) = stack.pop() {
        let phys = [map.map(tri[0]), map.map(tri[1]), map.map(tri[2])];
        let region = if level == 0 {
            Region::Interface
        } else {
            model.classify_triangle(&phys)
        };
        match region {
            Region::Background => {}
            Region::Interface if level < depth => {
                let mid = |a: [f64; 2], b: [f64; 2]| [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
                let (m01, m12, m20) = (
                    mid(tri[0], tri[1]),
                    mid(tri[1], tri[2]),
                    mid(tri[2], tri[0]),
                );
                stack.push(([tri[0], m01, m20], level + 1));
                stack.push(([m01, tri[1], m12], level + 1));
                stack.push(([m20, m12, tri[2]], level + 1));
                stack.push(([m12, m20, m01], level + 1));
            }
            _ => {
                let inside_all = region == Region::Inclusion;
                let sub_area = ((tri[1][0] - tri[0][0]) * (tri[2][1] - tri[0][1])
                    - (tri[2][0] - tri[0][0]) * (tri[1][1] - tri[0][1]))
                    .abs();
                for (q, &w) in quad.points.iter().zip(&quad.weights) {
                    let xi = [
                        tri[0][0] + (tri[1][0] - tri[0][0]) * q[0] + (tri[2][0] - tri[0][0]) * q[1],
                        tri[0][1] + (tri[1][1] - tri[0][1]) * q[0] + (tri[2][1] - tri[0][1]) * q[1],
                    ];
                    if !inside_all && !model.in_inclusion(map.map(xi)) {
                        continue;
                    }
                    let (val, _) = shape_functions(xi);
                    let wd = w * sub_area * map.det;
                    for a in 0..NODES_PER_CELL {
                        for b in 0..NODES_PER_CELL {
                            acc[a][b] += wd * (val[a] * val[b]);
                        }
                    }
                }
            }
        }
    }
    acc
}
