//! Structured periodic mesh of the unit cell (-π, π]² with quadratic
//! Lagrange triangles.
//!
//! The geometric nodes live on the closed square [-π, π]² so every element
//! keeps affine, unwrapped coordinates. Periodicity is expressed only through
//! `node_dof`, which sends the nodes on x = π (resp. y = π) to the same
//! global index as their translates on x = -π (resp. y = -π).

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};

/// Number of nodes of a quadratic triangle.
pub const NODES_PER_CELL: usize = 6;

/// Area of the fundamental cell |Ω| = 4π².
pub const CELL_AREA: f64 = 4.0 * PI * PI;

/// A quadrature rule on the reference triangle (0,0), (1,0), (0,1).
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Highest total polynomial degree integrated exactly.
    pub degree: usize,
}

impl Quadrature {
    /// Symmetric six-point rule exact for polynomials of degree ≤ 4.
    pub fn degree4() -> Self {
        const A1: f64 = 0.445_948_490_915_964_886_318_329_253_883;
        const A2: f64 = 0.091_576_213_509_770_74;
        const W1: f64 = 0.223_381_589_678_011_465_944_945_892_584;
        const W2: f64 = 1.0 / 3.0 - W1;

        let mut points = Vec::with_capacity(6);
        let mut weights = Vec::with_capacity(6);
        for (a, w) in [(A1, W1), (A2, W2)] {
            let b = 1.0 - 2.0 * a;
            for bary in [[a, a, b], [a, b, a], [b, a, a]] {
                // reference coordinates are the barycentrics of vertices 1 and 2
                points.push([bary[1], bary[2]]);
                weights.push(0.5 * w);
            }
        }
        Self {
            points,
            weights,
            degree: 4,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integrate `f` over the reference triangle.
    pub fn integrate<F: Fn([f64; 2]) -> f64>(&self, f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }
}

/// Values and reference gradients of the six quadratic Lagrange basis
/// functions at `p`.
///
/// Local numbering: vertices 0, 1, 2 at (0,0), (1,0), (0,1), then the
/// midpoints of edges 0-1, 1-2 and 2-0.
pub fn shape_functions(p: [f64; 2]) -> ([f64; 6], [[f64; 2]; 6]) {
    let [xi, eta] = p;
    let l = [1.0 - xi - eta, xi, eta];
    let dl = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

    let mut values = [0.0; 6];
    let mut grads = [[0.0; 2]; 6];
    for i in 0..3 {
        values[i] = l[i] * (2.0 * l[i] - 1.0);
        let s = 4.0 * l[i] - 1.0;
        grads[i] = [s * dl[i][0], s * dl[i][1]];
    }
    for (k, (i, j)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
        values[3 + k] = 4.0 * l[i] * l[j];
        grads[3 + k] = [
            4.0 * (l[j] * dl[i][0] + l[i] * dl[j][0]),
            4.0 * (l[j] * dl[i][1] + l[i] * dl[j][1]),
        ];
    }
    (values, grads)
}

/// Affine map of one triangle: x = origin + J·ξ.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub origin: [f64; 2],
    /// Columns are the edge vectors v1 - v0 and v2 - v0.
    pub jacobian: [[f64; 2]; 2],
    pub det: f64,
    /// Inverse transpose of the Jacobian; maps reference gradients to
    /// physical gradients.
    pub inv_t: [[f64; 2]; 2],
}

impl AffineMap {
    pub fn from_vertices(v: &[[f64; 2]; 3]) -> Self {
        let j = [
            [v[1][0] - v[0][0], v[2][0] - v[0][0]],
            [v[1][1] - v[0][1], v[2][1] - v[0][1]],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inv_t = [
            [j[1][1] / det, -j[1][0] / det],
            [-j[0][1] / det, j[0][0] / det],
        ];
        Self {
            origin: v[0],
            jacobian: j,
            det,
            inv_t,
        }
    }

    pub fn map(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + self.jacobian[0][0] * p[0] + self.jacobian[0][1] * p[1],
            self.origin[1] + self.jacobian[1][0] * p[0] + self.jacobian[1][1] * p[1],
        ]
    }

    pub fn physical_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_t[0][0] * g[0] + self.inv_t[0][1] * g[1],
            self.inv_t[1][0] * g[0] + self.inv_t[1][1] * g[1],
        ]
    }
}

/// Quadratic triangle mesh of the torus Ω = (-π, π]².
#[derive(Debug, Clone)]
pub struct PeriodicMesh {
    n_per_side: usize,
    h: f64,
    /// Geometric nodes on the closed square, including both copies of
    /// boundary nodes.
    nodes: Vec<[f64; 2]>,
    /// Element connectivity into `nodes`, local order as in
    /// [`shape_functions`].
    cells: Vec<[usize; NODES_PER_CELL]>,
    /// Periodic identification node -> global degree of freedom.
    node_dof: Vec<usize>,
    n_dofs: usize,
}

impl PeriodicMesh {
    /// Square cells of width h = 2π / `n_per_side`, each split along the
    /// diagonal from its lower-left to its upper-right corner.
    pub fn structured(n_per_side: usize) -> Result<Self> {
        if n_per_side < 2 {
            return Err(Error::Mesh(format!(
                "n_per_side must be at least 2, got {n_per_side}"
            )));
        }
        let n = n_per_side;
        let h = 2.0 * PI / n as f64;
        // half-step lattice of (2n+1)² geometric nodes
        let side = 2 * n + 1;
        let period = 2 * n;
        let node_index = |a: usize, b: usize| b * side + a;

        let mut nodes = Vec::with_capacity(side * side);
        let mut node_dof = Vec::with_capacity(side * side);
        for b in 0..side {
            for a in 0..side {
                nodes.push([-PI + a as f64 * 0.5 * h, -PI + b as f64 * 0.5 * h]);
                node_dof.push((b % period) * period + a % period);
            }
        }

        let mut cells = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (a, b) = (2 * i, 2 * j);
                let p00 = (a, b);
                let p10 = (a + 2, b);
                let p11 = (a + 2, b + 2);
                let p01 = (a, b + 2);
                for tri in [[p00, p10, p11], [p00, p11, p01]] {
                    let mid =
                        |u: (usize, usize), v: (usize, usize)| ((u.0 + v.0) / 2, (u.1 + v.1) / 2);
                    let local = [
                        tri[0],
                        tri[1],
                        tri[2],
                        mid(tri[0], tri[1]),
                        mid(tri[1], tri[2]),
                        mid(tri[2], tri[0]),
                    ];
                    cells.push(local.map(|(x, y)| node_index(x, y)));
                }
            }
        }

        Ok(Self {
            n_per_side: n,
            h,
            nodes,
            cells,
            node_dof,
            n_dofs: period * period,
        })
    }

    pub fn n_per_side(&self) -> usize {
        self.n_per_side
    }

    /// Mesh width (side length of the square cells).
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn element_order(&self) -> usize {
        2
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn cells(&self) -> &[[usize; NODES_PER_CELL]] {
        &self.cells
    }

    pub fn node_dof(&self) -> &[usize] {
        &self.node_dof
    }

    /// Global degrees of freedom of one element in local order.
    pub fn cell_dofs(&self, cell: usize) -> [usize; NODES_PER_CELL] {
        self.cells[cell].map(|n| self.node_dof[n])
    }

    pub fn cell_vertices(&self, cell: usize) -> [[f64; 2]; 3] {
        let c = &self.cells[cell];
        [self.nodes[c[0]], self.nodes[c[1]], self.nodes[c[2]]]
    }

    pub fn cell_map(&self, cell: usize) -> AffineMap {
        AffineMap::from_vertices(&self.cell_vertices(cell))
    }

    /// Representative coordinates of each degree of freedom in (-π, π]².
    pub fn dof_coordinates(&self) -> Vec<[f64; 2]> {
        let mut coords = vec![[0.0; 2]; self.n_dofs];
        for (node, &dof) in self.node_dof.iter().enumerate() {
            coords[dof] = reduce_to_cell(self.nodes[node]);
        }
        coords
    }

    /// Sum of the element areas.
    pub fn total_area(&self) -> f64 {
        (0..self.n_cells())
            .map(|e| 0.5 * self.cell_map(e).det)
            .sum()
    }

    /// Plain-text listing: a `nodes` block with `id x1 x2` rows followed by
    /// an `elements` block with `id n0 .. n5` rows.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# nodes {}", self.nodes.len())?;
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(w, "{i} {:.9e} {:.9e}", p[0], p[1])?;
        }
        writeln!(w, "# elements {}", self.cells.len())?;
        for (e, c) in self.cells.iter().enumerate() {
            writeln!(
                w,
                "{e} {} {} {} {} {} {}",
                c[0], c[1], c[2], c[3], c[4], c[5]
            )?;
        }
        Ok(())
    }
}

/// Reduce a point to its representative in (-π, π]² modulo 2πℤ².
pub fn reduce_to_cell(x: [f64; 2]) -> [f64; 2] {
    x.map(|c| {
        let two_pi = 2.0 * PI;
        // r in [0, 2π)
        let r = (PI - c).rem_euclid(two_pi);
        PI - r
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn rejects_too_coarse() {
        assert!(PeriodicMesh::structured(1).is_err());
        assert!(PeriodicMesh::structured(0).is_err());
    }

    #[test]
    fn counts() {
        let m = PeriodicMesh::structured(2).unwrap();
        assert_eq!(m.n_cells(), 8);
        assert_eq!(m.n_dofs(), 16);
        let m = PeriodicMesh::structured(20).unwrap();
        assert_eq!(m.n_dofs(), 1600);
        assert!((m.h() / (2.0 * PI) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn area_and_orientation() {
        for n in [2, 3, 7, 16] {
            let m = PeriodicMesh::structured(n).unwrap();
            for e in 0..m.n_cells() {
                assert!(m.cell_map(e).det > 0.0);
            }
            let rel = (m.total_area() - CELL_AREA).abs() / CELL_AREA;
            assert!(rel < 1e-12, "n={n} rel={rel}");
        }
    }

    #[test]
    fn periodic_identification() {
        let m = PeriodicMesh::structured(5).unwrap();
        let nodes = m.nodes();
        let dofs = m.node_dof();
        for (i, p) in nodes.iter().enumerate() {
            for (j, q) in nodes.iter().enumerate() {
                let same_x =
                    (p[0] - q[0]).abs() < 1e-12 || ((p[0] - q[0]).abs() - 2.0 * PI).abs() < 1e-12;
                let same_y =
                    (p[1] - q[1]).abs() < 1e-12 || ((p[1] - q[1]).abs() - 2.0 * PI).abs() < 1e-12;
                assert_eq!(same_x && same_y, dofs[i] == dofs[j], "nodes {i} {j}");
            }
        }
        let image: HashSet<_> = dofs.iter().copied().collect();
        assert_eq!(image.len(), m.n_dofs());
        assert!(image.iter().all(|&d| d < m.n_dofs()));
    }

    #[test]
    fn identification_is_idempotent() {
        // mapping a dof back to a node and identifying again is the identity
        let m = PeriodicMesh::structured(4).unwrap();
        let mut rep = vec![usize::MAX; m.n_dofs()];
        for (node, &d) in m.node_dof().iter().enumerate() {
            rep[d] = node;
        }
        for (d, &node) in rep.iter().enumerate() {
            assert_eq!(m.node_dof()[node], d);
        }
    }

    #[test]
    fn dof_coordinates_are_canonical() {
        let m = PeriodicMesh::structured(3).unwrap();
        for c in m.dof_coordinates() {
            for x in c {
                assert!(x > -PI && x <= PI + 1e-12, "{x}");
            }
        }
    }

    #[test]
    fn shape_function_lagrange_property() {
        let nodes = [
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [0.5, 0.0],
            [0.5, 0.5],
            [0.0, 0.5],
        ];
        for (i, &p) in nodes.iter().enumerate() {
            let (v, _) = shape_functions(p);
            for (j, &vj) in v.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((vj - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shape_functions_at_centroid() {
        let (v, _) = shape_functions([1.0 / 3.0, 1.0 / 3.0]);
        for &x in &v[..3] {
            assert!((x + 1.0 / 9.0).abs() < 1e-15);
        }
        for &x in &v[3..] {
            assert!((x - 4.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn partition_of_unity_at_quadrature_points() {
        let q = Quadrature::degree4();
        for &p in &q.points {
            let (v, g) = shape_functions(p);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let gs = g.iter().fold([0.0, 0.0], |a, d| [a[0] + d[0], a[1] + d[1]]);
            assert!(gs[0].abs() < 1e-14 && gs[1].abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = [0.21, 0.37];
        let (_, g) = shape_functions(p);
        let d = 1e-6;
        for (k, gk) in g.iter().enumerate() {
            for axis in 0..2 {
                let mut a = p;
                let mut b = p;
                a[axis] += d;
                b[axis] -= d;
                let fd = (shape_functions(a).0[k] - shape_functions(b).0[k]) / (2.0 * d);
                assert!((fd - gk[axis]).abs() < 1e-8);
            }
        }
    }

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn quadrature_exact_to_degree_four() {
        let q = Quadrature::degree4();
        assert!(q.weights.iter().all(|&w| w > 0.0));
        assert!((q.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
        for p in 0..=4u32 {
            for r in 0..=(4 - p) {
                let exact = factorial(p) * factorial(r) / factorial(p + r + 2);
                let got = q.integrate(|x| x[0].powi(p as i32) * x[1].powi(r as i32));
                assert!((got - exact).abs() < 1e-14, "x^{p} y^{r}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn assembled_quadrature_integrates_constant() {
        let m = PeriodicMesh::structured(6).unwrap();
        let q = Quadrature::degree4();
        let total: f64 = (0..m.n_cells())
            .map(|e| m.cell_map(e).det * q.integrate(|_| 1.0))
            .sum();
        assert!((total - CELL_AREA).abs() / CELL_AREA < 1e-12);
    }

    #[test]
    fn reduce_to_cell_is_periodic() {
        let x = [0.3, -2.9];
        for (i, j) in [(1.0, 0.0), (-2.0, 3.0), (0.0, -1.0)] {
            let y = reduce_to_cell([x[0] + 2.0 * PI * i, x[1] + 2.0 * PI * j]);
            assert!((y[0] - x[0]).abs() < 1e-12 && (y[1] - x[1]).abs() < 1e-12);
        }
        assert_eq!(reduce_to_cell([-PI, PI])[0], PI);
    }

    #[test]
    fn dump_lists_nodes_and_elements() {
        let m = PeriodicMesh::structured(2).unwrap();
        let mut buf = Vec::new();
        m.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# nodes 25"));
        assert!(text.contains("# elements 8"));
        assert_eq!(text.lines().count(), 2 + 25 + 8);
    }
}
