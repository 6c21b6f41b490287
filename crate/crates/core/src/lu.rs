//! Sparse LDU factorization for structurally symmetric complex matrices.
//!
//! Fill-reducing nested-dissection ordering, elimination-tree symbolic
//! analysis and an up-looking numeric phase. Tiny pivots are statically
//! perturbed and repaired by iterative refinement.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sparse::SparsePattern;

type C64 = Complex64;

const NONE: usize = usize::MAX;
const LEAF_SIZE: usize = 48;
const PIVOT_REL: f64 = 1e-13;
const MAX_REFINE: usize = 6;

/// Fill-reducing permutation from recursive level-structure bisection.
/// Returns `perm` with `perm[new] = old`.
pub fn nested_dissection(pattern: &SparsePattern) -> Vec<usize> {
    let n = pattern.n();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            pattern
                .row_range(i)
                .map(|p| pattern.col_idx()[p])
                .filter(|&j| j != i)
                .collect()
        })
        .collect();
    let mut nd = Dissector {
        adj: &adj,
        in_set: vec![false; n],
        level: vec![usize::MAX; n],
        order: Vec::with_capacity(n),
    };
    nd.dissect((0..n).collect());
    debug_assert_eq!(nd.order.len(), n);
    nd.order
}

struct Dissector<'a> {
    adj: &'a [Vec<usize>],
    in_set: Vec<bool>,
    level: Vec<usize>,
    order: Vec<usize>,
}

impl Dissector<'_> {
    fn dissect(&mut self, set: Vec<usize>) {
        if set.len() <= LEAF_SIZE {
            self.order.extend(set);
            return;
        }
        for &v in &set {
            self.in_set[v] = true;
        }
        let components = self.components(&set);
        for &v in &set {
            self.in_set[v] = false;
        }
        for comp in components {
            self.bisect(comp);
        }
    }

    fn components(&mut self, set: &[usize]) -> Vec<Vec<usize>> {
        let mut seen: Vec<usize> = Vec::new();
        let mut out = Vec::new();
        for &s in set {
            if self.level[s] != usize::MAX {
                continue;
            }
            let comp = self.bfs(s);
            for &v in &comp {
                seen.push(v);
            }
            out.push(comp);
        }
        for v in seen {
            self.level[v] = usize::MAX;
        }
        out
    }

    /// BFS within `in_set`, recording levels. Leaves levels set.
    fn bfs(&mut self, root: usize) -> Vec<usize> {
        let mut queue = vec![root];
        self.level[root] = 0;
        let mut head = 0;
        while head < queue.len() {
            let v = queue[head];
            head += 1;
            for &w in &self.adj[v] {
                if self.in_set[w] && self.level[w] == usize::MAX {
                    self.level[w] = self.level[v] + 1;
                    queue.push(w);
                }
            }
        }
        queue
    }

    fn clear_levels(&mut self, nodes: &[usize]) {
        for &v in nodes {
            self.level[v] = usize::MAX;
        }
    }

    fn bisect(&mut self, comp: Vec<usize>) {
        if comp.len() <= LEAF_SIZE {
            self.order.extend(comp);
            return;
        }
        for &v in &comp {
            self.in_set[v] = true;
        }
        // pseudo-peripheral root
        let mut root = comp[0];
        let mut order = self.bfs(root);
        let mut depth = self.level[*order.last().unwrap()];
        for _ in 0..4 {
            let last = self.level[*order.last().unwrap()];
            let cand = order
                .iter()
                .rev()
                .take_while(|&&v| self.level[v] == last)
                .copied()
                .min_by_key(|&v| self.adj[v].len())
                .unwrap();
            self.clear_levels(&order);
            let next = self.bfs(cand);
            let d = self.level[*next.last().unwrap()];
            if d > depth {
                depth = d;
                root = cand;
                order = next;
            } else {
                self.clear_levels(&next);
                order = self.bfs(root);
                break;
            }
        }
        let nlev = depth + 1;
        if nlev < 3 {
            self.clear_levels(&order);
            for &v in &comp {
                self.in_set[v] = false;
            }
            self.order.extend(comp);
            return;
        }
        let mut counts = vec![0usize; nlev];
        for &v in &order {
            counts[self.level[v]] += 1;
        }
        let half = comp.len() / 2;
        let mut cum = 0;
        let mut sep_level = 1;
        for (l, &c) in counts.iter().enumerate() {
            cum += c;
            if cum >= half {
                sep_level = l;
                break;
            }
        }
        sep_level = sep_level.clamp(1, nlev - 2);
        let mut part_a = Vec::new();
        let mut part_b = Vec::new();
        let mut sep = Vec::new();
        for &v in &order {
            let l = self.level[v];
            if l < sep_level {
                part_a.push(v);
            } else if l > sep_level {
                part_b.push(v);
            } else if self.adj[v]
                .iter()
                .any(|&w| self.in_set[w] && self.level[w] == sep_level + 1)
            {
                sep.push(v);
            } else {
                part_a.push(v);
            }
        }
        self.clear_levels(&order);
        for &v in &comp {
            self.in_set[v] = false;
        }
        self.dissect(part_a);
        self.dissect(part_b);
        self.order.extend(sep);
    }
}

/// Ordering and fill structure of the factors; depends only on the pattern.
#[derive(Debug)]
pub struct SymbolicLu {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    /// Strict-lower row structure of L in permuted indices, ascending.
    row_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Column structure of L: rows of column j, ascending.
    col_ptr: Vec<usize>,
    col_rows: Vec<usize>,
    /// For row k, position in the column store of each L[k, j] listed in
    /// the row structure.
    row_slot: Vec<usize>,
}

impl SymbolicLu {
    pub fn analyze(pattern: &SparsePattern) -> Self {
        let n = pattern.n();
        let perm = nested_dissection(pattern);
        let mut iperm = vec![0; n];
        for (k, &old) in perm.iter().enumerate() {
            iperm[old] = k;
        }
        let cols = pattern.col_idx();
        let iperm_ref = &iperm;
        let perm_ref = &perm;
        let padj = |k: usize| {
            pattern
                .row_range(perm_ref[k])
                .map(move |p| iperm_ref[cols[p]])
        };

        // elimination tree
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for i0 in padj(k) {
                let mut i = i0;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // row structures via elimination-tree reach
        let mut mark = vec![NONE; n];
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut col_count = vec![0usize; n];
        row_ptr.push(0);
        for k in 0..n {
            mark[k] = k;
            let start = row_idx.len();
            for i0 in padj(k) {
                let mut i = i0;
                if i >= k {
                    continue;
                }
                while mark[i] != k {
                    mark[i] = k;
                    row_idx.push(i);
                    col_count[i] += 1;
                    i = parent[i];
                }
            }
            row_idx[start..].sort_unstable();
            row_ptr.push(row_idx.len());
        }

        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        for c in &col_count {
            col_ptr.push(col_ptr.last().unwrap() + c);
        }
        let mut fill: Vec<usize> = col_ptr[..n].to_vec();
        let mut col_rows = vec![0; row_idx.len()];
        let mut row_slot = vec![0; row_idx.len()];
        for k in 0..n {
            for p in row_ptr[k]..row_ptr[k + 1] {
                let j = row_idx[p];
                col_rows[fill[j]] = k;
                row_slot[p] = fill[j];
                fill[j] += 1;
            }
        }
        Self {
            n,
            perm,
            iperm,
            row_ptr,
            row_idx,
            col_ptr,
            col_rows,
            row_slot,
        }
    }

    /// Number of strictly-lower nonzeros of L.
    pub fn factor_nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }
}

/// Numeric factors P A Pᵀ = L D U with unit-triangular L and U.
#[derive(Debug, Clone)]
pub struct SparseLu {
    sym: std::sync::Arc<SymbolicLu>,
    pattern: std::sync::Arc<SparsePattern>,
    matrix: Vec<C64>,
    l: Vec<C64>,
    /// Uᵀ, same structure as L.
    ut: Vec<C64>,
    d: Vec<C64>,
    perturbed: usize,
}

impl SparseLu {
    /// Factor the matrix with the given values on `pattern`.
    pub fn factor(pattern: &std::sync::Arc<SparsePattern>, values: Vec<C64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::Dimension {
                expected: pattern.nnz(),
                got: values.len(),
            });
        }
        if values
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::Factorization("non-finite matrix entry".into()));
        }
        let sym = pattern.symbolic_lu().clone();
        let n = sym.n;
        let cols = pattern.col_idx();
        let tpos = pattern.transpose_pos();
        let amax = values.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        if amax == 0.0 && n > 0 {
            return Err(Error::Factorization("zero matrix".into()));
        }
        let tiny = PIVOT_REL * amax;

        let nnz = sym.row_idx.len();
        let mut l = vec![C64::default(); nnz];
        let mut ut = vec![C64::default(); nnz];
        let mut d = vec![C64::default(); n];
        let mut z = vec![C64::default(); n];
        let mut w = vec![C64::default(); n];
        let mut fill: Vec<usize> = sym.col_ptr[..n].to_vec();
        let mut perturbed = 0;

        for k in 0..n {
            let old = sym.perm[k];
            let mut dk = C64::default();
            for p in pattern.row_range(old) {
                let j = sym.iperm[cols[p]];
                if j < k {
                    z[j] = values[p];
                    w[j] = values[tpos[p]];
                } else if j == k {
                    dk = values[p];
                }
            }
            for q in sym.row_ptr[k]..sym.row_ptr[k + 1] {
                let j = sym.row_idx[q];
                let (zj, wj) = (z[j], w[j]);
                z[j] = C64::default();
                w[j] = C64::default();
                for s in sym.col_ptr[j]..fill[j] {
                    let i = sym.col_rows[s];
                    z[i] -= ut[s] * zj;
                    w[i] -= l[s] * wj;
                }
                let inv = 1.0 / d[j];
                let lkj = zj * inv;
                let ujk = wj * inv;
                dk -= lkj * wj;
                let slot = sym.row_slot[q];
                debug_assert_eq!(slot, fill[j]);
                l[slot] = lkj;
                ut[slot] = ujk;
                fill[j] += 1;
            }
            if !(dk.norm() > tiny) {
                let phase = if dk.norm() > 0.0 {
                    dk / dk.norm()
                } else {
                    C64::new(1.0, 0.0)
                };
                dk = phase * tiny.max(f64::MIN_POSITIVE);
                perturbed += 1;
            }
            if !dk.re.is_finite() || !dk.im.is_finite() {
                return Err(Error::Factorization(format!(
                    "non-finite pivot at step {k}"
                )));
            }
            d[k] = dk;
        }
        Ok(Self {
            sym,
            pattern: pattern.clone(),
            matrix: values,
            l,
            ut,
            d,
            perturbed,
        })
    }

    pub fn n(&self) -> usize {
        self.sym.n
    }

    /// Number of pivots replaced by the static perturbation.
    pub fn perturbed_pivots(&self) -> usize {
        self.perturbed
    }

    fn raw_solve(&self, b: &[C64], transpose: bool) -> Vec<C64> {
        let s = &self.sym;
        let n = s.n;
        let mut y: Vec<C64> = (0..n).map(|k| b[s.perm[k]]).collect();
        let (lower, upper) = if transpose {
            (&self.ut, &self.l)
        } else {
            (&self.l, &self.ut)
        };
        for j in 0..n {
            let yj = y[j];
            if yj != C64::default() {
                let r = s.col_ptr[j]..s.col_ptr[j + 1];
                for (&row, &l) in s.col_rows[r.clone()].iter().zip(&lower[r]) {
                    y[row] -= l * yj;
                }
            }
        }
        for (yk, dk) in y.iter_mut().zip(&self.d) {
            *yk /= dk;
        }
        for j in (0..n).rev() {
            let mut acc = y[j];
            let r = s.col_ptr[j]..s.col_ptr[j + 1];
            for (&row, &u) in s.col_rows[r.clone()].iter().zip(&upper[r]) {
                acc -= u * y[row];
            }
            y[j] = acc;
        }
        let mut x = vec![C64::default(); n];
        for k in 0..n {
            x[s.perm[k]] = y[k];
        }
        x
    }

    fn residual(&self, x: &[C64], b: &[C64], transpose: bool) -> Vec<C64> {
        let cols = self.pattern.col_idx();
        let tpos = self.pattern.transpose_pos();
        (0..self.n())
            .map(|i| {
                let mut acc = b[i];
                for p in self.pattern.row_range(i) {
                    let a = if transpose {
                        self.matrix[tpos[p]]
                    } else {
                        self.matrix[p]
                    };
                    acc -= a * x[cols[p]];
                }
                acc
            })
            .collect()
    }

    fn solve_impl(&self, b: &[C64], transpose: bool) -> Result<Vec<C64>> {
        if b.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: b.len(),
            });
        }
        let mut x = self.raw_solve(b, transpose);
        if self.perturbed > 0 {
            let bnorm = norm(b);
            let mut last = f64::INFINITY;
            for _ in 0..MAX_REFINE {
                let r = self.residual(&x, b, transpose);
                let rn = norm(&r);
                if rn <= 1e-14 * bnorm || rn >= 0.5 * last {
                    break;
                }
                last = rn;
                let c = self.raw_solve(&r, transpose);
                for (xi, ci) in x.iter_mut().zip(c) {
                    *xi += ci;
                }
            }
        }
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Factorization("solution is not finite".into()));
        }
        Ok(x)
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>> {
        self.solve_impl(b, false)
    }

    /// Solve Aᵀ x = b (plain transpose, no conjugation).
    pub fn solve_transpose(&self, b: &[C64]) -> Result<Vec<C64>> {
        self.solve_impl(b, true)
    }
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}
