//! Element systems: per-cell spaces of forms closed under `d` and traces,
//! their inverse limits, and the compatibility checks.

use crate::complex::{CellForm, CellRef, Complex, ComplexError, OrderSpec};
use crate::linalg::{sparse_rank, Matrix, Rref, Q};
use crate::polyforms::{full_poly_basis_signed, trimmed_basis, Coordinates, PolyForm};
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FesError {
    #[error("order is not monotone: {0}")]
    OrderNotMonotone(String),
    #[error("degree condition violated: {0}")]
    ConditionViolated(String),
    #[error("{1} is not a subcell of {0}")]
    NotASubcell(String, String),
    #[error("closure violated: {0}")]
    ClosureViolated(String),
    #[error("basis is linearly dependent on {0}")]
    DependentBasis(String),
    #[error("system is not compatible: {0}")]
    NotCompatible(String),
    #[error(transparent)]
    Complex(#[from] ComplexError),
}

pub type Result<T> = std::result::Result<T, FesError>;

/// Polynomial order per cell, indexed `[dim][cell]`.
pub type CellOrders = Vec<Vec<usize>>;

/// Finite basis of forms on one cell with a coordinate solver.
#[derive(Clone, Debug)]
pub struct LocalSpace {
    pub basis: Vec<CellForm>,
    piece_dims: Vec<usize>,
    k: usize,
    keys: Coordinates,
    mat: Matrix<Q>,
    pivot_rows: Vec<usize>,
    inv: Matrix<Q>,
}

impl LocalSpace {
    /// `piece_dims` gives the chart dimension of every piece of the cell.
    pub fn new(basis: Vec<CellForm>, piece_dims: Vec<usize>, k: usize) -> Option<LocalSpace> {
        let refs: Vec<&[PolyForm]> = basis.iter().map(|b| b.as_slice()).collect();
        let keys = Coordinates::of(&refs);
        let mat = keys.matrix(&refs);
        let Rref { pivots, .. } = mat.transpose().rref();
        if pivots.len() != basis.len() {
            return None;
        }
        let inv = mat.select_rows(&pivots).inverse()?;
        Some(LocalSpace { basis, piece_dims, k, keys, mat, pivot_rows: pivots, inv })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn piece_dims(&self) -> &[usize] {
        &self.piece_dims
    }

    /// Coefficients of `u` in the basis, or `None` if `u` is not in the span.
    pub fn coords(&self, u: &CellForm) -> Option<Vec<Q>> {
        if self.basis.is_empty() {
            return u.iter().all(|f| f.is_zero()).then(Vec::new);
        }
        let v = self.keys.vector(u)?;
        let sel: Vec<Q> = self.pivot_rows.iter().map(|&r| v[r].clone()).collect();
        let c = self.inv.mul_vec(&sel);
        (self.mat.mul_vec(&c) == v).then_some(c)
    }

    pub fn combine(&self, c: &[Q]) -> CellForm {
        (0..self.piece_dims.len())
            .map(|p| {
                let forms: Vec<PolyForm> = self.basis.iter().map(|b| b[p].clone()).collect();
                PolyForm::combination(&forms, c, self.piece_dims[p], self.k)
            })
            .collect()
    }

    pub fn zero_form(&self) -> CellForm {
        self.piece_dims.iter().map(|&n| PolyForm::zero(n, self.k)).collect()
    }

    /// Rows `N` with `N a = 0` iff `Σ a_i forms_i` lies in this space.
    pub fn membership_constraints(&self, forms: &[CellForm]) -> Matrix<Q> {
        let mut refs: Vec<&[PolyForm]> = self.basis.iter().map(|b| b.as_slice()).collect();
        refs.extend(forms.iter().map(|f| f.as_slice()));
        let keys = Coordinates::of(&refs);
        let own = keys.matrix(&refs[..self.basis.len()]);
        let other = keys.matrix(&refs[self.basis.len()..]);
        let n = Matrix::from_rows(&own.left_null_space(), keys.len());
        n.mul(&other)
    }
}

/// Solver data for the stacked facet restriction `R_T` of one cell.
#[derive(Clone, Debug)]
pub struct ExtensionData {
    /// `R_T`: rows are the concatenated facet coefficients.
    pub r: Matrix<Q>,
    pub rank: usize,
    /// Particular solution operator: `R_T S b = b` for consistent `b`, with
    /// free variables zero.
    pub s: Matrix<Q>,
    /// Left null space of `R_T` (consistency conditions on `b`).
    pub left: Matrix<Q>,
    /// Basis of `A_0`, one vector per free column.
    pub kernel: Vec<Vec<Q>>,
    pub free: Vec<usize>,
}

impl ExtensionData {
    fn new(r: Matrix<Q>) -> ExtensionData {
        let (rows, n) = (r.nrows(), r.ncols());
        let aug = r.hstack(&Matrix::identity(rows));
        let Rref { matrix: m, pivots } = aug.rref();
        let piv: Vec<usize> = pivots.iter().copied().filter(|&c| c < n).collect();
        let rank = piv.len();
        let mut s = Matrix::zeros(n, rows);
        for (i, &p) in piv.iter().enumerate() {
            for j in 0..rows {
                s[(p, j)] = m[(i, n + j)].clone();
            }
        }
        let left_rows: Vec<Vec<Q>> = (rank..rows).map(|i| m.row(i)[n..].to_vec()).collect();
        let free: Vec<usize> = (0..n).filter(|c| !piv.contains(c)).collect();
        let kernel = free
            .iter()
            .map(|&f| {
                let mut v = vec![Q::zero(); n];
                v[f] = Q::one();
                for (i, &p) in piv.iter().enumerate() {
                    v[p] = -m[(i, f)].clone();
                }
                v
            })
            .collect();
        ExtensionData { r, rank, s, left: Matrix::from_rows(&left_rows, rows), kernel, free }
    }
}

#[derive(Clone, Debug)]
struct CellData {
    spaces: Vec<LocalSpace>,
    /// `[k][facet position]`: restriction matrices `dim A(F) × dim A(T)`.
    facet_r: Vec<Vec<Matrix<Q>>>,
    /// `[k]`: matrix of `d: A^k(T) → A^{k+1}(T)`.
    dmat: Vec<Matrix<Q>>,
    ext: Vec<ExtensionData>,
}

#[derive(Clone, Debug)]
pub struct ElementSystem {
    complex: Arc<Complex>,
    data: Vec<Vec<CellData>>,
    closure_failures: Vec<String>,
}

impl ElementSystem {
    /// Builds a system from explicit bases `[dim][cell][k]`, verifying
    /// closure under `d` and traces.
    pub fn from_spaces(complex: Arc<Complex>, spaces: Vec<Vec<Vec<Vec<CellForm>>>>) -> Result<ElementSystem> {
        let sys = Self::from_spaces_unchecked(complex, spaces)?;
        match sys.closure_failures.first() {
            Some(f) => Err(FesError::ClosureViolated(f.clone())),
            None => Ok(sys),
        }
    }

    /// Like [`from_spaces`](Self::from_spaces) but records closure failures
    /// instead of rejecting them; non-members map to zero.
    pub fn from_spaces_unchecked(complex: Arc<Complex>, spaces: Vec<Vec<Vec<Vec<CellForm>>>>) -> Result<ElementSystem> {
        let mut locals: Vec<Vec<Vec<LocalSpace>>> = Vec::new();
        for (j, level) in spaces.into_iter().enumerate() {
            let row: Result<Vec<Vec<LocalSpace>>> = level
                .into_iter()
                .enumerate()
                .map(|(i, per_k)| {
                    let dims: Vec<usize> = complex.cell((j, i)).pieces.iter().map(|p| p.dim()).collect();
                    per_k
                        .into_iter()
                        .enumerate()
                        .map(|(k, b)| {
                            LocalSpace::new(b, dims.clone(), k)
                                .ok_or_else(|| FesError::DependentBasis(format!("{} (k={k})", complex.cell((j, i)).id)))
                        })
                        .collect()
                })
                .collect();
            locals.push(row?);
        }
        Ok(Self::from_locals(complex, locals))
    }

    fn from_locals(complex: Arc<Complex>, locals: Vec<Vec<Vec<LocalSpace>>>) -> ElementSystem {
        let mut data: Vec<Vec<CellData>> = Vec::new();
        let mut failures = Vec::new();
        for (j, level) in locals.into_iter().enumerate() {
            let prev = data.last();
            let built: Vec<(CellData, Vec<String>)> = level
                .into_par_iter()
                .enumerate()
                .map(|(i, spaces)| cell_data(&complex, (j, i), spaces, prev.map(|p| p.as_slice())))
                .collect();
            let mut row = Vec::new();
            for (d, f) in built {
                row.push(d);
                failures.extend(f);
            }
            data.push(row);
        }
        ElementSystem { complex, data, closure_failures: failures }
    }

    pub fn complex(&self) -> &Arc<Complex> {
        &self.complex
    }

    pub fn closure_failures(&self) -> &[String] {
        &self.closure_failures
    }

    /// `A^k(T)`; for `k > dim T` the space is empty.
    pub fn space(&self, t: CellRef, k: usize) -> Option<&LocalSpace> {
        self.data[t.0][t.1].spaces.get(k)
    }

    pub fn dim_of(&self, t: CellRef, k: usize) -> usize {
        self.space(t, k).map_or(0, |s| s.dim())
    }

    pub fn facet_restriction(&self, t: CellRef, pos: usize, k: usize) -> &Matrix<Q> {
        &self.data[t.0][t.1].facet_r[k][pos]
    }

    /// Matrix of `d: A^k(T) → A^{k+1}(T)` (zero rows when `k = dim T`).
    pub fn d_matrix(&self, t: CellRef, k: usize) -> Matrix<Q> {
        match self.data[t.0][t.1].dmat.get(k) {
            Some(m) => m.clone(),
            None => Matrix::zeros(0, self.dim_of(t, k)),
        }
    }

    pub fn extension_data(&self, t: CellRef, k: usize) -> &ExtensionData {
        &self.data[t.0][t.1].ext[k]
    }

    /// Basis of `A_0^k(T)` as coefficient vectors in `A^k(T)`.
    pub fn kernel_space(&self, t: CellRef, k: usize) -> Vec<Vec<Q>> {
        if k > t.0 {
            return Vec::new();
        }
        self.extension_data(t, k).kernel.clone()
    }

    /// Stacked facet restrictions `R_T`.
    pub fn boundary_matrix(&self, t: CellRef, k: usize) -> &Matrix<Q> {
        &self.extension_data(t, k).r
    }

    /// Matrix of the trace `A^k(T) → A^k(T')`.
    pub fn restriction_matrix(&self, t: CellRef, tp: CellRef, k: usize) -> Result<Matrix<Q>> {
        if !self.complex.cell(t).closure.contains(&tp) {
            return Err(FesError::NotASubcell(self.complex.cell(t).id.clone(), self.complex.cell(tp).id.clone()));
        }
        let (m, n) = (self.dim_of(tp, k), self.dim_of(t, k));
        if t == tp {
            return Ok(Matrix::identity(n));
        }
        let mut r = Matrix::zeros(m, n);
        if m == 0 || n == 0 {
            return Ok(r);
        }
        let target = self.space(tp, k).unwrap();
        for (c, u) in self.space(t, k).unwrap().basis.iter().enumerate() {
            let v = target.coords(&self.complex.trace(t, tp, u)).ok_or_else(|| {
                FesError::ClosureViolated(format!("trace {} -> {}", self.complex.cell(t).id, self.complex.cell(tp).id))
            })?;
            for (row, x) in v.into_iter().enumerate() {
                r[(row, c)] = x;
            }
        }
        Ok(r)
    }

    pub fn form(&self, t: CellRef, k: usize, c: &[Q]) -> CellForm {
        self.space(t, k).expect("degree within cell dimension").combine(c)
    }

    /// Integrals of the top-degree basis forms over their cell.
    pub fn cell_integrals(&self, t: CellRef) -> Vec<Q> {
        self.space(t, t.0).map_or(Vec::new(), |s| s.basis.iter().map(|b| self.complex.integrate(t, b)).collect())
    }

    /// Inverse limit `A^k` over a subcomplex (closed under faces), swept
    /// upward through dimensions.
    pub fn global_space(&self, cells: &[CellRef], k: usize) -> GlobalSpace {
        let cells: Vec<CellRef> = cells.iter().copied().filter(|c| c.0 >= k).collect::<BTreeSet<_>>().into_iter().collect();
        let mut offsets = BTreeMap::new();
        let mut total = 0;
        for &c in &cells {
            let n = self.dim_of(c, k);
            offsets.insert(c, (total, n));
            total += n;
        }
        let mut basis: Vec<Vec<(usize, Q)>> = Vec::new();
        let mut pivots: Vec<usize> = Vec::new();
        let top = cells.iter().map(|c| c.0).max().unwrap_or(0);
        for j in k..=top {
            let level: Vec<CellRef> = cells.iter().copied().filter(|c| c.0 == j).collect();
            if level.is_empty() {
                continue;
            }
            let mut touch: HashMap<CellRef, Vec<usize>> = HashMap::new();
            if j > k {
                for (gi, g) in basis.iter().enumerate() {
                    for (&c, &(off, n)) in offsets.range((j - 1, 0)..(j, 0)) {
                        if component_nonzero(g, off, n) {
                            touch.entry(c).or_default().push(gi);
                        }
                    }
                }
            }
            // per cell: (g index, consistency residual, particular extension)
            type Ext = Vec<(usize, Vec<Q>, Vec<Q>)>;
            let per_cell: Vec<Ext> = level
                .par_iter()
                .map(|&t| {
                    if j == k {
                        return Vec::new();
                    }
                    let faces = &self.complex.cell(t).faces;
                    let gs: BTreeSet<usize> = faces.iter().flat_map(|&(f, _)| touch.get(&(j - 1, f)).cloned().unwrap_or_default()).collect();
                    let ext = self.extension_data(t, k);
                    gs.into_iter()
                        .map(|gi| {
                            let mut b = Vec::new();
                            for &(f, _) in faces {
                                let (off, n) = offsets[&(j - 1, f)];
                                b.extend(component(&basis[gi], off, n));
                            }
                            (gi, ext.left.mul_vec(&b), ext.s.mul_vec(&b))
                        })
                        .collect()
                })
                .collect();
            let mut rows: Vec<Vec<Q>> = Vec::new();
            for exts in &per_cell {
                let nrows = exts.first().map_or(0, |e| e.1.len());
                for r in 0..nrows {
                    let mut row = vec![Q::zero(); basis.len()];
                    for (gi, res, _) in exts {
                        row[*gi] = res[r].clone();
                    }
                    if row.iter().any(|x| !x.is_zero()) {
                        rows.push(row);
                    }
                }
            }
            let mut next: Vec<Vec<(usize, Q)>> = Vec::new();
            let mut next_piv = Vec::new();
            let extend = |a: &[(usize, Q)]| -> Vec<(usize, Q)> {
                // Σ a_i g_i plus the matching particular extensions
                let mut acc: BTreeMap<usize, Q> = BTreeMap::new();
                for (gi, w) in a {
                    for (c, v) in &basis[*gi] {
                        *acc.entry(*c).or_insert_with(Q::zero) += v * w;
                    }
                }
                let coef: HashMap<usize, &Q> = a.iter().map(|(g, w)| (*g, w)).collect();
                for (t, exts) in level.iter().zip(&per_cell) {
                    let off = offsets[t].0;
                    for (gi, _, sol) in exts {
                        if let Some(w) = coef.get(gi) {
                            for (i, v) in sol.iter().enumerate() {
                                if !v.is_zero() {
                                    *acc.entry(off + i).or_insert_with(Q::zero) += v * *w;
                                }
                            }
                        }
                    }
                }
                acc.into_iter().filter(|e| !e.1.is_zero()).collect()
            };
            if rows.is_empty() {
                for gi in 0..basis.len() {
                    next.push(extend(&[(gi, Q::one())]));
                    next_piv.push(pivots[gi]);
                }
            } else {
                let c = Matrix::from_rows(&rows, basis.len());
                let Rref { pivots: cp, .. } = c.rref();
                for a in c.null_space() {
                    let free = (0..basis.len()).find(|i| !cp.contains(i) && a[*i].is_one()).expect("free column");
                    let sparse: Vec<(usize, Q)> = a.into_iter().enumerate().filter(|e| !e.1.is_zero()).collect();
                    next.push(extend(&sparse));
                    next_piv.push(pivots[free]);
                }
            }
            for &t in &level {
                let off = offsets[&t].0;
                let ext = self.extension_data(t, k);
                let (kernel, free) = (ext.kernel.clone(), ext.free.clone());
                for (v, f) in kernel.into_iter().zip(free) {
                    next.push(v.into_iter().enumerate().filter(|e| !e.1.is_zero()).map(|(i, x)| (off + i, x)).collect());
                    next_piv.push(off + f);
                }
            }
            basis = next;
            pivots = next_piv;
        }
        GlobalSpace { k, offsets, total, basis, pivots }
    }

    pub fn global_space_all(&self, k: usize) -> GlobalSpace {
        self.global_space(&self.complex.all_cells(), k)
    }

    /// Dimension of the inverse limit from the full matching constraints,
    /// independent of the sweep.
    pub fn global_dimension_direct(&self, cells: &[CellRef], k: usize) -> usize {
        let set: BTreeSet<CellRef> = cells.iter().copied().filter(|c| c.0 >= k).collect();
        let mut offsets = HashMap::new();
        let mut total = 0;
        for &c in &set {
            offsets.insert(c, total);
            total += self.dim_of(c, k);
        }
        let mut rows = Vec::new();
        for &t in &set {
            if t.0 == k {
                continue;
            }
            for (pos, &(f, _)) in self.complex.cell(t).faces.iter().enumerate() {
                let r = self.facet_restriction(t, pos, k);
                let (ot, of) = (offsets[&t], offsets[&(t.0 - 1, f)]);
                for i in 0..r.nrows() {
                    let mut row: Vec<(usize, Q)> = (0..r.ncols()).filter(|&c| !r[(i, c)].is_zero()).map(|c| (ot + c, r[(i, c)].clone())).collect();
                    row.push((of + i, -Q::one()));
                    rows.push(row);
                }
            }
        }
        total - sparse_rank(rows)
    }

    /// Global `d` from `A^k` to `A^{k+1}` in the two global bases.
    pub fn global_d(&self, gk: &GlobalSpace, gk1: &GlobalSpace) -> Matrix<Q> {
        let mut m = Matrix::zeros(gk1.dim(), gk.dim());
        for (c, g) in gk.basis.iter().enumerate() {
            let mut family: HashMap<usize, Q> = HashMap::new();
            for (&t, &(off1, n1)) in &gk1.offsets {
                let Some(&(off, n)) = gk.offsets.get(&t) else { continue };
                if n1 == 0 || !component_nonzero(g, off, n) {
                    continue;
                }
                let du = self.d_matrix(t, gk.k).mul_vec(&component(g, off, n));
                for (i, v) in du.into_iter().enumerate() {
                    if !v.is_zero() {
                        family.insert(off1 + i, v);
                    }
                }
            }
            for (r, &p) in gk1.pivots.iter().enumerate() {
                if let Some(v) = family.get(&p) {
                    m[(r, c)] = v.clone();
                }
            }
        }
        m
    }

    /// De Rham matrix: integrals of the global basis over the k-cells of the
    /// space's subcomplex.
    pub fn de_rham(&self, g: &GlobalSpace) -> Matrix<Q> {
        let kcells: Vec<CellRef> = g.offsets.keys().copied().filter(|c| c.0 == g.k).collect();
        let mut m = Matrix::zeros(kcells.len(), g.dim());
        for (r, &t) in kcells.iter().enumerate() {
            let ints = self.cell_integrals(t);
            let (off, n) = g.offsets[&t];
            for (c, v) in g.basis.iter().enumerate() {
                let comp = component(v, off, n);
                m[(r, c)] = comp.iter().zip(&ints).fold(Q::zero(), |a, (x, y)| a + x * y);
            }
        }
        m
    }

    /// Whether `∂: A^k(T) → A^k(∂T)` is onto.
    pub fn extension_holds(&self, t: CellRef, k: usize) -> bool {
        if t.0 == 0 || k >= t.0 {
            return true;
        }
        let boundary = self.complex.boundary_cells(t);
        self.extension_data(t, k).rank == self.global_space(&boundary, k).dim()
    }

    /// Exactness of `0 → ℝ → A^0(T) → ... → A^m(T) → 0`.
    pub fn exact_full(&self, t: CellRef) -> bool {
        let m = t.0;
        let ones: CellForm = self.complex.cell(t).pieces.iter().map(|p| PolyForm::constant(p.dim(), Q::one())).collect();
        if self.space(t, 0).and_then(|s| s.coords(&ones)).is_none() {
            return false;
        }
        let ranks: Vec<usize> = (0..m).map(|k| self.d_matrix(t, k).rank()).collect();
        (0..=m).all(|k| {
            let kernel = self.dim_of(t, k) - ranks.get(k).copied().unwrap_or(0);
            let image = if k == 0 { 1 } else { ranks[k - 1] };
            kernel == image
        })
    }

    /// Exactness of `0 → A_0^0(T) → ... → A_0^m(T) → ℝ → 0`.
    pub fn exact_kernel(&self, t: CellRef) -> bool {
        let m = t.0;
        let kernels: Vec<Matrix<Q>> = (0..=m).map(|k| Matrix::from_cols(&self.kernel_space(t, k), self.dim_of(t, k))).collect();
        let ranks: Vec<usize> = (0..m).map(|k| self.d_matrix(t, k).mul(&kernels[k]).rank()).collect();
        let ints = Matrix::from_rows(&[self.cell_integrals(t)], self.dim_of(t, m));
        let int_rank = ints.mul(&kernels[m]).rank();
        if int_rank != 1 {
            return false;
        }
        (0..=m).all(|k| {
            let out = if k == m { int_rank } else { ranks[k] };
            let image = if k == 0 { 0 } else { ranks[k - 1] };
            kernels[k].ncols() - out == image
        })
    }

    pub fn compatibility(&self) -> CompatibilityReport {
        let c = &self.complex;
        let cells = c.all_cells();
        let verdicts: Vec<CellVerdict> = cells
            .par_iter()
            .map(|&t| {
                let extensions: Vec<bool> = (0..=t.0).map(|k| self.extension_holds(t, k)).collect();
                CellVerdict {
                    id: c.cell(t).id.clone(),
                    dim: t.0,
                    extensions,
                    exact_full: self.exact_full(t),
                    exact_kernel: self.exact_kernel(t),
                    dims: (0..=t.0).map(|k| self.dim_of(t, k)).collect(),
                    kernel_dims: (0..=t.0).map(|k| self.kernel_space(t, k).len()).collect(),
                }
            })
            .collect();
        let extensions = verdicts.iter().all(|v| v.extensions.iter().all(|&b| b));
        let exactness = verdicts.iter().all(|v| v.exact_full);
        let dims: Vec<GlobalDims> = (0..=c.dim())
            .map(|k| {
                let sum = verdicts.iter().map(|v| v.kernel_dims.get(k).copied().unwrap_or(0)).sum();
                GlobalDims { k, sweep: self.global_space_all(k).dim(), direct: self.global_dimension_direct(&cells, k), kernel_sum: sum }
            })
            .collect();
        let dimension_count = dims.iter().all(|d| d.sweep == d.direct && d.direct <= d.kernel_sum && (!extensions || d.direct == d.kernel_sum));
        let mut failing: Vec<String> = verdicts.iter().filter(|v| !v.passes()).map(|v| v.id.clone()).collect();
        failing.sort();
        CompatibilityReport {
            closure: self.closure_failures.is_empty(),
            extensions,
            exactness,
            dimension_count,
            compatible: self.closure_failures.is_empty() && extensions && exactness,
            failing_cells: failing,
            dims,
            cells: verdicts,
        }
    }

    /// Compares discrete and cochain Betti numbers and checks that the
    /// De Rham map induces isomorphisms in cohomology.
    pub fn discrete_cohomology(&self) -> Result<CohomologyReport> {
        let rep = self.compatibility();
        if !rep.compatible {
            return Err(FesError::NotCompatible(rep.failing_cells.join(",")));
        }
        Ok(self.cohomology_unchecked())
    }

    pub fn cohomology_unchecked(&self) -> CohomologyReport {
        let c = &self.complex;
        let m = c.dim();
        let spaces: Vec<GlobalSpace> = (0..=m).map(|k| self.global_space_all(k)).collect();
        let dmats: Vec<Matrix<Q>> = (0..m).map(|k| self.global_d(&spaces[k], &spaces[k + 1])).collect();
        let ranks: Vec<usize> = dmats.iter().map(|d| d.rank()).collect();
        let discrete = crate::complex::betti_from_ranks(&spaces.iter().map(|s| s.dim()).collect::<Vec<_>>(), &ranks);
        let cochain = c.betti_numbers();
        let rhos: Vec<Matrix<Q>> = spaces.iter().map(|s| self.de_rham(s)).collect();
        let commutes = (0..m).all(|k| rhos[k + 1].mul(&dmats[k]) == c.coboundary_matrix(k).mul(&rhos[k]));
        let isomorphism = (0..=m).all(|k| {
            let z = if k < m { dmats[k].null_space() } else { (0..spaces[k].dim()).map(|i| unit(spaces[k].dim(), i)).collect() };
            let rz = Matrix::from_cols(&z, spaces[k].dim());
            let rz = rhos[k].mul(&rz);
            let (delta_rank, joined) = if k == 0 {
                (0, rz.rank())
            } else {
                let delta = c.coboundary_matrix(k - 1);
                (delta.rank(), delta.hstack(&rz).rank())
            };
            joined - delta_rank == cochain[k] && discrete[k] == cochain[k]
        });
        CohomologyReport { discrete, cochain, de_rham_commutes: commutes, induced_isomorphism: isomorphism }
    }
}

fn unit(n: usize, i: usize) -> Vec<Q> {
    let mut v = vec![Q::zero(); n];
    v[i] = Q::one();
    v
}

fn component_nonzero(g: &[(usize, Q)], off: usize, n: usize) -> bool {
    let i = g.partition_point(|e| e.0 < off);
    i < g.len() && g[i].0 < off + n
}

fn component(g: &[(usize, Q)], off: usize, n: usize) -> Vec<Q> {
    let mut v = vec![Q::zero(); n];
    let start = g.partition_point(|e| e.0 < off);
    for (c, x) in &g[start..] {
        if *c >= off + n {
            break;
        }
        v[c - off] = x.clone();
    }
    v
}

fn cell_data(complex: &Complex, t: CellRef, spaces: Vec<LocalSpace>, lower: Option<&[CellData]>) -> (CellData, Vec<String>) {
    let cell = complex.cell(t);
    let mut failures = Vec::new();
    let mut facet_r = Vec::new();
    let mut ext = Vec::new();
    let mut dmat = Vec::new();
    for (k, sp) in spaces.iter().enumerate() {
        let mut mats = Vec::new();
        for &(f, _) in &cell.faces {
            let fr = (t.0 - 1, f);
            let target = lower.and_then(|l| l[f].spaces.get(k));
            let rows = target.map_or(0, |s| s.dim());
            let mut r = Matrix::zeros(rows, sp.dim());
            if let Some(target) = target {
                for (c, u) in sp.basis.iter().enumerate() {
                    match target.coords(&complex.trace(t, fr, u)) {
                        Some(v) => {
                            for (i, x) in v.into_iter().enumerate() {
                                r[(i, c)] = x;
                            }
                        }
                        None => failures.push(format!("trace of {} (k={k}) basis {c} not in A({})", cell.id, complex.cell(fr).id)),
                    }
                }
            }
            mats.push(r);
        }
        let stacked = mats.iter().fold(Matrix::zeros(0, sp.dim()), |acc, m| acc.vstack(m));
        ext.push(ExtensionData::new(stacked));
        facet_r.push(mats);
        if let Some(next) = spaces.get(k + 1) {
            let mut d = Matrix::zeros(next.dim(), sp.dim());
            for (c, u) in sp.basis.iter().enumerate() {
                match next.coords(&Complex::d(u)) {
                    Some(v) => {
                        for (i, x) in v.into_iter().enumerate() {
                            d[(i, c)] = x;
                        }
                    }
                    None => failures.push(format!("d of {} (k={k}) basis {c} not in A^{}", cell.id, k + 1)),
                }
            }
            dmat.push(d);
        } else if k < t.0 {
            failures.push(format!("{} has no space of degree {}", cell.id, k + 1));
        }
    }
    (CellData { spaces, facet_r, dmat, ext }, failures)
}

/// Inverse limit basis: sparse vectors over concatenated per-cell
/// coefficients, each with a pivot coordinate where it is 1 and every other
/// basis vector vanishes.
#[derive(Clone, Debug)]
pub struct GlobalSpace {
    pub k: usize,
    /// Cell → (offset, dim A^k(T)).
    pub offsets: BTreeMap<CellRef, (usize, usize)>,
    pub total: usize,
    pub basis: Vec<Vec<(usize, Q)>>,
    pub pivots: Vec<usize>,
}

impl GlobalSpace {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Coefficients of basis vector `i` on cell `t`.
    pub fn component(&self, i: usize, t: CellRef) -> Vec<Q> {
        let (off, n) = self.offsets[&t];
        component(&self.basis[i], off, n)
    }

    pub fn dense(&self, i: usize) -> Vec<Q> {
        let mut v = vec![Q::zero(); self.total];
        for (c, x) in &self.basis[i] {
            v[*c] = x.clone();
        }
        v
    }

    /// Per-cell coefficients of a combination of basis vectors.
    pub fn family(&self, coeffs: &[Q]) -> Vec<Q> {
        let mut v = vec![Q::zero(); self.total];
        for (g, a) in self.basis.iter().zip(coeffs) {
            if a.is_zero() {
                continue;
            }
            for (c, x) in g {
                v[*c] += x * a;
            }
        }
        v
    }

    /// Basis coordinates of a consistent family, verified.
    pub fn coords_of(&self, family: &[Q]) -> Option<Vec<Q>> {
        let a: Vec<Q> = self.pivots.iter().map(|&p| family[p].clone()).collect();
        (self.family(&a) == family).then_some(a)
    }

    pub fn slice<'a>(&self, family: &'a [Q], t: CellRef) -> &'a [Q] {
        let (off, n) = self.offsets[&t];
        &family[off..off + n]
    }

    /// Checks that every basis family matches its traces on all facets.
    pub fn is_consistent(&self, sys: &ElementSystem) -> bool {
        (0..self.dim()).all(|i| {
            self.offsets.keys().all(|&t| {
                if t.0 == self.k {
                    return true;
                }
                let u = self.component(i, t);
                sys.complex().cell(t).faces.iter().enumerate().all(|(pos, &(f, _))| {
                    let fr = (t.0 - 1, f);
                    !self.offsets.contains_key(&fr) || sys.facet_restriction(t, pos, self.k).mul_vec(&u) == self.component(i, fr)
                })
            })
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CellVerdict {
    pub id: String,
    pub dim: usize,
    pub extensions: Vec<bool>,
    pub exact_full: bool,
    pub exact_kernel: bool,
    pub dims: Vec<usize>,
    pub kernel_dims: Vec<usize>,
}

impl CellVerdict {
    pub fn passes(&self) -> bool {
        self.exact_full && self.extensions.iter().all(|&b| b)
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct GlobalDims {
    pub k: usize,
    pub sweep: usize,
    pub direct: usize,
    pub kernel_sum: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompatibilityReport {
    pub compatible: bool,
    pub closure: bool,
    pub extensions: bool,
    pub exactness: bool,
    /// `dim A^k = Σ dim A_0^k(T)` when extensions hold, `≤` otherwise.
    pub dimension_count: bool,
    pub failing_cells: Vec<String>,
    pub dims: Vec<GlobalDims>,
    pub cells: Vec<CellVerdict>,
}

impl CompatibilityReport {
    /// Under extensions the two local exactness variants agree on every cell.
    pub fn exactness_variants_agree(&self) -> bool {
        !self.extensions || self.cells.iter().all(|c| c.exact_full == c.exact_kernel)
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CohomologyReport {
    pub discrete: Vec<usize>,
    pub cochain: Vec<usize>,
    pub de_rham_commutes: bool,
    pub induced_isomorphism: bool,
}

impl CohomologyReport {
    pub fn passes(&self) -> bool {
        self.discrete == self.cochain && self.de_rham_commutes && self.induced_isomorphism
    }
}

/// Continuous piecewise forms on a cell: one copy of `local` per piece,
/// matched across interior fine facets.
pub fn piecewise_space(complex: &Complex, t: CellRef, local: &[PolyForm]) -> Vec<CellForm> {
    let cell = complex.cell(t);
    if local.is_empty() {
        return Vec::new();
    }
    if cell.pieces.len() == 1 {
        return local.iter().map(|f| vec![f.clone()]).collect();
    }
    let mesh = complex.mesh().expect("multi-piece cells are mesh-backed");
    let (j, b, k) = (t.0, local.len(), local[0].degree());
    let np = cell.pieces.len();
    let mut shared: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pi, p) in cell.pieces.iter().enumerate() {
        for (f, _) in mesh.facets(j, p.support.unwrap()) {
            shared.entry(f).or_default().push(pi);
        }
    }
    let mut rows: Vec<Vec<Q>> = Vec::new();
    if k < j {
        for (f, ps) in shared.iter().filter(|e| e.1.len() == 2) {
            let fv = &mesh.simplices[j - 1][*f];
            let traces: Vec<Vec<PolyForm>> = ps
                .iter()
                .map(|&pi| {
                    let pv = &mesh.simplices[j][cell.pieces[pi].support.unwrap()];
                    let pos: Vec<usize> = fv.iter().map(|v| pv.iter().position(|w| w == v).unwrap()).collect();
                    let e = crate::complex::vertex_embedding(j, &pos);
                    local.iter().map(|u| u.pullback(&e)).collect()
                })
                .collect();
            let refs: Vec<&[PolyForm]> = traces.iter().flatten().map(std::slice::from_ref).collect();
            let keys = Coordinates::of(&refs);
            let m = keys.matrix(&refs);
            for r in 0..m.nrows() {
                let mut row = vec![Q::zero(); np * b];
                for i in 0..b {
                    row[ps[0] * b + i] = m[(r, i)].clone();
                    row[ps[1] * b + i] = -m[(r, b + i)].clone();
                }
                rows.push(row);
            }
        }
    }
    let null = if rows.is_empty() {
        (0..np * b).map(|i| unit(np * b, i)).collect()
    } else {
        Matrix::from_rows(&rows, np * b).null_space()
    };
    null.into_iter()
        .map(|v| (0..np).map(|p| PolyForm::combination(local, &v[p * b..(p + 1) * b], j, k)).collect())
        .collect()
}

/// Trimmed system `A[π]` with `π` monotone along subcells.
pub fn trimmed_system(complex: Arc<Complex>, orders: &CellOrders) -> Result<ElementSystem> {
    check_monotone(&complex, orders)?;
    trimmed_system_relaxed(complex, orders)
}

/// Constant-order trimmed system `Λ_p`.
pub fn trimmed_constant(complex: Arc<Complex>, p: usize) -> Result<ElementSystem> {
    let orders = constant_orders(&complex, p);
    trimmed_system(complex, &orders)
}

/// `A[π]` without the monotonicity check: on each cell, the order-`π(T)`
/// trimmed forms whose facet traces lie in the facet spaces.
pub fn trimmed_system_relaxed(complex: Arc<Complex>, orders: &CellOrders) -> Result<ElementSystem> {
    if orders.iter().flatten().any(|&p| p == 0) {
        return Err(FesError::OrderNotMonotone("orders must be at least 1".into()));
    }
    let mut refs: HashMap<(usize, usize, usize), Vec<PolyForm>> = HashMap::new();
    for (j, level) in orders.iter().enumerate() {
        for &p in level {
            for k in 0..=j {
                refs.entry((p, k, j)).or_insert_with(|| trimmed_basis(p, k, j));
            }
        }
    }
    let mut locals: Vec<Vec<Vec<LocalSpace>>> = Vec::new();
    for j in 0..=complex.dim() {
        let lower = locals.last();
        let level: Vec<Vec<LocalSpace>> = (0..complex.num_cells(j))
            .into_par_iter()
            .map(|i| {
                let t = (j, i);
                let dims: Vec<usize> = complex.cell(t).pieces.iter().map(|p| p.dim()).collect();
                (0..=j)
                    .map(|k| {
                        let base = piecewise_space(&complex, t, &refs[&(orders[j][i], k, j)]);
                        let basis = constrain_to_facets(&complex, t, k, base, lower);
                        LocalSpace::new(basis, dims.clone(), k).expect("null-space basis is independent")
                    })
                    .collect()
            })
            .collect();
        locals.push(level);
    }
    let sys = ElementSystem::from_locals(complex, locals);
    match sys.closure_failures.first() {
        Some(f) => Err(FesError::ClosureViolated(f.clone())),
        None => Ok(sys),
    }
}

/// Forms of `base` whose traces on all facets of `t` lie in the facet spaces.
fn constrain_to_facets(complex: &Complex, t: CellRef, k: usize, base: Vec<CellForm>, lower: Option<&Vec<Vec<LocalSpace>>>) -> Vec<CellForm> {
    let Some(lower) = lower else { return base };
    if base.is_empty() || k >= t.0 {
        return base;
    }
    let mut rows: Vec<Vec<Q>> = Vec::new();
    for &(f, _) in &complex.cell(t).faces {
        let fr = (t.0 - 1, f);
        let traces: Vec<CellForm> = base.iter().map(|u| complex.trace(t, fr, u)).collect();
        let n = lower[f][k].membership_constraints(&traces);
        rows.extend(n.rows_vec().into_iter().filter(|r| r.iter().any(|x| !x.is_zero())));
    }
    if rows.is_empty() {
        return base;
    }
    let null = Matrix::from_rows(&rows, base.len()).null_space();
    let n_pieces = base[0].len();
    let dims: Vec<usize> = complex.cell(t).pieces.iter().map(|p| p.dim()).collect();
    null.into_iter()
        .map(|c| {
            (0..n_pieces)
                .map(|p| {
                    let forms: Vec<PolyForm> = base.iter().map(|b| b[p].clone()).collect();
                    PolyForm::combination(&forms, &c, dims[p], k)
                })
                .collect()
        })
        .collect()
}

/// Full polynomial system `ℙ𝔸_{π(T,k)}^k(T)`, `π` indexed `[dim][cell][k]`.
pub fn polynomial_system(complex: Arc<Complex>, orders: &[Vec<Vec<i64>>]) -> Result<ElementSystem> {
    for t in complex.all_cells() {
        let pt = &orders[t.0][t.1];
        let id = &complex.cell(t).id;
        if pt.len() != t.0 + 1 {
            return Err(FesError::ConditionViolated(format!("{id}: expected {} degrees", t.0 + 1)));
        }
        for k in 0..t.0 {
            if pt[k + 1] < pt[k] - 1 {
                return Err(FesError::ConditionViolated(format!("{id}: order drops by more than one from degree {k} to {}", k + 1)));
            }
        }
        for &s in &complex.cell(t).closure {
            for k in 0..=s.0 {
                if orders[s.0][s.1][k] < pt[k] {
                    return Err(FesError::ConditionViolated(format!("{id}: subcell {} has lower order in degree {k}", complex.cell(s).id)));
                }
            }
        }
    }
    let spaces = (0..=complex.dim())
        .map(|j| {
            (0..complex.num_cells(j))
                .map(|i| (0..=j).map(|k| piecewise_space(&complex, (j, i), &full_poly_basis_signed(orders[j][i][k], k, j))).collect())
                .collect()
        })
        .collect();
    ElementSystem::from_spaces(complex, spaces)
}

pub fn check_monotone(complex: &Complex, orders: &CellOrders) -> Result<()> {
    for t in complex.all_cells() {
        for &s in &complex.cell(t).closure {
            if orders[s.0][s.1] > orders[t.0][t.1] {
                return Err(FesError::OrderNotMonotone(format!(
                    "{} has order {} above {} on {}",
                    complex.cell(s).id,
                    orders[s.0][s.1],
                    orders[t.0][t.1],
                    complex.cell(t).id
                )));
            }
        }
    }
    Ok(())
}

pub fn is_monotone(complex: &Complex, orders: &CellOrders) -> bool {
    check_monotone(complex, orders).is_ok()
}

pub fn constant_orders(complex: &Complex, p: usize) -> CellOrders {
    (0..=complex.dim()).map(|j| vec![p; complex.num_cells(j)]).collect()
}

/// Orders from top-cell values, each subcell taking the minimum over the
/// top cells containing it.
pub fn min_rule_orders(complex: &Complex, top: &[usize]) -> CellOrders {
    let d = complex.dim();
    let mut o: CellOrders = (0..=d).map(|j| vec![usize::MAX; complex.num_cells(j)]).collect();
    for (i, &p) in top.iter().enumerate() {
        for &(j, s) in &complex.cell((d, i)).closure {
            o[j][s] = o[j][s].min(p);
        }
    }
    for level in o.iter_mut() {
        for v in level.iter_mut() {
            if *v == usize::MAX {
                *v = 1;
            }
        }
    }
    o
}

/// Order `p` on top cells and 1 on every lower-dimensional cell.
pub fn top_only_orders(complex: &Complex, p: usize) -> CellOrders {
    let d = complex.dim();
    (0..=d).map(|j| vec![if j == d { p } else { 1 }; complex.num_cells(j)]).collect()
}

/// Order `dim T + 1` on every cell.
pub fn dimension_orders(complex: &Complex) -> CellOrders {
    (0..=complex.dim()).map(|j| vec![j + 1; complex.num_cells(j)]).collect()
}

/// Orders from a mesh-file order block.
pub fn orders_from_spec(complex: &Complex, spec: &OrderSpec) -> Result<CellOrders> {
    let mut o = constant_orders(complex, spec.default);
    for (id, &p) in &spec.per_cell {
        let r = complex.find(id)?;
        o[r.0][r.1] = p;
    }
    Ok(o)
}
