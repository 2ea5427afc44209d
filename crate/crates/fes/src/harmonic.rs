//! Locally harmonic forms.
//!
//! A form `u` on `T` is harmonic for a product `a` when `a(du, dv) = 0` for
//! `v ∈ A_0^k(T)` and `a(u, dw) = 0` for `w ∈ A_0^{k-1}(T)`. The constraint
//! rows below encode both conditions on coefficient vectors.

use crate::complex::{CellForm, CellRef, Complex};
use crate::fesystem::{ElementSystem, FesError};
use crate::linalg::{q_to_f64, qi, Field, Matrix, Rref, Q};
use crate::polyforms::{gram_exact, gram_weighted, PolyForm};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarmonicError {
    #[error("form is not in the parent space on {0}")]
    NotInParentSpace(String),
    #[error("boundary-condition sequence is not exact on {0}")]
    SequenceInexact(String),
    #[error("boundary data cannot be extended into {0}")]
    NotExtendable(String),
    #[error("harmonic solution is not unique on {0}")]
    NotUnique(String),
    #[error("parent system is not compatible: {0}")]
    ParentNotCompatible(String),
    #[error("De Rham map on the harmonic subsystem is not invertible in degree {0}")]
    RhoNotInvertible(usize),
    #[error(transparent)]
    Fes(#[from] FesError),
}

pub type Result<T> = std::result::Result<T, HarmonicError>;

/// Gram matrices of a product on every `A^k(T)`, indexed `[dim][cell][k]`.
#[derive(Clone, Debug)]
pub struct Products<F> {
    pub gram: Vec<Vec<Vec<Matrix<F>>>>,
}

impl<F: Field> Products<F> {
    pub fn get(&self, t: CellRef, k: usize) -> &Matrix<F> {
        &self.gram[t.0][t.1][k]
    }

    /// Smallest symmetric-part eigenvalue bound used as a positivity check:
    /// every Gram matrix has full rank.
    pub fn all_full_rank(&self) -> bool {
        self.gram.iter().flatten().flatten().all(|g| g.rank() == g.nrows())
    }
}

fn per_cell<F: Field + Send>(sys: &ElementSystem, f: impl Fn(CellRef, usize) -> Matrix<F> + Sync) -> Products<F> {
    let c = sys.complex();
    let gram = (0..=c.dim())
        .map(|j| (0..c.num_cells(j)).into_par_iter().map(|i| (0..=j).map(|k| f((j, i), k)).collect()).collect())
        .collect();
    Products { gram }
}

fn piece_forms(basis: &[CellForm], p: usize) -> Vec<PolyForm> {
    basis.iter().map(|b| b[p].clone()).collect()
}

/// Exact `L²` products for the Euclidean metric. Irrational volume factors
/// are replaced by rational approximations.
pub fn l2_products(sys: &ElementSystem) -> Products<Q> {
    let c = sys.complex().clone();
    per_cell(sys, |t, k| {
        let basis = &sys.space(t, k).unwrap().basis;
        let n = basis.len();
        let mut g = Matrix::zeros(n, n);
        if n == 0 {
            return g;
        }
        for (p, piece) in c.cell(t).pieces.iter().enumerate() {
            let ginv = piece.metric().inverse().expect("nondegenerate piece");
            g = g.add(&gram_exact(&piece_forms(basis, p), &piece.shape, &ginv, &piece.volume_factor()));
        }
        g
    })
}

/// Products from one random constant metric per cell (exact, the volume
/// constant omitted).
pub fn random_metric_products(sys: &ElementSystem, seed: u64) -> Products<Q> {
    let c = sys.complex().clone();
    let metrics: Vec<Vec<Matrix<Q>>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..=c.dim())
            .map(|j| {
                (0..c.num_cells(j))
                    .map(|_| {
                        let mut l = Matrix::zeros(j, j);
                        for r in 0..j {
                            for s in 0..=r {
                                l[(r, s)] = qi(rng.gen_range(-3..=3));
                            }
                            l[(r, r)] = qi(rng.gen_range(1..=4));
                        }
                        l.mul(&l.transpose())
                    })
                    .collect()
            })
            .collect()
    };
    per_cell(sys, |t, k| {
        let basis = &sys.space(t, k).unwrap().basis;
        let n = basis.len();
        let mut g = Matrix::zeros(n, n);
        for (p, piece) in c.cell(t).pieces.iter().enumerate() {
            if n > 0 {
                g = g.add(&gram_exact(&piece_forms(basis, p), &piece.shape, &metrics[t.0][t.1], &qi(1)));
            }
        }
        g
    })
}

/// Weighted products `∫_T exp(-s β_T) u·v` with `β_T` the zero-mean affine
/// function whose differential is the ambient covector `alpha`.
pub fn upwinded_products(sys: &ElementSystem, alpha: &[f64], sign: f64) -> Products<f64> {
    let c = sys.complex().clone();
    per_cell(sys, |t, k| {
        let basis = &sys.space(t, k).unwrap().basis;
        let n = basis.len();
        let mut g = Matrix::zeros(n, n);
        if n == 0 {
            return g;
        }
        let cell = c.cell(t);
        let mean = weighted_mean(&c, t, alpha);
        for (p, piece) in cell.pieces.iter().enumerate() {
            let origin: Vec<f64> = piece.origin.iter().map(q_to_f64).collect();
            let frame = piece.frame.to_f64();
            let base = dotf(alpha, &origin) - mean;
            let slope: Vec<f64> = (0..frame.ncols()).map(|c| dotf(alpha, &frame.col(c))).collect();
            let weight = move |x: &[f64]| (-sign * (base + dotf(&slope, x))).exp();
            let ginv = piece.metric().inverse().unwrap().to_f64();
            let vol = q_to_f64(&piece.volume_factor());
            g = g.add(&gram_weighted(&piece_forms(basis, p), &piece.shape, &ginv, vol, &weight));
        }
        g
    })
}

fn dotf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean of `alpha · x` over the cell.
fn weighted_mean(c: &Complex, t: CellRef, alpha: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for p in &c.cell(t).pieces {
        let vol = q_to_f64(&p.volume_factor());
        let pts = p.corner_points();
        let centroid: Vec<f64> = (0..alpha.len()).map(|a| pts.iter().map(|x| q_to_f64(&x[a])).sum::<f64>() / pts.len() as f64).collect();
        num += vol * dotf(alpha, &centroid);
        den += vol;
    }
    num / den
}

/// Harmonic machinery for a system and a product.
#[derive(Clone, Debug)]
pub struct Harmonic<F> {
    sys: Arc<ElementSystem>,
    products: Products<F>,
    /// Constraint rows `[dim][cell][k]`.
    rows: Vec<Vec<Vec<Matrix<F>>>>,
    exact: Vec<Vec<bool>>,
}

impl<F: Field + Send> Harmonic<F> {
    pub fn new(sys: Arc<ElementSystem>, products: Products<F>) -> Harmonic<F> {
        let c = sys.complex().clone();
        let rows: Vec<Vec<Vec<Matrix<F>>>> = (0..=c.dim())
            .map(|j| (0..c.num_cells(j)).into_par_iter().map(|i| (0..=j).map(|k| constraint_rows(&sys, &products, (j, i), k)).collect()).collect())
            .collect();
        let exact = (0..=c.dim()).map(|j| (0..c.num_cells(j)).into_par_iter().map(|i| sys.exact_kernel((j, i))).collect()).collect();
        Harmonic { sys, products, rows, exact }
    }

    pub fn system(&self) -> &Arc<ElementSystem> {
        &self.sys
    }

    pub fn products(&self) -> &Products<F> {
        &self.products
    }

    pub fn constraints(&self, t: CellRef, k: usize) -> &Matrix<F> {
        &self.rows[t.0][t.1][k]
    }

    fn id(&self, t: CellRef) -> String {
        self.sys.complex().cell(t).id.clone()
    }

    pub fn is_harmonic(&self, t: CellRef, k: usize, coeffs: &[F]) -> bool {
        let r = self.constraints(t, k).mul_vec(coeffs);
        let scale = coeffs.iter().map(|x| x.magnitude()).fold(0.0, f64::max).max(1.0) * self.constraints(t, k).max_abs().max(1.0);
        r.iter().all(|x| x.negligible(scale))
    }

    /// Harmonicity of a form given by its pieces.
    pub fn check_form(&self, t: CellRef, k: usize, u: &CellForm) -> Result<bool> {
        let c = self.sys.space(t, k).and_then(|s| s.coords(u)).ok_or_else(|| HarmonicError::NotInParentSpace(self.id(t)))?;
        Ok(self.is_harmonic(t, k, &c.iter().map(F::from_q).collect::<Vec<_>>()))
    }

    /// Unique harmonic extension of stacked facet data (`R_T` row layout).
    pub fn extend(&self, t: CellRef, k: usize, boundary: &[F]) -> Result<Vec<F>> {
        if !self.exact[t.0][t.1] {
            return Err(HarmonicError::SequenceInexact(self.id(t)));
        }
        let r = self.sys.boundary_matrix(t, k).map(F::from_q);
        let h = self.constraints(t, k);
        let mut rhs = boundary.to_vec();
        rhs.extend(std::iter::repeat(F::nil()).take(h.nrows()));
        self.unique_solve(t, &r.vstack(h), &rhs, r.nrows())
    }

    /// Unique harmonic top-degree form with integral `alpha`.
    pub fn top_form(&self, t: CellRef, alpha: F) -> Result<Vec<F>> {
        if !self.exact[t.0][t.1] {
            return Err(HarmonicError::SequenceInexact(self.id(t)));
        }
        let m = t.0;
        let ints: Vec<F> = self.sys.cell_integrals(t).iter().map(F::from_q).collect();
        let a = Matrix::from_rows(&[ints], self.sys.dim_of(t, m)).vstack(self.constraints(t, m));
        let mut rhs = vec![alpha];
        rhs.extend(std::iter::repeat(F::nil()).take(a.nrows() - 1));
        self.unique_solve(t, &a, &rhs, 1)
    }

    fn unique_solve(&self, t: CellRef, a: &Matrix<F>, rhs: &[F], data_rows: usize) -> Result<Vec<F>> {
        if a.rank() < a.ncols() {
            return Err(HarmonicError::NotUnique(self.id(t)));
        }
        let x = a.solve(rhs).ok_or_else(|| HarmonicError::NotExtendable(self.id(t)))?;
        let res = a.mul_vec(&x);
        let scale = rhs.iter().map(|v| v.magnitude()).fold(1.0, f64::max);
        if res.iter().zip(rhs).take(data_rows.max(rhs.len())).any(|(p, q)| !p.sub(q).negligible(scale * 1e4)) {
            return Err(HarmonicError::NotExtendable(self.id(t)));
        }
        Ok(x)
    }

    /// The locally harmonic subsystem: forms whose every trace is harmonic.
    pub fn subsystem(&self) -> Result<HarmonicSubsystem<F>> {
        let rep = self.sys.compatibility();
        if !rep.compatible {
            return Err(HarmonicError::ParentNotCompatible(rep.failing_cells.join(",")));
        }
        Ok(self.subsystem_unchecked())
    }

    pub fn subsystem_unchecked(&self) -> HarmonicSubsystem<F> {
        let c = self.sys.complex().clone();
        let spaces = (0..=c.dim())
            .map(|j| {
                (0..c.num_cells(j))
                    .into_par_iter()
                    .map(|i| {
                        let t = (j, i);
                        (0..=j)
                            .map(|k| {
                                let n = self.sys.dim_of(t, k);
                                let mut rows = Matrix::zeros(0, n);
                                for &s in &c.cell(t).closure {
                                    if s.0 < k {
                                        continue;
                                    }
                                    let r = self.sys.restriction_matrix(t, s, k).expect("closure subcell").map(F::from_q);
                                    rows = rows.vstack(&self.constraints(s, k).mul(&r));
                                }
                                Matrix::from_cols(&rows.null_space(), n)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        HarmonicSubsystem { parent: self.sys.clone(), spaces }
    }

    /// For every k-cell, the global family whose De Rham image is the
    /// indicator of that cell, by harmonic top forms and extensions.
    pub fn canonical_basis(&self, k: usize) -> Result<CanonicalBasis<F>> {
        let c = self.sys.complex().clone();
        let g = self.sys.global_space_all(k);
        let kcells: Vec<CellRef> = (0..c.num_cells(k)).map(|i| (k, i)).collect();
        let tops: Vec<Vec<F>> = kcells.iter().map(|&t| self.top_form(t, F::unit())).collect::<Result<_>>()?;
        let mut ops: Vec<Vec<Matrix<F>>> = vec![Vec::new(); c.dim() + 1];
        for j in k + 1..=c.dim() {
            ops[j] = (0..c.num_cells(j)).into_par_iter().map(|i| self.extension_operator((j, i), k)).collect::<Result<_>>()?;
        }
        let families: Vec<Vec<F>> = kcells
            .par_iter()
            .enumerate()
            .map(|(ci, _)| {
                let mut fam = vec![F::nil(); g.total];
                let (off, n) = g.offsets[&kcells[ci]];
                fam[off..off + n].clone_from_slice(&tops[ci]);
                for j in k + 1..=c.dim() {
                    for i in 0..c.num_cells(j) {
                        let t = (j, i);
                        let mut b = Vec::new();
                        for &(f, _) in &c.cell(t).faces {
                            let (o, n) = g.offsets[&(j - 1, f)];
                            b.extend_from_slice(&fam[o..o + n]);
                        }
                        if b.iter().all(|x| *x == F::nil()) {
                            continue;
                        }
                        let u = ops[j][i].mul_vec(&b);
                        let (o, n) = g.offsets[&t];
                        fam[o..o + n].clone_from_slice(&u);
                    }
                }
                fam
            })
            .collect();
        let rho_rows: Vec<Vec<F>> = kcells
            .iter()
            .map(|&t| {
                let ints: Vec<F> = self.sys.cell_integrals(t).iter().map(F::from_q).collect();
                let (off, n) = g.offsets[&t];
                families.iter().map(|fam| crate::linalg::dot(&fam[off..off + n], &ints)).collect()
            })
            .collect();
        Ok(CanonicalBasis { k, space: g, families, rho: Matrix::from_rows(&rho_rows, kcells.len()) })
    }

    /// Linear map from facet data to the harmonic extension on `t`.
    fn extension_operator(&self, t: CellRef, k: usize) -> Result<Matrix<F>> {
        if !self.exact[t.0][t.1] {
            return Err(HarmonicError::SequenceInexact(self.id(t)));
        }
        let r = self.sys.boundary_matrix(t, k).map(F::from_q);
        let a = r.vstack(self.constraints(t, k));
        if a.rank() < a.ncols() {
            return Err(HarmonicError::NotUnique(self.id(t)));
        }
        let rows = a.nrows();
        let Rref { matrix: m, pivots } = a.hstack(&Matrix::identity(rows)).rref();
        let n = a.ncols();
        let mut op = Matrix::zeros(n, r.nrows());
        for (i, &p) in pivots.iter().enumerate().filter(|e| *e.1 < n) {
            for j in 0..r.nrows() {
                op[(p, j)] = m[(i, n + j)].clone();
            }
        }
        Ok(op)
    }
}

/// Rows expressing harmonicity of coefficient vectors of `A^k(T)`.
fn constraint_rows<F: Field>(sys: &ElementSystem, prods: &Products<F>, t: CellRef, k: usize) -> Matrix<F> {
    let n = sys.dim_of(t, k);
    let mut rows = Matrix::zeros(0, n);
    let kernel = |k: usize| Matrix::from_cols(&sys.kernel_space(t, k), sys.dim_of(t, k)).map(F::from_q);
    if k < t.0 {
        let d = sys.d_matrix(t, k).map(F::from_q);
        let dk = d.mul(&kernel(k));
        rows = rows.vstack(&dk.transpose().mul(prods.get(t, k + 1)).mul(&d));
    }
    if k >= 1 {
        let dk = sys.d_matrix(t, k - 1).map(F::from_q).mul(&kernel(k - 1));
        rows = rows.vstack(&dk.transpose().mul(prods.get(t, k)));
    }
    rows
}

/// `Å`: coefficient bases (columns) inside the parent spaces.
#[derive(Clone, Debug)]
pub struct HarmonicSubsystem<F> {
    pub parent: Arc<ElementSystem>,
    pub spaces: Vec<Vec<Vec<Matrix<F>>>>,
}

impl<F: Field> HarmonicSubsystem<F> {
    pub fn dim_of(&self, t: CellRef, k: usize) -> usize {
        self.spaces[t.0][t.1][k].ncols()
    }

    /// Whether `Å` equals the parent on every cell.
    pub fn is_whole_parent(&self) -> bool {
        let c = self.parent.complex();
        c.all_cells().into_iter().all(|t| (0..=t.0).all(|k| self.dim_of(t, k) == self.parent.dim_of(t, k)))
    }
}

impl HarmonicSubsystem<Q> {
    /// `Å` as an element system in its own right.
    pub fn to_system(&self) -> std::result::Result<ElementSystem, FesError> {
        let c = self.parent.complex().clone();
        let spaces = (0..=c.dim())
            .map(|j| {
                (0..c.num_cells(j))
                    .map(|i| {
                        (0..=j)
                            .map(|k| {
                                let sp = self.parent.space((j, i), k).unwrap();
                                let m = &self.spaces[j][i][k];
                                (0..m.ncols()).map(|col| sp.combine(&m.col(col))).collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        ElementSystem::from_spaces(c, spaces)
    }

    /// Builds the system, re-runs the compatibility checks and confirms that
    /// every De Rham matrix is square and invertible.
    pub fn verified_system(&self) -> Result<ElementSystem> {
        let sys = self.to_system()?;
        let rep = sys.compatibility();
        if !rep.compatible {
            return Err(HarmonicError::ParentNotCompatible(rep.failing_cells.join(",")));
        }
        for k in 0..=sys.complex().dim() {
            let rho = sys.de_rham(&sys.global_space_all(k));
            if rho.nrows() != rho.ncols() || rho.rank() != rho.nrows() {
                return Err(HarmonicError::RhoNotInvertible(k));
            }
        }
        Ok(sys)
    }
}

/// Cochain-indexed basis: `families[c]` lives in the parent's global
/// coordinate layout of `space`.
#[derive(Clone, Debug)]
pub struct CanonicalBasis<F> {
    pub k: usize,
    pub space: crate::fesystem::GlobalSpace,
    pub families: Vec<Vec<F>>,
    pub rho: Matrix<F>,
}

impl<F: Field> CanonicalBasis<F> {
    pub fn rho_is_identity(&self, tol: f64) -> bool {
        let n = self.rho.nrows();
        self.rho.ncols() == n && (0..n).all(|i| (0..n).all(|j| self.rho[(i, j)].sub(&if i == j { F::unit() } else { F::nil() }).magnitude() <= tol))
    }
}

/// Residuals of the weighted harmonic equations for `u = exp(β) v` with `v`
/// constant, tested against `dA_0` on a cell by quadrature:
/// `∫ exp(-β) du · dv'` and `∫ exp(-β) u · dw`.
pub fn exponential_residual(sys: &ElementSystem, t: CellRef, k: usize, alpha: &[f64], v: &[f64]) -> f64 {
    let c = sys.complex();
    let mean = weighted_mean(c, t, alpha);
    let mut worst: f64 = 0.0;
    for (tk, deg) in [(k, k + 1), (k.wrapping_sub(1), k)] {
        if tk > t.0 || deg > t.0 {
            continue;
        }
        // test forms d w for w in A_0^{tk}
        let kernel = sys.kernel_space(t, tk);
        for w in kernel {
            let dw = Complex::d(&sys.form(t, tk, &w));
            let mut total = 0.0;
            for (p, piece) in c.cell(t).pieces.iter().enumerate() {
                let m = piece.dim();
                let origin: Vec<f64> = piece.origin.iter().map(q_to_f64).collect();
                let frame = piece.frame.to_f64();
                let slope: Vec<f64> = (0..m).map(|c| dotf(alpha, &frame.col(c))).collect();
                let base = dotf(alpha, &origin) - mean;
                // constant v and α in chart coordinates
                let vc = pull_covector_form(v, &frame, k);
                let uform = if deg == k { vc.clone() } else { wedge1(&slope, &vc, m) };
                let ginv = piece.metric().inverse().unwrap().to_f64();
                let metric = crate::polyforms::alt_metric(&ginv, deg);
                let rule = crate::quadrature::shape_rule(&piece.shape, 2 * dw[p].poly_degree() + 4);
                let vol = q_to_f64(&piece.volume_factor());
                for (x, wq) in rule.points.iter().zip(&rule.weights) {
                    let beta = base + dotf(&slope, x);
                    // exp(-β) times exp(β) cancels analytically; evaluate both factors
                    let factor = (-beta).exp() * beta.exp();
                    let dwx = dw[p].eval(x);
                    let mut s = 0.0;
                    for ((a, b), g) in &metric {
                        if let (Some(ua), Some(wb)) = (uform.get(a), dwx.get(b)) {
                            s += g * ua * wb;
                        }
                    }
                    total += wq * vol * factor * s;
                }
            }
            worst = worst.max(total.abs());
        }
    }
    worst
}

/// Chart components of a constant ambient k-covector (given for k ≤ 1 as a
/// vector, for top degree as a scalar) keyed by alternating index.
fn pull_covector_form(v: &[f64], frame: &Matrix<f64>, k: usize) -> std::collections::BTreeMap<u8, f64> {
    let mut out = std::collections::BTreeMap::new();
    match k {
        0 => {
            out.insert(0, v[0]);
        }
        1 => {
            for c in 0..frame.ncols() {
                out.insert(1u8 << c, dotf(v, &frame.col(c)));
            }
        }
        _ => {
            // top-degree scalar density in chart coordinates
            out.insert(((1u16 << k) - 1) as u8, v[0]);
        }
    }
    out
}

/// `α ∧ v` for a chart covector `α` and a constant form `v`.
fn wedge1(alpha: &[f64], v: &std::collections::BTreeMap<u8, f64>, m: usize) -> std::collections::BTreeMap<u8, f64> {
    let mut out = std::collections::BTreeMap::new();
    for (&idx, &c) in v {
        for (i, &a) in alpha.iter().enumerate().take(m) {
            if let Some(s) = crate::polyforms::wedge_sign(1 << i, idx) {
                *out.entry((1u8 << i) | idx).or_insert(0.0) += s as f64 * a * c;
            }
        }
    }
    out
}

/// Whitney subsystem check: `Å` for the given product contains the parent.
pub fn whitney_is_harmonic(sys: &Arc<ElementSystem>, products: Products<Q>) -> bool {
    Harmonic::new(sys.clone(), products).subsystem_unchecked().is_whole_parent()
}

/// Subspace comparison for floating bases: rank of the joined columns.
pub fn spans_differ(a: &Matrix<f64>, b: &Matrix<f64>) -> bool {
    a.hstack(b).rank() > a.rank().max(b.rank())
}

/// Constant form on every piece.
pub fn constant_cell_form(c: &Complex, t: CellRef, value: Q) -> CellForm {
    c.cell(t).pieces.iter().map(|p| PolyForm::constant(p.dim(), value.clone())).collect()
}
