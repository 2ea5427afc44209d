//! Degrees of freedom as mirror systems, and the interpolators and
//! extensions they determine.
//!
//! Functionals act on single-piece cells. Those given by weights act on any
//! polynomial form; those given as covectors act on a finite host space, the
//! trimmed space of a chosen order on each cell.

use crate::complex::{CellRef, Complex};
use crate::fesystem::{ElementSystem, FesError, LocalSpace};
use crate::harmonic::{Harmonic, HarmonicError};
use crate::linalg::{dot, qi, Matrix, Q};
use crate::polyforms::{alt_metric, full_poly_basis, inner_product_exact, trimmed_basis, PolyForm};
use crate::tensorfes::tensor_form;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MirrorError {
    #[error("system extensions were not verified: {0}")]
    ExtensionsUnverified(String),
    #[error("mirror system is not faithful on {0}")]
    NotFaithful(String),
    #[error("input is not restriction-consistent on {0}")]
    InconsistentInput(String),
    #[error("host space too small on {0}")]
    HostSpaceTooSmall(String),
    #[error("system is not compatible: {0}")]
    NotCompatible(String),
    #[error("boundary data cannot be extended into {0}")]
    NotExtendable(String),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("tensor factors are not faithful")]
    NotFaithfulInputs,
    #[error("cell {0} has several pieces")]
    NotSimplicial(String),
    #[error(transparent)]
    Fes(#[from] FesError),
    #[error(transparent)]
    Harmonic(#[from] HarmonicError),
}

pub type Result<T> = std::result::Result<T, MirrorError>;

/// A linear functional on forms over a cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Functional {
    /// `u ↦ ∫_T v ∧ u`.
    Wedge(PolyForm),
    /// `u ↦ ∫_T <u, v>` for the Euclidean metric.
    Inner(PolyForm),
    /// `u ↦ ∫_T <du, v>`.
    InnerD(PolyForm),
    /// Covector against the host basis.
    Host(Vec<Q>),
}

/// Trimmed host spaces of a fixed order, per simplex dimension and degree.
#[derive(Clone, Debug)]
pub struct Host {
    pub order: usize,
    spaces: Vec<Vec<LocalSpace>>,
}

impl Host {
    pub fn new(order: usize, max_dim: usize) -> Host {
        let spaces = (0..=max_dim)
            .map(|m| (0..=m).map(|k| LocalSpace::new(trimmed_basis(order, k, m).into_iter().map(|f| vec![f]).collect(), vec![m], k).expect("independent basis")).collect())
            .collect();
        Host { order, spaces }
    }

    pub fn space(&self, m: usize, k: usize) -> &LocalSpace {
        &self.spaces[m][k]
    }

    pub fn basis(&self, m: usize, k: usize) -> Vec<PolyForm> {
        self.spaces[m][k].basis.iter().map(|f| f[0].clone()).collect()
    }

    pub fn coords(&self, m: usize, f: &PolyForm) -> Option<Vec<Q>> {
        self.spaces[m][f.degree()].coords(&vec![f.clone()])
    }
}

/// Functionals per `[dim][cell][k]`.
#[derive(Clone, Debug)]
pub struct MirrorSystem {
    complex: Arc<Complex>,
    host: Option<Host>,
    pub funcs: Vec<Vec<Vec<Vec<Functional>>>>,
}

impl MirrorSystem {
    pub fn new(complex: Arc<Complex>, host: Option<Host>, funcs: Vec<Vec<Vec<Vec<Functional>>>>) -> Result<MirrorSystem> {
        for t in complex.all_cells() {
            if complex.cell(t).pieces.len() != 1 {
                return Err(MirrorError::NotSimplicial(complex.cell(t).id.clone()));
            }
        }
        Ok(MirrorSystem { complex, host, funcs })
    }

    pub fn complex(&self) -> &Arc<Complex> {
        &self.complex
    }

    pub fn host(&self) -> Option<&Host> {
        self.host.as_ref()
    }

    pub fn get(&self, t: CellRef, k: usize) -> &[Functional] {
        &self.funcs[t.0][t.1][k]
    }

    fn id(&self, t: CellRef) -> String {
        self.complex.cell(t).id.clone()
    }

    /// Value of a functional on a form over `t`.
    pub fn eval(&self, t: CellRef, l: &Functional, f: &PolyForm) -> Result<Q> {
        let piece = &self.complex.cell(t).pieces[0];
        let metric = |k: usize| alt_metric(&piece.metric().inverse().expect("nondegenerate piece"), k);
        Ok(match l {
            Functional::Wedge(v) => {
                if v.degree() + f.degree() != t.0 {
                    Q::zero()
                } else {
                    v.wedge(f).integrate_shape(&piece.shape)
                }
            }
            Functional::Inner(v) => inner_product_exact(f, v, &piece.shape, &metric(f.degree()), &piece.volume_factor()),
            Functional::InnerD(v) => {
                if f.degree() + 1 > t.0 {
                    Q::zero()
                } else {
                    inner_product_exact(&f.d(), v, &piece.shape, &metric(f.degree() + 1), &piece.volume_factor())
                }
            }
            Functional::Host(c) => {
                let host = self.host.as_ref().ok_or_else(|| MirrorError::HostSpaceTooSmall(self.id(t)))?;
                let x = host.coords(t.0, f).ok_or_else(|| MirrorError::HostSpaceTooSmall(self.id(t)))?;
                dot(c, &x)
            }
        })
    }

    /// Mirror image of a form on `t`.
    pub fn image(&self, t: CellRef, k: usize, f: &PolyForm) -> Result<Vec<Q>> {
        self.get(t, k).iter().map(|l| self.eval(t, l, f)).collect()
    }

    /// Rows: functionals. Columns: the given forms.
    pub fn pairing(&self, t: CellRef, k: usize, forms: &[PolyForm]) -> Result<Matrix<Q>> {
        let rows: Vec<Vec<Q>> = self.get(t, k).iter().map(|l| forms.iter().map(|f| self.eval(t, l, f)).collect::<Result<_>>()).collect::<Result<_>>()?;
        Ok(Matrix::from_rows(&rows, forms.len()))
    }

    /// Functionals of `(t, k)` as covectors on the host basis.
    pub fn host_covectors(&self, t: CellRef, k: usize) -> Result<Matrix<Q>> {
        let host = self.host.as_ref().ok_or_else(|| MirrorError::HostSpaceTooSmall(self.id(t)))?;
        self.pairing(t, k, &host.basis(t.0, k))
    }

    /// DOF table: one record per functional.
    pub fn dof_table(&self) -> serde_json::Value {
        let mut out = Vec::new();
        for t in self.complex.all_cells() {
            for k in 0..=t.0 {
                for (i, l) in self.get(t, k).iter().enumerate() {
                    let entries: Option<Vec<String>> = self.host.as_ref().and_then(|h| {
                        h.basis(t.0, k).iter().map(|f| self.eval(t, l, f).ok().map(|q| crate::linalg::format_q(&q))).collect()
                    });
                    out.push(serde_json::json!({ "cell": self.id(t), "k": k, "index": i, "covector": entries }));
                }
            }
        }
        serde_json::Value::Array(out)
    }
}

fn closure(c: &Complex, cells: &[CellRef]) -> Vec<CellRef> {
    let mut s = std::collections::BTreeSet::new();
    for &t in cells {
        s.extend(c.cell(t).closure.iter().copied());
    }
    s.into_iter().collect()
}

fn check_single_pieces(c: &Complex) -> Result<()> {
    for t in c.all_cells() {
        if c.cell(t).pieces.len() != 1 {
            return Err(MirrorError::NotSimplicial(c.cell(t).id.clone()));
        }
    }
    Ok(())
}

/// `{u ↦ ∫_T v∧u : v ∈ ℙ_{p-m+k-1}𝔸^{m-k}(T)}` with a host of order `p + 1`.
pub fn canonical_trimmed_mirrors(complex: Arc<Complex>, p: usize) -> Result<MirrorSystem> {
    canonical_trimmed_mirrors_with_host(complex, p, 1)
}

pub fn canonical_trimmed_mirrors_with_host(complex: Arc<Complex>, p: usize, extra: usize) -> Result<MirrorSystem> {
    check_single_pieces(&complex)?;
    let funcs = (0..=complex.dim())
        .map(|m| {
            (0..complex.num_cells(m))
                .map(|_| {
                    (0..=m)
                        .map(|k| {
                            let r = p as i64 - m as i64 + k as i64 - 1;
                            if r < 0 {
                                Vec::new()
                            } else {
                                full_poly_basis(r as usize, m - k, m).into_iter().map(Functional::Wedge).collect()
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let host = Host::new(p + extra, complex.dim());
    MirrorSystem::new(complex, Some(host), funcs)
}

fn kernel_forms(sys: &ElementSystem, t: CellRef, k: usize) -> Vec<PolyForm> {
    sys.kernel_space(t, k).iter().map(|w| sys.form(t, k, w)[0].clone()).collect()
}

/// `{a(·, v) : v ∈ A_0^k(T)}` with the `L²` product.
pub fn l2_mirrors(sys: &ElementSystem, host_order: usize) -> Result<MirrorSystem> {
    let c = sys.complex().clone();
    check_single_pieces(&c)?;
    let funcs = (0..=c.dim())
        .map(|m| (0..c.num_cells(m)).map(|i| (0..=m).map(|k| kernel_forms(sys, (m, i), k).into_iter().map(Functional::Inner).collect()).collect()).collect())
        .collect();
    MirrorSystem::new(c.clone(), Some(Host::new(host_order, c.dim())), funcs)
}

/// Projection-based mirrors for the `L²` product:
/// `a(·, dA_0^{k-1}) + a(d·, dA_0^k)` below top degree and
/// `a(·, dA_0^{m-1}) + ℝ∫` in top degree, reduced to independent functionals.
pub fn harmonic_mirrors(sys: &ElementSystem, host_order: usize) -> Result<MirrorSystem> {
    let rep = sys.compatibility();
    if !rep.compatible {
        return Err(MirrorError::NotCompatible(rep.failing_cells.join(",")));
    }
    let c = sys.complex().clone();
    check_single_pieces(&c)?;
    let host = Host::new(host_order, c.dim());
    let proto = MirrorSystem::new(c.clone(), Some(host.clone()), Vec::new())?;
    let funcs = (0..=c.dim())
        .map(|m| {
            (0..c.num_cells(m))
                .into_par_iter()
                .map(|i| {
                    let t = (m, i);
                    (0..=m)
                        .map(|k| {
                            let mut gens = Vec::new();
                            if k >= 1 {
                                gens.extend(kernel_forms(sys, t, k - 1).iter().map(|w| Functional::Inner(w.d())));
                            }
                            if k < m {
                                gens.extend(kernel_forms(sys, t, k).iter().map(|w| Functional::InnerD(w.d())));
                            } else {
                                gens.push(Functional::Wedge(PolyForm::constant(m, Q::one())));
                            }
                            independent_functionals(&proto, t, k, gens)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    MirrorSystem::new(c, Some(host), funcs)
}

/// Keeps functionals whose host covectors are independent.
fn independent_functionals(ms: &MirrorSystem, t: CellRef, k: usize, gens: Vec<Functional>) -> Vec<Functional> {
    let basis = ms.host.as_ref().unwrap().basis(t.0, k);
    let rows: Vec<Vec<Q>> = gens.iter().map(|l| basis.iter().map(|f| ms.eval(t, l, f).unwrap()).collect()).collect();
    let piv = Matrix::from_rows(&rows, basis.len()).transpose().rref().pivots;
    piv.into_iter().map(|i| gens[i].clone()).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct FaithfulnessReport {
    pub faithful: bool,
    /// `(cell, k, functionals, kernel dimension, rank)` where the pairing fails.
    pub failing: Vec<(String, usize, usize, usize, usize)>,
    /// Global isomorphism on sampled subcomplexes.
    pub subcomplexes: Vec<bool>,
}

/// Square invertible pairings against `A_0^k(T)` on every cell.
pub fn faithfulness_check(ms: &MirrorSystem, sys: &ElementSystem) -> Result<FaithfulnessReport> {
    let c = sys.complex().clone();
    for t in c.all_cells() {
        for k in 0..=t.0 {
            if !sys.extension_holds(t, k) {
                return Err(MirrorError::ExtensionsUnverified(format!("{} degree {k}", c.cell(t).id)));
            }
        }
    }
    let cells = c.all_cells();
    let results: Vec<Vec<(String, usize, usize, usize, usize)>> = cells
        .par_iter()
        .map(|&t| {
            let mut bad = Vec::new();
            for k in 0..=t.0 {
                let p = ms.pairing(t, k, &kernel_forms(sys, t, k)).unwrap_or_else(|_| Matrix::zeros(0, 0));
                let n = sys.kernel_space(t, k).len();
                let rank = p.rank();
                if p.nrows() != n || rank != n {
                    bad.push((c.cell(t).id.clone(), k, p.nrows(), n, rank));
                }
            }
            bad
        })
        .collect();
    let failing: Vec<_> = results.into_iter().flatten().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut subcomplexes = Vec::new();
    for _ in 0..3 {
        let mut pick: Vec<CellRef> = cells.clone();
        pick.shuffle(&mut rng);
        let n = rng.gen_range(1..=pick.len());
        let sub = closure(&c, &pick[..n]);
        subcomplexes.push((0..=c.dim()).all(|k| global_isomorphism(ms, sys, &sub, k)));
    }
    Ok(FaithfulnessReport { faithful: failing.is_empty(), failing, subcomplexes })
}

/// Whether `Φ^k` maps `A^k(cells)` isomorphically onto the dual of the
/// collected functionals.
pub fn global_isomorphism(ms: &MirrorSystem, sys: &ElementSystem, cells: &[CellRef], k: usize) -> bool {
    let g = sys.global_space(cells, k);
    let mut rows: Vec<Vec<Q>> = Vec::new();
    for &t in cells.iter().filter(|t| t.0 >= k) {
        for l in ms.get(t, k) {
            let row: Option<Vec<Q>> = (0..g.dim()).map(|i| ms.eval(t, l, &sys.form(t, k, &g.component(i, t))[0]).ok()).collect();
            match row {
                Some(r) => rows.push(r),
                None => return false,
            }
        }
    }
    let m = Matrix::from_rows(&rows, g.dim());
    m.nrows() == g.dim() && m.rank() == g.dim()
}

/// Interpolator of a faithful mirror system onto a system.
#[derive(Clone, Debug)]
pub struct Interpolator {
    pub mirrors: Arc<MirrorSystem>,
    pub sys: Arc<ElementSystem>,
}

/// Coefficients of an interpolant per cell.
pub type CellCoeffs = BTreeMap<CellRef, Vec<Q>>;

impl Interpolator {
    pub fn new(mirrors: Arc<MirrorSystem>, sys: Arc<ElementSystem>) -> Result<Interpolator> {
        let rep = faithfulness_check(&mirrors, &sys)?;
        if let Some(f) = rep.failing.first() {
            return Err(MirrorError::NotFaithful(format!("{} degree {}", f.0, f.1)));
        }
        Ok(Interpolator { mirrors, sys })
    }

    fn id(&self, t: CellRef) -> String {
        self.sys.complex().cell(t).id.clone()
    }

    /// Interpolates per-cell data on a closed set of cells, sweeping
    /// dimensions upward.
    pub fn interpolate_on(&self, cells: &[CellRef], k: usize, data: &(dyn Fn(CellRef) -> PolyForm + Sync)) -> Result<CellCoeffs> {
        let c = self.sys.complex().clone();
        let mut out: CellCoeffs = BTreeMap::new();
        for j in k..=c.dim() {
            let level: Vec<CellRef> = cells.iter().copied().filter(|t| t.0 == j).collect();
            let solved: Vec<(CellRef, Vec<Q>)> = level
                .par_iter()
                .map(|&t| {
                    let mut b = Vec::new();
                    if j > k {
                        for &(f, _) in &c.cell(t).faces {
                            b.extend_from_slice(out.get(&(j - 1, f)).expect("closed cell set"));
                        }
                    }
                    let u = data(t);
                    self.solve_cell(t, k, &b, &self.mirrors.image(t, k, &u)?).map(|x| (t, x))
                })
                .collect::<Result<_>>()?;
            out.extend(solved);
        }
        Ok(out)
    }

    /// The element of `A^k(T)` with trace `b` and mirror image `z`.
    pub fn solve_cell(&self, t: CellRef, k: usize, b: &[Q], z: &[Q]) -> Result<Vec<Q>> {
        let r = self.sys.boundary_matrix(t, k);
        let basis: Vec<PolyForm> = self.sys.space(t, k).unwrap().basis.iter().map(|f| f[0].clone()).collect();
        let l = self.mirrors.pairing(t, k, &basis)?;
        let a = r.vstack(&l);
        let mut rhs = b.to_vec();
        rhs.extend_from_slice(z);
        let x = a.solve(&rhs).ok_or_else(|| MirrorError::InconsistentInput(self.id(t)))?;
        if a.mul_vec(&x) != rhs {
            return Err(MirrorError::InconsistentInput(self.id(t)));
        }
        Ok(x)
    }

    /// Interpolant of an ambient polynomial form, in the global layout.
    pub fn interpolate(&self, k: usize, u: &PolyForm) -> Result<Vec<Q>> {
        let c = self.sys.complex().clone();
        let coeffs = self.interpolate_on(&c.all_cells(), k, &|t| c.restrict_ambient(u, t)[0].clone())?;
        Ok(self.to_family(k, &coeffs))
    }

    /// Local interpolant of a form given on one cell.
    pub fn interpolate_cell(&self, t: CellRef, k: usize, u: &PolyForm) -> Result<Vec<Q>> {
        let c = self.sys.complex().clone();
        let form = vec![u.clone()];
        let coeffs = self.interpolate_on(&c.cell(t).closure, k, &|s| c.trace(t, s, &form)[0].clone())?;
        Ok(coeffs[&t].clone())
    }

    pub fn to_family(&self, k: usize, coeffs: &CellCoeffs) -> Vec<Q> {
        let g = self.sys.global_space_all(k);
        let mut fam = vec![Q::zero(); g.total];
        for (t, (off, n)) in &g.offsets {
            fam[*off..off + n].clone_from_slice(&coeffs[t]);
        }
        fam
    }

    /// Extension of boundary data annihilated by the cell's own mirrors.
    pub fn extension(&self, t: CellRef, k: usize, b: &[Q]) -> Result<Vec<Q>> {
        let z = vec![Q::zero(); self.mirrors.get(t, k).len()];
        self.solve_cell(t, k, b, &z).map_err(|_| MirrorError::NotExtendable(self.id(t)))
    }
}

/// Extension of boundary data annihilated by a faithful system's mirrors.
pub fn extension_from_mirrors(ip: &Interpolator, b: &[Q], t: CellRef, k: usize) -> Result<Vec<Q>> {
    ip.extension(t, k, b)
}

#[derive(Clone, Debug, Serialize)]
pub struct CommutationReport {
    /// `l∘d` lies in the span of the subcell mirrors, for every functional.
    pub rank_condition: bool,
    pub failing: Vec<String>,
    /// `d I u = I d u` for every host basis form on every cell.
    pub host_commutes: bool,
    /// `d I u = I d u` for sampled ambient polynomial forms.
    pub samples_commute: bool,
    /// `δ Φ = Φ d` on the samples, when the rank condition holds.
    pub delta_commutes: Option<bool>,
}

impl CommutationReport {
    pub fn passes(&self) -> bool {
        self.rank_condition && self.host_commutes && self.samples_commute && self.delta_commutes != Some(false)
    }
}

/// For `l ∈ Z^k(T)`, coefficients expressing `l∘d` over `Z^{k-1}` of the
/// closure of `T` (keyed by cell and functional index), if it lies there.
fn d_hat(ms: &MirrorSystem, t: CellRef, k: usize, l: &Functional) -> Result<Option<Vec<(CellRef, usize, Q)>>> {
    let c = ms.complex.clone();
    let host = ms.host.as_ref().ok_or_else(|| MirrorError::HostSpaceTooSmall(ms.id(t)))?;
    let basis = host.basis(t.0, k - 1);
    let target: Vec<Q> = basis.iter().map(|h| ms.eval(t, l, &h.d())).collect::<Result<_>>()?;
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<Q>> = Vec::new();
    let form_of = |h: &PolyForm| vec![h.clone()];
    for &s in &c.cell(t).closure {
        if s.0 + 1 < k {
            continue;
        }
        for (i, l2) in ms.get(s, k - 1).iter().enumerate() {
            let row: Vec<Q> = basis.iter().map(|h| ms.eval(s, l2, &c.trace(t, s, &form_of(h))[0])).collect::<Result<_>>()?;
            rows.push(row);
            labels.push((s, i));
        }
    }
    let span = Matrix::from_rows(&rows, basis.len());
    let Some(y) = span.transpose().solve(&target) else { return Ok(None) };
    if span.transpose().mul_vec(&y) != target {
        return Ok(None);
    }
    Ok(Some(labels.into_iter().zip(y).map(|((s, i), q)| (s, i, q)).collect()))
}

/// Rank test of `l∘d ∈ Z^{k-1}(T̃)`, host-level and sampled `dI = Id`.
pub fn commutation_check(ip: &Interpolator, samples: usize, seed: u64) -> Result<CommutationReport> {
    let ms = &ip.mirrors;
    let sys = &ip.sys;
    let c = sys.complex().clone();
    let host = ms.host.as_ref().ok_or_else(|| MirrorError::HostSpaceTooSmall("host".into()))?;
    let mut failing = Vec::new();
    let mut dhat: BTreeMap<(CellRef, usize, usize), Vec<(CellRef, usize, Q)>> = BTreeMap::new();
    for t in c.all_cells() {
        for k in 1..=t.0 {
            for (i, l) in ms.get(t, k).iter().enumerate() {
                match d_hat(ms, t, k, l)? {
                    Some(y) => {
                        dhat.insert((t, k, i), y);
                    }
                    None => failing.push(format!("{} degree {k} functional {i}", c.cell(t).id)),
                }
            }
        }
    }
    let rank_condition = failing.is_empty();

    // every host form on every cell
    let mut host_commutes = true;
    'cells: for t in c.all_cells() {
        for k in 0..t.0 {
            for h in host.basis(t.0, k) {
                let iu = ip.interpolate_cell(t, k, &h)?;
                let lhs = sys.d_matrix(t, k).mul_vec(&iu);
                let rhs = ip.interpolate_cell(t, k + 1, &h.d())?;
                if lhs != rhs {
                    host_commutes = false;
                    break 'cells;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = c.ambient_dim();
    let p = host.order.saturating_sub(1).max(1);
    let mut samples_commute = true;
    let mut delta_ok = true;
    for _ in 0..samples {
        for k in 0..c.dim() {
            let u = random_poly_form(n, k, p, &mut rng);
            let du = u.d();
            let iu = ip.interpolate(k, &u)?;
            let idu = ip.interpolate(k + 1, &du)?;
            let (g0, g1) = (sys.global_space_all(k), sys.global_space_all(k + 1));
            for (&t, &(off, len)) in &g1.offsets {
                let lhs = sys.d_matrix(t, k).mul_vec(g0.slice(&iu, t));
                if lhs != idu[off..off + len] {
                    samples_commute = false;
                }
            }
            if rank_condition {
                // (δ Φ u)(l) = Σ y (Φ u)(l') against Φ(du)(l)
                for (&(t, kk, i), y) in &dhat {
                    if kk != k + 1 {
                        continue;
                    }
                    let lhs = ms.eval(t, &ms.get(t, kk)[i], &c.restrict_ambient(&du, t)[0])?;
                    let mut rhs = Q::zero();
                    for (s, j, q) in y {
                        rhs += q * ms.eval(*s, &ms.get(*s, k)[*j], &c.restrict_ambient(&u, *s)[0])?;
                    }
                    if lhs != rhs {
                        delta_ok = false;
                    }
                }
            }
        }
    }
    Ok(CommutationReport { rank_condition, failing, host_commutes, samples_commute, delta_commutes: rank_condition.then_some(delta_ok) })
}

/// `z(I, E)^k(T)`: the annihilator of the kernel of `(id - E∂)∘I` on the
/// host, as host covectors.
pub fn mirror_from_ie(ip: &Interpolator, ext: &(dyn Fn(CellRef, usize, &[Q]) -> Result<Vec<Q>> + Sync), host: Host) -> Result<MirrorSystem> {
    let sys = ip.sys.clone();
    let c = sys.complex().clone();
    let funcs = (0..=c.dim())
        .map(|m| {
            (0..c.num_cells(m))
                .into_par_iter()
                .map(|i| {
                    let t = (m, i);
                    (0..=m)
                        .map(|k| {
                            let basis = host.basis(m, k);
                            let mut cols = Vec::new();
                            for h in &basis {
                                let iu = ip.interpolate_cell(t, k, h)?;
                                let b = sys.boundary_matrix(t, k).mul_vec(&iu);
                                let e = if b.is_empty() { vec![Q::zero(); iu.len()] } else { ext(t, k, &b)? };
                                let q: Vec<Q> = iu.iter().zip(&e).map(|(x, y)| x - y).collect();
                                let form = sys.form(t, k, &q);
                                cols.push(host.coords(m, &form[0]).ok_or_else(|| MirrorError::HostSpaceTooSmall(c.cell(t).id.clone()))?);
                            }
                            let mat = Matrix::from_cols(&cols, basis.len());
                            Ok(mat.row_space().into_iter().map(Functional::Host).collect())
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    MirrorSystem::new(c, Some(host), funcs)
}

/// Whether two mirror systems span the same host covectors everywhere.
pub fn same_span(a: &MirrorSystem, b: &MirrorSystem) -> Result<bool> {
    for t in a.complex.all_cells() {
        for k in 0..=t.0 {
            let (x, y) = (a.host_covectors(t, k)?, b.host_covectors(t, k)?);
            let r = x.rank();
            if r != y.rank() || x.vstack(&y).rank() != r {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Tensor product of weight mirror systems on a product complex.
pub fn tensor_mirrors(z: &MirrorSystem, y: &MirrorSystem, a: &ElementSystem, b: &ElementSystem, product: Arc<Complex>) -> Result<MirrorSystem> {
    if !faithfulness_check(z, a)?.faithful || !faithfulness_check(y, b)?.faithful {
        return Err(MirrorError::NotFaithfulInputs);
    }
    let funcs = (0..=product.dim())
        .map(|j| {
            (0..product.num_cells(j))
                .map(|i| {
                    let (u, v) = product.cell((j, i)).factors.expect("product complex");
                    (0..=j)
                        .map(|k| {
                            let mut out = Vec::new();
                            for l in 0..=k.min(u.0) {
                                if k - l > v.0 {
                                    continue;
                                }
                                for f in z.get(u, l) {
                                    for g in y.get(v, k - l) {
                                        let (Functional::Wedge(fv), Functional::Wedge(gv)) = (f, g) else {
                                            return Err(MirrorError::HostSpaceTooSmall(product.cell((j, i)).id.clone()));
                                        };
                                        out.push(Functional::Wedge(tensor_form(&vec![fv.clone()], &vec![gv.clone()])[0].clone()));
                                    }
                                }
                            }
                            Ok(out)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    MirrorSystem::new(product, None, funcs)
}

/// Projections used by the extension-projection interpolator.
#[derive(Clone, Debug)]
pub enum Projection {
    /// Cellwise `L²` projection onto `A^k(T)`.
    L2,
    /// The interpolator of a mirror system, applied cell by cell.
    Mirror(Interpolator),
}

/// `Ju = Pu + E(J∂u - ∂Pu)` below top degree, `Ju = Pu` in top degree,
/// with `E` the harmonic extension.
#[derive(Clone, Debug)]
pub struct EpInterpolator {
    pub sys: Arc<ElementSystem>,
    pub harmonic: Harmonic<Q>,
    pub projection: Projection,
    pub host: Host,
}

impl EpInterpolator {
    /// Builds the interpolator after checking that `E` commutes with `d`,
    /// and that `P` commutes with `d` and preserves integrals on the host.
    pub fn new(harmonic: Harmonic<Q>, projection: Projection, host: Host) -> Result<EpInterpolator> {
        let ep = EpInterpolator { sys: harmonic.system().clone(), harmonic, projection, host };
        ep.check_extensions()?;
        ep.check_projection()?;
        Ok(ep)
    }

    pub fn unchecked(harmonic: Harmonic<Q>, projection: Projection, host: Host) -> EpInterpolator {
        EpInterpolator { sys: harmonic.system().clone(), harmonic, projection, host }
    }

    fn id(&self, t: CellRef) -> String {
        self.sys.complex().cell(t).id.clone()
    }

    pub fn project(&self, t: CellRef, k: usize, u: &PolyForm) -> Result<Vec<Q>> {
        match &self.projection {
            Projection::L2 => {
                let piece = &self.sys.complex().cell(t).pieces[0];
                let metric = alt_metric(&piece.metric().inverse().unwrap(), k);
                let vol = piece.volume_factor();
                let basis: Vec<PolyForm> = self.sys.space(t, k).unwrap().basis.iter().map(|f| f[0].clone()).collect();
                let g = crate::polyforms::gram_exact(&basis, &piece.shape, &piece.metric().inverse().unwrap(), &vol);
                let rhs: Vec<Q> = basis.iter().map(|b| inner_product_exact(u, b, &piece.shape, &metric, &vol)).collect();
                Ok(g.solve(&rhs).expect("Gram matrices are invertible"))
            }
            Projection::Mirror(ip) => ip.interpolate_cell(t, k, u),
        }
    }

    /// Diagram checks for the harmonic extensions on every cell.
    pub fn check_extensions(&self) -> Result<()> {
        let sys = &self.sys;
        let c = sys.complex().clone();
        let fail = |t: CellRef, what: &str| MirrorError::PreconditionFailed(format!("{what} on {}", c.cell(t).id));
        for t in c.all_cells().into_iter().filter(|t| t.0 >= 1) {
            let m = t.0;
            let bd = c.boundary_cells(t);
            // constants extend to constants
            let one = sys.space(t, 0).unwrap().coords(&crate::harmonic::constant_cell_form(&c, t, Q::one())).ok_or_else(|| fail(t, "constants"))?;
            if self.harmonic.extend(t, 0, &sys.boundary_matrix(t, 0).mul_vec(&one))? != one {
                return Err(fail(t, "E on constants"));
            }
            for k in 0..m {
                let g = sys.global_space(&bd, k);
                for i in 0..g.dim() {
                    let fam = g.dense(i);
                    let b = stack_facets(&c, t, &g, &fam);
                    let e = self.harmonic.extend(t, k, &b)?;
                    let de = sys.d_matrix(t, k).mul_vec(&e);
                    let expect = if k + 1 < m {
                        // d on the boundary, facet by facet
                        let mut db = Vec::new();
                        for &(f, _) in &c.cell(t).faces {
                            db.extend(sys.d_matrix((m - 1, f), k).mul_vec(g.slice(&fam, (m - 1, f))));
                        }
                        self.harmonic.extend(t, k + 1, &db)?
                    } else {
                        let total: Q = c.cell(t).faces.iter().map(|&(f, s)| qi(s as i64) * dot(&sys.cell_integrals((m - 1, f)), g.slice(&fam, (m - 1, f)))).sum();
                        self.harmonic.top_form(t, total)?
                    };
                    if de != expect {
                        return Err(fail(t, &format!("E∘d in degree {k}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// `P d = d P` and `∫ P u = ∫ u` on host forms of every cell.
    pub fn check_projection(&self) -> Result<()> {
        let c = self.sys.complex().clone();
        for t in c.all_cells() {
            for k in 0..=t.0 {
                for h in self.host.basis(t.0, k) {
                    let ph = self.project(t, k, &h)?;
                    if k < t.0 {
                        let lhs = self.sys.d_matrix(t, k).mul_vec(&ph);
                        if lhs != self.project(t, k + 1, &h.d())? {
                            return Err(MirrorError::PreconditionFailed(format!("P∘d in degree {k} on {}", self.id(t))));
                        }
                    } else if dot(&self.sys.cell_integrals(t), &ph) != c.integrate(t, &vec![h.clone()]) {
                        return Err(MirrorError::PreconditionFailed(format!("integral of P on {}", self.id(t))));
                    }
                }
            }
        }
        Ok(())
    }

    /// `J u` in the global layout.
    pub fn apply(&self, k: usize, u: &PolyForm) -> Result<Vec<Q>> {
        let c = self.sys.complex().clone();
        let g = self.sys.global_space_all(k);
        let mut fam = vec![Q::zero(); g.total];
        for j in k..=c.dim() {
            let level: Vec<(CellRef, Vec<Q>)> = (0..c.num_cells(j))
                .into_par_iter()
                .map(|i| {
                    let t = (j, i);
                    let pu = self.project(t, k, &c.restrict_ambient(u, t)[0])?;
                    if j == k {
                        return Ok((t, pu));
                    }
                    let jb = stack_facets(&c, t, &g, &fam);
                    let pb = self.sys.boundary_matrix(t, k).mul_vec(&pu);
                    let diff: Vec<Q> = jb.iter().zip(&pb).map(|(a, b)| a - b).collect();
                    let e = self.harmonic.extend(t, k, &diff)?;
                    Ok((t, pu.iter().zip(&e).map(|(a, b)| a + b).collect()))
                })
                .collect::<Result<_>>()?;
            for (t, x) in level {
                let (off, n) = g.offsets[&t];
                fam[off..off + n].clone_from_slice(&x);
            }
        }
        Ok(fam)
    }
}

fn stack_facets(c: &Complex, t: CellRef, g: &crate::fesystem::GlobalSpace, fam: &[Q]) -> Vec<Q> {
    let mut b = Vec::new();
    if t.0 > g.k {
        for &(f, _) in &c.cell(t).faces {
            b.extend_from_slice(g.slice(fam, (t.0 - 1, f)));
        }
    }
    b
}

/// Random ambient polynomial `k`-form of degree `p` with small integer
/// coefficients.
pub fn random_poly_form(n: usize, k: usize, p: usize, rng: &mut impl Rng) -> PolyForm {
    let gens = full_poly_basis(p, k, n);
    let coeffs: Vec<Q> = gens.iter().map(|_| qi(rng.gen_range(-4..=4))).collect();
    PolyForm::combination(&gens, &coeffs, n, k)
}

