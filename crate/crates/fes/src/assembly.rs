//! Global Galerkin matrices and the Hodge eigenvalue pipeline.

use crate::complex::CellRef;
use crate::fesystem::{ElementSystem, GlobalSpace};
use crate::linalg::{round_sig, Matrix, Q};
use crate::mirrors::{random_poly_form, EpInterpolator, Interpolator, MirrorError};
use crate::polyforms::{gram_exact, PolyForm};
use nalgebra::DMatrix;
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// Relative threshold below which an eigenvalue counts as a zero mode.
pub const ZERO_MODE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("system is not compatible: {0}")]
    NotCompatible(String),
    #[error("eigen solver failed: {0}")]
    SolverBreakdown(String),
}

pub type Result<T> = std::result::Result<T, AssemblyError>;

/// Mass, derivative and stiffness matrices of one degree.
#[derive(Clone, Debug)]
pub struct AssembledPair {
    pub k: usize,
    pub mass: Matrix<f64>,
    pub d_exact: Matrix<Q>,
    pub d: Matrix<f64>,
    /// Mass matrix of degree `k + 1`; empty in top degree.
    pub mass_next: Matrix<f64>,
    pub stiffness: Matrix<f64>,
}

impl AssembledPair {
    /// The pair in new bases `x' = T x` of degrees `k` and `k + 1`.
    pub fn change_basis(&self, t: &Matrix<Q>, t_next: &Matrix<Q>) -> AssembledPair {
        let (tf, tn) = (t.to_f64(), t_next.to_f64());
        let mass = tf.transpose().mul(&self.mass).mul(&tf);
        let mass_next = tn.transpose().mul(&self.mass_next).mul(&tn);
        let d_exact = t_next.inverse().expect("invertible basis change").mul(&self.d_exact).mul(t);
        let d = d_exact.to_f64();
        let stiffness = d.transpose().mul(&mass_next).mul(&d);
        AssembledPair { k: self.k, mass, d_exact, d, mass_next, stiffness }
    }
}

/// Exact mass matrix of `A^k` over the top-dimensional cells.
pub fn mass_matrix(sys: &ElementSystem, g: &GlobalSpace) -> Matrix<Q> {
    let c = sys.complex();
    let top = c.dim();
    let k = g.k;
    let mut owner: Vec<Option<CellRef>> = vec![None; g.total];
    for (&t, &(off, n)) in &g.offsets {
        if t.0 == top {
            owner[off..off + n].iter_mut().for_each(|o| *o = Some(t));
        }
    }
    // per top cell: (global index, local coefficients)
    let mut touching: BTreeMap<CellRef, Vec<(usize, Vec<Q>)>> = BTreeMap::new();
    for (gi, v) in g.basis.iter().enumerate() {
        let mut cells: Vec<CellRef> = v.iter().filter_map(|(i, _)| owner[*i]).collect();
        cells.dedup();
        for t in cells {
            touching.entry(t).or_default().push((gi, g.component(gi, t)));
        }
    }
    let blocks: Vec<Vec<(usize, usize, Q)>> = touching
        .par_iter()
        .map(|(&t, members)| {
            let basis = &sys.space(t, k).unwrap().basis;
            let n = basis.len();
            let mut gram = Matrix::zeros(n, n);
            for (p, piece) in c.cell(t).pieces.iter().enumerate() {
                let forms: Vec<PolyForm> = basis.iter().map(|b| b[p].clone()).collect();
                let ginv = piece.metric().inverse().expect("nondegenerate piece");
                gram = gram.add(&gram_exact(&forms, &piece.shape, &ginv, &piece.volume_factor()));
            }
            let mut out = Vec::new();
            for (a, ua) in members {
                let gu = gram.mul_vec(ua);
                for (b, ub) in members {
                    let v: Q = gu.iter().zip(ub).map(|(x, y)| x * y).sum();
                    if !v.is_zero() {
                        out.push((*a, *b, v));
                    }
                }
            }
            out
        })
        .collect();
    let mut m = Matrix::zeros(g.dim(), g.dim());
    for (a, b, v) in blocks.into_iter().flatten() {
        m[(b, a)] += v;
    }
    m
}

/// Assembles degree `k` after verifying compatibility.
pub fn assemble(sys: &ElementSystem, k: usize) -> Result<AssembledPair> {
    let rep = sys.compatibility();
    if !rep.compatible {
        return Err(AssemblyError::NotCompatible(rep.failing_cells.join(",")));
    }
    Ok(assemble_unchecked(sys, k))
}

pub fn assemble_unchecked(sys: &ElementSystem, k: usize) -> AssembledPair {
    let gk = sys.global_space_all(k);
    let mass = mass_matrix(sys, &gk).to_f64();
    if k == sys.complex().dim() {
        let n = gk.dim();
        return AssembledPair {
            k,
            mass,
            d_exact: Matrix::zeros(0, n),
            d: Matrix::zeros(0, n),
            mass_next: Matrix::zeros(0, 0),
            stiffness: Matrix::zeros(n, n),
        };
    }
    let gk1 = sys.global_space_all(k + 1);
    let d_exact = sys.global_d(&gk, &gk1);
    let d = d_exact.to_f64();
    let mass_next = mass_matrix(sys, &gk1).to_f64();
    let stiffness = d.transpose().mul(&mass_next).mul(&d);
    AssembledPair { k, mass, d_exact, d, mass_next, stiffness }
}

fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

/// Sorted eigenvalues of `K x = λ M x` for symmetric `K` and SPD `M`.
pub fn generalized_eigenvalues(k: &Matrix<f64>, m: &Matrix<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let chol = to_na(m).cholesky().ok_or_else(|| AssemblyError::SolverBreakdown("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&to_na(k))
        .ok_or_else(|| AssemblyError::SolverBreakdown("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| AssemblyError::SolverBreakdown("singular Cholesky factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let mut ev: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
    if ev.iter().any(|x| !x.is_finite()) {
        return Err(AssemblyError::SolverBreakdown("non-finite eigenvalue".into()));
    }
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

/// Eigenvalues of `d*d` in degree `k`, split into zero modes and the rest.
#[derive(Clone, Debug, Serialize)]
pub struct Spectrum {
    pub k: usize,
    pub dimension: usize,
    pub zero_modes: usize,
    /// `rank D_{k-1}`: zero modes that are exact forms.
    pub exact_dim: usize,
    /// `zero_modes - exact_dim`, the discrete harmonic forms.
    pub harmonic: usize,
    pub betti: usize,
    pub eigenvalues: Vec<f64>,
    pub clamped: bool,
}

/// Splits an eigenvalue list at the relative zero-mode threshold.
pub fn split_zero_modes(ev: &[f64]) -> (usize, Vec<f64>) {
    let top = ev.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let cut = ZERO_MODE_TOL * top.max(f64::MIN_POSITIVE);
    let zeros = ev.iter().filter(|x| x.abs() <= cut).count();
    (zeros, ev.iter().copied().filter(|x| x.abs() > cut).collect())
}

pub fn hodge_eigenvalues(sys: &ElementSystem, k: usize, count: usize) -> Result<Spectrum> {
    let rep = sys.compatibility();
    if !rep.compatible {
        return Err(AssemblyError::NotCompatible(rep.failing_cells.join(",")));
    }
    let pair = assemble_unchecked(sys, k);
    let exact_dim = if k == 0 {
        0
    } else {
        let (a, b) = (sys.global_space_all(k - 1), sys.global_space_all(k));
        sys.global_d(&a, &b).rank()
    };
    spectrum_of(&pair, exact_dim, sys.complex().betti_numbers()[k], count)
}

pub fn spectrum_of(pair: &AssembledPair, exact_dim: usize, betti: usize, count: usize) -> Result<Spectrum> {
    let ev = generalized_eigenvalues(&pair.stiffness, &pair.mass)?;
    let (zero_modes, nonzero) = split_zero_modes(&ev);
    let clamped = count > nonzero.len();
    Ok(Spectrum {
        k: pair.k,
        dimension: ev.len(),
        zero_modes,
        exact_dim,
        harmonic: zero_modes.saturating_sub(exact_dim),
        betti,
        eigenvalues: nonzero.into_iter().take(count).collect(),
        clamped,
    })
}

/// Zero modes of the full Hodge Laplacian
/// `K_k + M_k D_{k-1} M_{k-1}^{-1} D_{k-1}ᵀ M_k` in degree `k`.
pub fn hodge_laplacian_zero_modes(sys: &ElementSystem, k: usize) -> Result<usize> {
    let pair = assemble_unchecked(sys, k);
    let mut lap = to_na(&pair.stiffness);
    if k > 0 {
        let prev = assemble_unchecked(sys, k - 1);
        let m = to_na(&pair.mass);
        let d = to_na(&prev.d);
        let mprev = to_na(&prev.mass)
            .cholesky()
            .ok_or_else(|| AssemblyError::SolverBreakdown("mass matrix is not positive definite".into()))?;
        let md = &m * &d;
        let x = mprev.solve(&md.transpose());
        lap += &md * x;
    }
    let lap = Matrix::from_rows(&lap.row_iter().map(|r| r.iter().copied().collect()).collect::<Vec<_>>(), lap.ncols());
    let ev = generalized_eigenvalues(&lap, &pair.mass)?;
    Ok(split_zero_modes(&ev).0)
}

/// Coordinate triplets `row col value`, one per nonzero, 12 significant digits.
pub fn triplets(m: &Matrix<f64>) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = round_sig(m[(r, c)]);
            if v != 0.0 {
                s.push_str(&format!("{r} {c} {v}\n"));
            }
        }
    }
    s
}

pub fn matrix_header(m: &Matrix<f64>, kind: &str, k: usize) -> serde_json::Value {
    let nnz = (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| (r, c))).filter(|&(r, c)| round_sig(m[(r, c)]) != 0.0).count();
    serde_json::json!({"kind": kind, "k": k, "rows": m.nrows(), "cols": m.ncols(), "nnz": nnz})
}

pub fn spectrum_csv(s: &Spectrum) -> String {
    let mut out = String::from("index,eigenvalue,k,zero_modes,harmonic,betti\n");
    for (i, v) in s.eigenvalues.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{},{},{}\n", round_sig(*v), s.k, s.zero_modes, s.harmonic, s.betti));
    }
    out
}

/// Anything mapping ambient polynomial forms into the global layout of a
/// system.
pub trait FormInterpolator: Sync {
    fn system(&self) -> &ElementSystem;
    fn apply(&self, k: usize, u: &PolyForm) -> std::result::Result<Vec<Q>, MirrorError>;
}

impl FormInterpolator for Interpolator {
    fn system(&self) -> &ElementSystem {
        &self.sys
    }

    fn apply(&self, k: usize, u: &PolyForm) -> std::result::Result<Vec<Q>, MirrorError> {
        self.interpolate(k, u)
    }
}

impl FormInterpolator for EpInterpolator {
    fn system(&self) -> &ElementSystem {
        &self.sys
    }

    fn apply(&self, k: usize, u: &PolyForm) -> std::result::Result<Vec<Q>, MirrorError> {
        EpInterpolator::apply(self, k, u)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagramReport {
    pub samples: usize,
    pub degree: usize,
    /// `d I u = I d u` on every sample.
    pub commutes: bool,
    /// `ρ I u = ρ u` on every sample.
    pub integrals_preserved: bool,
    pub cohomology_isomorphism: bool,
    pub failures: Vec<String>,
}

impl DiagramReport {
    pub fn passes(&self) -> bool {
        self.commutes && self.integrals_preserved && self.cohomology_isomorphism
    }
}

/// Checks the commuting diagram on random ambient polynomial forms of the
/// given degree.
pub fn commuting_diagram_report(ip: &dyn FormInterpolator, samples: usize, degree: usize, seed: u64) -> DiagramReport {
    let sys = ip.system();
    let c = sys.complex();
    let m = c.dim();
    let spaces: Vec<GlobalSpace> = (0..=m).map(|k| sys.global_space_all(k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let (mut commutes, mut integrals) = (true, true);
    for s in 0..samples {
        for k in 0..=m {
            let u = random_poly_form(c.ambient_dim(), k, degree, &mut rng);
            let iu = match ip.apply(k, &u) {
                Ok(v) => v,
                Err(e) => {
                    failures.push(format!("sample {s} k={k}: {e}"));
                    commutes = false;
                    integrals = false;
                    continue;
                }
            };
            for (&t, &(off, n)) in &spaces[k].offsets {
                if t.0 != k || n == 0 {
                    continue;
                }
                let lhs: Q = sys.cell_integrals(t).iter().zip(&iu[off..off + n]).map(|(a, b)| a * b).sum();
                if lhs != c.integrate(t, &c.restrict_ambient(&u, t)) {
                    integrals = false;
                    failures.push(format!("sample {s} k={k}: integral on {}", c.cell(t).id));
                }
            }
            if k == m {
                continue;
            }
            let idu = match ip.apply(k + 1, &u.d()) {
                Ok(v) => v,
                Err(e) => {
                    failures.push(format!("sample {s} k={}: {e}", k + 1));
                    commutes = false;
                    continue;
                }
            };
            for (&t, &(off, n)) in &spaces[k + 1].offsets {
                let lhs = sys.d_matrix(t, k).mul_vec(spaces[k].slice(&iu, t));
                if lhs[..] != idu[off..off + n] {
                    commutes = false;
                    failures.push(format!("sample {s} k={k}: dI != Id on {}", c.cell(t).id));
                }
            }
        }
    }
    failures.dedup();
    let iso = integrals && sys.cohomology_unchecked().induced_isomorphism;
    DiagramReport { samples, degree, commutes, integrals_preserved: integrals, cohomology_isomorphism: iso, failures }
}
