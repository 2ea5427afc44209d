//! Product complexes and tensor-product element systems.

use crate::complex::{Cell, CellForm, CellRef, Complex, Piece};
use crate::fesystem::{ElementSystem, FesError};
use crate::linalg::{Matrix, Q};
use crate::polyforms::PolyForm;
use serde::Serialize;
use std::collections::BTreeSet;
use std::sync::Arc;

/// Id of a product cell.
pub fn product_id(u: &str, v: &str) -> String {
    format!("{u}|{v}")
}

/// Index of `U × V` inside dimension `dim U + dim V` of the product.
fn product_index(a: &Complex, b: &Complex, u: CellRef, v: CellRef) -> usize {
    let j = u.0 + v.0;
    let mut idx = 0;
    for ju in 0..u.0 {
        if j - ju <= b.dim() {
            idx += a.num_cells(ju) * b.num_cells(j - ju);
        }
    }
    idx + u.1 * b.num_cells(v.0) + v.1
}

/// `U × V` for all cells, with `∂(U×V) = ∂U×V + (-1)^{dim U} U×∂V`.
pub fn product_complex(a: Arc<Complex>, b: Arc<Complex>) -> Complex {
    let dim = a.dim() + b.dim();
    let mut cells: Vec<Vec<Cell>> = vec![Vec::new(); dim + 1];
    for (j, level) in cells.iter_mut().enumerate() {
        for ju in 0..=j.min(a.dim()) {
            let jv = j - ju;
            if jv > b.dim() {
                continue;
            }
            for iu in 0..a.num_cells(ju) {
                for iv in 0..b.num_cells(jv) {
                    let (u, v) = ((ju, iu), (jv, iv));
                    let (cu, cv) = (a.cell(u), b.cell(v));
                    let mut faces = Vec::new();
                    for &(f, s) in &cu.faces {
                        faces.push((product_index(&a, &b, (ju - 1, f), v), s));
                    }
                    let sign = if ju % 2 == 0 { 1 } else { -1 };
                    for &(g, s) in &cv.faces {
                        faces.push((product_index(&a, &b, u, (jv - 1, g)), sign * s));
                    }
                    let mut pieces = Vec::new();
                    for pu in &cu.pieces {
                        for pv in &cv.pieces {
                            pieces.push(product_piece(pu, pv));
                        }
                    }
                    level.push(Cell { id: product_id(&cu.id, &cv.id), dim: j, faces, pieces, closure: Vec::new(), factors: Some((u, v)) });
                }
            }
        }
    }
    let ambient = a.ambient_dim() + b.ambient_dim();
    Complex::assemble(ambient, None, Some((a, b)), cells).expect("product of valid complexes")
}

fn product_piece(p: &Piece, q: &Piece) -> Piece {
    let (ra, ca, rb, cb) = (p.frame.nrows(), p.frame.ncols(), q.frame.nrows(), q.frame.ncols());
    let mut frame = Matrix::zeros(ra + rb, ca + cb);
    for i in 0..ra {
        for j in 0..ca {
            frame[(i, j)] = p.frame[(i, j)].clone();
        }
    }
    for i in 0..rb {
        for j in 0..cb {
            frame[(ra + i, ca + j)] = q.frame[(i, j)].clone();
        }
    }
    let mut shape = p.shape.clone();
    shape.extend(&q.shape);
    let mut origin = p.origin.clone();
    origin.extend(q.origin.iter().cloned());
    Piece { shape, origin, frame, sign: p.sign * q.sign, support: None }
}

/// `u ⊗ v` on a product cell, piece by piece.
pub fn tensor_form(u: &CellForm, v: &CellForm) -> CellForm {
    let (mu, mv) = (u[0].nvars(), v[0].nvars());
    let n = mu + mv;
    let mut out = Vec::with_capacity(u.len() * v.len());
    for a in u {
        for b in v {
            out.push(a.lift(n, 0).wedge(&b.lift(n, mu)));
        }
    }
    out
}

/// Degree-`k` product basis on `U × V`, grouped by `l` then factor order.
pub fn product_basis(a: &ElementSystem, b: &ElementSystem, u: CellRef, v: CellRef, k: usize) -> Vec<CellForm> {
    let mut out = Vec::new();
    for l in 0..=k.min(u.0) {
        if k - l > v.0 {
            continue;
        }
        for x in &a.space(u, l).unwrap().basis {
            for y in &b.space(v, k - l).unwrap().basis {
                out.push(tensor_form(x, y));
            }
        }
    }
    out
}

/// The tensor product system on `product_complex(A, B)`.
pub fn tensor_system(a: &ElementSystem, b: &ElementSystem) -> Result<ElementSystem, FesError> {
    let c = Arc::new(product_complex(a.complex().clone(), b.complex().clone()));
    let spaces = (0..=c.dim())
        .map(|j| {
            (0..c.num_cells(j))
                .map(|i| {
                    let (u, v) = c.cell((j, i)).factors.unwrap();
                    (0..=j).map(|k| product_basis(a, b, u, v, k)).collect()
                })
                .collect()
        })
        .collect();
    ElementSystem::from_spaces(c, spaces)
}

/// Global dimensions of a system on a set of cells, all degrees.
fn dims_on(sys: &ElementSystem, cells: &[CellRef]) -> Vec<usize> {
    (0..=sys.complex().dim()).map(|k| sys.global_space(cells, k).dim()).collect()
}

fn convolve(x: &[usize], y: &[usize], len: usize) -> Vec<usize> {
    (0..len).map(|k| (0..=k).filter(|&l| l < x.len() && k - l < y.len()).map(|l| x[l] * y[k - l]).sum()).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ProductCellCheck {
    pub id: String,
    /// `dim C_0^k` directly and from the factors.
    pub kernel_direct: Vec<usize>,
    pub kernel_product: Vec<usize>,
    pub kernel_span: bool,
    /// `dim C^k(∂(U×V))` directly, by the union count and by the factors.
    pub boundary_direct: Vec<usize>,
    pub boundary_union: Vec<usize>,
    pub boundary_factors: Vec<usize>,
    /// `rank R_{U×V}` per degree.
    pub trace_rank: Vec<usize>,
    pub exact: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorReport {
    pub kernel_identity: bool,
    pub dimension_product: bool,
    pub extensions: bool,
    pub local_exactness: bool,
    pub global_direct: Vec<usize>,
    pub global_product: Vec<usize>,
    pub betti_product: Vec<usize>,
    pub betti_kunneth: Vec<usize>,
    pub compatible: bool,
    pub cells: Vec<ProductCellCheck>,
}

impl TensorReport {
    pub fn passes(&self) -> bool {
        self.kernel_identity && self.dimension_product && self.extensions && self.local_exactness
    }
}

/// Checks the kernel identity, the global dimension product, the extension
/// count and local exactness of `A ⊗ B`, each from independent sides.
pub fn tensor_dimension_checks(a: &ElementSystem, b: &ElementSystem) -> Result<TensorReport, FesError> {
    for (name, s) in [("left", a), ("right", b)] {
        let rep = s.compatibility();
        if !rep.extensions {
            return Err(FesError::NotCompatible(format!("{name} factor lacks extensions")));
        }
    }
    let c_sys = tensor_system(a, b)?;
    let c = c_sys.complex().clone();
    let (ca, cb) = (a.complex(), b.complex());
    let len = c.dim() + 1;

    let kernel_dims = |s: &ElementSystem, t: CellRef| -> Vec<usize> { (0..=t.0).map(|k| s.kernel_space(t, k).len()).collect() };
    let local_dims = |s: &ElementSystem, t: CellRef| -> Vec<usize> { (0..=t.0).map(|k| s.dim_of(t, k)).collect() };
    let pad = |mut v: Vec<usize>| {
        v.resize(len, 0);
        v
    };

    let mut cells = Vec::new();
    for t in c.all_cells() {
        let cell = c.cell(t);
        let (u, v) = cell.factors.unwrap();
        let kernel_direct = pad(kernel_dims(&c_sys, t));
        let kernel_product = convolve(&kernel_dims(a, u), &kernel_dims(b, v), len);
        let kernel_span = (0..=t.0).all(|k| kernel_spans_agree(a, b, &c_sys, t, u, v, k));

        let bd: Vec<CellRef> = c.boundary_cells(t);
        let boundary_direct = dims_on(&c_sys, &bd);
        let pick = |f: &dyn Fn(CellRef, CellRef) -> bool| -> Vec<CellRef> {
            bd.iter().copied().filter(|&s| {
                let (su, sv) = c.cell(s).factors.unwrap();
                f(su, sv)
            }).collect()
        };
        let left = pick(&|su, sv| su != u && sv == v);
        let right = pick(&|su, sv| su == u && sv != v);
        let both = pick(&|su, sv| su != u && sv != v);
        let (dl, dr, db) = (dims_on(&c_sys, &closure_of(&c, &left)), dims_on(&c_sys, &closure_of(&c, &right)), dims_on(&c_sys, &both));
        let boundary_union: Vec<usize> = (0..len).map(|k| dl[k] + dr[k] - db[k]).collect();
        let (ab, bb) = (dims_on(a, &ca.boundary_cells(u)), dims_on(b, &cb.boundary_cells(v)));
        let (au, bv) = (pad(local_dims(a, u)), pad(local_dims(b, v)));
        let boundary_factors: Vec<usize> = {
            let x = convolve(&ab, &bv, len);
            let y = convolve(&au, &bb, len);
            let z = convolve(&ab, &bb, len);
            (0..len).map(|k| x[k] + y[k] - z[k]).collect()
        };
        let trace_rank = pad((0..=t.0).map(|k| c_sys.boundary_matrix(t, k).rank()).collect());
        cells.push(ProductCellCheck {
            id: cell.id.clone(),
            kernel_direct,
            kernel_product,
            kernel_span,
            boundary_direct,
            boundary_union,
            boundary_factors,
            trace_rank,
            exact: c_sys.exact_full(t),
        });
    }
    let kernel_identity = cells.iter().all(|x| x.kernel_direct == x.kernel_product && x.kernel_span);
    let extensions = cells.iter().all(|x| x.boundary_direct == x.boundary_union && x.boundary_union == x.boundary_factors && x.trace_rank == x.boundary_direct);
    let local_exactness = cells.iter().all(|x| x.exact);

    let all_a = ca.all_cells();
    let all_b = cb.all_cells();
    let global_direct: Vec<usize> = (0..len).map(|k| c_sys.global_dimension_direct(&c.all_cells(), k)).collect();
    let global_product = convolve(&dims_on(a, &all_a), &dims_on(b, &all_b), len);
    let sweep = dims_on(&c_sys, &c.all_cells());
    let dimension_product = global_direct == global_product && sweep == global_product;

    let betti_product = c_sys.cohomology_unchecked().discrete;
    let betti_kunneth = convolve(&a.cohomology_unchecked().discrete, &b.cohomology_unchecked().discrete, len);
    Ok(TensorReport {
        kernel_identity,
        dimension_product,
        extensions,
        local_exactness,
        global_direct,
        global_product,
        betti_product,
        betti_kunneth,
        compatible: c_sys.compatibility().compatible,
        cells,
    })
}

/// Closure of a set of cells.
fn closure_of(c: &Complex, cells: &[CellRef]) -> Vec<CellRef> {
    let mut s: BTreeSet<CellRef> = BTreeSet::new();
    for &t in cells {
        s.extend(c.cell(t).closure.iter().copied());
    }
    s.into_iter().collect()
}

/// Whether products of factor kernel forms span exactly `C_0^k(U×V)`.
fn kernel_spans_agree(a: &ElementSystem, b: &ElementSystem, c: &ElementSystem, t: CellRef, u: CellRef, v: CellRef, k: usize) -> bool {
    let space = c.space(t, k).unwrap();
    let mut products: Vec<Vec<Q>> = Vec::new();
    for l in 0..=k.min(u.0) {
        if k - l > v.0 {
            continue;
        }
        for x in a.kernel_space(u, l) {
            for y in b.kernel_space(v, k - l) {
                let f = tensor_form(&a.form(u, l, &x), &b.form(v, k - l, &y));
                match space.coords(&f) {
                    Some(cf) => products.push(cf),
                    None => return false,
                }
            }
        }
    }
    let kernel = c.kernel_space(t, k);
    let n = space.dim();
    let p = Matrix::from_rows(&products, n);
    let kmat = Matrix::from_rows(&kernel, n);
    p.rank() == products.len() && kmat.rank() == p.rank() && p.vstack(&kmat).rank() == p.rank()
}

/// Leibniz rule `d(u⊗v) = du⊗v + (-1)^{deg u} u⊗dv` on given factor forms.
pub fn leibniz_holds(u: &CellForm, v: &CellForm, deg_u: usize) -> bool {
    let lhs = Complex::d(&tensor_form(u, v));
    let sign = if deg_u % 2 == 0 { Q::from_integer(1.into()) } else { Q::from_integer((-1).into()) };
    let a = tensor_form(&Complex::d(u), v);
    let b = tensor_form(u, &Complex::d(v));
    // d of a top-degree factor form is zero in a degree beyond the cell
    let sum = |x: &PolyForm, y: &PolyForm| match (x.is_zero(), y.is_zero()) {
        (true, _) => y.clone(),
        (_, true) => x.clone(),
        _ => x.add(y),
    };
    lhs.iter().zip(a.iter().zip(&b)).all(|(l, (x, y))| {
        let r = sum(x, &y.scale(&sign));
        if l.is_zero() || r.is_zero() {
            l.is_zero() && r.is_zero()
        } else {
            *l == r
        }
    })
}

/// Product cells as JSON records with factor ids.
pub fn product_cells_json(c: &Complex) -> serde_json::Value {
    let (a, b) = c.factors().expect("product complex");
    let cells: Vec<serde_json::Value> = c
        .all_cells()
        .into_iter()
        .map(|t| {
            let cell = c.cell(t);
            let (u, v) = cell.factors.unwrap();
            serde_json::json!({
                "id": cell.id,
                "dim": cell.dim,
                "factors": [a.cell(u).id, b.cell(v).id],
                "faces": cell.faces.iter().map(|&(f, s)| serde_json::json!([c.cell((t.0 - 1, f)).id, s])).collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::json!({ "dimension": c.dim(), "cells": cells })
}
