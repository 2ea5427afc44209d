//! Cellular complexes.
//!
//! Every cell is a union of flat pieces. Simplicial and agglomerated
//! complexes are carried by a [`SimplicialMesh`]: each piece is one fine
//! simplex with the chart "first vertex as origin, edge vectors as frame".
//! Product complexes (see `tensorfes`) use product-of-simplex pieces.

use crate::linalg::{q_to_f64, qi, sparse_rank, Matrix, Q};
use crate::polyforms::{AffineEmbed, PolyForm};
use itertools::Itertools;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use thiserror::Error;

/// `(dimension, index)` of a cell.
pub type CellRef = (usize, usize);

/// A form on a cell: one polynomial form per piece, in piece chart coordinates.
pub type CellForm = Vec<PolyForm>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComplexError {
    #[error("degenerate simplex {0:?}")]
    DegenerateSimplex(Vec<usize>),
    #[error("not a cellular complex: {0}")]
    NonComplex(String),
    #[error("unknown cell {0}")]
    UnknownCell(String),
    #[error("cell {0} has dimension 0")]
    ZeroCell(String),
    #[error("complex is not simplicial")]
    NotSimplicial,
    #[error("not manifold-like: {0}")]
    NotManifoldLike(String),
    #[error("not a refinement: {0}")]
    NotRefinement(String),
    #[error("mesh file: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, ComplexError>;

/// Pure simplicial mesh closed under faces. Simplices are stored as sorted
/// vertex lists; 0-simplex `i` is vertex `i` and top simplices keep their
/// input order.
#[derive(Clone, Debug)]
pub struct SimplicialMesh {
    pub dim: usize,
    pub ambient: usize,
    pub vertices: Vec<Vec<Q>>,
    pub simplices: Vec<Vec<Vec<usize>>>,
    lookup: Vec<HashMap<Vec<usize>, usize>>,
    cofaces: Vec<Vec<Vec<usize>>>,
}

impl SimplicialMesh {
    pub fn new(vertices: Vec<Vec<Q>>, dim: usize, tops: &[Vec<usize>]) -> Result<Self> {
        let ambient = vertices.first().map(|v| v.len()).unwrap_or(0);
        if vertices.iter().any(|v| v.len() != ambient) {
            return Err(ComplexError::NonComplex("vertex coordinates of mixed length".into()));
        }
        if dim > ambient {
            return Err(ComplexError::NonComplex(format!("dimension {dim} exceeds ambient dimension {ambient}")));
        }
        let mut simplices: Vec<Vec<Vec<usize>>> = vec![Vec::new(); dim + 1];
        simplices[0] = (0..vertices.len()).map(|i| vec![i]).collect();
        let mut lower: Vec<BTreeSet<Vec<usize>>> = vec![BTreeSet::new(); dim + 1];
        let mut seen = BTreeSet::new();
        for t in tops {
            let mut s = t.clone();
            s.sort_unstable();
            if s.len() != dim + 1 || s.windows(2).any(|w| w[0] == w[1]) || s.iter().any(|&v| v >= vertices.len()) {
                return Err(ComplexError::NonComplex(format!("invalid top simplex {t:?}")));
            }
            let frame: Vec<Vec<Q>> = s[1..].iter().map(|&v| sub(&vertices[v], &vertices[s[0]])).collect();
            if Matrix::from_cols(&frame, ambient).rank() != dim {
                return Err(ComplexError::DegenerateSimplex(s));
            }
            if !seen.insert(s.clone()) {
                return Err(ComplexError::NonComplex(format!("duplicate simplex {s:?}")));
            }
            for j in 1..dim {
                for c in s.iter().copied().combinations(j + 1) {
                    lower[j].insert(c);
                }
            }
            if dim > 0 {
                simplices[dim].push(s);
            }
        }
        for j in 1..dim {
            simplices[j] = lower[j].iter().cloned().collect();
        }
        let lookup: Vec<HashMap<Vec<usize>, usize>> =
            simplices.iter().map(|l| l.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()).collect();
        let mut mesh = SimplicialMesh { dim, ambient, vertices, simplices, lookup, cofaces: Vec::new() };
        mesh.cofaces = (0..dim)
            .map(|j| {
                let mut c = vec![Vec::new(); mesh.simplices[j].len()];
                for (t, _) in mesh.simplices[j + 1].iter().enumerate() {
                    for (f, _) in mesh.facets(j + 1, t) {
                        c[f].push(t);
                    }
                }
                c
            })
            .collect();
        Ok(mesh)
    }

    pub fn find(&self, verts: &[usize]) -> Option<usize> {
        let j = verts.len().checked_sub(1)?;
        self.lookup.get(j)?.get(verts).copied()
    }

    /// Facets of a simplex with the sign `(-1)^i` of the omitted vertex.
    pub fn facets(&self, j: usize, idx: usize) -> Vec<(usize, i32)> {
        if j == 0 {
            return Vec::new();
        }
        let s = &self.simplices[j][idx];
        (0..=j)
            .map(|i| {
                let mut f = s.clone();
                f.remove(i);
                (self.lookup[j - 1][&f], if i % 2 == 0 { 1 } else { -1 })
            })
            .collect()
    }

    pub fn cofaces(&self, j: usize, idx: usize) -> &[usize] {
        if j >= self.dim {
            &[]
        } else {
            &self.cofaces[j][idx]
        }
    }

    /// Chart piece of a simplex.
    pub fn piece(&self, j: usize, idx: usize, sign: i32) -> Piece {
        let s = &self.simplices[j][idx];
        let origin = self.vertices[s[0]].clone();
        let cols: Vec<Vec<Q>> = s[1..].iter().map(|&v| sub(&self.vertices[v], &origin)).collect();
        Piece { shape: vec![j], origin, frame: Matrix::from_cols(&cols, self.ambient), sign, support: Some(idx) }
    }

    /// All faces (of every dimension) of a set of `j`-simplices.
    pub fn closure_of(&self, j: usize, set: &[usize]) -> Vec<BTreeSet<usize>> {
        let mut out = vec![BTreeSet::new(); j + 1];
        out[j].extend(set.iter().copied());
        for d in (1..=j).rev() {
            let cur: Vec<usize> = out[d].iter().copied().collect();
            for s in cur {
                for (f, _) in self.facets(d, s) {
                    out[d - 1].insert(f);
                }
            }
        }
        out
    }

    /// Betti numbers of the subcomplex made of the given simplices (closed
    /// under faces).
    pub fn betti_of(&self, sets: &[BTreeSet<usize>]) -> Vec<usize> {
        let pos: Vec<HashMap<usize, usize>> = sets.iter().map(|s| s.iter().enumerate().map(|(i, &x)| (x, i)).collect()).collect();
        let ranks: Vec<usize> = (0..sets.len().saturating_sub(1))
            .map(|j| {
                sparse_rank(sets[j + 1].iter().map(|&t| {
                    self.facets(j + 1, t).into_iter().map(|(f, s)| (pos[j][&f], qi(s as i64))).collect::<Vec<_>>()
                }))
            })
            .collect();
        betti_from_ranks(&sets.iter().map(|s| s.len()).collect::<Vec<_>>(), &ranks)
    }
}

/// `b_k = n_k - rank δ_k - rank δ_{k-1}` where `ranks[k] = rank δ_k`.
pub fn betti_from_ranks(counts: &[usize], ranks: &[usize]) -> Vec<usize> {
    (0..counts.len())
        .map(|k| counts[k] - ranks.get(k).copied().unwrap_or(0) - if k > 0 { ranks[k - 1] } else { 0 })
        .collect()
}

/// Betti numbers of a sphere of dimension `m` (`m = 0`: two points).
pub fn sphere_betti(m: usize) -> Vec<usize> {
    if m == 0 {
        return vec![2];
    }
    let mut b = vec![0; m + 1];
    b[0] = 1;
    b[m] = 1;
    b
}

pub fn ball_betti(m: usize) -> Vec<usize> {
    let mut b = vec![0; m + 1];
    b[0] = 1;
    b
}

fn sub(a: &[Q], b: &[Q]) -> Vec<Q> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// A flat piece of a cell: a product of reference simplices mapped affinely
/// into ambient space.
#[derive(Clone, Debug)]
pub struct Piece {
    pub shape: Vec<usize>,
    pub origin: Vec<Q>,
    /// Ambient × chart matrix.
    pub frame: Matrix<Q>,
    /// Orientation of the chart relative to the cell.
    pub sign: i32,
    /// Fine simplex index when the complex is mesh-backed.
    pub support: Option<usize>,
}

impl Piece {
    pub fn dim(&self) -> usize {
        self.shape.iter().sum()
    }

    pub fn chart(&self) -> AffineEmbed {
        AffineEmbed { lin: self.frame.clone(), offset: self.origin.clone() }
    }

    /// Chart metric `JᵀJ`.
    pub fn metric(&self) -> Matrix<Q> {
        self.frame.transpose().mul(&self.frame)
    }

    /// `sqrt(det JᵀJ)`: exact when rational, otherwise a rational approximation
    /// with denominator at most 2^20.
    pub fn volume_factor(&self) -> Q {
        if self.frame.nrows() == self.frame.ncols() {
            return self.frame.det().abs();
        }
        let g = self.metric().det();
        crate::linalg::exact_sqrt(&g).unwrap_or_else(|| crate::linalg::rational_approx(q_to_f64(&g).sqrt(), 1 << 20))
    }

    /// Ambient coordinates of the chart vertices (simplex pieces only).
    pub fn corner_points(&self) -> Vec<Vec<Q>> {
        let mut pts = vec![self.origin.clone()];
        for c in 0..self.frame.ncols() {
            pts.push(self.origin.iter().zip(self.frame.col(c)).map(|(o, f)| o + f).collect());
        }
        pts
    }

    /// Chart coordinates of an ambient point, if it lies in the affine hull.
    pub fn chart_coords(&self, x: &[Q]) -> Option<Vec<Q>> {
        let rhs = sub(x, &self.origin);
        let a = self.frame.solve(&rhs)?;
        (self.frame.mul_vec(&a) == rhs).then_some(a)
    }

    /// Whether a point lies in the (closed) simplex piece.
    pub fn contains(&self, x: &[Q]) -> bool {
        if self.shape.len() != 1 {
            return false;
        }
        match self.chart_coords(x) {
            Some(a) => a.iter().all(|t| !t.is_negative()) && a.iter().fold(Q::zero(), |s, t| s + t) <= Q::one(),
            None => false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub id: String,
    pub dim: usize,
    /// Codimension-one faces with incidence numbers.
    pub faces: Vec<(usize, i32)>,
    pub pieces: Vec<Piece>,
    /// All cells in the closure, including the cell itself, sorted.
    pub closure: Vec<CellRef>,
    /// Factor cells for product complexes.
    pub factors: Option<(CellRef, CellRef)>,
}

#[derive(Clone, Debug)]
pub struct Complex {
    ambient: usize,
    mesh: Option<Arc<SimplicialMesh>>,
    product: Option<(Arc<Complex>, Arc<Complex>)>,
    cells: Vec<Vec<Cell>>,
    index: HashMap<String, CellRef>,
}

/// Which primal simplex each refined simplex subdivides, per dimension.
pub type ParentMap = Vec<Vec<CellRef>>;

impl Complex {
    /// Closure of the given top simplices, one cell per simplex.
    pub fn build_simplicial(vertices: Vec<Vec<Q>>, dim: usize, tops: &[Vec<usize>]) -> Result<Complex> {
        Ok(Self::from_mesh(Arc::new(SimplicialMesh::new(vertices, dim, tops)?)))
    }

    pub fn from_mesh(mesh: Arc<SimplicialMesh>) -> Complex {
        let supports: Vec<Vec<(String, Vec<usize>)>> = mesh
            .simplices
            .iter()
            .map(|l| l.iter().enumerate().map(|(i, s)| (simplex_id(s), vec![i])).collect())
            .collect();
        Self::from_supports(mesh, supports).expect("a simplicial mesh is a cellular complex")
    }

    /// Cells given explicitly as unions of fine simplices, for every
    /// dimension. Orientations are propagated across interior facets and
    /// incidences are read off the boundary chain of each cell.
    pub fn from_supports(mesh: Arc<SimplicialMesh>, supports: Vec<Vec<(String, Vec<usize>)>>) -> Result<Complex> {
        let mut cells: Vec<Vec<Cell>> = Vec::new();
        // fine simplex -> (cell index, piece sign), per dimension
        let mut owner: Vec<HashMap<usize, (usize, i32)>> = Vec::new();
        for (j, level) in supports.iter().enumerate() {
            let mut own = HashMap::new();
            let mut row = Vec::new();
            for (ci, (id, support)) in level.iter().enumerate() {
                if support.is_empty() {
                    return Err(ComplexError::NonComplex(format!("cell {id} has empty support")));
                }
                let signs = orient_support(&mesh, j, support).map_err(|e| ComplexError::NonComplex(format!("cell {id}: {e}")))?;
                for (&s, &sg) in support.iter().zip(&signs) {
                    if own.insert(s, (ci, sg)).is_some() {
                        return Err(ComplexError::NonComplex(format!("fine simplex {} lies in two {j}-cells", simplex_id(&mesh.simplices[j][s]))));
                    }
                }
                let mut faces = Vec::new();
                if j > 0 {
                    let mut chain: BTreeMap<usize, i32> = BTreeMap::new();
                    for (&s, &sg) in support.iter().zip(&signs) {
                        for (f, o) in mesh.facets(j, s) {
                            *chain.entry(f).or_insert(0) += sg * o;
                        }
                    }
                    let mut inc: BTreeMap<usize, i32> = BTreeMap::new();
                    for (f, c) in chain.into_iter().filter(|e| e.1 != 0) {
                        let Some(&(fc, fs)) = owner[j - 1].get(&f) else {
                            return Err(ComplexError::NonComplex(format!("boundary of {id} is not a union of cells")));
                        };
                        if c.abs() != 1 || *inc.entry(fc).or_insert(c * fs) != c * fs {
                            return Err(ComplexError::NonComplex(format!("inconsistent incidence on the boundary of {id}")));
                        }
                    }
                    for &fc in inc.keys() {
                        for &s in &supports[j - 1][fc].1 {
                            let covered = mesh.facets(j, 0).is_empty() || support.iter().any(|&p| mesh.facets(j, p).iter().any(|e| e.0 == s));
                            if !covered {
                                return Err(ComplexError::NonComplex(format!("face {} only partly on the boundary of {id}", supports[j - 1][fc].0)));
                            }
                        }
                    }
                    faces = inc.into_iter().collect();
                }
                let pieces = support.iter().zip(&signs).map(|(&s, &sg)| mesh.piece(j, s, sg)).collect();
                row.push(Cell { id: id.clone(), dim: j, faces, pieces, closure: Vec::new(), factors: None });
            }
            owner.push(own);
            cells.push(row);
        }
        let c = Self::assemble(mesh.ambient, Some(mesh), None, cells)?;
        c.check_cell_topology()?;
        Ok(c)
    }

    pub(crate) fn assemble(
        ambient: usize,
        mesh: Option<Arc<SimplicialMesh>>,
        product: Option<(Arc<Complex>, Arc<Complex>)>,
        mut cells: Vec<Vec<Cell>>,
    ) -> Result<Complex> {
        while cells.last().is_some_and(|l| l.is_empty()) && cells.len() > 1 {
            cells.pop();
        }
        let mut index = HashMap::new();
        for (j, level) in cells.iter().enumerate() {
            for (i, c) in level.iter().enumerate() {
                if index.insert(c.id.clone(), (j, i)).is_some() {
                    return Err(ComplexError::NonComplex(format!("duplicate cell id {}", c.id)));
                }
            }
        }
        for j in 0..cells.len() {
            for i in 0..cells[j].len() {
                let mut cl: BTreeSet<CellRef> = BTreeSet::new();
                cl.insert((j, i));
                for &(f, _) in &cells[j][i].faces {
                    cl.extend(cells[j - 1][f].closure.iter().copied());
                }
                cells[j][i].closure = cl.into_iter().collect();
            }
        }
        Ok(Complex { ambient, mesh, product, cells, index })
    }

    /// Homological stand-in for the ball condition on agglomerated cells:
    /// the support is acyclic and the boundary has the homology of a sphere.
    fn check_cell_topology(&self) -> Result<()> {
        let Some(mesh) = &self.mesh else { return Ok(()) };
        for level in &self.cells {
            for c in level {
                if c.pieces.len() < 2 {
                    continue;
                }
                let sup: Vec<usize> = c.pieces.iter().map(|p| p.support.unwrap()).collect();
                if mesh.betti_of(&mesh.closure_of(c.dim, &sup)) != ball_betti(c.dim) {
                    return Err(ComplexError::NonComplex(format!("cell {} is not contractible", c.id)));
                }
                let boundary: Vec<CellRef> = c.closure.iter().copied().filter(|&r| r.0 < c.dim).collect();
                if self.betti_of(&boundary) != sphere_betti(c.dim - 1) {
                    return Err(ComplexError::NonComplex(format!("boundary of cell {} is not a sphere", c.id)));
                }
            }
        }
        Ok(())
    }

    /// Coarse complex whose top cells are unions of top fine simplices
    /// (indices in input order). Lower cells are the fine faces on coarse
    /// boundaries, grouped by the set of coarse cells they bound and by
    /// connectivity; groups that are not balls are split along affine hulls.
    pub fn agglomerate(mesh: Arc<SimplicialMesh>, tops: Vec<(String, Vec<usize>)>) -> Result<Complex> {
        let d = mesh.dim;
        let mut covered = vec![false; mesh.simplices[d].len()];
        for (id, s) in &tops {
            for &t in s {
                if t >= covered.len() || std::mem::replace(&mut covered[t], true) {
                    return Err(ComplexError::NonComplex(format!("cell {id}: simplex {t} missing or reused")));
                }
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(ComplexError::NonComplex("agglomeration does not cover the mesh".into()));
        }
        let mut supports: Vec<Vec<(String, Vec<usize>)>> = vec![Vec::new(); d + 1];
        supports[d] = tops;
        for j in (0..d).rev() {
            let mut owner: HashMap<usize, usize> = HashMap::new();
            for (ci, (_, s)) in supports[j + 1].iter().enumerate() {
                for &t in s {
                    owner.insert(t, ci);
                }
            }
            // candidate fine j-simplices keyed by the coarse (j+1)-cells they bound
            let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
            for s in 0..mesh.simplices[j].len() {
                let co: Vec<usize> = mesh.cofaces(j, s).iter().filter_map(|t| owner.get(t).copied()).collect();
                if co.is_empty() || (co.len() == 2 && co[0] == co[1]) {
                    continue;
                }
                let key: Vec<usize> = co.into_iter().sorted().dedup().collect();
                groups.entry(key).or_default().push(s);
            }
            let mut level = Vec::new();
            for (_, g) in groups {
                for comp in components(&mesh, j, &g) {
                    if j == 0 || is_ball(&mesh, j, &comp) {
                        level.push(comp);
                    } else {
                        let mut by_hull: BTreeMap<String, Vec<usize>> = BTreeMap::new();
                        for &s in &comp {
                            by_hull.entry(affine_hull_key(&mesh, j, s)).or_default().push(s);
                        }
                        for (_, h) in by_hull {
                            level.extend(components(&mesh, j, &h));
                        }
                    }
                }
            }
            level.sort();
            supports[j] = level
                .into_iter()
                .map(|s| {
                    let id = if s.len() == 1 { simplex_id(&mesh.simplices[j][s[0]]) } else { format!("g{}", simplex_id(&mesh.simplices[j][s[0]])) };
                    (id, s)
                })
                .collect();
        }
        Self::from_supports(mesh, supports)
    }

    pub fn dim(&self) -> usize {
        self.cells.len() - 1
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn mesh(&self) -> Option<&Arc<SimplicialMesh>> {
        self.mesh.as_ref()
    }

    pub fn factors(&self) -> Option<&(Arc<Complex>, Arc<Complex>)> {
        self.product.as_ref()
    }

    pub fn cells(&self, j: usize) -> &[Cell] {
        self.cells.get(j).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn num_cells(&self, j: usize) -> usize {
        self.cells(j).len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.cells.iter().map(|l| l.len()).collect()
    }

    pub fn cell(&self, r: CellRef) -> &Cell {
        &self.cells[r.0][r.1]
    }

    pub fn all_cells(&self) -> Vec<CellRef> {
        (0..self.cells.len()).flat_map(|j| (0..self.cells[j].len()).map(move |i| (j, i))).collect()
    }

    pub fn find(&self, id: &str) -> Result<CellRef> {
        self.index.get(id).copied().ok_or_else(|| ComplexError::UnknownCell(id.to_string()))
    }

    /// Whether every cell is a single simplex piece.
    pub fn is_simplicial(&self) -> bool {
        self.mesh.is_some() && self.cells.iter().flatten().all(|c| c.pieces.len() == 1)
    }

    /// Incidence number `o(T, T')`.
    pub fn incidence(&self, t: CellRef, tp: CellRef) -> i32 {
        if tp.0 + 1 != t.0 {
            return 0;
        }
        self.cell(t).faces.iter().find(|f| f.0 == tp.1).map(|f| f.1).unwrap_or(0)
    }

    pub fn incidence_by_id(&self, t: &str, tp: &str) -> Result<i32> {
        Ok(self.incidence(self.find(t)?, self.find(tp)?))
    }

    /// Rows of `δ_k` (indexed by (k+1)-cells) as sparse vectors.
    pub fn coboundary_rows(&self, k: usize) -> Vec<Vec<(usize, Q)>> {
        self.cells(k + 1).iter().map(|c| c.faces.iter().map(|&(f, s)| (f, qi(s as i64))).collect()).collect()
    }

    pub fn coboundary_matrix(&self, k: usize) -> Matrix<Q> {
        let mut m = Matrix::zeros(self.num_cells(k + 1), self.num_cells(k));
        for (r, row) in self.coboundary_rows(k).into_iter().enumerate() {
            for (c, v) in row {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn betti_numbers(&self) -> Vec<usize> {
        self.betti_of(&self.all_cells())
    }

    /// Betti numbers of the subcomplex formed by `cells` (closed under faces).
    pub fn betti_of(&self, cells: &[CellRef]) -> Vec<usize> {
        let top = cells.iter().map(|c| c.0).max().unwrap_or(0);
        let mut pos: Vec<HashMap<usize, usize>> = vec![HashMap::new(); top + 1];
        for &(j, i) in cells.iter().sorted() {
            let n = pos[j].len();
            pos[j].insert(i, n);
        }
        let ranks: Vec<usize> = (0..top)
            .map(|j| {
                sparse_rank(pos[j + 1].keys().map(|&t| {
                    self.cells[j + 1][t].faces.iter().filter_map(|&(f, s)| pos[j].get(&f).map(|&p| (p, qi(s as i64)))).collect::<Vec<_>>()
                }))
            })
            .collect();
        betti_from_ranks(&pos.iter().map(|p| p.len()).collect::<Vec<_>>(), &ranks)
    }

    /// Subcomplex on the given cells (closed under faces), keeping ids.
    pub fn subcomplex(&self, cells: &[CellRef]) -> Complex {
        let sel: BTreeSet<CellRef> = cells.iter().copied().collect();
        let top = sel.iter().map(|c| c.0).max().unwrap_or(0);
        let mut remap: Vec<HashMap<usize, usize>> = vec![HashMap::new(); top + 1];
        let mut out: Vec<Vec<Cell>> = vec![Vec::new(); top + 1];
        for &(j, i) in &sel {
            remap[j].insert(i, out[j].len());
            let mut c = self.cells[j][i].clone();
            c.faces = c.faces.iter().map(|&(f, s)| (*remap[j - 1].get(&f).expect("subcomplex closed under faces"), s)).collect();
            out[j].push(c);
        }
        Self::assemble(self.ambient, self.mesh.clone(), self.product.clone(), out).expect("subcomplex of a valid complex")
    }

    /// Complex carried by the boundary of a cell.
    pub fn boundary_subcomplex(&self, t: CellRef) -> Result<Complex> {
        if t.0 == 0 {
            return Err(ComplexError::ZeroCell(self.cell(t).id.clone()));
        }
        Ok(self.subcomplex(&self.boundary_cells(t)))
    }

    pub fn boundary_cells(&self, t: CellRef) -> Vec<CellRef> {
        self.cell(t).closure.iter().copied().filter(|&r| r != t).collect()
    }

    pub fn skeleton(&self, m: usize) -> Complex {
        let cells: Vec<CellRef> = self.all_cells().into_iter().filter(|c| c.0 <= m).collect();
        self.subcomplex(&cells)
    }

    /// For each piece of `sub`, the containing piece of `cell` and the affine
    /// map between their charts.
    pub fn trace_map(&self, cell: CellRef, sub: CellRef) -> Vec<(usize, AffineEmbed)> {
        let c = self.cell(cell);
        let s = self.cell(sub);
        if let (Some((a, b)), Some((cu, cv)), Some((su, sv))) = (&self.product, c.factors, s.factors) {
            let tu = a.trace_map(cu, su);
            let tv = b.trace_map(cv, sv);
            let nv = b.cell(cv).pieces.len();
            let mut out = Vec::new();
            for (pu, eu) in &tu {
                for (pv, ev) in &tv {
                    out.push((pu * nv + pv, AffineEmbed::product(eu, ev)));
                }
            }
            return out;
        }
        let mesh = self.mesh.as_ref().expect("mesh-backed complex");
        s.pieces
            .iter()
            .map(|q| {
                let vq = &mesh.simplices[s.dim][q.support.unwrap()];
                c.pieces
                    .iter()
                    .enumerate()
                    .find_map(|(pi, p)| {
                        let vp = &mesh.simplices[c.dim][p.support.unwrap()];
                        let pos: Option<Vec<usize>> = vq.iter().map(|v| vp.iter().position(|w| w == v)).collect();
                        pos.map(|pos| (pi, vertex_embedding(c.dim, &pos)))
                    })
                    .unwrap_or_else(|| panic!("{} is not a subcell of {}", s.id, c.id))
            })
            .collect()
    }

    pub fn trace(&self, cell: CellRef, sub: CellRef, u: &CellForm) -> CellForm {
        self.trace_map(cell, sub).iter().map(|(p, e)| u[*p].pullback(e)).collect()
    }

    /// Restriction of an ambient polynomial form to a cell.
    pub fn restrict_ambient(&self, u: &PolyForm, cell: CellRef) -> CellForm {
        self.cell(cell).pieces.iter().map(|p| u.pullback(&p.chart())).collect()
    }

    pub fn d(u: &CellForm) -> CellForm {
        u.iter().map(|f| f.d()).collect()
    }

    /// Oriented integral of a top-degree form over a cell.
    pub fn integrate(&self, cell: CellRef, u: &CellForm) -> Q {
        self.cell(cell)
            .pieces
            .iter()
            .zip(u)
            .map(|(p, f)| f.integrate_shape(&p.shape) * qi(p.sign as i64))
            .fold(Q::zero(), |a, b| a + b)
    }

    /// Ambient coordinates of the corners of all pieces of a cell.
    pub fn points_of(&self, cell: CellRef) -> Vec<Vec<Q>> {
        let mut pts: Vec<Vec<Q>> = Vec::new();
        for p in &self.cell(cell).pieces {
            for x in product_corners(p) {
                if !pts.contains(&x) {
                    pts.push(x);
                }
            }
        }
        pts
    }

    pub fn diameter(&self, cell: CellRef) -> f64 {
        let pts: Vec<Vec<f64>> = self.points_of(cell).iter().map(|p| p.iter().map(q_to_f64).collect()).collect();
        let mut d: f64 = 0.0;
        for a in &pts {
            for b in &pts {
                d = d.max(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
            }
        }
        d
    }

    /// Checks that the intersection of any two cells is a union of cells,
    /// on fine-simplex closures. Returns the first offending pair.
    pub fn check_intersections(&self) -> std::result::Result<(), (String, String)> {
        let Some(mesh) = &self.mesh else { return Ok(()) };
        let fine = |r: CellRef| -> BTreeSet<CellRef> {
            let c = self.cell(r);
            let sup: Vec<usize> = c.pieces.iter().map(|p| p.support.unwrap()).collect();
            mesh.closure_of(c.dim, &sup).into_iter().enumerate().flat_map(|(j, s)| s.into_iter().map(move |x| (j, x))).collect()
        };
        let all = self.all_cells();
        let closures: Vec<BTreeSet<CellRef>> = all.iter().map(|&r| fine(r)).collect();
        let cl_sets: Vec<BTreeSet<CellRef>> = all.iter().map(|&r| self.cell(r).closure.iter().copied().collect()).collect();
        for a in 0..all.len() {
            for b in a + 1..all.len() {
                let inter: BTreeSet<CellRef> = closures[a].intersection(&closures[b]).copied().collect();
                let mut union = BTreeSet::new();
                for r in cl_sets[a].intersection(&cl_sets[b]) {
                    let i = all.iter().position(|x| x == r).unwrap();
                    union.extend(closures[i].iter().copied());
                }
                if inter != union {
                    return Err((self.cell(all[a]).id.clone(), self.cell(all[b]).id.clone()));
                }
            }
        }
        Ok(())
    }

    /// Barycentric refinement of a simplicial complex with the primal
    /// simplex containing each refined simplex in its relative interior.
    pub fn barycentric_refinement(&self) -> Result<(Complex, ParentMap)> {
        let (mesh, _) = self.refined_mesh()?;
        let refined = Complex::from_mesh(mesh.clone());
        let origin = self.barycenter_table();
        let parent: ParentMap = mesh.simplices.iter().map(|l| l.iter().map(|s| origin[*s.last().unwrap()]).collect()).collect();
        Ok((refined, parent))
    }

    /// Refined vertex `i` is the barycenter of primal simplex `table[i]`.
    fn barycenter_table(&self) -> Vec<CellRef> {
        self.all_cells()
    }

    fn refined_mesh(&self) -> Result<(Arc<SimplicialMesh>, HashMap<CellRef, usize>)> {
        if !self.is_simplicial() {
            return Err(ComplexError::NotSimplicial);
        }
        let table = self.barycenter_table();
        let vid: HashMap<CellRef, usize> = table.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let verts: Vec<Vec<Q>> = table
            .iter()
            .map(|&r| {
                let pts = self.cell(r).pieces[0].corner_points();
                let n = qi(pts.len() as i64);
                (0..self.ambient).map(|a| pts.iter().fold(Q::zero(), |s, p| s + &p[a]) / &n).collect()
            })
            .collect();
        let d = self.dim();
        let mut flags = Vec::new();
        for t in 0..self.num_cells(d) {
            let mut stack = vec![vec![(d, t)]];
            while let Some(chain) = stack.pop() {
                let last = *chain.last().unwrap();
                if last.0 == 0 {
                    flags.push(chain.iter().map(|r| vid[r]).sorted().collect::<Vec<_>>());
                    continue;
                }
                for &(f, _) in self.cell(last).faces.iter().rev() {
                    let mut c = chain.clone();
                    c.push((last.0 - 1, f));
                    stack.push(c);
                }
            }
        }
        Ok((Arc::new(SimplicialMesh::new(verts, d, &flags)?), vid))
    }

    /// Dual complex over the barycentric refinement. Each primal simplex `σ`
    /// gets the block `d[σ]` of chains starting at `σ`; each boundary simplex
    /// also gets the block `b[σ]` of chains inside the boundary complex.
    pub fn dual_complex(&self) -> Result<Complex> {
        if !self.is_simplicial() {
            return Err(ComplexError::NotSimplicial);
        }
        let d = self.dim();
        let mut cofaces: HashMap<CellRef, Vec<CellRef>> = HashMap::new();
        for r in self.all_cells() {
            for &(f, _) in &self.cell(r).faces {
                cofaces.entry((r.0 - 1, f)).or_default().push(r);
            }
        }
        let mut on_boundary: BTreeSet<CellRef> = BTreeSet::new();
        if d > 0 {
            for f in 0..self.num_cells(d - 1) {
                let n = cofaces.get(&(d - 1, f)).map_or(0, |v| v.len());
                if n > 2 {
                    return Err(ComplexError::NotManifoldLike(self.cells[d - 1][f].id.clone()));
                }
                if n == 1 {
                    on_boundary.extend(self.cells[d - 1][f].closure.iter().copied());
                }
            }
        }
        let (mesh, vid) = self.refined_mesh()?;
        let chains_up = |start: CellRef, top: usize, allowed: &dyn Fn(CellRef) -> bool| -> Vec<usize> {
            let mut out = Vec::new();
            let mut stack = vec![vec![start]];
            while let Some(chain) = stack.pop() {
                let last = *chain.last().unwrap();
                if last.0 == top {
                    let verts: Vec<usize> = chain.iter().map(|r| vid[r]).collect();
                    out.push(mesh.find(&verts).expect("chain is a refined simplex"));
                    continue;
                }
                for &c in cofaces.get(&last).map(|v| v.as_slice()).unwrap_or(&[]) {
                    if allowed(c) {
                        let mut ch = chain.clone();
                        ch.push(c);
                        stack.push(ch);
                    }
                }
            }
            out.sort_unstable();
            out
        };
        let mut supports: Vec<Vec<(String, Vec<usize>)>> = vec![Vec::new(); d + 1];
        for r in self.all_cells() {
            let id = &self.cell(r).id;
            supports[d - r.0].push((format!("d[{id}]"), chains_up(r, d, &|_| true)));
            if on_boundary.contains(&r) && r.0 < d {
                supports[d - 1 - r.0].push((format!("b[{id}]"), chains_up(r, d - 1, &|c| on_boundary.contains(&c))));
            }
        }
        Self::from_supports(mesh, supports)
    }

    /// Matrix of `ι` from fine k-cochains to coarse k-cochains: `±1` when a
    /// fine cell lies in a coarse one, signed by relative orientation.
    pub fn refinement_cochain_map(fine: &Complex, coarse: &Complex, parent: Option<&ParentMap>, k: usize) -> Result<Matrix<Q>> {
        let mut m = Matrix::zeros(coarse.num_cells(k), fine.num_cells(k));
        for cv in coarse.cells(0) {
            let x = &cv.pieces[0].origin;
            if !fine.cells(0).iter().any(|f| &f.pieces[0].origin == x) {
                return Err(ComplexError::NotRefinement(format!("coarse vertex {} is not a fine vertex", cv.id)));
            }
        }
        for (fi, fc) in fine.cells(k).iter().enumerate() {
            let q = &fc.pieces[0];
            let pts = q.corner_points();
            let candidates: Vec<usize> = match parent {
                Some(p) => {
                    let r = p[k][fi];
                    if r.0 == k {
                        vec![r.1]
                    } else {
                        vec![]
                    }
                }
                None => (0..coarse.num_cells(k)).collect(),
            };
            for ci in candidates {
                let cc = &coarse.cells[k][ci];
                let Some(p) = cc.pieces.iter().find(|p| pts.iter().all(|x| p.contains(x))) else { continue };
                let cols: Vec<Vec<Q>> = pts[1..].iter().map(|x| sub(&p.chart_coords(x).unwrap(), &p.chart_coords(&pts[0]).unwrap())).collect();
                let det = if k == 0 { Q::one() } else { Matrix::from_cols(&cols, k).det() };
                let s = if det.is_positive() { 1 } else { -1 } * p.sign * q.sign;
                m[(ci, fi)] = qi(s as i64);
                break;
            }
        }
        for ci in 0..coarse.num_cells(k) {
            if k > 0 && m.row(ci).iter().all(|v| v.is_zero()) {
                return Err(ComplexError::NotRefinement(format!("coarse cell {} contains no fine cell", coarse.cells[k][ci].id)));
            }
        }
        Ok(m)
    }

    /// Mesh file for the fine mesh together with the top cells.
    pub fn to_mesh_file(&self) -> MeshFile {
        let mesh = self.mesh.as_ref().expect("mesh-backed complex");
        let d = self.dim();
        let cells = if self.is_simplicial() {
            None
        } else {
            Some(
                self.cells(d)
                    .iter()
                    .map(|c| CellSpec { id: c.id.clone(), simplices: c.pieces.iter().map(|p| p.support.unwrap()).collect() })
                    .collect(),
            )
        };
        MeshFile {
            dimension: mesh.dim,
            vertices: mesh.vertices.iter().map(|v| v.iter().map(RatJson::from_q).collect()).collect(),
            simplices: mesh.simplices[mesh.dim].clone(),
            cells,
            orders: None,
        }
    }
}

/// Vertex list as a cell id, e.g. `0-1-2`.
pub fn simplex_id(s: &[usize]) -> String {
    s.iter().map(|v| v.to_string()).join("-")
}

/// Chart embedding of the face with vertex positions `pos` into the
/// reference `m`-simplex.
pub fn vertex_embedding(m: usize, pos: &[usize]) -> AffineEmbed {
    let corner = |p: usize| -> Vec<Q> {
        let mut v = vec![Q::zero(); m];
        if p > 0 {
            v[p - 1] = Q::one();
        }
        v
    };
    let o = corner(pos[0]);
    let cols: Vec<Vec<Q>> = pos[1..].iter().map(|&p| sub(&corner(p), &o)).collect();
    AffineEmbed { lin: Matrix::from_cols(&cols, m), offset: o }
}

fn product_corners(p: &Piece) -> Vec<Vec<Q>> {
    // corners of a product of simplices: every choice of one vertex per factor
    let mut local: Vec<Vec<Q>> = vec![vec![]];
    for &m in &p.shape {
        let mut next = Vec::new();
        for l in &local {
            for v in 0..=m {
                let mut x = l.clone();
                x.extend((0..m).map(|i| if v == i + 1 { Q::one() } else { Q::zero() }));
                next.push(x);
            }
        }
        local = next;
    }
    local.iter().map(|t| p.chart().apply(t)).collect()
}

/// Piece signs making the fine simplices of a support coherently oriented,
/// the first one positive.
fn orient_support(mesh: &SimplicialMesh, j: usize, support: &[usize]) -> std::result::Result<Vec<i32>, String> {
    if j == 0 {
        return if support.len() == 1 { Ok(vec![1]) } else { Err("a 0-cell must be a single vertex".into()) };
    }
    let mut by_facet: HashMap<usize, Vec<(usize, i32)>> = HashMap::new();
    for (pi, &s) in support.iter().enumerate() {
        for (f, o) in mesh.facets(j, s) {
            by_facet.entry(f).or_default().push((pi, o));
        }
    }
    if by_facet.values().any(|v| v.len() > 2) {
        return Err("support is not a pseudo-manifold".into());
    }
    let mut sign = vec![0i32; support.len()];
    sign[0] = 1;
    let mut stack = vec![0usize];
    while let Some(p) = stack.pop() {
        for (f, o) in mesh.facets(j, support[p]) {
            for &(q, oq) in &by_facet[&f] {
                if q == p {
                    continue;
                }
                let want = -sign[p] * o * oq;
                if sign[q] == 0 {
                    sign[q] = want;
                    stack.push(q);
                } else if sign[q] != want {
                    return Err("support is not orientable".into());
                }
            }
        }
    }
    if sign.contains(&0) {
        return Err("support is disconnected".into());
    }
    Ok(sign)
}

/// Connected components of a set of j-simplices under facet adjacency.
fn components(mesh: &SimplicialMesh, j: usize, set: &[usize]) -> Vec<Vec<usize>> {
    if j == 0 {
        return set.iter().map(|&s| vec![s]).collect();
    }
    let mut by_facet: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &s) in set.iter().enumerate() {
        for (f, _) in mesh.facets(j, s) {
            by_facet.entry(f).or_default().push(i);
        }
    }
    let mut comp = vec![usize::MAX; set.len()];
    let mut out = Vec::new();
    for start in 0..set.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = Vec::new();
        let mut stack = vec![start];
        comp[start] = id;
        while let Some(i) = stack.pop() {
            members.push(set[i]);
            for (f, _) in mesh.facets(j, set[i]) {
                for &n in &by_facet[&f] {
                    if comp[n] == usize::MAX {
                        comp[n] = id;
                        stack.push(n);
                    }
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

/// Homological ball test on a set of fine j-simplices.
fn is_ball(mesh: &SimplicialMesh, j: usize, set: &[usize]) -> bool {
    if mesh.betti_of(&mesh.closure_of(j, set)) != ball_betti(j) {
        return false;
    }
    let mut count: HashMap<usize, usize> = HashMap::new();
    for &s in set {
        for (f, _) in mesh.facets(j, s) {
            *count.entry(f).or_insert(0) += 1;
        }
    }
    let boundary: Vec<usize> = count.into_iter().filter(|e| e.1 == 1).map(|e| e.0).sorted().collect();
    if boundary.is_empty() {
        return false;
    }
    mesh.betti_of(&mesh.closure_of(j - 1, &boundary)) == sphere_betti(j - 1)
}

/// Canonical description of the affine hull of a fine simplex.
fn affine_hull_key(mesh: &SimplicialMesh, j: usize, s: usize) -> String {
    let p = mesh.piece(j, s, 1);
    let normals = p.frame.transpose().null_space();
    let n = Matrix::from_rows(&normals, mesh.ambient);
    let rows = n.row_space();
    let offs: Vec<Q> = rows.iter().map(|r| crate::linalg::dot(r, &p.origin)).collect();
    format!("{rows:?}|{offs:?}")
}

/// Rational number in a mesh file: an integer or a `"p/q"` string.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum RatJson {
    Int(i64),
    Str(String),
}

impl RatJson {
    pub fn to_q(&self) -> Result<Q> {
        match self {
            RatJson::Int(i) => Ok(qi(*i)),
            RatJson::Str(s) => crate::linalg::parse_q(s).ok_or_else(|| ComplexError::Parse(format!("bad rational {s:?}"))),
        }
    }

    pub fn from_q(q: &Q) -> RatJson {
        if q.is_integer() {
            if let Some(i) = num_traits::ToPrimitive::to_i64(q.numer()) {
                return RatJson::Int(i);
            }
        }
        RatJson::Str(crate::linalg::format_q(q))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub id: String,
    pub simplices: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OrderSpec {
    pub default: usize,
    #[serde(default)]
    pub per_cell: BTreeMap<String, usize>,
}

/// Mesh file: vertices, top simplices, optional agglomeration and orders.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeshFile {
    pub dimension: usize,
    pub vertices: Vec<Vec<RatJson>>,
    pub simplices: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<CellSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orders: Option<OrderSpec>,
}

impl MeshFile {
    pub fn parse(text: &str) -> Result<MeshFile> {
        serde_json::from_str(text).map_err(|e| ComplexError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mesh file serializes")
    }

    pub fn complex(&self) -> Result<Complex> {
        let verts: Vec<Vec<Q>> = self.vertices.iter().map(|v| v.iter().map(|x| x.to_q()).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
        let mesh = Arc::new(SimplicialMesh::new(verts, self.dimension, &self.simplices)?);
        match &self.cells {
            None => Ok(Complex::from_mesh(mesh)),
            Some(cells) => Complex::agglomerate(mesh, cells.iter().map(|c| (c.id.clone(), c.simplices.clone())).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> Complex {
        Complex::build_simplicial(vec![vec![qi(0), qi(0)], vec![qi(1), qi(0)], vec![qi(0), qi(1)]], 2, &[vec![0, 1, 2]]).unwrap()
    }

    #[test]
    fn triangle_counts_and_signs() {
        let c = tri();
        assert_eq!(c.counts(), vec![3, 3, 1]);
        let t = c.find("0-1-2").unwrap();
        let signs: Vec<i32> = ["1-2", "0-2", "0-1"].iter().map(|e| c.incidence(t, c.find(e).unwrap())).collect();
        assert_eq!(signs, vec![1, -1, 1]);
        assert_eq!(c.incidence_by_id("0-1", "1").unwrap(), 1);
        assert_eq!(c.incidence_by_id("0-1", "0").unwrap(), -1);
        assert_eq!(c.incidence(t, t), 0);
        assert_eq!(c.betti_numbers(), vec![1, 0, 0]);
    }

    #[test]
    fn degenerate_simplex_rejected() {
        let v = vec![vec![qi(0), qi(0)], vec![qi(1), qi(1)], vec![qi(2), qi(2)]];
        assert!(matches!(Complex::build_simplicial(v, 2, &[vec![0, 1, 2]]), Err(ComplexError::DegenerateSimplex(_))));
    }

    #[test]
    fn agglomerated_square_has_four_sides() {
        let v = vec![vec![qi(0), qi(0)], vec![qi(1), qi(0)], vec![qi(0), qi(1)], vec![qi(1), qi(1)]];
        let mesh = Arc::new(SimplicialMesh::new(v, 2, &[vec![0, 1, 2], vec![1, 2, 3]]).unwrap());
        let c = Complex::agglomerate(mesh, vec![("Q".into(), vec![0, 1])]).unwrap();
        assert_eq!(c.counts(), vec![4, 4, 1]);
        assert!(c.coboundary_matrix(1).mul(&c.coboundary_matrix(0)).is_zero());
        let q = c.find("Q").unwrap();
        assert_eq!(c.boundary_subcomplex(q).unwrap().counts(), vec![4, 4]);
        assert!(c.check_intersections().is_ok());
    }

    #[test]
    fn refinement_and_dual_of_triangle() {
        let c = tri();
        let (r, parent) = c.barycentric_refinement().unwrap();
        assert_eq!(r.num_cells(2), 6);
        assert_eq!(r.betti_numbers(), vec![1, 0, 0]);
        for k in 0..2 {
            let i0 = Complex::refinement_cochain_map(&r, &c, Some(&parent), k).unwrap();
            let i1 = Complex::refinement_cochain_map(&r, &c, Some(&parent), k + 1).unwrap();
            assert_eq!(i1.mul(&r.coboundary_matrix(k)), c.coboundary_matrix(k).mul(&i0));
        }
        let dual = c.dual_complex().unwrap();
        assert_eq!(dual.num_cells(2), 3);
        assert_eq!(dual.betti_numbers(), vec![1, 0, 0]);
    }
}
