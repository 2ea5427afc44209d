//! Dense and sparse linear algebra over exact rationals and `f64`.
//!
//! Everything structural in this crate is decided by rank computations, so
//! the routines here are generic over [`Field`]: `Q` gives exact answers and
//! `f64` uses a relative pivot threshold.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Exact rational scalar.
pub type Q = BigRational;

/// Relative pivot threshold for floating-point eliminations.
pub const FLOAT_PIVOT_TOL: f64 = 1e-10;

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn qf(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn q_to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        // numerator/denominator too large for a direct conversion
        let n = x.numer().to_f64().unwrap_or(f64::NAN);
        let d = x.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Parses `"p/q"`, `"p"` or a decimal like `"0.25"` into an exact rational.
pub fn parse_q(s: &str) -> Option<Q> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(Q::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let neg = int.starts_with('-');
        let int_abs = int.trim_start_matches(['-', '+']);
        let digits = format!("{}{}", if int_abs.is_empty() { "0" } else { int_abs }, frac);
        let n: BigInt = digits.parse().ok()?;
        let d = num_traits::pow(BigInt::from(10), frac.len());
        let v = Q::new(n, d);
        return Some(if neg { -v } else { v });
    }
    let n: BigInt = s.parse().ok()?;
    Some(Q::from_integer(n))
}

/// Rounds to 12 significant digits so serialized floats are stable.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

pub fn format_q(x: &Q) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Square root of a rational when it is a perfect square.
pub fn exact_sqrt(x: &Q) -> Option<Q> {
    if x.is_negative() {
        return None;
    }
    let n = x.numer().sqrt();
    let d = x.denom().sqrt();
    if &(&n * &n) == x.numer() && &(&d * &d) == x.denom() {
        Some(Q::new(n, d))
    } else {
        None
    }
}

/// Best rational approximation with denominator at most `max_den`
/// (continued fractions).
pub fn rational_approx(x: f64, max_den: i64) -> Q {
    let neg = x < 0.0;
    let mut v = x.abs();
    let (mut p0, mut q0, mut p1, mut q1) = (0i128, 1i128, 1i128, 0i128);
    for _ in 0..64 {
        let a = v.floor();
        let ai = a as i128;
        let p2 = ai * p1 + p0;
        let q2 = ai * q1 + q0;
        if q2 > max_den as i128 {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let f = v - a;
        if f < 1e-15 {
            break;
        }
        v = 1.0 / f;
    }
    let r = Q::new(BigInt::from(p1), BigInt::from(q1.max(1)));
    if neg {
        -r
    } else {
        r
    }
}

/// Scalar field used by the generic eliminations.
pub trait Field: Clone + fmt::Debug + PartialEq + Send + Sync + 'static {
    fn nil() -> Self;
    fn unit() -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn from_q(q: &Q) -> Self;
    fn magnitude(&self) -> f64;
    /// Whether the value counts as zero relative to `scale`.
    fn negligible(&self, scale: f64) -> bool;
    /// Whether pivots should be chosen by magnitude.
    const PARTIAL_PIVOTING: bool;
}

impl Field for Q {
    fn nil() -> Self {
        Zero::zero()
    }
    fn unit() -> Self {
        One::one()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn from_q(q: &Q) -> Self {
        q.clone()
    }
    fn magnitude(&self) -> f64 {
        q_to_f64(&self.abs())
    }
    fn negligible(&self, _scale: f64) -> bool {
        self.is_zero()
    }
    const PARTIAL_PIVOTING: bool = false;
}

impl Field for f64 {
    fn nil() -> Self {
        0.0
    }
    fn unit() -> Self {
        1.0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn from_q(q: &Q) -> Self {
        q_to_f64(q)
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn negligible(&self, scale: f64) -> bool {
        self.abs() <= FLOAT_PIVOT_TOL * scale.max(f64::MIN_POSITIVE)
    }
    const PARTIAL_PIVOTING: bool = true;
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: fmt::Debug> fmt::Debug for Matrix<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", &self.data[r * self.cols..(r + 1) * self.cols])?;
        }
        Ok(())
    }
}

/// Reduced row echelon form together with its pivot columns.
#[derive(Clone, Debug)]
pub struct Rref<F> {
    pub matrix: Matrix<F>,
    pub pivots: Vec<usize>,
}

impl<F: Field> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![F::nil(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::unit();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<F>], cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged matrix rows");
            data.extend(r.iter().cloned());
        }
        Matrix { rows: rows.len(), cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_cols(cols: &[Vec<F>], rows: usize) -> Self {
        let mut m = Self::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            assert_eq!(c.len(), rows, "ragged matrix columns");
            for (i, v) in c.iter().enumerate() {
                m[(i, j)] = v.clone();
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn col(&self, c: usize) -> Vec<F> {
        (0..self.rows).map(|r| self[(r, c)].clone()).collect()
    }

    pub fn rows_vec(&self) -> Vec<Vec<F>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)].clone();
            }
        }
        t
    }

    pub fn is_zero(&self) -> bool {
        let s = self.max_abs();
        self.data.iter().all(|x| x.negligible(if F::PARTIAL_PIVOTING { 1.0 } else { s }))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.magnitude()).fold(0.0, f64::max)
    }

    pub fn mul(&self, o: &Matrix<F>) -> Matrix<F> {
        assert_eq!(self.cols, o.rows, "matrix product dimension mismatch");
        let mut out = Self::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if *a == F::nil() {
                    continue;
                }
                for j in 0..o.cols {
                    let b = &o[(k, j)];
                    let prod = a.mul(b);
                    out[(i, j)] = out[(i, j)].add(&prod);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[F]) -> Vec<F> {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| {
                let mut acc = F::nil();
                for (a, b) in self.row(i).iter().zip(v) {
                    acc = acc.add(&a.mul(b));
                }
                acc
            })
            .collect()
    }

    pub fn add(&self, o: &Matrix<F>) -> Matrix<F> {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a.add(b)).collect(),
        }
    }

    pub fn sub(&self, o: &Matrix<F>) -> Matrix<F> {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a.sub(b)).collect(),
        }
    }

    pub fn scale(&self, s: &F) -> Matrix<F> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a.mul(s)).collect() }
    }

    /// Stacks `o` below `self`.
    pub fn vstack(&self, o: &Matrix<F>) -> Matrix<F> {
        if self.rows == 0 {
            return o.clone();
        }
        if o.rows == 0 {
            return self.clone();
        }
        assert_eq!(self.cols, o.cols);
        let mut data = self.data.clone();
        data.extend(o.data.iter().cloned());
        Matrix { rows: self.rows + o.rows, cols: self.cols, data }
    }

    /// Places `o` to the right of `self`.
    pub fn hstack(&self, o: &Matrix<F>) -> Matrix<F> {
        assert_eq!(self.rows, o.rows);
        let mut m = Self::zeros(self.rows, self.cols + o.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                m[(r, c)] = self[(r, c)].clone();
            }
            for c in 0..o.cols {
                m[(r, self.cols + c)] = o[(r, c)].clone();
            }
        }
        m
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix<F> {
        let rows: Vec<Vec<F>> = idx.iter().map(|&r| self.row(r).to_vec()).collect();
        Matrix::from_rows(&rows, self.cols)
    }

    pub fn select_cols(&self, idx: &[usize]) -> Matrix<F> {
        let mut m = Self::zeros(self.rows, idx.len());
        for r in 0..self.rows {
            for (j, &c) in idx.iter().enumerate() {
                m[(r, j)] = self[(r, c)].clone();
            }
        }
        m
    }

    pub fn map<G: Field>(&self, f: impl Fn(&F) -> G) -> Matrix<G> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(f).collect() }
    }

    /// Gauss-Jordan elimination to reduced row echelon form.
    pub fn rref(&self) -> Rref<F> {
        let mut m = self.clone();
        let scale = self.max_abs();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..m.cols {
            if r == m.rows {
                break;
            }
            let p = if F::PARTIAL_PIVOTING {
                let best = (r..m.rows)
                    .map(|i| (i, m[(i, c)].magnitude()))
                    .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
                    .0;
                if m[(best, c)].negligible(scale) {
                    None
                } else {
                    Some(best)
                }
            } else {
                (r..m.rows).find(|&i| !m[(i, c)].negligible(scale))
            };
            let Some(p) = p else { continue };
            if p != r {
                for j in 0..m.cols {
                    m.data.swap(p * m.cols + j, r * m.cols + j);
                }
            }
            let inv = F::unit().div(&m[(r, c)]);
            let nz: Vec<usize> = (c..m.cols).filter(|&j| m[(r, j)] != F::nil()).collect();
            for &j in &nz {
                m[(r, j)] = m[(r, j)].mul(&inv);
            }
            for i in 0..m.rows {
                if i == r {
                    continue;
                }
                let f = m[(i, c)].clone();
                if f == F::nil() {
                    continue;
                }
                for &j in &nz {
                    let v = m[(r, j)].mul(&f);
                    m[(i, j)] = m[(i, j)].sub(&v);
                }
                m[(i, c)] = F::nil();
            }
            pivots.push(c);
            r += 1;
        }
        if F::PARTIAL_PIVOTING {
            // flush roundoff below the threshold so downstream tests see zeros
            let s = scale;
            for x in m.data.iter_mut() {
                if x.negligible(s) {
                    *x = F::nil();
                }
            }
        }
        Rref { matrix: m, pivots }
    }

    pub fn rank(&self) -> usize {
        self.rref().pivots.len()
    }

    /// Basis of the right null space, one vector per free column.
    pub fn null_space(&self) -> Vec<Vec<F>> {
        let Rref { matrix: r, pivots } = self.rref();
        let free: Vec<usize> = (0..self.cols).filter(|c| !pivots.contains(c)).collect();
        free.iter()
            .map(|&f| {
                let mut v = vec![F::nil(); self.cols];
                v[f] = F::unit();
                for (i, &p) in pivots.iter().enumerate() {
                    v[p] = r[(i, f)].neg();
                }
                v
            })
            .collect()
    }

    /// Basis of the left null space (row vectors `y` with `y A = 0`).
    pub fn left_null_space(&self) -> Vec<Vec<F>> {
        self.transpose().null_space()
    }

    /// A particular solution of `A x = b` (free variables zero), if any.
    pub fn solve(&self, b: &[F]) -> Option<Vec<F>> {
        assert_eq!(b.len(), self.rows);
        let aug = self.hstack(&Matrix::from_cols(&[b.to_vec()], self.rows));
        let Rref { matrix: r, pivots } = aug.rref();
        if pivots.last() == Some(&self.cols) {
            return None;
        }
        let mut x = vec![F::nil(); self.cols];
        for (i, &p) in pivots.iter().enumerate() {
            x[p] = r[(i, self.cols)].clone();
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<Matrix<F>> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        if n == 0 {
            return Some(Matrix::zeros(0, 0));
        }
        let aug = self.hstack(&Matrix::identity(n));
        let Rref { matrix: r, pivots } = aug.rref();
        if pivots.len() < n || pivots[n - 1] != n - 1 {
            return None;
        }
        Some(r.select_cols(&(n..2 * n).collect::<Vec<_>>()))
    }

    /// Row space basis (nonzero rows of the reduced echelon form).
    pub fn row_space(&self) -> Vec<Vec<F>> {
        let Rref { matrix, pivots } = self.rref();
        (0..pivots.len()).map(|i| matrix.row(i).to_vec()).collect()
    }
}

impl Matrix<Q> {
    /// Exact determinant by fraction elimination.
    pub fn det(&self) -> Q {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut m = self.clone();
        let mut det = Q::one();
        for c in 0..n {
            let Some(p) = (c..n).find(|&i| !m[(i, c)].is_zero()) else {
                return Q::zero();
            };
            if p != c {
                for j in 0..n {
                    m.data.swap(p * n + j, c * n + j);
                }
                det = -det;
            }
            let piv = m[(c, c)].clone();
            det *= &piv;
            for i in c + 1..n {
                if m[(i, c)].is_zero() {
                    continue;
                }
                let f = &m[(i, c)] / &piv;
                for j in c..n {
                    let v = &m[(c, j)] * &f;
                    m[(i, j)] -= v;
                }
            }
        }
        det
    }

    pub fn to_f64(&self) -> Matrix<f64> {
        self.map(q_to_f64)
    }
}

impl<F> std::ops::Index<(usize, usize)> for Matrix<F> {
    type Output = F;
    fn index(&self, (r, c): (usize, usize)) -> &F {
        &self.data[r * self.cols + c]
    }
}

impl<F> std::ops::IndexMut<(usize, usize)> for Matrix<F> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut F {
        &mut self.data[r * self.cols + c]
    }
}

/// Rank of an exact sparse matrix given as rows of `(column, value)`.
///
/// Rows are reduced one at a time against an echelon basis keyed by leading
/// column, which keeps fill low for incidence-like matrices.
pub fn sparse_rank(rows: impl IntoIterator<Item = Vec<(usize, Q)>>) -> usize {
    let mut echelon: BTreeMap<usize, Vec<(usize, Q)>> = BTreeMap::new();
    for row in rows {
        let mut row: Vec<(usize, Q)> = row.into_iter().filter(|(_, v)| !v.is_zero()).collect();
        row.sort_by_key(|e| e.0);
        while let Some((lead, lv)) = row.first().cloned() {
            match echelon.get(&lead) {
                Some(p) => {
                    let f = &lv / &p[0].1;
                    row = sparse_axpy(&row, p, &f);
                }
                None => {
                    echelon.insert(lead, row);
                    break;
                }
            }
        }
    }
    echelon.len()
}

/// `a - f * b` for sorted sparse rows.
pub fn sparse_axpy(a: &[(usize, Q)], b: &[(usize, Q)], f: &Q) -> Vec<(usize, Q)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let ca = a.get(i).map(|e| e.0).unwrap_or(usize::MAX);
        let cb = b.get(j).map(|e| e.0).unwrap_or(usize::MAX);
        if ca < cb {
            out.push(a[i].clone());
            i += 1;
        } else if cb < ca {
            out.push((cb, -(&b[j].1 * f)));
            j += 1;
        } else {
            let v = &a[i].1 - &(&b[j].1 * f);
            if !v.is_zero() {
                out.push((ca, v));
            }
            i += 1;
            j += 1;
        }
    }
    out
}

/// Exact vector helpers.
pub fn dot<F: Field>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::nil(), |acc, (x, y)| acc.add(&x.mul(y)))
}

pub fn is_zero_vec<F: Field>(v: &[F]) -> bool {
    v.iter().all(|x| x.negligible(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[i64]]) -> Matrix<Q> {
        let c = rows[0].len();
        Matrix::from_rows(&rows.iter().map(|r| r.iter().map(|&x| qi(x)).collect()).collect::<Vec<_>>(), c)
    }

    #[test]
    fn rank_and_null_space() {
        let a = m(&[&[1, 2, 3], &[2, 4, 6], &[1, 0, 1]]);
        assert_eq!(a.rank(), 2);
        let ns = a.null_space();
        assert_eq!(ns.len(), 1);
        assert!(is_zero_vec(&a.mul_vec(&ns[0])));
    }

    #[test]
    fn solve_and_inverse() {
        let a = m(&[&[2, 1], &[1, 3]]);
        let x = a.solve(&[qi(3), qi(5)]).unwrap();
        assert_eq!(x, vec![qf(4, 5), qf(7, 5)]);
        let inv = a.inverse().unwrap();
        assert_eq!(a.mul(&inv), Matrix::identity(2));
        assert_eq!(a.det(), qi(5));
        let sing = m(&[&[1, 2], &[2, 4]]);
        assert!(sing.inverse().is_none());
        assert!(sing.solve(&[qi(1), qi(0)]).is_none());
    }

    #[test]
    fn sparse_rank_matches_dense() {
        let a = m(&[&[1, -1, 0, 0], &[0, 1, -1, 0], &[1, 0, -1, 0], &[0, 0, 1, -1]]);
        let rows = a.rows_vec().into_iter().map(|r| r.into_iter().enumerate().collect()).collect::<Vec<_>>();
        assert_eq!(sparse_rank(rows), a.rank());
    }

    #[test]
    fn float_rank_uses_threshold() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0 + 1e-14]], 2);
        assert_eq!(a.rank(), 1);
    }

    #[test]
    fn parse_rationals() {
        assert_eq!(parse_q("3/4"), Some(qf(3, 4)));
        assert_eq!(parse_q("-2"), Some(qi(-2)));
        assert_eq!(parse_q("0.25"), Some(qf(1, 4)));
        assert_eq!(parse_q("-1.5"), Some(qf(-3, 2)));
        assert_eq!(parse_q("1/0"), None);
        assert_eq!(exact_sqrt(&qf(9, 4)), Some(qf(3, 2)));
        assert_eq!(exact_sqrt(&qi(2)), None);
    }

    #[test]
    fn rational_approximation_is_close() {
        let r = rational_approx(std::f64::consts::SQRT_2, 1 << 20);
        assert!((q_to_f64(&r) - std::f64::consts::SQRT_2).abs() < 1e-11);
    }
}
