//! Polynomial differential forms with exact rational coefficients.
//!
//! A [`PolyForm`] lives on `R^n` (a cell chart) and is a finite sum of terms
//! `c x^α dx_I`. Alternating indices are bitmasks over the coordinates, so a
//! chart has at most [`MAX_VARS`] coordinates.

use crate::linalg::{qi, Matrix, Q};
use crate::quadrature::shape_rule;
use itertools::Itertools;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

pub const MAX_VARS: usize = 6;

/// Exponent vector of a monomial.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct Monomial(pub [u8; MAX_VARS]);

impl Monomial {
    pub fn one() -> Self {
        Monomial([0; MAX_VARS])
    }

    pub fn var(i: usize) -> Self {
        let mut m = Self::one();
        m.0[i] = 1;
        m
    }

    pub fn from_slice(e: &[u8]) -> Self {
        let mut m = Self::one();
        m.0[..e.len()].copy_from_slice(e);
        m
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    pub fn mul(&self, o: &Monomial) -> Monomial {
        let mut m = *self;
        for i in 0..MAX_VARS {
            m.0[i] += o.0[i];
        }
        m
    }

    /// Shifts exponents to start at variable `offset`.
    pub fn shifted(&self, offset: usize) -> Monomial {
        let mut m = Self::one();
        for i in 0..MAX_VARS - offset {
            m.0[i + offset] = self.0[i];
        }
        m
    }
}

/// Alternating index set as a bitmask over coordinates.
pub type AltIndex = u8;

pub fn alt_from_slice(idx: &[usize]) -> AltIndex {
    idx.iter().fold(0, |m, &i| m | (1 << i))
}

pub fn alt_to_vec(a: AltIndex) -> Vec<usize> {
    (0..8).filter(|i| a & (1 << i) != 0).collect()
}

pub fn alt_degree(a: AltIndex) -> usize {
    a.count_ones() as usize
}

/// All alternating indices of size `k` over `n` coordinates, lexicographic.
pub fn alt_indices(n: usize, k: usize) -> Vec<AltIndex> {
    (0..n).combinations(k).map(|c| alt_from_slice(&c)).collect()
}

/// Sign of `dx_a ∧ dx_b` relative to `dx_{a∪b}`, or `None` if they overlap.
pub fn wedge_sign(a: AltIndex, b: AltIndex) -> Option<i32> {
    if a & b != 0 {
        return None;
    }
    let mut inversions = 0;
    for i in alt_to_vec(a) {
        inversions += (b & ((1u16 << i) - 1) as u8).count_ones();
    }
    Some(if inversions % 2 == 0 { 1 } else { -1 })
}

/// Monomials in `n` variables of total degree at most `p`, graded then
/// lexicographic with higher powers of earlier variables first.
pub fn monomials(n: usize, p: usize) -> Vec<Monomial> {
    let mut out = Vec::new();
    for deg in 0..=p {
        let mut cur = vec![0u8; n];
        compositions(n, deg, 0, &mut cur, &mut out);
    }
    out
}

fn compositions(n: usize, rem: usize, i: usize, cur: &mut Vec<u8>, out: &mut Vec<Monomial>) {
    if n == 0 {
        if rem == 0 {
            out.push(Monomial::one());
        }
        return;
    }
    if i == n - 1 {
        cur[i] = rem as u8;
        out.push(Monomial::from_slice(cur));
        return;
    }
    for e in (0..=rem).rev() {
        cur[i] = e as u8;
        compositions(n, rem - e, i + 1, cur, out);
    }
}

/// Affine map `t ↦ lin · t + offset` from a source chart into a target chart.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineEmbed {
    pub lin: Matrix<Q>,
    pub offset: Vec<Q>,
}

impl AffineEmbed {
    pub fn identity(n: usize) -> Self {
        AffineEmbed { lin: Matrix::identity(n), offset: vec![Q::zero(); n] }
    }

    pub fn source_dim(&self) -> usize {
        self.lin.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.lin.nrows()
    }

    pub fn apply(&self, t: &[Q]) -> Vec<Q> {
        let mut x = self.lin.mul_vec(t);
        for (xi, o) in x.iter_mut().zip(&self.offset) {
            *xi += o;
        }
        x
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &AffineEmbed) -> AffineEmbed {
        AffineEmbed { lin: self.lin.mul(&inner.lin), offset: self.apply(&inner.offset) }
    }

    /// Block-diagonal product of two maps on concatenated coordinates.
    pub fn product(a: &AffineEmbed, b: &AffineEmbed) -> AffineEmbed {
        let (ra, ca, rb, cb) = (a.target_dim(), a.source_dim(), b.target_dim(), b.source_dim());
        let mut lin = Matrix::zeros(ra + rb, ca + cb);
        for i in 0..ra {
            for j in 0..ca {
                lin[(i, j)] = a.lin[(i, j)].clone();
            }
        }
        for i in 0..rb {
            for j in 0..cb {
                lin[(ra + i, ca + j)] = b.lin[(i, j)].clone();
            }
        }
        let mut offset = a.offset.clone();
        offset.extend(b.offset.iter().cloned());
        AffineEmbed { lin, offset }
    }
}

/// Polynomial k-form on `R^n` with exact coefficients.
#[derive(Clone, PartialEq, Eq)]
pub struct PolyForm {
    n: usize,
    k: usize,
    terms: BTreeMap<(Monomial, AltIndex), Q>,
}

impl fmt::Debug for PolyForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|((m, a), c)| {
                let mono: String = (0..self.n)
                    .filter(|&i| m.0[i] > 0)
                    .map(|i| if m.0[i] == 1 { format!("x{i}") } else { format!("x{i}^{}", m.0[i]) })
                    .join("*");
                let dx: String = alt_to_vec(*a).iter().map(|i| format!("dx{i}")).join("^");
                format!("({c})*{}{}", if mono.is_empty() { "1".into() } else { mono }, if dx.is_empty() { String::new() } else { format!(" {dx}") })
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// JSON term of a serialized form.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FormTerm {
    pub alpha: Vec<u8>,
    #[serde(rename = "I")]
    pub index: Vec<usize>,
    pub coeff: String,
}

/// JSON representation `{deg, terms}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FormJson {
    pub deg: usize,
    pub terms: Vec<FormTerm>,
}

impl PolyForm {
    /// The zero k-form; `k > n` is allowed and stays identically zero.
    pub fn zero(n: usize, k: usize) -> Self {
        assert!(n <= MAX_VARS, "too many variables: {n}");
        PolyForm { n, k, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: Q) -> Self {
        Self::term(n, Monomial::one(), 0, c)
    }

    pub fn term(n: usize, m: Monomial, a: AltIndex, c: Q) -> Self {
        let mut f = Self::zero(n, alt_degree(a));
        f.add_term(m, a, c);
        f
    }

    /// The 0-form `x_i`.
    pub fn coord(n: usize, i: usize) -> Self {
        Self::term(n, Monomial::var(i), 0, Q::one())
    }

    /// The constant form `dx_I`.
    pub fn dx(n: usize, idx: &[usize]) -> Self {
        let sorted: Vec<usize> = idx.iter().copied().sorted().collect();
        let mut sign = 1;
        // parity of the sorting permutation
        for i in 0..idx.len() {
            for j in i + 1..idx.len() {
                if idx[i] > idx[j] {
                    sign = -sign;
                }
                assert_ne!(idx[i], idx[j], "repeated index in dx");
            }
        }
        Self::term(n, Monomial::one(), alt_from_slice(&sorted), qi(sign))
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn terms(&self) -> &BTreeMap<(Monomial, AltIndex), Q> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Highest total polynomial degree among stored terms (0 for the zero form).
    pub fn poly_degree(&self) -> usize {
        self.terms.keys().map(|(m, _)| m.degree()).max().unwrap_or(0)
    }

    pub fn add_term(&mut self, m: Monomial, a: AltIndex, c: Q) {
        debug_assert_eq!(alt_degree(a), self.k);
        if c.is_zero() {
            return;
        }
        let key = (m, a);
        let remove = match self.terms.get_mut(&key) {
            Some(v) => {
                *v += c;
                v.is_zero()
            }
            None => {
                self.terms.insert(key, c);
                false
            }
        };
        if remove {
            self.terms.remove(&key);
        }
    }

    pub fn add(&self, o: &PolyForm) -> PolyForm {
        assert_eq!((self.n, self.k), (o.n, o.k), "adding forms of different type");
        let mut r = self.clone();
        for ((m, a), c) in &o.terms {
            r.add_term(*m, *a, c.clone());
        }
        r
    }

    pub fn sub(&self, o: &PolyForm) -> PolyForm {
        self.add(&o.scale(&-Q::one()))
    }

    pub fn scale(&self, s: &Q) -> PolyForm {
        if s.is_zero() {
            return Self::zero(self.n, self.k);
        }
        PolyForm { n: self.n, k: self.k, terms: self.terms.iter().map(|(key, c)| (*key, c * s)).collect() }
    }

    /// Linear combination `Σ c_i f_i` of forms of equal type.
    pub fn combination(forms: &[PolyForm], coeffs: &[Q], n: usize, k: usize) -> PolyForm {
        let mut r = Self::zero(n, k);
        for (f, c) in forms.iter().zip(coeffs) {
            if c.is_zero() {
                continue;
            }
            for ((m, a), v) in &f.terms {
                r.add_term(*m, *a, v * c);
            }
        }
        r
    }

    /// Exterior derivative; the zero (k+1)-form when k = n.
    pub fn d(&self) -> PolyForm {
        let mut r = Self::zero(self.n, self.k + 1);
        if self.k == self.n {
            return r;
        }
        for ((m, a), c) in &self.terms {
            for j in 0..self.n {
                if m.0[j] == 0 || a & (1 << j) != 0 {
                    continue;
                }
                let mut dm = *m;
                dm.0[j] -= 1;
                let s = wedge_sign(1 << j, *a).expect("disjoint by construction");
                r.add_term(dm, a | (1 << j), c * qi(m.0[j] as i64 * s as i64));
            }
        }
        r
    }

    /// Exterior product; the zero form when the degrees exceed `n`.
    pub fn wedge(&self, o: &PolyForm) -> PolyForm {
        assert_eq!(self.n, o.n, "wedge of forms on different spaces");
        let mut r = Self::zero(self.n, self.k + o.k);
        for ((m1, a1), c1) in &self.terms {
            for ((m2, a2), c2) in &o.terms {
                if let Some(s) = wedge_sign(*a1, *a2) {
                    r.add_term(m1.mul(m2), a1 | a2, c1 * c2 * qi(s as i64));
                }
            }
        }
        r
    }

    /// Koszul operator: contraction with the position vector field.
    pub fn koszul(&self) -> PolyForm {
        assert!(self.k >= 1, "Koszul operator on a 0-form");
        let mut r = Self::zero(self.n, self.k - 1);
        for ((m, a), c) in &self.terms {
            for (pos, i) in alt_to_vec(*a).into_iter().enumerate() {
                let sign = if pos % 2 == 0 { 1 } else { -1 };
                r.add_term(m.mul(&Monomial::var(i)), a & !(1 << i), c * qi(sign));
            }
        }
        r
    }

    /// Pullback along an affine map whose target is this form's space.
    pub fn pullback(&self, phi: &AffineEmbed) -> PolyForm {
        assert_eq!(phi.target_dim(), self.n, "pullback dimension mismatch");
        let m = phi.source_dim();
        if self.k > m {
            return Self::zero(m, self.k);
        }
        // substituted coordinates x_i(t) as 0-forms in t
        let subs: Vec<PolyForm> = (0..self.n)
            .map(|i| {
                let mut f = Self::constant(m, phi.offset[i].clone());
                for j in 0..m {
                    f.add_term(Monomial::var(j), 0, phi.lin[(i, j)].clone());
                }
                f
            })
            .collect();
        let mut powers: Vec<Vec<PolyForm>> = subs.iter().map(|s| vec![Self::constant(m, Q::one()), s.clone()]).collect();
        let mut frames: BTreeMap<AltIndex, Vec<(AltIndex, Q)>> = BTreeMap::new();
        let mut r = Self::zero(m, self.k);
        for ((mono, a), c) in &self.terms {
            let mut poly = Self::constant(m, c.clone());
            for i in 0..self.n {
                let e = mono.0[i] as usize;
                if e == 0 {
                    continue;
                }
                while powers[i].len() <= e {
                    let next = powers[i].last().unwrap().wedge(&subs[i]);
                    powers[i].push(next);
                }
                poly = poly.wedge(&powers[i][e]);
            }
            let frame = frames.entry(*a).or_insert_with(|| {
                let rows = alt_to_vec(*a);
                alt_indices(m, self.k)
                    .into_iter()
                    .filter_map(|b| {
                        let cols = alt_to_vec(b);
                        let det = phi.lin.select_rows(&rows).select_cols(&cols).det();
                        (!det.is_zero()).then_some((b, det))
                    })
                    .collect()
            });
            for ((pm, _), pc) in &poly.terms {
                for (b, det) in frame.iter() {
                    r.add_term(*pm, *b, pc * det);
                }
            }
        }
        r
    }

    /// Rewrites the form on a larger space, shifting variables by `offset`.
    pub fn lift(&self, n: usize, offset: usize) -> PolyForm {
        assert!(offset + self.n <= n);
        let mut r = Self::zero(n, self.k);
        for ((m, a), c) in &self.terms {
            r.add_term(m.shifted(offset), ((*a as u16) << offset) as u8, c.clone());
        }
        r
    }

    /// Exact integral of a top-degree form over a product of reference
    /// simplices (chart orientation).
    pub fn integrate_shape(&self, shape: &[usize]) -> Q {
        let n: usize = shape.iter().sum();
        assert_eq!(n, self.n, "shape dimension mismatch");
        assert_eq!(self.k, self.n, "integrating a {}-form over a {}-cell", self.k, self.n);
        let mut total = Q::zero();
        for ((m, _), c) in &self.terms {
            let mut v = c.clone();
            let mut start = 0;
            for &dim in shape {
                v *= simplex_monomial_integral(&m.0[start..start + dim]);
                start += dim;
            }
            total += v;
        }
        total
    }

    /// Coefficient functions evaluated at a point, keyed by alternating index.
    pub fn eval(&self, x: &[f64]) -> BTreeMap<AltIndex, f64> {
        let mut out = BTreeMap::new();
        for ((m, a), c) in &self.terms {
            let mut v = crate::linalg::q_to_f64(c);
            for i in 0..self.n {
                v *= x[i].powi(m.0[i] as i32);
            }
            *out.entry(*a).or_insert(0.0) += v;
        }
        out
    }

    pub fn eval_q(&self, x: &[Q]) -> BTreeMap<AltIndex, Q> {
        let mut out: BTreeMap<AltIndex, Q> = BTreeMap::new();
        for ((m, a), c) in &self.terms {
            let mut v = c.clone();
            for i in 0..self.n {
                for _ in 0..m.0[i] {
                    v *= &x[i];
                }
            }
            *out.entry(*a).or_insert_with(Q::zero) += v;
        }
        out.retain(|_, v| !v.is_zero());
        out
    }

    pub fn to_json(&self) -> FormJson {
        FormJson {
            deg: self.k,
            terms: self
                .terms
                .iter()
                .map(|((m, a), c)| FormTerm {
                    alpha: m.0[..self.n].to_vec(),
                    index: alt_to_vec(*a),
                    coeff: crate::linalg::format_q(c),
                })
                .collect(),
        }
    }
}

/// `∫_{Δ_m} t^α dt = α! / (|α| + m)!` over the reference simplex.
pub fn simplex_monomial_integral(alpha: &[u8]) -> Q {
    let m = alpha.len();
    let mut num = num_bigint::BigInt::one();
    for &a in alpha {
        num *= factorial(a as usize);
    }
    let total: usize = alpha.iter().map(|&a| a as usize).sum();
    Q::new(num, factorial(total + m))
}

pub fn factorial(n: usize) -> num_bigint::BigInt {
    (1..=n).fold(num_bigint::BigInt::one(), |acc, i| acc * i)
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Basis of `ℙ_p ⊗ 𝔸^k(R^n)`: monomials of degree ≤ p times `dx_I`.
pub fn full_poly_basis(p: usize, k: usize, n: usize) -> Vec<PolyForm> {
    let alts = alt_indices(n, k);
    monomials(n, p)
        .into_iter()
        .flat_map(|m| alts.iter().map(move |&a| PolyForm::term(n, m, a, Q::one())))
        .collect()
}

/// Basis of the full polynomial space of (possibly negative) degree `p`.
pub fn full_poly_basis_signed(p: i64, k: usize, n: usize) -> Vec<PolyForm> {
    if p < 0 {
        Vec::new()
    } else {
        full_poly_basis(p as usize, k, n)
    }
}

/// Column-vector coordinates of forms over a shared key set.
#[derive(Clone, Debug)]
pub struct Coordinates {
    pub keys: BTreeMap<(usize, Monomial, AltIndex), usize>,
}

impl Coordinates {
    /// Key set of a list of piecewise forms (pieces indexed by position).
    pub fn of(forms: &[&[PolyForm]]) -> Self {
        let mut keys = BTreeMap::new();
        for pieces in forms {
            for (p, f) in pieces.iter().enumerate() {
                for (m, a) in f.terms.keys() {
                    let n = keys.len();
                    keys.entry((p, *m, *a)).or_insert(n);
                }
            }
        }
        // renumber in key order for determinism
        for (i, v) in keys.values_mut().enumerate() {
            *v = i;
        }
        Coordinates { keys }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Dense vector of a piecewise form; `None` if it uses an unknown key.
    pub fn vector(&self, pieces: &[PolyForm]) -> Option<Vec<Q>> {
        let mut v = vec![Q::zero(); self.keys.len()];
        for (p, f) in pieces.iter().enumerate() {
            for ((m, a), c) in &f.terms {
                let i = *self.keys.get(&(p, *m, *a))?;
                v[i] = c.clone();
            }
        }
        Some(v)
    }

    /// Matrix whose columns are the coordinate vectors of the given forms.
    pub fn matrix(&self, forms: &[&[PolyForm]]) -> Matrix<Q> {
        let cols: Vec<Vec<Q>> = forms.iter().map(|f| self.vector(f).expect("key set covers forms")).collect();
        Matrix::from_cols(&cols, self.keys.len())
    }
}

/// Indices of a maximal linearly independent prefix-greedy subset.
pub fn independent_subset(forms: &[PolyForm]) -> Vec<usize> {
    let refs: Vec<&[PolyForm]> = forms.iter().map(std::slice::from_ref).collect();
    let coords = Coordinates::of(&refs);
    coords.matrix(&refs).rref().pivots
}

/// Basis of the trimmed space `ℙ_{p-1}𝔸^k + κ ℙ_{p-1}𝔸^{k+1}` on `R^n`.
///
/// Generators are the full space first, then Koszul images, and the first
/// independent ones are kept.
pub fn trimmed_basis(p: usize, k: usize, n: usize) -> Vec<PolyForm> {
    assert!(p >= 1, "trimmed spaces need order at least 1");
    let mut gens = full_poly_basis(p - 1, k, n);
    if k < n {
        gens.extend(full_poly_basis(p - 1, k + 1, n).iter().map(|f| f.koszul()));
    }
    let keep = independent_subset(&gens);
    keep.into_iter().map(|i| gens[i].clone()).collect()
}

/// Closed-form dimension `C(p+n, p+k) C(p+k-1, k)` of the trimmed space.
pub fn trimmed_dimension(p: usize, k: usize, n: usize) -> usize {
    binomial(p + n, p + k) * binomial(p + k - 1, k)
}

/// Barycentric coordinate `λ_i` of the reference simplex in chart
/// coordinates (`λ_0 = 1 - Σ t`, `λ_i = t_i`).
pub fn barycentric(m: usize, i: usize) -> PolyForm {
    if i == 0 {
        let mut f = PolyForm::constant(m, Q::one());
        for j in 0..m {
            f.add_term(Monomial::var(j), 0, -Q::one());
        }
        f
    } else {
        PolyForm::coord(m, i - 1)
    }
}

/// Whitney form of the subsimplex with local vertices `sigma` of the
/// reference `m`-simplex, normalized to unit integral over that subsimplex.
pub fn whitney_form(m: usize, sigma: &[usize]) -> PolyForm {
    assert!(sigma.windows(2).all(|w| w[0] < w[1]) && sigma.iter().all(|&v| v <= m), "not a subsimplex");
    let k = sigma.len() - 1;
    let lam: Vec<PolyForm> = sigma.iter().map(|&v| barycentric(m, v)).collect();
    let dlam: Vec<PolyForm> = lam.iter().map(|l| l.d()).collect();
    let mut r = PolyForm::zero(m, k);
    for i in 0..=k {
        let mut t = lam[i].clone();
        for (j, dl) in dlam.iter().enumerate() {
            if j != i {
                t = t.wedge(dl);
            }
        }
        let s = if i % 2 == 0 { Q::one() } else { -Q::one() };
        r = r.add(&t.scale(&s));
    }
    r.scale(&Q::from_integer(factorial(k)))
}

/// Inner product weights `<dx_I, dx_J>` for a metric with inverse `ginv`.
pub fn alt_metric<F: crate::linalg::Field>(ginv: &Matrix<F>, k: usize) -> BTreeMap<(AltIndex, AltIndex), F> {
    let n = ginv.nrows();
    let alts = alt_indices(n, k);
    let mut out = BTreeMap::new();
    for &a in &alts {
        for &b in &alts {
            let ra = alt_to_vec(a);
            let cb = alt_to_vec(b);
            let sub = ginv.select_rows(&ra).select_cols(&cb);
            let v = det_generic(&sub);
            if v != F::nil() {
                out.insert((a, b), v);
            }
        }
    }
    out
}

/// Determinant by cofactor expansion (small matrices only).
pub fn det_generic<F: crate::linalg::Field>(m: &Matrix<F>) -> F {
    let n = m.nrows();
    match n {
        0 => F::unit(),
        1 => m[(0, 0)].clone(),
        2 => m[(0, 0)].mul(&m[(1, 1)]).sub(&m[(0, 1)].mul(&m[(1, 0)])),
        _ => {
            let mut acc = F::nil();
            for j in 0..n {
                if m[(0, j)] == F::nil() {
                    continue;
                }
                let rows: Vec<usize> = (1..n).collect();
                let cols: Vec<usize> = (0..n).filter(|&c| c != j).collect();
                let minor = det_generic(&m.select_rows(&rows).select_cols(&cols));
                let t = m[(0, j)].mul(&minor);
                acc = if j % 2 == 0 { acc.add(&t) } else { acc.sub(&t) };
            }
            acc
        }
    }
}

/// Exact `∫ <u, v>_g` over a product of reference simplices, with the
/// metric given through `<dx_I, dx_J>` weights and a constant volume factor.
pub fn inner_product_exact(u: &PolyForm, v: &PolyForm, shape: &[usize], metric: &BTreeMap<(AltIndex, AltIndex), Q>, vol: &Q) -> Q {
    assert_eq!(u.k, v.k);
    let mut total = Q::zero();
    for ((m1, a1), c1) in &u.terms {
        for ((m2, a2), c2) in &v.terms {
            let Some(g) = metric.get(&(*a1, *a2)) else { continue };
            let mono = m1.mul(m2);
            let mut val = c1 * c2 * g;
            let mut start = 0;
            for &dim in shape {
                val *= simplex_monomial_integral(&mono.0[start..start + dim]);
                start += dim;
            }
            total += val;
        }
    }
    total * vol
}

/// Exact Gram matrix of a list of k-forms on one piece.
pub fn gram_exact(basis: &[PolyForm], shape: &[usize], ginv: &Matrix<Q>, vol: &Q) -> Matrix<Q> {
    let k = basis.first().map(|b| b.k).unwrap_or(0);
    let metric = alt_metric(ginv, k);
    let n = basis.len();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = inner_product_exact(&basis[i], &basis[j], shape, &metric, vol);
            g[(i, j)] = v.clone();
            g[(j, i)] = v;
        }
    }
    g
}

/// Floating-point Gram matrix with a pointwise weight, by a Gauss rule exact
/// for polynomial degree `2p + 6` where `p` is the largest basis degree.
pub fn gram_weighted(basis: &[PolyForm], shape: &[usize], ginv: &Matrix<f64>, vol: f64, weight: &dyn Fn(&[f64]) -> f64) -> Matrix<f64> {
    let k = basis.first().map(|b| b.k).unwrap_or(0);
    let p = basis.iter().map(|b| b.poly_degree()).max().unwrap_or(0);
    let rule = shape_rule(shape, 2 * p + 6);
    let metric = alt_metric(ginv, k);
    let n = basis.len();
    let vals: Vec<Vec<BTreeMap<AltIndex, f64>>> = rule.points.iter().map(|x| basis.iter().map(|b| b.eval(x)).collect()).collect();
    let wts: Vec<f64> = rule.points.iter().zip(&rule.weights).map(|(x, w)| w * weight(x) * vol).collect();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for (q, w) in wts.iter().enumerate() {
                for ((a, b), gab) in &metric {
                    if let (Some(x), Some(y)) = (vals[q][i].get(a), vals[q][j].get(b)) {
                        s += w * gab * x * y;
                    }
                }
            }
            g[(i, j)] = s;
            g[(j, i)] = s;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qf;

    fn x(n: usize, i: usize) -> PolyForm {
        PolyForm::coord(n, i)
    }

    #[test]
    fn d_of_x_dy_is_dx_dy() {
        let u = x(2, 0).wedge(&PolyForm::dx(2, &[1]));
        assert_eq!(u.d(), PolyForm::dx(2, &[0, 1]));
        assert!(PolyForm::dx(2, &[0]).d().is_zero());
    }

    #[test]
    fn d_of_top_form_raises_degree() {
        let top = x(2, 0).wedge(&PolyForm::dx(2, &[0, 1]));
        assert_eq!(top.d(), PolyForm::zero(2, 3));
        assert_eq!(PolyForm::constant(0, qi(2)).d(), PolyForm::zero(0, 1));
    }

    #[test]
    fn d_matches_termwise_oracle() {
        // d(x² dy + y dx) = 2x dx∧dy − dx∧dy
        let u = x(2, 0).wedge(&x(2, 0)).wedge(&PolyForm::dx(2, &[1])).add(&x(2, 1).wedge(&PolyForm::dx(2, &[0])));
        let expect = x(2, 0).scale(&qi(2)).add(&PolyForm::constant(2, -Q::one())).wedge(&PolyForm::dx(2, &[0, 1]));
        assert_eq!(u.d(), expect);
    }

    #[test]
    fn wedge_anticommutes() {
        let dx = PolyForm::dx(2, &[0]);
        let dy = PolyForm::dx(2, &[1]);
        assert_eq!(dx.wedge(&dy), dy.wedge(&dx).scale(&-Q::one()));
        let f = x(2, 1).add(&PolyForm::constant(2, qi(3)));
        assert_eq!(f.wedge(&dx), f.wedge(&PolyForm::constant(2, Q::one())).wedge(&dx));
    }

    #[test]
    fn koszul_of_area_form() {
        let k = PolyForm::dx(2, &[0, 1]).koszul();
        let expect = x(2, 0).wedge(&PolyForm::dx(2, &[1])).sub(&x(2, 1).wedge(&PolyForm::dx(2, &[0])));
        assert_eq!(k, expect);
        assert!(k.koszul().is_zero());
    }

    #[test]
    fn homotopy_identity() {
        let u = x(2, 0).wedge(&PolyForm::dx(2, &[1]));
        let lhs = u.d().koszul().add(&u.koszul().d());
        assert_eq!(lhs, u.scale(&qi(2)));
    }

    #[test]
    fn pullbacks() {
        let dy = PolyForm::dx(2, &[1]);
        let xaxis = AffineEmbed { lin: Matrix::from_rows(&[vec![qi(1)], vec![qi(0)]], 1), offset: vec![qi(0), qi(0)] };
        assert!(dy.pullback(&xaxis).is_zero());
        let line = AffineEmbed { lin: Matrix::from_rows(&[vec![qi(1)], vec![qi(2)]], 1), offset: vec![qi(0), qi(0)] };
        let u = x(2, 0).wedge(&dy);
        assert_eq!(u.pullback(&line), x(1, 0).scale(&qi(2)).wedge(&PolyForm::dx(1, &[0])));
        assert_eq!(u.pullback(&AffineEmbed::identity(2)), u);
    }

    #[test]
    fn basis_dimensions() {
        assert_eq!(full_poly_basis(0, 0, 2).len(), 1);
        assert_eq!(full_poly_basis(1, 1, 2).len(), 6);
        assert_eq!(full_poly_basis(2, 1, 3).len(), 30);
        assert_eq!(trimmed_basis(1, 1, 2).len(), 3);
        assert_eq!(trimmed_basis(2, 1, 2).len(), 8);
        for n in 1..=3 {
            assert_eq!(trimmed_basis(1, 0, n).len(), n + 1);
        }
    }

    #[test]
    fn integrals_on_reference_triangle() {
        let area = PolyForm::dx(2, &[0, 1]);
        assert_eq!(area.integrate_shape(&[2]), qf(1, 2));
        // ∫ λ_0 dA = area / 3
        assert_eq!(barycentric(2, 0).wedge(&area).integrate_shape(&[2]), qf(1, 6));
        // unit square as a product of two intervals
        assert_eq!(area.integrate_shape(&[1, 1]), qi(1));
    }

    #[test]
    fn whitney_edge_form_integrals() {
        // edge forms of the reference triangle against each edge
        let edges = [[0usize, 1], [0, 2], [1, 2]];
        for e in edges {
            let w = whitney_form(2, &e);
            for f in edges {
                let emb = AffineEmbed {
                    lin: Matrix::from_cols(&[sub(&vertex(2, f[1]), &vertex(2, f[0]))], 2),
                    offset: vertex(2, f[0]),
                };
                let v = w.pullback(&emb).integrate_shape(&[1]);
                assert_eq!(v, if e == f { qi(1) } else { qi(0) });
            }
        }
        assert_eq!(whitney_form(1, &[1]), x(1, 0));
    }

    fn vertex(m: usize, i: usize) -> Vec<Q> {
        let mut v = vec![qi(0); m];
        if i > 0 {
            v[i - 1] = qi(1);
        }
        v
    }

    fn sub(a: &[Q], b: &[Q]) -> Vec<Q> {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    #[test]
    fn whitney_mass_matrix() {
        let basis: Vec<PolyForm> = (0..3).map(|i| barycentric(2, i)).collect();
        // chart of the triangle (0,0),(2,0),(0,3): area 3
        let j = Matrix::from_rows(&[vec![qi(2), qi(0)], vec![qi(0), qi(3)]], 2);
        let g = j.transpose().mul(&j);
        let vol = qi(6);
        let m = gram_exact(&basis, &[2], &g.inverse().unwrap(), &vol);
        for i in 0..3 {
            for k in 0..3 {
                let e = if i == k { qf(2 * 3, 12) } else { qf(3, 12) };
                assert_eq!(m[(i, k)], e);
            }
        }
        let mw = gram_weighted(&basis, &[2], &g.inverse().unwrap().to_f64(), 6.0, &|_| 1.0);
        for i in 0..3 {
            for k in 0..3 {
                assert!((mw[(i, k)] - crate::linalg::q_to_f64(&m[(i, k)])).abs() < 1e-12);
            }
        }
    }
}
