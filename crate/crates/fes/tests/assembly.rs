use fes::assembly::*;
use fes::complex::Complex;
use fes::fesystem::*;
use fes::fixtures;
use fes::harmonic::{l2_products, Harmonic};
use fes::linalg::{qf, qi, Matrix, Q};
use fes::mirrors::*;
use fes::polyforms::PolyForm;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

fn fixture(name: &str) -> Arc<Complex> {
    Arc::new(fixtures::complex(name))
}

#[test]
fn whitney_mass_on_one_triangle() {
    let sys = trimmed_constant(fixture("triangle"), 1).unwrap();
    let g = sys.global_space_all(0);
    let m = mass_matrix(&sys, &g);
    // ∫λ_iλ_j = area (1 + δ_ij) / 12 with area 1/2
    let oracle = Matrix::from_rows(
        &(0..3).map(|i| (0..3).map(|j| qf(if i == j { 2 } else { 1 }, 24)).collect()).collect::<Vec<_>>(),
        3,
    );
    assert_eq!(m, oracle);
}

#[test]
fn derivative_matrices() {
    for name in ["triangle", "square8", "annulus"] {
        let sys = trimmed_constant(fixture(name), 1).unwrap();
        let c = sys.complex();
        let p0 = assemble(&sys, 0).unwrap();
        let p1 = assemble(&sys, 1).unwrap();
        // ρ_1 D_0 = δ_0 ρ_0 with ρ_0 = I for vertex values
        let (g0, g1) = (sys.global_space_all(0), sys.global_space_all(1));
        let rho0 = sys.de_rham(&g0);
        assert_eq!(rho0, Matrix::identity(g0.dim()));
        assert_eq!(sys.de_rham(&g1).mul(&p0.d_exact), c.coboundary_matrix(0).mul(&rho0));
        assert!(p1.d_exact.mul(&p0.d_exact).is_zero());
        assert!(p1.d.mul(&p0.d).max_abs() <= 1e-12 * p0.d.max_abs().max(1.0));
        // symmetric mass, stiffness annihilating constants
        assert!(p0.mass.sub(&p0.mass.transpose()).max_abs() < 1e-15);
        let ones = vec![1.0; g0.dim()];
        assert!(p0.stiffness.mul_vec(&ones).iter().all(|x| x.abs() < 1e-12));
    }
    let sys = trimmed_constant(fixture("square2"), 2).unwrap();
    let (p0, p1) = (assemble(&sys, 0).unwrap(), assemble(&sys, 1).unwrap());
    assert!(p1.d_exact.mul(&p0.d_exact).is_zero());
}

fn neumann_errors(name: &str) -> Vec<f64> {
    let sys = trimmed_constant(fixture(name), 1).unwrap();
    let s = hodge_eigenvalues(&sys, 0, 3).unwrap();
    assert_eq!(s.zero_modes, 1, "{name}");
    let exact = [PI * PI, PI * PI, 2.0 * PI * PI];
    s.eigenvalues.iter().zip(exact).map(|(l, e)| (l - e).abs() / e).collect()
}

#[test]
fn neumann_eigenvalues_converge() {
    let e4 = neumann_errors("square_h4");
    let e8 = neumann_errors("square_h8");
    let e16 = neumann_errors("square_h16");
    assert!(e8.iter().all(|e| *e <= 0.10), "{e8:?}");
    for (a, b) in [(&e4, &e8), (&e8, &e16)] {
        for i in 0..3 {
            let order = (a[i] / b[i]).log2();
            assert!(order >= 1.7, "order {order} at mode {i}");
        }
    }
}

#[test]
fn annulus_one_forms() {
    let sys = trimmed_constant(fixture("annulus"), 1).unwrap();
    let s = hodge_eigenvalues(&sys, 1, 4).unwrap();
    assert_eq!(s.betti, 1);
    assert_eq!(s.zero_modes, 1 + s.exact_dim);
    assert_eq!(s.harmonic, 1);
    assert!(s.eigenvalues.iter().all(|x| *x > 0.0));
}

#[test]
fn hodge_zero_modes_match_betti_numbers() {
    for (name, p) in [("annulus", 1), ("square8", 1), ("tet_boundary", 1), ("square2", 2)] {
        let sys = trimmed_constant(fixture(name), p).unwrap();
        let betti = sys.complex().betti_numbers();
        for (k, b) in betti.iter().enumerate() {
            assert_eq!(hodge_laplacian_zero_modes(&sys, k).unwrap(), *b, "{name} k={k}");
        }
    }
}

fn random_invertible(n: usize, rng: &mut impl Rng) -> Matrix<Q> {
    // permutation · diagonal · sparse unit lower triangular, well conditioned
    let mut l = Matrix::identity(n);
    for r in 0..n {
        for c in 0..r {
            if rng.gen_bool(0.15) {
                l[(r, c)] = qf(rng.gen_range(-1..=1), 2);
            }
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let mut pd = Matrix::zeros(n, n);
    for (r, &c) in perm.iter().enumerate() {
        pd[(r, c)] = qf(rng.gen_range(1..=3), 2);
    }
    pd.mul(&l)
}

#[test]
fn eigenvalues_are_basis_independent() {
    let sys = trimmed_constant(fixture("square8"), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..2 {
        let pair = assemble(&sys, k).unwrap();
        let t = random_invertible(pair.mass.nrows(), &mut rng);
        let tn = random_invertible(pair.mass_next.nrows(), &mut rng);
        let moved = pair.change_basis(&t, &tn);
        let a = generalized_eigenvalues(&pair.stiffness, &pair.mass).unwrap();
        let b = generalized_eigenvalues(&moved.stiffness, &moved.mass).unwrap();
        let top = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * top, "{x} vs {y}");
        }
    }
}

#[test]
fn incompatible_systems_are_rejected() {
    let c = fixture("triangle");
    let orders: Vec<Vec<Vec<i64>>> = vec![vec![vec![2]; 3], vec![vec![2, 1]; 3], vec![vec![1, 0, 0]]];
    let sys = polynomial_system(c, &orders).unwrap();
    assert!(matches!(assemble(&sys, 0), Err(AssemblyError::NotCompatible(ref s)) if s == "0-1-2"));
    assert!(hodge_eigenvalues(&sys, 0, 3).is_err());
}

#[test]
fn eigenvalue_count_is_clamped() {
    let sys = trimmed_constant(fixture("triangle"), 1).unwrap();
    let s = hodge_eigenvalues(&sys, 0, 10).unwrap();
    assert!(s.clamped);
    assert_eq!(s.eigenvalues.len(), 2);
    let csv = spectrum_csv(&s);
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn canonical_interpolators_close_the_diagram() {
    for (name, p) in [("triangle", 2), ("square2", 1), ("annulus", 1)] {
        let c = fixture(name);
        let sys = Arc::new(trimmed_constant(c.clone(), p).unwrap());
        let ip = Interpolator::new(Arc::new(canonical_trimmed_mirrors(c, p).unwrap()), sys).unwrap();
        let rep = commuting_diagram_report(&ip, 2, p + 1, 8);
        assert!(rep.passes(), "{name}: {:?}", rep.failures);
    }
}

/// Interpolator whose degree-`k` coefficient at one position has its sign flipped.
struct Corrupted {
    ip: Interpolator,
    k: usize,
    pos: usize,
}

impl FormInterpolator for Corrupted {
    fn system(&self) -> &ElementSystem {
        &self.ip.sys
    }

    fn apply(&self, k: usize, u: &PolyForm) -> std::result::Result<Vec<Q>, MirrorError> {
        let mut v = self.ip.interpolate(k, u)?;
        if k == self.k {
            v[self.pos] = -v[self.pos].clone();
        }
        Ok(v)
    }
}

#[test]
fn sign_flip_is_located() {
    let c = fixture("triangle");
    let sys = Arc::new(trimmed_constant(c.clone(), 1).unwrap());
    let ip = Interpolator::new(Arc::new(canonical_trimmed_mirrors(c.clone(), 1).unwrap()), sys.clone()).unwrap();
    let edge = (1, 2);
    let pos = sys.global_space_all(1).offsets[&edge].0;
    let bad = Corrupted { ip, k: 1, pos };
    let rep = commuting_diagram_report(&bad, 3, 2, 1);
    assert!(!rep.commutes && !rep.passes());
    let id = &c.cell(edge).id;
    assert!(rep.failures.iter().any(|f| f.contains("dI != Id") && f.ends_with(id.as_str())), "{:?}", rep.failures);
    assert!(rep.failures.iter().all(|f| f.ends_with(id.as_str())), "{:?}", rep.failures);
}

#[test]
fn ep_interpolator_preserves_integrals() {
    let c = fixture("triangle");
    let sys = Arc::new(trimmed_constant(c.clone(), 2).unwrap());
    let h = Harmonic::new(sys.clone(), l2_products(&sys));
    let ms = Arc::new(harmonic_mirrors(&sys, 3).unwrap());
    let ip = Interpolator::new(ms, sys).unwrap();
    let ep = EpInterpolator::new(h, Projection::Mirror(ip), Host::new(3, 2)).unwrap();
    let rep = commuting_diagram_report(&ep, 2, 3, 2);
    assert!(rep.integrals_preserved, "{:?}", rep.failures);
    assert!(rep.passes());
}

#[test]
fn triplet_export() {
    let sys = trimmed_constant(fixture("triangle"), 1).unwrap();
    let pair = assemble(&sys, 0).unwrap();
    let text = triplets(&pair.mass);
    assert_eq!(text.lines().count(), 9);
    assert!(text.starts_with("0 0 0.0833333333333\n"));
    assert_eq!(matrix_header(&pair.mass, "mass", 0)["nnz"], 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mass_is_positive_on_random_vectors(seed in 0u64..1000, k in 0usize..3) {
        let sys = trimmed_constant(fixture("square2"), 2).unwrap();
        let pair = assemble_unchecked(&sys, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..pair.mass.nrows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mv = pair.mass.mul_vec(&v);
        let e: f64 = v.iter().zip(&mv).map(|(a, b)| a * b).sum();
        prop_assert!(e > 0.0);
        // stiffness energy equals the mass energy of the derivative
        let dv = pair.d.mul_vec(&v);
        let kv = pair.stiffness.mul_vec(&v);
        let lhs: f64 = v.iter().zip(&kv).map(|(a, b)| a * b).sum();
        let rhs: f64 = dv.iter().zip(&pair.mass_next.mul_vec(&dv)).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn zero_data_interpolates_to_zero(k in 0usize..3) {
        let c = fixture("square2");
        let sys = Arc::new(trimmed_constant(c.clone(), 1).unwrap());
        let ip = Interpolator::new(Arc::new(canonical_trimmed_mirrors(c, 1).unwrap()), sys).unwrap();
        let z = FormInterpolator::apply(&ip, k, &PolyForm::zero(2, k)).unwrap();
        prop_assert!(z.iter().all(|x| *x == qi(0)));
    }
}
