use fes::complex::Complex;
use fes::fesystem::*;
use fes::fixtures;
use fes::harmonic::*;
use fes::linalg::{qi, Matrix, Q};
use fes::polyforms::{barycentric, whitney_form, PolyForm};
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn fixture(name: &str) -> Arc<Complex> {
    Arc::new(fixtures::complex(name))
}

fn l2(sys: ElementSystem) -> Harmonic<Q> {
    let p = l2_products(&sys);
    Harmonic::new(Arc::new(sys), p)
}

/// Stacked facet data of a random global element, in `R_T` row order.
fn random_boundary(sys: &ElementSystem, t: (usize, usize), k: usize, seed: u64) -> Vec<Q> {
    let g = sys.global_space_all(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<Q> = (0..g.dim()).map(|_| qi(rng.gen_range(-5..=5))).collect();
    let fam = g.family(&coeffs);
    let mut b = Vec::new();
    for &(f, _) in &sys.complex().cell(t).faces {
        b.extend_from_slice(g.slice(&fam, (t.0 - 1, f)));
    }
    b
}

#[test]
fn constants_are_harmonic() {
    let c = fixture("square_agglomerated");
    let h = l2(trimmed_constant(c.clone(), 2).unwrap());
    for t in c.all_cells() {
        let u = constant_cell_form(&c, t, qi(3));
        assert!(h.check_form(t, 0, &u).unwrap());
    }
    let cubic: Vec<PolyForm> = c.cell((2, 0)).pieces.iter().map(|p| {
        let x = PolyForm::coord(p.dim(), 0);
        x.wedge(&x).wedge(&x)
    }).collect();
    assert!(matches!(h.check_form((2, 0), 0, &cubic), Err(HarmonicError::NotInParentSpace(_))));
}

#[test]
fn whitney_forms_harmonic_for_random_metrics() {
    for name in ["triangle", "tetrahedron", "square8"] {
        let s = Arc::new(trimmed_constant(fixture(name), 1).unwrap());
        assert!(whitney_is_harmonic(&s, l2_products(&s)), "{name}");
        for seed in 0..5 {
            let p = random_metric_products(&s, seed);
            assert!(p.all_full_rank());
            assert!(whitney_is_harmonic(&s, p), "{name} seed {seed}");
        }
    }
    // explicit Whitney 1-forms on the triangle
    let c = fixture("triangle");
    let h = l2(trimmed_constant(c.clone(), 1).unwrap());
    for e in [[0, 1], [0, 2], [1, 2]] {
        assert!(h.check_form((2, 0), 1, &vec![whitney_form(2, &e)]).unwrap());
    }
}

#[test]
fn edge_bubble_is_not_locally_harmonic() {
    let c = fixture("triangle");
    let h = l2(trimmed_constant(c.clone(), 2).unwrap());
    let bubble = vec![barycentric(2, 0).wedge(&barycentric(2, 1))];
    // no interior 0-forms at this order: the condition on the face is empty
    assert!(h.check_form((2, 0), 0, &bubble).unwrap());
    let e = c.find("0-1").unwrap();
    let trace = c.trace((2, 0), e, &bubble);
    assert!(!h.check_form(e, 0, &trace).unwrap());
    let sub = h.subsystem().unwrap();
    assert_eq!(sub.dim_of((2, 0), 0), 3);
    assert_eq!(sub.dim_of(e, 0), 2);
}

#[test]
fn extension_basics() {
    let c = fixture("square_agglomerated");
    let s = trimmed_constant(c.clone(), 1).unwrap();
    let h = l2(s.clone());
    let t = (2, 0);
    for k in 0..2 {
        let n = s.boundary_matrix(t, k).nrows();
        let u = h.extend(t, k, &vec![Q::zero(); n]).unwrap();
        assert!(u.iter().all(Zero::is_zero));
    }
    // constant boundary data extends to the constant
    let one = s.space(t, 0).unwrap().coords(&constant_cell_form(&c, t, Q::one())).unwrap();
    let ones = s.boundary_matrix(t, 0).mul_vec(&one);
    let u = h.extend(t, 0, &ones).unwrap();
    let form = s.form(t, 0, &u);
    assert_eq!(form, constant_cell_form(&c, t, Q::one()));
    for seed in 0..4 {
        for k in 0..2 {
            let b = random_boundary(&s, t, k, seed);
            let u = h.extend(t, k, &b).unwrap();
            assert_eq!(s.boundary_matrix(t, k).mul_vec(&u), b);
            assert!(h.constraints(t, k).mul_vec(&u).iter().all(Zero::is_zero));
        }
    }
    let mut bad = ones;
    bad[0] += qi(1);
    assert!(matches!(h.extend(t, 0, &bad), Err(HarmonicError::NotExtendable(_))));
}

#[test]
fn extension_needs_exactness() {
    let c = fixture("triangle");
    let whitney = trimmed_constant(c.clone(), 1).unwrap();
    let mut spaces: Vec<Vec<Vec<Vec<Vec<PolyForm>>>>> = (0..=2)
        .map(|j| (0..c.num_cells(j)).map(|i| (0..=j).map(|k| whitney.space((j, i), k).unwrap().basis.clone()).collect()).collect())
        .collect();
    // a second interior 2-form with no 1-form to reach it
    spaces[2][0][2].push(vec![PolyForm::dx(2, &[0, 1]).wedge(&PolyForm::coord(2, 0))]);
    let broken = ElementSystem::from_spaces_unchecked(c, spaces).unwrap();
    let h = l2(broken);
    assert!(matches!(h.extend((2, 0), 0, &vec![qi(1); 6]), Err(HarmonicError::SequenceInexact(_))));
    assert!(matches!(h.subsystem(), Err(HarmonicError::ParentNotCompatible(_))));
}

#[test]
fn top_forms() {
    let c = fixture("triangle");
    let s = trimmed_constant(c.clone(), 1).unwrap();
    let h = l2(s.clone());
    assert!(h.top_form((2, 0), Q::zero()).unwrap().iter().all(Zero::is_zero));
    let alpha = Q::new(7.into(), 3.into());
    let u = h.top_form((2, 0), alpha.clone()).unwrap();
    let form = s.form((2, 0), 2, &u);
    // reference triangle has area 1/2
    assert_eq!(form[0], PolyForm::dx(2, &[0, 1]).scale(&(alpha.clone() * qi(2))));
    assert_eq!(c.integrate((2, 0), &form), alpha);

    let q = fixture("square_agglomerated");
    let s = trimmed_constant(q.clone(), 2).unwrap();
    let h = l2(s.clone());
    let u = h.top_form((2, 0), Q::one()).unwrap();
    assert_eq!(s.cell_integrals((2, 0)).iter().zip(&u).map(|(a, b)| a * b).sum::<Q>(), Q::one());
    assert!(h.constraints((2, 0), 2).mul_vec(&u).iter().all(Zero::is_zero));
}

fn check_subsystem(h: &Harmonic<Q>, expect_counts: bool) -> ElementSystem {
    let sub = h.subsystem().unwrap();
    let sys = sub.to_system().unwrap();
    assert!(sys.compatibility().compatible);
    let c = sys.complex().clone();
    for k in 0..=c.dim() {
        let g = sys.global_space_all(k);
        let rho = sys.de_rham(&g);
        if expect_counts {
            assert_eq!(g.dim(), c.num_cells(k));
        }
        assert_eq!(rho.nrows(), rho.ncols());
        assert_eq!(rho.rank(), rho.nrows());
    }
    sys
}

#[test]
fn subsystem_of_whitney_is_whitney() {
    for name in ["square8", "tetrahedron", "annulus"] {
        let h = l2(trimmed_constant(fixture(name), 1).unwrap());
        assert!(h.subsystem().unwrap().is_whole_parent(), "{name}");
        check_subsystem(&h, true);
    }
}

#[test]
fn subsystem_on_agglomerated_square() {
    let c = fixture("square_agglomerated");
    let h = l2(trimmed_constant(c.clone(), 2).unwrap());
    let sys = check_subsystem(&h, true);
    assert_eq!(sys.dim_of((2, 0), 1), 4);
    assert_eq!(sys.dim_of((2, 0), 2), 1);
}

#[test]
fn dual_mesh_pipeline() {
    for name in ["square2", "square8"] {
        let dual = Arc::new(fixture(name).dual_complex().unwrap());
        let h = l2(trimmed_constant(dual.clone(), 1).unwrap());
        let sub = h.subsystem().unwrap();
        let sys = Arc::new(sub.verified_system().unwrap());
        check_subsystem(&h, true);
        let hs = Harmonic::new(sys.clone(), l2_products(&sys));
        for k in 0..=2 {
            let b = hs.canonical_basis(k).unwrap();
            assert_eq!(b.families.len(), dual.num_cells(k));
            assert!(b.rho_is_identity(0.0), "{name} k={k}");
            for fam in &b.families {
                assert!(b.space.coords_of(fam).is_some());
            }
        }
    }
    let dual = fixture("square2").dual_complex().unwrap();
    assert_eq!(dual.counts(), vec![6, 9, 4]);
}

#[test]
fn canonical_basis_recovers_whitney() {
    let c = fixture("square8");
    let s = Arc::new(trimmed_constant(c.clone(), 1).unwrap());
    let h = Harmonic::new(s.clone(), l2_products(&s));
    let mesh = c.mesh().unwrap();
    for k in 0..=2 {
        let b = h.canonical_basis(k).unwrap();
        assert!(b.rho_is_identity(0.0));
        for (e, fam) in b.families.iter().enumerate() {
            let ev = &mesh.simplices[k][e];
            for (&t, &(off, n)) in &b.space.offsets {
                let tv = &mesh.simplices[t.0][t.1];
                let expect = match ev.iter().map(|v| tv.iter().position(|w| w == v)).collect::<Option<Vec<_>>>() {
                    Some(pos) => s.space(t, k).unwrap().coords(&vec![whitney_form(t.0, &pos)]).unwrap(),
                    None => vec![Q::zero(); n],
                };
                assert_eq!(&fam[off..off + n], &expect[..], "k={k} cell {e} on {t:?}");
            }
        }
    }
}

#[test]
fn upwinded_products_behave() {
    let c = fixture("square_agglomerated");
    let s = trimmed_constant(c.clone(), 2).unwrap();
    let exact = l2_products(&s);
    let zero = upwinded_products(&s, &[0.0, 0.0], 1.0);
    for t in c.all_cells() {
        for k in 0..=t.0 {
            let a = exact.get(t, k).to_f64();
            let b = zero.get(t, k);
            assert!(a.sub(b).max_abs() <= 1e-12 * a.max_abs().max(1.0));
        }
    }
    let alpha = [12.0, -7.0];
    let up = upwinded_products(&s, &alpha, 1.0);
    let down = upwinded_products(&s, &alpha, -1.0);
    assert!(up.all_full_rank() && down.all_full_rank());
    let s = Arc::new(s);
    let hu = Harmonic::new(s.clone(), up).subsystem().unwrap();
    let hd = Harmonic::new(s.clone(), down).subsystem().unwrap();
    let a = &hu.spaces[2][0][1];
    let b = &hd.spaces[2][0][1];
    assert_eq!(a.ncols(), b.ncols());
    assert!(spans_differ(a, b));
    // symmetry: each weighted Gram matrix is symmetric
    for g in hu_products(&s, &alpha) {
        assert!(g.sub(&g.transpose()).max_abs() <= 1e-12 * g.max_abs());
    }
}

fn hu_products(s: &ElementSystem, alpha: &[f64]) -> Vec<Matrix<f64>> {
    upwinded_products(s, alpha, 1.0).gram.into_iter().flatten().flatten().filter(|g| g.nrows() > 0).collect()
}

#[test]
fn exponential_solutions_satisfy_weighted_equations() {
    let c = fixture("square_agglomerated");
    let s = trimmed_constant(c.clone(), 3).unwrap();
    let alpha = [2.5, -1.5];
    assert!(exponential_residual(&s, (2, 0), 0, &alpha, &[1.0]) <= 1e-8);
    assert!(exponential_residual(&s, (2, 0), 1, &alpha, &[0.3, -2.0]) <= 1e-8);
    let t = fixture("triangle");
    let s = trimmed_constant(t, 3).unwrap();
    assert!(exponential_residual(&s, (2, 0), 1, &alpha, &[1.0, 1.0]) <= 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn extension_is_a_left_inverse_of_the_trace(seed in 0u64..1000, k in 0usize..2) {
        let c = fixture("square_agglomerated");
        let s = trimmed_constant(c, 2).unwrap();
        let h = l2(s.clone());
        let b = random_boundary(&s, (2, 0), k, seed);
        let u = h.extend((2, 0), k, &b).unwrap();
        prop_assert_eq!(s.boundary_matrix((2, 0), k).mul_vec(&u), b);
    }

    #[test]
    fn random_metric_subsystems_stay_compatible(seed in 0u64..1000) {
        let c = fixture("square_agglomerated");
        let s = Arc::new(trimmed_constant(c, 2).unwrap());
        let h = Harmonic::new(s.clone(), random_metric_products(&s, seed));
        let sys = h.subsystem().unwrap().to_system().unwrap();
        prop_assert!(sys.compatibility().compatible);
        for k in 0..=2 {
            let g = sys.global_space_all(k);
            let rho = sys.de_rham(&g);
            prop_assert_eq!(rho.rank(), rho.nrows());
            prop_assert_eq!(rho.nrows(), rho.ncols());
        }
    }
}
