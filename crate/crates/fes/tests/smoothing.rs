use fes::complex::Complex;
use fes::fixtures;
use fes::linalg::qi;
use fes::mirrors::random_poly_form;
use fes::quadrature::gauss_interval;
use fes::smoothing::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;

/// Γ(n/2).
fn gamma_half(n: usize) -> f64 {
    if n % 2 == 0 {
        (1..n / 2).map(|i| i as f64).product()
    } else {
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x < n as f64 / 2.0 - 0.25 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

/// ∫_{S^{d-1}} ω^α, zero unless every exponent is even.
fn sphere_moment(alpha: &[usize]) -> f64 {
    if alpha.iter().any(|a| a % 2 == 1) {
        return 0.0;
    }
    let num: f64 = alpha.iter().map(|a| gamma_half(a + 1)).product();
    2.0 * num / gamma_half(alpha.iter().map(|a| a + 1).sum())
}

/// ∫_B ψ(y) y^α dy by composite Gauss in the radius.
fn moment_oracle(k: &Kernel, alpha: &[usize]) -> f64 {
    let deg: usize = alpha.iter().sum();
    let mut radial = 0.0;
    for panel in 0..50 {
        let (rs, ws) = gauss_interval(12, panel as f64 / 50.0, (panel + 1) as f64 / 50.0);
        for (r, w) in rs.iter().zip(&ws) {
            radial += w * k.profile(*r) * r.powi((deg + k.d - 1) as i32);
        }
    }
    radial * sphere_moment(alpha)
}

#[test]
fn kernel_moments() {
    for d in 1..=3 {
        for p in 0..=3 {
            let k = make_kernel(p, d).unwrap();
            assert!((k.moment(&vec![0; d]) - 1.0).abs() <= 1e-12, "p={p} d={d}");
            let worst = multi_indices(d, p + d)
                .iter()
                .map(|a| {
                    let target = if a.iter().all(|x| *x == 0) { 1.0 } else { 0.0 };
                    (moment_oracle(&k, a) - target).abs()
                })
                .fold(0.0, f64::max);
            assert!(worst <= 1e-10, "p={p} d={d}: {worst:e}");
            assert!(k.moment_residual() <= 1e-12);
        }
    }
    let k = make_kernel(2, 1).unwrap();
    assert!(moment_oracle(&k, &[2]).abs() <= 1e-10);
    assert!(moment_oracle(&k, &[3]).abs() <= 1e-10);
    // p + d <= 1 gives the plain bump; larger orders go negative
    let plain = make_kernel(0, 1).unwrap();
    assert_eq!(plain.coeffs.len(), 1);
    assert!((0..100).all(|i| plain.profile(i as f64 / 100.0) >= 0.0));
    let signed = make_kernel(3, 2).unwrap();
    assert!((0..100).any(|i| signed.profile(i as f64 / 100.0) < 0.0));
    assert!(matches!(make_kernel(1, 4), Err(SmoothingError::InvalidArgument(_))));
    assert!(signed.profile_csv(10).starts_with("radius,value\n0,"));
}

fn wavy_scale(dim: usize) -> ScaleField {
    ScaleField::new(
        Arc::new(move |x: &[f64]| 1.0 + 0.3 * (3.0 * x[0]).sin() * if dim > 1 { (2.0 * x[1]).cos() } else { 1.0 }),
        Arc::new(move |x: &[f64]| {
            let c = if dim > 1 { (2.0 * x[1]).cos() } else { 1.0 };
            let mut g = vec![0.9 * (3.0 * x[0]).cos() * c];
            if dim > 1 {
                g.push(-0.6 * (3.0 * x[0]).sin() * (2.0 * x[1]).sin());
            }
            g
        }),
    )
}

fn interior_points(dim: usize, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(0.25..0.75)).collect()).collect()
}

fn unit_box(dim: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![0.0; dim], vec![1.0; dim])
}

#[test]
fn polynomial_reproduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for d in 1..=2 {
        let scale = wavy_scale(d);
        for p in 0..=3 {
            let kernel = make_kernel(p, d).unwrap();
            for k in 0..=d {
                let u = random_poly_form(d, k, p, &mut rng);
                let (lo, hi) = unit_box(d);
                let f = SampledForm::from_poly(&u, lo, hi);
                let pts = interior_points(d, 50, &mut rng);
                let ru = regularize_batch(&f, &scale, 0.1, &kernel, &pts).unwrap();
                for (x, r) in pts.iter().zip(&ru) {
                    let exact = f.eval(x);
                    let err = r.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    assert!(err <= 1e-8, "d={d} p={p} k={k}: {err:e}");
                }
            }
        }
    }
}

#[test]
fn trivial_cases() {
    let kernel = make_kernel(2, 2).unwrap();
    let (lo, hi) = unit_box(2);
    let c = SampledForm::new(2, 1, Arc::new(|_: &[f64]| vec![2.5, -1.0]), lo.clone(), hi.clone());
    let r = regularize(&c, &ScaleField::constant(1.0, 2), 0.2, &kernel, &[0.5, 0.5]).unwrap();
    assert!((r[0] - 2.5).abs() <= 1e-10 && (r[1] + 1.0).abs() <= 1e-10);
    let z = SampledForm::new(2, 2, Arc::new(|_: &[f64]| vec![0.0]), lo.clone(), hi.clone());
    assert_eq!(regularize(&z, &wavy_scale(2), 0.1, &kernel, &[0.4, 0.6]).unwrap(), vec![0.0]);
    // the ball must stay inside the box
    assert!(matches!(regularize(&c, &ScaleField::constant(1.0, 2), 0.2, &kernel, &[0.1, 0.5]), Err(SmoothingError::DomainExceeded(_))));
}

fn sinusoid() -> SampledForm {
    // u = sin(2πx) cos(πy) dx + x e^{y} dy
    let coeffs = Arc::new(|x: &[f64]| vec![(2.0 * PI * x[0]).sin() * (PI * x[1]).cos(), x[0] * x[1].exp()]);
    let d = Arc::new(|x: &[f64]| vec![x[1].exp() + PI * (2.0 * PI * x[0]).sin() * (PI * x[1]).sin()]);
    let (lo, hi) = unit_box(2);
    SampledForm::new(2, 1, coeffs, lo, hi).with_d(d)
}

#[test]
fn commutation_with_d() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts = interior_points(2, 20, &mut rng);
    let kernel = make_kernel(2, 2).unwrap();
    let rep = commutation_residual(&sinusoid(), &ScaleField::constant(1.0, 2), 0.05, &kernel, &pts, 1e-4).unwrap();
    assert!(rep.max_residual <= 1e-5, "{}", rep.max_residual);
    // polynomial forms with a varying scale
    for k in 0..2 {
        let u = random_poly_form(2, k, 2, &mut rng);
        let (lo, hi) = unit_box(2);
        let f = SampledForm::from_poly(&u, lo, hi);
        let rep = commutation_residual(&f, &wavy_scale(2), 0.1, &kernel, &pts, 1e-4).unwrap();
        assert!(rep.max_residual <= 1e-6, "k={k}: {}", rep.max_residual);
    }
    // constants: both sides vanish
    let (lo, hi) = unit_box(2);
    let c = SampledForm::new(2, 0, Arc::new(|_: &[f64]| vec![3.0]), lo, hi).with_d(Arc::new(|_: &[f64]| vec![0.0, 0.0]));
    let rep = commutation_residual(&c, &ScaleField::constant(1.0, 2), 0.05, &kernel, &pts, 1e-4).unwrap();
    assert!(rep.max_residual <= 1e-10);
}

#[test]
fn locality() {
    let kernel = make_kernel(1, 2).unwrap();
    let scale = wavy_scale(2);
    let eps = 0.1;
    let x = [0.45, 0.55];
    let radius = eps * (scale.phi)(&x);
    let u = sinusoid();
    let base = u.coeffs.clone();
    let perturbed = SampledForm::new(
        2,
        1,
        Arc::new(move |z: &[f64]| {
            let mut v = base(z);
            let dist = ((z[0] - x[0]).powi(2) + (z[1] - x[1]).powi(2)).sqrt();
            if dist > radius {
                v[0] += 7.0 * (dist - radius);
                v[1] -= 1.0;
            }
            v
        }),
        vec![0.0; 2],
        vec![1.0; 2],
    );
    assert_eq!(regularize(&u, &scale, eps, &kernel, &x).unwrap(), regularize(&perturbed, &scale, eps, &kernel, &x).unwrap());
    // the same perturbation inside the ball is seen
    let inner = SampledForm::new(2, 1, Arc::new(|z: &[f64]| vec![z[0], 0.0]), vec![0.0; 2], vec![1.0; 2]);
    assert_ne!(regularize(&inner, &scale, eps, &kernel, &x).unwrap(), regularize(&u, &scale, eps, &kernel, &x).unwrap());
}

#[test]
fn affine_covariance() {
    // σ(x) = A x + b; R[Φ] = (σ*)⁻¹ R[σ⁻¹∘Φ∘σ] σ*
    let a = [[1.5, 0.4], [-0.3, 0.8]];
    let b = [0.1, -0.2];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let ainv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let sigma = move |x: &[f64]| vec![a[0][0] * x[0] + a[0][1] * x[1] + b[0], a[1][0] * x[0] + a[1][1] * x[1] + b[1]];
    let jac_a: Vec<Vec<f64>> = a.iter().map(|r| r.to_vec()).collect();
    let kernel = make_kernel(2, 2).unwrap();
    let scale = wavy_scale(2);
    let eps = 0.05;
    let u = sinusoid();
    for k in [0usize, 1, 2] {
        let u = match k {
            0 => SampledForm::new(2, 0, Arc::new(|x: &[f64]| vec![(3.0 * x[0]).sin() + x[1] * x[1]]), vec![-5.0; 2], vec![5.0; 2]),
            1 => SampledForm { lo: vec![-5.0; 2], hi: vec![5.0; 2], ..u.clone() },
            _ => SampledForm::new(2, 2, Arc::new(|x: &[f64]| vec![x[0] * (x[1]).cos()]), vec![-5.0; 2], vec![5.0; 2]),
        };
        // σ*u
        let (uc, s, ja) = (u.coeffs.clone(), sigma, jac_a.clone());
        let pulled = SampledForm::new(2, k, Arc::new(move |x: &[f64]| pullback_covector(&uc(&s(x)), &ja, 2, k)), vec![-5.0; 2], vec![5.0; 2]);
        let phi = scale.phi.clone();
        let grad = scale.grad.clone();
        // σ⁻¹∘Φ_y∘σ: x ↦ x + ε φ(σx) A⁻¹ y
        let conj = move |x: &[f64], y: &[f64]| {
            let sx = sigma(x);
            let f = phi(&sx);
            let g = grad(&sx);
            let ay = [ainv[0][0] * y[0] + ainv[0][1] * y[1], ainv[1][0] * y[0] + ainv[1][1] * y[1]];
            // ∇(φ∘σ) = Aᵀ ∇φ
            let gs = [a[0][0] * g[0] + a[1][0] * g[1], a[0][1] * g[0] + a[1][1] * g[1]];
            let pt = vec![x[0] + eps * f * ay[0], x[1] + eps * f * ay[1]];
            let jac = (0..2).map(|i| (0..2).map(|j| if i == j { 1.0 } else { 0.0 } + eps * ay[i] * gs[j]).collect()).collect();
            (pt, jac)
        };
        for xp in [[0.2, 0.3], [-0.4, 0.5], [0.7, -0.1]] {
            let lhs = regularize_family(&pulled, &conj, &kernel, &xp);
            let ru = regularize(&u, &scale, eps, &kernel, &sigma(&xp)).unwrap();
            let rhs = pullback_covector(&ru, &jac_a, 2, k);
            for (l, r) in lhs.iter().zip(&rhs) {
                assert!((l - r).abs() <= 1e-12 * (1.0 + r.abs()), "k={k}: {l} vs {r}");
            }
        }
    }
}

#[test]
fn scale_fields() {
    let uniform = fixtures::complex("square_h8");
    let field = mesh_scale_field(&uniform).unwrap();
    let h = uniform.diameter((2, 0));
    for x in [[0.1, 0.2], [0.5, 0.5], [0.93, 0.41]] {
        assert!(((field.phi)(&x) - h).abs() <= 1e-12);
        assert!((field.grad)(&x).iter().all(|g| g.abs() <= 1e-9));
    }
    let (c1, c2) = field.bounds.unwrap();
    assert!((c1 - 1.0).abs() <= 1e-12 && (c2 - 1.0).abs() <= 1e-12);

    // graded interval mesh, neighbors differ by a factor two
    let verts: Vec<Vec<_>> = [0, 1, 3, 7, 15].iter().map(|v| vec![qi(*v)]).collect();
    let graded = Complex::build_simplicial(verts, 1, &[vec![0, 1], vec![1, 2], vec![2, 3], vec![3, 4]]).unwrap();
    let field = mesh_scale_field(&graded).unwrap();
    let (c1, c2) = field.bounds.unwrap();
    assert!(c1 >= 0.5 && c2 <= 2.0, "{c1} {c2}");
    // the gradient matches central differences
    for x in [0.8, 2.2, 5.5, 9.0] {
        let fd = ((field.phi)(&[x + 1e-6]) - (field.phi)(&[x - 1e-6])) / 2e-6;
        assert!((fd - (field.grad)(&[x])[0]).abs() <= 1e-5 * (1.0 + fd.abs()), "{x}: {fd}");
    }
    for name in ["square8", "annulus", "triangle", "interval3"] {
        let c = fixtures::complex(name);
        let (c1, c2) = mesh_scale_field(&c).unwrap().bounds.unwrap();
        assert!(c1.is_finite() && c1 > 0.0 && c2.is_finite() && c2 >= c1, "{name}");
    }
}

#[test]
fn neighborhoods() {
    let c = fixtures::complex("square8");
    let field = mesh_scale_field(&c).unwrap();
    assert!(neighborhood_check(&c, &field, 0.05).unwrap().iter().all(|v| v.contained));
    assert!(neighborhood_check(&c, &field, 2.0).unwrap().iter().any(|v| !v.contained));
    assert!((distance_to_simplex(&[2.0, 0.0], &[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]) - 1.0).abs() < 1e-15);
    assert!((distance_to_simplex(&[1.0, 1.0], &[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]) - 0.5f64.sqrt()).abs() < 1e-15);
    assert_eq!(distance_to_simplex(&[0.2, 0.2], &[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn regularization_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, x0 in 0.3f64..0.7, x1 in 0.3f64..0.7) {
        let kernel = make_kernel(1, 2).unwrap();
        let scale = wavy_scale(2);
        let u = sinusoid();
        let v = SampledForm::new(2, 1, Arc::new(|x: &[f64]| vec![x[1] * x[1], (x[0] * 5.0).cos()]), vec![0.0; 2], vec![1.0; 2]);
        let (uc, vc) = (u.coeffs.clone(), v.coeffs.clone());
        let w = SampledForm::new(2, 1, Arc::new(move |x: &[f64]| uc(x).iter().zip(vc(x)).map(|(p, q)| a * p + b * q).collect()), vec![0.0; 2], vec![1.0; 2]);
        let x = [x0, x1];
        let (ru, rv, rw) = (
            regularize(&u, &scale, 0.1, &kernel, &x).unwrap(),
            regularize(&v, &scale, 0.1, &kernel, &x).unwrap(),
            regularize(&w, &scale, 0.1, &kernel, &x).unwrap(),
        );
        for i in 0..2 {
            prop_assert!((rw[i] - a * ru[i] - b * rv[i]).abs() <= 1e-12 * (1.0 + rw[i].abs()));
        }
    }
}
