//! Gauss rules on intervals, reference simplices and products of simplices.

use itertools::Itertools;
use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`
/// (Golub-Welsch). Nodes are returned in increasing order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let k = i as f64;
        let b = k / (4.0 * k * k - 1.0).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], 2.0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // symmetrize to remove eigen-solver asymmetry
    let mut x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut w: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..n / 2 {
        let xm = 0.5 * (x[n - 1 - i] - x[i]);
        let wm = 0.5 * (w[i] + w[n - 1 - i]);
        x[i] = -xm;
        x[n - 1 - i] = xm;
        w[i] = wm;
        w[n - 1 - i] = wm;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    (x.iter().map(|t| a + h * (t + 1.0)).collect(), w.iter().map(|v| v * h).collect())
}

/// Quadrature rule: points in chart coordinates and weights.
#[derive(Clone, Debug)]
pub struct Rule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Collapsed-coordinate rule on the reference simplex
/// `{t_i >= 0, sum t_i <= 1}` exact for polynomials of degree `degree`.
pub fn simplex_rule(dim: usize, degree: usize) -> Rule {
    if dim == 0 {
        return Rule { points: vec![vec![]], weights: vec![1.0] };
    }
    let n = (degree + dim).div_ceil(2).max(1);
    let (x, w) = gauss_interval(n, 0.0, 1.0);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for idx in itertools::repeat_n(0..n, dim).multi_cartesian_product() {
        // t_i = u_i * prod_{j<i} (1 - u_j), Jacobian prod_i prod_{j<i} (1 - u_j)
        let mut t = Vec::with_capacity(dim);
        let mut rest = 1.0;
        let mut wt = 1.0;
        for &i in &idx {
            t.push(rest * x[i]);
            wt *= w[i] * rest;
            rest *= 1.0 - x[i];
        }
        points.push(t);
        weights.push(wt);
    }
    Rule { points, weights }
}

/// Rule on a product of reference simplices of the given dimensions,
/// coordinates concatenated.
pub fn shape_rule(shape: &[usize], degree: usize) -> Rule {
    let mut rule = Rule { points: vec![vec![]], weights: vec![1.0] };
    for &m in shape {
        let f = simplex_rule(m, degree);
        let mut points = Vec::with_capacity(rule.points.len() * f.points.len());
        let mut weights = Vec::with_capacity(points.capacity());
        for (p, wp) in rule.points.iter().zip(&rule.weights) {
            for (q, wq) in f.points.iter().zip(&f.weights) {
                let mut c = p.clone();
                c.extend_from_slice(q);
                points.push(c);
                weights.push(wp * wq);
            }
        }
        rule = Rule { points, weights };
    }
    rule
}
