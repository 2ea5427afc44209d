use crate::{Command, MirrorKind, OrderArgs};
use fes::assembly::{commuting_diagram_report, hodge_eigenvalues, spectrum_csv, AssemblyError};
use fes::complex::{Complex, MeshFile, OrderSpec};
use fes::fesystem::{constant_orders, is_monotone, orders_from_spec, trimmed_system_relaxed, CellOrders, ElementSystem, FesError, GlobalSpace};
use fes::harmonic::{exponential_residual, l2_products, spans_differ, upwinded_products, Harmonic};
use fes::linalg::{format_q, round_sig, Q};
use fes::mirrors::{
    canonical_trimmed_mirrors, commutation_check, faithfulness_check, harmonic_mirrors, l2_mirrors, random_poly_form, Interpolator,
    MirrorError, MirrorSystem,
};
use fes::smoothing::{
    commutation_residual, make_kernel, mesh_scale_field, neighborhood_check, regularize, regularize_batch, sinusoidal_fixture, SampledForm,
    ScaleField,
};
use fes::tensorfes::{product_complex, tensor_dimension_checks};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::path::Path;
use std::sync::Arc;

pub enum Failure {
    /// Bad input or flags: exit 2.
    Usage(String),
    /// The mathematics said no: exit 1.
    Domain(String),
}

pub struct Outcome {
    pub body: String,
    pub verdict: Result<(), String>,
    pub warnings: Vec<String>,
}

type Res<T> = Result<T, Failure>;

fn json_outcome(v: Value, verdict: Result<(), String>) -> Outcome {
    let body = serde_json::to_string_pretty(&round_json(v)).expect("report serializes") + "\n";
    Outcome { body, verdict, warnings: Vec::new() }
}

/// Rounds every float in a report to 12 significant digits.
fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => json!(round_sig(n.as_f64().unwrap())),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report serializes")
}

fn load_mesh(path: &Path) -> Res<MeshFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    MeshFile::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_complex(path: &Path) -> Res<(MeshFile, Arc<Complex>)> {
    let mf = load_mesh(path)?;
    let c = mf.complex().map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok((mf, Arc::new(c)))
}

fn resolve_orders(c: &Complex, mf: &MeshFile, args: &OrderArgs) -> Res<CellOrders> {
    let spec = if let Some(path) = &args.orders {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str::<OrderSpec>(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
    } else if let Some(p) = args.order {
        OrderSpec { default: p, per_cell: Default::default() }
    } else {
        mf.orders.clone().unwrap_or(OrderSpec { default: 1, per_cell: Default::default() })
    };
    let orders = orders_from_spec(c, &spec).map_err(|e| Failure::Usage(e.to_string()))?;
    if orders.iter().flatten().any(|&p| p == 0) {
        return Err(Failure::Usage("orders must be at least 1".into()));
    }
    Ok(orders)
}

fn build_system(c: Arc<Complex>, orders: &CellOrders) -> Res<ElementSystem> {
    trimmed_system_relaxed(c, orders).map_err(|e| match e {
        FesError::OrderNotMonotone(m) => Failure::Usage(m),
        other => Failure::Domain(other.to_string()),
    })
}

fn system_from(path: &Path, args: &OrderArgs) -> Res<(Arc<Complex>, CellOrders, ElementSystem)> {
    let (mf, c) = load_complex(path)?;
    let orders = resolve_orders(&c, &mf, args)?;
    let sys = build_system(c.clone(), &orders)?;
    Ok((c, orders, sys))
}

fn constant_order(c: &Complex, orders: &CellOrders) -> Option<usize> {
    let p = *orders.iter().flatten().next()?;
    (orders == &constant_orders(c, p)).then_some(p)
}

pub fn run(cmd: &Command) -> Res<Outcome> {
    match cmd {
        Command::Check { mesh, orders } => check(mesh, orders),
        Command::Betti { mesh, orders } => betti(mesh, orders),
        Command::Basis { mesh, orders, k, mirrors } => basis(mesh, orders, *k, *mirrors),
        Command::Dual { mesh, mesh_out } => dual(mesh, mesh_out.as_deref()),
        Command::Eig { mesh, orders, k, count } => eig(mesh, orders, *k, *count),
        Command::InterpTest { mesh, orders, mirrors, degree, samples, weight_alpha } => {
            interp_test(mesh, orders, *mirrors, *degree, *samples, weight_alpha.as_ref().map(|a| a.0.as_slice()))
        }
        Command::TensorCheck { first, second, orders } => tensor_check(first, second, orders),
        Command::SmoothTest { mesh, order, dim, epsilon, points } => smooth_test(mesh.as_deref(), *order, *dim, *epsilon, *points),
    }
}

fn check(mesh: &Path, args: &OrderArgs) -> Res<Outcome> {
    let (c, orders, sys) = system_from(mesh, args)?;
    let rep = sys.compatibility();
    let verdict = if rep.compatible { Ok(()) } else { Err(format!("incompatible on {}", rep.failing_cells.join(", "))) };
    let v = json!({
        "command": "check",
        "counts": c.counts(),
        "monotone": is_monotone(&c, &orders),
        "compatible": rep.compatible,
        "failing_cells": rep.failing_cells,
        "report": to_value(&rep),
    });
    Ok(json_outcome(v, verdict))
}

fn betti(mesh: &Path, args: &OrderArgs) -> Res<Outcome> {
    let (c, _, sys) = system_from(mesh, args)?;
    let rep = sys.discrete_cohomology().map_err(|e| Failure::Domain(e.to_string()))?;
    let verdict = if rep.passes() { Ok(()) } else { Err("discrete and cochain cohomology disagree".into()) };
    let v = json!({
        "command": "betti",
        "counts": c.counts(),
        "cochain": rep.cochain,
        "discrete": rep.discrete,
        "de_rham_commutes": rep.de_rham_commutes,
        "induced_isomorphism": rep.induced_isomorphism,
    });
    Ok(json_outcome(v, verdict))
}

/// Nonzero cell blocks of a family, as exact strings.
fn family_json(c: &Complex, g: &GlobalSpace, fam: &[Q]) -> Value {
    let blocks: Vec<Value> = g
        .offsets
        .iter()
        .filter(|(_, &(off, n))| fam[off..off + n].iter().any(|x| *x != Q::from_integer(0.into())))
        .map(|(&t, &(off, n))| json!({"cell": c.cell(t).id, "coeffs": fam[off..off + n].iter().map(format_q).collect::<Vec<_>>()}))
        .collect();
    Value::Array(blocks)
}

fn mirrors_for(kind: MirrorKind, c: &Arc<Complex>, orders: &CellOrders, sys: &ElementSystem) -> Res<MirrorSystem> {
    let p = constant_order(c, orders);
    let host = p.unwrap_or_else(|| orders.iter().flatten().copied().max().unwrap_or(1)) + 1;
    let r = match kind {
        MirrorKind::Canonical => {
            let p = p.ok_or_else(|| Failure::Usage("canonical mirrors need a constant order".into()))?;
            canonical_trimmed_mirrors(c.clone(), p)
        }
        MirrorKind::L2 => l2_mirrors(sys, host),
        MirrorKind::Harmonic => harmonic_mirrors(sys, host),
    };
    r.map_err(|e| Failure::Domain(e.to_string()))
}

fn basis(mesh: &Path, args: &OrderArgs, k: Option<usize>, kind: MirrorKind) -> Res<Outcome> {
    let (c, orders, sys) = system_from(mesh, args)?;
    let degrees: Vec<usize> = match k {
        Some(k) if k > c.dim() => return Err(Failure::Usage(format!("degree {k} exceeds dimension {}", c.dim()))),
        Some(k) => vec![k],
        None => (0..=c.dim()).collect(),
    };
    let spaces: Vec<Value> = degrees
        .iter()
        .map(|&k| {
            let g = sys.global_space_all(k);
            let fams: Vec<Value> = (0..g.dim()).map(|i| family_json(&c, &g, &g.dense(i))).collect();
            json!({"k": k, "dim": g.dim(), "direct_dim": sys.global_dimension_direct(&c.all_cells(), k), "basis": fams})
        })
        .collect();
    let dofs = match mirrors_for(kind, &c, &orders, &sys) {
        Ok(ms) => ms.dof_table(),
        Err(Failure::Domain(msg)) => json!({"unavailable": msg}),
        Err(e) => return Err(e),
    };
    let v = json!({"command": "basis", "counts": c.counts(), "compatible": sys.compatibility().compatible, "spaces": spaces, "dofs": dofs});
    Ok(json_outcome(v, Ok(())))
}

fn dual(mesh: &Path, mesh_out: Option<&Path>) -> Res<Outcome> {
    let (_, c) = load_complex(mesh)?;
    let dual = Arc::new(c.dual_complex().map_err(|e| Failure::Domain(e.to_string()))?);
    let file = dual.to_mesh_file();
    let reread = MeshFile::parse(&file.to_json()).and_then(|m| m.complex()).map_err(|e| Failure::Domain(e.to_string()))?;
    let round_trip = reread.counts() == dual.counts() && (0..dual.dim()).all(|k| reread.coboundary_matrix(k) == dual.coboundary_matrix(k));
    let whitney = Arc::new(trimmed_system_relaxed(dual.clone(), &constant_orders(&dual, 1)).map_err(|e| Failure::Domain(e.to_string()))?);
    let parent = Harmonic::new(whitney.clone(), l2_products(&whitney));
    let sub = parent.subsystem().map_err(|e| Failure::Domain(e.to_string()))?;
    let sys = Arc::new(sub.verified_system().map_err(|e| Failure::Domain(e.to_string()))?);
    let h = Harmonic::new(sys.clone(), l2_products(&sys));
    let mut rho_identity = Vec::new();
    let mut bases = Vec::new();
    for k in 0..=dual.dim() {
        let b = h.canonical_basis(k).map_err(|e| Failure::Domain(e.to_string()))?;
        rho_identity.push(b.rho_is_identity(0.0));
        let fams: Vec<Value> = b.families.iter().map(|f| family_json(&dual, &b.space, f)).collect();
        bases.push(json!({"k": k, "dim": b.families.len(), "basis": fams}));
    }
    if let Some(path) = mesh_out {
        std::fs::write(path, file.to_json() + "\n").map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?;
    }
    let verdict = if rho_identity.iter().all(|x| *x) && round_trip { Ok(()) } else { Err("canonical basis is not dual to the cells".into()) };
    let v = json!({
        "command": "dual",
        "primal_counts": c.counts(),
        "dual_counts": dual.counts(),
        "dual_betti": dual.betti_numbers(),
        "round_trip": round_trip,
        "rho_identity": rho_identity,
        "dual_mesh": to_value(&file),
        "harmonic_basis": bases,
    });
    Ok(json_outcome(v, verdict))
}

fn eig(mesh: &Path, args: &OrderArgs, k: usize, count: usize) -> Res<Outcome> {
    let (c, _, sys) = system_from(mesh, args)?;
    if k > c.dim() {
        return Err(Failure::Usage(format!("degree {k} exceeds dimension {}", c.dim())));
    }
    let s = hodge_eigenvalues(&sys, k, count).map_err(|e| match e {
        AssemblyError::NotCompatible(m) => Failure::Domain(format!("incompatible on {m}")),
        AssemblyError::SolverBreakdown(m) => Failure::Domain(m),
    })?;
    let mut warnings = Vec::new();
    if s.clamped {
        warnings.push(format!("requested {count} eigenvalues, {} available", s.eigenvalues.len()));
    }
    let verdict = if s.harmonic == s.betti { Ok(()) } else { Err(format!("{} harmonic modes, Betti number {}", s.harmonic, s.betti)) };
    Ok(Outcome { body: spectrum_csv(&s), verdict, warnings })
}

fn interp_test(mesh: &Path, args: &OrderArgs, kind: MirrorKind, degree: Option<usize>, samples: usize, alpha: Option<&[f64]>) -> Res<Outcome> {
    let (c, orders, sys) = system_from(mesh, args)?;
    let rep = sys.compatibility();
    if !rep.compatible {
        return Err(Failure::Domain(format!("incompatible on {}", rep.failing_cells.join(", "))));
    }
    let sys = Arc::new(sys);
    let ms = Arc::new(mirrors_for(kind, &c, &orders, &sys)?);
    let faith = faithfulness_check(&ms, &sys).map_err(|e| Failure::Domain(e.to_string()))?;
    let mut v = json!({"command": "interp-test", "mirrors": format!("{kind:?}").to_lowercase(), "faithfulness": to_value(&faith)});
    if !faith.faithful {
        let f = &faith.failing[0];
        return Ok(json_outcome(v, Err(format!("mirrors not faithful on {} degree {}", f.0, f.1))));
    }
    let ip = Interpolator::new(ms, sys.clone()).map_err(|e| Failure::Domain(e.to_string()))?;
    let pmax = orders.iter().flatten().copied().max().unwrap_or(1);
    let com = commutation_check(&ip, samples, 1).map_err(|e: MirrorError| Failure::Domain(e.to_string()))?;
    let diagram = commuting_diagram_report(&ip, samples, degree.unwrap_or(pmax + 1), 2);
    let mut verdict = if !com.passes() {
        Err(format!("commutation fails: {}", com.failing.first().cloned().unwrap_or_else(|| "sampled dI != Id".into())))
    } else if !diagram.passes() {
        Err(diagram.failures.first().cloned().unwrap_or_else(|| "cohomology map is not an isomorphism".into()))
    } else {
        Ok(())
    };
    v["commutation"] = to_value(&com);
    v["diagram"] = to_value(&diagram);
    if let Some(alpha) = alpha {
        if alpha.len() != c.ambient_dim() {
            return Err(Failure::Usage(format!("--weight-alpha needs {} components", c.ambient_dim())));
        }
        let plus = Harmonic::new(sys.clone(), upwinded_products(&sys, alpha, 1.0)).subsystem_unchecked();
        let minus = Harmonic::new(sys.clone(), upwinded_products(&sys, alpha, -1.0)).subsystem_unchecked();
        let m = c.dim();
        let tops: Vec<_> = (0..c.num_cells(m)).map(|i| (m, i)).collect();
        let residual = tops
            .iter()
            .flat_map(|&t| (0..m).map(move |k| (t, k)))
            .map(|(t, k)| exponential_residual(&sys, t, k, alpha, &vec![1.0; binomial(m, k)]))
            .fold(0.0, f64::max);
        let dims: Vec<Vec<usize>> = (0..=m).map(|k| tops.iter().map(|&t| plus.dim_of(t, k)).collect()).collect();
        let differ = m >= 1 && tops.iter().any(|&t| spans_differ(&plus.spaces[t.0][t.1][1], &minus.spaces[t.0][t.1][1]));
        if residual > 1e-8 && verdict.is_ok() {
            verdict = Err(format!("upwind residual {residual:e}"));
        }
        v["upwind"] = json!({"alpha": alpha, "top_dims": dims, "exponential_residual": residual, "spans_differ_from_downwind": differ});
    }
    Ok(json_outcome(v, verdict))
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn tensor_check(first: &Path, second: &Path, args: &OrderArgs) -> Res<Outcome> {
    let (a, _, sa) = system_from(first, args)?;
    let (b, _, sb) = system_from(second, args)?;
    let rep = tensor_dimension_checks(&sa, &sb).map_err(|e| Failure::Domain(e.to_string()))?;
    let prod = product_complex(a.clone(), b.clone());
    let verdict = if rep.passes() && rep.betti_product == rep.betti_kunneth && rep.global_direct == rep.global_product {
        Ok(())
    } else {
        Err("tensor product transfer fails".into())
    };
    let v = json!({
        "command": "tensor-check",
        "factor_counts": [a.counts(), b.counts()],
        "product_counts": prod.counts(),
        "report": to_value(&rep),
    });
    Ok(json_outcome(v, verdict))
}

fn smooth_wavy(d: usize) -> ScaleField {
    ScaleField::new(
        Arc::new(move |x: &[f64]| 1.0 + 0.25 * (3.0 * x[0]).sin() * if d > 1 { (2.0 * x[1]).cos() } else { 1.0 }),
        Arc::new(move |x: &[f64]| {
            let c = if d > 1 { (2.0 * x[1]).cos() } else { 1.0 };
            let mut g = vec![0.0; d];
            g[0] = 0.75 * (3.0 * x[0]).cos() * c;
            if d > 1 {
                g[1] = -0.5 * (3.0 * x[0]).sin() * (2.0 * x[1]).sin();
            }
            g
        }),
    )
}

fn smooth_test(mesh: Option<&Path>, p: usize, dim: usize, eps: f64, npts: usize) -> Res<Outcome> {
    let (complex, d, lo, hi, scale) = match mesh {
        Some(path) => {
            let (_, c) = load_complex(path)?;
            let d = c.ambient_dim();
            if c.dim() != d {
                return Err(Failure::Usage("smoothing needs a full-dimensional mesh".into()));
            }
            let pts: Vec<Vec<f64>> = c.mesh().map(|m| m.vertices.iter().map(|v| v.iter().map(fes::linalg::q_to_f64).collect()).collect()).unwrap_or_default();
            let lo: Vec<f64> = (0..d).map(|i| pts.iter().map(|x| x[i]).fold(f64::INFINITY, f64::min)).collect();
            let hi: Vec<f64> = (0..d).map(|i| pts.iter().map(|x| x[i]).fold(f64::NEG_INFINITY, f64::max)).collect();
            let scale = mesh_scale_field(&c).map_err(|e| Failure::Usage(e.to_string()))?;
            (Some(c), d, lo, hi, scale)
        }
        None => (None, dim, vec![0.0; dim], vec![1.0; dim], smooth_wavy(dim)),
    };
    if !(1..=3).contains(&d) || !(eps > 0.0) || npts == 0 {
        return Err(Failure::Usage("need 1 <= dim <= 3, epsilon > 0 and at least one point".into()));
    }
    let kernel = make_kernel(p, d).map_err(|e| Failure::Domain(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // sample points well inside the box
    let pts: Vec<Vec<f64>> = (0..npts).map(|_| (0..d).map(|i| lo[i] + (hi[i] - lo[i]) * rng.gen_range(0.3..0.7)).collect()).collect();
    let mut reproduction: f64 = 0.0;
    for k in 0..=d {
        let u = random_poly_form(d, k, p, &mut rng);
        let f = SampledForm::from_poly(&u, lo.clone(), hi.clone());
        let ru = regularize_batch(&f, &scale, eps, &kernel, &pts).map_err(|e| Failure::Domain(e.to_string()))?;
        for (x, r) in pts.iter().zip(&ru) {
            reproduction = f.eval(x).iter().zip(r).map(|(a, b)| (a - b).abs()).fold(reproduction, f64::max);
        }
    }
    let fixture = sinusoidal_fixture(d, lo.clone(), hi.clone());
    let unit = ScaleField::constant(1.0, d);
    let com = commutation_residual(&fixture, &unit, eps, &kernel, &pts[..npts.min(10)], 1e-4).map_err(|e| Failure::Domain(e.to_string()))?;
    // perturbing outside the ball leaves Ru(x) unchanged
    let x = pts[0].clone();
    let radius = eps * (scale.phi)(&x);
    let (base, center) = (fixture.coeffs.clone(), x.clone());
    let perturbed = SampledForm::new(
        d,
        fixture.k,
        Arc::new(move |z: &[f64]| {
            let dist = z.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            base(z).into_iter().map(|v| if dist > radius { v + 1.0 + dist } else { v }).collect()
        }),
        lo.clone(),
        hi.clone(),
    );
    let before = regularize(&fixture, &scale, eps, &kernel, &x).map_err(|e| Failure::Domain(e.to_string()))?;
    let after = regularize(&perturbed, &scale, eps, &kernel, &x).map_err(|e| Failure::Domain(e.to_string()))?;
    let locality = before == after;
    let moment = kernel.moment_residual();
    let mut v = json!({
        "command": "smooth-test",
        "dim": d,
        "order": p,
        "epsilon": eps,
        "kernel": {"coeffs": kernel.coeffs, "condition": kernel.condition, "moment_residual": moment, "mass": kernel.moment(&vec![0; d])},
        "reproduction_error": reproduction,
        "commutation": to_value(&com),
        "locality": locality,
    });
    if let Some(c) = &complex {
        let nb = neighborhood_check(c, &scale, eps).map_err(|e| Failure::Domain(e.to_string()))?;
        v["scale_bounds"] = json!(scale.bounds);
        v["neighborhoods"] = to_value(&nb);
    }
    let verdict = if moment > 1e-10 {
        Err(format!("moment residual {moment:e}"))
    } else if reproduction > 1e-8 {
        Err(format!("polynomial reproduction error {reproduction:e}"))
    } else if com.max_residual > 1e-5 {
        Err(format!("commutation residual {:e}", com.max_residual))
    } else if !locality {
        Err("perturbation outside the ball changed Ru".into())
    } else {
        Ok(())
    };
    Ok(json_outcome(v, verdict))
}
