//! Acceptance criteria 1–10. Each test prints one `PASS`/`FAIL` line on
//! stderr (uncaptured) and then asserts.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use mselab_core::dn::dn_map;
use mselab_core::linearization::{
    advection_to_magnetic, fd_first_one_sided, first_lin_solve, higher_lin_fd, magnetic_apply, second_lin_solve,
};
use mselab_core::metric::default_conformal;
use mselab_core::mse::{
    divergence_form_weight, manufactured_source, residual_divergence_form, residual_f, residual_mean_curvature,
    solve_bvp_detailed,
};
use mselab_core::recovery::{
    adjoint_family, first_order_dn, gauge_pde_residual, identity_residual_check, poincare_potential, recover_sequence,
    recover_surface_gradient, relative_l2_interior, second_order_trace_difference, RecoveryOptions,
    SurfaceGradientOptions,
};
use mselab_core::*;

fn report(criterion: usize, pass: bool, msg: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{tag} criterion {criterion}: {msg}");
}

fn check(criterion: usize, pass: bool, msg: String) {
    report(criterion, pass, &msg);
    assert!(pass, "criterion {criterion}: {msg}");
}

/// Least-squares slope of `log e` against `log x`.
fn loglog_slope(x: &[f64], e: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let le: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, me) = (lx.iter().sum::<f64>() / n, le.iter().sum::<f64>() / n);
    let num: f64 = lx.iter().zip(&le).map(|(a, b)| (a - mx) * (b - me)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

fn grid_rate(ns: &[usize], errs: &[f64]) -> f64 {
    let hs: Vec<f64> = ns.iter().map(|n| 1.0 / (*n as f64 - 1.0)).collect();
    loglog_slope(&hs, errs)
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn sampled(p: MetricPreset, c: ConformalFactor, n: usize) -> SampledMetric {
    MetricSpec::preset(p, c).sample(Grid::new(n).unwrap()).unwrap()
}

fn interior_sup(f: &ScalarField) -> f64 {
    f.max_abs_inner(1)
}

const TEST_FUNCTIONS: [&str; 3] =
    ["0.05*sin(pi*x1)*sin(pi*x2)", "0.04*x1*x2*(1 - x1) + 0.01*cos(2*x2)", "0.018*exp(x1 - x2)*sin(2*x1 + x2)"];

#[test]
fn criterion_01_formulation_equivalence() {
    let ns = [33, 65, 129];
    let mut worst_rate = (f64::INFINITY, f64::NEG_INFINITY);
    let mut worst_abs: f64 = 0.0;
    let mut pass = true;
    for preset in MetricPreset::ALL {
        for src in TEST_FUNCTIONS {
            let u_fn = ScalarFn::parse(src).unwrap();
            let mut mc = Vec::new();
            let mut dv = Vec::new();
            for &n in &ns {
                let m = sampled(preset, default_conformal(), n);
                let u = ScalarField::from_fn(*m.grid(), |x, y| u_fn.eval(x, y));
                assert!(u.max_abs() <= 0.05);
                let f = residual_f(&u, &m).unwrap();
                let h = residual_mean_curvature(&u, &m).unwrap();
                let d = residual_divergence_form(&u, &m).unwrap();
                let w = divergence_form_weight(&u, &m).unwrap();
                mc.push(interior_sup(&h.sub(&f)));
                dv.push(interior_sup(&d.sub(&w.mul(&f))));
            }
            for errs in [&mc, &dv] {
                let rate = grid_rate(&ns, errs);
                worst_rate = (worst_rate.0.min(rate), worst_rate.1.max(rate));
                worst_abs = worst_abs.max(errs[2]);
                pass &= in_range(rate, 1.7, 2.3) && errs[2] <= 1e-4;
            }
        }
    }
    check(
        1,
        pass,
        format!("rates in [{:.3}, {:.3}], max defect at 129² {worst_abs:.2e} (18 cases)", worst_rate.0, worst_rate.1),
    );
}

#[test]
fn criterion_02_manufactured_solution() {
    let ns = [17, 33, 65, 129];
    let exact = ScalarFn::parse("0.03*sin(pi*x1)*cos(x2) + 0.01*x1*x2").unwrap();
    let mut errs = Vec::new();
    let mut quadratic = true;
    for &n in &ns {
        let m = sampled(MetricPreset::DiagPoly, default_conformal(), n);
        let g = *m.grid();
        let s = manufactured_source(&m, &exact).unwrap();
        let f = BoundaryData::from_fn(g, |x, y| exact.eval(x, y)).unwrap();
        let (u, rep) = solve_bvp_detailed(&m, &f, Some(&s), &SolverOptions::default().with_tol(1e-12)).unwrap();
        quadratic &= rep.has_quadratic_phase(0.1);
        errs.push(u.sub(&ScalarField::from_fn(g, |x, y| exact.eval(x, y))).max_abs());
    }
    let rate = grid_rate(&ns, &errs);
    check(
        2,
        in_range(rate, 1.7, 2.3) && quadratic,
        format!("rate {rate:.3}, errors [{}], quadratic phase on every grid: {quadratic}", sci(&errs)),
    );
}

fn acceptance_data(g: Grid) -> Vec<BoundaryData> {
    (0..8)
        .map(|q| {
            let a = 1.0 + q as f64;
            BoundaryData::from_fn(g, move |x, y| 0.04 * (a * PI * x + 0.7 * a).sin() * (0.5 + y * y)).unwrap()
        })
        .collect()
}

#[test]
fn criterion_03_gauge_invariance() {
    let g = Grid::new(65).unwrap();
    let spec = MetricSpec::preset(MetricPreset::DiagPoly, default_conformal());
    let a = spec.sample(g).unwrap();
    let b = spec.gauge_scaled(2.5).sample(g).unwrap();
    let opts = SolverOptions::default();
    let mut gap: f64 = 0.0;
    for f in acceptance_data(g) {
        let ta = dn_map(&a, &f, Gamma::All, &opts).unwrap().neumann;
        let tb = dn_map(&b, &f, Gamma::All, &opts).unwrap().neumann;
        gap = gap.max(ta.sub(&tb).unwrap().max_abs());
    }
    let bound = 10.0 * opts.newton_tol;
    check(3, gap <= bound, format!("max |Λ_c f − Λ_2.5c f| = {gap:.2e} (bound {bound:.1e}, 8 data, 65²)"));
}

const EPS_LADDER: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

#[test]
fn criterion_04_first_linearization() {
    let m = sampled(MetricPreset::DiagPoly, default_conformal(), 65);
    let g = *m.grid();
    let f = BoundaryData::from_fn(g, |x, y| 0.5 + (PI * x).cos() * (1.0 + y)).unwrap();
    let v = first_lin_solve(&m, &f).unwrap();
    let opts = SolverOptions::default().with_tol(1e-12);
    let mut one = Vec::new();
    let mut two = Vec::new();
    for eps in EPS_LADDER {
        one.push(fd_first_one_sided(&m, &f, eps, &opts).unwrap().sub(&v).max_abs());
        two.push(higher_lin_fd(&m, &[&f], eps, false, &opts).unwrap().sub(&v).max_abs());
    }
    let (s1, s2) = (loglog_slope(&EPS_LADDER, &one), loglog_slope(&EPS_LADDER, &two));
    check(
        4,
        in_range(s1, 0.9, 1.1) && in_range(s2, 1.8, 2.2),
        format!("one-sided slope {s1:.3} [{}], centred slope {s2:.3} [{}]", sci(&one), sci(&two)),
    );
}

#[test]
fn criterion_05_second_linearization() {
    let m = sampled(MetricPreset::DiagPoly, default_conformal(), 65);
    let g = *m.grid();
    let f1 = BoundaryData::from_fn(g, |x, y| 1.0 + 0.5 * (x - y)).unwrap();
    let f2 = BoundaryData::from_fn(g, |x, y| (PI * x).cos() * y + 0.3).unwrap();
    let w = second_lin_solve(&m, None, &first_lin_solve(&m, &f1).unwrap(), &first_lin_solve(&m, &f2).unwrap()).unwrap();
    let opts = SolverOptions::default().with_tol(1e-12);
    let gaps: Vec<f64> = EPS_LADDER
        .iter()
        .map(|&eps| higher_lin_fd(&m, &[&f1, &f2], eps, false, &opts).unwrap().sub(&w).max_abs())
        .collect();
    let slope = loglog_slope(&EPS_LADDER, &gaps);
    check(5, in_range(slope, 1.8, 2.2), format!("ε-slope {slope:.3}, gaps [{}] (65²)", sci(&gaps)));
}

fn identity_case(preset: MetricPreset, n: usize, ctilde: &ConformalFactor) -> f64 {
    let m = sampled(preset, default_conformal(), n);
    let g = *m.grid();
    let lin = Linearization::new(&m).unwrap();
    let vk = lin.first(&BoundaryData::from_fn(g, |x, y| 1.0 + 0.5 * (x - y)).unwrap()).unwrap();
    let vl = lin.first(&BoundaryData::from_fn(g, |x, y| (PI * x).cos() * y).unwrap()).unwrap();
    let v0 = adjoint_family(&m, Gamma::All, 2).unwrap().pop().unwrap();
    let tr = second_order_trace_difference(&m, ctilde, &vk, &vl, Gamma::All).unwrap();
    identity_residual_check(&m, ctilde, &vk, &vl, &v0, &tr).unwrap()
}

#[test]
fn criterion_06_integral_identity() {
    let ns = [33, 65, 129];
    let sine =
        ConformalFactor::new(ScalarFn::constant(1.0), vec![(3, ScalarFn::parse("sin(pi*x1)*sin(pi*x2)").unwrap())])
            .unwrap();
    let mut pass = true;
    let mut lines = Vec::new();
    for preset in MetricPreset::ALL {
        let defects: Vec<f64> = ns.iter().map(|&n| identity_case(preset, n, &sine)).collect();
        let rate = grid_rate(&ns, &defects);
        pass &= in_range(rate, 1.7, 2.3);
        // the absolute bound is taken on the preset used throughout this suite
        if preset == MetricPreset::DiagPoly {
            pass &= defects[2] <= 1e-4;
        }
        lines.push(format!("{preset} rate {rate:.3} [{}]", sci(&defects)));
    }
    let exact_zero = identity_case(MetricPreset::DiagPoly, 65, &ConformalFactor::constant(1.0));
    let tol = 10.0 * SolverOptions::default().newton_tol;
    pass &= exact_zero <= tol;
    check(6, pass, format!("{}; exact-zero case {exact_zero:.2e}", lines.join("; ")));
}

const RECOVERY_N: usize = 65;
const RECOVERY_PAIRS: usize = 24;
/// FD step of the nonlinear DN data.
const RECOVERY_EPS: f64 = 5e-3;

fn phi3() -> ScalarFn {
    ScalarFn::parse("sin(pi*x1)*sin(pi*x2)").unwrap()
}

fn base_spec() -> MetricSpec {
    MetricSpec::preset(MetricPreset::DiagPoly, default_conformal())
}

struct RecoveryRun {
    error: f64,
    condition: f64,
    outside_gamma: f64,
}

/// Order-`max_order` recovery of `c̃ = 1 + Σ φ_k t^k/k!` from FD data of
/// the nonlinear DN map.
fn recovery_run(
    higher: Vec<(usize, ScalarFn)>,
    max_order: usize,
    gamma: Gamma,
    modes: usize,
    adjoints: usize,
    eps: f64,
    opts: &RecoveryOptions,
) -> RecoveryRun {
    let g = Grid::new(RECOVERY_N).unwrap();
    let base = base_spec();
    let model = base.sample(g).unwrap();
    let truth_factor = ConformalFactor::new(ScalarFn::constant(1.0), higher.clone()).unwrap();
    let measured = base.times(&truth_factor).sample(g).unwrap();
    let lin = Linearization::new(&model).unwrap();
    let family = SolutionPairFamily::fourier(&lin, gamma, RECOVERY_PAIRS, modes).unwrap();
    let v0s = adjoint_family(&model, gamma, adjoints).unwrap();
    let solver = SolverOptions::default().with_tol(1e-12);
    let res = recover_sequence(&base, &measured, &family, &v0s, max_order, eps, &solver, opts).unwrap();
    let target = higher.iter().find(|(k, _)| *k == max_order).unwrap().1.clone();
    let truth = ScalarField::from_fn(g, |x, y| target.eval(x, y));
    let error = relative_l2_interior(&res.coeff_fields[&max_order], &truth).unwrap();
    let condition = res.diagnostics.last().unwrap().condition;

    // the identity's boundary integrand v0 ∂_ν(w̃ − w) off Γ
    let mut outside: f64 = 0.0;
    if !gamma.is_full() {
        let (k, l) = family.pairs[family.len() - 1];
        let tr = second_order_trace_difference(&model, &truth_factor, &family.fields[k], &family.fields[l], Gamma::All)
            .unwrap();
        for v0 in &v0s {
            for (&node, t) in tr.nodes.iter().zip(&tr.values) {
                if !gamma.contains(&g, node) {
                    outside = outside.max((v0.values()[node] * t).abs());
                }
            }
        }
    }
    RecoveryRun { error, condition, outside_gamma: outside }
}

fn full_order3() -> &'static RecoveryRun {
    static RUN: OnceLock<RecoveryRun> = OnceLock::new();
    RUN.get_or_init(|| recovery_run(vec![(3, phi3())], 3, Gamma::All, 2, 8, RECOVERY_EPS, &RecoveryOptions::default()))
}

#[test]
fn criterion_07_coefficient_recovery() {
    let third = full_order3();
    let opts = RecoveryOptions { vanish_on_boundary: false, ..RecoveryOptions::default() };
    let fourth = recovery_run(
        vec![(3, phi3()), (4, ScalarFn::parse("x1*(1 - x1)").unwrap())],
        4,
        Gamma::All,
        2,
        8,
        RECOVERY_EPS,
        &opts,
    );
    check(
        7,
        third.error <= 0.10 && fourth.error <= 0.15,
        format!(
            "order 3 rel. L² error {:.4} (cond {:.1e}), order 4 sequential {:.4} (cond {:.1e}); 65², 24 pairs",
            third.error, third.condition, fourth.error, fourth.condition
        ),
    );
}

#[test]
fn criterion_08_partial_data() {
    let full = full_order3();
    let part =
        recovery_run(vec![(3, phi3())], 3, Gamma::Side(Side::Left), 7, 9, RECOVERY_EPS, &RecoveryOptions::default());
    let pass = part.error <= 2.0 * full.error && part.outside_gamma == 0.0;
    check(
        8,
        pass,
        format!(
            "Γ = left side: rel. error {:.4} vs full {:.4} (bound {:.4}), cond {:.1e}, max off-Γ boundary term {:.1e}",
            part.error,
            full.error,
            2.0 * full.error,
            part.condition,
            part.outside_gamma
        ),
    );
}

fn poincare_error(n: usize) -> f64 {
    // ĝ = diag(1, 1 + x1²), ψ = 0.5 sin(x1) e^{x2} + x1 x2²
    let m = sampled(MetricPreset::DiagPoly, ConformalFactor::constant(1.0), n);
    let g = *m.grid();
    let psi = |x: f64, y: f64| 0.5 * x.sin() * y.exp() + x * y * y;
    let x2 = VectorField::from_fn(g, |x, y| [0.3 * y, -0.2 * x]);
    let x1 = VectorField::from_fn(g, |x, y| {
        let d = [0.5 * x.cos() * y.exp() + y * y, 0.5 * x.sin() * y.exp() + 2.0 * x * y];
        [0.3 * y + d[0], -0.2 * x + d[1] / (1.0 + x * x)]
    });
    let anchor = g.center();
    let (xa, ya) = g.xy(anchor);
    let phi = poincare_potential(&x1, &x2, &m, anchor).unwrap();
    phi.sub(&ScalarField::from_fn(g, |x, y| psi(x, y) - psi(xa, ya))).max_abs()
}

fn gauge_pde_error(n: usize) -> f64 {
    // on ĝ = e^{2x1} δ: Δ_ĝ φ = e^{−2x1} Δφ, |∇φ|²_ĝ = e^{−2x1} |dφ|²
    let m = sampled(MetricPreset::ConformalExp, ConformalFactor::constant(1.0), n);
    let g = *m.grid();
    let x1 = VectorField::from_fn(g, |x, y| [1.0 + y, x * x]);
    let phi = ScalarField::from_fn(g, |x, y| 0.3 * x.sin() * (2.0 * y).cos());
    let oracle = ScalarField::from_fn(g, |x, y| {
        let (px, py) = (0.3 * x.cos() * (2.0 * y).cos(), -0.6 * x.sin() * (2.0 * y).sin());
        let lap = -1.5 * x.sin() * (2.0 * y).cos();
        let w = (-2.0 * x).exp();
        w * (lap + 0.5 * (px * px + py * py)) - ((1.0 + y) * px + x * x * py)
    });
    interior_sup(&gauge_pde_residual(&phi, &x1, &m).unwrap().sub(&oracle))
}

fn magnetic_error(n: usize) -> f64 {
    // on ĝ = diag(1, a), a = 1 + x1²: Δ_ĝ u = u_11 + x1 u_1 / a + u_22 / a
    let m = sampled(MetricPreset::DiagPoly, default_conformal(), n);
    let g = *m.grid();
    let x = Linearization::new(&m).unwrap().advection().x.clone();
    let coeffs = advection_to_magnetic(&x, &m).unwrap();
    let u = ScalarField::from_fn(g, |a, b| (2.0 * a).sin() * b.cos() + a * a * b);
    let applied = magnetic_apply(&coeffs, &u, &m).unwrap();
    let exact = ScalarField::from_values(
        g,
        (0..g.len())
            .map(|k| {
                let (a, b) = g.xy(k);
                let u1 = 2.0 * (2.0 * a).cos() * b.cos() + 2.0 * a * b;
                let u2 = -(2.0 * a).sin() * b.sin() + a * a;
                let u11 = -4.0 * (2.0 * a).sin() * b.cos() + 2.0 * b;
                let u22 = -(2.0 * a).sin() * b.cos();
                let s = 1.0 + a * a;
                let lap = u11 + a * u1 / s + u22 / s;
                let xk = x.at(k);
                -lap + xk[0] * u1 + xk[1] * u2
            })
            .collect(),
    )
    .unwrap();
    interior_sup(&applied.sub(&exact))
}

#[test]
fn criterion_09_gauge_lemma_mechanics() {
    let ns = [33, 65, 129];
    let p: Vec<f64> = ns.iter().map(|&n| poincare_error(n)).collect();
    let q: Vec<f64> = ns.iter().map(|&n| gauge_pde_error(n)).collect();
    let r: Vec<f64> = ns.iter().map(|&n| magnetic_error(n)).collect();
    let (rp, rq, rr) = (grid_rate(&ns, &p), grid_rate(&ns, &q), grid_rate(&ns, &r));
    check(
        9,
        [rp, rq, rr].iter().all(|v| in_range(*v, 1.7, 2.3)),
        format!(
            "Poincaré rate {rp:.3} [{}], gauge PDE rate {rq:.3} [{}], magnetic rate {rr:.3} [{}]",
            sci(&p),
            sci(&q),
            sci(&r)
        ),
    );
}

fn surface_case(base: &MetricSpec, ctilde: &str) -> (SampledMetric, recovery::SurfaceGradientEstimate) {
    let g = Grid::new(65).unwrap();
    let m = base.sample(g).unwrap();
    let meas = base.times(&ConformalFactor::new(ScalarFn::parse(ctilde).unwrap(), vec![]).unwrap()).sample(g).unwrap();
    let data: Vec<BoundaryData> = recovery::fourier_data(g, Gamma::All, 4).unwrap().into_iter().skip(1).collect();
    let d0 = first_order_dn(&m, &data, Gamma::All).unwrap();
    let d1 = first_order_dn(&meas, &data, Gamma::All).unwrap();
    let est = recover_surface_gradient(&m, &data, &d0, &d1, Gamma::All, &SurfaceGradientOptions::default()).unwrap();
    (m, est)
}

#[test]
fn criterion_10_surface_gradient() {
    let diag = base_spec();
    let (_, matched) = surface_case(&diag, "1");
    let floor = matched.delta_x.max_abs();

    let (m, est) = surface_case(&diag, "1 + 0.1*x1");
    let g = *m.grid();
    let (mut num, mut den) = (0.0, 0.0);
    for r in 0..g.interior_len() {
        let k = g.interior_node(r);
        let (x, _) = g.xy(k);
        // δX = ((1 − n)/2) ĝ⁻¹ ∇ log c̃ with n = 3
        let exact = m.node(k).raise([-0.1 / (1.0 + 0.1 * x), 0.0]);
        let d = est.delta_x.at(k);
        num += (d[0] - exact[0]).powi(2) + (d[1] - exact[1]).powi(2);
        den += exact[0].powi(2) + exact[1].powi(2);
    }
    let rel = (num / den).sqrt();

    let (m, est) = surface_case(&MetricSpec::euclidean(ConformalFactor::constant(1.0)), "exp(x2)");
    let g = *m.grid();
    let mut angle = 0.0;
    for r in 0..g.interior_len() {
        let d = est.delta_x.at(g.interior_node(r));
        angle += (-d[1] / d[0].hypot(d[1])).clamp(-1.0, 1.0).acos().to_degrees();
    }
    angle /= g.interior_len() as f64;

    check(
        10,
        floor <= 1e-3 && rel <= 0.15 && angle <= 5.0,
        format!(
            "matched ‖δX‖∞ {floor:.1e}, c̃ = 1 + 0.1 x1 rel. L² {rel:.2e} ({} iters), c̃ = e^x2 mean angle to −e2 {angle:.2}°",
            est.iterations
        ),
    );
}
