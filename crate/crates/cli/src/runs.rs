//! Subcommand bodies. Each writes its artifacts under the configured output
//! directory and finishes with a manifest listing them.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mselab_core::dn::{dn_batch, DNRecord};
use mselab_core::linearization::{fd_first_one_sided, first_lin_solve, higher_lin_fd};
use mselab_core::mse::{
    divergence_form_weight, manufactured_source, residual_divergence_form, residual_f, residual_mean_curvature,
    solve_bvp_detailed,
};
use mselab_core::recovery::{
    adjoint_family, first_order_dn, fourier_data, identity_residual_check, recover_sequence, recover_surface_gradient,
    relative_l2_interior, second_order_trace_difference, SurfaceGradientEstimate, SurfaceGradientOptions,
};
use mselab_core::{
    BoundaryData, Gamma, Grid, Linearization, RecoveryResult, SampledMetric, ScalarField, ScalarFn, SolutionPairFamily,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::output::{emit_plot_data, num, write_file, write_table};

/// Boundary data of the configured family. `random` mixes the Fourier
/// traces with seeded uniform weights and keeps the filler in front.
pub fn boundary_family(cfg: &ExperimentConfig, grid: Grid, gamma: Gamma) -> Result<Vec<BoundaryData>> {
    let base = fourier_data(grid, gamma, cfg.modes)?;
    if cfg.family == "fourier" {
        return Ok(base);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = vec![base[0].clone()];
    for _ in 1..base.len() {
        let weights: Vec<f64> = (1..base.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = weights.iter().map(|w| w.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        let terms: Vec<(f64, &BoundaryData)> = weights.iter().zip(&base[1..]).map(|(w, f)| (w / norm, f)).collect();
        out.push(BoundaryData::combination(&terms)?);
    }
    Ok(out)
}

/// Pairs `(k, l)`, `k ≤ l`, sorted by `l` then `k`, over the configured family.
pub fn solution_family(cfg: &ExperimentConfig, lin: &Linearization, gamma: Gamma) -> Result<SolutionPairFamily> {
    if cfg.family == "fourier" {
        return Ok(SolutionPairFamily::fourier(lin, gamma, cfg.pairs, cfg.modes)?);
    }
    let data = boundary_family(cfg, *lin.metric().grid(), gamma)?;
    let pairs: Vec<(usize, usize)> =
        (0..data.len()).flat_map(|l| (0..=l).map(move |k| (k, l))).take(cfg.pairs).collect();
    if pairs.len() < cfg.pairs {
        bail!("{} traces give only {} pairs, {} requested", data.len(), pairs.len(), cfg.pairs);
    }
    let fields = data.iter().map(|f| lin.first(f)).collect::<mselab_core::Result<Vec<_>>>()?;
    Ok(SolutionPairFamily {
        gamma,
        data,
        fields,
        pairs,
        filler: 0,
        recipe: format!("random:seed={}:modes={}:pairs={}", cfg.seed, cfg.modes, cfg.pairs),
    })
}

fn model_metric(cfg: &ExperimentConfig, grid: Grid) -> Result<SampledMetric> {
    Ok(cfg.model_spec()?.sample(grid)?)
}

fn expr(src: &str, key: &str) -> Result<ScalarFn> {
    ScalarFn::parse(src).with_context(|| format!("config key '{key}'"))
}

/// Least-squares slope of `log value` against `log h`.
pub fn loglog_slope(h: &[f64], v: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(v)
        .filter(|(a, b)| a.is_finite() && b.is_finite() && **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn finish(mut manifest: RunManifest, dir: &Path, files: &[String]) -> Result<RunManifest> {
    for f in files {
        manifest.record(dir, f)?;
    }
    manifest.write(dir)?;
    Ok(manifest)
}

pub fn run_forward(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let dir = cfg.out_dir();
    let mut manifest = RunManifest::new("forward", cfg);
    let grid = cfg.grid()?;
    let metric = model_metric(cfg, grid)?;
    let data = expr(&cfg.data, "data")?;
    let f = BoundaryData::from_fn(grid, |x, y| data.eval(x, y))?;
    let (u, report) = manifest.timed("solve", || Ok(solve_bvp_detailed(&metric, &f, None, &cfg.solver())?))?;
    manifest.residual_norms.insert("newton_final".into(), report.final_residual());
    emit_plot_data(&[("u", &u)], &dir.join("forward_u.csv"))?;
    let rows: Vec<Vec<String>> =
        report.residual_history.iter().enumerate().map(|(i, r)| vec![i.to_string(), num(*r)]).collect();
    write_table(&dir.join("forward_newton.csv"), &["iteration", "residual"], &rows)?;
    finish(manifest, &dir, &["forward_u.csv".into(), "forward_newton.csv".into()])
}

fn dn_rows(grid: &Grid, records: &[DNRecord]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (d, rec) in records.iter().enumerate() {
        for (&k, v) in rec.neumann.nodes.iter().zip(&rec.neumann.values) {
            let (x, y) = grid.xy(k);
            rows.push(vec![d.to_string(), k.to_string(), num(x), num(y), num(rec.f.field().values()[k]), num(*v)]);
        }
    }
    rows
}

fn scaled_family(cfg: &ExperimentConfig, grid: Grid, gamma: Gamma) -> Result<Vec<BoundaryData>> {
    Ok(boundary_family(cfg, grid, gamma)?.into_iter().map(|f| f.scaled(cfg.amplitude)).collect())
}

fn worst_residual(records: &[DNRecord]) -> f64 {
    records.iter().map(|r| r.report.final_residual()).fold(0.0, f64::max)
}

pub fn run_dn(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let dir = cfg.out_dir();
    let mut manifest = RunManifest::new("dn", cfg);
    let grid = cfg.grid()?;
    let gamma = cfg.gamma()?;
    let metric = model_metric(cfg, grid)?;
    let family = scaled_family(cfg, grid, gamma)?;
    let records = manifest.timed("dn_batch", || Ok(dn_batch(&metric, &family, gamma, &cfg.solver())?))?;
    manifest.residual_norms.insert("newton_final_max".into(), worst_residual(&records));
    write_table(&dir.join("dn_traces.csv"), &["datum", "node", "x1", "x2", "f", "neumann"], &dn_rows(&grid, &records))?;
    finish(manifest, &dir, &["dn_traces.csv".into()])
}

pub fn run_linearize(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let dir = cfg.out_dir();
    let mut manifest = RunManifest::new("linearize", cfg);
    let grid = cfg.grid()?;
    let metric = model_metric(cfg, grid)?;
    let data = expr(&cfg.data, "data")?;
    let f = BoundaryData::from_fn(grid, |x, y| data.eval(x, y))?;
    let v = manifest.timed("first_lin_solve", || Ok(first_lin_solve(&metric, &f)?))?;
    let solver = cfg.solver();
    let (one, two) = manifest.timed("fd_oracles", || {
        let mut one = Vec::new();
        let mut two = Vec::new();
        for &eps in &cfg.eps {
            one.push(fd_first_one_sided(&metric, &f, eps, &solver)?.sub(&v).max_abs());
            two.push(higher_lin_fd(&metric, &[&f], eps, false, &solver)?.sub(&v).max_abs());
        }
        Ok((one, two))
    })?;
    manifest.slopes.insert("one_sided".into(), loglog_slope(&cfg.eps, &one));
    manifest.slopes.insert("centered".into(), loglog_slope(&cfg.eps, &two));
    let rows: Vec<Vec<String>> =
        cfg.eps.iter().zip(one.iter().zip(&two)).map(|(e, (a, b))| vec![num(*e), num(*a), num(*b)]).collect();
    write_table(&dir.join("linearize_fd.csv"), &["eps", "one_sided_error", "centered_error"], &rows)?;
    emit_plot_data(&[("v", &v)], &dir.join("linearize_v.csv"))?;
    finish(manifest, &dir, &["linearize_fd.csv".into(), "linearize_v.csv".into()])
}

/// Identity defect at one grid for the filler and the first Fourier member.
fn identity_defect(cfg: &ExperimentConfig, n: usize) -> Result<f64> {
    let grid = Grid::new(n)?;
    let gamma = cfg.gamma()?;
    let metric = model_metric(cfg, grid)?;
    let lin = Linearization::new(&metric)?;
    let data = boundary_family(cfg, grid, gamma)?;
    if data.len() < 2 {
        bail!("the family needs at least two members for an identity check");
    }
    let vk = lin.first(&data[0])?;
    let vl = lin.first(&data[1])?;
    let v0 = adjoint_family(&metric, gamma, 1)?.pop().context("no adjoint solution")?;
    let ctilde = cfg.ctilde()?;
    let tr = second_order_trace_difference(&metric, &ctilde, &vk, &vl, gamma)?;
    Ok(identity_residual_check(&metric, &ctilde, &vk, &vl, &v0, &tr)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    pub quantity: String,
    pub n: usize,
    pub h: f64,
    pub value: f64,
    /// `ok`, or the failure message.
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// Observed order per quantity from log-log regression over successful rows.
    pub rates: BTreeMap<String, f64>,
}

fn study_values(cfg: &ExperimentConfig, n: usize) -> Result<Vec<(&'static str, f64)>> {
    let grid = Grid::new(n)?;
    match cfg.study.as_str() {
        "mms" => {
            let metric = model_metric(cfg, grid)?;
            let exact = expr(&cfg.exact, "exact")?;
            let s = manufactured_source(&metric, &exact)?;
            let f = BoundaryData::from_fn(grid, |x, y| exact.eval(x, y))?;
            let (u, _) = solve_bvp_detailed(&metric, &f, Some(&s), &cfg.solver())?;
            Ok(vec![("mms_error", u.sub(&ScalarField::from_fn(grid, |x, y| exact.eval(x, y))).max_abs())])
        }
        "formulation" => {
            let metric = model_metric(cfg, grid)?;
            let exact = expr(&cfg.exact, "exact")?;
            let u = ScalarField::from_fn(grid, |x, y| exact.eval(x, y));
            let f = residual_f(&u, &metric)?;
            let mc = residual_mean_curvature(&u, &metric)?.sub(&f).max_abs_inner(1);
            let w = divergence_form_weight(&u, &metric)?;
            let dv = residual_divergence_form(&u, &metric)?.sub(&w.mul(&f)).max_abs_inner(1);
            Ok(vec![("mean_curvature_defect", mc), ("divergence_defect", dv)])
        }
        "identity" => Ok(vec![("identity_defect", identity_defect(cfg, n)?)]),
        other => bail!("unknown study '{other}'"),
    }
}

fn study_quantities(study: &str) -> &'static [&'static str] {
    match study {
        "mms" => &["mms_error"],
        "formulation" => &["mean_curvature_defect", "divergence_defect"],
        _ => &["identity_defect"],
    }
}

/// Per-grid errors of the configured study and their observed orders. A
/// failing grid yields `NaN` rows annotated with the error instead of
/// aborting the table.
pub fn run_convergence_study(cfg: &ExperimentConfig) -> Result<RateTable> {
    cfg.validate()?;
    if cfg.grids.len() < 3 {
        bail!("a convergence study needs at least 3 grid sizes, got {}", cfg.grids.len());
    }
    let mut rows = Vec::new();
    for &n in &cfg.grids {
        let h = 1.0 / (n as f64 - 1.0);
        match study_values(cfg, n) {
            Ok(vals) => rows.extend(vals.into_iter().map(|(q, v)| RateRow {
                quantity: q.to_owned(),
                n,
                h,
                value: v,
                status: "ok".into(),
            })),
            Err(e) => rows.extend(study_quantities(&cfg.study).iter().map(|q| RateRow {
                quantity: (*q).to_owned(),
                n,
                h,
                value: f64::NAN,
                status: format!("failed: {e:#}"),
            })),
        }
    }
    let mut rates = BTreeMap::new();
    for q in study_quantities(&cfg.study) {
        let (h, v): (Vec<f64>, Vec<f64>) =
            rows.iter().filter(|r| r.quantity == *q && r.status == "ok").map(|r| (r.h, r.value)).unzip();
        rates.insert((*q).to_owned(), loglog_slope(&h, &v));
    }
    Ok(RateTable { rows, rates })
}

fn csv_cell(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "'"))
}

pub fn write_rate_table(table: &RateTable, dir: &Path) -> Result<Vec<String>> {
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| vec![r.quantity.clone(), r.n.to_string(), num(r.h), num(r.value), csv_cell(&r.status)])
        .collect();
    write_table(&dir.join("convergence.csv"), &["quantity", "n", "h", "value", "status"], &rows)?;
    let rates: Vec<Vec<String>> = table.rates.iter().map(|(q, r)| vec![q.clone(), num(*r)]).collect();
    write_table(&dir.join("convergence_rates.csv"), &["quantity", "rate"], &rates)?;
    Ok(vec!["convergence.csv".into(), "convergence_rates.csv".into()])
}

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let dir = cfg.out_dir();
    let mut manifest = RunManifest::new("convergence", cfg);
    let table = manifest.timed("study", || run_convergence_study(cfg))?;
    manifest.slopes.extend(table.rates.clone());
    let files = write_rate_table(&table, &dir)?;
    finish(manifest, &dir, &files)
}

pub fn run_identity_check(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let dir = cfg.out_dir();
    let mut manifest = RunManifest::new("identity-check", cfg);
    let mut rows = Vec::new();
    let (mut hs, mut ds) = (Vec::new(), Vec::new());
    for &n in &cfg.grids {
        let d = manifest.timed(&format!("n{n}"), || identity_defect(cfg, n))?;
        let h = 1.0 / (n as f64 - 1.0);
        hs.push(h);
        ds.push(d);
        rows.push(vec![n.to_string(), num(h), num(d)]);
    }
    if cfg.grids.len() >= 2 {
        manifest.slopes.insert("identity_defect".into(), loglog_slope(&hs, &ds));
    }
    manifest.residual_norms.insert("identity_defect_finest".into(), *ds.last().unwrap_or(&f64::NAN));
    write_table(&dir.join("identity.csv"), &["n", "h", "defect"], &rows)?;
    finish(manifest, &dir, &["identity.csv".into()])
}

#[derive(Clone, Debug, Serialize)]
struct OrderReport {
    order: usize,
    residual_norm: f64,
    condition: f64,
    rows: usize,
    pairs: usize,
    relative_error: Option<f64>,
}

/// `∂^k c̃(·, 0)` in the gauge `c̃(·, 0) = 1`, if configured.
fn true_coefficient(cfg: &ExperimentConfig, order: usize, grid: Grid) -> Result<Option<ScalarField>> {
    let src = match order {
        3 => &cfg.ctilde3,
        4 => &cfg.ctilde4,
        _ => &None,
    };
    let Some(src) = src else { return Ok(None) };
    let phi = expr(src, &format!("ctilde{order}"))?;
    Ok(Some(ScalarField::from_fn(grid, |x, y| phi.eval(x, y))))
}

fn write_recovery(
    cfg: &ExperimentConfig,
    result: &RecoveryResult,
    manifest: &mut RunManifest,
    dir: &Path,
) -> Result<Vec<String>> {
    let grid = cfg.grid()?;
    let mut files = Vec::new();
    let mut reports = Vec::new();
    for d in &result.diagnostics {
        let est = &result.coeff_fields[&d.order];
        let truth = true_coefficient(cfg, d.order, grid)?.unwrap_or_else(|| ScalarField::zeros(grid));
        let err = est.sub(&truth).interior_only().map(f64::abs);
        let rel = if truth.l2_interior() > 0.0 { Some(relative_l2_interior(est, &truth)?) } else { None };
        let name = format!("recovered_order{}.csv", d.order);
        emit_plot_data(&[("true", &truth), ("recovered", est), ("abs_error", &err)], &dir.join(&name))?;
        files.push(name);
        manifest.residual_norms.insert(format!("order{}_residual", d.order), d.residual_norm);
        if let Some(r) = rel {
            manifest.residual_norms.insert(format!("order{}_relative_error", d.order), r);
        }
        reports.push(OrderReport {
            order: d.order,
            residual_norm: d.residual_norm,
            condition: d.condition,
            rows: d.rows,
            pairs: d.pairs,
            relative_error: rel,
        });
    }
    write_file(&dir.join("diagnostics.json"), &serde_json::to_string_pretty(&reports)?)?;
    files.push("diagnostics.json".into());
    Ok(files)
}

fn recover_stage(cfg: &ExperimentConfig, manifest: &mut RunManifest) -> Result<RecoveryResult> {
    let grid = cfg.grid()?;
    let gamma = cfg.gamma()?;
    let base = cfg.model_spec()?;
    let model = base.sample(grid)?;
    let measured = cfg.measured_spec()?.sample(grid)?;
    let lin = Linearization::new(&model)?;
    let family = solution_family(cfg, &lin, gamma)?;
    let v0s = adjoint_family(&model, gamma, cfg.adjoints)?;
    let max_order = *cfg.orders.iter().max().context("no recovery order configured")?;
    let solver = cfg.solver();
    let opts = cfg.recovery_options()?;
    manifest.timed("recover", || {
        Ok(recover_sequence(&base, &measured, &family, &v0s, max_order, cfg.recovery_eps, &solver, &opts)?)
    })
}

pub fn run_recover(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let dir = cfg.out_dir();
    let mut manifest = RunManifest::new("recover", cfg);
    let result = recover_stage(cfg, &mut manifest)?;
    let files = write_recovery(cfg, &result, &mut manifest, &dir)?;
    finish(manifest, &dir, &files)
}

pub struct PipelineOutput {
    pub manifest: RunManifest,
    pub surface: SurfaceGradientEstimate,
    pub recovery: RecoveryResult,
}

/// DN data of both metrics, then the surface gradient of `log c̃`, then the
/// Taylor coefficients of orders `3..=max(orders)`.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let dir = cfg.out_dir();
    let mut manifest = RunManifest::new("pipeline", cfg);
    let grid = cfg.grid()?;
    let gamma = cfg.gamma()?;
    let model = model_metric(cfg, grid)?;
    let measured = cfg.measured_spec()?.sample(grid)?;
    let solver = cfg.solver();
    let mut files = Vec::new();

    let family = scaled_family(cfg, grid, gamma)?;
    let (dn_model, dn_measured) = manifest
        .timed("dn", || Ok((dn_batch(&model, &family, gamma, &solver)?, dn_batch(&measured, &family, gamma, &solver)?)))
        .context("stage dn")?;
    manifest
        .residual_norms
        .insert("newton_final_max".into(), worst_residual(&dn_model).max(worst_residual(&dn_measured)));
    let mut rows = dn_rows(&grid, &dn_model);
    for (row, rec) in rows.iter_mut().zip(dn_measured.iter().flat_map(|r| r.neumann.values.iter())) {
        row.push(num(*rec));
    }
    write_table(&dir.join("pipeline_dn.csv"), &["datum", "node", "x1", "x2", "f", "model", "measured"], &rows)?;
    files.push("pipeline_dn.csv".into());

    let surface = manifest
        .timed("surface_gradient", || {
            let data: Vec<BoundaryData> = fourier_data(grid, gamma, cfg.modes.max(4))?.into_iter().skip(1).collect();
            let d0 = first_order_dn(&model, &data, gamma)?;
            let d1 = first_order_dn(&measured, &data, gamma)?;
            Ok(recover_surface_gradient(&model, &data, &d0, &d1, gamma, &SurfaceGradientOptions::default())?)
        })
        .context("stage surface_gradient")?;
    manifest.residual_norms.insert("surface_gradient_residual".into(), surface.residual_norm);
    manifest.residual_norms.insert("delta_x_max".into(), surface.delta_x.max_abs());
    emit_plot_data(
        &[("dx1", &surface.delta_x.x1), ("dx2", &surface.delta_x.x2), ("log_ctilde", &surface.log_ctilde)],
        &dir.join("surface_gradient.csv"),
    )?;
    files.push("surface_gradient.csv".into());

    let recovery = recover_stage(cfg, &mut manifest).context("stage recover")?;
    files.extend(write_recovery(cfg, &recovery, &mut manifest, &dir)?);
    let manifest = finish(manifest, &dir, &files)?;
    Ok(PipelineOutput { manifest, surface, recovery })
}
