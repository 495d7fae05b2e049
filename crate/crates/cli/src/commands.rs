use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use sobolis::densities::{
    beta_density, product_density, uniform_density, BetaParams, Bounds, DensityRef, WeightedDesign,
};
use sobolis::estimators::{
    double_loop_eta, effective_sample_size, path_eta, reweighted_outputs_with, sobol_from_eta,
    sobol_from_eta_weighted, subset_path, EstimateReport,
};
use sobolis::givendata::{
    eta_sweep, load_dataset, standardize, theta_eta, write_sweep, write_sweep_to, SweepMode,
    SweepSpec, ThetaConfig,
};
use sobolis::models::{
    gfunction_eta, gfunction_moments, gfunction_moments_deterministic,
    gfunction_moments_with_factor, synthetic_dataset, ConditionalMoments, GFunctionSpec, Model,
};
use sobolis::quadrature::QuadSpec;
use sobolis::validation::{run_validation, ValidationConfig};
use sobolis::variance_opt::{
    beta_variance_surface, cv_curve, optimal_marginal, s_function, sigma_opt_p, sigma_opt_q,
    zero_variance_density, CvMethod, SCase, VarianceReport,
};
use sobolis::SubsetIndex;

use crate::{
    parse, CaseKind, Chain, EstimateArgs, EstimatorKind, ExitStatus, GenerateArgs, ModelKind,
    MomentsKind, QuadArgs, SweepArgs, ValidateArgs, VarianceArgs,
};

/// Complement factor `E[phi^2 | x_u] / m_u^2` of the published constant chain.
const PUBLISHED_FACTOR: f64 = 99.0 / 96.0;

/// Grid points per axis for the pointwise checks printed by `variance`.
const ZERO_CHECK_GRID: usize = 21;
const SHAPE_CHECK_GRID: usize = 50;

fn unit(k: usize) -> DensityRef {
    Arc::new(uniform_density(Bounds::unit(k)))
}

fn beta_on_unit(p: BetaParams) -> Result<DensityRef> {
    Ok(Arc::new(beta_density(p, 0.0, 1.0)?))
}

fn beta_product(p: BetaParams, dim: usize) -> Result<DensityRef> {
    if dim == 1 {
        return beta_on_unit(p);
    }
    let marginals = (0..dim)
        .map(|_| beta_on_unit(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(Arc::new(product_density(marginals)?))
}

fn require_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.ok_or_else(|| anyhow!("--seed is required for {what}"))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn csv_sink(out: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

/// Prints the summary to stdout when the CSV went to a file, else to stderr.
fn emit_summary(summary: &serde_json::Value, csv_to_file: bool) -> Result<()> {
    if csv_to_file {
        print_json(summary)
    } else {
        eprintln!("{}", serde_json::to_string_pretty(summary)?);
        Ok(())
    }
}

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

fn gfun_spec(model: Option<ModelKind>, args: &crate::ModelArgs) -> Result<GFunctionSpec> {
    match model {
        Some(ModelKind::Gfun) => args.spec(),
        None => bail!("either --model or --data is required"),
    }
}

fn is_benchmark(spec: &GFunctionSpec, u: &SubsetIndex) -> bool {
    spec.a() == [1.0, 2.0, 3.0] && u.one_based() == [1, 2]
}

fn moments_for(
    spec: &GFunctionSpec,
    u: &SubsetIndex,
    q: &QuadArgs,
    force_deterministic: bool,
) -> Result<ConditionalMoments> {
    let deterministic = force_deterministic || q.moments == MomentsKind::Deterministic;
    Ok(match (q.chain, deterministic) {
        (Chain::Oracle, false) => gfunction_moments(spec, u)?,
        (Chain::Oracle, true) => gfunction_moments_deterministic(spec, u)?,
        (Chain::Published, false) => {
            if !is_benchmark(spec, u) {
                bail!("--chain published is defined only for a = 1,2,3 and u = 1,2");
            }
            gfunction_moments_with_factor(spec, u, PUBLISHED_FACTOR)?
        }
        (Chain::Published, true) => bail!("--chain published applies to averaged moments only"),
    })
}

fn chain_name(c: Chain) -> &'static str {
    match c {
        Chain::Oracle => "oracle",
        Chain::Published => "published",
    }
}

#[derive(Serialize)]
struct EstimateOutput {
    u: Vec<usize>,
    #[serde(flatten)]
    report: EstimateReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    sobol_index: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampling: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<String>,
}

pub fn estimate(a: EstimateArgs) -> Result<()> {
    match &a.data {
        Some(path) => estimate_data(&a, path),
        None => estimate_model(&a),
    }
}

fn estimate_model(a: &EstimateArgs) -> Result<()> {
    let spec = gfun_spec(a.model.model, &a.model)?;
    if a.theta.is_some() || a.theta_all.is_some() || a.lower.is_some() {
        bail!("--theta, --theta-all and --lower/--upper apply to --data only");
    }
    let k = spec.k();
    let u = SubsetIndex::parse(k, &a.u)?;
    let n = a.n.ok_or_else(|| anyhow!("--n is required with --model"))?;
    let seed = require_seed(a.seed, "estimate --model")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::gfunction(&spec);
    let p = unit(k);
    let exact = gfunction_eta(&spec, &u)?;

    let (report, sampling) = match a.estimator {
        EstimatorKind::DoubleLoop => {
            if a.q_beta.is_some() {
                bail!("--q-beta is not available with the double-loop estimator");
            }
            let r = double_loop_eta(&model, p.as_ref(), &u, n, a.n_inner, &mut rng)?;
            (r, None)
        }
        EstimatorKind::Rank => {
            let q_params = a.q_beta.as_deref().map(parse::beta_pair).transpose()?;
            let (q_u, q) = match q_params {
                Some(bp) => {
                    let axes = (0..k)
                        .map(|j| {
                            if u.contains(j) {
                                beta_on_unit(bp)
                            } else {
                                Ok(unit(1))
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let q: DensityRef = Arc::new(product_density(axes)?);
                    (beta_product(bp, u.len())?, q)
                }
                None => (unit(u.len()), p.clone()),
            };
            let data = synthetic_dataset(&model, q.as_ref(), n, &mut rng)?;
            let design = WeightedDesign::new(p.as_ref(), &u, q_u, None)?;
            let z = reweighted_outputs_with(&data, &design)?;
            let tag = if u.len() == 1 { "rank" } else { "nn_rank" };
            let mut r = path_eta(&z, &subset_path(&data.inputs_of(&u))?, tag)?;
            if q_params.is_some() {
                let w = data
                    .x()
                    .rows()
                    .map(|x| Ok(design.weight(x)?.w_total))
                    .collect::<sobolis::Result<Vec<_>>>()?;
                r.weights_ess = Some(effective_sample_size(&w));
            }
            (r, q_params.map(|bp| format!("{bp} on u")))
        }
    };
    // The g-function has mean 1 under the uniform law.
    let sobol = (report.value - 1.0) / spec.variance();
    print_json(&EstimateOutput {
        u: u.one_based(),
        report,
        sobol_index: Some(sobol),
        exact_eta: Some(exact),
        sampling,
        theta: None,
    })
}

fn estimate_data(a: &EstimateArgs, path: &Path) -> Result<()> {
    if a.q_beta.is_some() || a.estimator == EstimatorKind::DoubleLoop {
        bail!("--q-beta and the double-loop estimator need --model");
    }
    let bounds = parse::bounds(a.lower.as_deref(), a.upper.as_deref())?;
    let raw = load_dataset(path, bounds)?;
    let data = standardize(&raw, raw.bounds())?;
    let k = data.k();
    let u = SubsetIndex::parse(k, &a.u)?;
    let theta = match (&a.theta_all, &a.theta) {
        (Some(t), _) => ThetaConfig::all(k, parse::beta_pair(t)?),
        (None, Some(t)) => {
            let params = parse::beta_pairs(t)?;
            if params.len() != k {
                bail!(
                    "--theta lists {} pairs but the dataset has {k} inputs",
                    params.len()
                );
            }
            ThetaConfig::new(params)?
        }
        (None, None) => ThetaConfig::baseline(k),
    };
    let (report, w) = theta_eta(&data, &u, &theta)?;
    let sobol = if theta.is_baseline() {
        sobol_from_eta(report.value, data.y())
    } else {
        sobol_from_eta_weighted(report.value, data.y(), &w)
    };
    let sobol = match sobol {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("S_u not available: {e}");
            None
        }
    };
    print_json(&EstimateOutput {
        u: u.one_based(),
        report,
        sobol_index: sobol,
        exact_eta: None,
        sampling: None,
        theta: Some(theta.to_string()),
    })
}

pub fn variance(a: VarianceArgs) -> Result<()> {
    let spec = gfun_spec(a.model.model, &a.model)?;
    let k = spec.k();
    let u = SubsetIndex::parse(k, &a.u)?;
    let quad = QuadSpec::split(a.quad.order);
    let p = unit(k);
    let t = &a.target;
    let zero = t.case == Some(CaseKind::Zero);
    let m = moments_for(&spec, &u, &a.quad, zero)?;
    let baseline = sigma_opt_p(&m, p.as_ref(), quad)?;
    let reduction = |r: &VarianceReport| 1.0 - r.sigma_sq / baseline.sigma_sq;
    let head = json!({
        "u": u.one_based(),
        "a": spec.a(),
        "moments": m.label(),
        "chain": chain_name(a.quad.chain),
        "order": a.quad.order,
    });
    let body = if let Some(bp) = &t.beta {
        let bp = parse::beta_pair(bp)?;
        let q_u = beta_product(bp, u.len())?;
        let r = sigma_opt_q(&m, p.as_ref(), q_u.as_ref(), None, quad)?;
        let cell = beta_variance_surface(&m, p.as_ref(), &[bp.alpha], &[bp.beta], quad)?;
        let divergent = cell.cells[0].divergent;
        if divergent {
            log::warn!(
                "{bp}: the variance integral diverges; the quadrature value is not meaningful"
            );
        }
        json!({
            "target": format!("{bp} on each input of u"),
            "report": r,
            "divergent": divergent,
            "baseline": baseline,
            "reduction": reduction(&r),
        })
    } else if let Some(case) = t.case {
        match case {
            CaseKind::A | CaseKind::B => {
                let sc = if case == CaseKind::A {
                    SCase::A
                } else {
                    SCase::B
                };
                let s = s_function(&m, p.as_ref(), sc, quad)?;
                let (_, r) = optimal_marginal(unit(u.len()), &s, quad)?;
                let mut out = json!({
                    "target": format!("optimal marginal, case {sc}"),
                    "report": r,
                    "baseline": baseline,
                    "reduction": reduction(&r),
                });
                if u.len() <= 2 {
                    let (lo, hi) = s_over_m4_range(&s, &m, u.len());
                    out["s_over_m4"] = json!({ "min": lo, "max": hi, "grid": SHAPE_CHECK_GRID });
                }
                out
            }
            CaseKind::Zero => {
                let model = Model::gfunction(&spec);
                let z = zero_variance_density(&model, &m, p.as_ref(), quad)?;
                let r = sigma_opt_q(&m, p.as_ref(), z.marginal(), z.design().q_cond(), quad)?;
                if k > 4 {
                    bail!("the pointwise check is limited to k <= 4");
                }
                let dev = max_zero_deviation(&z, k)?;
                json!({
                    "target": "zero-variance density",
                    "report": r,
                    "eta": z.eta(),
                    "max_relative_deviation": dev,
                    "grid": ZERO_CHECK_GRID,
                    "baseline": baseline,
                })
            }
        }
    } else {
        json!({ "target": "p", "report": baseline })
    };
    let mut out = head;
    for (key, v) in body.as_object().expect("object").iter() {
        out[key] = v.clone();
    }
    print_json(&out)
}

/// Cell-centred tensor grid with `g` points per axis.
fn grid_points(g: usize, dim: usize) -> impl Iterator<Item = Vec<f64>> {
    (0..g.pow(dim as u32)).map(move |mut idx| {
        let mut x = vec![0.0; dim];
        for v in x.iter_mut() {
            *v = ((idx % g) as f64 + 0.5) / g as f64;
            idx /= g;
        }
        x
    })
}

fn max_zero_deviation(z: &sobolis::variance_opt::ZeroVarianceDensity, k: usize) -> Result<f64> {
    let eta = z.eta();
    let mut worst = 0.0f64;
    for x in grid_points(ZERO_CHECK_GRID, k) {
        worst = worst.max((z.product(&x)? / eta - 1.0).abs());
    }
    Ok(worst)
}

fn s_over_m4_range(
    s: &sobolis::variance_opt::SFunction,
    m: &ConditionalMoments,
    dim: usize,
) -> (f64, f64) {
    grid_points(SHAPE_CHECK_GRID, dim)
        .map(|x| s.eval(&x) / m.m_u(&x).powi(4))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r), hi.max(r))
        })
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    match &a.data {
        Some(path) => sweep_data(&a, path),
        None => {
            let spec = gfun_spec(a.model.model, &a.model)?;
            match (a.surface, a.cv_curve) {
                (true, _) => sweep_surface(&a, &spec),
                (_, true) => sweep_cv(&a, &spec),
                _ => bail!("model sweeps need --surface or --cv-curve"),
            }
        }
    }
}

fn sweep_data(a: &SweepArgs, path: &Path) -> Result<()> {
    if a.surface || a.cv_curve {
        bail!("--surface and --cv-curve need --model");
    }
    let bounds = parse::bounds(a.lower.as_deref(), a.upper.as_deref())?;
    let raw = load_dataset(path, bounds)?;
    let data = standardize(&raw, raw.bounds())?;
    let u = SubsetIndex::parse(data.k(), &a.u)?;
    let mode = match (a.marginal, &a.global) {
        (Some(j), _) => SweepMode::Marginal { target: j },
        (None, Some(g)) if g.trim().is_empty() || g.trim() == "all" => {
            SweepMode::Global { inputs: vec![] }
        }
        (None, Some(g)) => SweepMode::Global {
            inputs: parse::indices(g)?,
        },
        (None, None) => bail!("data sweeps need --marginal J or --global"),
    };
    let grid_arg = |g: &Option<String>, name: &str| -> Result<Vec<f64>> {
        parse::grid(
            g.as_deref()
                .ok_or_else(|| anyhow!("--{name} is required"))?,
        )
    };
    let spec = SweepSpec {
        mode,
        alpha_grid: grid_arg(&a.alpha_grid, "alpha-grid")?,
        beta_grid: grid_arg(&a.beta_grid, "beta-grid")?,
        u: u.clone(),
    };
    let res = eta_sweep(&data, &spec)?;
    match &a.out {
        Some(p) => write_sweep(&res, p)?,
        None => write_sweep_to(&res, io::stdout().lock())?,
    }
    let (lo, hi) = res
        .entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.eta_hat), hi.max(e.eta_hat))
        });
    emit_summary(
        &json!({
            "u": u.one_based(),
            "rows": res.entries.len(),
            "k": res.k,
            "n": res.n,
            "estimator": res.estimator,
            "baseline_eta": res.baseline_eta,
            "baseline_stderr": res.baseline_stderr,
            "eta_range": [lo, hi],
            "low_ess_rows": res.entries.iter().filter(|e| e.low_ess).count(),
        }),
        a.out.is_some(),
    )
}

fn sweep_surface(a: &SweepArgs, spec: &GFunctionSpec) -> Result<()> {
    let u = SubsetIndex::parse(spec.k(), &a.u)?;
    let grid = parse::grid(a.grid.as_deref().unwrap_or("0.4:2:17"))?;
    let alpha = match &a.alpha_grid {
        Some(g) => parse::grid(g)?,
        None => grid.clone(),
    };
    let beta = match &a.beta_grid {
        Some(g) => parse::grid(g)?,
        None => grid,
    };
    let m = moments_for(spec, &u, &a.quad, false)?;
    let quad = QuadSpec::split(a.quad.order);
    let s = beta_variance_surface(&m, unit(spec.k()).as_ref(), &alpha, &beta, quad)?;
    let mut w = csv_sink(a.out.as_ref())?;
    writeln!(w, "alpha,beta,sigma_sq,cv,divergent,argmin")?;
    for (i, c) in s.cells.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            f(c.alpha),
            f(c.beta),
            f(c.sigma_sq),
            f(c.cv),
            c.divergent as u8,
            (s.argmin == Some(i)) as u8
        )?;
    }
    w.flush()?;
    emit_summary(
        &json!({
            "u": u.one_based(),
            "chain": chain_name(a.quad.chain),
            "cells": s.cells.len(),
            "divergent_cells": s.cells.iter().filter(|c| c.divergent).count(),
            "baseline": s.baseline,
            "argmin": s.best(),
            "reduction": s.reduction(),
        }),
        a.out.is_some(),
    )
}

fn sweep_cv(a: &SweepArgs, spec: &GFunctionSpec) -> Result<()> {
    let u = SubsetIndex::parse(spec.k(), &a.u)?;
    let m = moments_for(spec, &u, &a.quad, false)?;
    let quad = QuadSpec::split(a.quad.order);
    let p = unit(spec.k());
    let s = s_function(&m, p.as_ref(), SCase::A, quad)?;
    let p_u = unit(u.len());
    let (q, _) = optimal_marginal(p_u.clone(), &s, quad)?;
    let q: DensityRef = Arc::new(q);
    let ts = parse::grid(&a.t_grid)?;
    let (method, seed) = match a.mc {
        Some(n) => (CvMethod::MonteCarlo { n }, require_seed(a.seed, "--mc")?),
        None => (CvMethod::Quadrature(quad), a.seed.unwrap_or(0)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = cv_curve(&p_u, &q, &s, s.eta(), &ts, method, &mut rng)?;
    let mut w = csv_sink(a.out.as_ref())?;
    writeln!(w, "t,cv,sigma_sq,stderr")?;
    for pt in &pts {
        let se = pt.stderr.map(f).unwrap_or_default();
        writeln!(w, "{},{},{},{se}", f(pt.t), f(pt.cv), f(pt.sigma_sq))?;
    }
    w.flush()?;
    let first = pts.first().map(|p| p.cv);
    let last = pts.last().map(|p| p.cv);
    emit_summary(
        &json!({
            "u": u.one_based(),
            "chain": chain_name(a.quad.chain),
            "method": if a.mc.is_some() { "mc" } else { "quadrature" },
            "points": pts.len(),
            "cv_first": first,
            "cv_last": last,
            "ratio": first.zip(last).map(|(a, b)| b / a),
            "strictly_decreasing": pts.windows(2).all(|w| w[1].cv < w[0].cv),
        }),
        a.out.is_some(),
    )
}

pub fn validate(a: ValidateArgs) -> Result<()> {
    let report = run_validation(ValidationConfig {
        quick: a.quick,
        seed: a.seed,
    });
    for c in &report.checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    if let Some(path) = &a.report {
        let file =
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &report)?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        eprintln!(
            "validation failed: {failed} of {} checks",
            report.checks.len()
        );
        Err(ExitStatus(4).into())
    }
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let spec = gfun_spec(a.model.model, &a.model)?;
    let model = match &a.noise {
        Some(list) => Model::gfunction_with_noise(&spec, &parse::indices(list)?)?,
        None => Model::gfunction(&spec),
    };
    let dim = model.dim_x();
    let p: DensityRef = match &a.theta {
        Some(t) => {
            let params = parse::beta_pairs(t)?;
            if params.len() != dim {
                bail!(
                    "--theta lists {} pairs but the model has {dim} inputs",
                    params.len()
                );
            }
            let axes = params
                .into_iter()
                .map(beta_on_unit)
                .collect::<Result<Vec<_>>>()?;
            Arc::new(product_density(axes)?)
        }
        None => unit(dim),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let data = synthetic_dataset(&model, p.as_ref(), a.n, &mut rng)?;
    let mut w = csv_sink(Some(&a.out))?;
    let header = data.column_names().map(|c| c.join(",")).unwrap_or_default();
    writeln!(w, "{header}")?;
    for (x, y) in data.x().rows().zip(data.y()) {
        let row: Vec<String> = x
            .iter()
            .chain(std::iter::once(y))
            .map(|v| v.to_string())
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
