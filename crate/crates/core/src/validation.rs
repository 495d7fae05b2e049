//! Self-check suite on the g-function benchmark, run by `sobolis validate`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::densities::{
    beta_density, normalize_density, product_density, uniform_density, BetaParams, Bounds,
    ConditionalRef, DensityRef,
};
use crate::error::Result;
use crate::estimators::{rank_eta, reweighted_outputs};
use crate::givendata::{eta_sweep, SweepMode, SweepSpec};
use crate::models::{
    gfunction_eta, gfunction_moments, gfunction_moments_deterministic, synthetic_dataset,
    GFunctionSpec, Model,
};
use crate::quadrature::{integrate, QuadSpec};
use crate::subset::SubsetIndex;
use crate::variance_opt::{
    beta_variance_surface, cv_curve, optimal_conditional, optimal_marginal, ratio_functional,
    s_function, sigma_opt_p, sigma_opt_q, zero_variance_density, CvMethod, SCase,
};

#[derive(Clone, Copy, Debug)]
pub struct ValidationConfig {
    /// Smaller samples and grids, wider bands.
    pub quick: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub quick: bool,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        detail,
    }
}

fn unit(k: usize) -> DensityRef {
    Arc::new(uniform_density(Bounds::unit(k)))
}

fn beta(a: f64, b: f64) -> Result<DensityRef> {
    Ok(Arc::new(beta_density(BetaParams::new(a, b)?, 0.0, 1.0)?))
}

/// Runs every check; numerical errors inside a check count as failures.
pub fn run_validation(cfg: ValidationConfig) -> ValidationReport {
    type Check = fn(&ValidationConfig) -> Result<CheckResult>;
    let checks: [(&str, Check); 8] = [
        ("exact_eta", exact_eta),
        ("reweighted_rank_consistency", reweighted_rank_consistency),
        ("ratio_functional_minimality", ratio_functional_minimality),
        ("jensen_chain", jensen_chain),
        ("zero_variance_constancy", zero_variance_constancy),
        ("cv_curve_monotone", cv_monotone),
        ("beta_surface_argmin", surface_argmin),
        ("reweighting_vs_resampling", reweighting_vs_resampling),
    ];
    let checks = checks
        .iter()
        .map(|(name, f)| {
            log::info!("validate: {name}");
            f(&cfg).unwrap_or_else(|e| check(name, false, format!("error: {e}")))
        })
        .collect();
    ValidationReport {
        quick: cfg.quick,
        seed: cfg.seed,
        checks,
    }
}

fn benchmark() -> (GFunctionSpec, SubsetIndex) {
    (
        GFunctionSpec::benchmark(),
        SubsetIndex::new(3, &[1, 2]).expect("valid subset"),
    )
}

fn exact_eta(_: &ValidationConfig) -> Result<CheckResult> {
    let (spec, u) = benchmark();
    let m = gfunction_moments(&spec, &u)?;
    let rule = QuadSpec::split(128).rule(&Bounds::unit(2))?;
    let q = integrate(|x| m.m_u(x).powi(2), &rule)?;
    let exact = gfunction_eta(&spec, &u)?;
    let err = (q - 91.0 / 81.0).abs().max((exact - 91.0 / 81.0).abs());
    Ok(check(
        "exact_eta",
        err < 1e-10,
        format!("closed form {exact:.12}, quadrature {q:.12}"),
    ))
}

fn reweighted_rank_consistency(cfg: &ValidationConfig) -> Result<CheckResult> {
    let (spec, _) = benchmark();
    let u = SubsetIndex::new(3, &[1])?;
    let model = Model::gfunction(&spec);
    let p = unit(3);
    let n = if cfg.quick { 20_000 } else { 100_000 };
    let band = if cfg.quick { 5.0 } else { 4.0 };
    let exact = gfunction_eta(&spec, &u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ok = true;
    let mut parts = Vec::new();
    for (a, b) in [(2.0, 2.0), (0.8, 0.8), (2.0, 1.0)] {
        let q_u = beta(a, b)?;
        let q: DensityRef = Arc::new(product_density(vec![q_u.clone(), unit(1), unit(1)])?);
        let data = synthetic_dataset(&model, q.as_ref(), n, &mut rng)?;
        let z = reweighted_outputs(&data, &u, p.as_ref(), q_u, None)?;
        let r = rank_eta(&z, &data.x().column(0))?;
        let dev = (r.value - exact).abs() / r.stderr;
        ok &= dev < band;
        parts.push(format!("Beta({a},{b}): {:.5} ({dev:.2} se)", r.value));
    }
    Ok(check(
        "reweighted_rank_consistency",
        ok,
        format!("target {exact:.5}; {}", parts.join("; ")),
    ))
}

fn ratio_functional_minimality(_: &ValidationConfig) -> Result<CheckResult> {
    let (spec, u) = benchmark();
    let m = gfunction_moments(&spec, &u)?;
    let quad = QuadSpec::default();
    let mc = m.clone();
    let g = normalize_density(move |x| mc.m_u(x).powi(2), Bounds::unit(2), quad, "g")?;
    let eta = g.constant();
    let gf = |x: &[f64]| m.m_u(x).powi(2) / eta;
    let g: DensityRef = Arc::new(g);
    let trials: Vec<DensityRef> = vec![
        g.clone(),
        unit(2),
        Arc::new(product_density(vec![beta(0.7, 0.7)?, beta(0.7, 0.7)?])?),
        Arc::new(product_density(vec![beta(1.5, 1.5)?, beta(0.9, 1.2)?])?),
        Arc::new(crate::densities::interpolate_density(
            unit(2),
            g.clone(),
            0.5,
        )?),
    ];
    let values = trials
        .iter()
        .map(|q| ratio_functional(gf, q.as_ref(), quad))
        .collect::<Result<Vec<_>>>()?;
    let min_at_g = values[1..].iter().all(|v| *v > values[0]);
    let floor = values.iter().all(|v| *v >= 1.0 - 1e-10);
    Ok(check(
        "ratio_functional_minimality",
        min_at_g && floor,
        format!("functional values {values:.6?}"),
    ))
}

fn jensen_chain(_: &ValidationConfig) -> Result<CheckResult> {
    let (spec, u) = benchmark();
    let m = gfunction_moments_deterministic(&spec, &u)?;
    let p = unit(3);
    let quad = QuadSpec::default();
    let s_ref = sigma_opt_p(&m, p.as_ref(), quad)?.sigma_sq;
    let sa = s_function(&m, p.as_ref(), SCase::A, quad)?;
    let (_, ra) = optimal_marginal(unit(2), &sa, quad)?;
    let sb = s_function(&m, p.as_ref(), SCase::B, quad)?;
    let (qb, _) = optimal_marginal(unit(2), &sb, quad)?;
    let qc: ConditionalRef = Arc::new(optimal_conditional(&m, p.as_ref(), quad)?);
    let s_star = sigma_opt_q(&m, p.as_ref(), &qb, Some(&qc), quad)?.sigma_sq;
    let ok = ra.sigma_sq - s_star > 1e-6 && s_ref - ra.sigma_sq > 1e-6;
    Ok(check(
        "jensen_chain",
        ok,
        format!(
            "sigma^2(q*) = {s_star:.3e} <= sigma^2(q_u* p_bar) = {:.6} <= sigma^2(p) = {s_ref:.6}",
            ra.sigma_sq
        ),
    ))
}

fn zero_variance_constancy(cfg: &ValidationConfig) -> Result<CheckResult> {
    let (spec, u) = benchmark();
    let m = gfunction_moments_deterministic(&spec, &u)?;
    let model = Model::gfunction(&spec);
    let z = zero_variance_density(&model, &m, unit(3).as_ref(), QuadSpec::default())?;
    let eta = gfunction_eta(&spec, &u)?;
    let g = if cfg.quick { 11 } else { 21 };
    let mut worst = 0.0f64;
    for i in 0..g {
        for j in 0..g {
            for k in 0..g {
                let x = [i, j, k].map(|v| (v as f64 + 0.5) / g as f64);
                worst = worst.max((z.product(&x)? / eta - 1.0).abs());
            }
        }
    }
    Ok(check(
        "zero_variance_constancy",
        worst < 1e-10,
        format!("max relative deviation {worst:.3e} on a {g}^3 grid"),
    ))
}

fn cv_monotone(cfg: &ValidationConfig) -> Result<CheckResult> {
    let (spec, u) = benchmark();
    let m = gfunction_moments(&spec, &u)?;
    let quad = QuadSpec::default();
    let s = s_function(&m, unit(3).as_ref(), SCase::A, quad)?;
    let (q, _) = optimal_marginal(unit(2), &s, quad)?;
    let q: DensityRef = Arc::new(q);
    let ts: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pts = cv_curve(
        &unit(2),
        &q,
        &s,
        s.eta(),
        &ts,
        CvMethod::Quadrature(quad),
        &mut rng,
    )?;
    let decreasing = pts.windows(2).all(|w| w[1].cv < w[0].cv);
    let ratio = pts[10].cv / pts[0].cv;
    Ok(check(
        "cv_curve_monotone",
        decreasing && ratio < 0.5,
        format!(
            "CV(0) = {:.4}, CV(1) = {:.4}, ratio {ratio:.3}",
            pts[0].cv, pts[10].cv
        ),
    ))
}

fn surface_argmin(cfg: &ValidationConfig) -> Result<CheckResult> {
    let (spec, u) = benchmark();
    let m = gfunction_moments(&spec, &u)?;
    let grid: Vec<f64> = if cfg.quick {
        vec![0.4, 0.6, 0.7, 0.8, 1.0, 1.4]
    } else {
        (0..17).map(|i| 0.4 + 0.1 * i as f64).collect()
    };
    let s = beta_variance_surface(&m, unit(3).as_ref(), &grid, &grid, QuadSpec::default())?;
    let best = s.best().cloned();
    let red = s.reduction().unwrap_or(0.0);
    let ok = best.as_ref().is_some_and(|b| {
        (0.5..=0.9).contains(&b.alpha) && (b.alpha - b.beta).abs() < 1e-9 && red >= 0.4
    });
    Ok(check(
        "beta_surface_argmin",
        ok,
        format!(
            "argmin {:?}, reduction {:.1}%",
            best.map(|b| (b.alpha, b.beta, b.sigma_sq)),
            100.0 * red
        ),
    ))
}

fn reweighting_vs_resampling(cfg: &ValidationConfig) -> Result<CheckResult> {
    let (spec, _) = benchmark();
    let u = SubsetIndex::new(3, &[1])?;
    let model = Model::gfunction(&spec);
    let n = if cfg.quick { 20_000 } else { 100_000 };
    let band = if cfg.quick { 5.0 } else { 4.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let base = synthetic_dataset(&model, unit(3).as_ref(), n, &mut rng)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (a, b) in [(0.7, 0.7), (1.5, 1.5), (2.0, 1.2)] {
        let spec_sweep = SweepSpec {
            mode: SweepMode::Marginal { target: 1 },
            alpha_grid: vec![a],
            beta_grid: vec![b],
            u: u.clone(),
        };
        let e = &eta_sweep(&base, &spec_sweep)?.entries[0];
        let p_theta: DensityRef = Arc::new(product_density(vec![beta(a, b)?, unit(1), unit(1)])?);
        let fresh = synthetic_dataset(&model, p_theta.as_ref(), n, &mut rng)?;
        let r = rank_eta(fresh.y(), &fresh.x().column(0))?;
        let se = (e.stderr.powi(2) + r.stderr.powi(2)).sqrt();
        let dev = (e.eta_hat - r.value).abs() / se;
        ok &= dev < band;
        parts.push(format!(
            "theta1=({a},{b}): reweighted {:.4}, resampled {:.4} ({dev:.2} se)",
            e.eta_hat, r.value
        ));
    }
    Ok(check("reweighting_vs_resampling", ok, parts.join("; ")))
}
