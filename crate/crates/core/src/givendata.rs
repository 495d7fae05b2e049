//! Reverse importance sampling over a fixed dataset.
//!
//! Inputs are standardized to the unit cube, where the data are treated as a
//! draw from the uniform product. Any product of Beta marginals `p_theta` is
//! then reachable by reweighting, without new model runs.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::densities::{
    beta_density, product_density, uniform_density, Bounds, ConditionalRef, DensityRef,
    Unconditional, WeightedDesign,
};
use crate::error::{Error, Result};
use crate::estimators::{
    effective_sample_size, path_eta, reweighted_outputs_with, reweighted_terms, subset_path,
    Dataset, EstimateReport,
};
use crate::exec;
use crate::points::PointSet;
use crate::subset::SubsetIndex;

pub use crate::densities::BetaParams;

/// Inward clamp applied to standardized inputs.
pub const STD_EPS: f64 = 1e-9;

/// Entries whose effective sample size falls below this fraction of `n` are flagged.
pub const LOW_ESS_FRACTION: f64 = 0.05;

/// Beta shape parameters per input on the standardized cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaConfig {
    pub params: Vec<BetaParams>,
}

impl ThetaConfig {
    pub fn new(params: Vec<BetaParams>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::invalid("theta needs at least one input"));
        }
        Ok(ThetaConfig { params })
    }

    /// Beta(1, 1) on every input.
    pub fn baseline(k: usize) -> Self {
        ThetaConfig {
            params: vec![BetaParams::uniform(); k],
        }
    }

    /// The same `(alpha, beta)` on every input.
    pub fn all(k: usize, params: BetaParams) -> Self {
        ThetaConfig {
            params: vec![params; k],
        }
    }

    /// Baseline except for the listed one-based inputs.
    pub fn with_inputs(k: usize, inputs: &[usize], params: BetaParams) -> Result<Self> {
        let mut t = ThetaConfig::baseline(k);
        for &j in inputs {
            if j == 0 || j > k {
                return Err(Error::invalid(format!("input {j} outside 1..={k}")));
            }
            t.params[j - 1] = params;
        }
        Ok(t)
    }

    pub fn k(&self) -> usize {
        self.params.len()
    }

    pub fn is_baseline(&self) -> bool {
        self.params.iter().all(|p| p.is_uniform())
    }

    fn density(&self) -> Result<DensityRef> {
        let marginals = self
            .params
            .iter()
            .map(|&p| Ok(Arc::new(beta_density(p, 0.0, 1.0)?) as DensityRef))
            .collect::<Result<Vec<_>>>()?;
        Ok(Arc::new(product_density(marginals)?))
    }

    /// Design with target `p_theta` and the uniform product as sampling law.
    fn design(&self, u: &SubsetIndex) -> Result<WeightedDesign> {
        if u.k() != self.k() {
            return Err(Error::invalid(format!(
                "theta has {} inputs but u is over {}",
                self.k(),
                u.k()
            )));
        }
        let p_theta = self.density()?;
        let q_u: DensityRef = Arc::new(uniform_density(Bounds::unit(u.len())));
        let q_cond = if u.is_full() {
            None
        } else {
            let bar: DensityRef = Arc::new(uniform_density(Bounds::unit(u.complement().len())));
            Some(Arc::new(Unconditional::new(bar)) as ConditionalRef)
        };
        WeightedDesign::new(p_theta.as_ref(), u, q_u, q_cond)
    }
}

impl fmt::Display for ThetaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .params
            .iter()
            .map(|p| format!("({},{})", p.alpha, p.beta))
            .collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Reads a CSV with a header, `k` input columns and the output last.
///
/// Without `bounds`, the box is the column-wise min/max of the data.
pub fn load_dataset(path: impl AsRef<Path>, bounds: Option<Bounds>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least one input column and one output column",
            path.display()
        )));
    }
    let k = header.len() - 1;
    if let Some(b) = &bounds {
        if b.dim() != k {
            return Err(Error::Data(format!(
                "{}: {k} input columns but bounds of dimension {}",
                path.display(),
                b.dim()
            )));
        }
    }
    let mut x = PointSet::new(k);
    let mut y = Vec::new();
    let mut row = vec![0.0; k];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != k + 1 {
            return Err(Error::Data(format!(
                "row {}: expected {} fields, found {}",
                line + 1,
                k + 1,
                rec.len()
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Data(format!(
                    "row {}: cannot parse {field:?} as a number",
                    line + 1
                ))
            })?;
            if j < k {
                row[j] = v;
            } else {
                y.push(v);
            }
        }
        x.push(&row);
    }
    if y.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least two data rows, found {}",
            path.display(),
            y.len()
        )));
    }
    let bounds = match bounds {
        Some(b) => b,
        None => {
            let lower: Vec<f64> = (0..k)
                .map(|j| x.column(j).into_iter().fold(f64::INFINITY, f64::min))
                .collect();
            let upper: Vec<f64> = (0..k)
                .map(|j| x.column(j).into_iter().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            Bounds::new(lower, upper)
                .map_err(|_| Error::Data("a column is constant; pass explicit bounds".into()))?
        }
    };
    Dataset::new(x, y, bounds, Some(header))
}

/// Affine map of each column to `[0, 1]`, clamped to `[STD_EPS, 1 - STD_EPS]`.
pub fn standardize(data: &Dataset, bounds: &Bounds) -> Result<Dataset> {
    if bounds.dim() != data.k() {
        return Err(Error::invalid(
            "bounds dimension does not match the dataset",
        ));
    }
    let outside: Vec<usize> = data
        .x()
        .rows()
        .enumerate()
        .filter(|(_, r)| !bounds.contains(r))
        .map(|(i, _)| i)
        .collect();
    if !outside.is_empty() {
        return Err(Error::OutOfBounds { rows: outside });
    }
    let k = data.k();
    let mut x = data.x().clone();
    for i in 0..data.n() {
        for (j, v) in x.row_mut(i).iter_mut().enumerate() {
            let (lo, hi) = bounds.interval(j);
            *v = ((*v - lo) / (hi - lo)).clamp(STD_EPS, 1.0 - STD_EPS);
        }
    }
    Dataset::new(
        x,
        data.y().to_vec(),
        Bounds::unit(k),
        data.column_names().map(|c| c.to_vec()),
    )
}

fn require_standardized(data: &Dataset) -> Result<()> {
    if data.bounds() != &Bounds::unit(data.k()) {
        return Err(Error::invalid(
            "dataset must be standardized to the unit cube first",
        ));
    }
    Ok(())
}

/// `∏_j Beta_{theta_j}(x_j)`: the likelihood ratio of `p_theta` to the uniform product.
pub fn theta_weight(x_std: &[f64], theta: &ThetaConfig) -> Result<f64> {
    if x_std.len() != theta.k() {
        return Err(Error::invalid("point and theta dimensions differ"));
    }
    let u = SubsetIndex::full(theta.k())?;
    Ok(theta.design(&u)?.weight(x_std)?.w_total)
}

/// `Z = sqrt(w_u) w_bar y` with `w` the Beta-to-uniform ratios on the standardized data.
pub fn reweighted_theta_outputs(
    data: &Dataset,
    u: &SubsetIndex,
    theta: &ThetaConfig,
) -> Result<Vec<f64>> {
    require_standardized(data)?;
    reweighted_outputs_with(data, &theta.design(u)?)
}

/// Rank estimate of `eta_u` under `p_theta` from standardized data, with the
/// per-row total weights (for output moments under `p_theta`).
pub fn theta_eta(
    data: &Dataset,
    u: &SubsetIndex,
    theta: &ThetaConfig,
) -> Result<(EstimateReport, Vec<f64>)> {
    require_standardized(data)?;
    let terms = reweighted_terms(data, &theta.design(u)?)?;
    let (z, w): (Vec<f64>, Vec<f64>) = terms.into_iter().unzip();
    let path = subset_path(&data.inputs_of(u))?;
    let mut r = path_eta(&z, &path, if u.len() == 1 { "rank" } else { "nn_rank" })?;
    let ess = effective_sample_size(&w);
    if ess < LOW_ESS_FRACTION * data.n() as f64 {
        r.warning = Some(format!(
            "effective sample size {ess:.1} is below {LOW_ESS_FRACTION} n"
        ));
    }
    r.weights_ess = Some(ess);
    Ok((r, w))
}

/// How the Beta grid is applied to the inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SweepMode {
    /// Perturb one input (one-based); the others stay uniform.
    Marginal { target: usize },
    /// Perturb the listed inputs (one-based) together with the same parameters.
    Global { inputs: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub mode: SweepMode,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub u: SubsetIndex,
}

impl SweepSpec {
    /// Grid configurations, `alpha` outer and `beta` inner.
    pub fn thetas(&self) -> Result<Vec<ThetaConfig>> {
        if self.alpha_grid.is_empty() || self.beta_grid.is_empty() {
            return Err(Error::invalid("sweep grids must be nonempty"));
        }
        let k = self.u.k();
        let inputs = match &self.mode {
            SweepMode::Marginal { target } => vec![*target],
            SweepMode::Global { inputs } if inputs.is_empty() => (1..=k).collect(),
            SweepMode::Global { inputs } => inputs.clone(),
        };
        let mut out = Vec::with_capacity(self.alpha_grid.len() * self.beta_grid.len());
        for &a in &self.alpha_grid {
            for &b in &self.beta_grid {
                out.push(ThetaConfig::with_inputs(
                    k,
                    &inputs,
                    BetaParams::new(a, b)?,
                )?);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub theta: ThetaConfig,
    pub eta_hat: f64,
    pub stderr: f64,
    pub ess: f64,
    pub baseline: bool,
    pub low_ess: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub k: usize,
    pub n: usize,
    pub estimator: String,
    pub entries: Vec<SweepEntry>,
    /// Unweighted rank estimate on the same data.
    pub baseline_eta: f64,
    pub baseline_stderr: f64,
}

/// `eta_u(theta)` for every grid configuration from one standardized dataset.
///
/// The rank path depends only on `x_u`, so it is built once and shared.
pub fn eta_sweep(data: &Dataset, spec: &SweepSpec) -> Result<SweepResult> {
    require_standardized(data)?;
    if spec.u.k() != data.k() {
        return Err(Error::invalid("u and dataset dimensions differ"));
    }
    let thetas = spec.thetas()?;
    let path = subset_path(&data.inputs_of(&spec.u))?;
    let tag = if spec.u.len() == 1 { "rank" } else { "nn_rank" };
    let base = path_eta(data.y(), &path, tag)?;
    let n = data.n();
    let entries = exec::try_map_indexed(thetas.len(), |i| -> Result<SweepEntry> {
        let theta = &thetas[i];
        let terms = reweighted_terms(data, &theta.design(&spec.u)?)?;
        let z: Vec<f64> = terms.iter().map(|t| t.0).collect();
        let w: Vec<f64> = terms.iter().map(|t| t.1).collect();
        let est = path_eta(&z, &path, tag)?;
        let ess = effective_sample_size(&w);
        Ok(SweepEntry {
            theta: theta.clone(),
            eta_hat: est.value,
            stderr: est.stderr,
            ess,
            baseline: theta.is_baseline(),
            low_ess: ess < LOW_ESS_FRACTION * n as f64,
        })
    })?;
    let flagged = entries.iter().filter(|e| e.low_ess).count();
    if flagged > 0 {
        log::warn!("{flagged} sweep entries have ESS below {LOW_ESS_FRACTION} n");
    }
    Ok(SweepResult {
        k: data.k(),
        n,
        estimator: tag.into(),
        entries,
        baseline_eta: base.value,
        baseline_stderr: base.stderr,
    })
}

fn sweep_header(k: usize) -> Vec<String> {
    (1..=k)
        .map(|j| format!("alpha_{j}"))
        .chain((1..=k).map(|j| format!("beta_{j}")))
        .chain(
            ["eta_hat", "stderr", "ess", "baseline", "low_ess"]
                .iter()
                .map(|s| s.to_string()),
        )
        .collect()
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes one CSV row per entry; floats carry 17 significant digits.
pub fn write_sweep(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    write_sweep_to(result, std::fs::File::create(path)?)
}

/// [`write_sweep`] to any writer.
pub fn write_sweep_to(result: &SweepResult, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(sweep_header(result.k))?;
    for e in &result.entries {
        let mut rec: Vec<String> = e.theta.params.iter().map(|p| fmt_f64(p.alpha)).collect();
        rec.extend(e.theta.params.iter().map(|p| fmt_f64(p.beta)));
        rec.push(fmt_f64(e.eta_hat));
        rec.push(fmt_f64(e.stderr));
        rec.push(fmt_f64(e.ess));
        rec.push((e.baseline as u8).to_string());
        rec.push((e.low_ess as u8).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads entries written by [`write_sweep`].
pub fn read_sweep(path: impl AsRef<Path>) -> Result<Vec<SweepEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 7 || (header.len() - 5) % 2 != 0 {
        return Err(Error::Data("not a sweep file".into()));
    }
    let k = (header.len() - 5) / 2;
    if header.iter().collect::<Vec<_>>() != sweep_header(k) {
        return Err(Error::Data("unexpected sweep header".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse()
                .map_err(|_| Error::Data(format!("cannot parse {:?}", &rec[j])))
        };
        let params = (0..k)
            .map(|j| BetaParams::new(num(j)?, num(k + j)?))
            .collect::<Result<Vec<_>>>()?;
        out.push(SweepEntry {
            theta: ThetaConfig::new(params)?,
            eta_hat: num(2 * k)?,
            stderr: num(2 * k + 1)?,
            ess: num(2 * k + 2)?,
            baseline: &rec[2 * k + 3] == "1",
            low_ess: &rec[2 * k + 4] == "1",
        });
    }
    Ok(out)
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    match count {
        0 => Err(Error::invalid("grid count must be positive")),
        1 if lo == hi => Ok(vec![lo]),
        1 => Err(Error::invalid("a one-point grid needs lo == hi")),
        _ => Ok((0..count)
            .map(|i| {
                if i == count - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                }
            })
            .collect()),
    }
}
