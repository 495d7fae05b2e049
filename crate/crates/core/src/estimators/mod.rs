//! Sample-based estimators of `eta_u` and Sobol' indices.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::densities::{
    weight, Bounds, ConditionalRef, Density, DensityRef, ReferenceSplit, WeightedDesign,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::models::Model;
use crate::points::PointSet;
use crate::quadrature::MCEstimate;
use crate::subset::SubsetIndex;

mod path;

pub use path::{nn_path, sort_path};

/// Input/output sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: PointSet,
    y: Vec<f64>,
    bounds: Bounds,
    column_names: Option<Vec<String>>,
}

impl Dataset {
    /// Requires `n >= 2`, rows inside `bounds` and finite outputs.
    pub fn new(
        x: PointSet,
        y: Vec<f64>,
        bounds: Bounds,
        column_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Data(format!(
                "{} input rows but {} outputs",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::Data("need at least two rows".into()));
        }
        if x.dim() != bounds.dim() {
            return Err(Error::Data(format!(
                "{} input columns but bounds of dimension {}",
                x.dim(),
                bounds.dim()
            )));
        }
        let outside: Vec<usize> = x
            .rows()
            .enumerate()
            .filter(|(_, r)| !bounds.contains(r))
            .map(|(i, _)| i)
            .collect();
        if !outside.is_empty() {
            return Err(Error::OutOfBounds { rows: outside });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite output in row {i}")));
        }
        if let Some(names) = &column_names {
            if names.len() != x.dim() + 1 {
                return Err(Error::Data(format!(
                    "{} column names for {} columns",
                    names.len(),
                    x.dim() + 1
                )));
            }
        }
        Ok(Dataset {
            x,
            y,
            bounds,
            column_names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.dim()
    }

    pub fn x(&self) -> &PointSet {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// Columns of `u`, in member order.
    pub fn inputs_of(&self, u: &SubsetIndex) -> PointSet {
        self.x.select_columns(u.members())
    }

    /// Same data with rows permuted.
    pub fn permuted(&self, order: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(order),
            y: order.iter().map(|&i| self.y[i]).collect(),
            bounds: self.bounds.clone(),
            column_names: self.column_names.clone(),
        }
    }
}

/// Point estimate with diagnostics, serialized as the CLI's JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub estimator: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights_ess: Option<f64>,
    /// Set when `stderr` ignores dependence between terms.
    pub stderr_approximate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl EstimateReport {
    fn new(value: f64, stderr: f64, n: usize, estimator: &str) -> Self {
        EstimateReport {
            value,
            stderr,
            n,
            estimator: estimator.into(),
            weights_ess: None,
            stderr_approximate: false,
            inner_bias: None,
            warning: None,
        }
    }
}

/// `Z_u = sqrt(w_u) * w_bar_u * Y` for each row of data drawn under `q_u * q_cond`.
///
/// This is the only place where the reweighted output is formed: the square
/// root applies to the marginal weight alone.
pub fn reweighted_outputs_with(data: &Dataset, design: &WeightedDesign) -> Result<Vec<f64>> {
    Ok(reweighted_terms(data, design)?
        .into_iter()
        .map(|t| t.0)
        .collect())
}

/// `(Z_u, w_total)` per row.
pub(crate) fn reweighted_terms(data: &Dataset, design: &WeightedDesign) -> Result<Vec<(f64, f64)>> {
    if data.k() != design.u().k() {
        return Err(Error::invalid("dataset and subset dimensions differ"));
    }
    exec::try_map_indexed(data.n(), |i| {
        let w = design.weight(data.x().row(i))?;
        Ok((w.w_u.sqrt() * w.w_bar_u * data.y()[i], w.w_total))
    })
}

/// [`reweighted_outputs_with`] for a product reference `p`.
/// `q_cond = None` keeps the reference conditional.
pub fn reweighted_outputs(
    data: &Dataset,
    u: &SubsetIndex,
    p: &dyn Density,
    q_u: DensityRef,
    q_cond: Option<ConditionalRef>,
) -> Result<Vec<f64>> {
    let design = WeightedDesign::new(p, u, q_u, q_cond)?;
    reweighted_outputs_with(data, &design)
}

/// Mean of consecutive products `z[path[j]] * z[path[j+1]]`.
///
/// The standard error treats the products as independent, which they are not
/// (neighbouring pairs share a term), so it is flagged approximate.
pub fn path_eta(z: &[f64], path: &[usize], estimator: &str) -> Result<EstimateReport> {
    let n = path.len();
    if n < 2 || z.len() != n {
        return Err(Error::invalid(format!(
            "rank estimator needs n >= 2 matching values, got {} outputs and path of {n}",
            z.len()
        )));
    }
    let m = n - 1;
    let mut sum = 0.0;
    for j in 0..m {
        sum += z[path[j]] * z[path[j + 1]];
    }
    let mean = sum / m as f64;
    let stderr = if m >= 2 {
        let ss: f64 = (0..m)
            .map(|j| (z[path[j]] * z[path[j + 1]] - mean).powi(2))
            .sum();
        (ss / (m - 1) as f64 / m as f64).sqrt()
    } else {
        0.0
    };
    if !mean.is_finite() {
        return Err(Error::NonFinite {
            count: 1,
            context: "rank estimate".into(),
        });
    }
    let mut r = EstimateReport::new(mean, stderr, n, estimator);
    r.stderr_approximate = true;
    Ok(r)
}

/// Rank estimator for a single input: sort rows by `xu` (stable) and average
/// consecutive products of `z`.
pub fn rank_eta(z: &[f64], xu: &[f64]) -> Result<EstimateReport> {
    if z.len() != xu.len() {
        return Err(Error::invalid("z and xu lengths differ"));
    }
    if z.len() < 2 {
        return Err(Error::invalid("rank estimator needs n >= 2"));
    }
    path_eta(z, &sort_path(xu)?, "rank")
}

/// Rank estimator along a greedy nearest-neighbour path through the rows of `xu`.
pub fn nn_rank_eta(z: &[f64], xu: &PointSet) -> Result<EstimateReport> {
    if z.len() != xu.len() {
        return Err(Error::invalid("z and xu lengths differ"));
    }
    if z.len() < 2 {
        return Err(Error::invalid("rank estimator needs n >= 2"));
    }
    path_eta(z, &nn_path(xu)?, "nn_rank")
}

/// The rank estimator appropriate for `|u|`: sorted order for one input,
/// nearest-neighbour path otherwise.
pub fn subset_path(xu: &PointSet) -> Result<Vec<usize>> {
    if xu.dim() == 1 {
        sort_path(xu.as_flat())
    } else {
        nn_path(xu)
    }
}

/// Brute-force `E[m_u^2]`: for each outer draw of `x_u`, average the model
/// over `n_inner` draws of `x_bar` (and noise), square, then average.
///
/// Each outer draw uses its own ChaCha stream keyed by one seed taken from
/// `rng`, so results do not depend on the thread count. `inner_bias` reports
/// the expected upward bias `E[Var_inner] / n_inner` of the squared inner mean.
pub fn double_loop_eta(
    model: &Model,
    p: &dyn Density,
    u: &SubsetIndex,
    n_outer: usize,
    n_inner: usize,
    rng: &mut dyn RngCore,
) -> Result<EstimateReport> {
    if n_outer < 2 || n_inner < 1 {
        return Err(Error::invalid(
            "double loop needs n_outer >= 2 and n_inner >= 1",
        ));
    }
    if model.dim_x() != u.k() {
        return Err(Error::invalid(
            "model input dimension does not match the subset",
        ));
    }
    let split = ReferenceSplit::new(p, u)?;
    let seed = rng.next_u64();
    let k = u.k();
    let rows = exec::try_map_indexed(n_outer, |i| -> Result<(f64, f64)> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(i as u64);
        let mut x_u = vec![0.0; u.len()];
        split.p_u().sample_point(&mut r, &mut x_u)?;
        let mut x_bar = vec![0.0; u.complement().len()];
        let mut w = vec![0.0; model.dim_w()];
        let mut full = vec![0.0; k];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n_inner {
            if let Some(pb) = split.p_bar() {
                pb.sample_point(&mut r, &mut x_bar)?;
            }
            model.sample_noise(&mut r, &mut w);
            u.assemble_into(&x_u, &x_bar, &mut full);
            let y = model.eval(&full, &w);
            s += y;
            s2 += y * y;
        }
        let mean = s / n_inner as f64;
        let var = if n_inner > 1 {
            ((s2 - n_inner as f64 * mean * mean) / (n_inner - 1) as f64).max(0.0)
        } else {
            0.0
        };
        Ok((mean * mean, var / n_inner as f64))
    })?;
    let squares: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let est = MCEstimate::from_values(&squares)?;
    let mut report = EstimateReport::new(est.value, est.stderr, n_outer, "double_loop");
    if n_inner == 1 {
        report.warning = Some(
            "n_inner = 1: each inner mean is a single output, so the estimate targets E[Y^2] rather than eta_u (biased upward)"
                .into(),
        );
    } else {
        report.inner_bias = Some(rows.iter().map(|r| r.1).sum::<f64>() / n_outer as f64);
    }
    Ok(report)
}

/// Importance-sampling mean `(1/n) Σ f(X) w(X)`, `X ~ q`.
pub fn is_mean<F>(
    f: F,
    p: &dyn Density,
    q: &dyn Density,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<MCEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if n < 2 {
        return Err(Error::invalid("importance sampling needs n >= 2"));
    }
    let xs = q.sample(rng, n)?;
    let values = exec::try_map_indexed(n, |i| -> Result<f64> {
        let x = xs.row(i);
        let fx = f(x);
        if fx == 0.0 {
            return Ok(0.0);
        }
        Ok(fx * weight(p, q, x)?)
    })?;
    MCEstimate::from_values(&values)
}

/// `S_u = (eta_hat - mean(y)^2) / Var(y)` with the unbiased sample variance.
pub fn sobol_from_eta(eta_hat: f64, y: &[f64]) -> Result<f64> {
    let n = y.len();
    if n < 2 {
        return Err(Error::invalid("need at least two outputs"));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::invalid("output variance is zero"));
    }
    Ok((eta_hat - mean * mean) / var)
}

/// [`sobol_from_eta`] with the output mean and variance taken under weights
/// `w` (self-normalized), for data drawn from another law.
pub fn sobol_from_eta_weighted(eta_hat: f64, y: &[f64], w: &[f64]) -> Result<f64> {
    if y.len() != w.len() || y.len() < 2 {
        return Err(Error::invalid(
            "need at least two outputs with matching weights",
        ));
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return Err(Error::invalid("weights sum to zero"));
    }
    let mean = y.iter().zip(w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let var = y
        .iter()
        .zip(w)
        .map(|(y, w)| w * (y - mean).powi(2))
        .sum::<f64>()
        / sw;
    if !(var > 0.0) {
        return Err(Error::invalid("output variance is zero"));
    }
    Ok((eta_hat - mean * mean) / var)
}

/// Kish effective sample size `(Σw)^2 / Σw^2`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}
