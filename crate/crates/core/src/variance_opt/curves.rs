use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{Inner, PFormTable, SFunction, VarianceReport};
use crate::densities::{beta_density, ratio, BetaParams, Density, DensityRef, ENDPOINT_EPS};
use crate::error::{Error, Result};
use crate::exec;
use crate::models::ConditionalMoments;
use crate::quadrature::{MCEstimate, QuadSpec};

/// How [`cv_curve`] evaluates `E_p[w_t S]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CvMethod {
    Quadrature(QuadSpec),
    /// `n` draws from `p_u`, shared by every `t`.
    MonteCarlo {
        n: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub t: f64,
    pub cv: f64,
    pub sigma_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    pub clamped: bool,
}

/// Coefficient of variation along `q_t = (1 - t) p_u + t q*`:
/// `sigma^2(q_t) = E_p[(p_u / q_t) S] - eta^2`.
pub fn cv_curve(
    p_u: &DensityRef,
    q_star: &DensityRef,
    s: &SFunction,
    eta: f64,
    t_grid: &[f64],
    method: CvMethod,
    rng: &mut dyn RngCore,
) -> Result<Vec<CvPoint>> {
    if let Some(t) = t_grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
    }
    if p_u.dim() != s.dim() || q_star.dim() != s.dim() {
        return Err(Error::invalid("p_u, q* and S have different dimensions"));
    }
    // Per point: (outer weight, p_u, q*, S).
    let (points, mc) = match method {
        CvMethod::Quadrature(quad) => {
            let rule = quad.rule(p_u.bounds())?;
            let pts = exec::map_indexed(rule.len(), |i| {
                let x = rule.nodes().row(i);
                let pd = p_u.pdf(x);
                (rule.weights()[i] * pd, pd, q_star.pdf(x), s.eval(x), i)
            });
            (pts, None)
        }
        CvMethod::MonteCarlo { n } => {
            if n < 2 {
                return Err(Error::invalid("Monte Carlo needs n >= 2"));
            }
            let xs = p_u.sample(rng, n)?;
            let pts = exec::map_indexed(n, |i| {
                let x = xs.row(i);
                (1.0, p_u.pdf(x), q_star.pdf(x), s.eval(x), i)
            });
            (pts, Some(n))
        }
    };
    if let Some(pt) = points.iter().find(|pt| !pt.3.is_finite()) {
        return Err(Error::NonFinite {
            count: 1,
            context: format!("S at point {}", pt.4),
        });
    }
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let terms: Vec<f64> = points
            .iter()
            .map(|&(w, pd, qs, sv, _)| {
                if w == 0.0 || pd == 0.0 || sv == 0.0 {
                    return Ok(0.0);
                }
                let qt = (1.0 - t) * pd + t * qs;
                Ok(w * ratio(pd, qt, &[t])? * sv)
            })
            .collect::<Result<_>>()?;
        let report = match mc {
            None => {
                let total = exec::sum_indexed(terms.len(), |i| terms[i]);
                VarianceReport::quadrature(total - eta * eta, eta)?
            }
            Some(_) => {
                let est = MCEstimate::from_values(&terms)?;
                VarianceReport::monte_carlo(est.value - eta * eta, eta, est.stderr)
            }
        };
        out.push(CvPoint {
            t,
            cv: report.cv,
            sigma_sq: report.sigma_sq,
            stderr: report.stderr,
            clamped: report.clamped,
        });
    }
    Ok(out)
}

/// One `(alpha, beta)` cell of a variance surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub alpha: f64,
    pub beta: f64,
    pub sigma_sq: f64,
    pub cv: f64,
    /// The exact integral is infinite: `p_u / q_u` is not square-integrable
    /// near an endpoint where the reference has positive density. The
    /// quadrature value is finite but meaningless; such cells never win.
    pub divergent: bool,
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceSurface {
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    /// Row-major: `alpha` outer, `beta` inner.
    pub cells: Vec<SurfaceCell>,
    pub argmin: Option<usize>,
    /// Variance under the reference law.
    pub baseline: VarianceReport,
}

impl VarianceSurface {
    pub fn cell(&self, i_alpha: usize, i_beta: usize) -> &SurfaceCell {
        &self.cells[i_alpha * self.beta_grid.len() + i_beta]
    }

    pub fn best(&self) -> Option<&SurfaceCell> {
        self.argmin.map(|i| &self.cells[i])
    }

    /// `1 - sigma_min / sigma_baseline`.
    pub fn reduction(&self) -> Option<f64> {
        self.best()
            .map(|c| 1.0 - c.sigma_sq / self.baseline.sigma_sq)
    }
}

/// `sigma^2` when `q_u` is the symmetric product `Beta(alpha, beta)^|u|`
/// (rescaled to each axis of `p_u`) and the conditional is the reference.
///
/// The inner expectations are computed once and shared by all cells.
pub fn beta_variance_surface(
    moments: &ConditionalMoments,
    p: &dyn Density,
    alpha_grid: &[f64],
    beta_grid: &[f64],
    quad: QuadSpec,
) -> Result<VarianceSurface> {
    if alpha_grid.is_empty() || beta_grid.is_empty() {
        return Err(Error::invalid("empty Beta parameter grid"));
    }
    for &v in alpha_grid.iter().chain(beta_grid) {
        BetaParams::new(v, 1.0)?;
    }
    let inner = Inner::new(p, moments, quad)?;
    let table = PFormTable::new(moments, &inner, quad)?;
    let p_u = inner.split().p_u().clone();
    let axes = p_u
        .marginals()
        .ok_or_else(|| Error::invalid("the reference marginal of u must be a product"))?;
    let baseline = table.sigma_with(|_, _| Ok(1.0), None)?;

    // Does the reference put mass at each end of each axis?
    let open_ends: Vec<(bool, bool)> = axes
        .iter()
        .map(|a| {
            let (lo, hi) = a.bounds().interval(0);
            let w = hi - lo;
            (
                a.pdf(&[lo + ENDPOINT_EPS * w]) > 0.0,
                a.pdf(&[hi - ENDPOINT_EPS * w]) > 0.0,
            )
        })
        .collect();

    let nb = beta_grid.len();
    let n_cells = alpha_grid.len() * nb;
    let cells = exec::try_map_indexed(n_cells, |c| -> Result<SurfaceCell> {
        let (alpha, beta) = (alpha_grid[c / nb], beta_grid[c % nb]);
        let params = BetaParams::new(alpha, beta)?;
        let q_axes = axes
            .iter()
            .map(|a| {
                let (lo, hi) = a.bounds().interval(0);
                beta_density(params, lo, hi)
            })
            .collect::<Result<Vec<_>>>()?;
        let report = table.sigma_with(
            |_, x| {
                let mut w = 1.0;
                for (j, q) in q_axes.iter().enumerate() {
                    w *= ratio(axes[j].pdf(&x[j..j + 1]), q.pdf(&x[j..j + 1]), x)?;
                }
                Ok(w)
            },
            None,
        )?;
        let divergent = open_ends
            .iter()
            .any(|&(lo, hi)| (lo && alpha >= 2.0) || (hi && beta >= 2.0));
        Ok(SurfaceCell {
            alpha,
            beta,
            sigma_sq: report.sigma_sq,
            cv: report.cv,
            divergent,
            clamped: report.clamped,
        })
    })?;
    let argmin = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.divergent && c.sigma_sq.is_finite())
        .min_by(|a, b| a.1.sigma_sq.total_cmp(&b.1.sigma_sq))
        .map(|(i, _)| i);
    Ok(VarianceSurface {
        alpha_grid: alpha_grid.to_vec(),
        beta_grid: beta_grid.to_vec(),
        cells,
        argmin,
        baseline,
    })
}

/// `∫ g^2 / q` over the box of `q`. For a density `g` this is at least 1,
/// with equality only at `q = g`.
pub fn ratio_functional<G>(g: G, q: &dyn Density, quad: QuadSpec) -> Result<f64>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let rule = quad.rule(q.bounds())?;
    let terms = exec::try_map_indexed(rule.len(), |i| -> Result<f64> {
        let x = rule.nodes().row(i);
        let gv = g(x);
        if gv == 0.0 {
            return Ok(0.0);
        }
        Ok(rule.weights()[i] * gv * ratio(gv, q.pdf(x), x)?)
    })?;
    Ok(exec::sum_indexed(terms.len(), |i| terms[i]))
}
