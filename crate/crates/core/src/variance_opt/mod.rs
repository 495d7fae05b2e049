//! Asymptotic variances of efficient `eta_u` estimators and the sampling
//! densities that minimize them.
//!
//! Everything here works from analytic [`ConditionalMoments`]: outer
//! expectations over `x_u` are tensor quadrature (or Monte Carlo) and inner
//! conditional expectations over `x_bar` are nested quadrature.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::densities::{ratio, ConditionalRef, Density, ReferenceSplit};
use crate::error::{Error, Result};
use crate::exec;
use crate::models::ConditionalMoments;
use crate::points::PointSet;
use crate::quadrature::{QuadSpec, QuadratureRule};

mod construct;
mod curves;

pub use construct::{
    conditional_second_moment, optimal_conditional, optimal_marginal, s_function,
    zero_variance_density, SCase, SFunction, ZeroVarianceDensity,
};
pub use curves::{
    beta_variance_surface, cv_curve, ratio_functional, CvMethod, CvPoint, SurfaceCell,
    VarianceSurface,
};

/// Negative quadrature variances above `-CLAMP_TOL * max(1, eta^2)` are rounded to zero.
pub const CLAMP_TOL: f64 = 1e-8;

/// An asymptotic variance with its coefficient of variation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub sigma_sq: f64,
    pub eta: f64,
    /// `sqrt(max(sigma_sq, 0)) / eta`.
    pub cv: f64,
    /// `quadrature` or `mc`.
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    /// Set when a small negative `sigma_sq` was rounded up to zero.
    pub clamped: bool,
}

impl VarianceReport {
    pub(crate) fn quadrature(sigma_sq: f64, eta: f64) -> Result<Self> {
        if !sigma_sq.is_finite() || !eta.is_finite() {
            return Err(Error::NonFinite {
                count: 1,
                context: "variance by quadrature".into(),
            });
        }
        let mut clamped = false;
        let mut s = sigma_sq;
        if s < 0.0 {
            if s < -CLAMP_TOL * eta.powi(2).max(1.0) {
                return Err(Error::Quadrature(format!(
                    "variance {s} is negative beyond rounding"
                )));
            }
            log::debug!("clamping variance {s} to 0");
            s = 0.0;
            clamped = true;
        }
        Ok(Self::build(s, eta, "quadrature", None, clamped))
    }

    pub(crate) fn monte_carlo(sigma_sq: f64, eta: f64, stderr: f64) -> Self {
        let clamped = sigma_sq < 0.0;
        if clamped {
            log::warn!("Monte Carlo variance {sigma_sq} (stderr {stderr}) clamped to 0");
        }
        Self::build(sigma_sq.max(0.0), eta, "mc", Some(stderr), clamped)
    }

    fn build(sigma_sq: f64, eta: f64, method: &str, stderr: Option<f64>, clamped: bool) -> Self {
        VarianceReport {
            sigma_sq,
            eta,
            cv: sigma_sq.max(0.0).sqrt() / eta,
            method: method.into(),
            stderr,
            clamped,
        }
    }
}

/// Nested quadrature over `x_bar` against the reference `p_bar`.
pub(crate) struct Inner {
    split: ReferenceSplit,
    rule: Option<QuadratureRule>,
    /// Rule weight times `p_bar` at each node.
    pw: Vec<f64>,
}

impl Inner {
    pub(crate) fn new(
        p: &dyn Density,
        moments: &ConditionalMoments,
        quad: QuadSpec,
    ) -> Result<Self> {
        let split = ReferenceSplit::new(p, moments.u())?;
        let (rule, pw) = match split.p_bar() {
            Some(pb) => {
                let rule = quad.rule(pb.bounds())?;
                let pw = rule
                    .nodes()
                    .rows()
                    .zip(rule.weights())
                    .map(|(x, w)| w * pb.pdf(x))
                    .collect();
                (Some(rule), pw)
            }
            None => (None, Vec::new()),
        };
        Ok(Inner { split, rule, pw })
    }

    pub(crate) fn split(&self) -> &ReferenceSplit {
        &self.split
    }

    /// `∫ p_bar(x_bar) h(x, x_bar, p_bar(x_bar)) dx_bar`, or `h(x_u, [], 1)` when `u` is full.
    pub(crate) fn expect<H>(&self, x_u: &[f64], mut h: H) -> Result<f64>
    where
        H: FnMut(&[f64], &[f64], f64) -> Result<f64>,
    {
        Ok(self.expect_pair(x_u, |x, x_bar, pb| Ok([h(x, x_bar, pb)?, 0.0]))?[0])
    }

    /// Two inner integrals sharing the node loop.
    pub(crate) fn expect_pair<H>(&self, x_u: &[f64], mut h: H) -> Result<[f64; 2]>
    where
        H: FnMut(&[f64], &[f64], f64) -> Result<[f64; 2]>,
    {
        let u = self.split.u();
        let mut full = vec![0.0; u.k()];
        match &self.rule {
            Some(rule) => {
                let mut sum = [0.0; 2];
                for (j, x_bar) in rule.nodes().rows().enumerate() {
                    if self.pw[j] == 0.0 {
                        continue;
                    }
                    u.assemble_into(x_u, x_bar, &mut full);
                    let v = h(&full, x_bar, self.pw[j] / rule.weights()[j])?;
                    sum[0] += self.pw[j] * v[0];
                    sum[1] += self.pw[j] * v[1];
                }
                Ok(sum)
            }
            None => {
                u.assemble_into(x_u, &[], &mut full);
                h(&full, &[], 1.0)
            }
        }
    }

    /// `E_p[phi^2 | x_u]`.
    pub(crate) fn phi_sq(&self, m: &ConditionalMoments, x_u: &[f64]) -> Result<f64> {
        self.expect(x_u, |x, _, _| Ok(m.phi_sq(x)))
    }

    /// `E_p[phi | x_u]`.
    pub(crate) fn phi(&self, m: &ConditionalMoments, x_u: &[f64]) -> Result<f64> {
        self.expect(x_u, |x, _, _| Ok(m.phi(x)))
    }

    /// `E_p[w_bar phi^2 | x_u]` for the conditional `q_cond`.
    pub(crate) fn weighted_phi_sq(
        &self,
        m: &ConditionalMoments,
        q_cond: &ConditionalRef,
        x_u: &[f64],
    ) -> Result<f64> {
        self.expect(x_u, |x, x_bar, pb| {
            let phi_sq = m.phi_sq(x);
            if phi_sq == 0.0 {
                return Ok(0.0);
            }
            Ok(ratio(pb, q_cond.pdf(x_bar, x_u), x)? * phi_sq)
        })
    }
}

/// Outer quadrature nodes over `x_u` with `E_p[phi^2 | x_u]` precomputed.
pub(crate) struct PFormTable {
    nodes: PointSet,
    /// Rule weight times `p_u`.
    weights: Vec<f64>,
    m_sq: Vec<f64>,
    inner_phi_sq: Vec<f64>,
    eta: f64,
}

impl PFormTable {
    pub(crate) fn new(moments: &ConditionalMoments, inner: &Inner, quad: QuadSpec) -> Result<Self> {
        let p_u = inner.split().p_u().clone();
        let rule = quad.rule(p_u.bounds())?;
        let nodes = rule.nodes().clone();
        let weights: Vec<f64> = nodes
            .rows()
            .zip(rule.weights())
            .map(|(x, w)| w * p_u.pdf(x))
            .collect();
        let m_sq: Vec<f64> = nodes.rows().map(|x| moments.m_u(x).powi(2)).collect();
        let inner_phi_sq =
            exec::try_map_indexed(nodes.len(), |i| inner.phi_sq(moments, nodes.row(i)))?;
        let eta = exec::sum_indexed(nodes.len(), |i| weights[i] * m_sq[i]);
        let table = PFormTable {
            nodes,
            weights,
            m_sq,
            inner_phi_sq,
            eta,
        };
        table.check_finite()?;
        Ok(table)
    }

    fn check_finite(&self) -> Result<()> {
        let bad = self
            .m_sq
            .iter()
            .chain(&self.inner_phi_sq)
            .filter(|v| !v.is_finite())
            .count();
        if bad > 0 {
            return Err(Error::NonFinite {
                count: bad,
                context: "conditional moments at quadrature nodes".into(),
            });
        }
        Ok(())
    }

    pub(crate) fn nodes(&self) -> &PointSet {
        &self.nodes
    }

    pub(crate) fn len(&self) -> usize {
        self.nodes.len()
    }

    /// `4 E_p[w_u m^2 I] - 3 E_p[w_u m^4] - eta^2` where `w_u` and `I` come
    /// from the callbacks (`I` defaults to `E_p[phi^2 | x_u]`).
    pub(crate) fn sigma_with<W>(&self, w_u: W, inner: Option<&[f64]>) -> Result<VarianceReport>
    where
        W: Fn(usize, &[f64]) -> Result<f64> + Sync,
    {
        let inner = inner.unwrap_or(&self.inner_phi_sq);
        let terms = exec::try_map_indexed(self.len(), |i| -> Result<f64> {
            if self.weights[i] == 0.0 {
                return Ok(0.0);
            }
            let w = w_u(i, self.nodes.row(i))?;
            let m2 = self.m_sq[i];
            Ok(self.weights[i] * w * m2 * (4.0 * inner[i] - 3.0 * m2))
        })?;
        let total = exec::sum_indexed(terms.len(), |i| terms[i]);
        VarianceReport::quadrature(total - self.eta * self.eta, self.eta)
    }
}

/// Asymptotic variance under the reference law:
/// `4 E[m_u^2 E[phi^2 | X_u]] - 3 E[m_u^4] - eta_u^2`.
pub fn sigma_opt_p(
    moments: &ConditionalMoments,
    p: &dyn Density,
    quad: QuadSpec,
) -> Result<VarianceReport> {
    let inner = Inner::new(p, moments, quad)?;
    PFormTable::new(moments, &inner, quad)?.sigma_with(|_, _| Ok(1.0), None)
}

/// Asymptotic variance when sampling from `q_u * q_cond`, as the quadrature
/// p-form `4 E_p[w_u m^2 E_p[w_bar phi^2 | X_u]] - 3 E_p[w_u m^4] - eta^2`.
/// `q_cond = None` keeps the reference conditional.
pub fn sigma_opt_q(
    moments: &ConditionalMoments,
    p: &dyn Density,
    q_u: &dyn Density,
    q_cond: Option<&ConditionalRef>,
    quad: QuadSpec,
) -> Result<VarianceReport> {
    let inner = Inner::new(p, moments, quad)?;
    let table = PFormTable::new(moments, &inner, quad)?;
    let p_u = inner.split().p_u().clone();
    let weighted;
    let inner_values = match q_cond {
        Some(qc) if inner.split().p_bar().is_some() => {
            weighted = exec::try_map_indexed(table.len(), |i| {
                inner.weighted_phi_sq(moments, qc, table.nodes().row(i))
            })?;
            Some(weighted.as_slice())
        }
        _ => None,
    };
    table.sigma_with(|_, x| ratio(p_u.pdf(x), q_u.pdf(x), x), inner_values)
}

/// Which side of the change of measure a Monte Carlo variance is computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceForm {
    /// Outer expectation under `p_u` with importance weights.
    P,
    /// Outer expectation under `q_u`, written with the moments of `Z_u`.
    Q,
}

/// Monte Carlo evaluation of the variance for the design `q_u * q_cond`.
///
/// The outer expectation over `x_u` is sampled (`n` draws), the inner one over
/// `x_bar` is quadrature. In the q-form, `E_q[Z_u | x_u]` and `E_q[Z_u^2 | x_u]`
/// are integrated against `q_cond`, so agreement with [`sigma_opt_q`] checks
/// the change of measure itself. The standard error uses the delta method for
/// `mean(T) - mean(A)^2`.
#[allow(clippy::too_many_arguments)]
pub fn sigma_opt_q_mc(
    moments: &ConditionalMoments,
    p: &dyn Density,
    q_u: &dyn Density,
    q_cond: Option<&ConditionalRef>,
    form: VarianceForm,
    n: usize,
    quad: QuadSpec,
    rng: &mut dyn RngCore,
) -> Result<VarianceReport> {
    if n < 2 {
        return Err(Error::invalid("Monte Carlo variance needs n >= 2"));
    }
    let inner = Inner::new(p, moments, quad)?;
    let p_u = inner.split().p_u().clone();
    let sampler: &dyn Density = match form {
        VarianceForm::P => p_u.as_ref(),
        VarianceForm::Q => q_u,
    };
    let xs = sampler.sample(rng, n)?;
    let has_bar = inner.split().p_bar().is_some();
    let terms = exec::try_map_indexed(n, |i| -> Result<(f64, f64)> {
        let x_u = xs.row(i);
        let w_u = ratio(p_u.pdf(x_u), q_u.pdf(x_u), x_u)?;
        match form {
            VarianceForm::P => {
                let m2 = moments.m_u(x_u).powi(2);
                let inner_w = match q_cond {
                    Some(qc) if has_bar => inner.weighted_phi_sq(moments, qc, x_u)?,
                    _ => inner.phi_sq(moments, x_u)?,
                };
                Ok((m2, w_u * m2 * (4.0 * inner_w - 3.0 * m2)))
            }
            VarianceForm::Q => {
                // A = E_q[Z | x_u], B = E_q[Z^2 | x_u].
                let (a, b) = match q_cond {
                    Some(qc) if has_bar => {
                        let [a, b] = inner.expect_pair(x_u, |x, x_bar, pb| {
                            let qd = qc.pdf(x_bar, x_u);
                            let w_bar = ratio(pb, qd, x)?;
                            // Integrate against q_cond: rescale the p_bar-weighted node.
                            let scale = if pb > 0.0 { qd / pb } else { 0.0 };
                            Ok([
                                scale * w_bar * moments.cond_mean(x),
                                scale * w_bar * w_bar * moments.phi_sq(x),
                            ])
                        })?;
                        (w_u.sqrt() * a, w_u * b)
                    }
                    _ => {
                        let a = inner.expect(x_u, |x, _, _| Ok(moments.cond_mean(x)))?;
                        let b = inner.phi_sq(moments, x_u)?;
                        (w_u.sqrt() * a, w_u * b)
                    }
                };
                let a2 = a * a;
                Ok((a2, 4.0 * a2 * b - 3.0 * a2 * a2))
            }
        }
    })?;
    let nf = n as f64;
    let eta = terms.iter().map(|t| t.0).sum::<f64>() / nf;
    let t_mean = terms.iter().map(|t| t.1).sum::<f64>() / nf;
    let infl: Vec<f64> = terms.iter().map(|t| t.1 - 2.0 * eta * t.0).collect();
    let im = infl.iter().sum::<f64>() / nf;
    let var = infl.iter().map(|v| (v - im).powi(2)).sum::<f64>() / (nf - 1.0);
    let sigma = t_mean - eta * eta;
    if !sigma.is_finite() {
        return Err(Error::NonFinite {
            count: 1,
            context: "Monte Carlo variance".into(),
        });
    }
    Ok(VarianceReport::monte_carlo(sigma, eta, (var / nf).sqrt()))
}

#[cfg(test)]
mod tests;
