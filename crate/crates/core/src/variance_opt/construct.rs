use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Inner, VarianceReport, CLAMP_TOL};
use crate::densities::{
    normalize_density, ConditionalRef, Density, DensityRef, FactorizedDensity, NormalizedDensity,
    Normalizer, TiltedConditional, WeightedDesign,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::models::{ConditionalMoments, Model};
use crate::quadrature::QuadSpec;

/// The reference-conditional density `p_bar(x_bar) phi(x) / E_p[phi | x_u]`,
/// which minimizes the inner variance term for every `x_u`.
///
/// The normalizer is nested quadrature with `quad`, cached per `x_u`.
pub fn optimal_conditional(
    moments: &ConditionalMoments,
    p: &dyn Density,
    quad: QuadSpec,
) -> Result<TiltedConditional> {
    let inner = Inner::new(p, moments, quad)?;
    let base = inner
        .split()
        .p_bar()
        .ok_or_else(|| {
            Error::invalid("u is the full index set; there is no conditional to optimize")
        })?
        .clone();
    let m = moments.clone();
    TiltedConditional::new(
        moments.u().clone(),
        base,
        move |x| m.phi(x),
        Normalizer::Quadrature(quad),
        quad,
        format!("optimal conditional for {}", moments.label()),
    )
}

/// Which conditional the integrand `S(x_u)` assumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SCase {
    /// Reference conditional: `S = 4 m^2 E_p[phi^2 | x_u] - 3 m^4`.
    A,
    /// Optimal conditional: `S = 4 m^2 (E_p[phi | x_u])^2 - 3 m^4`.
    B,
    Custom,
}

impl fmt::Display for SCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SCase::A => "A",
            SCase::B => "B",
            SCase::Custom => "custom",
        })
    }
}

type SEval = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// The integrand `S(x_u)` whose expectation under `p_u/q_u` is the variance
/// (plus `eta^2`) for a fixed conditional. Inner failures evaluate to NaN.
#[derive(Clone)]
pub struct SFunction {
    case: SCase,
    eta: f64,
    dim: usize,
    eval: SEval,
}

impl fmt::Debug for SFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SFunction")
            .field("case", &self.case)
            .field("eta", &self.eta)
            .field("dim", &self.dim)
            .finish()
    }
}

impl SFunction {
    pub fn custom(
        dim: usize,
        eta: f64,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SFunction {
            case: SCase::Custom,
            eta,
            dim,
            eval: Arc::new(eval),
        }
    }

    pub fn case(&self) -> SCase {
        self.case
    }

    /// `eta_u` by the same quadrature used to build the function.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x_u: &[f64]) -> f64 {
        (self.eval)(x_u)
    }
}

/// `S_A` or `S_B` for `moments` under the product reference `p`.
pub fn s_function(
    moments: &ConditionalMoments,
    p: &dyn Density,
    case: SCase,
    quad: QuadSpec,
) -> Result<SFunction> {
    let inner = Arc::new(Inner::new(p, moments, quad)?);
    let p_u = inner.split().p_u().clone();
    let rule = quad.rule(p_u.bounds())?;
    let eta = exec::sum_indexed(rule.len(), |i| {
        let x = rule.nodes().row(i);
        rule.weights()[i] * p_u.pdf(x) * moments.m_u(x).powi(2)
    });
    let m = moments.clone();
    let eval: SEval = match case {
        SCase::A => Arc::new(move |x_u| {
            let m2 = m.m_u(x_u).powi(2);
            inner
                .phi_sq(&m, x_u)
                .map_or(f64::NAN, |e| 4.0 * m2 * e - 3.0 * m2 * m2)
        }),
        SCase::B => Arc::new(move |x_u| {
            let m2 = m.m_u(x_u).powi(2);
            inner
                .phi(&m, x_u)
                .map_or(f64::NAN, |e| 4.0 * m2 * e * e - 3.0 * m2 * m2)
        }),
        SCase::Custom => {
            return Err(Error::invalid(
                "use SFunction::custom for a custom integrand",
            ))
        }
    };
    Ok(SFunction {
        case,
        eta,
        dim: moments.u().len(),
        eval,
    })
}

/// `q_u* = p_u sqrt(S) / E_p[sqrt(S)]` and its variance `(E_p[sqrt(S)])^2 - eta^2`.
///
/// Fails if `S` is negative beyond rounding at a quadrature node.
pub fn optimal_marginal(
    p_u: DensityRef,
    s: &SFunction,
    quad: QuadSpec,
) -> Result<(NormalizedDensity, VarianceReport)> {
    if p_u.dim() != s.dim() {
        return Err(Error::invalid("p_u and S have different dimensions"));
    }
    let rule = quad.rule(p_u.bounds())?;
    let values = exec::map_indexed(rule.len(), |i| s.eval(rule.nodes().row(i)));
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if let Some(i) = values
        .iter()
        .position(|v| v.is_nan() || *v < -CLAMP_TOL * scale)
    {
        return Err(Error::invalid(format!(
            "S = {} at {:?}; the optimal marginal needs S >= 0",
            values[i],
            rule.nodes().row(i)
        )));
    }
    let s = s.clone();
    let eta = s.eta();
    let label = format!("optimal marginal (case {})", s.case());
    let pu = p_u.clone();
    let q = normalize_density(
        move |x| {
            let d = pu.pdf(x);
            if d == 0.0 {
                0.0
            } else {
                d * s.eval(x).max(0.0).sqrt()
            }
        },
        p_u.bounds().clone(),
        quad,
        label,
    )?;
    let root_mean = q.constant();
    let report = VarianceReport::quadrature(root_mean * root_mean - eta * eta, eta)?;
    Ok((q, report))
}

/// The joint density `p f m_u / eta` of a deterministic model, factored as
/// `q_u* = p_u m_u^2 / eta` and `q_bar* = p_bar f / m_u`.
#[derive(Debug)]
pub struct ZeroVarianceDensity {
    density: Arc<FactorizedDensity>,
    design: WeightedDesign,
    marginal: Arc<NormalizedDensity>,
    model: Model,
    moments: ConditionalMoments,
}

impl ZeroVarianceDensity {
    pub fn density(&self) -> DensityRef {
        self.density.clone()
    }

    pub fn design(&self) -> &WeightedDesign {
        &self.design
    }

    pub fn marginal(&self) -> &NormalizedDensity {
        &self.marginal
    }

    /// `eta_u` as the quadrature normalizer of `q_u*`.
    pub fn eta(&self) -> f64 {
        self.marginal.constant()
    }

    /// `w_u w_bar f m_u` at `x`; equal to `eta` wherever `q* > 0`.
    pub fn product(&self, x: &[f64]) -> Result<f64> {
        let w = self.design.weight(x)?;
        let x_u = self.moments.u().project(x);
        Ok(w.w_u * w.w_bar_u * self.model.eval(x, &[]) * self.moments.m_u(&x_u))
    }
}

/// Builds the zero-variance density for a deterministic model whose `m_u`
/// is known in closed form under `p`.
///
/// Checks `f > 0` on the tensor grid of `quad` over the full box (skipped
/// above the quadrature dimension cap).
pub fn zero_variance_density(
    model: &Model,
    moments: &ConditionalMoments,
    p: &dyn Density,
    quad: QuadSpec,
) -> Result<ZeroVarianceDensity> {
    if !model.is_deterministic() {
        return Err(Error::invalid(
            "the zero-variance density needs a deterministic model (no noise inputs)",
        ));
    }
    let u = moments.u().clone();
    if model.dim_x() != u.k() || p.dim() != u.k() {
        return Err(Error::invalid(
            "model, moments and reference dimensions differ",
        ));
    }
    if u.k() <= crate::quadrature::MAX_QUAD_DIM {
        let rule = quad.rule(p.bounds())?;
        let bad = rule.nodes().rows().find(|x| !(model.eval(x, &[]) > 0.0));
        if let Some(x) = bad {
            return Err(Error::invalid(format!(
                "model output must be positive; f({x:?}) = {}",
                model.eval(x, &[])
            )));
        }
    }
    let inner = Inner::new(p, moments, quad)?;
    let p_u = inner.split().p_u().clone();
    let (pu, m) = (p_u.clone(), moments.clone());
    let marginal = Arc::new(normalize_density(
        move |x| pu.pdf(x) * m.m_u(x).powi(2),
        p_u.bounds().clone(),
        quad,
        "zero-variance marginal",
    )?);
    let q_cond: Option<ConditionalRef> = match inner.split().p_bar() {
        Some(pb) => {
            let f = model.clone();
            Some(Arc::new(TiltedConditional::new(
                u.clone(),
                pb.clone(),
                move |x| f.eval(x, &[]),
                Normalizer::Analytic(moments.m_u_fn()),
                quad,
                "zero-variance conditional",
            )?))
        }
        None => None,
    };
    let design = WeightedDesign::new(p, &u, marginal.clone(), q_cond.clone())?;
    let density = Arc::new(FactorizedDensity::new(u, marginal.clone(), q_cond)?);
    Ok(ZeroVarianceDensity {
        density,
        design,
        marginal,
        model: model.clone(),
        moments: moments.clone(),
    })
}

/// `E_p[w_bar phi^2 | x_u]` for the conditional `q_cond`, by quadrature over `x_bar`.
pub fn conditional_second_moment(
    moments: &ConditionalMoments,
    p: &dyn Density,
    q_cond: &ConditionalRef,
    x_u: &[f64],
    quad: QuadSpec,
) -> Result<f64> {
    Inner::new(p, moments, quad)?.weighted_phi_sq(moments, q_cond, x_u)
}
