//! Probability densities on boxes, importance weights and density algebra.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::PointSet;
use crate::subset::SubsetIndex;

mod beta;
mod conditional;
mod mixture;
mod normalized;
mod product;
mod uniform;

pub use beta::{beta_density, BetaDensity, ENDPOINT_EPS};
pub use conditional::{
    ConditionalDensity, ConditionalRef, FactorizedDensity, Normalizer, TiltedConditional,
    Unconditional,
};
pub use mixture::{interpolate_density, MixtureDensity};
pub use normalized::{normalize_density, NormalizedDensity, ENVELOPE_SAFETY, GRID_CELLS_1D};
pub use product::{product_density, ProductDensity};
pub use uniform::{uniform_density, UniformDensity};

/// Axis-aligned box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid("bounds need matching, nonempty lower/upper"));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "degenerate interval on axis {}: [{lo}, {hi}]",
                    j + 1
                )));
            }
        }
        Ok(Bounds { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        assert!(dim >= 1);
        Bounds {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn interval(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// The sub-box on the listed (zero-based) axes.
    pub fn select(&self, axes: &[usize]) -> Result<Bounds> {
        Bounds::new(
            axes.iter().map(|&j| self.lower[j]).collect(),
            axes.iter().map(|&j| self.upper[j]).collect(),
        )
    }
}

/// Shape parameters of a Beta law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::invalid(format!(
                "Beta shape parameters must be positive, got ({alpha}, {beta})"
            )));
        }
        Ok(BetaParams { alpha, beta })
    }

    pub const fn uniform() -> Self {
        BetaParams {
            alpha: 1.0,
            beta: 1.0,
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.alpha == 1.0 && self.beta == 1.0
    }
}

impl fmt::Display for BetaParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Beta({}, {})", self.alpha, self.beta)
    }
}

/// A probability density on a box, with a sampler.
///
/// Implementations are immutable after construction; samplers draw from a
/// caller-owned RNG so one density can be shared across threads.
pub trait Density: Send + Sync + fmt::Debug {
    fn bounds(&self) -> &Bounds;

    /// Density at `x`; zero outside the box.
    fn pdf(&self, x: &[f64]) -> f64;

    fn sample_point(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()>;

    fn label(&self) -> String;

    fn dim(&self) -> usize {
        self.bounds().dim()
    }

    /// One-dimensional factors, for densities known to be a product.
    fn marginals(&self) -> Option<Vec<DensityRef>> {
        None
    }

    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Result<PointSet> {
        let dim = self.dim();
        let mut out = PointSet::from_flat(dim, vec![0.0; dim * n]);
        for i in 0..n {
            self.sample_point(rng, out.row_mut(i))?;
        }
        Ok(out)
    }
}

pub type DensityRef = Arc<dyn Density>;

/// Product of the marginals of `p` on the listed axes. Fails unless `p` is a product.
pub fn marginal_of(p: &dyn Density, axes: &[usize]) -> Result<DensityRef> {
    let marginals = p.marginals().ok_or_else(|| {
        Error::invalid(format!(
            "{} is not a product density; dependent reference laws are not supported",
            p.label()
        ))
    })?;
    if axes.len() == 1 {
        return Ok(marginals[axes[0]].clone());
    }
    Ok(Arc::new(product_density(
        axes.iter().map(|&j| marginals[j].clone()).collect(),
    )?))
}

/// Likelihood ratio `p(x)/q(x)`.
///
/// Zero wherever `p(x) = 0`; a [`Error::SupportViolation`] when `q(x) = 0 < p(x)`.
pub fn weight(p: &dyn Density, q: &dyn Density, x: &[f64]) -> Result<f64> {
    ratio(p.pdf(x), q.pdf(x), x)
}

pub(crate) fn ratio(p: f64, q: f64, x: &[f64]) -> Result<f64> {
    if p == 0.0 {
        return Ok(0.0);
    }
    if q > 0.0 {
        let w = p / q;
        if w.is_finite() {
            return Ok(w);
        }
    }
    Err(Error::SupportViolation {
        point: x.to_vec(),
        p,
        q,
    })
}

/// Marginal and conditional parts of a likelihood ratio, `w_total = w_u * w_bar_u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizedWeight {
    pub w_u: f64,
    pub w_bar_u: f64,
    pub w_total: f64,
}

/// A product reference density `p` split into `p_u` and `p_bar` along `u`.
#[derive(Clone, Debug)]
pub struct ReferenceSplit {
    u: SubsetIndex,
    p_u: DensityRef,
    p_bar: Option<DensityRef>,
}

impl ReferenceSplit {
    pub fn new(p: &dyn Density, u: &SubsetIndex) -> Result<Self> {
        if p.dim() != u.k() {
            return Err(Error::invalid(format!(
                "reference density has dimension {} but u is over {} inputs",
                p.dim(),
                u.k()
            )));
        }
        let p_u = marginal_of(p, u.members())?;
        let p_bar = if u.is_full() {
            None
        } else {
            Some(marginal_of(p, u.complement())?)
        };
        Ok(ReferenceSplit {
            u: u.clone(),
            p_u,
            p_bar,
        })
    }

    pub fn u(&self) -> &SubsetIndex {
        &self.u
    }

    pub fn p_u(&self) -> &DensityRef {
        &self.p_u
    }

    pub fn p_bar(&self) -> Option<&DensityRef> {
        self.p_bar.as_ref()
    }
}

/// Importance weights of a sampling design `q = q_u * q_cond` against a product reference.
#[derive(Clone, Debug)]
pub struct WeightedDesign {
    split: ReferenceSplit,
    q_u: DensityRef,
    q_cond: Option<ConditionalRef>,
}

impl WeightedDesign {
    /// `q_cond = None` keeps the reference conditional `p_bar`.
    pub fn new(
        p: &dyn Density,
        u: &SubsetIndex,
        q_u: DensityRef,
        q_cond: Option<ConditionalRef>,
    ) -> Result<Self> {
        let split = ReferenceSplit::new(p, u)?;
        Self::from_split(split, q_u, q_cond)
    }

    pub fn from_split(
        split: ReferenceSplit,
        q_u: DensityRef,
        q_cond: Option<ConditionalRef>,
    ) -> Result<Self> {
        if q_u.dim() != split.u.len() {
            return Err(Error::invalid("q_u dimension does not match |u|"));
        }
        let q_cond = match (q_cond, &split.p_bar) {
            (Some(c), Some(_)) => {
                if c.bounds().dim() != split.u.complement().len() {
                    return Err(Error::invalid("conditional dimension does not match |ū|"));
                }
                Some(c)
            }
            (None, Some(pb)) => Some(Arc::new(Unconditional::new(pb.clone())) as ConditionalRef),
            (_, None) => None,
        };
        Ok(WeightedDesign { split, q_u, q_cond })
    }

    pub fn split(&self) -> &ReferenceSplit {
        &self.split
    }

    pub fn u(&self) -> &SubsetIndex {
        &self.split.u
    }

    pub fn q_u(&self) -> &DensityRef {
        &self.q_u
    }

    pub fn q_cond(&self) -> Option<&ConditionalRef> {
        self.q_cond.as_ref()
    }

    pub fn weight(&self, x: &[f64]) -> Result<FactorizedWeight> {
        let u = &self.split.u;
        let x_u = u.project(x);
        let w_u = ratio(self.split.p_u.pdf(&x_u), self.q_u.pdf(&x_u), x)?;
        let w_bar_u = match (&self.split.p_bar, &self.q_cond) {
            (Some(pb), Some(qc)) => {
                let x_bar = u.project_complement(x);
                ratio(pb.pdf(&x_bar), qc.pdf(&x_bar, &x_u), x)?
            }
            _ => 1.0,
        };
        Ok(FactorizedWeight {
            w_u,
            w_bar_u,
            w_total: w_u * w_bar_u,
        })
    }

    /// The joint sampling density `q_u(x_u) q_cond(x_bar | x_u)`.
    pub fn sampling_density(&self) -> Result<FactorizedDensity> {
        FactorizedDensity::new(self.split.u.clone(), self.q_u.clone(), self.q_cond.clone())
    }
}

/// `w_u`, `w_bar_u` and their product at `x` for the design `q = q_u * q_cond`.
pub fn factorized_weight(
    p: &dyn Density,
    q_u: DensityRef,
    q_cond: Option<ConditionalRef>,
    u: &SubsetIndex,
    x: &[f64],
) -> Result<FactorizedWeight> {
    WeightedDesign::new(p, u, q_u, q_cond)?.weight(x)
}
