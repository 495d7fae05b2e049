use rand::RngCore;
use rand_distr::{Beta as BetaSampler, Distribution};
use statrs::function::beta::ln_beta;

use super::{BetaParams, Bounds, Density};
use crate::error::{Error, Result};

/// Inward clamp, in standardized units, applied at the support endpoints.
pub const ENDPOINT_EPS: f64 = 1e-12;

/// Beta law rescaled from (0, 1) to (lo, hi).
///
/// Evaluating exactly at an endpoint returns the pdf `ENDPOINT_EPS` inside it,
/// so shapes below one stay finite; the sampler never emits an endpoint.
#[derive(Clone, Debug)]
pub struct BetaDensity {
    params: BetaParams,
    bounds: Bounds,
    lo: f64,
    width: f64,
    ln_norm: f64,
    sampler: BetaSampler<f64>,
}

pub fn beta_density(params: BetaParams, lo: f64, hi: f64) -> Result<BetaDensity> {
    let params = BetaParams::new(params.alpha, params.beta)?;
    let bounds = Bounds::new(vec![lo], vec![hi])?;
    let sampler = BetaSampler::new(params.alpha, params.beta)
        .map_err(|e| Error::invalid(format!("Beta sampler: {e}")))?;
    Ok(BetaDensity {
        params,
        bounds,
        lo,
        width: hi - lo,
        ln_norm: ln_beta(params.alpha, params.beta),
        sampler,
    })
}

impl BetaDensity {
    pub fn params(&self) -> BetaParams {
        self.params
    }

    /// Density of the standard Beta law at `t` in [0, 1].
    pub fn standard_pdf(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        if self.params.is_uniform() {
            return 1.0;
        }
        let t = t.clamp(ENDPOINT_EPS, 1.0 - ENDPOINT_EPS);
        let a = self.params.alpha - 1.0;
        let b = self.params.beta - 1.0;
        (a * t.ln() + b * (-t).ln_1p() - self.ln_norm).exp()
    }
}

impl Density for BetaDensity {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        let t = (x[0] - self.lo) / self.width;
        self.standard_pdf(t) / self.width
    }

    fn sample_point(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        let t: f64 = self.sampler.sample(rng);
        out[0] = self.lo + self.width * t.clamp(ENDPOINT_EPS, 1.0 - ENDPOINT_EPS);
        Ok(())
    }

    fn label(&self) -> String {
        format!("{} on [{}, {}]", self.params, self.lo, self.lo + self.width)
    }
}
