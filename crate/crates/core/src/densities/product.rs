use rand::RngCore;

use super::{Bounds, Density, DensityRef};
use crate::error::{Error, Result};

/// Independent product of one-dimensional densities.
#[derive(Clone, Debug)]
pub struct ProductDensity {
    marginals: Vec<DensityRef>,
    bounds: Bounds,
}

pub fn product_density(marginals: Vec<DensityRef>) -> Result<ProductDensity> {
    if marginals.is_empty() {
        return Err(Error::invalid("product needs at least one marginal"));
    }
    let mut lower = Vec::with_capacity(marginals.len());
    let mut upper = Vec::with_capacity(marginals.len());
    for m in &marginals {
        if m.dim() != 1 {
            return Err(Error::invalid(format!(
                "product marginals must be one-dimensional, {} is not",
                m.label()
            )));
        }
        let (lo, hi) = m.bounds().interval(0);
        lower.push(lo);
        upper.push(hi);
    }
    Ok(ProductDensity {
        marginals,
        bounds: Bounds::new(lower, upper)?,
    })
}

impl Density for ProductDensity {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for (m, xi) in self.marginals.iter().zip(x) {
            v *= m.pdf(std::slice::from_ref(xi));
            if v == 0.0 {
                break;
            }
        }
        v
    }

    fn sample_point(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        for (m, o) in self.marginals.iter().zip(out.iter_mut()) {
            m.sample_point(rng, std::slice::from_mut(o))?;
        }
        Ok(())
    }

    fn label(&self) -> String {
        let parts: Vec<String> = self.marginals.iter().map(|m| m.label()).collect();
        parts.join(" x ")
    }

    fn marginals(&self) -> Option<Vec<DensityRef>> {
        Some(self.marginals.clone())
    }
}
