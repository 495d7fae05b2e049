use std::sync::Arc;

use rand::{Rng, RngCore};

use super::{Bounds, Density, DensityRef};
use crate::error::Result;

/// Constant density `1 / volume` on a box.
#[derive(Clone, Debug)]
pub struct UniformDensity {
    bounds: Bounds,
    value: f64,
}

pub fn uniform_density(bounds: Bounds) -> UniformDensity {
    let value = 1.0 / bounds.volume();
    UniformDensity { bounds, value }
}

impl Density for UniformDensity {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        if self.bounds.contains(x) {
            self.value
        } else {
            0.0
        }
    }

    fn sample_point(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        for (j, o) in out.iter_mut().enumerate() {
            let (lo, hi) = self.bounds.interval(j);
            *o = lo + (hi - lo) * rng.random::<f64>();
        }
        Ok(())
    }

    fn label(&self) -> String {
        format!("Uniform(dim={})", self.bounds.dim())
    }

    fn marginals(&self) -> Option<Vec<DensityRef>> {
        Some(
            (0..self.bounds.dim())
                .map(|j| {
                    let (lo, hi) = self.bounds.interval(j);
                    let b = Bounds::new(vec![lo], vec![hi]).expect("valid axis");
                    Arc::new(uniform_density(b)) as DensityRef
                })
                .collect(),
        )
    }
}
