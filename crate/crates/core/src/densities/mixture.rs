use rand::{Rng, RngCore};

use super::{Bounds, Density, DensityRef};
use crate::error::{Error, Result};

/// Convex combination `(1 - t) p + t q`.
#[derive(Clone, Debug)]
pub struct MixtureDensity {
    p: DensityRef,
    q: DensityRef,
    t: f64,
}

pub fn interpolate_density(p: DensityRef, q: DensityRef, t: f64) -> Result<MixtureDensity> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("mixture weight {t} outside [0, 1]")));
    }
    if p.bounds() != q.bounds() {
        return Err(Error::invalid("mixture components must share a box"));
    }
    Ok(MixtureDensity { p, q, t })
}

impl MixtureDensity {
    pub fn t(&self) -> f64 {
        self.t
    }
}

impl Density for MixtureDensity {
    fn bounds(&self) -> &Bounds {
        self.p.bounds()
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        // Endpoints return the component itself, bit for bit.
        if self.t == 0.0 {
            self.p.pdf(x)
        } else if self.t == 1.0 {
            self.q.pdf(x)
        } else {
            (1.0 - self.t) * self.p.pdf(x) + self.t * self.q.pdf(x)
        }
    }

    fn sample_point(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        if rng.random::<f64>() < self.t {
            self.q.sample_point(rng, out)
        } else {
            self.p.sample_point(rng, out)
        }
    }

    fn label(&self) -> String {
        format!(
            "(1-{t})*[{}] + {t}*[{}]",
            self.p.label(),
            self.q.label(),
            t = self.t
        )
    }
}
