use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, RngCore};

use super::{Bounds, Density};
use crate::error::{Error, Result};
use crate::exec;
use crate::points::PointSet;
use crate::quadrature::QuadSpec;

/// Cells of the inverse-CDF table used to sample one-dimensional normalized densities.
pub const GRID_CELLS_1D: usize = 4096;

/// Rejection envelope = largest pdf value on the quadrature grid times this factor.
pub const ENVELOPE_SAFETY: f64 = 1.5;

type Unnormalized = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug)]
enum Sampler {
    /// Cumulative cell masses over `GRID_CELLS_1D` equal cells.
    InverseCdf { cdf: Vec<f64> },
    /// Uniform proposals; the envelope is stored as `f64` bits.
    Rejection { envelope: AtomicU64 },
}

/// A nonnegative function divided by its quadrature integral over a box.
pub struct NormalizedDensity {
    bounds: Bounds,
    f: Unnormalized,
    constant: f64,
    sampler: Sampler,
    label: String,
}

impl std::fmt::Debug for NormalizedDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NormalizedDensity")
            .field("label", &self.label)
            .field("constant", &self.constant)
            .field("sampler", &self.sampler)
            .finish()
    }
}

/// Normalizes `f` over `bounds` by tensor quadrature.
///
/// Fails if `f` is negative or non-finite at a node, or if the integral is not
/// strictly positive.
pub fn normalize_density<F>(
    f: F,
    bounds: Bounds,
    quad: QuadSpec,
    label: impl Into<String>,
) -> Result<NormalizedDensity>
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    let f: Unnormalized = Arc::new(f);
    let rule = quad.rule(&bounds)?;
    let values = exec::map_indexed(rule.len(), |i| f(rule.nodes().row(i)));
    if let Some(i) = values.iter().position(|v| *v < 0.0) {
        return Err(Error::invalid(format!(
            "unnormalized pdf is negative ({}) at {:?}",
            values[i],
            rule.nodes().row(i)
        )));
    }
    let bad = values.iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        return Err(Error::NonFinite {
            count: bad,
            context: "unnormalized pdf".into(),
        });
    }
    let constant: f64 = exec::sum_indexed(values.len(), |i| rule.weights()[i] * values[i]);
    if !(constant > 0.0 && constant.is_finite()) {
        return Err(Error::Quadrature(format!(
            "normalizing constant must be positive and finite, got {constant}"
        )));
    }

    let sampler = if bounds.dim() == 1 {
        let (lo, hi) = bounds.interval(0);
        let h = (hi - lo) / GRID_CELLS_1D as f64;
        let masses = exec::map_indexed(GRID_CELLS_1D, |c| f(&[lo + (c as f64 + 0.5) * h]).max(0.0));
        let mut cdf = Vec::with_capacity(GRID_CELLS_1D);
        let mut acc = 0.0;
        for m in masses {
            acc += m;
            cdf.push(acc);
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(Error::Quadrature("inverse-CDF grid has no mass".into()));
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        Sampler::InverseCdf { cdf }
    } else {
        let max = values.iter().cloned().fold(0.0, f64::max) / constant;
        Sampler::Rejection {
            envelope: AtomicU64::new((max * ENVELOPE_SAFETY).to_bits()),
        }
    };

    Ok(NormalizedDensity {
        bounds,
        f,
        constant,
        sampler,
        label: label.into(),
    })
}

enum Draw {
    Accepted,
    Violation(f64),
}

impl NormalizedDensity {
    /// The quadrature integral of the unnormalized function.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn unnormalized(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    /// Current rejection envelope, if this density samples by rejection.
    pub fn envelope(&self) -> Option<f64> {
        match &self.sampler {
            Sampler::Rejection { envelope } => {
                Some(f64::from_bits(envelope.load(Ordering::Relaxed)))
            }
            Sampler::InverseCdf { .. } => None,
        }
    }

    fn draw(&self, rng: &mut dyn RngCore, out: &mut [f64], envelope: f64) -> Draw {
        match &self.sampler {
            Sampler::InverseCdf { cdf } => {
                let (lo, hi) = self.bounds.interval(0);
                let h = (hi - lo) / GRID_CELLS_1D as f64;
                let r: f64 = rng.random();
                let cell = cdf.partition_point(|&c| c <= r).min(GRID_CELLS_1D - 1);
                let v: f64 = rng.random();
                out[0] = (lo + (cell as f64 + v) * h).clamp(lo + 1e-12 * h, hi - 1e-12 * h);
                Draw::Accepted
            }
            Sampler::Rejection { .. } => loop {
                for (j, o) in out.iter_mut().enumerate() {
                    let (lo, hi) = self.bounds.interval(j);
                    *o = lo + (hi - lo) * rng.random::<f64>();
                }
                // Proposal density is 1/volume, so compare pdf * volume with the envelope.
                let d = self.pdf(out) * self.bounds.volume();
                if d > envelope {
                    return Draw::Violation(d);
                }
                if rng.random::<f64>() * envelope < d {
                    return Draw::Accepted;
                }
            },
        }
    }

    fn inflate(&self, observed: f64) -> f64 {
        let Sampler::Rejection { envelope } = &self.sampler else {
            unreachable!("inverse-CDF sampling has no envelope")
        };
        let old = f64::from_bits(envelope.load(Ordering::Relaxed));
        let new = (2.0 * old).max(ENVELOPE_SAFETY * observed);
        log::warn!(
            "{}: rejection envelope {old} violated by pdf {observed}; inflating to {new} and retrying",
            self.label
        );
        envelope.store(new.to_bits(), Ordering::Relaxed);
        new
    }

    fn scaled_envelope(&self) -> f64 {
        // Envelope is held in units of pdf * volume.
        self.envelope()
            .map(|e| e * self.bounds.volume())
            .unwrap_or(0.0)
    }
}

impl Density for NormalizedDensity {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        if !self.bounds.contains(x) {
            return 0.0;
        }
        (self.f)(x) / self.constant
    }

    fn sample_point(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        let mut env = self.scaled_envelope();
        for attempt in 0..2 {
            match self.draw(rng, out, env) {
                Draw::Accepted => return Ok(()),
                Draw::Violation(d) if attempt == 0 => {
                    env = self.inflate(d / self.bounds.volume()) * self.bounds.volume()
                }
                Draw::Violation(d) => {
                    return Err(Error::Envelope {
                        pdf: d / self.bounds.volume(),
                        envelope: env / self.bounds.volume(),
                    })
                }
            }
        }
        unreachable!()
    }

    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Result<PointSet> {
        let dim = self.dim();
        let mut out = PointSet::from_flat(dim, vec![0.0; dim * n]);
        let mut env = self.scaled_envelope();
        'attempt: for attempt in 0..2 {
            for i in 0..n {
                match self.draw(rng, out.row_mut(i), env) {
                    Draw::Accepted => {}
                    Draw::Violation(d) if attempt == 0 => {
                        env = self.inflate(d / self.bounds.volume()) * self.bounds.volume();
                        continue 'attempt;
                    }
                    Draw::Violation(d) => {
                        return Err(Error::Envelope {
                            pdf: d / self.bounds.volume(),
                            envelope: env / self.bounds.volume(),
                        })
                    }
                }
            }
            return Ok(out);
        }
        unreachable!()
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}
