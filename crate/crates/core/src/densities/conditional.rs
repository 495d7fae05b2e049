use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use rand::{Rng, RngCore};

use super::{Bounds, Density, DensityRef};
use crate::error::{Error, Result};
use crate::quadrature::{QuadSpec, QuadratureRule};
use crate::subset::SubsetIndex;

/// A density of `x_bar` given `x_u`.
pub trait ConditionalDensity: Send + Sync + fmt::Debug {
    /// Support of `x_bar`.
    fn bounds(&self) -> &Bounds;

    fn pdf(&self, x_bar: &[f64], x_u: &[f64]) -> f64;

    fn sample_given(&self, x_u: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()>;

    fn label(&self) -> String;
}

pub type ConditionalRef = Arc<dyn ConditionalDensity>;

/// A conditional that ignores `x_u`.
#[derive(Clone, Debug)]
pub struct Unconditional(DensityRef);

impl Unconditional {
    pub fn new(d: DensityRef) -> Self {
        Unconditional(d)
    }

    pub fn inner(&self) -> &DensityRef {
        &self.0
    }
}

impl ConditionalDensity for Unconditional {
    fn bounds(&self) -> &Bounds {
        self.0.bounds()
    }

    fn pdf(&self, x_bar: &[f64], _x_u: &[f64]) -> f64 {
        self.0.pdf(x_bar)
    }

    fn sample_given(&self, _x_u: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        self.0.sample_point(rng, out)
    }

    fn label(&self) -> String {
        self.0.label()
    }
}

type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// How the normalizer `N(x_u) = ∫ base(x_bar) tilt(x) dx_bar` is obtained.
#[derive(Clone)]
pub enum Normalizer {
    /// Known in closed form as a function of `x_u`.
    Analytic(PointFn),
    /// Tensor quadrature over the `x_bar` box.
    Quadrature(QuadSpec),
}

impl fmt::Debug for Normalizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Normalizer::Analytic(_) => f.write_str("Analytic"),
            Normalizer::Quadrature(q) => write!(f, "Quadrature({q:?})"),
        }
    }
}

const CACHE_LIMIT: usize = 1 << 16;

/// `base(x_bar) * tilt(x_u, x_bar) / N(x_u)`: a reference conditional reshaped
/// by a nonnegative tilt. Sampling is by rejection from `base`.
pub struct TiltedConditional {
    u: SubsetIndex,
    base: DensityRef,
    tilt: PointFn,
    normalizer: Normalizer,
    probe: QuadratureRule,
    cache: RwLock<HashMap<Vec<u64>, f64>>,
    label: String,
}

impl fmt::Debug for TiltedConditional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TiltedConditional")
            .field("label", &self.label)
            .field("u", &self.u)
            .field("normalizer", &self.normalizer)
            .finish()
    }
}

impl TiltedConditional {
    /// `tilt` takes the full point. `probe` sets the grid used both for
    /// quadrature normalizers and for the rejection envelope.
    pub fn new(
        u: SubsetIndex,
        base: DensityRef,
        tilt: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        normalizer: Normalizer,
        probe: QuadSpec,
        label: impl Into<String>,
    ) -> Result<Self> {
        if u.is_full() {
            return Err(Error::invalid("a conditional needs a nonempty complement"));
        }
        if base.dim() != u.complement().len() {
            return Err(Error::invalid("base density dimension does not match |ū|"));
        }
        let probe = probe.rule(base.bounds())?;
        Ok(TiltedConditional {
            u,
            base,
            tilt: Arc::new(tilt),
            normalizer,
            probe,
            cache: RwLock::new(HashMap::new()),
            label: label.into(),
        })
    }

    pub fn u(&self) -> &SubsetIndex {
        &self.u
    }

    pub fn tilt(&self, x: &[f64]) -> f64 {
        (self.tilt)(x)
    }

    /// `N(x_u)`; errors when it is not strictly positive.
    pub fn normalizer(&self, x_u: &[f64]) -> Result<f64> {
        let n = match &self.normalizer {
            Normalizer::Analytic(f) => f(x_u),
            Normalizer::Quadrature(_) => {
                let key: Vec<u64> = x_u.iter().map(|v| v.to_bits()).collect();
                if let Some(v) = self.cache.read().expect("cache poisoned").get(&key) {
                    return Ok(*v);
                }
                let mut full = vec![0.0; self.u.k()];
                let mut sum = 0.0;
                for (node, w) in self.probe.nodes().rows().zip(self.probe.weights()) {
                    self.u.assemble_into(x_u, node, &mut full);
                    sum += w * self.base.pdf(node) * (self.tilt)(&full);
                }
                let mut cache = self.cache.write().expect("cache poisoned");
                if cache.len() < CACHE_LIMIT {
                    cache.insert(key, sum);
                }
                sum
            }
        };
        if n > 0.0 && n.is_finite() {
            Ok(n)
        } else {
            Err(Error::Quadrature(format!(
                "{}: conditional normalizer {n} at x_u = {x_u:?}",
                self.label
            )))
        }
    }

    fn envelope(&self, x_u: &[f64]) -> f64 {
        let mut full = vec![0.0; self.u.k()];
        let mut max = 0.0f64;
        for node in self.probe.nodes().rows() {
            self.u.assemble_into(x_u, node, &mut full);
            max = max.max((self.tilt)(&full));
        }
        max * super::ENVELOPE_SAFETY
    }
}

impl ConditionalDensity for TiltedConditional {
    fn bounds(&self) -> &Bounds {
        self.base.bounds()
    }

    fn pdf(&self, x_bar: &[f64], x_u: &[f64]) -> f64 {
        let b = self.base.pdf(x_bar);
        if b == 0.0 {
            return 0.0;
        }
        match self.normalizer(x_u) {
            Ok(n) => b * (self.tilt)(&self.u.assemble(x_u, x_bar)) / n,
            Err(_) => f64::NAN,
        }
    }

    fn sample_given(&self, x_u: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        let mut env = self.envelope(x_u);
        if !(env > 0.0 && env.is_finite()) {
            return Err(Error::Quadrature(format!(
                "{}: tilt vanishes on the probe grid at x_u = {x_u:?}",
                self.label
            )));
        }
        let mut full = vec![0.0; self.u.k()];
        let mut violated = false;
        loop {
            self.base.sample_point(rng, out)?;
            self.u.assemble_into(x_u, out, &mut full);
            let t = (self.tilt)(&full);
            if t > env {
                if violated {
                    return Err(Error::Envelope {
                        pdf: t,
                        envelope: env,
                    });
                }
                let new = (2.0 * env).max(super::ENVELOPE_SAFETY * t);
                log::warn!(
                    "{}: envelope {env} violated by {t}; retrying with {new}",
                    self.label
                );
                env = new;
                violated = true;
                continue;
            }
            if rng.random::<f64>() * env < t {
                return Ok(());
            }
        }
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Joint density `q_u(x_u) q_cond(x_bar | x_u)`, sampled sequentially.
#[derive(Clone, Debug)]
pub struct FactorizedDensity {
    u: SubsetIndex,
    q_u: DensityRef,
    q_cond: Option<ConditionalRef>,
    bounds: Bounds,
}

impl FactorizedDensity {
    pub fn new(u: SubsetIndex, q_u: DensityRef, q_cond: Option<ConditionalRef>) -> Result<Self> {
        if q_u.dim() != u.len() {
            return Err(Error::invalid("q_u dimension does not match |u|"));
        }
        match (&q_cond, u.is_full()) {
            (None, false) => return Err(Error::invalid("missing conditional for nonempty ū")),
            (Some(_), true) => {
                return Err(Error::invalid("u is the full set; no conditional expected"))
            }
            (Some(c), false) if c.bounds().dim() != u.complement().len() => {
                return Err(Error::invalid("conditional dimension does not match |ū|"))
            }
            _ => {}
        }
        let k = u.k();
        let mut lower = vec![0.0; k];
        let mut upper = vec![0.0; k];
        for (pos, &i) in u.members().iter().enumerate() {
            (lower[i], upper[i]) = q_u.bounds().interval(pos);
        }
        if let Some(c) = &q_cond {
            for (pos, &i) in u.complement().iter().enumerate() {
                (lower[i], upper[i]) = c.bounds().interval(pos);
            }
        }
        Ok(FactorizedDensity {
            u,
            q_u,
            q_cond,
            bounds: Bounds::new(lower, upper)?,
        })
    }

    pub fn marginal(&self) -> &DensityRef {
        &self.q_u
    }

    pub fn conditional(&self) -> Option<&ConditionalRef> {
        self.q_cond.as_ref()
    }
}

impl Density for FactorizedDensity {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn pdf(&self, x: &[f64]) -> f64 {
        let x_u = self.u.project(x);
        let a = self.q_u.pdf(&x_u);
        if a == 0.0 {
            return 0.0;
        }
        match &self.q_cond {
            Some(c) => a * c.pdf(&self.u.project_complement(x), &x_u),
            None => a,
        }
    }

    fn sample_point(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        let mut x_u = vec![0.0; self.u.len()];
        self.q_u.sample_point(rng, &mut x_u)?;
        let mut x_bar = vec![0.0; self.u.complement().len()];
        if let Some(c) = &self.q_cond {
            c.sample_given(&x_u, rng, &mut x_bar)?;
        }
        self.u.assemble_into(&x_u, &x_bar, out);
        Ok(())
    }

    fn sample(&self, rng: &mut dyn RngCore, n: usize) -> Result<crate::points::PointSet> {
        // Draw all x_u first so batch samplers (rejection with retry) apply.
        let xs_u = self.q_u.sample(rng, n)?;
        let k = self.u.k();
        let mut out = crate::points::PointSet::from_flat(k, vec![0.0; k * n]);
        let mut x_bar = vec![0.0; self.u.complement().len()];
        for i in 0..n {
            let x_u = xs_u.row(i);
            if let Some(c) = &self.q_cond {
                c.sample_given(x_u, rng, &mut x_bar)?;
            }
            self.u.assemble_into(x_u, &x_bar, out.row_mut(i));
        }
        Ok(out)
    }

    fn label(&self) -> String {
        match &self.q_cond {
            Some(c) => format!("[{}] * [{}]", self.q_u.label(), c.label()),
            None => self.q_u.label(),
        }
    }
}
