//! Models `Y = f(X, W)`, the Sobol' g-function and its conditional moments.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::densities::Density;
use crate::error::{Error, Result};
use crate::estimators::Dataset;
use crate::exec;
use crate::points::PointSet;
use crate::subset::SubsetIndex;

type EvalFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub(crate) type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A model `Y = f(x, w)` with controllable inputs `x` and noise `w ~ U[0,1]^dim_w`.
#[derive(Clone)]
pub struct Model {
    dim_x: usize,
    dim_w: usize,
    eval: EvalFn,
    label: String,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("label", &self.label)
            .field("dim_x", &self.dim_x)
            .field("dim_w", &self.dim_w)
            .finish()
    }
}

impl Model {
    pub fn new(
        dim_x: usize,
        dim_w: usize,
        eval: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        label: impl Into<String>,
    ) -> Result<Self> {
        if dim_x == 0 {
            return Err(Error::invalid("a model needs at least one input"));
        }
        Ok(Model {
            dim_x,
            dim_w,
            eval: Arc::new(eval),
            label: label.into(),
        })
    }

    pub fn constant(c: f64, dim_x: usize) -> Result<Self> {
        Model::new(dim_x, 0, move |_, _| c, format!("constant({c})"))
    }

    /// The deterministic g-function on `[0,1]^k`.
    pub fn gfunction(spec: &GFunctionSpec) -> Self {
        let s = spec.clone();
        Model {
            dim_x: spec.k(),
            dim_w: 0,
            eval: Arc::new(move |x, _| s.eval_unchecked(x)),
            label: format!("gfunction(a={:?})", spec.a),
        }
    }

    /// The g-function with the listed (one-based) coordinates turned into noise.
    /// Remaining coordinates keep their order as `x`.
    pub fn gfunction_with_noise(spec: &GFunctionSpec, noise: &[usize]) -> Result<Self> {
        let k = spec.k();
        let mut is_noise = vec![false; k];
        for &j in noise {
            if j == 0 || j > k {
                return Err(Error::invalid(format!("noise index {j} outside 1..={k}")));
            }
            is_noise[j - 1] = true;
        }
        let dim_w = is_noise.iter().filter(|b| **b).count();
        if dim_w == k {
            return Err(Error::invalid(
                "at least one g-function input must stay controllable",
            ));
        }
        let s = spec.clone();
        let flags = is_noise.clone();
        Model::new(
            k - dim_w,
            dim_w,
            move |x, w| {
                let (mut xi, mut wi) = (0, 0);
                let mut v = 1.0;
                for (i, &noisy) in flags.iter().enumerate() {
                    let t = if noisy {
                        wi += 1;
                        w[wi - 1]
                    } else {
                        xi += 1;
                        x[xi - 1]
                    };
                    v *= s.factor(i, t);
                }
                v
            },
            format!("gfunction(a={:?}, noise={noise:?})", spec.a),
        )
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_w(&self) -> usize {
        self.dim_w
    }

    pub fn is_deterministic(&self) -> bool {
        self.dim_w == 0
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &[f64], w: &[f64]) -> f64 {
        (self.eval)(x, w)
    }

    /// Draws `w` from the fixed noise law `U[0,1]^dim_w`.
    pub fn sample_noise(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        for o in out.iter_mut() {
            *o = rng.random();
        }
    }
}

/// Coefficients `a_i >= 0` of the g-function `∏ (|4 x_i - 2| + a_i) / (1 + a_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GFunctionSpec {
    a: Vec<f64>,
}

impl GFunctionSpec {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::invalid("g-function needs at least one coefficient"));
        }
        if let Some(v) = a.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!(
                "g-function coefficient {v} must be finite and >= 0"
            )));
        }
        Ok(GFunctionSpec { a })
    }

    /// k = 3 with `a_i = i`.
    pub fn benchmark() -> Self {
        GFunctionSpec {
            a: vec![1.0, 2.0, 3.0],
        }
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    /// One-dimensional factor `g_i(t)`; unit mean over [0, 1].
    pub fn factor(&self, i: usize, t: f64) -> f64 {
        ((4.0 * t - 2.0).abs() + self.a[i]) / (1.0 + self.a[i])
    }

    /// `E[g_i^2] = 1 + 1 / (3 (1 + a_i)^2)` under the uniform law.
    pub fn factor_second_moment(&self, i: usize) -> f64 {
        1.0 + 1.0 / (3.0 * (1.0 + self.a[i]).powi(2))
    }

    /// `Var(Y)` under independent uniform inputs.
    pub fn variance(&self) -> f64 {
        (0..self.k())
            .map(|i| self.factor_second_moment(i))
            .product::<f64>()
            - 1.0
    }

    fn eval_unchecked(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, &t)| self.factor(i, t))
            .product()
    }
}

pub fn gfunction_eval(spec: &GFunctionSpec, x: &[f64]) -> Result<f64> {
    if x.len() != spec.k() {
        return Err(Error::invalid(format!(
            "expected {} inputs, got {}",
            spec.k(),
            x.len()
        )));
    }
    if x.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid(format!(
            "g-function input {x:?} outside the unit cube"
        )));
    }
    Ok(spec.eval_unchecked(x))
}

/// Exact `eta_u = ∏_{i in u} E[g_i^2]`.
pub fn gfunction_eta(spec: &GFunctionSpec, u: &SubsetIndex) -> Result<f64> {
    check_k(spec, u)?;
    Ok(u.members()
        .iter()
        .map(|&i| spec.factor_second_moment(i))
        .product())
}

fn check_k(spec: &GFunctionSpec, u: &SubsetIndex) -> Result<()> {
    if u.k() != spec.k() {
        return Err(Error::invalid(format!(
            "subset over {} inputs for a {}-input g-function",
            u.k(),
            spec.k()
        )));
    }
    Ok(())
}

/// Analytic conditional moments of a model for a subset `u`.
///
/// * `m_u(x_u) = E[Y | X_u = x_u]`, evaluated on `x_u`;
/// * `phi_sq(x) = E[Y^2 | X = x]` and `cond_mean(x) = E[Y | X = x]`, on full points.
#[derive(Clone)]
pub struct ConditionalMoments {
    u: SubsetIndex,
    m_u: PointFn,
    phi_sq: PointFn,
    cond_mean: PointFn,
    label: String,
}

impl fmt::Debug for ConditionalMoments {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConditionalMoments")
            .field("u", &self.u)
            .field("label", &self.label)
            .finish()
    }
}

impl ConditionalMoments {
    pub fn new(
        u: SubsetIndex,
        m_u: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        phi_sq: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        cond_mean: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        label: impl Into<String>,
    ) -> Self {
        ConditionalMoments {
            u,
            m_u: Arc::new(m_u),
            phi_sq: Arc::new(phi_sq),
            cond_mean: Arc::new(cond_mean),
            label: label.into(),
        }
    }

    /// Moments of the constant model `Y = c`.
    pub fn constant(c: f64, u: SubsetIndex) -> Self {
        ConditionalMoments::new(
            u,
            move |_| c,
            move |_| c * c,
            move |_| c,
            format!("constant({c})"),
        )
    }

    pub fn u(&self) -> &SubsetIndex {
        &self.u
    }

    pub fn k(&self) -> usize {
        self.u.k()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn m_u(&self, x_u: &[f64]) -> f64 {
        (self.m_u)(x_u)
    }

    pub fn phi_sq(&self, x: &[f64]) -> f64 {
        (self.phi_sq)(x)
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        (self.phi_sq)(x).max(0.0).sqrt()
    }

    pub fn cond_mean(&self, x: &[f64]) -> f64 {
        (self.cond_mean)(x)
    }

    pub(crate) fn m_u_fn(&self) -> PointFn {
        self.m_u.clone()
    }
}

fn product_over(spec: &GFunctionSpec, idx: &[usize], x_sub: &[f64]) -> f64 {
    idx.iter()
        .zip(x_sub)
        .map(|(&i, &t)| spec.factor(i, t))
        .product()
}

/// Moments of the g-function when the inputs outside `u` act as noise:
/// `phi_sq(x) = ∏_{i in u} g_i^2(x_i) * ∏_{j not in u} E[g_j^2]`.
pub fn gfunction_moments(spec: &GFunctionSpec, u: &SubsetIndex) -> Result<ConditionalMoments> {
    let factor = u
        .complement()
        .iter()
        .map(|&j| spec.factor_second_moment(j))
        .product();
    gfunction_moments_with_factor(spec, u, factor)
}

/// Like [`gfunction_moments`] but with an explicit complement factor in
/// `phi_sq = factor * m_u^2`.
pub fn gfunction_moments_with_factor(
    spec: &GFunctionSpec,
    u: &SubsetIndex,
    factor: f64,
) -> Result<ConditionalMoments> {
    check_k(spec, u)?;
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::invalid(format!(
            "complement factor {factor} must be positive"
        )));
    }
    let (s1, s2, s3) = (spec.clone(), spec.clone(), spec.clone());
    let (u1, u2, u3) = (u.clone(), u.clone(), u.clone());
    Ok(ConditionalMoments::new(
        u.clone(),
        move |x_u| product_over(&s1, u1.members(), x_u),
        move |x| {
            let m: f64 = u2.members().iter().map(|&i| s2.factor(i, x[i])).product();
            factor * m * m
        },
        move |x| u3.members().iter().map(|&i| s3.factor(i, x[i])).product(),
        format!("gfunction moments u={u}, complement factor {factor}"),
    ))
}

/// Moments of the deterministic g-function where every input is controllable:
/// `phi = cond_mean = g`.
pub fn gfunction_moments_deterministic(
    spec: &GFunctionSpec,
    u: &SubsetIndex,
) -> Result<ConditionalMoments> {
    check_k(spec, u)?;
    let (s1, s2, s3) = (spec.clone(), spec.clone(), spec.clone());
    let u1 = u.clone();
    Ok(ConditionalMoments::new(
        u.clone(),
        move |x_u| product_over(&s1, u1.members(), x_u),
        move |x| s2.eval_unchecked(x).powi(2),
        move |x| s3.eval_unchecked(x),
        format!("deterministic gfunction moments u={u}"),
    ))
}

/// `n` i.i.d. rows with `x ~ p` and `y = f(x, w)`, `w` from the model's noise law.
pub fn synthetic_dataset(
    model: &Model,
    p: &dyn Density,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("a dataset needs at least two rows"));
    }
    if p.dim() != model.dim_x() {
        return Err(Error::invalid(format!(
            "sampling density has dimension {} but the model takes {} inputs",
            p.dim(),
            model.dim_x()
        )));
    }
    let x = p.sample(rng, n)?;
    let noise = if model.dim_w() > 0 {
        let mut w = PointSet::from_flat(model.dim_w(), vec![0.0; model.dim_w() * n]);
        for i in 0..n {
            model.sample_noise(rng, w.row_mut(i));
        }
        Some(w)
    } else {
        None
    };
    let y = exec::map_indexed(n, |i| match &noise {
        Some(w) => model.eval(x.row(i), w.row(i)),
        None => model.eval(x.row(i), &[]),
    });
    let names = (1..=model.dim_x())
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("y".to_string()))
        .collect();
    Dataset::new(x, y, p.bounds().clone(), Some(names))
}
