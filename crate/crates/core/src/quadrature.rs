//! Tensor-product Gauss–Legendre rules on boxes and plain Monte Carlo means.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::densities::{Bounds, Density};
use crate::error::{Error, Result};
use crate::exec;
use crate::points::PointSet;

/// Largest box dimension accepted by the tensor rules.
pub const MAX_QUAD_DIM: usize = 4;

/// Nodes and positive weights of a quadrature rule on a box.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    nodes: PointSet,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &PointSet {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.dim()
    }
}

/// Order and panel layout used to build a rule for a given box.
///
/// With `split_midpoint` every axis is cut at its midpoint and each half gets
/// its own `order`-point rule. Integrands built from `|4x - 2|` have their kink
/// there, so the split restores spectral convergence on the unit cube.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadSpec {
    pub order: usize,
    pub split_midpoint: bool,
}

impl QuadSpec {
    pub const fn plain(order: usize) -> Self {
        QuadSpec {
            order,
            split_midpoint: false,
        }
    }

    pub const fn split(order: usize) -> Self {
        QuadSpec {
            order,
            split_midpoint: true,
        }
    }

    /// Default for normalizing constants: order 64 up to two axes, 32 beyond.
    pub fn normalization(dim: usize) -> Self {
        QuadSpec::split(if dim <= 2 { 64 } else { 32 })
    }

    pub fn rule(&self, bounds: &Bounds) -> Result<QuadratureRule> {
        tensor_gl_panels(bounds, self.order, if self.split_midpoint { 2 } else { 1 })
    }
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec::split(64)
    }
}

type NodeTable = Arc<(Vec<f64>, Vec<f64>)>;

fn gl_cache() -> &'static Mutex<HashMap<usize, NodeTable>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, NodeTable>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Gauss–Legendre nodes and weights on [-1, 1], nodes ascending.
pub fn gauss_legendre(order: usize) -> Result<NodeTable> {
    if order < 1 {
        return Err(Error::Quadrature("order must be at least 1".into()));
    }
    if let Some(t) = gl_cache().lock().expect("gl cache poisoned").get(&order) {
        return Ok(t.clone());
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let table = Arc::new((nodes, weights));
    gl_cache()
        .lock()
        .expect("gl cache poisoned")
        .insert(order, table.clone());
    Ok(table)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor Gauss–Legendre rule with `order` points per axis.
pub fn tensor_gl(bounds: &Bounds, order: usize) -> Result<QuadratureRule> {
    tensor_gl_panels(bounds, order, 1)
}

/// Tensor rule where each axis is divided into `panels` equal panels.
pub fn tensor_gl_panels(bounds: &Bounds, order: usize, panels: usize) -> Result<QuadratureRule> {
    let dim = bounds.dim();
    if dim > MAX_QUAD_DIM {
        return Err(Error::Quadrature(format!(
            "tensor rules are capped at dimension {MAX_QUAD_DIM}, got {dim}; use Monte Carlo"
        )));
    }
    if order < 2 {
        return Err(Error::Quadrature("order must be at least 2".into()));
    }
    if panels < 1 {
        return Err(Error::Quadrature("need at least one panel".into()));
    }
    let table = gauss_legendre(order)?;
    let (ref_x, ref_w) = (&table.0, &table.1);

    // Per-axis composite 1D rule.
    let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..dim)
        .map(|j| {
            let (lo, hi) = bounds.interval(j);
            let width = (hi - lo) / panels as f64;
            let mut xs = Vec::with_capacity(order * panels);
            let mut ws = Vec::with_capacity(order * panels);
            for p in 0..panels {
                let a = lo + width * p as f64;
                let half = 0.5 * width;
                for (x, w) in ref_x.iter().zip(ref_w.iter()) {
                    xs.push(a + half * (x + 1.0));
                    ws.push(half * w);
                }
            }
            (xs, ws)
        })
        .collect();

    let per_axis = order * panels;
    let total = per_axis.pow(dim as u32);
    let mut nodes = PointSet::with_capacity(dim, total);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    let mut point = vec![0.0; dim];
    for _ in 0..total {
        let mut w = 1.0;
        for j in 0..dim {
            point[j] = axes[j].0[idx[j]];
            w *= axes[j].1[idx[j]];
        }
        nodes.push(&point);
        weights.push(w);
        // Last axis varies fastest.
        for j in (0..dim).rev() {
            idx[j] += 1;
            if idx[j] < per_axis {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok(QuadratureRule { nodes, weights })
}

/// Weighted node sum of `f`. Fails if `f` is non-finite at any node.
pub fn integrate<F>(f: F, rule: &QuadratureRule) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let [sum, bad] = exec::sum_indexed_vec(rule.len(), |i| {
        let v = f(rule.nodes.row(i));
        if v.is_finite() {
            [rule.weights[i] * v, 0.0]
        } else {
            [0.0, 1.0]
        }
    });
    if bad > 0.0 {
        return Err(Error::NonFinite {
            count: bad as usize,
            context: "quadrature integrand".into(),
        });
    }
    Ok(sum)
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MCEstimate {
    /// Mean and `sd / sqrt(n)` of finite values; `n >= 2`.
    pub fn from_values(values: &[f64]) -> Result<MCEstimate> {
        let n = values.len();
        if n < 2 {
            return Err(Error::invalid("Monte Carlo estimate needs n >= 2"));
        }
        let bad = values.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(Error::NonFinite {
                count: bad,
                context: "Monte Carlo integrand".into(),
            });
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(MCEstimate {
            value: mean,
            stderr: (var / n as f64).sqrt(),
            n,
        })
    }
}

/// Plain Monte Carlo mean of `f` under `sampler`. Points are drawn
/// sequentially from `rng`; the integrand is evaluated in parallel.
pub fn mc_integrate<F>(
    f: F,
    sampler: &dyn Density,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<MCEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if n < 2 {
        return Err(Error::invalid("Monte Carlo estimate needs n >= 2"));
    }
    let points = sampler.sample(rng, n)?;
    let values = exec::map_indexed(n, |i| f(points.row(i)));
    MCEstimate::from_values(&values)
}
