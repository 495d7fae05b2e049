//! Importance-sampling estimation of Sobol' indices.
//!
//! The crate estimates the conditional second moment
//! `eta_u = E[E[Y | X_u]^2]` when inputs are drawn from a sampling density `q`
//! other than the reference law `p`, by reweighting outputs into
//! `Z_u = sqrt(w_u) * w_bar_u * Y`. Around that it provides:
//!
//! * [`densities`]: densities on boxes, likelihood ratios, products, mixtures
//!   and quadrature-normalized densities;
//! * [`models`]: the Sobol' g-function with closed-form conditional moments and
//!   a synthetic dataset generator;
//! * [`quadrature`]: tensor Gauss–Legendre rules and Monte Carlo means;
//! * [`estimators`]: rank and nearest-neighbour-path estimators of `eta_u`, a
//!   double-loop oracle and the plain importance-sampling mean;
//! * [`variance_opt`]: efficiency-bound variances under `p` and `q`, optimal
//!   conditional and marginal sampling densities, the zero-variance density,
//!   the interpolation CV curve and the Beta variance surface;
//! * [`givendata`]: reverse importance sampling over a fixed dataset.

pub mod densities;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod givendata;
pub mod models;
pub mod points;
pub mod quadrature;
pub mod subset;
pub mod validation;
pub mod variance_opt;

pub use error::{Error, Result};
pub use points::PointSet;
pub use subset::SubsetIndex;
