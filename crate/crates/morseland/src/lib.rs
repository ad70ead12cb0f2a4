//! Gradient dynamical systems as associative memories.
//!
//! A [`landscape::Landscape`] couples a potential `V`, a metric `g` and a
//! disc domain into the gradient field `X = -g^{-1} grad V`. On top of it:
//! critical-point censuses ([`critical`]), the heteroclinic connection
//! graph ([`connectome`]), deterministic and noisy flows ([`flow`],
//! [`stochastic`]), bifurcations in parameter families ([`bifurcation`]),
//! classic and modern Hopfield networks ([`hopfield`]) and score-based
//! diffusion on Gaussian mixtures ([`diffusion`]).

// `!(x > 0.0)` is the house idiom for rejecting NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bifurcation;
pub mod connectome;
pub mod critical;
pub mod diffusion;
pub mod error;
pub mod flow;
pub mod hopfield;
pub mod io;
pub mod landscape;
pub mod linalg;
pub mod stochastic;

pub use error::{Error, Result};
pub use landscape::Landscape;

/// Crate version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
