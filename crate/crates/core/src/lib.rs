//! Numeric core of the embedding-atlas toolkit.
//!
//! The crate characterizes the input -> embedding map of a small vision
//! transformer as a geometric object: exact Jacobians via reverse-mode
//! differentiation, reduced SVD into null and normal subspaces, local
//! directional Lipschitz estimates, gradient-descent embedding matching,
//! and null-space walks connecting visually different inputs that share an
//! embedding.

pub mod autodiff;
pub mod classify;
pub mod error;
pub mod io;
pub mod lipschitz;
pub mod matcher;
pub mod path;
pub mod rng;
pub mod spectral;
pub mod svd;
pub mod synth;
pub mod tensor;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::Tensor;
