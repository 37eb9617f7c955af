//! Disentangled latent space of material appearance.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod traverse;

pub use error::{Error, Result, ShapeError};
pub use image::Image;
pub use tensor::{Scalar, Tensor};
