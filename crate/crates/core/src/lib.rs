//! Synthetic lesion simulation and simulator-parameter curricula for
//! detector training.

pub mod annotations;
pub mod bayesopt;
pub mod compositor;
pub mod curriculum;
pub mod error;
pub mod lesion;
mod linalg;
pub mod metrics;
pub mod perlin;
pub mod raster;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
pub use raster::{BoundingBox, GrayImage};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/lesions.md")]
    mod lesions {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/bayesopt.md")]
    mod bayesopt {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/curriculum.md")]
    mod curriculum {}
}
