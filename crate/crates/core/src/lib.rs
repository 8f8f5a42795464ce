//! U-bend channel flow: distorted geometries, a steady SIMPLE solver,
//! rasterized datasets and a convolutional surrogate for the velocity field.
//!
//! The guide in `book/` walks through the pipeline; its code blocks run as
//! doctests of this crate.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod io;
pub mod nn;
pub mod raster;
pub mod solver;

pub use error::{Error, Result};

// mdbook cannot run snippets that depend on this crate, so each chapter is
// compiled as a doc comment instead.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/raster.md")]
    mod raster {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/dataset.md")]
    mod dataset {}
    #[doc = include_str!("../../../book/src/augment.md")]
    mod augment {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
}
