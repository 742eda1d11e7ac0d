//! Quadratic twisted Landau-Zener sweeps of a single spin.

pub mod analytics;
pub mod error;
pub mod model;
pub mod noise;
pub mod propagator;
pub mod pulse;
pub mod scan;

pub use error::{Result, TlzError};
pub use model::{DriveParams, FieldVector, HardwareLimits};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/formula.md")]
    mod formula {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/pulses.md")]
    mod pulses {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/scans.md")]
    mod scans {}
}
