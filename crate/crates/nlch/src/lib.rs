#![doc = include_str!("../../../book/src/quickstart.md")]

pub mod adjoint;
pub mod config;
pub mod control;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod physics;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};

// The guide's code samples compile and run as doc-tests, so the book cannot
// drift from the library (the quickstart chapter doubles as the crate docs
// above).
mod book {
    #![allow(unused)]

    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/kernel.md")]
    mod kernel {}
    #[doc = include_str!("../../../book/src/stepping.md")]
    mod stepping {}
    #[doc = include_str!("../../../book/src/dual.md")]
    mod dual {}
    #[doc = include_str!("../../../book/src/control.md")]
    mod control {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
