//! Simulation of a nanodiamond spin interferometer falling through a
//! periodic magnetic field: scenario model, tooth field, pulse schedule,
//! transverse branch dynamics, interference phase and experiment drivers.

pub mod dynamics;
pub mod error;
pub mod field;
pub mod model;
pub mod numeric;
pub mod schedule;

pub use error::{Error, Result};
pub use model::{derive_quantities, AnalyticDerived, Scenario};
pub mod interference;
pub mod plot;
pub mod experiments;

// Book chapters compiled as doctests so their snippets stay runnable.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenario.md")]
    mod scenario {}
    #[doc = include_str!("../../../book/src/field.md")]
    mod field {}
    #[doc = include_str!("../../../book/src/schedule.md")]
    mod schedule {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/interference.md")]
    mod interference {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
