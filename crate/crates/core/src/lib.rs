//! One-stage and two-stage adversarial training on toy problems.
//!
//! The crate carries its own 64-bit tensor and reverse-mode engine
//! ([`nn`]), a registry of adversarial loss families ([`losses`]), the
//! per-instance gradient ratio and its decomposition ([`gamma`]), both
//! training schedules with pass accounting ([`trainer`], [`ledger`]), toy
//! data and metrics ([`data`], [`metrics`]), a data-free distillation game
//! ([`distill`]) and the experiment runner behind the `osgan` binary
//! ([`config`], [`experiment`], [`verify`]).
//!
//! The guide in `book/` walks through the pieces; its code blocks run as
//! doctests of this crate.

pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod experiment;
pub mod gamma;
pub mod ledger;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/gamma.md")]
    mod gamma {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/distillation.md")]
    mod distillation {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
