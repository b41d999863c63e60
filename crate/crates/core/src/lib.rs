//! Benchmark engine for the inferential utility of synthetic tabular data.
//!
//! Original datasets come from a known process ([`dgp`]) or a finite
//! population file; generators ([`generators`]) are trained on them; the
//! same estimators ([`estimators`]) run on original and synthetic data; and
//! [`evaluation`] compares the results with the truth. [`harness`] drives
//! whole campaigns. The user guide lives in `book/`.

// `!(x > 0.0)` is used on purpose: unlike `x <= 0.0` it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dgp;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod generators;
pub mod harness;
pub mod inference;
pub mod io;
pub mod tabular;

pub use error::{Error, Result};

/// Every guide chapter's Rust examples are compiled and run as doctests.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub struct $name;
        };
    }
    chapter!(Introduction, "introduction.md");
    chapter!(Concepts, "concepts.md");
    chapter!(Dgp, "dgp.md");
    chapter!(Generators, "generators.md");
    chapter!(Estimators, "estimators.md");
    chapter!(Harness, "harness.md");
    chapter!(Configuration, "configuration.md");
    chapter!(Cli, "cli.md");
    chapter!(Outputs, "outputs.md");
    chapter!(Acceptance, "acceptance.md");
}
