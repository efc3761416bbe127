//! Numerical laboratory for the geometry of gated and ungated attention.
//!
//! * [`geometry`]: induced Fisher–Rao metrics, connections and curvature of
//!   embedded parameter families.
//! * [`attention`]: the one-block attention model and its output variants.
//! * [`witnesses`]: explicit flat and curved constructions and their checks.
//! * [`training`]: exact gradients, AdamW and the training loop.
//! * [`data`]: the curved and linear synthetic tasks.
//! * [`evaluation`]: curvature proxies, statistics and experiment sweeps.
//! * [`verify`]: named numerical checks of the flat and curved constructions.
//!
//! [`rng`], [`io`] and [`checkpoint`] hold seeded streams, atomic writes and
//! model serialization.

// `!(x > 0.0)` comparisons are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod rng;
pub mod training;
pub mod verify;
pub mod witnesses;

pub use error::{Error, Result};
