// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod editing;
pub mod error;
pub mod io;
pub mod merging;
pub mod metrics;
pub mod pipeline;
pub mod projection;
pub mod propagation;
pub mod raster;
pub mod refinement;
pub mod scene;
pub mod semantics;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
pub use scene::*;
