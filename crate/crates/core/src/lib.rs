//! Semi-supervised EM for finite mixtures: models, seeded sampling, finite-sample
//! and population EM, and numerical checks of contraction bounds.

// NaN-rejecting comparisons such as `!(x > 0.0)` are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Published coefficient tables are kept digit-for-digit.
#![allow(clippy::excessive_precision)]

pub mod analysis;
pub mod em;
pub mod error;
pub mod model;
pub mod population;
pub mod quadrature;
pub mod rng;
pub mod sampling;
pub mod special;

pub use error::{Error, Result};
pub use model::{ExpFamilySpec, MixtureParams, ModelKind, Support};
pub use population::{PopulationModel, QuadratureScheme};
pub use sampling::{Allocation, Dataset, SampleConfig};
