//! Finite sub-Markovian semigroups on weighted graphs, their Hodge–Dirac
//! spectral triples, and heat-kernel dimension estimators.

pub mod dims;
pub mod dirac;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod forms;
pub mod kernel;
pub mod linalg;
pub mod semigroup;

pub use dims::{DimensionFit, Estimate, GateOutcome};
pub use dirac::{Derivation, HodgeDirac};
pub use error::{Error, Result};
pub use forms::{FiniteModel, WeightedGraph};
pub use kernel::{FiniteMeasureSpace, Kernel};
pub use semigroup::TimeGrid;
