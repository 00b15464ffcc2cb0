//! Mining candidate definitions of a term from full-text corpora, removing
//! incomplete and near-duplicate ones, tagging them against a component
//! lexicon and testing how components associate with application domains.
//!
//! Numeric modules are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the pipeline's choice of `f64`.

pub mod artifacts;
pub mod clustering;
pub mod components;
pub mod corpus;
pub mod dedup;
pub mod endpoint;
pub mod error;
pub mod extract;
pub mod filter;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod text;
pub mod vector_space;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Vector = vector_space::DefinitionVector<f64>;
pub type Assignment = clustering::ClusterAssignment<f64>;
pub type Tree = clustering::LinkageTree<f64>;
pub type ChiSquare = stats::ChiSquareResult<f64>;
pub type Residuals = stats::ResidualMatrix<f64>;
pub type Correlation = stats::CorrelationMatrix<f64>;
