pub mod activation;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod csrecover;
pub mod distortion;
pub mod error;
pub mod line;
pub mod pwl;
pub mod regions;
pub mod rng;
pub mod sketch;
pub mod subspace;

pub use activation::Activation;
pub use catalog::{ConditionConstants, Nonlinearity};
pub use error::{Error, Result};
pub use line::Line;
pub use pwl::{build_pwl, PwlFunction};
pub use sketch::{required_dim, sample_sketch, DimMode, DimSpec, SketchMatrix};
pub use subspace::{random_subspace, SamplePlan, Subspace};
