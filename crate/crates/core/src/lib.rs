//! Pose-aware multi-level motion parsing for action quality assessment.
//!
//! The pipeline segments a dive into phases from pose sequences, aligns
//! query/reference sub-phases, extracts dynamic and static pose,
//! appearance, and condition features, and regresses weighted score
//! differences against a scored reference video. A synthetic dive
//! generator with known ground truth makes the whole loop trainable and
//! testable on a desk.

pub mod diff;
mod error;
pub mod posedata;
pub mod segmenter;

pub use error::AqaError;

/// Scalar type the pipeline runs on.
pub type Real = f64;

/// Concrete instantiations of the generic computation core.
pub type Tensor = diff::Tensor<Real>;
pub type Graph = diff::Graph<Real>;
pub type ParamStore = diff::ParamStore<Real>;
pub type Nadam = diff::Nadam<Real>;
