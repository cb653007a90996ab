//! Dataset construction and evaluation toolkit for plant image classifiers.
//!
//! The pipeline runs catalog → ingest → sampler → splitter, producing a
//! labelled image manifest and train/validation/test assignment. The
//! evaluator scores ranked predictions against ground truth, and
//! [`identify`] turns a prediction into user-facing suggestions.
//!
//! Metric and policy code is generic over [`Scalar`]; the aliases below fix
//! the common choices.

pub mod catalog;
pub mod evaluator;
pub mod identify;
pub mod ingest;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod splitter;

pub use scalar::{Exact, FloatScalar, Scalar};

pub type Prediction = evaluator::PredictionRecord<f64>;
pub type ExactPrediction = evaluator::PredictionRecord<Exact>;
pub type Report = evaluator::EvalReport<f64>;
pub type ExactReport = evaluator::EvalReport<Exact>;
pub type Config = evaluator::EvalConfig<f64>;
pub type ExactConfig = evaluator::EvalConfig<Exact>;
pub type Policy = identify::ConfidencePolicy<f64>;
pub type Response = identify::IdentificationResponse<f64>;
