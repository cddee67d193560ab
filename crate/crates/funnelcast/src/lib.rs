//! Purchase-funnel prediction toolkit.
//!
//! Takes Google-Analytics-style e-commerce exports (users / sessions / hits
//! tables), joins them into per-user journeys, builds per-session ground-truth
//! probability vectors for six shopping-stage classes under linear or
//! time-decaying attribution, trains a double-LSTM network with exact analytic
//! gradients, and evaluates targeting policies via Monte-Carlo simulation.
//!
//! The numeric core (attribution, network, normalization, statistics) is
//! generic over the scalar type through [`scalar::Scalar`]; the pipeline uses
//! the [`Real`] alias (`f64`) throughout.

pub mod attribution;
pub mod cli;
pub mod features;
pub mod ingest;
pub mod model;
pub mod scalar;
pub mod synthgen;
pub mod targeting;
pub mod training;

/// Scalar type used by the concrete pipeline.
pub type Real = f64;

/// Network parameters at pipeline precision.
pub type ModelParams = model::ModelParams<Real>;
/// Network configuration (dimension choices).
pub type ModelConfig = model::ModelConfig;
/// Attribution label matrix at pipeline precision.
pub type LabelMatrix = attribution::LabelMatrix<Real>;
