//! Predicting design success from CAD action logs.
//!
//! The pipeline runs from raw per-student JSON session files to fitted
//! models and experiment reports:
//!
//! - [`ingest`] repairs malformed files and parses sessions,
//! - [`features`] turns sessions into tallies or coded action sequences,
//! - [`learners`] fits linear and logistic regression,
//! - [`experiments`] reruns the evaluation sweeps and renders CSV/SVG,
//! - [`synth`] generates synthetic cohorts with planted labels.

pub mod error;
pub mod experiments;
pub mod features;
pub mod ingest;
pub mod learners;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
pub use model::{category_of_code, ActionCategory, Cohort, DesignAction, Family, FeatureKind, ModelWeights, SessionLog};
