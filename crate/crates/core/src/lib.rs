//! Core of the wound-monitoring service: ensemble fusion of per-model class
//! probabilities, healing-trajectory tracking, evaluation metrics, classifier
//! backends and the append-only patient store.

pub mod backend;
pub mod config;
pub mod domain;
pub mod error;
pub mod fixtures;
pub mod fusion;
pub mod healing;
pub mod metrics;
pub mod simulate;
pub mod store;

pub use domain::{
    AssessmentError, AssessmentInput, ClassProbabilities, ProbabilityError, WoundAssessment, WoundClass, NUM_CLASSES,
};
pub use error::{Coded, ErrorClass};
pub use fusion::{fuse, EnsembleConfig, EnsembleDecision, FusionError, ModelId, ModelPrediction};
pub use healing::{build_report, ClinicalAlert, HealingReport, TrackerConfig};
pub use metrics::{confusion, evaluate_log, metrics, ClassMetrics, ConfusionMatrix, PredictionLogEntry};
pub use store::{PatientStore, StoreError};
