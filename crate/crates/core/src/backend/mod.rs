//! Per-model inference behind a common trait, plus the classify pipeline:
//! preprocess once, query every member backend, fuse.

#[cfg(feature = "onnx")]
mod onnx;
mod preprocess;
mod registry;
mod stub;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ProbabilityError;
use crate::error::{Coded, ErrorClass};
use crate::fusion::{fuse, EnsembleConfig, EnsembleDecision, FusionError, ModelId, ModelPrediction};

#[cfg(feature = "onnx")]
pub use onnx::{load_exported_backend, OnnxBackend};
pub use preprocess::{
    preprocess, ContentKey, ImageInput, ImageSource, Normalization, PreprocessedTensor, INPUT_LEN, INPUT_SIZE,
};
pub use registry::{build_backends, BackendEntry, BackendSpec};
pub use stub::{peaked, stub_backend, BiasProfile, LabeledCorpus, StubBackend, StubProfileSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("cannot decode image: {0}")]
    DecodeFailure(String),
    #[error("image has a zero dimension")]
    ZeroDimension,
    #[error("unsupported model format: {0}")]
    UnsupportedFormat(String),
    #[error("model shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("inference failed: {0}")]
    InferenceFailure(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("backend produced invalid probabilities: {0}")]
    InvalidOutput(#[from] ProbabilityError),
}

impl Coded for BackendError {
    fn code(&self) -> &'static str {
        match self {
            BackendError::DecodeFailure(_) => "decode_failure",
            BackendError::ZeroDimension => "zero_dimension",
            BackendError::UnsupportedFormat(_) => "unsupported_format",
            BackendError::ShapeMismatch(_) => "shape_mismatch",
            BackendError::InferenceFailure(_) => "inference_failure",
            BackendError::Unavailable(_) => "backend_unavailable",
            BackendError::Config(_) => "backend_config",
            BackendError::InvalidOutput(_) => "invalid_backend_output",
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            BackendError::DecodeFailure(_) | BackendError::ZeroDimension => ErrorClass::Unsupported,
            BackendError::UnsupportedFormat(_) | BackendError::ShapeMismatch(_) | BackendError::Config(_) => {
                ErrorClass::Validation
            }
            BackendError::InferenceFailure(_) | BackendError::Unavailable(_) | BackendError::InvalidOutput(_) => {
                ErrorClass::Unavailable
            }
        }
    }
}

/// What a backend is and how it may be called.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub model_id: ModelId,
    pub name: String,
    pub provenance: String,
    pub input_contract: String,
    /// Whether `predict` may be called from several threads at once.
    pub concurrent: bool,
}

pub trait ClassifierBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Deterministic for a fixed backend instance and input.
    fn predict(&self, input: &PreprocessedTensor) -> Result<ModelPrediction, BackendError>;

    fn model_id(&self) -> &ModelId {
        &self.descriptor().model_id
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

impl Coded for ClassifyError {
    fn code(&self) -> &'static str {
        match self {
            ClassifyError::Backend(e) => e.code(),
            ClassifyError::Fusion(e) => e.code(),
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            ClassifyError::Backend(e) => e.class(),
            ClassifyError::Fusion(FusionError::MemberMismatch(_)) => ErrorClass::Unavailable,
            ClassifyError::Fusion(e) => e.class(),
        }
    }
}

/// Query each backend on one tensor. Backends that allow it run on their own
/// threads; the rest run in order on the calling thread. Results come back in
/// member order either way.
pub fn predict_all(
    tensor: &PreprocessedTensor,
    backends: &[Arc<dyn ClassifierBackend>],
) -> Result<Vec<ModelPrediction>, BackendError> {
    let mut results: Vec<Option<Result<ModelPrediction, BackendError>>> = vec![None; backends.len()];
    std::thread::scope(|scope| {
        let handles: Vec<_> = backends
            .iter()
            .enumerate()
            .filter(|(_, b)| b.descriptor().concurrent)
            .map(|(i, b)| (i, scope.spawn(move || b.predict(tensor))))
            .collect();
        for (i, b) in backends.iter().enumerate() {
            if !b.descriptor().concurrent {
                results[i] = Some(b.predict(tensor));
            }
        }
        for (i, h) in handles {
            results[i] = Some(
                h.join()
                    .unwrap_or_else(|_| Err(BackendError::InferenceFailure("backend panicked".into()))),
            );
        }
    });
    results.into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Classify one image with the whole ensemble.
pub fn classify(
    image: &ImageInput,
    backends: &[Arc<dyn ClassifierBackend>],
    config: &EnsembleConfig,
    normalization: &Normalization,
) -> Result<EnsembleDecision, ClassifyError> {
    if backends.len() != config.members().len()
        || backends.iter().zip(config.member_ids()).any(|(b, id)| b.model_id() != id)
    {
        let have: Vec<String> = backends.iter().map(|b| b.model_id().to_string()).collect();
        let want: Vec<String> = config.member_ids().map(|m| m.to_string()).collect();
        return Err(FusionError::MemberMismatch(format!("backends {have:?} vs members {want:?}")).into());
    }
    let tensor = preprocess(image, normalization)?;
    let predictions = predict_all(&tensor, backends)?;
    Ok(fuse(&predictions, config)?)
}
