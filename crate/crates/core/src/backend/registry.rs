use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::stub::{stub_backend, StubProfileSpec};
use super::{BackendError, ClassifierBackend};
use crate::fusion::ModelId;

/// How one ensemble member is served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Stub {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        profile: StubProfileSpec,
    },
    /// An exported network file; relative paths resolve against the config file.
    Onnx { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEntry {
    pub model_id: ModelId,
    #[serde(flatten)]
    pub spec: BackendSpec,
}

/// Instantiate the configured backends, in order.
pub fn build_backends(entries: &[BackendEntry], base_dir: &Path) -> Result<Vec<Arc<dyn ClassifierBackend>>, BackendError> {
    entries
        .iter()
        .map(|e| -> Result<Arc<dyn ClassifierBackend>, BackendError> {
            match &e.spec {
                BackendSpec::Stub { seed, profile } => {
                    Ok(Arc::new(stub_backend(e.model_id.clone(), *seed, profile.clone().into())))
                }
                BackendSpec::Onnx { path } => load_onnx(&base_dir.join(path), e.model_id.clone()),
            }
        })
        .collect()
}

#[cfg(feature = "onnx")]
fn load_onnx(path: &Path, id: ModelId) -> Result<Arc<dyn ClassifierBackend>, BackendError> {
    Ok(Arc::new(super::load_exported_backend(path, id)?))
}

#[cfg(not(feature = "onnx"))]
fn load_onnx(path: &Path, _id: ModelId) -> Result<Arc<dyn ClassifierBackend>, BackendError> {
    Err(BackendError::Unavailable(format!(
        "{}: built without the `onnx` feature",
        path.display()
    )))
}
