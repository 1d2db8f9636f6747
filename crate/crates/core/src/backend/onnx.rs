//! Runs an exported network file through the tract inference engine.

use std::path::Path;
use std::sync::Arc;

use tract_onnx::pb;
use tract_onnx::pb::tensor_shape_proto::dimension::Value as Dim;
use tract_onnx::pb::type_proto::Value as TypeValue;
use tract_onnx::prelude::*;

use super::preprocess::{PreprocessedTensor, INPUT_SIZE};
use super::{BackendDescriptor, BackendError, ClassifierBackend};
use crate::domain::NUM_CLASSES;
use crate::fusion::{ModelId, ModelPrediction};

pub struct OnnxBackend {
    descriptor: BackendDescriptor,
    plan: Arc<TypedRunnableModel>,
}

impl std::fmt::Debug for OnnxBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxBackend").field("descriptor", &self.descriptor).finish()
    }
}

/// Declared dims of a graph value; `None` marks a symbolic or missing dim.
fn declared_dims(info: &pb::ValueInfoProto) -> Option<Vec<Option<i64>>> {
    let TypeValue::TensorType(t) = info.r#type.as_ref()?.value.as_ref()?;
    let shape = t.shape.as_ref()?;
    Some(
        shape
            .dim
            .iter()
            .map(|d| match d.value {
                Some(Dim::DimValue(v)) => Some(v),
                _ => None,
            })
            .collect(),
    )
}

/// Compare declared dims against what we feed and expect. Symbolic dims and
/// undeclared shapes pass; the engine re-checks while optimizing.
fn check_dims(what: &str, declared: Option<Vec<Option<i64>>>, want: &[i64]) -> Result<(), BackendError> {
    let Some(dims) = declared else { return Ok(()) };
    let fits = dims.len() == want.len() && dims.iter().zip(want).all(|(d, w)| d.is_none_or(|d| d == *w));
    if fits {
        Ok(())
    } else {
        let shown: Vec<String> = dims.iter().map(|d| d.map_or("?".into(), |v| v.to_string())).collect();
        Err(BackendError::ShapeMismatch(format!("{what} is [{}], expected {want:?}", shown.join(", "))))
    }
}

/// Load a network that maps a `[1, 3, 224, 224]` float input to `[1, 6]`
/// class logits.
pub fn load_exported_backend(path: &Path, model_id: ModelId) -> Result<OnnxBackend, BackendError> {
    let onnx = tract_onnx::onnx();
    let proto = onnx
        .proto_model_for_path(path)
        .map_err(|e| BackendError::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    let graph = proto
        .graph
        .as_ref()
        .ok_or_else(|| BackendError::UnsupportedFormat(format!("{}: no graph", path.display())))?;

    let initializers: std::collections::HashSet<&str> = graph.initializer.iter().map(|t| t.name.as_str()).collect();
    let inputs: Vec<&pb::ValueInfoProto> =
        graph.input.iter().filter(|i| !initializers.contains(i.name.as_str())).collect();
    if inputs.len() != 1 || graph.output.len() != 1 {
        return Err(BackendError::ShapeMismatch(format!(
            "expected one input and one output, found {} and {}",
            inputs.len(),
            graph.output.len()
        )));
    }
    let side = INPUT_SIZE as i64;
    check_dims("input", declared_dims(inputs[0]), &[1, 3, side, side])?;
    check_dims("output", declared_dims(&graph.output[0]), &[1, NUM_CLASSES as i64])?;

    let plan = onnx
        .model_for_proto_model(&proto)
        .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, INPUT_SIZE, INPUT_SIZE]).into()))
        .and_then(|m| m.into_optimized())
        .and_then(|m| {
            let out = m.output_fact(0)?;
            let dims: Vec<Option<i64>> = out
                .shape
                .iter()
                .map(|d| d.to_i64().ok())
                .collect();
            check_dims("output", Some(dims), &[1, NUM_CLASSES as i64]).map_err(TractError::from)?;
            m.into_runnable()
        })
        .map_err(|e| match e.downcast_ref::<BackendError>() {
            Some(be) => be.clone(),
            None => BackendError::UnsupportedFormat(format!("{}: {e:#}", path.display())),
        })?;

    Ok(OnnxBackend {
        descriptor: BackendDescriptor {
            name: format!("onnx:{}", path.display()),
            model_id,
            provenance: path.display().to_string(),
            input_contract: "1x3x224x224 f32 NCHW".into(),
            concurrent: true,
        },
        plan,
    })
}

impl ClassifierBackend for OnnxBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn predict(&self, input: &PreprocessedTensor) -> Result<ModelPrediction, BackendError> {
        let fail = |e: TractError| BackendError::InferenceFailure(format!("{e:#}"));
        let tensor = Tensor::from_shape(&[1, 3, INPUT_SIZE, INPUT_SIZE], &input.data).map_err(fail)?;
        let outputs = self.plan.run(tvec!(tensor.into())).map_err(fail)?;
        let view = outputs[0].to_plain_array_view::<f32>().map_err(fail)?;
        if view.len() != NUM_CLASSES {
            return Err(BackendError::ShapeMismatch(format!("produced {} values", view.len())));
        }
        let mut logits = [0.0; NUM_CLASSES];
        for (l, v) in logits.iter_mut().zip(view.iter()) {
            *l = f64::from(*v);
        }
        ModelPrediction::from_logits(self.descriptor.model_id.clone(), logits)
            .map_err(|e| BackendError::InferenceFailure(e.to_string()))
    }
}
