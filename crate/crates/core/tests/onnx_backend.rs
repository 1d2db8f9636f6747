#![cfg(feature = "onnx")]

use std::path::Path;

use prost::Message;
use tract_onnx::pb;
use tract_onnx::pb::tensor_shape_proto::{dimension::Value as Dim, Dimension};
use tract_onnx::pb::type_proto::{Tensor as TensorType, Value as TypeValue};
use woundwatch_core::backend::{
    load_exported_backend, preprocess, BackendError, ClassifierBackend, ImageInput, Normalization, INPUT_SIZE,
};
use woundwatch_core::{ModelId, NUM_CLASSES};

const FLOAT: i32 = 1;

fn value_info(name: &str, dims: &[i64]) -> pb::ValueInfoProto {
    pb::ValueInfoProto {
        name: name.into(),
        r#type: Some(pb::TypeProto {
            value: Some(TypeValue::TensorType(TensorType {
                elem_type: FLOAT,
                shape: Some(pb::TensorShapeProto {
                    dim: dims
                        .iter()
                        .map(|&d| Dimension {
                            value: Some(Dim::DimValue(d)),
                            ..Default::default()
                        })
                        .collect(),
                }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn node(op: &str, inputs: &[&str], output: &str) -> pb::NodeProto {
    pb::NodeProto {
        op_type: op.into(),
        name: format!("{op}_{output}"),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec![output.into()],
        ..Default::default()
    }
}

fn tensor(name: &str, dims: &[i64], data: Vec<f32>) -> pb::TensorProto {
    pb::TensorProto {
        name: name.into(),
        dims: dims.to_vec(),
        data_type: FLOAT,
        float_data: data,
        ..Default::default()
    }
}

/// Channel means through a dense layer: `logits = mean(x) · W + b`.
fn pooled_linear_model(classes: usize, weights: &[f32], bias: &[f32]) -> Vec<u8> {
    let side = INPUT_SIZE as i64;
    let mut flatten = node("Flatten", &["pooled"], "flat");
    flatten.attribute.push(pb::AttributeProto {
        name: "axis".into(),
        r#type: pb::attribute_proto::AttributeType::Int as i32,
        i: 1,
        ..Default::default()
    });
    let graph = pb::GraphProto {
        name: "pooled_linear".into(),
        node: vec![
            node("GlobalAveragePool", &["x"], "pooled"),
            flatten,
            node("Gemm", &["flat", "w", "b"], "logits"),
        ],
        initializer: vec![
            tensor("w", &[3, classes as i64], weights.to_vec()),
            tensor("b", &[classes as i64], bias.to_vec()),
        ],
        input: vec![value_info("x", &[1, 3, side, side])],
        output: vec![value_info("logits", &[1, classes as i64])],
        ..Default::default()
    };
    pb::ModelProto {
        ir_version: 7,
        opset_import: vec![pb::OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        producer_name: "fixture".into(),
        graph: Some(graph),
        ..Default::default()
    }
    .encode_to_vec()
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, bytes).unwrap();
    path
}

fn gradient_image() -> ImageInput {
    let (w, h) = (40, 30);
    let rgb = (0..w * h)
        .flat_map(|i| {
            let (x, y) = (i % w, i / w);
            [(x * 6) as u8, (y * 8) as u8, ((x + y) * 3) as u8]
        })
        .collect();
    ImageInput::from_pixels("gradient", w, h, rgb)
}

#[test]
fn exported_network_matches_hand_computed_logits() {
    let dir = tempfile::tempdir().unwrap();
    let weights: Vec<f32> = (0..3 * NUM_CLASSES).map(|i| (i as f32 - 8.0) * 0.25).collect();
    let bias: Vec<f32> = (0..NUM_CLASSES).map(|i| i as f32 * 0.1 - 0.2).collect();
    let path = write(dir.path(), "net.onnx", &pooled_linear_model(NUM_CLASSES, &weights, &bias));

    let backend = load_exported_backend(&path, ModelId::new("exported")).unwrap();
    assert_eq!(backend.model_id().as_str(), "exported");
    let tensor = preprocess(&gradient_image(), &Normalization::default()).unwrap();
    let prediction = backend.predict(&tensor).unwrap();

    // oracle: average each channel, apply the dense layer, then softmax
    let plane = (INPUT_SIZE * INPUT_SIZE) as f64;
    let means: Vec<f64> = (0..3)
        .map(|c| {
            let mut s = 0.0;
            for y in 0..INPUT_SIZE {
                for x in 0..INPUT_SIZE {
                    s += f64::from(tensor.at(c, y, x));
                }
            }
            s / plane
        })
        .collect();
    let logits: Vec<f64> = (0..NUM_CLASSES)
        .map(|k| f64::from(bias[k]) + (0..3).map(|c| means[c] * f64::from(weights[c * NUM_CLASSES + k])).sum::<f64>())
        .collect();
    let raw = prediction.raw_logits.expect("logits kept");
    for k in 0..NUM_CLASSES {
        assert!((raw[k] - logits[k]).abs() < 1e-4, "logit {k}: {} vs {}", raw[k], logits[k]);
    }
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    for k in 0..NUM_CLASSES {
        assert!((prediction.probabilities.values()[k] - logits[k].exp() / z).abs() < 1e-5);
    }
}

#[test]
fn wrong_output_width_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "four.onnx", &pooled_linear_model(4, &[0.5; 12], &[0.0; 4]));
    let err = load_exported_backend(&path, ModelId::new("four")).unwrap_err();
    assert!(matches!(err, BackendError::ShapeMismatch(_)), "{err:?}");
}

#[test]
fn garbage_file_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "junk.onnx", b"\xff\xfe definitely not a protobuf \x00\x01\x02");
    let err = load_exported_backend(&path, ModelId::new("junk")).unwrap_err();
    assert!(matches!(err, BackendError::UnsupportedFormat(_)), "{err:?}");
}

#[test]
fn missing_file_is_unsupported() {
    let err = load_exported_backend(Path::new("/nonexistent/model.onnx"), ModelId::new("m")).unwrap_err();
    assert!(matches!(err, BackendError::UnsupportedFormat(_)));
}
