//! Reference data: dataset split sizes, the worked healing timeline for
//! patient P001 and a prediction log reconstructed from the reference
//! test-split results.

use std::collections::BTreeMap;

use crate::domain::{ClassProbabilities, WoundAssessment, WoundClass};
use crate::fusion::ModelId;
use crate::metrics::{read_log, PredictionLogEntry};

/// Training images per class, in class-index order.
pub const TRAIN_SPLIT_COUNTS: [usize; 6] = [702, 734, 739, 603, 726, 634];
/// Held-out test images per class, in class-index order (1,037 total).
pub const TEST_SPLIT_COUNTS: [usize; 6] = [176, 184, 185, 151, 182, 159];

/// The P001 diabetic foot ulcer timeline: days 0, 7, 14 and 21.
pub const P001_JSONL: &str = include_str!("../fixtures/p001.jsonl");

pub fn p001_timeline() -> Vec<WoundAssessment> {
    P001_JSONL
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("p001 fixture is valid"))
        .collect()
}

fn confident(class: WoundClass) -> ClassProbabilities {
    let mut v = [0.02; 6];
    v[class.index()] = 0.90;
    ClassProbabilities::new(v).expect("valid")
}

fn split(major: WoundClass, major_p: f64, minor: WoundClass, minor_p: f64) -> ClassProbabilities {
    let rest = ((1.0 - major_p - minor_p) / 4.0).max(0.0);
    let mut v = [rest; 6];
    v[major.index()] = major_p;
    v[minor.index()] = minor_p;
    ClassProbabilities::new(v).expect("valid")
}

/// A 1,037-item log consistent with the reference test-split results.
///
/// Supports follow [`TEST_SPLIT_COUNTS`]. ResNet-50 is right on every item;
/// DINOv2 and Swin each miss two items (1,035/1,037). On one venous ulcer
/// both transformers confidently say foot ulcer and outvote ResNet-50, which
/// is the ensemble's single error; each transformer's other miss is outvoted.
/// Entries carry no fused vector, so evaluation fuses them with the
/// configured weights.
pub fn reconstructed_test_log() -> Vec<PredictionLogEntry> {
    use WoundClass::*;
    let resnet = ModelId::resnet50();
    let dino = ModelId::dinov2();
    let swin = ModelId::swin_transformer();

    let mut log = Vec::with_capacity(TEST_SPLIT_COUNTS.iter().sum());
    for (class, &count) in WoundClass::ALL.iter().zip(&TEST_SPLIT_COUNTS) {
        for k in 0..count {
            let item_id = format!("test-{}-{k:04}", class.code());
            let mut r = confident(*class);
            let mut d = confident(*class);
            let mut s = confident(*class);
            match (class, k) {
                (VenousUlcer, 0) => {
                    r = split(VenousUlcer, 0.55, FootUlcer, 0.45);
                    d = split(FootUlcer, 0.90, VenousUlcer, 0.10);
                    s = split(FootUlcer, 0.90, VenousUlcer, 0.10);
                }
                (PressureUlcer, 0) => d = split(ThermalBurn, 0.60, PressureUlcer, 0.35),
                (PilonidalSinus, 0) => s = split(FungatingMalignantTumour, 0.60, PilonidalSinus, 0.35),
                _ => {}
            }
            log.push(PredictionLogEntry {
                item_id,
                true_class: *class,
                per_model: BTreeMap::from([(resnet.clone(), r), (dino.clone(), d), (swin.clone(), s)]),
                fused: None,
            });
        }
    }
    log
}

/// Parse a log from text, panicking on malformed fixtures.
pub fn parse_fixture_log(text: &str) -> Vec<PredictionLogEntry> {
    read_log(text.as_bytes()).expect("fixture log is valid")
}
