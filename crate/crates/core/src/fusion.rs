//! Accuracy-weighted soft voting over member model probability vectors.
//!
//! Each member `m` contributes its softmax vector `p_m` scaled by a weight
//! `w_m = acc_m / Σ acc`, and the fused vector is `Σ w_m · p_m`. Because the
//! weights are convex, the fused vector stays on the probability simplex.
//! Disagreement between member argmaxes marks a case for specialist review.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClassProbabilities, ProbabilityError, WoundClass, NUM_CLASSES};
use crate::error::{Coded, ErrorClass};

/// Confidence floor used when the low-confidence review trigger is switched on.
pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.70;

/// Reference test accuracies (percent) for the shipped three-member roster.
pub const DEFAULT_REFERENCE_ACCURACIES: [(&str, f64); 3] = [
    (ModelId::RESNET50, 100.00),
    (ModelId::DINOV2, 99.81),
    (ModelId::SWIN_TRANSFORMER, 99.81),
];

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("softmax input contains a non-finite logit")]
    NonFiniteInput,
    #[error("reference accuracy {0} is outside (0, 100]")]
    InvalidAccuracy(f64),
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error("invalid ensemble weights: {0}")]
    InvalidWeights(String),
    #[error("predictions do not match ensemble members: {0}")]
    MemberMismatch(String),
    #[error(transparent)]
    Probability(#[from] ProbabilityError),
}

impl Coded for FusionError {
    fn code(&self) -> &'static str {
        match self {
            FusionError::NonFiniteInput => "non_finite_input",
            FusionError::InvalidAccuracy(_) => "invalid_accuracy",
            FusionError::EmptyEnsemble => "empty_ensemble",
            FusionError::InvalidWeights(_) => "invalid_weights",
            FusionError::MemberMismatch(_) => "member_mismatch",
            FusionError::Probability(e) => e.code(),
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            FusionError::MemberMismatch(_) => ErrorClass::Internal,
            _ => ErrorClass::Validation,
        }
    }
}

/// Identity of an ensemble member. The three stock backbones have fixed
/// names; anything else is an opaque registered id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(String);

impl ModelId {
    pub const RESNET50: &'static str = "ResNet50";
    pub const DINOV2: &'static str = "DINOv2";
    pub const SWIN_TRANSFORMER: &'static str = "SwinTransformer";

    pub fn new(id: impl Into<String>) -> Self {
        ModelId(id.into())
    }

    pub fn resnet50() -> Self {
        ModelId::new(Self::RESNET50)
    }

    pub fn dinov2() -> Self {
        ModelId::new(Self::DINOV2)
    }

    pub fn swin_transformer() -> Self {
        ModelId::new(Self::SWIN_TRANSFORMER)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModelId {
    fn from(s: &str) -> Self {
        ModelId::new(s)
    }
}

/// Max-subtracted exponential normalization.
pub fn softmax(logits: &[f64; NUM_CLASSES]) -> Result<ClassProbabilities, FusionError> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(FusionError::NonFiniteInput);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps = [0.0; NUM_CLASSES];
    for (e, &l) in exps.iter_mut().zip(logits) {
        *e = (l - max).exp();
    }
    // the max entry contributes exp(0) = 1, so the sum is at least 1
    let sum = compensated_sum(exps.iter().copied());
    for e in &mut exps {
        *e /= sum;
    }
    Ok(ClassProbabilities::from_array_unchecked(exps))
}

/// Neumaier-compensated summation.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// One member model's output for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub model_id: ModelId,
    pub probabilities: ClassProbabilities,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_logits: Option<[f64; NUM_CLASSES]>,
}

impl ModelPrediction {
    pub fn from_logits(model_id: ModelId, logits: [f64; NUM_CLASSES]) -> Result<Self, FusionError> {
        Ok(ModelPrediction {
            model_id,
            probabilities: softmax(&logits)?,
            raw_logits: Some(logits),
        })
    }

    pub fn from_probabilities(model_id: ModelId, probabilities: ClassProbabilities) -> Self {
        ModelPrediction {
            model_id,
            probabilities,
            raw_logits: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub model_id: ModelId,
    /// Percent accuracy in (0, 100].
    pub reference_accuracy: f64,
}

/// Optional extra review trigger beyond member disagreement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReviewPolicy {
    /// Flag decisions whose fused confidence falls below this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_floor: Option<f64>,
}

impl ReviewPolicy {
    pub fn with_default_floor() -> Self {
        ReviewPolicy {
            confidence_floor: Some(DEFAULT_CONFIDENCE_FLOOR),
        }
    }
}

/// Ensemble roster and the weight each member's vote carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleConfigDocument", into = "EnsembleConfigDocument")]
pub struct EnsembleConfig {
    members: Vec<EnsembleMember>,
    weights: Vec<f64>,
    review: ReviewPolicy,
}

/// JSON form of [`EnsembleConfig`]. `weights` may be omitted, in which case
/// they are derived from the reference accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfigDocument {
    pub members: Vec<EnsembleMember>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "is_default_review")]
    pub review: ReviewPolicy,
}

fn is_default_review(r: &ReviewPolicy) -> bool {
    *r == ReviewPolicy::default()
}

fn check_accuracy(acc: f64) -> Result<f64, FusionError> {
    if acc.is_finite() && acc > 0.0 && acc <= 100.0 {
        Ok(acc)
    } else {
        Err(FusionError::InvalidAccuracy(acc))
    }
}

/// Accuracy-proportional weights: `w_m = acc_m / Σ acc`, renormalized so the
/// weights sum to one.
pub fn derive_weights(accuracies: &[f64]) -> Result<Vec<f64>, FusionError> {
    if accuracies.is_empty() {
        return Err(FusionError::EmptyEnsemble);
    }
    for &a in accuracies {
        check_accuracy(a)?;
    }
    let total = compensated_sum(accuracies.iter().copied());
    let mut weights: Vec<f64> = accuracies.iter().map(|a| a / total).collect();
    let norm = compensated_sum(weights.iter().copied());
    for w in &mut weights {
        *w /= norm;
    }
    Ok(weights)
}

impl EnsembleConfig {
    /// Weights derived from the members' reference accuracies.
    pub fn derive(members: Vec<EnsembleMember>) -> Result<Self, FusionError> {
        let accuracies: Vec<f64> = members.iter().map(|m| m.reference_accuracy).collect();
        let weights = derive_weights(&accuracies)?;
        Ok(EnsembleConfig {
            members,
            weights,
            review: ReviewPolicy::default(),
        })
    }

    /// Convenience for anonymous members given only accuracies; members are
    /// named `m0`, `m1`, ...
    pub fn from_accuracies(accuracies: &[f64]) -> Result<Self, FusionError> {
        Self::derive(
            accuracies
                .iter()
                .enumerate()
                .map(|(i, &a)| EnsembleMember {
                    model_id: ModelId::new(format!("m{i}")),
                    reference_accuracy: a,
                })
                .collect(),
        )
    }

    /// Explicit weights, overriding derivation. They must be non-negative and
    /// sum to one within 1e-9; they are then renormalized exactly.
    pub fn with_weights(members: Vec<EnsembleMember>, weights: Vec<f64>) -> Result<Self, FusionError> {
        if members.is_empty() {
            return Err(FusionError::EmptyEnsemble);
        }
        for m in &members {
            check_accuracy(m.reference_accuracy)?;
        }
        if weights.len() != members.len() {
            return Err(FusionError::InvalidWeights(format!(
                "{} weights for {} members",
                weights.len(),
                members.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(FusionError::InvalidWeights("weights must be finite and non-negative".into()));
        }
        let sum = compensated_sum(weights.iter().copied());
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(FusionError::InvalidWeights(format!("weights sum to {sum}")));
        }
        let weights = weights.into_iter().map(|w| w / sum).collect();
        Ok(EnsembleConfig {
            members,
            weights,
            review: ReviewPolicy::default(),
        })
    }

    /// The stock three-backbone roster with reference accuracies
    /// (100.00, 99.81, 99.81).
    pub fn reference_default() -> Self {
        Self::derive(
            DEFAULT_REFERENCE_ACCURACIES
                .iter()
                .map(|&(id, acc)| EnsembleMember {
                    model_id: ModelId::new(id),
                    reference_accuracy: acc,
                })
                .collect(),
        )
        .expect("reference accuracies are valid")
    }

    pub fn with_review(mut self, review: ReviewPolicy) -> Self {
        self.review = review;
        self
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn review(&self) -> ReviewPolicy {
        self.review
    }

    pub fn member_ids(&self) -> impl Iterator<Item = &ModelId> {
        self.members.iter().map(|m| &m.model_id)
    }
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self::reference_default()
    }
}

impl TryFrom<EnsembleConfigDocument> for EnsembleConfig {
    type Error = FusionError;

    fn try_from(doc: EnsembleConfigDocument) -> Result<Self, Self::Error> {
        let config = match doc.weights {
            Some(weights) => EnsembleConfig::with_weights(doc.members, weights)?,
            None => EnsembleConfig::derive(doc.members)?,
        };
        if let Some(floor) = doc.review.confidence_floor {
            if !(0.0..=1.0).contains(&floor) {
                return Err(FusionError::InvalidWeights(format!(
                    "confidence floor {floor} outside [0, 1]"
                )));
            }
        }
        Ok(config.with_review(doc.review))
    }
}

impl From<EnsembleConfig> for EnsembleConfigDocument {
    fn from(c: EnsembleConfig) -> Self {
        EnsembleConfigDocument {
            members: c.members,
            weights: Some(c.weights),
            review: c.review,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewReason {
    MemberDisagreement,
    LowConfidence,
}

/// Fused output for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDecision {
    pub fused: ClassProbabilities,
    pub predicted_class: WoundClass,
    pub confidence: f64,
    pub members: Vec<ModelId>,
    pub member_argmaxes: Vec<WoundClass>,
    pub needs_review: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub review_reasons: Vec<ReviewReason>,
}

/// Weighted soft vote over `predictions`, which must line up one-to-one and
/// in order with `config`'s members.
pub fn fuse(predictions: &[ModelPrediction], config: &EnsembleConfig) -> Result<EnsembleDecision, FusionError> {
    if predictions.len() != config.members.len() {
        return Err(FusionError::MemberMismatch(format!(
            "{} predictions for {} members",
            predictions.len(),
            config.members.len()
        )));
    }
    for (i, (p, m)) in predictions.iter().zip(&config.members).enumerate() {
        if p.model_id != m.model_id {
            return Err(FusionError::MemberMismatch(format!(
                "slot {i}: expected {}, got {}",
                m.model_id, p.model_id
            )));
        }
    }

    let mut fused = [0.0; NUM_CLASSES];
    for (c, slot) in fused.iter_mut().enumerate() {
        *slot = compensated_sum(
            predictions
                .iter()
                .zip(&config.weights)
                .map(|(p, w)| w * p.probabilities.values()[c]),
        );
    }
    let fused = ClassProbabilities::new(fused)?;
    let predicted_class = fused.argmax();
    let confidence = fused.max();
    let member_argmaxes: Vec<WoundClass> = predictions.iter().map(|p| p.probabilities.argmax()).collect();

    let mut review_reasons = Vec::new();
    if member_argmaxes.windows(2).any(|w| w[0] != w[1]) {
        review_reasons.push(ReviewReason::MemberDisagreement);
    }
    if let Some(floor) = config.review.confidence_floor {
        if confidence < floor {
            review_reasons.push(ReviewReason::LowConfidence);
        }
    }

    Ok(EnsembleDecision {
        fused,
        predicted_class,
        confidence,
        members: config.members.iter().map(|m| m.model_id.clone()).collect(),
        member_argmaxes,
        needs_review: !review_reasons.is_empty(),
        review_reasons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(v: [f64; 6]) -> ClassProbabilities {
        ClassProbabilities::new(v).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0; 6]).unwrap();
        for v in p.values() {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert_eq!(
            softmax(&[0.0, f64::NAN, 0.0, 0.0, 0.0, 0.0]),
            Err(FusionError::NonFiniteInput)
        );
        assert!(softmax(&[f64::INFINITY, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1000.0, 999.0, -1000.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(p.values().iter().all(|v| v.is_finite()));
        assert_eq!(p.argmax(), WoundClass::FootUlcer);
    }

    #[test]
    fn weights_for_equal_and_simple_accuracies() {
        let w = derive_weights(&[90.0, 90.0, 90.0]).unwrap();
        for x in &w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let w = derive_weights(&[75.0, 25.0]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn weight_errors() {
        assert_eq!(derive_weights(&[]), Err(FusionError::EmptyEnsemble));
        assert_eq!(derive_weights(&[0.0, 50.0]), Err(FusionError::InvalidAccuracy(0.0)));
        assert_eq!(derive_weights(&[100.5]), Err(FusionError::InvalidAccuracy(100.5)));
        assert!(derive_weights(&[f64::NAN]).is_err());
    }

    #[test]
    fn two_member_disagreement() {
        let config = EnsembleConfig::from_accuracies(&[75.0, 25.0]).unwrap();
        let preds = [
            ModelPrediction::from_probabilities("m0".into(), probs([0.8, 0.2, 0.0, 0.0, 0.0, 0.0])),
            ModelPrediction::from_probabilities("m1".into(), probs([0.2, 0.8, 0.0, 0.0, 0.0, 0.0])),
        ];
        let d = fuse(&preds, &config).unwrap();
        assert!((d.fused.values()[0] - 0.65).abs() < 1e-12);
        assert!((d.fused.values()[1] - 0.35).abs() < 1e-12);
        assert_eq!(d.predicted_class, WoundClass::FootUlcer);
        assert!(d.needs_review);
        assert_eq!(d.review_reasons, vec![ReviewReason::MemberDisagreement]);
    }

    #[test]
    fn identical_members_are_a_fixed_point() {
        let members = DEFAULT_REFERENCE_ACCURACIES
            .iter()
            .map(|&(id, acc)| EnsembleMember {
                model_id: id.into(),
                reference_accuracy: acc,
            })
            .collect();
        let config = EnsembleConfig::with_weights(members, vec![0.334, 0.333, 0.333]).unwrap();
        let v = probs([0.1, 0.05, 0.5, 0.15, 0.1, 0.1]);
        let preds: Vec<_> = config
            .member_ids()
            .map(|id| ModelPrediction::from_probabilities(id.clone(), v))
            .collect();
        let d = fuse(&preds, &config).unwrap();
        for (a, b) in d.fused.values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(!d.needs_review);
    }

    #[test]
    fn member_mismatch_is_detected() {
        let config = EnsembleConfig::reference_default();
        let v = ClassProbabilities::uniform();
        let two = vec![
            ModelPrediction::from_probabilities(ModelId::resnet50(), v),
            ModelPrediction::from_probabilities(ModelId::dinov2(), v),
        ];
        assert!(matches!(fuse(&two, &config), Err(FusionError::MemberMismatch(_))));
        let swapped = vec![
            ModelPrediction::from_probabilities(ModelId::dinov2(), v),
            ModelPrediction::from_probabilities(ModelId::resnet50(), v),
            ModelPrediction::from_probabilities(ModelId::swin_transformer(), v),
        ];
        assert!(matches!(fuse(&swapped, &config), Err(FusionError::MemberMismatch(_))));
    }

    #[test]
    fn low_confidence_trigger_is_opt_in() {
        let config = EnsembleConfig::from_accuracies(&[50.0]).unwrap();
        let preds = [ModelPrediction::from_probabilities(
            "m0".into(),
            probs([0.5, 0.1, 0.1, 0.1, 0.1, 0.1]),
        )];
        assert!(!fuse(&preds, &config).unwrap().needs_review);
        let strict = config.with_review(ReviewPolicy::with_default_floor());
        let d = fuse(&preds, &strict).unwrap();
        assert!(d.needs_review);
        assert_eq!(d.review_reasons, vec![ReviewReason::LowConfidence]);
    }

    #[test]
    fn config_json_derives_missing_weights() {
        let json = r#"{"members":[{"model_id":"a","reference_accuracy":75},{"model_id":"b","reference_accuracy":25}]}"#;
        let c: EnsembleConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.weights(), &[0.75, 0.25]);
        let out = serde_json::to_value(&c).unwrap();
        assert_eq!(out["weights"], serde_json::json!([0.75, 0.25]));
        let bad = r#"{"members":[{"model_id":"a","reference_accuracy":75}],"weights":[0.5]}"#;
        assert!(serde_json::from_str::<EnsembleConfig>(bad).is_err());
    }
}
