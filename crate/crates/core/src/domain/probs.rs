use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::class::{WoundClass, NUM_CLASSES};
use crate::error::{Coded, ErrorClass};

/// Sums within this distance of 1 are accepted unchanged.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;
/// Sums off by less than this (but more than [`SIMPLEX_TOLERANCE`]) are renormalized.
pub const RENORMALIZE_LIMIT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbabilityError {
    #[error("expected {NUM_CLASSES} probabilities, got {0}")]
    WrongArity(usize),
    #[error("not a probability vector: {0}")]
    NotASimplex(String),
}

impl Coded for ProbabilityError {
    fn code(&self) -> &'static str {
        match self {
            ProbabilityError::WrongArity(_) => "wrong_arity",
            ProbabilityError::NotASimplex(_) => "not_a_simplex",
        }
    }

    fn class(&self) -> ErrorClass {
        ErrorClass::Validation
    }
}

/// A probability vector over the six wound classes, indexed by
/// [`WoundClass::index`]. Serialized as a 6-element JSON array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassProbabilities([f64; NUM_CLASSES]);

/// Result of [`validate_probabilities`]; `renormalized` is set when the input
/// drifted off the simplex slightly and was rescaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidatedProbabilities {
    pub probabilities: ClassProbabilities,
    pub renormalized: bool,
}

pub fn validate_probabilities(values: &[f64]) -> Result<ValidatedProbabilities, ProbabilityError> {
    if values.len() != NUM_CLASSES {
        return Err(ProbabilityError::WrongArity(values.len()));
    }
    let mut out = [0.0; NUM_CLASSES];
    for (slot, &v) in out.iter_mut().zip(values) {
        if !v.is_finite() {
            return Err(ProbabilityError::NotASimplex(format!("non-finite entry {v}")));
        }
        if v < 0.0 {
            return Err(ProbabilityError::NotASimplex(format!("negative entry {v}")));
        }
        if v > 1.0 + SIMPLEX_TOLERANCE {
            return Err(ProbabilityError::NotASimplex(format!("entry {v} exceeds 1")));
        }
        // `+ 0.0` turns -0.0 into +0.0
        *slot = v.min(1.0) + 0.0;
    }
    let sum: f64 = out.iter().sum();
    let drift = (sum - 1.0).abs();
    if drift <= SIMPLEX_TOLERANCE {
        return Ok(ValidatedProbabilities {
            probabilities: ClassProbabilities(out),
            renormalized: false,
        });
    }
    if drift >= RENORMALIZE_LIMIT {
        return Err(ProbabilityError::NotASimplex(format!("entries sum to {sum}")));
    }
    for v in &mut out {
        *v /= sum;
    }
    Ok(ValidatedProbabilities {
        probabilities: ClassProbabilities(out),
        renormalized: true,
    })
}

impl ClassProbabilities {
    pub fn new(values: [f64; NUM_CLASSES]) -> Result<Self, ProbabilityError> {
        validate_probabilities(&values).map(|v| v.probabilities)
    }

    pub fn uniform() -> Self {
        ClassProbabilities([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    pub fn one_hot(class: WoundClass) -> Self {
        let mut values = [0.0; NUM_CLASSES];
        values[class.index()] = 1.0;
        ClassProbabilities(values)
    }

    /// Skips validation; callers guarantee the simplex invariants hold.
    pub(crate) fn from_array_unchecked(values: [f64; NUM_CLASSES]) -> Self {
        ClassProbabilities(values)
    }

    pub fn values(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    pub fn get(&self, class: WoundClass) -> f64 {
        self.0[class.index()]
    }

    /// Most probable class; ties go to the lowest class index.
    pub fn argmax(&self) -> WoundClass {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        WoundClass::ALL[best]
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax().index()]
    }
}

impl TryFrom<Vec<f64>> for ClassProbabilities {
    type Error = ProbabilityError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        validate_probabilities(&values).map(|v| v.probabilities)
    }
}

impl From<ClassProbabilities> for Vec<f64> {
    fn from(p: ClassProbabilities) -> Self {
        p.0.to_vec()
    }
}
