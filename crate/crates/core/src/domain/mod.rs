//! Shared vocabulary: the wound taxonomy, probability vectors and assessments.

mod assessment;
mod class;
mod probs;

pub use assessment::{parse_timestamp, AssessmentError, AssessmentInput, WoundAssessment};
pub use class::{parse_wound_class, ClassError, WoundClass, NUM_CLASSES};
pub use probs::{
    validate_probabilities, ClassProbabilities, ProbabilityError, ValidatedProbabilities,
    RENORMALIZE_LIMIT, SIMPLEX_TOLERANCE,
};
