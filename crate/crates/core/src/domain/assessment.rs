use chrono::{DateTime, FixedOffset, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Coded, ErrorClass};
use crate::fusion::EnsembleDecision;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssessmentError {
    #[error("wound area must be a finite, non-negative number of cm², got {0}")]
    InvalidArea(f64),
    #[error("{field} must be 1, 2 or 3, got {value}")]
    InvalidGrade { field: &'static str, value: i64 },
    #[error("cannot parse timestamp {0:?}; expected RFC 3339 or YYYY-MM-DD")]
    InvalidTimestamp(String),
    #[error("assessment has no patient id")]
    MissingPatientId,
    #[error("patient id {found:?} does not match {expected:?}")]
    PatientMismatch { expected: String, found: String },
}

impl Coded for AssessmentError {
    fn code(&self) -> &'static str {
        match self {
            AssessmentError::InvalidArea(_) => "invalid_area",
            AssessmentError::InvalidGrade { .. } => "invalid_grade",
            AssessmentError::InvalidTimestamp(_) => "invalid_timestamp",
            AssessmentError::MissingPatientId => "missing_patient_id",
            AssessmentError::PatientMismatch { .. } => "patient_mismatch",
        }
    }

    fn class(&self) -> ErrorClass {
        ErrorClass::Validation
    }
}

/// Parse a capture time. Accepts RFC 3339 with any offset, a naive
/// `YYYY-MM-DDTHH:MM:SS` (taken as UTC) or a bare date (midnight UTC).
/// Returns the UTC instant and the original offset in minutes.
pub fn parse_timestamp(input: &str) -> Result<(DateTime<Utc>, i32), AssessmentError> {
    let s = input.trim();
    if let Ok(dt) = DateTime::<FixedOffset>::parse_from_rfc3339(s) {
        let offset = dt.offset().local_minus_utc() / 60;
        return Ok((dt.with_timezone(&Utc), offset));
    }
    if let Ok(naive) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f") {
        return Ok((naive.and_utc(), 0));
    }
    if let Ok(date) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok((date.and_hms_opt(0, 0, 0).expect("midnight").and_utc(), 0));
    }
    Err(AssessmentError::InvalidTimestamp(input.to_string()))
}

/// One timestamped wound observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AssessmentInput")]
pub struct WoundAssessment {
    pub patient_id: String,
    /// Always UTC; `source_offset_minutes` keeps the offset the device reported.
    pub captured_at: DateTime<Utc>,
    pub source_offset_minutes: i32,
    pub area_cm2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_grade: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tissue_grade: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<EnsembleDecision>,
    #[serde(default)]
    pub notes: String,
}

/// Wire shape of an assessment before domain validation. Parsing into this
/// type only fails on structurally malformed JSON; [`AssessmentInput::validate`]
/// applies the domain rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessmentInput {
    #[serde(default)]
    pub patient_id: Option<String>,
    pub captured_at: String,
    #[serde(default)]
    pub source_offset_minutes: Option<i32>,
    pub area_cm2: f64,
    #[serde(default)]
    pub depth_grade: Option<i64>,
    #[serde(default)]
    pub tissue_grade: Option<i64>,
    #[serde(default)]
    pub classification: Option<EnsembleDecision>,
    #[serde(default)]
    pub notes: Option<String>,
}

fn check_grade(field: &'static str, value: Option<i64>) -> Result<Option<u8>, AssessmentError> {
    match value {
        None => Ok(None),
        Some(v @ 1..=3) => Ok(Some(v as u8)),
        Some(v) => Err(AssessmentError::InvalidGrade { field, value: v }),
    }
}

impl AssessmentInput {
    pub fn validate(self) -> Result<WoundAssessment, AssessmentError> {
        let patient_id = match self.patient_id {
            Some(id) if !id.trim().is_empty() => id,
            _ => return Err(AssessmentError::MissingPatientId),
        };
        let (captured_at, parsed_offset) = parse_timestamp(&self.captured_at)?;
        if !self.area_cm2.is_finite() || self.area_cm2 < 0.0 {
            return Err(AssessmentError::InvalidArea(self.area_cm2));
        }
        Ok(WoundAssessment {
            patient_id,
            captured_at,
            source_offset_minutes: self.source_offset_minutes.unwrap_or(parsed_offset),
            area_cm2: self.area_cm2 + 0.0,
            depth_grade: check_grade("depth_grade", self.depth_grade)?,
            tissue_grade: check_grade("tissue_grade", self.tissue_grade)?,
            classification: self.classification,
            notes: self.notes.unwrap_or_default(),
        })
    }
}

impl TryFrom<AssessmentInput> for WoundAssessment {
    type Error = AssessmentError;

    fn try_from(input: AssessmentInput) -> Result<Self, Self::Error> {
        input.validate()
    }
}

impl WoundAssessment {
    /// Area-only assessment; the common case for operator-entered measurements.
    pub fn new(
        patient_id: impl Into<String>,
        captured_at: DateTime<Utc>,
        area_cm2: f64,
    ) -> Result<Self, AssessmentError> {
        if !area_cm2.is_finite() || area_cm2 < 0.0 {
            return Err(AssessmentError::InvalidArea(area_cm2));
        }
        Ok(WoundAssessment {
            patient_id: patient_id.into(),
            captured_at,
            source_offset_minutes: 0,
            area_cm2: area_cm2 + 0.0,
            depth_grade: None,
            tissue_grade: None,
            classification: None,
            notes: String::new(),
        })
    }

    pub fn with_grades(mut self, depth: Option<u8>, tissue: Option<u8>) -> Result<Self, AssessmentError> {
        self.depth_grade = check_grade("depth_grade", depth.map(i64::from))?;
        self.tissue_grade = check_grade("tissue_grade", tissue.map(i64::from))?;
        Ok(self)
    }
}
