//! Error classification shared by the HTTP layer and the CLI.
//!
//! Every module error enum implements [`Coded`], giving each variant a stable
//! machine code and a coarse [`ErrorClass`]. The API maps classes onto HTTP
//! statuses; the CLI maps them onto exit codes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    /// Request or file could not be parsed at all.
    Malformed,
    /// Well-formed input that violates a domain rule.
    Validation,
    NotFound,
    Conflict,
    /// Image bytes or model files in a format we cannot read.
    Unsupported,
    /// A backend failed or is not configured.
    Unavailable,
    Internal,
}

pub trait Coded {
    /// Stable snake_case identifier for this error variant.
    fn code(&self) -> &'static str;
    fn class(&self) -> ErrorClass;
}
