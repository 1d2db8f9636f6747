use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Coded, ErrorClass};

/// Number of wound categories in the taxonomy.
pub const NUM_CLASSES: usize = 6;

/// The closed six-way wound taxonomy.
///
/// Index order follows the dataset composition table and is fixed for the
/// life of any data store: logs and probability vectors are indexed by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WoundClass {
    FootUlcer,
    FungatingMalignantTumour,
    PilonidalSinus,
    PressureUlcer,
    ThermalBurn,
    VenousUlcer,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassError {
    #[error("unknown wound class {0:?}")]
    UnknownClass(String),
    #[error("class index {0} out of range")]
    IndexOutOfRange(usize),
}

impl Coded for ClassError {
    fn code(&self) -> &'static str {
        match self {
            ClassError::UnknownClass(_) => "unknown_class",
            ClassError::IndexOutOfRange(_) => "class_index_out_of_range",
        }
    }

    fn class(&self) -> ErrorClass {
        ErrorClass::Validation
    }
}

impl WoundClass {
    pub const ALL: [WoundClass; NUM_CLASSES] = [
        WoundClass::FootUlcer,
        WoundClass::FungatingMalignantTumour,
        WoundClass::PilonidalSinus,
        WoundClass::PressureUlcer,
        WoundClass::ThermalBurn,
        WoundClass::VenousUlcer,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self, ClassError> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or(ClassError::IndexOutOfRange(index))
    }

    /// Identifier used in JSON encodings.
    pub fn code(self) -> &'static str {
        match self {
            WoundClass::FootUlcer => "FootUlcer",
            WoundClass::FungatingMalignantTumour => "FungatingMalignantTumour",
            WoundClass::PilonidalSinus => "PilonidalSinus",
            WoundClass::PressureUlcer => "PressureUlcer",
            WoundClass::ThermalBurn => "ThermalBurn",
            WoundClass::VenousUlcer => "VenousUlcer",
        }
    }

    /// Clinical display name, as the category is labelled in the dataset.
    pub fn display_name(self) -> &'static str {
        match self {
            WoundClass::FootUlcer => "Foot wounds and ulcers (Primarily Diabetic Foot Ulcer)",
            WoundClass::FungatingMalignantTumour => "Fungating malignant breast tumour",
            WoundClass::PilonidalSinus => "Pilonidal sinus wounds",
            WoundClass::PressureUlcer => "Pressure ulcers (Pressure Ulcer)",
            WoundClass::ThermalBurn => "Thermal injuries (Burns)",
            WoundClass::VenousUlcer => "Venous ulcers (Venous Ulcer)",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            WoundClass::FootUlcer => &[
                "foot ulcer",
                "foot ulcers",
                "foot wounds and ulcers",
                "diabetic foot ulcer",
                "diabetic ulcer",
                "dfu",
            ],
            WoundClass::FungatingMalignantTumour => &[
                "fungating malignant tumour",
                "fungating malignant tumor",
                "fungating malignant breast tumor",
                "fungating tumour",
                "malignant wound",
            ],
            WoundClass::PilonidalSinus => &["pilonidal sinus", "pilonidal sinus wound"],
            WoundClass::PressureUlcer => &["pressure ulcer", "pressure ulcers", "pressure injury"],
            WoundClass::ThermalBurn => &[
                "thermal burn",
                "thermal injuries",
                "thermal injury",
                "thermal injuries (burns)",
                "burn",
                "burns",
            ],
            WoundClass::VenousUlcer => &["venous ulcer", "venous ulcers", "venous leg ulcer"],
        }
    }
}

fn normalize_label(label: &str) -> String {
    label
        .trim()
        .to_lowercase()
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Resolve a free-text label against canonical names, display names and
/// aliases, case-insensitively.
pub fn parse_wound_class(label: &str) -> Result<WoundClass, ClassError> {
    let wanted = normalize_label(label);
    let compact: String = wanted.chars().filter(|c| !c.is_whitespace()).collect();
    WoundClass::ALL
        .into_iter()
        .find(|class| {
            class.code().eq_ignore_ascii_case(&compact)
                || normalize_label(class.display_name()) == wanted
                || class.aliases().iter().any(|alias| *alias == wanted)
        })
        .ok_or_else(|| ClassError::UnknownClass(label.to_string()))
}

impl fmt::Display for WoundClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for WoundClass {
    type Err = ClassError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_wound_class(s)
    }
}
