use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{WoundAssessment, WoundClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    /// Free-form metadata; the store never interprets it.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub demographics: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wound_label: Option<WoundClass>,
    pub created_at: DateTime<Utc>,
    /// Client-supplied key; replaying a create with the same key is a no-op.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertAcknowledgedRecord {
    pub patient_id: String,
    pub alert_ref: String,
    pub acknowledged_by: String,
    pub acknowledged_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelConfirmedRecord {
    pub patient_id: String,
    pub wound_label: WoundClass,
    pub confirmed_by: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTombstonedRecord {
    pub patient_id: String,
    #[serde(default)]
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    PatientCreated(PatientRecord),
    AssessmentAppended(WoundAssessment),
    AlertAcknowledged(AlertAcknowledgedRecord),
    LabelConfirmed(LabelConfirmedRecord),
    PatientTombstoned(PatientTombstonedRecord),
}

impl EventKind {
    pub fn patient_id(&self) -> &str {
        match self {
            EventKind::PatientCreated(r) => &r.patient_id,
            EventKind::AssessmentAppended(a) => &a.patient_id,
            EventKind::AlertAcknowledged(r) => &r.patient_id,
            EventKind::LabelConfirmed(r) => &r.patient_id,
            EventKind::PatientTombstoned(r) => &r.patient_id,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EventKind::PatientCreated(_) => "PatientCreated",
            EventKind::AssessmentAppended(_) => "AssessmentAppended",
            EventKind::AlertAcknowledged(_) => "AlertAcknowledged",
            EventKind::LabelConfirmed(_) => "LabelConfirmed",
            EventKind::PatientTombstoned(_) => "PatientTombstoned",
        }
    }
}

/// One entry of the log. Serialized as
/// `{"sequence_no":…,"recorded_at":…,"kind":…,"payload":{…}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreEvent {
    pub sequence_no: u64,
    pub recorded_at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: EventKind,
}

/// Source of `recorded_at` and acknowledgement times.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        // millisecond precision keeps serialized times short and stable
        let ms = Utc::now().timestamp_millis();
        Utc.timestamp_millis_opt(ms).single().unwrap_or_else(Utc::now)
    }
}

/// Deterministic clock: starts at a fixed instant and advances by a fixed
/// step on every reading.
#[derive(Debug)]
pub struct SteppingClock {
    next_ms: AtomicI64,
    step_ms: i64,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        SteppingClock {
            next_ms: AtomicI64::new(start.timestamp_millis()),
            step_ms: step.num_milliseconds(),
        }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let ms = self.next_ms.fetch_add(self.step_ms, Ordering::SeqCst);
        Utc.timestamp_millis_opt(ms).single().expect("clock within chrono range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_json_shape() {
        let ev = StoreEvent {
            sequence_no: 7,
            recorded_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            event: EventKind::LabelConfirmed(LabelConfirmedRecord {
                patient_id: "P001".into(),
                wound_label: WoundClass::FootUlcer,
                confirmed_by: "dr.k".into(),
            }),
        };
        let json = serde_json::to_string(&ev).unwrap();
        assert_eq!(
            json,
            r#"{"sequence_no":7,"recorded_at":"2024-01-01T00:00:00Z","kind":"LabelConfirmed","payload":{"patient_id":"P001","wound_label":"FootUlcer","confirmed_by":"dr.k"}}"#
        );
        assert_eq!(serde_json::from_str::<StoreEvent>(&json).unwrap(), ev);
    }

    #[test]
    fn assessment_event_round_trips() {
        let a = WoundAssessment::new("P9", Utc.with_ymd_and_hms(2024, 2, 3, 4, 5, 6).unwrap(), 12.25)
            .unwrap()
            .with_grades(Some(2), Some(3))
            .unwrap();
        let ev = StoreEvent {
            sequence_no: 1,
            recorded_at: Utc.with_ymd_and_hms(2024, 2, 3, 4, 5, 7).unwrap(),
            event: EventKind::AssessmentAppended(a),
        };
        let json = serde_json::to_string(&ev).unwrap();
        let back: StoreEvent = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ev);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    #[test]
    fn stepping_clock_advances() {
        let c = SteppingClock::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(), Duration::seconds(1));
        let a = c.now();
        let b = c.now();
        assert_eq!(b - a, Duration::seconds(1));
    }
}
