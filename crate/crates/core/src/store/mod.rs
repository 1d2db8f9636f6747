//! Event-sourced patient store: a single append-only file of checksummed
//! JSON events. State is a fold over the log, rebuilt on every open.
//!
//! One writer at a time (`&mut self`); readers see the state as of the last
//! applied sequence number.

mod events;
mod format;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AssessmentError, WoundAssessment, WoundClass};
use crate::error::{Coded, ErrorClass};
use crate::healing::{build_report, Acknowledgement, AlertRef, ClinicalAlert, HealingError, HealingReport, TrackerConfig};

pub use events::{
    AlertAcknowledgedRecord, Clock, EventKind, LabelConfirmedRecord, PatientRecord, PatientTombstonedRecord,
    SteppingClock, StoreEvent, SystemClock,
};
pub use format::{
    encode_frame, encode_header, scan, FormatError, Frame, Scan, TornTail, CHECKSUM_CRC32, FORMAT_VERSION,
    FRAME_HEADER_LEN, HEADER_LEN, MAGIC, MAX_PAYLOAD_LEN,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("patient {0:?} already exists")]
    DuplicatePatient(String),
    #[error("unknown patient {0:?}")]
    UnknownPatient(String),
    #[error("patient {0:?} has been deleted")]
    PatientDeleted(String),
    #[error("assessment at {attempted} is not after the latest one for {patient_id} ({latest})")]
    TimestampRegression {
        patient_id: String,
        latest: String,
        attempted: String,
    },
    #[error("unknown alert {0:?}")]
    UnknownAlert(String),
    #[error("alert {0:?} is already acknowledged")]
    AlreadyAcknowledged(String),
    #[error("idempotency key {key:?} was already used for patient {existing:?}")]
    IdempotencyConflict { key: String, existing: String },
    #[error("patient id must be non-empty and free of control characters, '~' and '/'")]
    InvalidPatientId,
    #[error("acknowledger must be non-empty")]
    MissingActor,
    #[error(transparent)]
    Assessment(#[from] AssessmentError),
    #[error(transparent)]
    Healing(#[from] HealingError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("event log is inconsistent at sequence {sequence_no}: {reason}")]
    Replay { sequence_no: u64, reason: String },
    #[error("import line {line}: {message}")]
    Import { line: usize, message: String },
    #[error("store i/o: {0}")]
    Io(String),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

impl Coded for StoreError {
    fn code(&self) -> &'static str {
        match self {
            StoreError::DuplicatePatient(_) => "duplicate_patient",
            StoreError::UnknownPatient(_) => "unknown_patient",
            StoreError::PatientDeleted(_) => "patient_deleted",
            StoreError::TimestampRegression { .. } => "timestamp_regression",
            StoreError::UnknownAlert(_) => "unknown_alert",
            StoreError::AlreadyAcknowledged(_) => "already_acknowledged",
            StoreError::IdempotencyConflict { .. } => "idempotency_conflict",
            StoreError::InvalidPatientId => "invalid_patient_id",
            StoreError::MissingActor => "missing_actor",
            StoreError::Assessment(e) => e.code(),
            StoreError::Healing(HealingError::MalformedAlertRef(_)) => "unknown_alert",
            StoreError::Healing(e) => e.code(),
            StoreError::Format(_) => "store_format",
            StoreError::Replay { .. } => "store_replay",
            StoreError::Import { .. } => "import_failed",
            StoreError::Io(_) => "store_io",
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            StoreError::DuplicatePatient(_)
            | StoreError::PatientDeleted(_)
            | StoreError::TimestampRegression { .. }
            | StoreError::AlreadyAcknowledged(_)
            | StoreError::IdempotencyConflict { .. } => ErrorClass::Conflict,
            StoreError::UnknownPatient(_) | StoreError::UnknownAlert(_) => ErrorClass::NotFound,
            StoreError::InvalidPatientId | StoreError::MissingActor => ErrorClass::Validation,
            StoreError::Assessment(e) => e.class(),
            StoreError::Healing(e) => e.class(),
            StoreError::Import { .. } => ErrorClass::Malformed,
            StoreError::Format(_) | StoreError::Replay { .. } | StoreError::Io(_) => ErrorClass::Internal,
        }
    }
}

pub fn validate_patient_id(id: &str) -> Result<(), StoreError> {
    if id.trim().is_empty() || id.len() > 128 || id.chars().any(|c| c.is_control() || c == '~' || c == '/') {
        return Err(StoreError::InvalidPatientId);
    }
    Ok(())
}

/// Fields a caller supplies when enrolling a patient.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewPatient {
    pub patient_id: String,
    #[serde(default)]
    pub demographics: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub wound_label: Option<WoundClass>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

impl NewPatient {
    pub fn new(patient_id: impl Into<String>) -> Self {
        NewPatient {
            patient_id: patient_id.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateOutcome {
    pub record: PatientRecord,
    /// False when an earlier create with the same idempotency key is replayed.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineItem {
    pub sequence_no: u64,
    pub assessment: WoundAssessment,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelinePage {
    pub patient_id: String,
    pub items: Vec<TimelineItem>,
    /// Pass as `after` to fetch the next page; absent on the last page.
    pub next_cursor: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlertItem {
    pub sequence_no: u64,
    pub alert: ClinicalAlert,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlertPage {
    pub patient_id: String,
    pub items: Vec<AlertItem>,
    pub next_cursor: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct PatientState {
    record: Option<PatientRecord>,
    assessments: Vec<WoundAssessment>,
    assessment_seqs: Vec<u64>,
    acks: BTreeMap<String, Acknowledgement>,
    deleted: bool,
}

/// Everything derivable from the log.
#[derive(Debug, Clone, PartialEq, Default)]
struct StoreState {
    patients: BTreeMap<String, PatientState>,
    idempotency: HashMap<String, String>,
    last_seq: u64,
}

impl StoreState {
    fn patient(&self, id: &str) -> Result<&PatientState, StoreError> {
        self.patients.get(id).ok_or_else(|| StoreError::UnknownPatient(id.to_string()))
    }

    fn writable(&self, id: &str) -> Result<&PatientState, StoreError> {
        let p = self.patient(id)?;
        if p.deleted {
            return Err(StoreError::PatientDeleted(id.to_string()));
        }
        Ok(p)
    }

    /// Preconditions an event must meet against the current state.
    fn check(&self, event: &EventKind) -> Result<(), StoreError> {
        match event {
            EventKind::PatientCreated(r) => {
                validate_patient_id(&r.patient_id)?;
                if self.patients.contains_key(&r.patient_id) {
                    return Err(StoreError::DuplicatePatient(r.patient_id.clone()));
                }
                if let Some(key) = &r.idempotency_key {
                    if let Some(existing) = self.idempotency.get(key) {
                        return Err(StoreError::IdempotencyConflict {
                            key: key.clone(),
                            existing: existing.clone(),
                        });
                    }
                }
            }
            EventKind::AssessmentAppended(a) => {
                let p = self.writable(&a.patient_id)?;
                if let Some(latest) = p.assessments.last() {
                    if a.captured_at <= latest.captured_at {
                        return Err(StoreError::TimestampRegression {
                            patient_id: a.patient_id.clone(),
                            latest: latest.captured_at.to_rfc3339(),
                            attempted: a.captured_at.to_rfc3339(),
                        });
                    }
                }
            }
            EventKind::AlertAcknowledged(r) => {
                let p = self.writable(&r.patient_id)?;
                if p.acks.contains_key(&r.alert_ref) {
                    return Err(StoreError::AlreadyAcknowledged(r.alert_ref.clone()));
                }
            }
            EventKind::LabelConfirmed(r) => {
                self.writable(&r.patient_id)?;
            }
            EventKind::PatientTombstoned(r) => {
                self.writable(&r.patient_id)?;
            }
        }
        Ok(())
    }

    /// Apply an event that passed [`StoreState::check`].
    fn apply(&mut self, seq: u64, event: &EventKind) {
        self.last_seq = seq;
        let id = event.patient_id().to_string();
        let p = self.patients.entry(id.clone()).or_default();
        match event {
            EventKind::PatientCreated(r) => {
                if let Some(key) = &r.idempotency_key {
                    self.idempotency.insert(key.clone(), id);
                }
                p.record = Some(r.clone());
            }
            EventKind::AssessmentAppended(a) => {
                p.assessments.push(a.clone());
                p.assessment_seqs.push(seq);
            }
            EventKind::AlertAcknowledged(r) => {
                p.acks.insert(
                    r.alert_ref.clone(),
                    Acknowledgement {
                        acknowledged_by: r.acknowledged_by.clone(),
                        acknowledged_at: r.acknowledged_at,
                    },
                );
            }
            EventKind::LabelConfirmed(r) => {
                if let Some(rec) = p.record.as_mut() {
                    rec.wound_label = Some(r.wound_label);
                }
            }
            EventKind::PatientTombstoned(_) => p.deleted = true,
        }
    }
}

#[derive(Clone)]
pub struct StoreOptions {
    pub clock: Arc<dyn Clock>,
    pub tracker: TrackerConfig,
    /// `fsync` after every append. Turning this off trades durability of the
    /// most recent events for speed; the framing still guarantees that a crash
    /// loses whole events only.
    pub sync_every_append: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            clock: Arc::new(SystemClock),
            tracker: TrackerConfig::default(),
            sync_every_append: true,
        }
    }
}

impl std::fmt::Debug for StoreOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoreOptions")
            .field("tracker", &self.tracker)
            .field("sync_every_append", &self.sync_every_append)
            .finish_non_exhaustive()
    }
}

#[derive(Debug)]
struct Backing {
    path: PathBuf,
    file: File,
    len: u64,
}

#[derive(Debug)]
pub struct PatientStore {
    backing: Option<Backing>,
    events: Vec<StoreEvent>,
    state: StoreState,
    options: StoreOptions,
    recovered: Option<TornTail>,
}

impl PatientStore {
    /// A store with no file behind it.
    pub fn in_memory(options: StoreOptions) -> Self {
        PatientStore {
            backing: None,
            events: Vec::new(),
            state: StoreState::default(),
            options,
            recovered: None,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(path, StoreOptions::default())
    }

    /// Open or create a store file and replay it. A torn final frame is cut
    /// off the file and reported by [`PatientStore::recovered_tail`].
    pub fn open_with(path: impl AsRef<Path>, options: StoreOptions) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let scanned = scan(&bytes)?;

        let mut store = PatientStore::in_memory(options);
        for frame in &scanned.frames {
            let event: StoreEvent = serde_json::from_slice(frame.payload).map_err(|e| StoreError::Replay {
                sequence_no: store.state.last_seq + 1,
                reason: format!("undecodable event at byte {}: {e}", frame.offset),
            })?;
            store.replay_one(event)?;
        }

        let mut len = scanned.valid_len;
        if scanned.torn.is_some() || scanned.needs_header {
            file.set_len(len)?;
        }
        if scanned.needs_header {
            file.seek(SeekFrom::Start(0))?;
            file.write_all(&encode_header())?;
            file.sync_all()?;
            len = HEADER_LEN as u64;
        } else if scanned.torn.is_some() {
            file.sync_all()?;
        }
        file.seek(SeekFrom::Start(len))?;
        store.recovered = scanned.torn;
        store.backing = Some(Backing { path, file, len });
        Ok(store)
    }

    fn replay_one(&mut self, event: StoreEvent) -> Result<(), StoreError> {
        let expected = self.state.last_seq + 1;
        if event.sequence_no != expected {
            return Err(StoreError::Replay {
                sequence_no: event.sequence_no,
                reason: format!("expected sequence {expected}"),
            });
        }
        self.state.check(&event.event).map_err(|e| StoreError::Replay {
            sequence_no: event.sequence_no,
            reason: e.to_string(),
        })?;
        self.state.apply(event.sequence_no, &event.event);
        self.events.push(event);
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        self.backing.as_ref().map(|b| b.path.as_path())
    }

    /// What was discarded from the end of the file when it was opened.
    pub fn recovered_tail(&self) -> Option<&TornTail> {
        self.recovered.as_ref()
    }

    pub fn last_sequence(&self) -> u64 {
        self.state.last_seq
    }

    pub fn events(&self) -> &[StoreEvent] {
        &self.events
    }

    pub fn tracker_config(&self) -> &TrackerConfig {
        &self.options.tracker
    }

    /// Validate, persist, then apply. Nothing changes if any step fails.
    fn commit(&mut self, event: EventKind) -> Result<u64, StoreError> {
        self.commit_at(event, None)
    }

    fn commit_at(&mut self, event: EventKind, recorded_at: Option<chrono::DateTime<chrono::Utc>>) -> Result<u64, StoreError> {
        self.state.check(&event)?;
        let seq = self.state.last_seq + 1;
        let stored = StoreEvent {
            sequence_no: seq,
            recorded_at: recorded_at.unwrap_or_else(|| self.options.clock.now()),
            event,
        };
        if let Some(b) = self.backing.as_mut() {
            let payload = serde_json::to_vec(&stored).map_err(|e| StoreError::Io(e.to_string()))?;
            let frame = encode_frame(&payload);
            let written = b.file.write_all(&frame).and_then(|_| {
                if self.options.sync_every_append {
                    b.file.sync_data()
                } else {
                    Ok(())
                }
            });
            if let Err(e) = written {
                // drop whatever part of the frame reached the file
                let _ = b.file.set_len(b.len);
                let _ = b.file.seek(SeekFrom::Start(b.len));
                return Err(e.into());
            }
            b.len += frame.len() as u64;
        }
        self.state.apply(seq, &stored.event);
        self.events.push(stored);
        Ok(seq)
    }

    /// Flush buffered appends to disk.
    pub fn sync(&mut self) -> Result<(), StoreError> {
        if let Some(b) = self.backing.as_mut() {
            b.file.sync_data()?;
        }
        Ok(())
    }

    pub fn create_patient(&mut self, new: NewPatient) -> Result<CreateOutcome, StoreError> {
        if let Some(key) = &new.idempotency_key {
            if let Some(existing) = self.state.idempotency.get(key) {
                if *existing == new.patient_id {
                    let record = self.patient(existing)?.clone();
                    return Ok(CreateOutcome { record, created: false });
                }
            }
        }
        let record = PatientRecord {
            patient_id: new.patient_id,
            demographics: new.demographics,
            wound_label: new.wound_label,
            created_at: self.options.clock.now(),
            idempotency_key: new.idempotency_key,
        };
        self.commit_at(EventKind::PatientCreated(record.clone()), Some(record.created_at))?;
        Ok(CreateOutcome { record, created: true })
    }

    /// Append an assessment; its timestamp must be strictly after the
    /// patient's latest.
    pub fn append_assessment(&mut self, patient_id: &str, assessment: WoundAssessment) -> Result<u64, StoreError> {
        if assessment.patient_id != patient_id {
            return Err(AssessmentError::PatientMismatch {
                expected: patient_id.to_string(),
                found: assessment.patient_id,
            }
            .into());
        }
        self.commit(EventKind::AssessmentAppended(assessment))
    }

    pub fn confirm_label(&mut self, patient_id: &str, label: WoundClass, confirmed_by: &str) -> Result<u64, StoreError> {
        if confirmed_by.trim().is_empty() {
            return Err(StoreError::MissingActor);
        }
        self.commit(EventKind::LabelConfirmed(LabelConfirmedRecord {
            patient_id: patient_id.to_string(),
            wound_label: label,
            confirmed_by: confirmed_by.to_string(),
        }))
    }

    /// Mark a patient deleted. Its history stays in the log and stays readable.
    pub fn tombstone_patient(&mut self, patient_id: &str, reason: &str) -> Result<u64, StoreError> {
        self.commit(EventKind::PatientTombstoned(PatientTombstonedRecord {
            patient_id: patient_id.to_string(),
            reason: reason.to_string(),
        }))
    }

    pub fn patient(&self, patient_id: &str) -> Result<&PatientRecord, StoreError> {
        self.state
            .patient(patient_id)?
            .record
            .as_ref()
            .ok_or_else(|| StoreError::UnknownPatient(patient_id.to_string()))
    }

    pub fn is_deleted(&self, patient_id: &str) -> Result<bool, StoreError> {
        Ok(self.state.patient(patient_id)?.deleted)
    }

    /// Live (not deleted) patients in id order.
    pub fn patients(&self) -> impl Iterator<Item = &PatientRecord> {
        self.state.patients.values().filter(|p| !p.deleted).filter_map(|p| p.record.as_ref())
    }

    pub fn load_timeline(&self, patient_id: &str) -> Result<Vec<WoundAssessment>, StoreError> {
        Ok(self.state.patient(patient_id)?.assessments.clone())
    }

    /// Assessments with sequence number greater than `after`, at most `limit`.
    pub fn timeline_page(&self, patient_id: &str, after: Option<u64>, limit: usize) -> Result<TimelinePage, StoreError> {
        let p = self.state.patient(patient_id)?;
        let after = after.unwrap_or(0);
        let start = p.assessment_seqs.partition_point(|s| *s <= after);
        let end = (start + limit.max(1)).min(p.assessments.len());
        let items: Vec<TimelineItem> = (start..end)
            .map(|i| TimelineItem {
                sequence_no: p.assessment_seqs[i],
                assessment: p.assessments[i].clone(),
            })
            .collect();
        let next_cursor = (end < p.assessments.len()).then(|| p.assessment_seqs[end - 1]);
        Ok(TimelinePage {
            patient_id: patient_id.to_string(),
            items,
            next_cursor,
        })
    }

    /// Healing report with acknowledgement state applied. Fails with
    /// `EmptyTimeline` for a patient without assessments.
    pub fn report(&self, patient_id: &str) -> Result<HealingReport, StoreError> {
        let p = self.state.patient(patient_id)?;
        let mut report = build_report(&p.assessments, &self.options.tracker)?;
        report.apply_acknowledgements(&p.acks);
        Ok(report)
    }

    pub fn alerts(&self, patient_id: &str) -> Result<Vec<ClinicalAlert>, StoreError> {
        if self.state.patient(patient_id)?.assessments.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.report(patient_id)?.alerts)
    }

    /// Alerts keyed by the sequence number of the assessment that raised
    /// them. A page never splits the alerts of one assessment, so it may
    /// exceed `limit` by up to two entries.
    pub fn alerts_page(&self, patient_id: &str, after: Option<u64>, limit: usize) -> Result<AlertPage, StoreError> {
        let p = self.state.patient(patient_id)?;
        let alerts = self.alerts(patient_id)?;
        let after = after.unwrap_or(0);
        let mut items: Vec<AlertItem> = Vec::new();
        let mut next_cursor = None;
        for alert in alerts {
            let idx = p.assessments.partition_point(|a| a.captured_at < alert.triggered_at);
            let seq = p.assessment_seqs[idx.min(p.assessment_seqs.len() - 1)];
            if seq <= after {
                continue;
            }
            if items.len() >= limit.max(1) && items.last().is_some_and(|last| last.sequence_no != seq) {
                next_cursor = items.last().map(|l| l.sequence_no);
                break;
            }
            items.push(AlertItem { sequence_no: seq, alert });
        }
        Ok(AlertPage {
            patient_id: patient_id.to_string(),
            items,
            next_cursor,
        })
    }

    /// Acknowledge an alert currently raised for the patient.
    pub fn acknowledge_alert(
        &mut self,
        patient_id: &str,
        alert_ref: &str,
        acknowledged_by: &str,
    ) -> Result<ClinicalAlert, StoreError> {
        if acknowledged_by.trim().is_empty() {
            return Err(StoreError::MissingActor);
        }
        let parsed = AlertRef::parse(alert_ref).map_err(|_| StoreError::UnknownAlert(alert_ref.to_string()))?;
        if parsed.patient_id != patient_id {
            return Err(StoreError::UnknownAlert(alert_ref.to_string()));
        }
        self.state.writable(patient_id)?;
        let mut alert = self
            .alerts(patient_id)?
            .into_iter()
            .find(|a| a.alert_ref == alert_ref)
            .ok_or_else(|| StoreError::UnknownAlert(alert_ref.to_string()))?;
        if alert.acknowledged {
            return Err(StoreError::AlreadyAcknowledged(alert_ref.to_string()));
        }
        let ack = Acknowledgement {
            acknowledged_by: acknowledged_by.to_string(),
            acknowledged_at: self.options.clock.now(),
        };
        self.commit_at(
            EventKind::AlertAcknowledged(AlertAcknowledgedRecord {
                patient_id: patient_id.to_string(),
                alert_ref: alert_ref.to_string(),
                acknowledged_by: ack.acknowledged_by.clone(),
                acknowledged_at: ack.acknowledged_at,
            }),
            Some(ack.acknowledged_at),
        )?;
        alert.acknowledge(&ack);
        Ok(alert)
    }

    /// Write the log as one JSON event per line.
    pub fn export_jsonl(&self, mut out: impl Write) -> Result<(), StoreError> {
        for ev in &self.events {
            serde_json::to_writer(&mut out, ev).map_err(|e| StoreError::Io(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Append events exported from another store, keeping their recorded
    /// times and renumbering them after this store's last sequence. Stops at
    /// the first line that is malformed or violates a store rule.
    pub fn import_jsonl(&mut self, input: impl BufRead) -> Result<usize, StoreError> {
        let mut n = 0;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev: StoreEvent = serde_json::from_str(&line).map_err(|e| StoreError::Import {
                line: i + 1,
                message: e.to_string(),
            })?;
            self.commit_at(ev.event, Some(ev.recorded_at)).map_err(|e| match e {
                StoreError::Io(_) => e,
                other => StoreError::Import {
                    line: i + 1,
                    message: other.to_string(),
                },
            })?;
            n += 1;
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use chrono::{Duration, TimeZone, Utc};

    use super::*;
    use crate::fixtures::p001_timeline;
    use crate::healing::AlertKind;

    fn clock() -> StoreOptions {
        StoreOptions {
            clock: Arc::new(SteppingClock::new(
                Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap(),
                Duration::seconds(1),
            )),
            ..StoreOptions::default()
        }
    }

    fn day(d: i64) -> chrono::DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + Duration::days(d)
    }

    #[test]
    fn create_and_duplicate() {
        let mut s = PatientStore::in_memory(clock());
        assert!(s.create_patient(NewPatient::new("P001")).unwrap().created);
        assert_eq!(
            s.create_patient(NewPatient::new("P001")).unwrap_err(),
            StoreError::DuplicatePatient("P001".into())
        );
        assert_eq!(s.last_sequence(), 1);
        assert!(s.create_patient(NewPatient::new("")).is_err());
        assert!(s.create_patient(NewPatient::new("a~b")).is_err());
    }

    #[test]
    fn idempotent_create() {
        let mut s = PatientStore::in_memory(clock());
        let new = NewPatient {
            idempotency_key: Some("k1".into()),
            ..NewPatient::new("P7")
        };
        let first = s.create_patient(new.clone()).unwrap();
        let again = s.create_patient(new).unwrap();
        assert!(first.created && !again.created);
        assert_eq!(first.record, again.record);
        assert_eq!(s.last_sequence(), 1);
        let other = NewPatient {
            idempotency_key: Some("k1".into()),
            ..NewPatient::new("P8")
        };
        assert!(matches!(s.create_patient(other), Err(StoreError::IdempotencyConflict { .. })));
    }

    #[test]
    fn timestamps_strictly_increase() {
        let mut s = PatientStore::in_memory(clock());
        s.create_patient(NewPatient::new("P1")).unwrap();
        s.append_assessment("P1", WoundAssessment::new("P1", day(7), 5.0).unwrap()).unwrap();
        let err = s.append_assessment("P1", WoundAssessment::new("P1", day(7), 4.0).unwrap()).unwrap_err();
        assert_eq!(err.code(), "timestamp_regression");
        assert!(s.append_assessment("P1", WoundAssessment::new("P1", day(3), 4.0).unwrap()).is_err());
        assert_eq!(
            s.append_assessment("P2", WoundAssessment::new("P2", day(1), 1.0).unwrap()).unwrap_err(),
            StoreError::UnknownPatient("P2".into())
        );
        assert!(matches!(
            s.append_assessment("P1", WoundAssessment::new("P9", day(9), 1.0).unwrap()),
            Err(StoreError::Assessment(AssessmentError::PatientMismatch { .. }))
        ));
    }

    #[test]
    fn pagination() {
        let mut s = PatientStore::in_memory(clock());
        s.create_patient(NewPatient::new("A")).unwrap();
        s.create_patient(NewPatient::new("B")).unwrap();
        for d in 0..5 {
            s.append_assessment("A", WoundAssessment::new("A", day(d), 10.0 - d as f64).unwrap()).unwrap();
            s.append_assessment("B", WoundAssessment::new("B", day(d), 3.0).unwrap()).unwrap();
        }
        let p1 = s.timeline_page("A", None, 2).unwrap();
        assert_eq!(p1.items.iter().map(|i| i.sequence_no).collect::<Vec<_>>(), [3, 5]);
        let p2 = s.timeline_page("A", p1.next_cursor, 2).unwrap();
        assert_eq!(p2.items.iter().map(|i| i.sequence_no).collect::<Vec<_>>(), [7, 9]);
        let p3 = s.timeline_page("A", p2.next_cursor, 2).unwrap();
        assert_eq!(p3.items.len(), 1);
        assert_eq!(p3.next_cursor, None);
    }

    #[test]
    fn acknowledgement_flow() {
        let mut s = PatientStore::in_memory(clock());
        s.create_patient(NewPatient::new("G")).unwrap();
        s.append_assessment("G", WoundAssessment::new("G", day(0), 10.0).unwrap()).unwrap();
        s.append_assessment("G", WoundAssessment::new("G", day(5), 13.0).unwrap()).unwrap();
        let alerts = s.alerts("G").unwrap();
        let target = alerts.iter().find(|a| a.kind == AlertKind::AreaIncrease).unwrap();
        let acked = s.acknowledge_alert("G", &target.alert_ref, "nurse.a").unwrap();
        assert!(acked.acknowledged);
        assert_eq!(acked.acknowledged_by.as_deref(), Some("nurse.a"));
        assert_eq!(
            s.acknowledge_alert("G", &target.alert_ref, "nurse.b").unwrap_err(),
            StoreError::AlreadyAcknowledged(target.alert_ref.clone())
        );
        assert!(matches!(s.acknowledge_alert("G", "G~1~area_increase", "x"), Err(StoreError::UnknownAlert(_))));
        assert!(matches!(s.acknowledge_alert("G", "garbage", "x"), Err(StoreError::UnknownAlert(_))));
        let report = s.report("G").unwrap();
        assert_eq!(report.alerts.iter().filter(|a| a.acknowledged).count(), 1);
    }

    #[test]
    fn file_round_trip_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.wws");
        let timeline_json;
        {
            let mut s = PatientStore::open_with(&path, clock()).unwrap();
            s.create_patient(NewPatient::new("P001")).unwrap();
            for a in p001_timeline() {
                s.append_assessment("P001", a).unwrap();
            }
            timeline_json = serde_json::to_string(&s.load_timeline("P001").unwrap()).unwrap();
        }
        let s = PatientStore::open(&path).unwrap();
        assert_eq!(s.last_sequence(), 5);
        assert!(s.recovered_tail().is_none());
        assert_eq!(serde_json::to_string(&s.load_timeline("P001").unwrap()).unwrap(), timeline_json);
    }

    #[test]
    fn torn_tail_is_dropped_and_store_stays_writable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.wws");
        {
            let mut s = PatientStore::open_with(&path, clock()).unwrap();
            s.create_patient(NewPatient::new("A")).unwrap();
            s.create_patient(NewPatient::new("B")).unwrap();
        }
        let len = std::fs::metadata(&path).unwrap().len();
        let f = OpenOptions::new().write(true).open(&path).unwrap();
        f.set_len(len - 3).unwrap();
        drop(f);
        let mut s = PatientStore::open(&path).unwrap();
        assert!(s.recovered_tail().is_some());
        assert_eq!(s.last_sequence(), 1);
        s.create_patient(NewPatient::new("C")).unwrap();
        drop(s);
        let s = PatientStore::open(&path).unwrap();
        assert_eq!(s.patients().map(|p| p.patient_id.as_str()).collect::<Vec<_>>(), ["A", "C"]);
    }

    #[test]
    fn tombstone_blocks_writes_keeps_history() {
        let mut s = PatientStore::in_memory(clock());
        s.create_patient(NewPatient::new("T")).unwrap();
        s.append_assessment("T", WoundAssessment::new("T", day(0), 2.0).unwrap()).unwrap();
        s.tombstone_patient("T", "duplicate enrolment").unwrap();
        assert_eq!(s.patients().count(), 0);
        assert_eq!(s.load_timeline("T").unwrap().len(), 1);
        assert!(matches!(
            s.append_assessment("T", WoundAssessment::new("T", day(1), 2.0).unwrap()),
            Err(StoreError::PatientDeleted(_))
        ));
        assert!(matches!(s.create_patient(NewPatient::new("T")), Err(StoreError::DuplicatePatient(_))));
    }

    #[test]
    fn export_import() {
        let mut a = PatientStore::in_memory(clock());
        a.create_patient(NewPatient::new("P001")).unwrap();
        for x in p001_timeline() {
            a.append_assessment("P001", x).unwrap();
        }
        a.confirm_label("P001", WoundClass::FootUlcer, "dr.k").unwrap();
        let mut buf = Vec::new();
        a.export_jsonl(&mut buf).unwrap();
        let mut b = PatientStore::in_memory(StoreOptions::default());
        assert_eq!(b.import_jsonl(buf.as_slice()).unwrap(), 6);
        assert_eq!(a.events(), b.events());
        assert_eq!(b.patient("P001").unwrap().wound_label, Some(WoundClass::FootUlcer));
        let err = b.import_jsonl(buf.as_slice()).unwrap_err();
        assert!(matches!(err, StoreError::Import { line: 1, .. }));
    }
}
