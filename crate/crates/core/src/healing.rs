//! Longitudinal healing analytics over one patient's assessments.
//!
//! Per-interval healing rate is `(A_prev − A_cur) / A_prev × 100 / Δt` in
//! %/day and total healing is `(A_0 − A_latest) / A_0 × 100`. All math runs in
//! full precision; values are rounded to two decimals only when a report is
//! serialized or printed.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::domain::WoundAssessment;
use crate::error::{Coded, ErrorClass};

const MILLIS_PER_DAY: f64 = 86_400_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HealingError {
    #[error("baseline wound area is zero; healing percentages are undefined")]
    ZeroBaselineArea,
    #[error("interval length must be positive, got {0} days")]
    NonPositiveInterval(f64),
    #[error("timeline has no assessments")]
    EmptyTimeline,
    #[error("assessment {index} is not strictly after the previous one")]
    NonMonotonicTimestamps { index: usize },
    #[error("assessment {index} belongs to patient {found:?}, expected {expected:?}")]
    MixedPatients {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("malformed alert reference {0:?}")]
    MalformedAlertRef(String),
}

impl Coded for HealingError {
    fn code(&self) -> &'static str {
        match self {
            HealingError::ZeroBaselineArea => "zero_baseline_area",
            HealingError::NonPositiveInterval(_) => "non_positive_interval",
            HealingError::EmptyTimeline => "empty_timeline",
            HealingError::NonMonotonicTimestamps { .. } => "non_monotonic_timestamps",
            HealingError::MixedPatients { .. } => "mixed_patients",
            HealingError::MalformedAlertRef(_) => "malformed_alert_ref",
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            HealingError::MalformedAlertRef(_) => ErrorClass::NotFound,
            _ => ErrorClass::Validation,
        }
    }
}

/// Percent area reduction per day between two measurements. Negative values
/// mean the wound grew.
pub fn interval_rate(area_from: f64, area_to: f64, delta_t_days: f64) -> Result<f64, HealingError> {
    if area_from == 0.0 {
        return Err(HealingError::ZeroBaselineArea);
    }
    if !(delta_t_days > 0.0) {
        return Err(HealingError::NonPositiveInterval(delta_t_days));
    }
    Ok((area_from - area_to) / area_from * 100.0 / delta_t_days)
}

/// Percent area reduction from the first measurement.
pub fn total_healing(area_initial: f64, area_current: f64) -> Result<f64, HealingError> {
    if area_initial == 0.0 {
        return Err(HealingError::ZeroBaselineArea);
    }
    Ok((area_initial - area_current) / area_initial * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeverityBand {
    Mild,
    Moderate,
    Severe,
}

impl SeverityBand {
    pub fn for_score(score: u8) -> Self {
        match score {
            0..=3 => SeverityBand::Mild,
            4..=7 => SeverityBand::Moderate,
            _ => SeverityBand::Severe,
        }
    }
}

impl fmt::Display for SeverityBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeverityBand::Mild => "Mild",
            SeverityBand::Moderate => "Moderate",
            SeverityBand::Severe => "Severe",
        })
    }
}

/// Sub-scores that went into a [`SeverityScore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityComponents {
    pub size: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tissue: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityScore {
    pub score: u8,
    pub band: SeverityBand,
    pub components: SeverityComponents,
}

/// Maps size, depth and tissue grades onto the 1–10 severity scale.
///
/// The size sub-score is `clamp(round(area × area_coefficient), 1, 10)`. With
/// only an area, that is the score. When both depth and tissue grades (1–3)
/// are known, each is stretched to a 10-point scale and blended with size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityModel {
    pub area_coefficient: f64,
    pub size_weight: f64,
    pub depth_weight: f64,
    pub tissue_weight: f64,
}

impl Default for SeverityModel {
    fn default() -> Self {
        SeverityModel {
            area_coefficient: 0.3158,
            size_weight: 0.6,
            depth_weight: 0.2,
            tissue_weight: 0.2,
        }
    }
}

fn clamp_score(x: f64) -> u8 {
    x.round().clamp(1.0, 10.0) as u8
}

impl SeverityModel {
    pub fn score(&self, area_cm2: f64, depth_grade: Option<u8>, tissue_grade: Option<u8>) -> SeverityScore {
        let size = clamp_score(area_cm2.max(0.0) * self.area_coefficient);
        let score = match (depth_grade, tissue_grade) {
            (Some(depth), Some(tissue)) => clamp_score(
                self.size_weight * f64::from(size)
                    + self.depth_weight * (10.0 / 3.0) * f64::from(depth)
                    + self.tissue_weight * (10.0 / 3.0) * f64::from(tissue),
            ),
            _ => size,
        };
        let blended = depth_grade.is_some() && tissue_grade.is_some();
        SeverityScore {
            score,
            band: SeverityBand::for_score(score),
            components: SeverityComponents {
                size,
                depth: depth_grade.filter(|_| blended),
                tissue: tissue_grade.filter(|_| blended),
            },
        }
    }
}

/// Severity under the default model.
pub fn severity(area_cm2: f64, depth_grade: Option<u8>, tissue_grade: Option<u8>) -> SeverityScore {
    SeverityModel::default().score(area_cm2, depth_grade, tissue_grade)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Trend {
    Improving,
    Stable,
    Deteriorating,
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trend::Improving => "Improving",
            Trend::Stable => "Stable",
            Trend::Deteriorating => "Deteriorating",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendThresholds {
    /// Rates above this (%/day) count as improving.
    pub improving_above: f64,
    /// Rates below this (%/day) count as deteriorating.
    pub deteriorating_below: f64,
}

impl Default for TrendThresholds {
    fn default() -> Self {
        TrendThresholds {
            improving_above: 0.5,
            deteriorating_below: -0.5,
        }
    }
}

impl TrendThresholds {
    pub fn classify(&self, rate: f64) -> Trend {
        if rate > self.improving_above {
            Trend::Improving
        } else if rate < self.deteriorating_below {
            Trend::Deteriorating
        } else {
            Trend::Stable
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageRateMode {
    /// Plain mean of interval rates.
    #[default]
    Unweighted,
    /// Mean weighted by interval length.
    TimeWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackerConfig {
    #[serde(default)]
    pub severity: SeverityModel,
    #[serde(default)]
    pub trend: TrendThresholds,
    #[serde(default)]
    pub average: AverageRateMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HealingInterval {
    pub from_day: i64,
    pub to_day: i64,
    pub delta_t: f64,
    /// `None` only when the earlier area is zero (a closed wound reopening).
    pub rate_pct_per_day: Option<f64>,
    pub area_from: f64,
    pub area_to: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AlertKind {
    NegativeHealingRate,
    AreaIncrease,
    SeverityRise,
}

impl AlertKind {
    pub fn code(self) -> &'static str {
        match self {
            AlertKind::NegativeHealingRate => "negative_healing_rate",
            AlertKind::AreaIncrease => "area_increase",
            AlertKind::SeverityRise => "severity_rise",
        }
    }

    fn from_code(code: &str) -> Option<Self> {
        [AlertKind::NegativeHealingRate, AlertKind::AreaIncrease, AlertKind::SeverityRise]
            .into_iter()
            .find(|k| k.code() == code)
    }
}

/// Stable identifier of an alert: patient, trigger time and kind. Alerts are
/// unique per (kind, timestamp) within a patient, so this never collides.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AlertRef {
    pub patient_id: String,
    pub triggered_at_ms: i64,
    pub kind: AlertKind,
}

impl AlertRef {
    pub fn new(patient_id: &str, triggered_at: DateTime<Utc>, kind: AlertKind) -> Self {
        AlertRef {
            patient_id: patient_id.to_string(),
            triggered_at_ms: triggered_at.timestamp_millis(),
            kind,
        }
    }

    pub fn parse(s: &str) -> Result<Self, HealingError> {
        let bad = || HealingError::MalformedAlertRef(s.to_string());
        let mut parts = s.rsplitn(3, '~');
        let kind = parts.next().and_then(AlertKind::from_code).ok_or_else(bad)?;
        let millis = parts.next().and_then(|m| m.parse().ok()).ok_or_else(bad)?;
        let patient_id = parts.next().filter(|p| !p.is_empty()).ok_or_else(bad)?;
        Ok(AlertRef {
            patient_id: patient_id.to_string(),
            triggered_at_ms: millis,
            kind,
        })
    }
}

impl fmt::Display for AlertRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}~{}~{}", self.patient_id, self.triggered_at_ms, self.kind.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acknowledgement {
    pub acknowledged_by: String,
    pub acknowledged_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalAlert {
    pub alert_ref: String,
    pub kind: AlertKind,
    pub triggered_at: DateTime<Utc>,
    pub detail: String,
    pub acknowledged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acknowledged_by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acknowledged_at: Option<DateTime<Utc>>,
}

impl ClinicalAlert {
    fn new(patient_id: &str, kind: AlertKind, triggered_at: DateTime<Utc>, detail: String) -> Self {
        ClinicalAlert {
            alert_ref: AlertRef::new(patient_id, triggered_at, kind).to_string(),
            kind,
            triggered_at,
            detail,
            acknowledged: false,
            acknowledged_by: None,
            acknowledged_at: None,
        }
    }

    pub fn acknowledge(&mut self, ack: &Acknowledgement) {
        self.acknowledged = true;
        self.acknowledged_by = Some(ack.acknowledged_by.clone());
        self.acknowledged_at = Some(ack.acknowledged_at);
    }
}

/// Deterioration alerts between two consecutive assessments.
pub fn generate_alerts(
    previous: (&WoundAssessment, &SeverityScore),
    current: (&WoundAssessment, &SeverityScore),
    rate: Option<f64>,
) -> Vec<ClinicalAlert> {
    let (prev, prev_sev) = previous;
    let (cur, cur_sev) = current;
    let at = cur.captured_at;
    let pid = cur.patient_id.as_str();
    let mut alerts = Vec::new();
    if let Some(rate) = rate.filter(|r| *r < 0.0) {
        alerts.push(ClinicalAlert::new(
            pid,
            AlertKind::NegativeHealingRate,
            at,
            format!("healing rate {rate:.2} %/day"),
        ));
    }
    if cur.area_cm2 > prev.area_cm2 {
        alerts.push(ClinicalAlert::new(
            pid,
            AlertKind::AreaIncrease,
            at,
            format!("area increased from {:.2} to {:.2} cm²", prev.area_cm2, cur.area_cm2),
        ));
    }
    if cur_sev.score > prev_sev.score {
        alerts.push(ClinicalAlert::new(
            pid,
            AlertKind::SeverityRise,
            at,
            format!("severity rose from {} to {}", prev_sev.score, cur_sev.score),
        ));
    }
    // one alert per (kind, timestamp)
    alerts.dedup_by_key(|a| (a.kind, a.triggered_at));
    alerts
}

#[derive(Debug, Clone, PartialEq)]
pub struct HealingReport {
    pub patient_id: String,
    /// Capture time of every assessment, in order.
    pub timestamps: Vec<DateTime<Utc>>,
    pub areas: Vec<f64>,
    pub intervals: Vec<HealingInterval>,
    pub total_healing_pct: f64,
    /// `None` when there are no intervals with a defined rate.
    pub average_rate_pct_per_day: Option<f64>,
    pub severity_trajectory: Vec<SeverityScore>,
    pub interval_trends: Vec<Option<Trend>>,
    pub trend: Trend,
    pub alerts: Vec<ClinicalAlert>,
}

fn days_between(from: DateTime<Utc>, to: DateTime<Utc>) -> f64 {
    let d = to - from;
    match d.num_nanoseconds() {
        Some(ns) => ns as f64 / (MILLIS_PER_DAY * 1e6),
        None => d.num_milliseconds() as f64 / MILLIS_PER_DAY,
    }
}

/// Full analysis of a time-ordered timeline.
pub fn build_report(assessments: &[WoundAssessment], config: &TrackerConfig) -> Result<HealingReport, HealingError> {
    let first = assessments.first().ok_or(HealingError::EmptyTimeline)?;
    if first.area_cm2 == 0.0 {
        return Err(HealingError::ZeroBaselineArea);
    }
    for (index, a) in assessments.iter().enumerate().skip(1) {
        if a.patient_id != first.patient_id {
            return Err(HealingError::MixedPatients {
                index,
                expected: first.patient_id.clone(),
                found: a.patient_id.clone(),
            });
        }
        if a.captured_at <= assessments[index - 1].captured_at {
            return Err(HealingError::NonMonotonicTimestamps { index });
        }
    }

    let t0 = first.captured_at;
    let severity_trajectory: Vec<SeverityScore> = assessments
        .iter()
        .map(|a| config.severity.score(a.area_cm2, a.depth_grade, a.tissue_grade))
        .collect();

    let mut intervals = Vec::with_capacity(assessments.len().saturating_sub(1));
    let mut alerts = Vec::new();
    for (i, pair) in assessments.windows(2).enumerate() {
        let (prev, cur) = (&pair[0], &pair[1]);
        let delta_t = days_between(prev.captured_at, cur.captured_at);
        let rate = match interval_rate(prev.area_cm2, cur.area_cm2, delta_t) {
            Ok(r) => Some(r),
            Err(HealingError::ZeroBaselineArea) => None,
            Err(e) => return Err(e),
        };
        intervals.push(HealingInterval {
            from_day: days_between(t0, prev.captured_at).floor() as i64,
            to_day: days_between(t0, cur.captured_at).floor() as i64,
            delta_t,
            rate_pct_per_day: rate,
            area_from: prev.area_cm2,
            area_to: cur.area_cm2,
        });
        alerts.extend(generate_alerts(
            (prev, &severity_trajectory[i]),
            (cur, &severity_trajectory[i + 1]),
            rate,
        ));
    }

    let latest = assessments.last().expect("non-empty");
    let total_healing_pct = total_healing(first.area_cm2, latest.area_cm2)?;

    let rated: Vec<(f64, f64)> = intervals
        .iter()
        .filter_map(|iv| iv.rate_pct_per_day.map(|r| (r, iv.delta_t)))
        .collect();
    let average_rate_pct_per_day = if rated.is_empty() {
        None
    } else {
        Some(match config.average {
            AverageRateMode::Unweighted => rated.iter().map(|(r, _)| r).sum::<f64>() / rated.len() as f64,
            AverageRateMode::TimeWeighted => {
                rated.iter().map(|(r, dt)| r * dt).sum::<f64>() / rated.iter().map(|(_, dt)| dt).sum::<f64>()
            }
        })
    };

    let interval_trends: Vec<Option<Trend>> = intervals
        .iter()
        .map(|iv| iv.rate_pct_per_day.map(|r| config.trend.classify(r)))
        .collect();
    let trend = match intervals.last() {
        None => Trend::Stable,
        Some(iv) => match iv.rate_pct_per_day {
            Some(r) => config.trend.classify(r),
            // reopened after closure
            None if iv.area_to > 0.0 => Trend::Deteriorating,
            None => Trend::Stable,
        },
    };

    Ok(HealingReport {
        patient_id: first.patient_id.clone(),
        timestamps: assessments.iter().map(|a| a.captured_at).collect(),
        areas: assessments.iter().map(|a| a.area_cm2).collect(),
        intervals,
        total_healing_pct,
        average_rate_pct_per_day,
        severity_trajectory,
        interval_trends,
        trend,
        alerts,
    })
}

impl HealingReport {
    /// Overlay acknowledgement state kept outside the pure analysis.
    pub fn apply_acknowledgements(&mut self, acks: &BTreeMap<String, Acknowledgement>) {
        for alert in &mut self.alerts {
            if let Some(ack) = acks.get(&alert.alert_ref) {
                alert.acknowledge(ack);
            }
        }
    }

    /// One row per assessment: day, area, severity, rate into this day, trend.
    pub fn rows(&self) -> Vec<ReportRow> {
        let t0 = self.timestamps[0];
        self.timestamps
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let sev = self.severity_trajectory[i];
                let (rate, trend) = if i == 0 {
                    (None, None)
                } else {
                    (self.intervals[i - 1].rate_pct_per_day, self.interval_trends[i - 1])
                };
                ReportRow {
                    day: days_between(t0, t).floor() as i64,
                    captured_at: t,
                    area_cm2: self.areas[i],
                    severity: sev.score,
                    severity_band: sev.band,
                    rate_pct_per_day: rate,
                    trend,
                }
            })
            .collect()
    }

    pub fn to_document(&self) -> ReportDocument {
        ReportDocument {
            patient_id: self.patient_id.clone(),
            rows: self.rows(),
            intervals: self
                .intervals
                .iter()
                .map(|iv| IntervalDocument {
                    from_day: iv.from_day,
                    to_day: iv.to_day,
                    delta_t: iv.delta_t,
                    rate_pct_per_day: iv.rate_pct_per_day,
                    area_from: iv.area_from,
                    area_to: iv.area_to,
                })
                .collect(),
            total_healing_pct: self.total_healing_pct,
            average_rate_pct_per_day: self.average_rate_pct_per_day,
            severity_trajectory: self.severity_trajectory.clone(),
            trend: self.trend,
            alerts: self.alerts.clone(),
        }
    }

    /// CSV with the same column order as the JSON rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["day", "area_cm2", "severity", "severity_band", "rate_pct_per_day", "trend"])
            .expect("in-memory write");
        for row in self.rows() {
            w.write_record([
                row.day.to_string(),
                format!("{:.2}", row.area_cm2),
                row.severity.to_string(),
                row.severity_band.to_string(),
                row.rate_pct_per_day.map(|r| format!("{r:.2}")).unwrap_or_default(),
                row.trend.map(|t| t.to_string()).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

impl Serialize for HealingReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_document().serialize(serializer)
    }
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn ser_round2<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round2(*x))
}

fn ser_round2_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_some(&round2(*v)),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub day: i64,
    pub captured_at: DateTime<Utc>,
    #[serde(serialize_with = "ser_round2")]
    pub area_cm2: f64,
    pub severity: u8,
    pub severity_band: SeverityBand,
    #[serde(serialize_with = "ser_round2_opt")]
    pub rate_pct_per_day: Option<f64>,
    pub trend: Option<Trend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalDocument {
    pub from_day: i64,
    pub to_day: i64,
    #[serde(serialize_with = "ser_round2")]
    pub delta_t: f64,
    #[serde(serialize_with = "ser_round2_opt")]
    pub rate_pct_per_day: Option<f64>,
    #[serde(serialize_with = "ser_round2")]
    pub area_from: f64,
    #[serde(serialize_with = "ser_round2")]
    pub area_to: f64,
}

/// Wire form of a [`HealingReport`], numbers rounded to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub patient_id: String,
    pub rows: Vec<ReportRow>,
    pub intervals: Vec<IntervalDocument>,
    #[serde(serialize_with = "ser_round2")]
    pub total_healing_pct: f64,
    #[serde(serialize_with = "ser_round2_opt")]
    pub average_rate_pct_per_day: Option<f64>,
    pub severity_trajectory: Vec<SeverityScore>,
    pub trend: Trend,
    pub alerts: Vec<ClinicalAlert>,
}
