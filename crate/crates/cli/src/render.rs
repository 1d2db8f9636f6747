//! Human-readable output. Golden tests pin these formats.

use std::fmt::Write;

use woundwatch_core::healing::HealingReport;
use woundwatch_core::metrics::EvaluationBundle;
use woundwatch_core::{EnsembleDecision, WoundClass};

pub fn decision(d: &EnsembleDecision) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Predicted: {} ({})", d.predicted_class.display_name(), d.predicted_class.code());
    let _ = writeln!(out, "Confidence: {:.4}", d.confidence);
    let review = if d.needs_review {
        let reasons: Vec<String> = d
            .review_reasons
            .iter()
            .map(|r| serde_json::to_value(r).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
            .collect();
        format!("yes ({})", reasons.join(", "))
    } else {
        "no".to_string()
    };
    let _ = writeln!(out, "Needs review: {review}");
    let _ = writeln!(out, "Members:");
    for (m, c) in d.members.iter().zip(&d.member_argmaxes) {
        let _ = writeln!(out, "  {:<18} {}", m.as_str(), c.code());
    }
    let _ = writeln!(out, "Fused probabilities:");
    for c in WoundClass::ALL {
        let _ = writeln!(out, "  {:<26} {:.4}", c.code(), d.fused.get(c));
    }
    out
}

fn opt2(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

pub fn report(r: &HealingReport) -> String {
    let mut out = String::new();
    let first = r.timestamps[0].format("%Y-%m-%d");
    let last = r.timestamps[r.timestamps.len() - 1].format("%Y-%m-%d");
    let n = r.timestamps.len();
    let plural = if n == 1 { "" } else { "s" };
    let _ = writeln!(out, "Patient {}: {n} assessment{plural}, {first} to {last}", r.patient_id);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>4}  {:>8}  {:>8}  {:<8}  {:>10}  {}",
        "day", "area_cm2", "severity", "band", "rate_%/day", "trend"
    );
    for row in r.rows() {
        let _ = writeln!(
            out,
            "{:>4}  {:>8.2}  {:>8}  {:<8}  {:>10}  {}",
            row.day,
            row.area_cm2,
            row.severity,
            row.severity_band.to_string(),
            opt2(row.rate_pct_per_day),
            row.trend.map_or_else(|| "-".to_string(), |t| t.to_string())
        );
    }
    let _ = writeln!(out);
    if r.intervals.is_empty() {
        let _ = writeln!(out, "Only one assessment: no intervals to report yet.");
        return out;
    }
    let _ = writeln!(out, "Total healing: {:.2}%", r.total_healing_pct);
    let _ = writeln!(out, "Average healing rate: {} %/day", opt2(r.average_rate_pct_per_day));
    let _ = writeln!(out, "Trend: {}", r.trend);
    if r.alerts.is_empty() {
        let _ = writeln!(out, "Alerts: none");
    } else {
        let _ = writeln!(out, "Alerts:");
        for a in &r.alerts {
            let state = match &a.acknowledged_by {
                Some(by) => format!("acknowledged by {by}"),
                None => "open".to_string(),
            };
            let _ = writeln!(
                out,
                "  {}  {:<20} {}  [{}]  {}",
                a.triggered_at.format("%Y-%m-%d"),
                a.kind.code(),
                a.detail,
                state,
                a.alert_ref
            );
        }
    }
    out
}

pub fn empty_report(patient_id: &str) -> String {
    format!("Patient {patient_id}: no assessments recorded; no intervals to report.\n")
}

pub fn evaluation(bundle: &EvaluationBundle, source: &str) -> Option<String> {
    let eval = bundle.source(source)?;
    let mut out = String::new();
    let _ = writeln!(out, "Items: {}", bundle.n_total);
    let _ = writeln!(out, "Weights:");
    for w in &bundle.weights {
        let _ = writeln!(out, "  {:<18} {:.5}", w.model_id.as_str(), w.weight);
    }
    let _ = writeln!(out);
    for m in &bundle.members {
        let _ = writeln!(out, "{}", m.metrics.summary_line(&m.source));
    }
    let _ = writeln!(out, "{}", bundle.ensemble.metrics.summary_line(&bundle.ensemble.source));
    let _ = writeln!(out);
    let _ = writeln!(out, "Per-class metrics ({source}):");
    out.push_str(&eval.metrics.per_class_table());
    for w in &eval.metrics.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    Some(out)
}
