//! Confusion matrices and per-class precision / recall / F1 over prediction logs.
//!
//! Ratios with a zero denominator are reported as absent (`None`) with a
//! warning rather than silently becoming 0 or 1, and are left out of macro
//! and weighted averages.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClassProbabilities, WoundClass, NUM_CLASSES};
use crate::error::{Coded, ErrorClass};
use crate::fusion::{fuse, EnsembleConfig, FusionError, ModelId, ModelPrediction};

/// Source name selecting the fused ensemble vector of a log entry.
pub const ENSEMBLE_SOURCE: &str = "ensemble";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction log is empty")]
    EmptyLog,
    #[error("entry {item_id:?} has no predictions from source {source_name:?}")]
    MissingSource { item_id: String, source_name: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Coded for MetricsError {
    fn code(&self) -> &'static str {
        match self {
            MetricsError::EmptyLog => "empty_log",
            MetricsError::MissingSource { .. } => "missing_source",
            MetricsError::Parse { .. } => "malformed_log",
            MetricsError::Fusion(e) => e.code(),
            MetricsError::Io(_) => "io_error",
        }
    }

    fn class(&self) -> ErrorClass {
        match self {
            MetricsError::EmptyLog | MetricsError::Parse { .. } => ErrorClass::Malformed,
            MetricsError::MissingSource { .. } => ErrorClass::Validation,
            MetricsError::Fusion(e) => e.class(),
            MetricsError::Io(_) => ErrorClass::Internal,
        }
    }
}

/// One evaluated item: ground truth and each model's probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLogEntry")]
pub struct PredictionLogEntry {
    pub item_id: String,
    pub true_class: WoundClass,
    pub per_model: BTreeMap<ModelId, ClassProbabilities>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused: Option<ClassProbabilities>,
}

#[derive(Deserialize)]
struct RawLogEntry {
    item_id: String,
    true_class: WoundClass,
    per_model: BTreeMap<ModelId, ClassProbabilities>,
    #[serde(default)]
    fused: Option<ClassProbabilities>,
}

impl TryFrom<RawLogEntry> for PredictionLogEntry {
    type Error = String;

    fn try_from(raw: RawLogEntry) -> Result<Self, Self::Error> {
        if raw.per_model.is_empty() {
            return Err(format!("entry {:?} has no per-model predictions", raw.item_id));
        }
        Ok(PredictionLogEntry {
            item_id: raw.item_id,
            true_class: raw.true_class,
            per_model: raw.per_model,
            fused: raw.fused,
        })
    }
}

impl PredictionLogEntry {
    fn source(&self, source: &str) -> Option<&ClassProbabilities> {
        if source == ENSEMBLE_SOURCE {
            self.fused.as_ref()
        } else {
            self.per_model.get(&ModelId::new(source))
        }
    }
}

/// Parse a line-delimited JSON prediction log. Blank lines are skipped.
pub fn read_log(reader: impl BufRead) -> Result<Vec<PredictionLogEntry>, MetricsError> {
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| MetricsError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_log(entries: &[PredictionLogEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("log entries serialize"));
        out.push('\n');
    }
    out
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub n_total: u64,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        let n_total = counts.iter().flatten().sum();
        ConfusionMatrix { counts, n_total }
    }

    pub fn record(&mut self, truth: WoundClass, predicted: WoundClass) {
        self.counts[truth.index()][predicted.index()] += 1;
        self.n_total += 1;
    }

    /// Cell-wise sum; lets large logs be evaluated in parts.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, other_row) in self.counts.iter_mut().zip(&other.counts) {
            for (cell, o) in row.iter_mut().zip(other_row) {
                *cell += o;
            }
        }
        self.n_total += other.n_total;
    }

    pub fn support(&self, class: WoundClass) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn predicted(&self, class: WoundClass) -> u64 {
        self.counts.iter().map(|row| row[class.index()]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Row-normalized view; rows without support are `None`.
    pub fn normalized(&self) -> Vec<Option<[f64; NUM_CLASSES]>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| {
                    let mut out = [0.0; NUM_CLASSES];
                    for (o, &c) in out.iter_mut().zip(row) {
                        *o = c as f64 / total as f64;
                    }
                    out
                })
            })
            .collect()
    }

    pub fn to_csv(&self, normalized: bool) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(WoundClass::ALL.iter().map(|c| c.code().to_string()));
        w.write_record(&header).expect("in-memory write");
        let norm = self.normalized();
        for class in WoundClass::ALL {
            let mut record = vec![class.code().to_string()];
            if normalized {
                match norm[class.index()] {
                    Some(row) => record.extend(row.iter().map(|v| format!("{v:.6}"))),
                    None => record.extend(std::iter::repeat_n(String::new(), NUM_CLASSES)),
                }
            } else {
                record.extend(self.counts[class.index()].iter().map(|c| c.to_string()));
            }
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Tally argmax predictions from `source` (a model id or `"ensemble"`).
pub fn confusion(entries: &[PredictionLogEntry], source: &str) -> Result<ConfusionMatrix, MetricsError> {
    if entries.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let mut cm = ConfusionMatrix::default();
    for e in entries {
        let probs = e.source(source).ok_or_else(|| MetricsError::MissingSource {
            item_id: e.item_id.clone(),
            source_name: source.to_string(),
        })?;
        cm.record(e.true_class, probs.argmax());
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub class: WoundClass,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub per_class: Vec<PerClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    pub weighted_precision: Option<f64>,
    pub weighted_recall: Option<f64>,
    pub weighted_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

fn support_weighted(per_class: &[PerClassMetrics], pick: impl Fn(&PerClassMetrics) -> Option<f64>) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0u64;
    for m in per_class.iter().filter(|m| m.support > 0) {
        if let Some(v) = pick(m) {
            num += v * m.support as f64;
            den += m.support;
        }
    }
    (den > 0).then(|| num / den as f64)
}

/// Precision, recall and F1 per class plus accuracy and averages.
///
/// F1 is `2·TP / (2·TP + FP + FN)`, the harmonic mean of precision and recall
/// whenever both exist; it is absent only for a class that neither occurs nor
/// is predicted.
pub fn metrics(cm: &ConfusionMatrix) -> Result<ClassMetrics, MetricsError> {
    if cm.n_total == 0 {
        return Err(MetricsError::EmptyLog);
    }
    let mut warnings = Vec::new();
    let per_class: Vec<PerClassMetrics> = WoundClass::ALL
        .into_iter()
        .map(|class| {
            let i = class.index();
            let tp = cm.counts[i][i];
            let support = cm.support(class);
            let predicted = cm.predicted(class);
            let fp = predicted - tp;
            let fn_ = support - tp;
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
            if precision.is_none() && support > 0 {
                warnings.push(format!("{}: precision undefined (never predicted)", class.code()));
            }
            if recall.is_none() && predicted > 0 {
                warnings.push(format!("{}: recall undefined (no support)", class.code()));
            }
            PerClassMetrics {
                class,
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();

    Ok(ClassMetrics {
        accuracy: cm.trace() as f64 / cm.n_total as f64,
        macro_precision: mean_defined(per_class.iter().map(|m| m.precision)),
        macro_recall: mean_defined(per_class.iter().map(|m| m.recall)),
        macro_f1: mean_defined(per_class.iter().map(|m| m.f1)),
        weighted_precision: support_weighted(&per_class, |m| m.precision),
        weighted_recall: support_weighted(&per_class, |m| m.recall),
        weighted_f1: support_weighted(&per_class, |m| m.f1),
        per_class,
        warnings,
    })
}

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| format!("{x:.decimals$}")).unwrap_or_else(|| "n/a".to_string())
}

impl ClassMetrics {
    pub fn class(&self, class: WoundClass) -> &PerClassMetrics {
        &self.per_class[class.index()]
    }

    /// Per-class table at two decimals, one row per class plus the weighted
    /// average.
    pub fn per_class_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<58} {:>9} {:>7} {:>8} {:>8}", "Class", "Precision", "Recall", "F1", "Support");
        for m in &self.per_class {
            let _ = writeln!(
                out,
                "{:<58} {:>9} {:>7} {:>8} {:>8}",
                m.class.display_name(),
                fmt_opt(m.precision, 2),
                fmt_opt(m.recall, 2),
                fmt_opt(m.f1, 2),
                m.support
            );
        }
        let total: u64 = self.per_class.iter().map(|m| m.support).sum();
        let _ = writeln!(
            out,
            "{:<58} {:>9} {:>7} {:>8} {:>8}",
            "Weighted Average",
            fmt_opt(self.weighted_precision, 2),
            fmt_opt(self.weighted_recall, 2),
            fmt_opt(self.weighted_f1, 2),
            total
        );
        out
    }

    /// Summary line: accuracy as a percentage and macro F1 at four decimals.
    pub fn summary_line(&self, source: &str) -> String {
        format!(
            "{source:<16} accuracy {:.2}%  macro F1 {}",
            self.accuracy * 100.0,
            fmt_opt(self.macro_f1, 4)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEvaluation {
    pub source: String,
    pub confusion: ConfusionMatrix,
    pub normalized_confusion: Vec<Option<[f64; NUM_CLASSES]>>,
    pub metrics: ClassMetrics,
}

impl SourceEvaluation {
    fn build(entries: &[PredictionLogEntry], source: &str) -> Result<Self, MetricsError> {
        let confusion = confusion(entries, source)?;
        let metrics = metrics(&confusion)?;
        Ok(SourceEvaluation {
            source: source.to_string(),
            normalized_confusion: confusion.normalized(),
            confusion,
            metrics,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberWeight {
    pub model_id: ModelId,
    pub weight: f64,
}

/// Per-member and ensemble evaluation of one prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationBundle {
    pub n_total: u64,
    pub weights: Vec<MemberWeight>,
    pub members: Vec<SourceEvaluation>,
    pub ensemble: SourceEvaluation,
    /// Entries whose fused vector was computed here rather than read from the log.
    pub fused_here: u64,
}

impl EvaluationBundle {
    pub fn source(&self, source: &str) -> Option<&SourceEvaluation> {
        if source == ENSEMBLE_SOURCE {
            Some(&self.ensemble)
        } else {
            self.members.iter().find(|m| m.source == source)
        }
    }
}

/// Evaluate every member and the ensemble. Entries without a stored fused
/// vector are fused with `config`.
pub fn evaluate_log(entries: &[PredictionLogEntry], config: &EnsembleConfig) -> Result<EvaluationBundle, MetricsError> {
    if entries.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let mut fused_here = 0;
    let mut completed = Vec::with_capacity(entries.len());
    for e in entries {
        let mut e = e.clone();
        if e.fused.is_none() {
            let predictions = config
                .member_ids()
                .map(|id| {
                    e.per_model
                        .get(id)
                        .map(|p| ModelPrediction::from_probabilities(id.clone(), *p))
                        .ok_or_else(|| MetricsError::MissingSource {
                            item_id: e.item_id.clone(),
                            source_name: id.to_string(),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            e.fused = Some(fuse(&predictions, config)?.fused);
            fused_here += 1;
        }
        completed.push(e);
    }

    let members = config
        .member_ids()
        .map(|id| SourceEvaluation::build(&completed, id.as_str()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvaluationBundle {
        n_total: completed.len() as u64,
        weights: config
            .members()
            .iter()
            .zip(config.weights())
            .map(|(m, &w)| MemberWeight {
                model_id: m.model_id.clone(),
                weight: w,
            })
            .collect(),
        members,
        ensemble: SourceEvaluation::build(&completed, ENSEMBLE_SOURCE)?,
        fused_here,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(truth: WoundClass, pred: WoundClass) -> PredictionLogEntry {
        PredictionLogEntry {
            item_id: format!("{truth:?}->{pred:?}"),
            true_class: truth,
            per_model: BTreeMap::from([(ModelId::new("m0"), ClassProbabilities::one_hot(pred))]),
            fused: None,
        }
    }

    #[test]
    fn perfect_log_is_diagonal() {
        let log: Vec<_> = WoundClass::ALL.into_iter().map(|c| entry(c, c)).collect();
        let cm = confusion(&log, "m0").unwrap();
        assert_eq!(cm.trace(), 6);
        assert_eq!(cm.n_total, 6);
        let m = metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 1.0);
        for c in &m.per_class {
            assert_eq!((c.precision, c.recall, c.f1), (Some(1.0), Some(1.0), Some(1.0)));
        }
        assert_eq!(m.macro_f1, Some(1.0));
        assert_eq!(m.weighted_f1, Some(1.0));
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn single_entry_log() {
        let cm = confusion(&[entry(WoundClass::ThermalBurn, WoundClass::ThermalBurn)], "m0").unwrap();
        assert_eq!(cm.n_total, 1);
    }

    #[test]
    fn errors() {
        assert!(matches!(confusion(&[], "m0"), Err(MetricsError::EmptyLog)));
        let log = [entry(WoundClass::FootUlcer, WoundClass::FootUlcer)];
        assert!(matches!(confusion(&log, "zzz"), Err(MetricsError::MissingSource { .. })));
        assert!(matches!(confusion(&log, ENSEMBLE_SOURCE), Err(MetricsError::MissingSource { .. })));
        assert!(matches!(metrics(&ConfusionMatrix::default()), Err(MetricsError::EmptyLog)));
    }

    #[test]
    fn undefined_ratios_are_absent_with_warnings() {
        // FootUlcer never predicted; PressureUlcer predicted but never true
        let log = [entry(WoundClass::FootUlcer, WoundClass::PressureUlcer)];
        let m = metrics(&confusion(&log, "m0").unwrap()).unwrap();
        let foot = m.class(WoundClass::FootUlcer);
        assert_eq!((foot.precision, foot.recall, foot.f1), (None, Some(0.0), Some(0.0)));
        let pressure = m.class(WoundClass::PressureUlcer);
        assert_eq!((pressure.precision, pressure.recall, pressure.f1), (Some(0.0), None, Some(0.0)));
        let burn = m.class(WoundClass::ThermalBurn);
        assert_eq!((burn.precision, burn.recall, burn.f1), (None, None, None));
        assert_eq!(m.warnings.len(), 2);
        assert_eq!(m.macro_f1, Some(0.0));
    }

    #[test]
    fn normalized_rows_and_csv() {
        let log = [
            entry(WoundClass::FootUlcer, WoundClass::FootUlcer),
            entry(WoundClass::FootUlcer, WoundClass::VenousUlcer),
        ];
        let cm = confusion(&log, "m0").unwrap();
        let norm = cm.normalized();
        assert_eq!(norm[0].unwrap()[0], 0.5);
        assert!(norm[1].is_none());
        let csv = cm.to_csv(false);
        assert!(csv.starts_with("true\\predicted,FootUlcer,"));
        assert!(csv.lines().nth(1).unwrap().starts_with("FootUlcer,1,0,0,0,0,1"));
        assert!(cm.to_csv(true).lines().nth(1).unwrap().contains("0.500000"));
    }

    #[test]
    fn merge_is_cellwise_addition() {
        let a = confusion(&[entry(WoundClass::FootUlcer, WoundClass::FootUlcer)], "m0").unwrap();
        let b = confusion(&[entry(WoundClass::VenousUlcer, WoundClass::FootUlcer)], "m0").unwrap();
        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        assert_eq!(ab, ba);
        assert_eq!(ab.n_total, 2);
        assert_eq!(ab.counts[5][0], 1);
    }

    #[test]
    fn log_round_trip_and_parse_errors() {
        let log = vec![entry(WoundClass::PilonidalSinus, WoundClass::PilonidalSinus)];
        let text = write_log(&log);
        assert_eq!(read_log(text.as_bytes()).unwrap(), log);
        let err = read_log("\n{\"item_id\":\"x\"}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, MetricsError::Parse { line: 2, .. }));
        let empty_models = r#"{"item_id":"x","true_class":"FootUlcer","per_model":{}}"#;
        assert!(read_log(empty_models.as_bytes()).is_err());
    }

    #[test]
    fn evaluate_single_entry_and_empty() {
        let config = EnsembleConfig::from_accuracies(&[90.0]).unwrap();
        let bundle = evaluate_log(&[entry(WoundClass::FootUlcer, WoundClass::FootUlcer)], &config).unwrap();
        assert_eq!(bundle.n_total, 1);
        assert_eq!(bundle.fused_here, 1);
        assert_eq!(bundle.ensemble.metrics.accuracy, 1.0);
        assert!(matches!(evaluate_log(&[], &config), Err(MetricsError::EmptyLog)));
    }
}
