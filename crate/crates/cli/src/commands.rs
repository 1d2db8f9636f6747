use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::Duration;
use woundwatch_api::AppState;
use woundwatch_core::backend::{classify as run_classify, ImageInput};
use woundwatch_core::config::ServiceConfig;
use woundwatch_core::fixtures::{reconstructed_test_log, P001_JSONL};
use woundwatch_core::metrics::{read_log, write_log};
use woundwatch_core::simulate::{populate_store, simulate as run_simulation, SimulationParams};
use woundwatch_core::store::{NewPatient, PatientStore, SteppingClock, StoreOptions};
use woundwatch_core::{
    build_report, evaluate_log, AssessmentInput, HealingReport, StoreError, TrackerConfig, WoundAssessment,
};

use crate::exit::{CliError, Exit};
use crate::render;

type CliResult = Result<(), CliError>;

fn load_config(path: Option<&Path>) -> Result<ServiceConfig, CliError> {
    let mut config = match path {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    Ok(config)
}

fn open_file(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| {
        let exit = if e.kind() == io::ErrorKind::NotFound { Exit::NotFound } else { Exit::Storage };
        CliError::new(exit, "io_error", format!("{}: {e}", path.display()))
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::new(Exit::Internal, "serialize", e.to_string()))?;
    println!("{text}");
    Ok(())
}

/// Open a store that must already exist.
fn existing_store(path: &Path) -> Result<PatientStore, CliError> {
    if !path.exists() {
        return Err(CliError::new(
            Exit::NotFound,
            "store_not_found",
            format!("no store at {}", path.display()),
        ));
    }
    Ok(PatientStore::open(path)?)
}

fn report_recovery(store: &PatientStore) {
    if let Some(t) = store.recovered_tail() {
        eprintln!(
            "note: discarded {} damaged bytes at offset {} ({})",
            t.len, t.offset, t.reason
        );
    }
}

pub fn classify(image: &Path, config: Option<&Path>, json: bool) -> CliResult {
    let config = load_config(config)?;
    let ensemble = config.pipeline()?;
    let backends = config.build_backends()?;
    let decision = run_classify(&ImageInput::from_file(image), &backends, &ensemble, &config.preprocess)
        .map_err(|e| CliError::coded(&e))?;
    if json {
        print_json(&decision)
    } else {
        print!("{}", render::decision(&decision));
        Ok(())
    }
}

pub fn enroll(store_path: &Path, patient_id: &str, label: Option<&str>) -> CliResult {
    let mut store = PatientStore::open(store_path)?;
    report_recovery(&store);
    let mut new = NewPatient::new(patient_id);
    if let Some(l) = label {
        new.wound_label = Some(woundwatch_core::domain::parse_wound_class(l).map_err(|e| CliError::coded(&e))?);
    }
    store.create_patient(new)?;
    println!("enrolled {patient_id}");
    Ok(())
}

fn ensure_enrolled(store: &mut PatientStore, patient_id: &str) -> Result<bool, CliError> {
    match store.patient(patient_id) {
        Ok(_) => Ok(false),
        Err(StoreError::UnknownPatient(_)) => {
            store.create_patient(NewPatient::new(patient_id))?;
            Ok(true)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn add(
    store_path: &Path,
    patient_id: &str,
    area: f64,
    date: &str,
    depth: Option<i64>,
    tissue: Option<i64>,
    notes: String,
) -> CliResult {
    let assessment = AssessmentInput {
        patient_id: Some(patient_id.to_string()),
        captured_at: date.to_string(),
        source_offset_minutes: None,
        area_cm2: area,
        depth_grade: depth,
        tissue_grade: tissue,
        classification: None,
        notes: (!notes.is_empty()).then_some(notes),
    }
    .validate()
    .map_err(|e| CliError::coded(&e))?;
    let mut store = PatientStore::open(store_path)?;
    report_recovery(&store);
    if ensure_enrolled(&mut store, patient_id)? {
        println!("enrolled {patient_id}");
    }
    let seq = store.append_assessment(patient_id, assessment.clone())?;
    println!(
        "recorded {patient_id} {} area {:.2} cm2 (event {seq})",
        assessment.captured_at.to_rfc3339(),
        assessment.area_cm2
    );
    Ok(())
}

fn read_assessments(path: &Path) -> Result<Vec<WoundAssessment>, CliError> {
    let reader = BufReader::new(open_file(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path.display(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| CliError::new(Exit::Malformed, "malformed_assessment", format!("{}:{}: {msg}", path.display(), i + 1));
        let input: AssessmentInput = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let a = input.validate().map_err(|e| {
            CliError::new(Exit::Validation, "invalid_assessment", format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(a);
    }
    Ok(out)
}

pub fn import_assessments(store_path: &Path, file: &Path) -> CliResult {
    let assessments = read_assessments(file)?;
    let mut store = PatientStore::open(store_path)?;
    report_recovery(&store);
    let mut patients = BTreeSet::new();
    for a in assessments.iter() {
        ensure_enrolled(&mut store, &a.patient_id)?;
        store.append_assessment(&a.patient_id, a.clone())?;
        patients.insert(a.patient_id.clone());
    }
    println!("imported {} assessments for {} patients", assessments.len(), patients.len());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn pick(csv: bool, json: bool) -> Self {
        match (csv, json) {
            (true, _) => ReportFormat::Csv,
            (_, true) => ReportFormat::Json,
            _ => ReportFormat::Text,
        }
    }
}

pub fn report(store_path: &Path, from: Option<&Path>, patient_id: &str, format: ReportFormat) -> CliResult {
    let report: Option<HealingReport> = match from {
        Some(file) => {
            let timeline: Vec<WoundAssessment> =
                read_assessments(file)?.into_iter().filter(|a| a.patient_id == patient_id).collect();
            if timeline.is_empty() {
                None
            } else {
                Some(build_report(&timeline, &TrackerConfig::default()).map_err(|e| CliError::coded(&e))?)
            }
        }
        None => {
            let store = existing_store(store_path)?;
            report_recovery(&store);
            if store.load_timeline(patient_id)?.is_empty() {
                None
            } else {
                Some(store.report(patient_id)?)
            }
        }
    };
    let Some(report) = report else {
        if from.is_some() && format == ReportFormat::Text {
            // nothing in the file for this patient is more likely a typo
            return Err(CliError::new(
                Exit::NotFound,
                "unknown_patient",
                format!("no assessments for {patient_id:?} in the file"),
            ));
        }
        match format {
            ReportFormat::Text => print!("{}", render::empty_report(patient_id)),
            ReportFormat::Csv => println!("day,area_cm2,severity,severity_band,rate_pct_per_day,trend"),
            ReportFormat::Json => eprint!("{}", render::empty_report(patient_id)),
        }
        return Ok(());
    };
    match format {
        ReportFormat::Text => print!("{}", render::report(&report)),
        ReportFormat::Csv => print!("{}", report.to_csv()),
        ReportFormat::Json => print_json(&report)?,
    }
    Ok(())
}

pub fn list(store_path: &Path) -> CliResult {
    let store = existing_store(store_path)?;
    report_recovery(&store);
    let mut any = false;
    for p in store.patients() {
        any = true;
        let n = store.load_timeline(&p.patient_id)?.len();
        let label = p.wound_label.map(|c| c.code().to_string()).unwrap_or_else(|| "-".into());
        println!("{:<12} {:>4} assessments  label {label}", p.patient_id, n);
    }
    if !any {
        println!("no patients enrolled");
    }
    Ok(())
}

pub fn ack(store_path: &Path, patient_id: &str, alert_ref: &str, by: &str) -> CliResult {
    let mut store = existing_store(store_path)?;
    report_recovery(&store);
    let alert = store.acknowledge_alert(patient_id, alert_ref, by)?;
    println!("acknowledged {} ({}) by {by}", alert.alert_ref, alert.kind.code());
    Ok(())
}

pub fn evaluate(
    log: &Path,
    source: &str,
    config: Option<&Path>,
    json: bool,
    confusion_csv: Option<&Path>,
    normalized: bool,
) -> CliResult {
    let config = load_config(config)?;
    let ensemble = config.ensemble()?;
    let entries = read_log(BufReader::new(open_file(log)?)).map_err(|e| CliError::coded(&e))?;
    let bundle = evaluate_log(&entries, &ensemble).map_err(|e| CliError::coded(&e))?;
    let selected = bundle.source(source).ok_or_else(|| {
        CliError::new(
            Exit::NotFound,
            "unknown_source",
            format!("no source {source:?}; use \"ensemble\" or a member id"),
        )
    })?;
    if let Some(path) = confusion_csv {
        std::fs::write(path, selected.confusion.to_csv(normalized)).map_err(|e| CliError::io(path.display(), e))?;
    }
    if json {
        print_json(&bundle)
    } else {
        print!("{}", render::evaluation(&bundle, source).expect("source checked above"));
        Ok(())
    }
}

pub enum FixtureKind {
    EvalLog,
    P001,
}

pub fn write_fixture(out: &Path, kind: FixtureKind) -> CliResult {
    let (text, what) = match kind {
        FixtureKind::EvalLog => (write_log(&reconstructed_test_log()), "1037 prediction log entries"),
        FixtureKind::P001 => (P001_JSONL.to_string(), "4 P001 assessments"),
    };
    std::fs::write(out, text).map_err(|e| CliError::io(out.display(), e))?;
    println!("wrote {what} to {}", out.display());
    Ok(())
}

pub struct SimulateArgs {
    pub patients: usize,
    pub days: u32,
    pub seed: u64,
    pub interval: u32,
    pub deterioration: f64,
    pub overwrite: bool,
}

pub fn simulate(store_path: &Path, args: SimulateArgs) -> CliResult {
    if !(0.0..=1.0).contains(&args.deterioration) {
        return Err(CliError::usage("--deterioration must be within [0, 1]"));
    }
    if args.interval == 0 {
        return Err(CliError::usage("--interval must be at least 1"));
    }
    let non_empty = std::fs::metadata(store_path).map(|m| m.len() > 0).unwrap_or(false);
    if non_empty {
        if !args.overwrite {
            return Err(CliError::new(
                Exit::Conflict,
                "store_exists",
                format!("{} already exists; pass --overwrite to replace it", store_path.display()),
            ));
        }
        std::fs::remove_file(store_path).map_err(|e| CliError::io(store_path.display(), e))?;
    }
    let params = SimulationParams {
        patients: args.patients,
        days: args.days,
        interval_days: args.interval,
        seed: args.seed,
        deterioration_probability: args.deterioration,
        ..SimulationParams::default()
    };
    let options = StoreOptions {
        // recorded_at comes from a logical clock so reruns are byte-identical
        clock: Arc::new(SteppingClock::new(params.start, Duration::seconds(1))),
        sync_every_append: false,
        ..StoreOptions::default()
    };
    let mut store = PatientStore::open_with(store_path, options)?;
    let summary = populate_store(&mut store, &run_simulation(&params))?;
    println!(
        "simulated {} patients, {} assessments, {} alerts (seed {}) into {}",
        summary.patients,
        summary.assessments,
        summary.alerts,
        args.seed,
        store_path.display()
    );
    Ok(())
}

pub fn verify(store_path: &Path) -> CliResult {
    let store = existing_store(store_path)?;
    report_recovery(&store);
    println!(
        "ok: {} events, {} patients, last sequence {}",
        store.events().len(),
        store.patients().count(),
        store.last_sequence()
    );
    Ok(())
}

pub fn export(store_path: &Path, out: Option<&Path>) -> CliResult {
    let store = existing_store(store_path)?;
    report_recovery(&store);
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|e| CliError::io(path.display(), e))?;
            store.export_jsonl(io::BufWriter::new(file))?;
        }
        None => store.export_jsonl(io::stdout().lock())?,
    }
    Ok(())
}

pub fn import_events(store_path: &Path, file: &Path) -> CliResult {
    let reader = BufReader::new(open_file(file)?);
    let mut store = PatientStore::open(store_path)?;
    report_recovery(&store);
    let n = store.import_jsonl(reader)?;
    println!("imported {n} events; last sequence {}", store.last_sequence());
    Ok(())
}

pub fn serve(config_path: Option<&Path>, listen: Option<String>) -> CliResult {
    let mut config = load_config(config_path)?;
    if let Some(addr) = listen {
        config.listen = addr;
    }
    tracing_subscriber::fmt()
        .json()
        .with_writer(io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let state = AppState::from_config(&config).map_err(|e| match e {
        woundwatch_api::StartupError::Config(c) => CliError::from(c),
        woundwatch_api::StartupError::Store(s) => CliError::from(s),
    })?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new(Exit::Internal, "runtime", e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .map_err(|e| CliError::new(Exit::Config, "bind_failed", format!("{}: {e}", config.listen)))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::new(Exit::Internal, "bind_failed", e.to_string()))?;
        println!("listening on {addr}");
        let _ = io::stdout().flush();
        woundwatch_api::serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::new(Exit::Internal, "server", e.to_string()))
    })
}
