mod commands;
mod exit;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::exit::{CliError, Exit};

#[derive(Debug, Parser)]
#[command(name = "woundwatch", version, about = "Wound classification and healing-trajectory monitoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct StoreArg {
    /// Patient store file.
    #[arg(long, env = "WOUNDWATCH_STORE", default_value = "woundwatch.store")]
    pub store: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify one wound image with the configured ensemble.
    Classify {
        image: PathBuf,
        /// Service config file (backends, ensemble, normalization).
        #[arg(long, env = "WOUNDWATCH_CONFIG")]
        config: Option<PathBuf>,
        /// Print the decision as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Record assessments and report healing progress.
    #[command(subcommand)]
    Track(TrackCommand),
    /// Score a prediction log (JSON lines) per model and for the ensemble.
    Evaluate {
        log: PathBuf,
        /// `ensemble` or a member model id.
        #[arg(long, default_value = "ensemble")]
        source: String,
        #[arg(long, env = "WOUNDWATCH_CONFIG")]
        config: Option<PathBuf>,
        /// Print the full evaluation bundle as JSON.
        #[arg(long)]
        json: bool,
        /// Also write the selected source's confusion matrix as CSV.
        #[arg(long)]
        confusion_csv: Option<PathBuf>,
        /// Row-normalize the CSV confusion matrix.
        #[arg(long, requires = "confusion_csv")]
        normalized: bool,
    },
    /// Write built-in reference data to a file.
    #[command(subcommand)]
    Fixture(FixtureCommand),
    /// Generate synthetic patients into a new store.
    Simulate {
        #[arg(long, default_value_t = 10)]
        patients: usize,
        #[arg(long, default_value_t = 56)]
        days: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Days between visits.
        #[arg(long, default_value_t = 7)]
        interval: u32,
        /// Chance of a deterioration episode at each follow-up visit.
        #[arg(long, default_value_t = 0.12)]
        deterioration: f64,
        #[command(flatten)]
        store: StoreArg,
        /// Replace an existing store file.
        #[arg(long)]
        overwrite: bool,
    },
    /// Inspect, export or import a store.
    #[command(subcommand)]
    Store(StoreCommand),
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "WOUNDWATCH_CONFIG")]
        config: Option<PathBuf>,
        /// Override the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum TrackCommand {
    /// Enrol a patient.
    Enroll {
        patient_id: String,
        #[arg(long)]
        label: Option<String>,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Append an assessment, enrolling the patient if needed.
    Add {
        patient_id: String,
        /// Wound area in cm².
        #[arg(long)]
        area: f64,
        /// Capture time: RFC 3339 or YYYY-MM-DD.
        #[arg(long)]
        date: String,
        #[arg(long)]
        depth: Option<i64>,
        #[arg(long)]
        tissue: Option<i64>,
        #[arg(long, default_value = "")]
        notes: String,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Append every assessment in a JSON-lines file, enrolling patients as needed.
    Import {
        file: PathBuf,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Healing report for one patient.
    Report {
        patient_id: String,
        #[arg(long, conflicts_with = "json")]
        csv: bool,
        #[arg(long)]
        json: bool,
        /// Read assessments from a JSON-lines file instead of the store.
        #[arg(long)]
        from: Option<PathBuf>,
        #[command(flatten)]
        store: StoreArg,
    },
    /// List enrolled patients.
    List {
        #[command(flatten)]
        store: StoreArg,
    },
    /// Acknowledge an alert.
    Ack {
        patient_id: String,
        alert_ref: String,
        #[arg(long)]
        by: String,
        #[command(flatten)]
        store: StoreArg,
    },
}

#[derive(Debug, Subcommand)]
enum FixtureCommand {
    /// The reconstructed 1,037-item test-split prediction log.
    EvalLog {
        #[arg(long)]
        out: PathBuf,
    },
    /// The four-visit P001 timeline.
    P001 {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum StoreCommand {
    /// Replay the store and print a summary.
    Verify {
        #[command(flatten)]
        store: StoreArg,
    },
    /// Write every event as one JSON line.
    Export {
        #[command(flatten)]
        store: StoreArg,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Append events from an export.
    Import {
        file: PathBuf,
        #[command(flatten)]
        store: StoreArg,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    use commands::*;
    match cli.command {
        Command::Classify { image, config, json } => classify(&image, config.as_deref(), json),
        Command::Track(t) => match t {
            TrackCommand::Enroll { patient_id, label, store } => enroll(&store.store, &patient_id, label.as_deref()),
            TrackCommand::Add {
                patient_id,
                area,
                date,
                depth,
                tissue,
                notes,
                store,
            } => add(&store.store, &patient_id, area, &date, depth, tissue, notes),
            TrackCommand::Import { file, store } => import_assessments(&store.store, &file),
            TrackCommand::Report {
                patient_id,
                csv,
                json,
                from,
                store,
            } => report(&store.store, from.as_deref(), &patient_id, ReportFormat::pick(csv, json)),
            TrackCommand::List { store } => list(&store.store),
            TrackCommand::Ack {
                patient_id,
                alert_ref,
                by,
                store,
            } => ack(&store.store, &patient_id, &alert_ref, &by),
        },
        Command::Evaluate {
            log,
            source,
            config,
            json,
            confusion_csv,
            normalized,
        } => evaluate(&log, &source, config.as_deref(), json, confusion_csv.as_deref(), normalized),
        Command::Fixture(f) => match f {
            FixtureCommand::EvalLog { out } => write_fixture(&out, FixtureKind::EvalLog),
            FixtureCommand::P001 { out } => write_fixture(&out, FixtureKind::P001),
        },
        Command::Simulate {
            patients,
            days,
            seed,
            interval,
            deterioration,
            store,
            overwrite,
        } => simulate(
            &store.store,
            SimulateArgs {
                patients,
                days,
                seed,
                interval,
                deterioration,
                overwrite,
            },
        ),
        Command::Store(s) => match s {
            StoreCommand::Verify { store } => verify(&store.store),
            StoreCommand::Export { store, out } => export(&store.store, out.as_deref()),
            StoreCommand::Import { file, store } => import_events(&store.store, &file),
        },
        Command::Serve { config, listen } => serve(config.as_deref(), listen),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Usage as u8 } else { Exit::Success as u8 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit as u8)
        }
    }
}
