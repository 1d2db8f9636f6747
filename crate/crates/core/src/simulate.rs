//! Synthetic patient trajectories for demos and load tests.
//!
//! Each patient's wound area follows `A(t) = A0 · exp(−k t)` with
//! multiplicative log-normal measurement noise. At every visit after the
//! first, a deterioration episode starts with a fixed probability and
//! multiplies the underlying area by a factor in [1.10, 1.40), which
//! exercises the alert rules. Everything is driven by one seeded generator,
//! so the same parameters always produce the same data.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Serialize;

use crate::domain::WoundAssessment;
use crate::store::{NewPatient, PatientStore, StoreError};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationParams {
    pub patients: usize,
    /// Length of follow-up; visits happen on days 0, interval, 2·interval, … ≤ days.
    pub days: u32,
    pub interval_days: u32,
    pub seed: u64,
    pub start: DateTime<Utc>,
    /// Initial area range in cm².
    pub initial_area: (f64, f64),
    /// Daily decay constant range.
    pub decay_per_day: (f64, f64),
    /// Standard deviation of the log of the measurement noise factor.
    pub noise_sd: f64,
    pub deterioration_probability: f64,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            patients: 10,
            days: 56,
            interval_days: 7,
            seed: 0,
            start: Utc.with_ymd_and_hms(2024, 1, 1, 8, 0, 0).unwrap(),
            initial_area: (4.0, 35.0),
            decay_per_day: (0.01, 0.06),
            noise_sd: 0.05,
            deterioration_probability: 0.12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPatient {
    pub patient_id: String,
    pub assessments: Vec<WoundAssessment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimulationSummary {
    pub patients: usize,
    pub assessments: usize,
    pub alerts: usize,
}

fn grade_for(area: f64, cuts: (f64, f64)) -> u8 {
    if area >= cuts.1 {
        3
    } else if area >= cuts.0 {
        2
    } else {
        1
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn simulate(params: &SimulationParams) -> Vec<SimulatedPatient> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = LogNormal::new(0.0, params.noise_sd.max(0.0)).expect("finite noise sd");
    let interval = params.interval_days.max(1);
    let visits = params.days / interval + 1;

    (0..params.patients)
        .map(|i| {
            let patient_id = format!("SIM{:04}", i + 1);
            let a0 = rng.random_range(params.initial_area.0..=params.initial_area.1);
            let k = rng.random_range(params.decay_per_day.0..=params.decay_per_day.1);
            // patients enrol on different days and at different times of day
            let enrol = params.start + Duration::days(rng.random_range(0..7)) + Duration::minutes(rng.random_range(0..600));
            let mut underlying = a0;
            let mut assessments = Vec::with_capacity(visits as usize);
            for v in 0..visits {
                if v > 0 {
                    underlying *= (-k * f64::from(interval)).exp();
                    if rng.random_bool(params.deterioration_probability.clamp(0.0, 1.0)) {
                        underlying *= rng.random_range(1.10..1.40);
                    }
                }
                let area = round2((underlying * noise.sample(&mut rng)).max(0.0));
                let at = enrol + Duration::days(i64::from(v * interval));
                let depth = grade_for(area, (6.0, 18.0));
                let tissue = grade_for(area * rng.random_range(0.8..1.2), (8.0, 22.0));
                let mut a = WoundAssessment::new(&patient_id, at, area)
                    .and_then(|a| a.with_grades(Some(depth), Some(tissue)))
                    .expect("simulated values are valid");
                a.notes = format!("simulated visit {v}");
                assessments.push(a);
            }
            SimulatedPatient { patient_id, assessments }
        })
        .collect()
}

/// Enrol and record every simulated patient.
pub fn populate_store(store: &mut PatientStore, patients: &[SimulatedPatient]) -> Result<SimulationSummary, StoreError> {
    let mut summary = SimulationSummary {
        patients: 0,
        assessments: 0,
        alerts: 0,
    };
    for p in patients {
        let mut new = NewPatient::new(&p.patient_id);
        new.demographics.insert("source".into(), "simulation".into());
        store.create_patient(new)?;
        summary.patients += 1;
        for a in &p.assessments {
            store.append_assessment(&p.patient_id, a.clone())?;
            summary.assessments += 1;
        }
        summary.alerts += store.alerts(&p.patient_id)?.len();
    }
    store.sync()?;
    Ok(summary)
}
