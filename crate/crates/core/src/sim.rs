//! Reproducible synthetic cohorts.
//!
//! Each patient draws from its own ChaCha stream, keyed by the master seed, the
//! arm seed and the patient's index in the arm, so patients can be generated in
//! any order or in parallel and still come out bit-identical.
//!
//! All behavioural magnitudes here are synthetic defaults, not clinical values.

use chrono::{DateTime, Days, Duration, NaiveDate, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{CohortRecord, LabSeries};
use crate::game::GameLedger;
use crate::model::{
    DoseSchedule, DoseSlot, IntakeEvent, IntakeKind, LabResult, MedicationLine, Organ, Patient,
};
use crate::scheduler::due_slots;
use crate::streak::{day_outcome, DayOutcome};

/// Challenges after which the gamification uplift applies.
pub const UPLIFT_AFTER_CHALLENGES: u32 = 3;
/// Trailing window for the miss rate that inflates lab variability.
pub const TRAILING_DAYS: u64 = 30;
/// Simulated lab levels are floored here.
pub const MIN_LEVEL_NG_ML: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorParams {
    pub base_daily_adherence_prob: f64,
    /// Multiplicative reduction of the miss probability once the patient's own
    /// ledger has three completed challenges.
    #[serde(default)]
    pub gamification_uplift: f64,
    /// Per-day drift of the adherence probability.
    #[serde(default)]
    pub post_surgery_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabModelParams {
    pub true_mean_level: f64,
    pub sd_adherent: f64,
    pub sd_inflation_per_missrate: f64,
    pub draw_interval_days: u32,
}

impl Default for LabModelParams {
    fn default() -> Self {
        Self {
            true_mean_level: 8.0,
            sd_adherent: 1.6,
            sd_inflation_per_missrate: 10.0,
            draw_interval_days: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    pub label: String,
    pub patients: usize,
    pub behavior: BehaviorParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTemplate {
    pub timezone: String,
    pub medications: Vec<MedicationLine>,
}

impl Default for ScheduleTemplate {
    fn default() -> Self {
        Self {
            timezone: "UTC".into(),
            medications: vec![MedicationLine {
                med_name: "tacrolimus".into(),
                is_immunosuppressant: true,
                slots: vec![DoseSlot::at("tac-am", 8, 0), DoseSlot::at("tac-pm", 20, 0)],
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub arms: Vec<ArmConfig>,
    pub days: u32,
    pub start_date: NaiveDate,
    #[serde(default)]
    pub schedule: ScheduleTemplate,
    #[serde(default)]
    pub labs: LabModelParams,
    pub master_seed: u64,
    /// Intake times are spread uniformly this many minutes around nominal.
    #[serde(default = "default_jitter")]
    pub intake_jitter_minutes: u32,
}

fn default_jitter() -> u32 {
    30
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigInvalid {
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigInvalid {
    ConfigInvalid::Invalid(msg.into())
}

impl CohortConfig {
    /// Two arms with identical behaviour except for the uplift on the app arm.
    pub fn planted_effect(patients_per_arm: usize, days: u32, uplift: f64, master_seed: u64) -> Self {
        let behavior = |uplift, seed| BehaviorParams {
            base_daily_adherence_prob: 0.9,
            gamification_uplift: uplift,
            post_surgery_decay: 0.0,
            seed,
        };
        Self {
            arms: vec![
                ArmConfig {
                    label: "app".into(),
                    patients: patients_per_arm,
                    behavior: behavior(uplift, 1),
                },
                ArmConfig {
                    label: "control".into(),
                    patients: patients_per_arm,
                    behavior: behavior(0.0, 2),
                },
            ],
            days,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            schedule: ScheduleTemplate::default(),
            labs: LabModelParams::default(),
            master_seed,
            intake_jitter_minutes: default_jitter(),
        }
    }

    /// 18 app users against 49 nonusers over six months.
    pub fn trial_shaped(master_seed: u64) -> Self {
        let mut config = Self::planted_effect(18, 180, 0.28, master_seed);
        config.arms[1].patients = 49;
        config
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        if self.arms.is_empty() {
            return Err(invalid("at least one arm is required"));
        }
        if self.days == 0 {
            return Err(invalid("days must be positive"));
        }
        for arm in &self.arms {
            let b = &arm.behavior;
            if arm.patients == 0 {
                return Err(invalid(format!("arm `{}` has no patients", arm.label)));
            }
            if !(0.0..=1.0).contains(&b.base_daily_adherence_prob) {
                return Err(invalid("base_daily_adherence_prob must be in [0, 1]"));
            }
            if !(0.0..1.0).contains(&b.gamification_uplift) {
                return Err(invalid("gamification_uplift must be in [0, 1)"));
            }
            if !b.post_surgery_decay.is_finite() {
                return Err(invalid("post_surgery_decay must be finite"));
            }
        }
        let l = &self.labs;
        if !(l.true_mean_level > 0.0 && l.sd_adherent > 0.0 && l.sd_inflation_per_missrate > 0.0)
            || l.draw_interval_days == 0
        {
            return Err(invalid("lab model parameters must all be positive"));
        }
        if self.schedule.medications.is_empty() {
            return Err(invalid("schedule template has no medications"));
        }
        Ok(())
    }

    pub fn total_patients(&self) -> usize {
        self.arms.iter().map(|a| a.patients).sum()
    }

    /// Arm index and index within the arm of a cohort-wide patient index.
    fn locate(&self, patient_index: usize) -> Option<(usize, usize)> {
        let mut offset = 0;
        for (a, arm) in self.arms.iter().enumerate() {
            if patient_index < offset + arm.patients {
                return Some((a, patient_index - offset));
            }
            offset += arm.patients;
        }
        None
    }
}

/// The RNG stream for one patient.
pub fn patient_rng(master_seed: u64, arm_seed: u64, index_in_arm: usize) -> ChaCha8Rng {
    let key = master_seed ^ arm_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index_in_arm as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPatient {
    pub patient: Patient,
    pub arm: String,
    pub schedule: DoseSchedule,
    pub events: Vec<IntakeEvent>,
    pub labs: LabSeries,
    pub outcomes: Vec<DayOutcome>,
    pub ledger: GameLedger,
}

impl SimulatedPatient {
    pub fn record(&self) -> CohortRecord {
        CohortRecord {
            patient_id: self.patient.patient_id.clone(),
            arm: self.arm.clone(),
            labs: self.labs.clone(),
            outcomes: self.outcomes.clone(),
            ledger: self.ledger.clone(),
        }
    }
}

fn trailing_miss_rate(outcomes: &[DayOutcome]) -> f64 {
    let start = outcomes.len().saturating_sub(TRAILING_DAYS as usize);
    let (omitted, scheduled) = outcomes[start..].iter().fold((0u32, 0u32), |(m, s), o| {
        (m + o.omitted(), s + o.scheduled)
    });
    if scheduled == 0 {
        0.0
    } else {
        f64::from(omitted) / f64::from(scheduled)
    }
}

/// Generates one patient; `patient_index` runs over all arms in order.
///
/// # Panics
///
/// If `patient_index` is out of range or the config does not validate.
pub fn simulate_patient(config: &CohortConfig, patient_index: usize) -> SimulatedPatient {
    let (arm_index, index_in_arm) = config
        .locate(patient_index)
        .expect("patient index within cohort");
    let arm = &config.arms[arm_index];
    let behavior = &arm.behavior;
    let mut rng = patient_rng(config.master_seed, behavior.seed, index_in_arm);

    let patient_id = format!("{}-{:04}", arm.label, index_in_arm);
    let schedule = DoseSchedule {
        patient_id: patient_id.clone(),
        timezone: config.schedule.timezone.clone(),
        medications: config.schedule.medications.clone(),
        effective_from: config.start_date,
    };
    let patient = Patient {
        patient_id: patient_id.clone(),
        transplant_date: config.start_date,
        organ: Organ::Kidney,
        timezone: config.schedule.timezone.clone(),
    };

    let jitter = i64::from(config.intake_jitter_minutes);
    let lab_noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut ledger = GameLedger::new(&patient_id);
    let mut events = Vec::new();
    let mut outcomes: Vec<DayOutcome> = Vec::with_capacity(config.days as usize);
    let mut labs = LabSeries::new(&patient_id);

    for d in 0..config.days {
        let day = config.start_date + Days::new(u64::from(d));
        let p = (behavior.base_daily_adherence_prob + behavior.post_surgery_decay * f64::from(d))
            .clamp(0.0, 1.0);
        let mut miss = 1.0 - p;
        if ledger.challenges_completed >= UPLIFT_AFTER_CHALLENGES {
            miss *= 1.0 - behavior.gamification_uplift;
        }

        let due = due_slots(&schedule, day).expect("validated timezone");
        let first_event = events.len();
        for slot in &due {
            if rng.random::<f64>() >= miss {
                let offset = if jitter > 0 {
                    rng.random_range(-jitter..=jitter)
                } else {
                    0
                };
                let timestamp = (slot.nominal + Duration::minutes(offset))
                    .clamp(slot.day_start, slot.day_end - Duration::seconds(1));
                events.push(IntakeEvent {
                    patient_id: patient_id.clone(),
                    slot_id: slot.slot_id.clone(),
                    timestamp,
                    kind: IntakeKind::Taken,
                });
            }
        }

        let outcome = day_outcome(&schedule, &events[first_event..], day, DateTime::<Utc>::MAX_UTC)
            .expect("validated timezone");
        ledger = ledger
            .apply_day(&outcome)
            .expect("contiguous closed replay")
            .0;
        outcomes.push(outcome);

        if (d + 1) % config.labs.draw_interval_days == 0 {
            let l = &config.labs;
            let sd = l.sd_adherent * (1.0 + l.sd_inflation_per_missrate * trailing_miss_rate(&outcomes));
            let z: f64 = lab_noise.sample(&mut rng);
            let level = (l.true_mean_level + sd * z).max(MIN_LEVEL_NG_ML);
            labs.insert(LabResult::tacrolimus(&patient_id, day, level).expect("positive level"));
        }
    }

    SimulatedPatient {
        patient,
        arm: arm.label.clone(),
        schedule,
        events,
        labs,
        outcomes,
        ledger,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedCohort {
    pub patients: Vec<SimulatedPatient>,
}

impl SimulatedCohort {
    pub fn records(&self) -> Vec<CohortRecord> {
        self.patients.iter().map(SimulatedPatient::record).collect()
    }
}

/// Generates every patient of every arm, in parallel, in cohort order.
pub fn simulate_cohort(config: &CohortConfig) -> Result<SimulatedCohort, ConfigInvalid> {
    config.validate()?;
    let patients = (0..config.total_patients())
        .into_par_iter()
        .map(|i| simulate_patient(config, i))
        .collect();
    Ok(SimulatedCohort { patients })
}

/// Synthetic (covariate, outcome) rows from a known logistic model, for
/// checking that the fitted interval covers the planted slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticRowModel {
    pub intercept: f64,
    pub slope: f64,
    pub covariate_mean: f64,
    pub covariate_sd: f64,
}

pub fn simulate_logistic_rows(model: &LogisticRowModel, n: usize, seed: u64) -> Vec<(f64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let covariate = Normal::new(model.covariate_mean, model.covariate_sd).expect("finite sd");
    (0..n)
        .map(|_| {
            let x: f64 = covariate.sample(&mut rng);
            let p = 1.0 / (1.0 + (-(model.intercept + model.slope * x)).exp());
            (x, rng.random::<f64>() < p)
        })
        .collect()
}
