//! Writes simulated cohorts in the live store format.

use std::collections::BTreeMap;
use std::path::Path;

use adhere_core::model::{day_bounds, local_day, LabResult};
use adhere_core::scheduler::NotificationPrefs;
use adhere_core::sim::{CohortConfig, SimulatedCohort, SimulatedPatient};
use adhere_core::streak::LATE_ENTRY_GRACE_HOURS;
use chrono::Duration;

use crate::store::{
    create_patient, write_json_atomic, EventRecord, Layout, PatientProfile, PatientState, RecordBody,
    StoreError,
};

pub const LABS_CSV: &str = "labs.csv";
pub const CONFIG_FILE: &str = "simulation.json";

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{0} already holds patients")]
    NotEmpty(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Replay(String),
}

/// The log a simulated patient would have produced: the schedule, then per
/// day its intakes, its lab draw and the day-close record with awards.
/// Record times are derived from the simulated data only.
pub fn patient_records(p: &SimulatedPatient) -> Result<Vec<EventRecord>, ExportError> {
    let tz = p.schedule.zone().map_err(|e| ExportError::Replay(e.to_string()))?;
    let zone = &p.patient.timezone;
    let mut intakes: BTreeMap<_, Vec<_>> = BTreeMap::new();
    for e in &p.events {
        let day = local_day(e.timestamp, zone).map_err(|e| ExportError::Replay(e.to_string()))?;
        intakes.entry(day).or_default().push(e.clone());
    }
    let mut labs: BTreeMap<_, Vec<LabResult>> = BTreeMap::new();
    for lab in &p.labs.observations {
        labs.entry(lab.draw_date).or_default().push(lab.clone());
    }

    let mut records = Vec::new();
    let mut push = |recorded_at, body| {
        records.push(EventRecord {
            seq: records.len() as u64 + 1,
            recorded_at,
            body,
        })
    };
    push(
        day_bounds(&tz, p.schedule.effective_from).0,
        RecordBody::ScheduleChange(p.schedule.clone()),
    );
    let mut ledger = adhere_core::GameLedger::new(p.patient.patient_id.clone());
    for outcome in &p.outcomes {
        let day = outcome.day;
        let (_, end) = day_bounds(&tz, day);
        for e in intakes.remove(&day).unwrap_or_default() {
            push(e.timestamp, RecordBody::Intake(e));
        }
        for lab in labs.remove(&day).unwrap_or_default() {
            push(end, RecordBody::Lab(lab));
        }
        let frozen = end + Duration::hours(LATE_ENTRY_GRACE_HOURS);
        let (next, awards) = ledger
            .apply_day(outcome)
            .map_err(|e| ExportError::Replay(e.to_string()))?;
        ledger = next;
        push(frozen, RecordBody::DayClosed(outcome.clone()));
        for a in awards {
            push(frozen, RecordBody::Award(a));
        }
    }
    if ledger != p.ledger {
        return Err(ExportError::Replay(format!(
            "replayed ledger for {} differs from the simulator's",
            p.patient.patient_id
        )));
    }
    Ok(records)
}

/// Writes every patient, a snapshot each, the labs CSV and the effective
/// config into `out`.
pub fn write_cohort(out: &Path, config: &CohortConfig, cohort: &SimulatedCohort) -> Result<(), ExportError> {
    let layout = Layout::new(out);
    if !layout.patient_ids()?.is_empty() {
        return Err(ExportError::NotEmpty(out.display().to_string()));
    }
    let mut csv = String::from("patient_id,draw_date,analyte,value_ng_ml\n");
    for p in &cohort.patients {
        let records = patient_records(p)?;
        let profile = PatientProfile {
            patient: p.patient.clone(),
            arm: p.arm.clone(),
            prefs: NotificationPrefs::defaults_for(p.patient.patient_id.clone()),
        };
        create_patient(&layout, &profile, &records)?;
        let mut state = PatientState::new(profile);
        for r in &records {
            state.apply(r).map_err(ExportError::Replay)?;
        }
        write_json_atomic(&layout.snapshot(&p.patient.patient_id), &state.snapshot())?;
        for lab in &p.labs.observations {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                lab.patient_id, lab.draw_date, lab.analyte, lab.value_ng_ml
            ));
        }
    }
    let csv_path = out.join(LABS_CSV);
    std::fs::write(&csv_path, csv).map_err(|source| StoreError::Io { path: csv_path, source })?;
    write_json_atomic(&out.join(CONFIG_FILE), config)?;
    Ok(())
}
