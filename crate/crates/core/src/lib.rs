//! Event-sourced medication adherence engine for transplant recipients.
//!
//! The crate is a set of pure functions over immutable values:
//!
//! * [`model`]: patients, regimens, intake records and local-day semantics
//! * [`scheduler`]: due doses, gentle reminder plans, per-slot status
//! * [`streak`]: day outcomes, streaks and missed-dose rates
//! * [`game`]: points, "7 Day Challenge" completion and milestone badges
//! * [`analytics`]: trough-level variability and cohort statistics
//! * [`sim`]: reproducible synthetic cohorts

pub mod analytics;
pub mod game;
pub mod model;
pub mod scheduler;
pub mod sim;
pub mod streak;

pub use game::{level, score_trace, Award, AwardKind, GameLedger, Reward};
pub use model::{
    local_day, validate_schedule, DateRange, DoseSchedule, DoseSlot, IntakeEvent, IntakeKind,
    LabResult, MedicationLine, Patient, ScheduleHistory,
};
pub use streak::{AdherenceSummary, DayOutcome};

#[cfg(test)]
pub(crate) mod fixtures {
    use chrono::{DateTime, NaiveDate, Utc};

    use crate::model::{DoseSchedule, DoseSlot, MedicationLine};

    pub fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    pub fn at(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    /// Tacrolimus at 08:00 and 20:00 UTC.
    pub fn two_slot_schedule(effective_from: &str) -> DoseSchedule {
        DoseSchedule {
            patient_id: "p1".into(),
            timezone: "UTC".into(),
            medications: vec![MedicationLine {
                med_name: "tacrolimus".into(),
                is_immunosuppressant: true,
                slots: vec![DoseSlot::at("tac-am", 8, 0), DoseSlot::at("tac-pm", 20, 0)],
            }],
            effective_from: d(effective_from),
        }
    }
}
