//! Due-dose expansion, gentle reminder planning and per-slot status.

use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Duration, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{
    day_bounds, hhmm_map, resolve_local, ConfigError, DoseSchedule, IntakeEvent, IntakeKind,
};

pub const DEFAULT_REPEAT_INTERVAL_MIN: u32 = 60;
pub const DEFAULT_MAX_REPEATS: u32 = 2;

/// One dose expected on a given local day, with its acceptance window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DueSlot {
    pub slot_id: String,
    pub med_name: String,
    pub is_immunosuppressant: bool,
    pub day: NaiveDate,
    pub nominal: DateTime<Utc>,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub day_start: DateTime<Utc>,
    pub day_end: DateTime<Utc>,
}

/// Expands a schedule into the doses due on `day`, ordered by nominal instant.
/// Days before the schedule's `effective_from` have nothing due.
pub fn due_slots(schedule: &DoseSchedule, day: NaiveDate) -> Result<Vec<DueSlot>, ConfigError> {
    if day < schedule.effective_from {
        return Ok(Vec::new());
    }
    let tz = schedule.zone()?;
    let (day_start, day_end) = day_bounds(&tz, day);
    let mut due: Vec<DueSlot> = schedule
        .slots()
        .map(|(med, slot)| {
            let nominal = resolve_local(&tz, day.and_time(slot.nominal_time));
            DueSlot {
                slot_id: slot.slot_id.clone(),
                med_name: med.med_name.clone(),
                is_immunosuppressant: med.is_immunosuppressant,
                day,
                nominal,
                window_start: nominal - Duration::minutes(slot.window_before.into()),
                window_end: nominal + Duration::minutes(slot.window_after.into()),
                day_start,
                day_end,
            }
        })
        .collect();
    due.sort_by(|a, b| a.nominal.cmp(&b.nominal).then_with(|| a.slot_id.cmp(&b.slot_id)));
    Ok(due)
}

fn default_repeat_interval() -> u32 {
    DEFAULT_REPEAT_INTERVAL_MIN
}

fn default_max_repeats() -> u32 {
    DEFAULT_MAX_REPEATS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationPrefs {
    pub patient_id: String,
    #[serde(default, with = "hhmm_map")]
    pub overrides: BTreeMap<String, NaiveTime>,
    #[serde(default = "default_repeat_interval")]
    pub gentle_repeat_interval: u32,
    #[serde(default = "default_max_repeats")]
    pub max_repeats_per_slot: u32,
}

impl NotificationPrefs {
    pub fn defaults_for(patient_id: impl Into<String>) -> Self {
        Self {
            patient_id: patient_id.into(),
            overrides: BTreeMap::new(),
            gentle_repeat_interval: DEFAULT_REPEAT_INTERVAL_MIN,
            max_repeats_per_slot: DEFAULT_MAX_REPEATS,
        }
    }
}

/// Reminder tone. There is deliberately only one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tone {
    Gentle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReminderEntry {
    pub slot_id: String,
    pub fire_instants: Vec<DateTime<Utc>>,
    pub tone: Tone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReminderPlan {
    pub day: NaiveDate,
    pub entries: Vec<ReminderEntry>,
}

/// Plans reminders for the doses still outstanding on `day`.
///
/// The first reminder fires at the patient's override time for the slot, or at
/// the nominal time; up to `max_repeats_per_slot` follow-ups are spaced by
/// `gentle_repeat_interval` minutes. Slots already taken get no entry.
pub fn reminder_plan(
    schedule: &DoseSchedule,
    prefs: &NotificationPrefs,
    day: NaiveDate,
    taken_so_far: &HashSet<String>,
) -> Result<ReminderPlan, ConfigError> {
    let tz = schedule.zone()?;
    let interval = Duration::minutes(prefs.gentle_repeat_interval.into());
    let mut entries: Vec<ReminderEntry> = due_slots(schedule, day)?
        .into_iter()
        .filter(|slot| !taken_so_far.contains(&slot.slot_id))
        .map(|slot| {
            let first = match prefs.overrides.get(&slot.slot_id) {
                Some(time) => resolve_local(&tz, day.and_time(*time)),
                None => slot.nominal,
            };
            let fire_instants = (0..=prefs.max_repeats_per_slot)
                .map(|k| first + interval * k as i32)
                .collect();
            ReminderEntry {
                slot_id: slot.slot_id,
                fire_instants,
                tone: Tone::Gentle,
            }
        })
        .collect();
    entries.sort_by(|a, b| a.fire_instants[0].cmp(&b.fire_instants[0]));
    Ok(ReminderPlan { day, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotStatus {
    Pending,
    TakenOnTime,
    TakenLate,
    Skipped,
    Missed,
}

impl SlotStatus {
    pub fn is_taken(self) -> bool {
        matches!(self, SlotStatus::TakenOnTime | SlotStatus::TakenLate)
    }

    pub fn is_resolved(self) -> bool {
        self != SlotStatus::Pending
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub status: SlotStatus,
    /// Set when the slot carries both taken and skipped records.
    pub warning: Option<String>,
}

/// Status of one due slot given the intake records observed up to `now`.
///
/// Only events for this slot, stamped inside the slot's local day and not after
/// `now`, are considered. A taken record anywhere in the day counts: inside the
/// window it is on time, otherwise late. When both taken and skipped records
/// exist the taken one stands and a data-quality warning is attached.
pub fn classify_slot(slot: &DueSlot, events: &[IntakeEvent], now: DateTime<Utc>) -> Classification {
    let mut relevant: Vec<&IntakeEvent> = events
        .iter()
        .filter(|e| {
            e.slot_id == slot.slot_id
                && e.timestamp <= now
                && e.timestamp >= slot.day_start
                && e.timestamp < slot.day_end
        })
        .collect();
    relevant.sort_by_key(|e| e.timestamp);

    let first_taken = relevant.iter().find(|e| e.kind == IntakeKind::Taken);
    let any_skipped = relevant.iter().any(|e| e.kind == IntakeKind::Skipped);
    let warning = (first_taken.is_some() && any_skipped).then(|| {
        format!(
            "slot {} on {} has both taken and skipped records; taken kept",
            slot.slot_id, slot.day
        )
    });

    let status = if let Some(taken) = first_taken {
        if taken.timestamp >= slot.window_start && taken.timestamp <= slot.window_end {
            SlotStatus::TakenOnTime
        } else {
            SlotStatus::TakenLate
        }
    } else if any_skipped {
        SlotStatus::Skipped
    } else if now >= slot.day_end {
        SlotStatus::Missed
    } else {
        SlotStatus::Pending
    };
    Classification { status, warning }
}
