//! Per-day adherence outcomes, streaks and missed-dose statistics.

use std::collections::BTreeMap;

use chrono::{DateTime, Days, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{day_bounds, ConfigError, DateRange, DoseSchedule, IntakeEvent, ScheduleHistory};
use crate::scheduler::{classify_slot, due_slots, SlotStatus};

/// How long after the end of a local day late entries are still accepted.
pub const LATE_ENTRY_GRACE_HOURS: i64 = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayOutcome {
    pub patient_id: String,
    pub day: NaiveDate,
    pub scheduled: u32,
    pub taken: u32,
    pub taken_late: u32,
    pub skipped: u32,
    pub missed: u32,
    pub pending: u32,
    pub closed: bool,
    pub adherent: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DayOutcome {
    /// Omitted doses: silent misses plus explicit skips.
    pub fn omitted(&self) -> u32 {
        self.missed + self.skipped
    }
}

/// Collapses the slot statuses of one local day.
///
/// A day with pending slots is open and never adherent. A day with nothing
/// scheduled closes when the local day ends and is never adherent.
pub fn day_outcome(
    schedule: &DoseSchedule,
    events: &[IntakeEvent],
    day: NaiveDate,
    now: DateTime<Utc>,
) -> Result<DayOutcome, ConfigError> {
    let due = due_slots(schedule, day)?;
    let mut outcome = DayOutcome {
        patient_id: schedule.patient_id.clone(),
        day,
        scheduled: due.len() as u32,
        taken: 0,
        taken_late: 0,
        skipped: 0,
        missed: 0,
        pending: 0,
        closed: false,
        adherent: false,
        warnings: Vec::new(),
    };
    for slot in &due {
        let c = classify_slot(slot, events, now);
        match c.status {
            SlotStatus::TakenOnTime => outcome.taken += 1,
            SlotStatus::TakenLate => {
                outcome.taken += 1;
                outcome.taken_late += 1;
            }
            SlotStatus::Skipped => outcome.skipped += 1,
            SlotStatus::Missed => outcome.missed += 1,
            SlotStatus::Pending => outcome.pending += 1,
        }
        outcome.warnings.extend(c.warning);
    }
    outcome.closed = if due.is_empty() {
        let (_, end) = day_bounds(&schedule.zone()?, day);
        now >= end
    } else {
        outcome.pending == 0
    };
    outcome.adherent =
        outcome.closed && outcome.scheduled > 0 && outcome.missed == 0 && outcome.skipped == 0;
    Ok(outcome)
}

/// Outcomes for every day in `days`, each evaluated against the schedule
/// version in force on that day. Days before the first version report zero
/// scheduled doses.
pub fn replay_outcomes(
    history: &ScheduleHistory,
    events: &[IntakeEvent],
    days: DateRange,
    now: DateTime<Utc>,
) -> Result<Vec<DayOutcome>, ConfigError> {
    let Some(first) = history.versions().first() else {
        return Ok(Vec::new());
    };
    let tz = first.zone()?;
    let mut by_day: BTreeMap<NaiveDate, Vec<IntakeEvent>> = BTreeMap::new();
    for e in events {
        by_day
            .entry(e.timestamp.with_timezone(&tz).date_naive())
            .or_default()
            .push(e.clone());
    }
    let mut out = Vec::new();
    let mut day = days.start;
    while day <= days.end {
        let schedule = history.in_force(day).unwrap_or(first);
        let todays = by_day.get(&day).map(Vec::as_slice).unwrap_or(&[]);
        out.push(day_outcome(schedule, todays, day, now)?);
        day = match day.checked_add_days(Days::new(1)) {
            Some(next) => next,
            None => break,
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StreakError {
    #[error("duplicate outcome for {0}")]
    DuplicateDay(NaiveDate),
    #[error("outcomes out of order at {0}")]
    Unordered(NaiveDate),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreakStats {
    pub current: u32,
    pub longest: u32,
    /// Lengths of the maximal adherent runs, oldest first.
    pub runs: Vec<u32>,
}

/// Maximal runs of consecutive adherent calendar days. A missing day breaks a
/// run; the current streak is the run ending on the most recent closed day.
pub fn streaks(outcomes: &[DayOutcome]) -> Result<StreakStats, StreakError> {
    for pair in outcomes.windows(2) {
        if pair[1].day == pair[0].day {
            return Err(StreakError::DuplicateDay(pair[1].day));
        }
        if pair[1].day < pair[0].day {
            return Err(StreakError::Unordered(pair[1].day));
        }
    }

    let mut runs = Vec::new();
    let mut run = 0u32;
    let mut prev: Option<NaiveDate> = None;
    let mut last_closed_run = 0u32;
    for o in outcomes {
        let contiguous = prev.and_then(|p| p.succ_opt()) == Some(o.day);
        if !(o.adherent && contiguous) && run > 0 {
            runs.push(run);
            run = 0;
        }
        if o.adherent {
            run += 1;
        }
        if o.closed {
            last_closed_run = run;
        }
        prev = Some(o.day);
    }
    if run > 0 {
        runs.push(run);
    }
    Ok(StreakStats {
        current: last_closed_run,
        longest: runs.iter().copied().max().unwrap_or(0),
        runs,
    })
}

/// Omitted doses over scheduled doses for closed days inside `period`.
pub fn missed_dose_rate(outcomes: &[DayOutcome], period: DateRange) -> f64 {
    let (omitted, scheduled) = outcomes
        .iter()
        .filter(|o| o.closed && period.contains(o.day))
        .fold((0u64, 0u64), |(m, s), o| {
            (m + u64::from(o.omitted()), s + u64::from(o.scheduled))
        });
    if scheduled == 0 {
        0.0
    } else {
        omitted as f64 / scheduled as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdherenceSummary {
    pub period_start: NaiveDate,
    pub period_end: NaiveDate,
    pub total_scheduled: u64,
    pub total_missed: u64,
    pub missed_dose_rate: f64,
    pub current_streak_days: u32,
    pub longest_streak_days: u32,
}

impl AdherenceSummary {
    pub fn from_outcomes(outcomes: &[DayOutcome], period: DateRange) -> Result<Self, StreakError> {
        let inside: Vec<DayOutcome> = outcomes
            .iter()
            .filter(|o| period.contains(o.day))
            .cloned()
            .collect();
        let stats = streaks(&inside)?;
        let closed = inside.iter().filter(|o| o.closed);
        let (total_missed, total_scheduled) = closed.fold((0u64, 0u64), |(m, s), o| {
            (m + u64::from(o.omitted()), s + u64::from(o.scheduled))
        });
        Ok(Self {
            period_start: period.start,
            period_end: period.end,
            total_scheduled,
            total_missed,
            missed_dose_rate: missed_dose_rate(&inside, period),
            current_streak_days: stats.current,
            longest_streak_days: stats.longest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{at, d, two_slot_schedule};
    use crate::model::IntakeKind;

    fn taken(slot: &str, ts: &str) -> IntakeEvent {
        IntakeEvent {
            patient_id: "p1".into(),
            slot_id: slot.into(),
            timestamp: at(ts),
            kind: IntakeKind::Taken,
        }
    }

    fn closed_day(day: NaiveDate, adherent: bool) -> DayOutcome {
        DayOutcome {
            patient_id: "p1".into(),
            day,
            scheduled: 2,
            taken: if adherent { 2 } else { 1 },
            taken_late: 0,
            skipped: 0,
            missed: if adherent { 0 } else { 1 },
            pending: 0,
            closed: true,
            adherent,
            warnings: Vec::new(),
        }
    }

    fn from_bits(start: &str, bits: &str) -> Vec<DayOutcome> {
        let mut day = d(start);
        bits.chars()
            .map(|c| {
                let o = closed_day(day, c == '1');
                day = day.succ_opt().unwrap();
                o
            })
            .collect()
    }

    #[test]
    fn both_taken_is_adherent() {
        let s = two_slot_schedule("2024-05-01");
        let events = [
            taken("tac-am", "2024-05-02T08:00:00Z"),
            taken("tac-pm", "2024-05-02T20:00:00Z"),
        ];
        let o = day_outcome(&s, &events, d("2024-05-02"), at("2024-05-02T21:00:00Z")).unwrap();
        assert!(o.closed);
        assert!(o.adherent);
        assert_eq!((o.scheduled, o.taken), (2, 2));
    }

    #[test]
    fn one_miss_breaks_adherence() {
        let s = two_slot_schedule("2024-05-01");
        let events = [taken("tac-am", "2024-05-02T08:00:00Z")];
        let o = day_outcome(&s, &events, d("2024-05-02"), at("2024-05-03T00:00:00Z")).unwrap();
        assert_eq!(o.missed, 1);
        assert!(o.closed);
        assert!(!o.adherent);
    }

    #[test]
    fn pending_day_is_open() {
        let s = two_slot_schedule("2024-05-01");
        let events = [taken("tac-am", "2024-05-02T08:00:00Z")];
        let o = day_outcome(&s, &events, d("2024-05-02"), at("2024-05-02T12:00:00Z")).unwrap();
        assert_eq!(o.pending, 1);
        assert!(!o.closed);
        assert!(!o.adherent);
    }

    #[test]
    fn nothing_scheduled_is_never_adherent() {
        let s = two_slot_schedule("2024-05-01");
        let o = day_outcome(&s, &[], d("2024-04-20"), at("2024-05-02T12:00:00Z")).unwrap();
        assert_eq!(o.scheduled, 0);
        assert!(o.closed);
        assert!(!o.adherent);
    }

    #[test]
    fn streak_examples() {
        let s = streaks(&from_bits("2024-01-01", "1111111")).unwrap();
        assert_eq!((s.current, s.longest, s.runs.clone()), (7, 7, vec![7]));

        let s = streaks(&from_bits("2024-01-01", "1111110111111")).unwrap();
        assert_eq!((s.current, s.longest, s.runs.clone()), (6, 6, vec![6, 6]));

        let s = streaks(&[]).unwrap();
        assert_eq!((s.current, s.longest, s.runs.len()), (0, 0, 0));
    }

    #[test]
    fn calendar_gap_breaks_streak() {
        let mut outcomes = from_bits("2024-01-01", "111");
        outcomes.extend(from_bits("2024-01-05", "11"));
        let s = streaks(&outcomes).unwrap();
        assert_eq!(s.runs, vec![3, 2]);
        assert_eq!(s.current, 2);
    }

    #[test]
    fn open_trailing_day_does_not_reset_current() {
        let mut outcomes = from_bits("2024-01-01", "111");
        let mut today = closed_day(d("2024-01-04"), false);
        today.closed = false;
        today.pending = 1;
        outcomes.push(today);
        assert_eq!(streaks(&outcomes).unwrap().current, 3);
    }

    #[test]
    fn duplicate_and_unordered_days_are_rejected() {
        let mut outcomes = from_bits("2024-01-01", "11");
        outcomes.push(closed_day(d("2024-01-02"), true));
        assert_eq!(
            streaks(&outcomes),
            Err(StreakError::DuplicateDay(d("2024-01-02")))
        );
        let outcomes = vec![closed_day(d("2024-01-02"), true), closed_day(d("2024-01-01"), true)];
        assert_eq!(streaks(&outcomes), Err(StreakError::Unordered(d("2024-01-01"))));
    }

    #[test]
    fn missed_rate_examples() {
        // 20 days x 2 slots, 4 missed doses: 4/40.
        let outcomes = from_bits("2024-01-01", "01010101111111111111");
        let all = DateRange::all();
        assert!((missed_dose_rate(&outcomes, all) - 0.10).abs() < 1e-15);
        // Same four misses over 10 days x 2 slots: 4/20.
        let outcomes = from_bits("2024-01-01", "0101010111");
        assert!((missed_dose_rate(&outcomes, all) - 0.20).abs() < 1e-15);
        assert_eq!(missed_dose_rate(&from_bits("2024-01-01", "11111"), all), 0.0);
        let empty = DateRange::new(d("2025-01-01"), d("2025-01-31"));
        assert_eq!(missed_dose_rate(&outcomes, empty), 0.0);
    }

    #[test]
    fn skips_count_as_omissions() {
        let mut o = closed_day(d("2024-01-01"), false);
        o.missed = 0;
        o.skipped = 1;
        assert_eq!(missed_dose_rate(&[o], DateRange::all()), 0.5);
    }

    #[test]
    fn summary_over_period() {
        let outcomes = from_bits("2024-01-01", "1101111");
        let s = AdherenceSummary::from_outcomes(&outcomes, DateRange::all()).unwrap();
        assert_eq!(s.total_scheduled, 14);
        assert_eq!(s.total_missed, 1);
        assert_eq!(s.current_streak_days, 4);
        assert_eq!(s.longest_streak_days, 4);
        let s = AdherenceSummary::from_outcomes(
            &outcomes,
            DateRange::new(d("2024-01-01"), d("2024-01-02")),
        )
        .unwrap();
        assert_eq!((s.total_scheduled, s.current_streak_days), (4, 2));
    }

    #[test]
    fn replay_uses_schedule_in_force() {
        let mut history = ScheduleHistory::new(two_slot_schedule("2024-05-01"));
        let mut later = two_slot_schedule("2024-05-03");
        later.medications[0].slots.truncate(1);
        history.push(later);
        let events = [
            taken("tac-am", "2024-05-01T08:00:00Z"),
            taken("tac-pm", "2024-05-01T20:00:00Z"),
            taken("tac-am", "2024-05-02T08:00:00Z"),
            taken("tac-am", "2024-05-03T08:00:00Z"),
        ];
        let range = DateRange::new(d("2024-04-30"), d("2024-05-03"));
        let outcomes = replay_outcomes(&history, &events, range, at("2024-05-10T00:00:00Z")).unwrap();
        let adherent: Vec<bool> = outcomes.iter().map(|o| o.adherent).collect();
        assert_eq!(adherent, vec![false, true, false, true]);
        assert_eq!(outcomes[0].scheduled, 0);
        assert_eq!(outcomes[3].scheduled, 1);
    }
}
