//! Domain types and calendar semantics shared by the scheduler, streak ledger,
//! game engine and analytics.
//!
//! A "day" is always the calendar date in the patient's own timezone.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Days, LocalResult, NaiveDate, NaiveDateTime, NaiveTime, TimeZone, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default minutes a dose may be taken before its nominal time and still count as on time.
pub const DEFAULT_WINDOW_BEFORE_MIN: u32 = 120;
/// Default minutes a dose may be taken after its nominal time and still count as on time.
pub const DEFAULT_WINDOW_AFTER_MIN: u32 = 120;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown timezone `{0}`")]
    UnknownTimezone(String),
}

/// Resolves an IANA zone name.
pub fn resolve_zone(name: &str) -> Result<Tz, ConfigError> {
    Tz::from_str(name).map_err(|_| ConfigError::UnknownTimezone(name.to_string()))
}

/// Calendar date of `instant` as seen on a wall clock in `timezone`.
pub fn local_day(instant: DateTime<Utc>, timezone: &str) -> Result<NaiveDate, ConfigError> {
    let tz = resolve_zone(timezone)?;
    Ok(instant.with_timezone(&tz).date_naive())
}

/// Maps a wall-clock reading to an instant. Ambiguous readings (DST fall-back)
/// take the earlier instant; readings inside a DST gap move forward an hour.
pub fn resolve_local(tz: &Tz, local: NaiveDateTime) -> DateTime<Utc> {
    match tz.from_local_datetime(&local) {
        LocalResult::Single(t) => t.with_timezone(&Utc),
        LocalResult::Ambiguous(earliest, _) => earliest.with_timezone(&Utc),
        LocalResult::None => resolve_local(tz, local + chrono::Duration::hours(1)),
    }
}

/// Half-open instant range `[start, end)` covering one local calendar day.
pub fn day_bounds(tz: &Tz, day: NaiveDate) -> (DateTime<Utc>, DateTime<Utc>) {
    let next = day.checked_add_days(Days::new(1)).expect("date overflow");
    (
        resolve_local(tz, day.and_time(NaiveTime::MIN)),
        resolve_local(tz, next.and_time(NaiveTime::MIN)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Organ {
    Liver,
    Kidney,
    Heart,
    Lung,
    Intestine,
    Pancreas,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub transplant_date: NaiveDate,
    pub organ: Organ,
    pub timezone: String,
}

impl Patient {
    /// Checks the creation-time invariants against the caller's notion of today.
    pub fn validate(&self, today: NaiveDate) -> Result<(), Vec<Violation>> {
        let mut violations = Vec::new();
        if self.patient_id.trim().is_empty() {
            violations.push(Violation::new("patient_id", "patient_id empty"));
        }
        if self.transplant_date > today {
            violations.push(Violation::new("transplant_date", "transplant_date in the future"));
        }
        if resolve_zone(&self.timezone).is_err() {
            violations.push(Violation::new("timezone", "timezone unknown"));
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }
}

mod hhmm {
    use chrono::NaiveTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(time: &NaiveTime, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&time.format("%H:%M"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveTime, D::Error> {
        let raw = String::deserialize(d)?;
        NaiveTime::parse_from_str(&raw, "%H:%M").map_err(serde::de::Error::custom)
    }
}

pub(crate) mod hhmm_map {
    use std::collections::BTreeMap;

    use chrono::NaiveTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<String, NaiveTime>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_map(map.iter().map(|(k, v)| (k, v.format("%H:%M").to_string())))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<String, NaiveTime>, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                NaiveTime::parse_from_str(&v, "%H:%M")
                    .map(|t| (k, t))
                    .map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

fn default_window_before() -> u32 {
    DEFAULT_WINDOW_BEFORE_MIN
}

fn default_window_after() -> u32 {
    DEFAULT_WINDOW_AFTER_MIN
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoseSlot {
    pub slot_id: String,
    #[serde(with = "hhmm")]
    pub nominal_time: NaiveTime,
    #[serde(default = "default_window_before")]
    pub window_before: u32,
    #[serde(default = "default_window_after")]
    pub window_after: u32,
}

impl DoseSlot {
    /// A slot at `HH:MM` with the default two-hour windows.
    pub fn at(slot_id: impl Into<String>, hour: u32, minute: u32) -> Self {
        Self {
            slot_id: slot_id.into(),
            nominal_time: NaiveTime::from_hms_opt(hour, minute, 0).expect("valid time of day"),
            window_before: DEFAULT_WINDOW_BEFORE_MIN,
            window_after: DEFAULT_WINDOW_AFTER_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicationLine {
    pub med_name: String,
    #[serde(default)]
    pub is_immunosuppressant: bool,
    pub slots: Vec<DoseSlot>,
}

/// One version of a patient's regimen, in force from `effective_from` until the
/// next version starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoseSchedule {
    pub patient_id: String,
    pub timezone: String,
    pub medications: Vec<MedicationLine>,
    pub effective_from: NaiveDate,
}

impl DoseSchedule {
    pub fn slots(&self) -> impl Iterator<Item = (&MedicationLine, &DoseSlot)> {
        self.medications
            .iter()
            .flat_map(|m| m.slots.iter().map(move |s| (m, s)))
    }

    pub fn slot(&self, slot_id: &str) -> Option<(&MedicationLine, &DoseSlot)> {
        self.slots().find(|(_, s)| s.slot_id == slot_id)
    }

    pub fn slot_count(&self) -> usize {
        self.medications.iter().map(|m| m.slots.len()).sum()
    }

    pub fn zone(&self) -> Result<Tz, ConfigError> {
        resolve_zone(&self.timezone)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Checks every schedule invariant, collecting all violations rather than
/// stopping at the first.
pub fn validate_schedule(schedule: &DoseSchedule) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if schedule.patient_id.trim().is_empty() {
        violations.push(Violation::new("patient_id", "patient_id empty"));
    }
    if resolve_zone(&schedule.timezone).is_err() {
        violations.push(Violation::new("timezone", "timezone unknown"));
    }
    if schedule.medications.is_empty() {
        violations.push(Violation::new("medications", "medications empty"));
    }
    let mut seen = HashSet::new();
    for (i, med) in schedule.medications.iter().enumerate() {
        if med.med_name.trim().is_empty() {
            violations.push(Violation::new(
                format!("medications[{i}].med_name"),
                "med_name empty",
            ));
        }
        if med.slots.is_empty() {
            violations.push(Violation::new(format!("medications[{i}].slots"), "slots empty"));
        }
        for (j, slot) in med.slots.iter().enumerate() {
            let field = format!("medications[{i}].slots[{j}]");
            if slot.slot_id.trim().is_empty() {
                violations.push(Violation::new(format!("{field}.slot_id"), "slot_id empty"));
            } else if !seen.insert(slot.slot_id.as_str()) {
                violations.push(Violation::new(format!("{field}.slot_id"), "slot_id duplicate"));
            }
            if j > 0 && slot.nominal_time <= med.slots[j - 1].nominal_time {
                violations.push(Violation::new(
                    format!("{field}.nominal_time"),
                    "nominal_time not strictly increasing",
                ));
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// All versions of one patient's regimen, ordered by `effective_from`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleHistory {
    versions: Vec<DoseSchedule>,
}

impl ScheduleHistory {
    pub fn new(first: DoseSchedule) -> Self {
        Self {
            versions: vec![first],
        }
    }

    /// Adds a version; a version with the same `effective_from` is replaced.
    pub fn push(&mut self, schedule: DoseSchedule) {
        match self
            .versions
            .binary_search_by_key(&schedule.effective_from, |s| s.effective_from)
        {
            Ok(i) => self.versions[i] = schedule,
            Err(i) => self.versions.insert(i, schedule),
        }
    }

    pub fn in_force(&self, day: NaiveDate) -> Option<&DoseSchedule> {
        self.versions.iter().rev().find(|s| s.effective_from <= day)
    }

    pub fn first_day(&self) -> Option<NaiveDate> {
        self.versions.first().map(|s| s.effective_from)
    }

    pub fn latest(&self) -> Option<&DoseSchedule> {
        self.versions.last()
    }

    pub fn versions(&self) -> &[DoseSchedule] {
        &self.versions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntakeKind {
    Taken,
    Skipped,
}

impl FromStr for IntakeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "taken" => Ok(Self::Taken),
            "skipped" => Ok(Self::Skipped),
            other => Err(format!("unknown intake kind `{other}`")),
        }
    }
}

/// One record that a dose slot was taken or explicitly skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntakeEvent {
    pub patient_id: String,
    pub slot_id: String,
    #[serde(rename = "ts")]
    pub timestamp: DateTime<Utc>,
    pub kind: IntakeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analyte {
    Tacrolimus,
}

impl FromStr for Analyte {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tacrolimus" => Ok(Self::Tacrolimus),
            other => Err(format!("unknown analyte `{other}`")),
        }
    }
}

impl fmt::Display for Analyte {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Analyte::Tacrolimus => f.write_str("tacrolimus"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("nonpositive value")]
    NonPositive,
    #[error("non-finite value")]
    NonFinite,
}

/// A trough level in ng/mL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabResult {
    pub patient_id: String,
    pub draw_date: NaiveDate,
    pub analyte: Analyte,
    pub value_ng_ml: f64,
}

impl LabResult {
    pub fn tacrolimus(
        patient_id: impl Into<String>,
        draw_date: NaiveDate,
        value_ng_ml: f64,
    ) -> Result<Self, LabError> {
        if !value_ng_ml.is_finite() {
            return Err(LabError::NonFinite);
        }
        if value_ng_ml <= 0.0 {
            return Err(LabError::NonPositive);
        }
        Ok(Self {
            patient_id: patient_id.into(),
            draw_date,
            analyte: Analyte::Tacrolimus,
            value_ng_ml,
        })
    }
}

/// Inclusive calendar date range, written `FROM..TO`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    /// A range that contains every representable date.
    pub fn all() -> Self {
        Self {
            start: NaiveDate::MIN,
            end: NaiveDate::MAX,
        }
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day <= self.end
    }

    pub fn is_empty(&self) -> bool {
        self.start > self.end
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl FromStr for DateRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (from, to) = s
            .split_once("..")
            .ok_or_else(|| format!("expected FROM..TO, got `{s}`"))?;
        let parse = |d: &str| {
            NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d").map_err(|e| format!("`{d}`: {e}"))
        };
        Ok(Self::new(parse(from)?, parse(to)?))
    }
}
