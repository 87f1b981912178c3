//! Patient-facing and clinician-facing operations over the store.
//!
//! Each patient has one mutex guarding its replayed state and log writer, so
//! requests for a patient serialize while different patients proceed in
//! parallel. The registry lock is only held to look up or insert a patient.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use adhere_core::analytics::report::{cohort_report, Cell};
use adhere_core::analytics::{coefficient_of_variation, ArmLabels, CohortRecord, CohortReport, CvResult};
use adhere_core::game::level;
use adhere_core::model::{
    day_bounds, local_day, validate_schedule, Analyte, DateRange, DoseSchedule, IntakeEvent, IntakeKind,
    LabResult, MedicationLine, Patient, Violation,
};
use adhere_core::scheduler::{classify_slot, due_slots, reminder_plan, DueSlot, NotificationPrefs, ReminderPlan, SlotStatus};
use adhere_core::streak::{day_outcome, DayOutcome, LATE_ENTRY_GRACE_HOURS};
use adhere_core::{AdherenceSummary, Award, GameLedger};
use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::store::{
    self, create_patient, load_patient, write_json_atomic, EventRecord, Layout, LogWriter, PatientProfile,
    PatientState, RecordBody, StoreError,
};

/// Intakes stamped further than this into the future are rejected.
pub const FUTURE_SKEW_MINUTES: i64 = 5;
pub const LAB_CSV_HEADER: [&str; 4] = ["patient_id", "draw_date", "analyte", "value_ng_ml"];

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("day closed: {0}")]
    DayClosed(String),
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("invalid request: {}", join_violations(.0))]
    Violations(Vec<Violation>),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub patient: Patient,
    #[serde(default = "default_arm")]
    pub arm: String,
    pub medications: Vec<MedicationLine>,
    /// Defaults to the patient's local today.
    #[serde(default)]
    pub effective_from: Option<NaiveDate>,
    #[serde(default)]
    pub prefs: Option<NotificationPrefs>,
}

fn default_arm() -> String {
    "app".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntakeRequest {
    pub slot_id: String,
    /// RFC 3339 instant.
    pub ts: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntakeAck {
    pub seq: u64,
    /// True when an identical (slot, day, kind) submission was already logged.
    pub duplicate: bool,
    pub day: NaiveDate,
    /// Awards from closing the day in this call; empty unless every slot of
    /// the next open day is now taken.
    pub awards: Vec<Award>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotView {
    #[serde(flatten)]
    pub due: DueSlot,
    pub status: SlotStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TodayView {
    pub patient_id: String,
    pub as_of_seq: u64,
    pub day: NaiveDate,
    pub slots: Vec<SlotView>,
    pub reminders: ReminderPlan,
    pub total_points: u64,
    pub current_streak_days: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameView {
    pub patient_id: String,
    pub as_of_seq: u64,
    pub level: u8,
    /// Adherent days still needed to finish the current 7-day block.
    pub days_to_next_challenge: u32,
    pub ledger: GameLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dashboard {
    pub patient_id: String,
    pub as_of_seq: u64,
    pub window: DateRange,
    pub today: TodayView,
    pub game: GameView,
    pub adherence: AdherenceSummary,
    pub cv: Cell<CvResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line in the CSV, counting the header.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabImport {
    pub accepted: usize,
    pub rejected: Vec<RejectedRow>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CloseSummary {
    pub days_closed: usize,
    pub awards: Vec<(String, Award)>,
}

/// How patients are split into the two report arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmRule {
    /// The arm recorded at registration.
    #[default]
    Assigned,
    /// "app" for patients with at least one logged intake, "control" otherwise.
    Engagement,
}

impl std::str::FromStr for ArmRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "assigned" => Ok(Self::Assigned),
            "engagement" => Ok(Self::Engagement),
            other => Err(format!("unknown arm rule `{other}` (assigned|engagement)")),
        }
    }
}

struct PatientCell {
    state: PatientState,
    log: LogWriter,
    layout: Layout,
}

impl PatientCell {
    fn append(&mut self, now: DateTime<Utc>, bodies: Vec<RecordBody>) -> Result<Vec<EventRecord>, ServiceError> {
        let records: Vec<EventRecord> = bodies
            .into_iter()
            .enumerate()
            .map(|(i, body)| EventRecord {
                seq: self.state.last_seq + 1 + i as u64,
                recorded_at: now,
                body,
            })
            .collect();
        self.log.append(&records)?;
        for r in &records {
            self.state.apply(r).map_err(|e| {
                ServiceError::Conflict(format!("record {} rejected after write: {e}", r.seq))
            })?;
        }
        Ok(records)
    }

    fn write_snapshot(&self) -> Result<(), ServiceError> {
        let path = self.layout.snapshot(self.state.patient_id());
        write_json_atomic(&path, &self.state.snapshot())?;
        Ok(())
    }

    /// Closes `day` against the given evaluation instant and records the
    /// outcome and its awards.
    fn close(&mut self, day: NaiveDate, evaluate_at: DateTime<Utc>, now: DateTime<Utc>) -> Result<Vec<Award>, ServiceError> {
        let outcome = self.outcome(day, evaluate_at)?;
        let (_, awards) = self
            .state
            .ledger
            .apply_day(&outcome)
            .map_err(|e| ServiceError::Conflict(e.to_string()))?;
        let mut bodies = vec![RecordBody::DayClosed(outcome)];
        bodies.extend(awards.iter().cloned().map(RecordBody::Award));
        self.append(now, bodies)?;
        Ok(awards)
    }

    fn outcome(&self, day: NaiveDate, at: DateTime<Utc>) -> Result<DayOutcome, ServiceError> {
        let schedule = self.schedule_for(day)?;
        day_outcome(schedule, &self.state.intakes_on(day), day, at)
            .map_err(|e| ServiceError::Validation(e.to_string()))
    }

    fn schedule_for(&self, day: NaiveDate) -> Result<&DoseSchedule, ServiceError> {
        self.state
            .history
            .in_force(day)
            .ok_or_else(|| ServiceError::NotFound(format!("no schedule in force on {day}")))
    }

    fn freeze_instant(&self, day: NaiveDate) -> DateTime<Utc> {
        day_end(self.state.timezone(), day) + Duration::hours(LATE_ENTRY_GRACE_HOURS)
    }
}

fn day_end(timezone: &str, day: NaiveDate) -> DateTime<Utc> {
    let tz = adhere_core::model::resolve_zone(timezone).expect("timezone validated at registration");
    day_bounds(&tz, day).1
}

/// Checks that an id can name a directory.
fn validate_id(id: &str) -> Result<(), ServiceError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ServiceError::Validation(format!(
            "patient_id `{id}` must be 1-128 characters of [A-Za-z0-9._-] and not start with '.'"
        )))
    }
}

pub struct Service {
    layout: Layout,
    clock: Arc<dyn Clock>,
    patients: RwLock<BTreeMap<String, Arc<Mutex<PatientCell>>>>,
}

impl Service {
    /// Loads every patient under `root`, replaying each log from zero.
    pub fn open(root: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        let layout = Layout::new(root.as_ref());
        let mut patients = BTreeMap::new();
        for id in layout.patient_ids()? {
            let (state, report) = load_patient(&layout, &id)?;
            tracing::debug!(patient = %id, records = report.records, "replayed");
            let log = LogWriter::open(&layout.log(&id))?;
            patients.insert(
                id,
                Arc::new(Mutex::new(PatientCell {
                    state,
                    log,
                    layout: layout.clone(),
                })),
            );
        }
        Ok(Self {
            layout,
            clock,
            patients: RwLock::new(patients),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.patients.read().expect("registry lock").keys().cloned().collect()
    }

    fn cell(&self, id: &str) -> Result<Arc<Mutex<PatientCell>>, ServiceError> {
        self.patients
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("patient `{id}`")))
    }

    fn lock(cell: &Mutex<PatientCell>) -> MutexGuard<'_, PatientCell> {
        // A panic mid-request leaves state consistent with the log it replayed.
        cell.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn register(&self, reg: Registration) -> Result<PatientProfile, ServiceError> {
        let now = self.now();
        let p = &reg.patient;
        validate_id(&p.patient_id)?;
        let today = local_day(now, &p.timezone).map_err(|e| ServiceError::Validation(e.to_string()))?;
        p.validate(today).map_err(ServiceError::Violations)?;
        let schedule = DoseSchedule {
            patient_id: p.patient_id.clone(),
            timezone: p.timezone.clone(),
            medications: reg.medications,
            effective_from: reg.effective_from.unwrap_or(today),
        };
        validate_schedule(&schedule).map_err(ServiceError::Violations)?;
        let prefs = reg
            .prefs
            .map(|mut prefs| {
                prefs.patient_id = p.patient_id.clone();
                prefs
            })
            .unwrap_or_else(|| NotificationPrefs::defaults_for(p.patient_id.clone()));
        if reg.arm.trim().is_empty() {
            return Err(ServiceError::Validation("arm empty".into()));
        }
        let profile = PatientProfile {
            patient: p.clone(),
            arm: reg.arm,
            prefs,
        };

        let mut registry = self.patients.write().expect("registry lock");
        if registry.contains_key(&p.patient_id) {
            return Err(ServiceError::Conflict(format!("patient `{}` already exists", p.patient_id)));
        }
        let first = EventRecord {
            seq: 1,
            recorded_at: now,
            body: RecordBody::ScheduleChange(schedule),
        };
        create_patient(&self.layout, &profile, std::slice::from_ref(&first))?;
        let mut state = PatientState::new(profile.clone());
        state.apply(&first).expect("first record applies");
        let log = LogWriter::open(&self.layout.log(&p.patient_id))?;
        registry.insert(
            p.patient_id.clone(),
            Arc::new(Mutex::new(PatientCell {
                state,
                log,
                layout: self.layout.clone(),
            })),
        );
        Ok(profile)
    }

    /// Installs a new regimen from `effective_from`, which must not precede
    /// the first open day.
    pub fn change_schedule(
        &self,
        id: &str,
        medications: Vec<MedicationLine>,
        effective_from: NaiveDate,
    ) -> Result<u64, ServiceError> {
        let now = self.now();
        let cell = self.cell(id)?;
        let mut cell = Self::lock(&cell);
        if let Some(open) = cell.state.next_open_day() {
            if effective_from < open {
                return Err(ServiceError::DayClosed(format!(
                    "{effective_from} is already closed; first open day is {open}"
                )));
            }
        }
        let schedule = DoseSchedule {
            patient_id: id.to_string(),
            timezone: cell.state.timezone().to_string(),
            medications,
            effective_from,
        };
        validate_schedule(&schedule).map_err(ServiceError::Violations)?;
        let records = cell.append(now, vec![RecordBody::ScheduleChange(schedule)])?;
        Ok(records[0].seq)
    }

    pub fn record_intake(&self, id: &str, req: &IntakeRequest) -> Result<IntakeAck, ServiceError> {
        let now = self.now();
        let timestamp = DateTime::parse_from_rfc3339(req.ts.trim())
            .map_err(|e| ServiceError::Validation(format!("ts `{}`: {e}", req.ts)))?
            .with_timezone(&Utc);
        let kind: IntakeKind = req.kind.parse().map_err(ServiceError::Validation)?;
        if timestamp > now + Duration::minutes(FUTURE_SKEW_MINUTES) {
            return Err(ServiceError::Validation(format!("ts {timestamp} is in the future")));
        }

        let cell = self.cell(id)?;
        let mut cell = Self::lock(&cell);
        let day = local_day(timestamp, cell.state.timezone()).expect("timezone validated at registration");
        let schedule = cell.schedule_for(day)?;
        if schedule.slot(&req.slot_id).is_none() {
            return Err(ServiceError::NotFound(format!("slot `{}` on {day}", req.slot_id)));
        }
        let event = IntakeEvent {
            patient_id: id.to_string(),
            slot_id: req.slot_id.clone(),
            timestamp,
            kind,
        };
        let key = cell.state.intake_key(&event);
        if let Some(&seq) = cell.state.intake_keys.get(&key) {
            return Ok(IntakeAck {
                seq,
                duplicate: true,
                day,
                awards: Vec::new(),
            });
        }
        if cell.state.ledger.next_day().is_some_and(|open| day < open) {
            return Err(ServiceError::DayClosed(format!("{day} has already been scored")));
        }
        let freeze = cell.freeze_instant(day);
        if now >= freeze {
            return Err(ServiceError::DayClosed(format!("{day} froze at {freeze}")));
        }

        let seq = cell.append(now, vec![RecordBody::Intake(event)])?[0].seq;
        let mut awards = Vec::new();
        if cell.state.next_open_day() == Some(day) {
            let outcome = cell.outcome(day, now)?;
            if outcome.closed && outcome.adherent {
                awards = cell.close(day, now, now)?;
                cell.write_snapshot()?;
            }
        }
        Ok(IntakeAck {
            seq,
            duplicate: false,
            day,
            awards,
        })
    }

    /// Closes every frozen day up to and including `through` (all frozen
    /// days when `None`) for every patient.
    pub fn close_due(&self, through: Option<NaiveDate>) -> Result<CloseSummary, ServiceError> {
        let now = self.now();
        let mut summary = CloseSummary::default();
        for id in self.patient_ids() {
            let cell = self.cell(&id)?;
            let mut cell = Self::lock(&cell);
            let mut closed_any = false;
            while let Some(day) = cell.state.next_open_day() {
                if through.is_some_and(|t| day > t) || now < cell.freeze_instant(day) {
                    break;
                }
                let end = day_end(cell.state.timezone(), day);
                for award in cell.close(day, end, now)? {
                    summary.awards.push((id.clone(), award));
                }
                summary.days_closed += 1;
                closed_any = true;
            }
            if closed_any {
                cell.write_snapshot()?;
            }
        }
        Ok(summary)
    }

    pub fn today(&self, id: &str) -> Result<TodayView, ServiceError> {
        let now = self.now();
        let cell = self.cell(id)?;
        let cell = Self::lock(&cell);
        Self::today_view(&cell, now)
    }

    fn today_view(cell: &PatientCell, now: DateTime<Utc>) -> Result<TodayView, ServiceError> {
        let state = &cell.state;
        let day = local_day(now, state.timezone()).expect("timezone validated at registration");
        let events = state.intakes_on(day);
        let (slots, reminders) = match state.history.in_force(day) {
            Some(schedule) => {
                let bad = |e: adhere_core::model::ConfigError| ServiceError::Validation(e.to_string());
                let slots: Vec<SlotView> = due_slots(schedule, day)
                    .map_err(bad)?
                    .into_iter()
                    .map(|due| {
                        let c = classify_slot(&due, &events, now);
                        SlotView {
                            due,
                            status: c.status,
                            warning: c.warning,
                        }
                    })
                    .collect();
                let taken: HashSet<String> = slots
                    .iter()
                    .filter(|s| s.status.is_taken())
                    .map(|s| s.due.slot_id.clone())
                    .collect();
                let plan = reminder_plan(schedule, &state.profile.prefs, day, &taken).map_err(bad)?;
                (slots, plan)
            }
            None => (Vec::new(), ReminderPlan { day, entries: Vec::new() }),
        };
        Ok(TodayView {
            patient_id: state.patient_id().to_string(),
            as_of_seq: state.last_seq,
            day,
            slots,
            reminders,
            total_points: state.ledger.total_points,
            current_streak_days: state.ledger.current_streak_days,
        })
    }

    pub fn game(&self, id: &str) -> Result<GameView, ServiceError> {
        let cell = self.cell(id)?;
        let cell = Self::lock(&cell);
        Ok(Self::game_view(&cell.state))
    }

    fn game_view(state: &PatientState) -> GameView {
        let block = adhere_core::game::CHALLENGE_DAYS;
        GameView {
            patient_id: state.patient_id().to_string(),
            as_of_seq: state.last_seq,
            level: level(&state.ledger),
            days_to_next_challenge: block - state.ledger.current_streak_days % block,
            ledger: state.ledger.clone(),
        }
    }

    /// Today's slots, game state, adherence and CV, all read under one lock.
    pub fn dashboard(&self, id: &str, window: Option<DateRange>) -> Result<Dashboard, ServiceError> {
        let now = self.now();
        let cell = self.cell(id)?;
        let cell = Self::lock(&cell);
        let state = &cell.state;
        let today = Self::today_view(&cell, now)?;
        let window = window.unwrap_or_else(|| {
            let start = state.history.first_day().unwrap_or(today.day);
            DateRange::new(start.min(today.day), today.day)
        });
        if window.is_empty() {
            return Err(ServiceError::Validation(format!("window {window} is empty")));
        }
        let adherence = AdherenceSummary::from_outcomes(&state.outcomes, window)
            .map_err(|e| ServiceError::Conflict(e.to_string()))?;
        Ok(Dashboard {
            patient_id: state.patient_id().to_string(),
            as_of_seq: state.last_seq,
            window,
            today,
            game: Self::game_view(state),
            adherence,
            cv: coefficient_of_variation(&state.labs, window).into(),
        })
    }

    /// Imports tacrolimus troughs. Every row is validated before anything is
    /// written; valid rows are appended per patient in one write, invalid
    /// rows are returned with a reason.
    pub fn ingest_labs<R: Read>(&self, input: R) -> Result<LabImport, ServiceError> {
        let now = self.now();
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader
            .headers()
            .map_err(|e| csv_error(&e))?
            .clone();
        let cols: Vec<usize> = LAB_CSV_HEADER
            .iter()
            .map(|name| headers.iter().position(|h| h == *name))
            .collect::<Option<_>>()
            .ok_or_else(|| {
                ServiceError::Validation(format!("header must contain {}", LAB_CSV_HEADER.join(",")))
            })?;

        let mut import = LabImport::default();
        let mut parsed: Vec<(u64, LabResult)> = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| csv_error(&e))?;
            let line = row.position().map_or(0, |p| p.line());
            let field = |i: usize| row.get(cols[i]).unwrap_or("");
            match parse_lab_row(field(0), field(1), field(2), field(3)) {
                Ok(lab) => parsed.push((line, lab)),
                Err(reason) => import.rejected.push(RejectedRow { line, reason }),
            }
        }

        let mut by_patient: BTreeMap<String, Vec<(u64, LabResult)>> = BTreeMap::new();
        for (line, lab) in parsed {
            by_patient.entry(lab.patient_id.clone()).or_default().push((line, lab));
        }
        for (id, rows) in by_patient {
            let Ok(cell) = self.cell(&id) else {
                import.rejected.extend(rows.into_iter().map(|(line, _)| RejectedRow {
                    line,
                    reason: "unknown patient".into(),
                }));
                continue;
            };
            let mut cell = Self::lock(&cell);
            let mut seen = cell.state.lab_keys.clone();
            let mut batch = Vec::new();
            for (line, lab) in rows {
                if seen.insert((lab.draw_date, lab.analyte)) {
                    batch.push(RecordBody::Lab(lab));
                } else {
                    import.rejected.push(RejectedRow {
                        line,
                        reason: "duplicate draw".into(),
                    });
                }
            }
            if !batch.is_empty() {
                import.accepted += batch.len();
                cell.append(now, batch)?;
            }
        }
        import.rejected.sort_by_key(|r| r.line);
        Ok(import)
    }

    /// Per-patient cohort records, in patient-id order.
    pub fn cohort_records(&self, rule: ArmRule) -> Vec<CohortRecord> {
        self.patient_ids()
            .into_iter()
            .filter_map(|id| self.cell(&id).ok())
            .map(|cell| {
                let cell = Self::lock(&cell);
                let s = &cell.state;
                let arm = match rule {
                    ArmRule::Assigned => s.profile.arm.clone(),
                    ArmRule::Engagement if s.intakes.is_empty() => "control".into(),
                    ArmRule::Engagement => "app".into(),
                };
                CohortRecord {
                    patient_id: s.patient_id().to_string(),
                    arm,
                    labs: s.labs.clone(),
                    outcomes: s.outcomes.clone(),
                    ledger: s.ledger.clone(),
                }
            })
            .collect()
    }

    pub fn cohort_report(&self, window: DateRange, rule: ArmRule) -> CohortReport {
        cohort_report(&self.cohort_records(rule), window, &ArmLabels::default())
    }

    /// The committed log of one patient, for audits and tests.
    pub fn log(&self, id: &str) -> Result<Vec<EventRecord>, ServiceError> {
        // Hold the patient lock so no append interleaves with the read.
        let cell = self.cell(id)?;
        let _guard = Self::lock(&cell);
        Ok(store::read_log(&self.layout.log(id))?.0)
    }
}

fn csv_error(e: &csv::Error) -> ServiceError {
    match e.kind() {
        csv::ErrorKind::Io(io) => ServiceError::Store(StoreError::Io {
            path: "<lab csv>".into(),
            source: std::io::Error::new(io.kind(), io.to_string()),
        }),
        _ => ServiceError::Validation(format!("lab csv: {e}")),
    }
}

fn parse_lab_row(patient_id: &str, draw_date: &str, analyte: &str, value: &str) -> Result<LabResult, String> {
    if patient_id.is_empty() {
        return Err("patient_id empty".into());
    }
    let draw_date: NaiveDate = draw_date
        .parse()
        .map_err(|_| format!("draw_date `{draw_date}` is not an ISO-8601 date"))?;
    let analyte: Analyte = analyte.parse()?;
    let value: f64 = value
        .parse()
        .map_err(|_| format!("value_ng_ml `{value}` is not a number"))?;
    match analyte {
        Analyte::Tacrolimus => {
            LabResult::tacrolimus(patient_id, draw_date, value).map_err(|e| e.to_string())
        }
    }
}
