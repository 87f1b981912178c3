//! Per-patient append-only JSON-lines logs with snapshots.
//!
//! Layout under the data directory:
//!
//! ```text
//! patients/{patient_id}/patient.json   profile (written last at registration)
//! patients/{patient_id}/log.jsonl      one EventRecord per line
//! patients/{patient_id}/snapshot.json  ledger state as of some seq
//! ```

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use adhere_core::analytics::LabSeries;
use adhere_core::model::{local_day, Analyte, DoseSchedule, IntakeKind, Patient, ScheduleHistory};
use adhere_core::scheduler::NotificationPrefs;
use adhere_core::streak::DayOutcome;
use adhere_core::{AdherenceSummary, Award, DateRange, GameLedger, IntakeEvent, LabResult};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROFILE_FILE: &str = "patient.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record_type", content = "payload", rename_all = "snake_case")]
pub enum RecordBody {
    Intake(IntakeEvent),
    Award(Award),
    Lab(LabResult),
    ScheduleChange(DoseSchedule),
    /// The frozen outcome of one local day, applied to the game ledger.
    DayClosed(DayOutcome),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub recorded_at: DateTime<Utc>,
    #[serde(flatten)]
    pub body: RecordBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub patient: Patient,
    /// Study arm label, e.g. "app" or "control".
    pub arm: String,
    pub prefs: NotificationPrefs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub patient_id: String,
    pub as_of_seq: u64,
    pub ledger: GameLedger,
    pub summary: AdherenceSummary,
}

/// Idempotency key for intake submissions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntakeKey {
    pub slot_id: String,
    pub day: NaiveDate,
    pub kind: IntakeKind,
}

/// Everything derivable from one patient's log.
#[derive(Debug, Clone)]
pub struct PatientState {
    pub profile: PatientProfile,
    pub history: ScheduleHistory,
    pub intakes: Vec<IntakeEvent>,
    pub intake_keys: HashMap<IntakeKey, u64>,
    pub labs: LabSeries,
    pub lab_keys: HashSet<(NaiveDate, Analyte)>,
    pub outcomes: Vec<DayOutcome>,
    pub ledger: GameLedger,
    pub last_seq: u64,
}

impl PatientState {
    pub fn new(profile: PatientProfile) -> Self {
        let id = profile.patient.patient_id.clone();
        Self {
            profile,
            history: ScheduleHistory::default(),
            intakes: Vec::new(),
            intake_keys: HashMap::new(),
            labs: LabSeries::new(id.clone()),
            lab_keys: HashSet::new(),
            outcomes: Vec::new(),
            ledger: GameLedger::new(id),
            last_seq: 0,
        }
    }

    pub fn patient_id(&self) -> &str {
        &self.profile.patient.patient_id
    }

    pub fn timezone(&self) -> &str {
        &self.profile.patient.timezone
    }

    pub fn intake_key(&self, event: &IntakeEvent) -> IntakeKey {
        IntakeKey {
            slot_id: event.slot_id.clone(),
            day: local_day(event.timestamp, self.timezone()).expect("timezone validated at registration"),
            kind: event.kind,
        }
    }

    /// Folds one record into the state. Records must arrive in seq order.
    pub fn apply(&mut self, record: &EventRecord) -> Result<(), String> {
        if record.seq <= self.last_seq {
            return Err(format!("seq {} after {}", record.seq, self.last_seq));
        }
        match &record.body {
            RecordBody::Intake(e) => {
                let key = self.intake_key(e);
                self.intake_keys.entry(key).or_insert(record.seq);
                self.intakes.push(e.clone());
            }
            RecordBody::Award(_) => {}
            RecordBody::Lab(lab) => {
                self.lab_keys.insert((lab.draw_date, lab.analyte));
                self.labs.insert(lab.clone());
            }
            RecordBody::ScheduleChange(s) => self.history.push(s.clone()),
            RecordBody::DayClosed(outcome) => {
                let (next, _) = self.ledger.apply_day(outcome).map_err(|e| e.to_string())?;
                self.ledger = next;
                self.outcomes.push(outcome.clone());
            }
        }
        self.last_seq = record.seq;
        Ok(())
    }

    pub fn intakes_on(&self, day: NaiveDate) -> Vec<IntakeEvent> {
        self.intakes
            .iter()
            .filter(|e| local_day(e.timestamp, self.timezone()).ok() == Some(day))
            .cloned()
            .collect()
    }

    /// First day the ledger has not yet applied.
    pub fn next_open_day(&self) -> Option<NaiveDate> {
        self.ledger.next_day().or_else(|| self.history.first_day())
    }

    pub fn snapshot(&self) -> Snapshot {
        let span = match (self.outcomes.first(), self.outcomes.last()) {
            (Some(a), Some(b)) => DateRange::new(a.day, b.day),
            _ => {
                let start = self.history.first_day().unwrap_or(self.profile.patient.transplant_date);
                DateRange::new(start, start)
            }
        };
        Snapshot {
            patient_id: self.patient_id().to_string(),
            as_of_seq: self.last_seq,
            ledger: self.ledger.clone(),
            summary: AdherenceSummary::from_outcomes(&self.outcomes, span)
                .expect("closed days are contiguous"),
        }
    }
}

/// Reads a log, dropping a torn final record.
///
/// Every acknowledged record ends in a newline, so a trailing fragment
/// without one was never acknowledged; the file is truncated back to the last
/// complete line. A complete line that fails to parse is corruption and is
/// reported, not skipped.
pub fn read_log(path: &Path) -> Result<(Vec<EventRecord>, bool), StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), false)),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let torn = complete < bytes.len();
    if torn {
        let file = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        file.set_len(complete as u64).map_err(io_err(path))?;
        file.sync_all().map_err(io_err(path))?;
        tracing::warn!(path = %path.display(), dropped = bytes.len() - complete, "discarded torn log tail");
    }
    let mut records = Vec::new();
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let record: EventRecord = serde_json::from_slice(line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((records, torn))
}

pub fn encode_record(record: &EventRecord) -> Vec<u8> {
    let mut line = serde_json::to_vec(record).expect("records serialize");
    line.push(b'\n');
    line
}

/// Appender for one patient's log.
#[derive(Debug)]
pub struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Writes the records as one buffer and syncs before returning.
    pub fn append(&mut self, records: &[EventRecord]) -> Result<(), StoreError> {
        let buf: Vec<u8> = records.iter().flat_map(encode_record).collect();
        self.file.write_all(&buf).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))
    }
}

/// Writes via a temporary file and rename so readers never see half a file.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let tmp = path.with_extension("json.tmp");
    let mut body = serde_json::to_vec_pretty(value).expect("values serialize");
    body.push(b'\n');
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&body).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>, StoreError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// Paths of the data directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn patients_dir(&self) -> PathBuf {
        self.root.join("patients")
    }

    pub fn patient_dir(&self, id: &str) -> PathBuf {
        self.patients_dir().join(id)
    }

    pub fn log(&self, id: &str) -> PathBuf {
        self.patient_dir(id).join(LOG_FILE)
    }

    pub fn profile(&self, id: &str) -> PathBuf {
        self.patient_dir(id).join(PROFILE_FILE)
    }

    pub fn snapshot(&self, id: &str) -> PathBuf {
        self.patient_dir(id).join(SNAPSHOT_FILE)
    }

    /// Ids of every registered patient, sorted.
    pub fn patient_ids(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.patients_dir();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(io_err(&dir))?;
            if entry.path().join(PROFILE_FILE).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// How loading a patient went.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub records: usize,
    pub torn_tail_dropped: bool,
    /// The stored snapshot disagreed with replay (or was ahead of the log) and
    /// was rewritten.
    pub snapshot_rewritten: bool,
}

/// Replays a patient's log from zero and reconciles the stored snapshot.
pub fn load_patient(layout: &Layout, id: &str) -> Result<(PatientState, LoadReport), StoreError> {
    let profile_path = layout.profile(id);
    let profile: PatientProfile = read_json(&profile_path)?.ok_or_else(|| StoreError::Io {
        path: profile_path.clone(),
        source: io::Error::new(io::ErrorKind::NotFound, "profile missing"),
    })?;
    let log_path = layout.log(id);
    let (records, torn) = read_log(&log_path)?;

    let mut state = PatientState::new(profile);
    let snapshot_path = layout.snapshot(id);
    let stored: Option<Snapshot> = read_json(&snapshot_path)?;
    let mut at_snapshot = None;
    for (i, r) in records.iter().enumerate() {
        state.apply(r).map_err(|message| StoreError::Corrupt {
            path: log_path.clone(),
            line: i + 1,
            message,
        })?;
        if stored.as_ref().is_some_and(|s| s.as_of_seq == r.seq) {
            at_snapshot = Some(state.snapshot());
        }
    }

    let mut report = LoadReport {
        records: records.len(),
        torn_tail_dropped: torn,
        snapshot_rewritten: false,
    };
    if let Some(stored) = stored {
        if at_snapshot.as_ref() != Some(&stored) {
            tracing::warn!(patient = id, as_of_seq = stored.as_of_seq, "snapshot disagrees with log; rewriting");
            write_json_atomic(&snapshot_path, &state.snapshot())?;
            report.snapshot_rewritten = true;
        }
    }
    Ok((state, report))
}

pub fn read_snapshot(layout: &Layout, id: &str) -> Result<Option<Snapshot>, StoreError> {
    read_json(&layout.snapshot(id))
}

/// Creates a patient directory with its initial records, writing the profile
/// last so a half-created patient is never loaded.
pub fn create_patient(
    layout: &Layout,
    profile: &PatientProfile,
    initial: &[EventRecord],
) -> Result<(), StoreError> {
    let id = &profile.patient.patient_id;
    let dir = layout.patient_dir(id);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let log = layout.log(id);
    // Leftovers of an interrupted registration.
    if log.exists() {
        fs::remove_file(&log).map_err(io_err(&log))?;
    }
    LogWriter::open(&log)?.append(initial)?;
    write_json_atomic(&layout.profile(id), profile)
}
