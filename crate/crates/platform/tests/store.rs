use std::fs::{self, OpenOptions};
use std::io::Write;
use std::sync::Arc;

use adhere::service::{IntakeRequest, Registration};
use adhere::store::{load_patient, read_log, read_snapshot, EventRecord, Layout, RecordBody};
use adhere::{ManualClock, Service};
use adhere_core::model::{DoseSlot, IntakeKind, MedicationLine, Organ, Patient};
use chrono::{DateTime, Utc};
use proptest::prelude::*;

fn at(s: &str) -> DateTime<Utc> {
    s.parse().unwrap()
}

fn populated(dir: &std::path::Path) -> Arc<ManualClock> {
    let clock = Arc::new(ManualClock::new(at("2024-03-01T07:00:00Z")));
    let service = Service::open(dir, clock.clone()).unwrap();
    service
        .register(Registration {
            patient: Patient {
                patient_id: "p1".into(),
                transplant_date: "2024-02-01".parse().unwrap(),
                organ: Organ::Liver,
                timezone: "America/New_York".into(),
            },
            arm: "app".into(),
            medications: vec![MedicationLine {
                med_name: "tacrolimus".into(),
                is_immunosuppressant: true,
                slots: vec![DoseSlot::at("am", 8, 0), DoseSlot::at("pm", 20, 0)],
            }],
            effective_from: Some("2024-03-01".parse().unwrap()),
            prefs: None,
        })
        .unwrap();
    for day in 1..=9 {
        clock.set(at(&format!("2024-03-{:02}T23:00:00-05:00", day)));
        for (slot, hour) in [("am", 8), ("pm", 20)] {
            if day == 4 && slot == "pm" {
                continue;
            }
            let req = IntakeRequest {
                slot_id: slot.into(),
                ts: format!("2024-03-{day:02}T{hour:02}:15:00-05:00"),
                kind: "taken".into(),
            };
            service.record_intake("p1", &req).unwrap();
        }
        service.close_due(None).unwrap();
    }
    clock
}

#[test]
fn intake_record_wire_format() {
    let dir = tempfile::tempdir().unwrap();
    populated(dir.path());
    let text = fs::read_to_string(Layout::new(dir.path()).log("p1")).unwrap();
    let line = text.lines().nth(1).unwrap();
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["seq"], 2);
    assert_eq!(v["record_type"], "intake");
    let payload = v["payload"].as_object().unwrap();
    let mut keys: Vec<&str> = payload.keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["kind", "patient_id", "slot_id", "ts"]);
    assert_eq!(payload["ts"], "2024-03-01T13:15:00Z");
    assert_eq!(payload["kind"], "taken");
    assert!(v["recorded_at"].is_string());

    let types: std::collections::BTreeSet<String> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["record_type"].as_str().unwrap().to_string())
        .collect();
    let types: Vec<&str> = types.iter().map(String::as_str).collect();
    assert_eq!(types, ["award", "day_closed", "intake", "schedule_change"]);
}

#[test]
fn seq_is_strictly_increasing() {
    let dir = tempfile::tempdir().unwrap();
    populated(dir.path());
    let (records, torn) = read_log(&Layout::new(dir.path()).log("p1")).unwrap();
    assert!(!torn);
    assert!(records.windows(2).all(|w| w[1].seq == w[0].seq + 1));
    assert_eq!(records[0].seq, 1);
}

#[test]
fn torn_tail_is_discarded_and_truncated() {
    let dir = tempfile::tempdir().unwrap();
    populated(dir.path());
    let layout = Layout::new(dir.path());
    let log = layout.log("p1");
    let intact = fs::read(&log).unwrap();
    let (full_state, _) = load_patient(&layout, "p1").unwrap();

    // Half of an extra record, as if the process died mid-write.
    let extra = EventRecord {
        seq: full_state.last_seq + 1,
        recorded_at: at("2024-03-10T12:00:00Z"),
        body: RecordBody::Intake(adhere_core::IntakeEvent {
            patient_id: "p1".into(),
            slot_id: "am".into(),
            timestamp: at("2024-03-10T13:00:00Z"),
            kind: IntakeKind::Taken,
        }),
    };
    let line = adhere::store::encode_record(&extra);
    let mut f = OpenOptions::new().append(true).open(&log).unwrap();
    f.write_all(&line[..line.len() / 2]).unwrap();
    drop(f);

    let (state, report) = load_patient(&layout, "p1").unwrap();
    assert!(report.torn_tail_dropped);
    assert!(!report.snapshot_rewritten);
    assert_eq!(state.last_seq, full_state.last_seq);
    assert_eq!(state.ledger, full_state.ledger);
    assert_eq!(fs::read(&log).unwrap(), intact);
    assert_eq!(read_snapshot(&layout, "p1").unwrap().unwrap(), state.snapshot());
}

#[test]
fn corrupt_complete_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    populated(dir.path());
    let layout = Layout::new(dir.path());
    let mut f = OpenOptions::new().append(true).open(layout.log("p1")).unwrap();
    f.write_all(b"{\"seq\": not json}\n").unwrap();
    drop(f);
    let err = load_patient(&layout, "p1").unwrap_err();
    assert!(matches!(err, adhere::store::StoreError::Corrupt { .. }), "{err}");
}

#[test]
fn stale_snapshot_is_rewritten_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    populated(dir.path());
    let layout = Layout::new(dir.path());
    let mut snap = read_snapshot(&layout, "p1").unwrap().unwrap();
    snap.ledger.total_points += 100;
    fs::write(layout.snapshot("p1"), serde_json::to_vec(&snap).unwrap()).unwrap();
    let (state, report) = load_patient(&layout, "p1").unwrap();
    assert!(report.snapshot_rewritten);
    assert_eq!(read_snapshot(&layout, "p1").unwrap().unwrap(), state.snapshot());
}

#[test]
fn snapshot_matches_replay_of_its_prefix() {
    let dir = tempfile::tempdir().unwrap();
    populated(dir.path());
    let layout = Layout::new(dir.path());
    let snap = read_snapshot(&layout, "p1").unwrap().unwrap();
    let (records, _) = read_log(&layout.log("p1")).unwrap();
    let (full, _) = load_patient(&layout, "p1").unwrap();
    let mut state = adhere::store::PatientState::new(full.profile.clone());
    for r in records.iter().take_while(|r| r.seq <= snap.as_of_seq) {
        state.apply(r).unwrap();
    }
    assert_eq!(state.snapshot(), snap);
    // 03-04 missed a dose and closed only at its freeze, which holds back
    // the following days: 03-01..03-08 are scored, 03-09 is still open.
    assert_eq!(snap.ledger.last_applied_day, Some("2024-03-08".parse().unwrap()));
    assert_eq!(snap.ledger.total_points, 7);
    assert_eq!(snap.ledger.current_streak_days, 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Cutting the log at any byte loses at most the record being written.
    #[test]
    fn replay_survives_any_cut(cut_fraction in 0.0f64..1.0) {
        let dir = tempfile::tempdir().unwrap();
        populated(dir.path());
        let layout = Layout::new(dir.path());
        let log = layout.log("p1");
        let bytes = fs::read(&log).unwrap();
        let (all, _) = read_log(&log).unwrap();
        let cut = ((bytes.len() as f64) * cut_fraction) as usize;
        fs::write(&log, &bytes[..cut]).unwrap();
        fs::remove_file(layout.snapshot("p1")).unwrap();

        let (state, report) = load_patient(&layout, "p1").unwrap();
        let complete = bytes[..cut].iter().filter(|&&b| b == b'\n').count();
        prop_assert_eq!(state.last_seq as usize, complete);
        prop_assert_eq!(report.torn_tail_dropped, cut > 0 && bytes[cut - 1] != b'\n');
        // Replaying the surviving prefix from scratch gives the same state.
        let mut fresh = adhere::store::PatientState::new(state.profile.clone());
        for r in &all[..complete] {
            fresh.apply(r).unwrap();
        }
        prop_assert_eq!(fresh.snapshot(), state.snapshot());
    }
}
