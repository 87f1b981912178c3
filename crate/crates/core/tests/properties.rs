use std::collections::HashSet;

use adhere_core::analytics::{
    coefficient_of_variation, cv_of, fit_logistic, spearman_correlation, student_t_sf,
    welch_t_test, LabSeries,
};
use adhere_core::game::{score_trace, synthetic_outcome, GameLedger};
use adhere_core::model::{local_day, DateRange, DoseSchedule, DoseSlot, IntakeEvent, IntakeKind, LabResult, MedicationLine};
use adhere_core::scheduler::{classify_slot, due_slots, reminder_plan, NotificationPrefs, SlotStatus};
use adhere_core::streak::{missed_dose_rate, streaks, DayOutcome};
use chrono::{DateTime, Duration, NaiveDate, NaiveTime, TimeZone, Utc};
use proptest::prelude::*;

fn day0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
}

fn outcomes_from(bits: &[bool]) -> Vec<DayOutcome> {
    bits.iter()
        .enumerate()
        .map(|(i, &b)| synthetic_outcome("p", day0() + chrono::Days::new(i as u64), b))
        .collect()
}

fn schedule(slots: &[(u32, u32)], zone: &str) -> DoseSchedule {
    DoseSchedule {
        patient_id: "p".into(),
        timezone: zone.into(),
        medications: vec![MedicationLine {
            med_name: "tacrolimus".into(),
            is_immunosuppressant: true,
            slots: slots
                .iter()
                .enumerate()
                .map(|(i, &(h, m))| DoseSlot::at(format!("s{i}"), h, m))
                .collect(),
        }],
        effective_from: day0(),
    }
}

const ZONES: [&str; 4] = ["UTC", "America/Los_Angeles", "Asia/Kolkata", "Pacific/Chatham"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn local_day_is_monotone(a in 0i64..2_000_000_000, b in 0i64..2_000_000_000, z in 0usize..4) {
        let (lo, hi) = (a.min(b), a.max(b));
        let t1 = Utc.timestamp_opt(lo, 0).unwrap();
        let t2 = Utc.timestamp_opt(hi, 0).unwrap();
        prop_assert!(local_day(t1, ZONES[z]).unwrap() <= local_day(t2, ZONES[z]).unwrap());
    }

    #[test]
    fn reminder_count_is_bounded(
        repeats in 0u32..6,
        interval in 1u32..240,
        override_min in proptest::option::of(0u32..1440),
        z in 0usize..4,
        day_offset in 0u64..400,
    ) {
        let s = schedule(&[(8, 0), (14, 30), (21, 0)], ZONES[z]);
        let mut prefs = NotificationPrefs::defaults_for("p");
        prefs.max_repeats_per_slot = repeats;
        prefs.gentle_repeat_interval = interval;
        if let Some(m) = override_min {
            prefs.overrides.insert("s1".into(), NaiveTime::from_hms_opt(m / 60, m % 60, 0).unwrap());
        }
        let day = day0() + chrono::Days::new(day_offset);
        let plan = reminder_plan(&s, &prefs, day, &HashSet::new()).unwrap();
        prop_assert_eq!(plan.entries.len(), 3);
        for e in &plan.entries {
            prop_assert!(e.fire_instants.len() as u32 <= 1 + repeats);
            prop_assert!(e.fire_instants.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn classification_never_reverts_to_pending(
        events in proptest::collection::vec((0i64..36 * 60, any::<bool>()), 0..4),
        probes in proptest::collection::vec(0i64..48 * 60, 2..8),
    ) {
        let s = schedule(&[(8, 0)], "UTC");
        let slot = &due_slots(&s, day0()).unwrap()[0];
        let start: DateTime<Utc> = slot.day_start;
        let events: Vec<IntakeEvent> = events
            .into_iter()
            .map(|(m, taken)| IntakeEvent {
                patient_id: "p".into(),
                slot_id: "s0".into(),
                timestamp: start + Duration::minutes(m),
                kind: if taken { IntakeKind::Taken } else { IntakeKind::Skipped },
            })
            .collect();
        let mut probes = probes;
        probes.sort();
        let mut resolved = false;
        for m in probes {
            let c = classify_slot(slot, &events, start + Duration::minutes(m));
            if resolved {
                prop_assert_ne!(c.status, SlotStatus::Pending);
            }
            resolved |= c.status != SlotStatus::Pending;
            if matches!(c.status, SlotStatus::TakenOnTime | SlotStatus::TakenLate | SlotStatus::Skipped) {
                prop_assert!(!events.is_empty());
            }
        }
    }

    #[test]
    fn streak_decomposition_is_conserved(bits in proptest::collection::vec(any::<bool>(), 0..120)) {
        let outcomes = outcomes_from(&bits);
        let s = streaks(&outcomes).unwrap();
        let adherent = bits.iter().filter(|b| **b).count() as u32;
        prop_assert_eq!(s.runs.iter().sum::<u32>(), adherent);
        prop_assert!(s.longest >= s.current);

        let mut extended = outcomes.clone();
        extended.push(synthetic_outcome("p", day0() + chrono::Days::new(bits.len() as u64), false));
        let t = streaks(&extended).unwrap();
        prop_assert_eq!(t.current, 0);
        prop_assert_eq!(t.longest, s.longest);
        prop_assert_eq!(&t.runs, &s.runs);
    }

    #[test]
    fn missed_rate_is_a_fraction(
        days in proptest::collection::vec((0u32..4, 0u32..4, 0u32..4), 0..60),
    ) {
        let outcomes: Vec<DayOutcome> = days
            .iter()
            .enumerate()
            .map(|(i, &(taken, skipped, missed))| DayOutcome {
                patient_id: "p".into(),
                day: day0() + chrono::Days::new(i as u64),
                scheduled: taken + skipped + missed,
                taken,
                taken_late: 0,
                skipped,
                missed,
                pending: 0,
                closed: true,
                adherent: taken + skipped + missed > 0 && skipped + missed == 0,
                warnings: vec![],
            })
            .collect();
        let r = missed_dose_rate(&outcomes, DateRange::all());
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn ledger_fields_never_decrease(bits in proptest::collection::vec(any::<bool>(), 0..150)) {
        let mut ledger = GameLedger::new("p");
        for o in outcomes_from(&bits) {
            let (next, _) = ledger.apply_day(&o).unwrap();
            prop_assert!(next.total_points >= ledger.total_points);
            prop_assert!(next.challenges_completed >= ledger.challenges_completed);
            prop_assert!(next.milestones_reached.len() >= ledger.milestones_reached.len());
            prop_assert!(next.rewards.len() >= ledger.rewards.len());
            prop_assert_eq!(next.rewards.len(), next.milestones_reached.len());
            ledger = next;
        }
        prop_assert_eq!(score_trace(&bits).points, ledger.total_points);
    }

    #[test]
    fn cv_is_scale_invariant(levels in proptest::collection::vec(0.1f64..50.0, 2..20), k in 0.01f64..100.0) {
        let base = cv_of(&levels).unwrap().cv_percent;
        let scaled: Vec<f64> = levels.iter().map(|x| x * k).collect();
        prop_assert!((cv_of(&scaled).unwrap().cv_percent - base).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn welch_is_antisymmetric(
        a in proptest::collection::vec(-50.0f64..50.0, 2..12),
        b in proptest::collection::vec(-50.0f64..50.0, 2..12),
    ) {
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        prop_assert!((ab.t + ba.t).abs() < 1e-12 * (1.0 + ab.t.abs()));
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        prop_assert!(ab.df > 0.0);
    }

    #[test]
    fn t_tails_sum_to_one(t in -60.0f64..60.0, df in 0.05f64..5000.0) {
        let s = student_t_sf(t, df).unwrap() + student_t_sf(-t, df).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn converged_fits_have_small_score(
        xs in proptest::collection::vec(-5.0f64..5.0, 20..80),
        slope in -1.5f64..1.5,
        seed in any::<u64>(),
    ) {
        // Deterministic pseudo-outcomes from a planted model.
        let mut state = seed | 1;
        let rows: Vec<(f64, bool)> = xs
            .iter()
            .map(|&x| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                let u = (state >> 11) as f64 / (1u64 << 53) as f64;
                (x, u < 1.0 / (1.0 + (-slope * x).exp()))
            })
            .collect();
        if let Ok(fit) = fit_logistic(&rows) {
            if fit.converged {
                prop_assert!(fit.max_abs_score < 1e-8);
            }
            prop_assert!(fit.ci95_lower <= fit.odds_ratio && fit.odds_ratio <= fit.ci95_upper);
        }
    }
}

/// Brute-force Spearman: average ranks by counting, then Pearson from sums.
fn brute_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let rank = |v: &[f64], i: usize| {
        let less = v.iter().filter(|&&w| w < v[i]).count() as f64;
        let equal = v.iter().filter(|&&w| w == v[i]).count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let n = x.len();
    let rx: Vec<f64> = (0..n).map(|i| rank(x, i)).collect();
    let ry: Vec<f64> = (0..n).map(|i| rank(y, i)).collect();
    let nf = n as f64;
    let (sx, sy) = (rx.iter().sum::<f64>(), ry.iter().sum::<f64>());
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum::<f64>() - sx * sy / nf;
    let sxx: f64 = rx.iter().map(|a| a * a).sum::<f64>() - sx * sx / nf;
    let syy: f64 = ry.iter().map(|a| a * a).sum::<f64>() - sy * sy / nf;
    if sxx.abs() < 1e-12 || syy.abs() < 1e-12 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

#[test]
fn spearman_matches_brute_force_on_small_inputs() {
    let mut checked = 0;
    for n in 3..=6u32 {
        let total = 3usize.pow(n);
        let decode = |mut k: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v = (k % 3) as f64 + 1.0;
                    k /= 3;
                    v
                })
                .collect()
        };
        for i in 0..total {
            let x = decode(i);
            for j in 0..total {
                let y = decode(j);
                match (spearman_correlation(&x, &y), brute_spearman(&x, &y)) {
                    (Ok(a), Some(b)) => assert!((a - b).abs() < 1e-12, "{x:?} {y:?}"),
                    (Err(_), None) => {}
                    other => panic!("disagreement on {x:?} {y:?}: {other:?}"),
                }
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 27 * 27 + 81 * 81 + 243 * 243 + 729 * 729);
}

#[test]
fn cv_window_matches_manual_filter() {
    let mut s = LabSeries::new("p");
    for (i, v) in [7.5, 9.0, 12.0, 6.0, 8.8].into_iter().enumerate() {
        s.insert(LabResult::tacrolimus("p", day0() + chrono::Days::new(7 * i as u64), v).unwrap());
    }
    let window = DateRange::new(day0() + chrono::Days::new(7), day0() + chrono::Days::new(21));
    let got = coefficient_of_variation(&s, window).unwrap();
    let expected = cv_of(&[9.0, 12.0, 6.0]).unwrap();
    assert_eq!(got, expected);
}
