//! Cohort-level report: trough variability by arm, arm comparison, app-use
//! model, missed doses against game level, and the missed-dose reduction of
//! patients who completed at least three challenges.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::correlation::{pearson_correlation, spearman_correlation};
use super::cv::{coefficient_of_variation, mean_var, CvResult, LabSeries};
use super::logistic::{fit_logistic, LogisticFit};
use super::welch::{welch_t_test, WelchTest};
use super::AnalyticsError;
use crate::game::{level, GameLedger};
use crate::model::DateRange;
use crate::streak::DayOutcome;

pub const CV_TEST_NAME: &str = "Welch two-sample t-test (unequal variances, two-sided)";
pub const APP_USE_MODEL_NAME: &str =
    "univariate logistic regression of app-arm membership on CV (IRLS, Wald 95% CI)";
pub const CORRELATION_NAME: &str = "Spearman rank correlation (Pearson also reported)";
/// Challenge count defining the engaged subgroup.
pub const ENGAGED_CHALLENGES: u32 = 3;

/// Everything the report needs about one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub patient_id: String,
    pub arm: String,
    pub labs: LabSeries,
    /// Date-ordered day outcomes.
    pub outcomes: Vec<DayOutcome>,
    pub ledger: GameLedger,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmLabels {
    pub app: String,
    pub control: String,
}

impl Default for ArmLabels {
    fn default() -> Self {
        Self {
            app: "app".into(),
            control: "control".into(),
        }
    }
}

/// A report value, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Cell<T> {
    Available { value: T },
    Unavailable { reason: String },
}

impl<T> Cell<T> {
    pub fn value(&self) -> Option<&T> {
        match self {
            Cell::Available { value } => Some(value),
            Cell::Unavailable { .. } => None,
        }
    }

    pub fn is_available(&self) -> bool {
        matches!(self, Cell::Available { .. })
    }

    fn unavailable(reason: impl Into<String>) -> Self {
        Cell::Unavailable {
            reason: reason.into(),
        }
    }
}

impl<T> From<Result<T, AnalyticsError>> for Cell<T> {
    fn from(r: Result<T, AnalyticsError>) -> Self {
        match r {
            Ok(value) => Cell::Available { value },
            Err(e) => Cell::unavailable(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub mean_cv: f64,
    pub sd_cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub label: String,
    pub patients: usize,
    pub patients_with_cv: usize,
    pub cv: Cell<CvSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n: usize,
    pub spearman: f64,
    pub pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissedRateComparison {
    pub challenge_threshold: u32,
    pub engaged_patients: usize,
    /// Pooled omitted/scheduled of engaged app-arm patients, counted from the
    /// day after their third challenge was completed.
    pub engaged_rate_after_threshold: Cell<f64>,
    /// Pooled omitted/scheduled of engaged app-arm patients over the window.
    pub engaged_rate_window: Cell<f64>,
    pub nonuser_rate: Cell<f64>,
    pub other_app_user_rate: Cell<f64>,
    /// engaged_rate_after_threshold / nonuser_rate.
    pub ratio_vs_nonusers: Cell<f64>,
    /// engaged_rate_after_threshold / other_app_user_rate.
    pub ratio_vs_other_app_users: Cell<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub window: DateRange,
    pub arms: Vec<ArmSummary>,
    pub cv_test: String,
    pub cv_comparison: Cell<WelchTest>,
    pub app_use_model: String,
    pub app_use_fit: Cell<LogisticFit>,
    pub correlation_method: String,
    pub missed_vs_level: Cell<Correlation>,
    pub missed_rate: MissedRateComparison,
}

struct PatientStats<'a> {
    record: &'a CohortRecord,
    cv: Result<CvResult, AnalyticsError>,
}

fn in_arm<'s, 'r>(
    stats: &'s [PatientStats<'r>],
    label: &'s str,
) -> impl Iterator<Item = &'s PatientStats<'r>> {
    stats.iter().filter(move |s| s.record.arm == label)
}

fn windowed(record: &CohortRecord, window: DateRange) -> Vec<&DayOutcome> {
    record
        .outcomes
        .iter()
        .filter(|o| window.contains(o.day))
        .collect()
}

fn pooled_rate<'a>(outcomes: impl Iterator<Item = &'a DayOutcome>) -> Option<f64> {
    let (omitted, scheduled) = outcomes
        .filter(|o| o.closed)
        .fold((0u64, 0u64), |(m, s), o| {
            (m + u64::from(o.omitted()), s + u64::from(o.scheduled))
        });
    (scheduled > 0).then(|| omitted as f64 / scheduled as f64)
}

fn rate_cell(rate: Option<f64>, what: &str) -> Cell<f64> {
    match rate {
        Some(value) => Cell::Available { value },
        None => Cell::unavailable(format!("no scheduled doses for {what}")),
    }
}

fn ratio_cell(num: &Cell<f64>, den: &Cell<f64>) -> Cell<f64> {
    match (num.value(), den.value()) {
        (Some(n), Some(d)) if *d > 0.0 => Cell::Available { value: n / d },
        (Some(_), Some(_)) => Cell::unavailable("reference rate is zero"),
        _ => Cell::unavailable("a component rate is unavailable"),
    }
}

/// Builds the cohort report. Per-patient statistics are computed in parallel
/// but always aggregated in patient-id order, so the output does not depend on
/// input order or scheduling.
pub fn cohort_report(records: &[CohortRecord], window: DateRange, arms: &ArmLabels) -> CohortReport {
    let mut sorted: Vec<&CohortRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let stats: Vec<PatientStats> = sorted
        .par_iter()
        .map(|r| PatientStats {
            record: r,
            cv: coefficient_of_variation(&r.labs, window),
        })
        .collect();

    let cvs_of = |label: &str| -> Vec<f64> {
        in_arm(&stats, label)
            .filter_map(|s| s.cv.as_ref().ok().map(|c| c.cv_percent))
            .collect()
    };
    let app_cvs = cvs_of(&arms.app);
    let control_cvs = cvs_of(&arms.control);

    let arm_summaries = [&arms.app, &arms.control]
        .into_iter()
        .map(|label| {
            let cvs = cvs_of(label);
            let cv = if cvs.len() >= 2 {
                let (mean, var) = mean_var(&cvs);
                Cell::Available {
                    value: CvSummary {
                        mean_cv: mean,
                        sd_cv: var.sqrt(),
                    },
                }
            } else {
                Cell::unavailable(format!(
                    "arm `{label}` has {} patient(s) with computable CV; need 2",
                    cvs.len()
                ))
            };
            ArmSummary {
                label: label.clone(),
                patients: in_arm(&stats, label).count(),
                patients_with_cv: cvs.len(),
                cv,
            }
        })
        .collect();

    let cv_comparison = welch_t_test(&app_cvs, &control_cvs).into();
    let app_use_fit = if app_cvs.len() >= 2 && control_cvs.len() >= 2 {
        let rows: Vec<(f64, bool)> = app_cvs
            .iter()
            .map(|&cv| (cv, true))
            .chain(control_cvs.iter().map(|&cv| (cv, false)))
            .collect();
        fit_logistic(&rows).into()
    } else {
        Cell::unavailable("each arm needs at least 2 patients with computable CV")
    };

    let (missed, levels): (Vec<f64>, Vec<f64>) = in_arm(&stats, &arms.app)
        .filter_map(|s| {
            pooled_rate(s.record.outcomes.iter().filter(|o| window.contains(o.day)))
                .map(|rate| (rate, f64::from(level(&s.record.ledger))))
        })
        .unzip();
    let missed_vs_level = spearman_correlation(&missed, &levels)
        .map(|spearman| Correlation {
            n: missed.len(),
            spearman,
            pearson: pearson_correlation(&missed, &levels).ok(),
        })
        .into();

    CohortReport {
        window,
        arms: arm_summaries,
        cv_test: CV_TEST_NAME.into(),
        cv_comparison,
        app_use_model: APP_USE_MODEL_NAME.into(),
        app_use_fit,
        correlation_method: CORRELATION_NAME.into(),
        missed_vs_level,
        missed_rate: missed_rate_comparison(&stats, window, arms),
    }
}

fn missed_rate_comparison(
    stats: &[PatientStats],
    window: DateRange,
    arms: &ArmLabels,
) -> MissedRateComparison {
    let (engaged, other_app): (Vec<&CohortRecord>, Vec<&CohortRecord>) = stats
        .iter()
        .map(|s| s.record)
        .filter(|r| r.arm == arms.app)
        .partition(|r| r.ledger.challenges_completed >= ENGAGED_CHALLENGES);
    let nonusers: Vec<&CohortRecord> = stats
        .iter()
        .map(|s| s.record)
        .filter(|r| r.arm == arms.control)
        .collect();

    let after_threshold = engaged.iter().flat_map(|r| {
        let reached = r.ledger.milestone_day(ENGAGED_CHALLENGES);
        windowed(r, window)
            .into_iter()
            .filter(move |o| reached.is_some_and(|day| o.day > day))
    });
    let engaged_rate_after_threshold = rate_cell(
        pooled_rate(after_threshold),
        "engaged patients after their third challenge",
    );
    let engaged_rate_window = rate_cell(
        pooled_rate(engaged.iter().flat_map(|r| windowed(r, window))),
        "engaged patients",
    );
    let nonuser_rate = rate_cell(
        pooled_rate(nonusers.iter().flat_map(|r| windowed(r, window))),
        "nonusers",
    );
    let other_app_user_rate = rate_cell(
        pooled_rate(other_app.iter().flat_map(|r| windowed(r, window))),
        "app users below the challenge threshold",
    );
    MissedRateComparison {
        challenge_threshold: ENGAGED_CHALLENGES,
        engaged_patients: engaged.len(),
        ratio_vs_nonusers: ratio_cell(&engaged_rate_after_threshold, &nonuser_rate),
        ratio_vs_other_app_users: ratio_cell(&engaged_rate_after_threshold, &other_app_user_rate),
        engaged_rate_after_threshold,
        engaged_rate_window,
        nonuser_rate,
        other_app_user_rate,
    }
}

fn fmt_cell<T>(cell: &Cell<T>, f: impl Fn(&T) -> String) -> String {
    match cell {
        Cell::Available { value } => f(value),
        Cell::Unavailable { .. } => "n/a".into(),
    }
}

impl CohortReport {
    /// Plain-text rendering in the usual clinical reporting layout.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Cohort report, window {}", self.window);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12} {:>9} {:>8} {:>9} {:>8}", "arm", "patients", "with CV", "mean CV", "sd CV");
        for arm in &self.arms {
            let _ = writeln!(
                out,
                "{:<12} {:>9} {:>8} {:>9} {:>8}",
                arm.label,
                arm.patients,
                arm.patients_with_cv,
                fmt_cell(&arm.cv, |c| format!("{:.1}", c.mean_cv)),
                fmt_cell(&arm.cv, |c| format!("{:.1}", c.sd_cv)),
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "CV comparison: {}", self.cv_test);
        let _ = writeln!(
            out,
            "  {}",
            fmt_cell(&self.cv_comparison, |w| format!(
                "{:.1} vs {:.1}, t = {:.3}, df = {:.1}, P = {:.3}",
                w.mean_a, w.mean_b, w.t, w.df, w.p_value
            ))
        );
        let _ = writeln!(out, "CV as predictor of app use: {}", self.app_use_model);
        let _ = writeln!(
            out,
            "  {}",
            fmt_cell(&self.app_use_fit, |f| format!(
                "odds ratio {:.3}; 95% confidence interval {:.3}-{:.3}; P = {:.3}{}",
                f.odds_ratio,
                f.ci95_lower,
                f.ci95_upper,
                f.p_value,
                if f.converged { "" } else { " (not converged)" }
            ))
        );
        let _ = writeln!(out, "Missed-dose rate vs game level: {}", self.correlation_method);
        let _ = writeln!(
            out,
            "  {}",
            fmt_cell(&self.missed_vs_level, |c| format!(
                "rho = {:.3} (n = {}), pearson r = {}",
                c.spearman,
                c.n,
                c.pearson.map_or("n/a".into(), |r| format!("{r:.3}"))
            ))
        );
        let m = &self.missed_rate;
        let _ = writeln!(
            out,
            "Missed-dose rate, app users with >= {} challenges ({} patients):",
            m.challenge_threshold, m.engaged_patients
        );
        let pct = |c: &Cell<f64>| fmt_cell(c, |v| format!("{:.2}%", v * 100.0));
        let reduction = |c: &Cell<f64>| fmt_cell(c, |r| format!("{:.1}% lower (ratio {:.3})", (1.0 - r) * 100.0, r));
        let _ = writeln!(out, "  after threshold {}, whole window {}", pct(&m.engaged_rate_after_threshold), pct(&m.engaged_rate_window));
        let _ = writeln!(out, "  vs nonusers ({}): {}", pct(&m.nonuser_rate), reduction(&m.ratio_vs_nonusers));
        let _ = writeln!(
            out,
            "  vs other app users ({}): {}",
            pct(&m.other_app_user_rate),
            reduction(&m.ratio_vs_other_app_users)
        );
        out
    }
}
