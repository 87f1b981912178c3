//! Challenge reward rules.
//!
//! Every adherent day earns one point. Each completed block of seven days
//! inside an unbroken streak completes one "7 Day Challenge"; challenges keep
//! counting within a long streak. Collectible badges are granted when the
//! completed-challenge count first reaches 1, 3, 5, 10 and 15. Nothing is ever
//! taken away: a non-adherent day only resets the running streak.

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::streak::DayOutcome;

/// Days in one challenge.
pub const CHALLENGE_DAYS: u32 = 7;

/// Completed-challenge counts that unlock a badge.
pub const MILESTONES: [u32; 5] = [1, 3, 5, 10, 15];

pub fn badge_id(milestone: u32) -> String {
    format!("challenges-{milestone:02}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reward {
    pub milestone: u32,
    pub badge_id: String,
    pub earned_on: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AwardKind {
    DailyPoint,
    ChallengeCompleted,
    MilestoneReached,
}

/// Emitted in the order daily point, challenge, milestone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Award {
    pub kind: AwardKind,
    pub day: NaiveDate,
    /// Points granted, challenge ordinal, or milestone reached.
    pub detail: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameLedger {
    pub patient_id: String,
    pub total_points: u64,
    pub challenges_completed: u32,
    pub current_streak_days: u32,
    pub milestones_reached: Vec<u32>,
    pub rewards: Vec<Reward>,
    pub last_applied_day: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GameError {
    #[error("day {day} already applied (ledger is at {last})")]
    AlreadyApplied { day: NaiveDate, last: NaiveDate },
    #[error("day {day} is not contiguous with {last}; expected {expected}")]
    NonContiguous {
        day: NaiveDate,
        last: NaiveDate,
        expected: NaiveDate,
    },
    #[error("day {0} is not closed")]
    DayOpen(NaiveDate),
    #[error("outcome for patient `{got}` applied to ledger of `{expected}`")]
    WrongPatient { expected: String, got: String },
    #[error("trace may only contain '0' and '1', found {0:?}")]
    BadTrace(char),
}

impl GameLedger {
    pub fn new(patient_id: impl Into<String>) -> Self {
        Self {
            patient_id: patient_id.into(),
            total_points: 0,
            challenges_completed: 0,
            current_streak_days: 0,
            milestones_reached: Vec::new(),
            rewards: Vec::new(),
            last_applied_day: None,
        }
    }

    /// The next day this ledger will accept, if it has applied any.
    pub fn next_day(&self) -> Option<NaiveDate> {
        self.last_applied_day.and_then(|d| d.succ_opt())
    }

    /// Applies one closed day. Replay must be contiguous: after the first day,
    /// each outcome must be for the day after `last_applied_day`.
    pub fn apply_day(&self, outcome: &DayOutcome) -> Result<(GameLedger, Vec<Award>), GameError> {
        if outcome.patient_id != self.patient_id {
            return Err(GameError::WrongPatient {
                expected: self.patient_id.clone(),
                got: outcome.patient_id.clone(),
            });
        }
        if let Some(last) = self.last_applied_day {
            if outcome.day <= last {
                return Err(GameError::AlreadyApplied {
                    day: outcome.day,
                    last,
                });
            }
            let expected = last.checked_add_days(Days::new(1)).expect("date overflow");
            if outcome.day != expected {
                return Err(GameError::NonContiguous {
                    day: outcome.day,
                    last,
                    expected,
                });
            }
        }
        if !outcome.closed {
            return Err(GameError::DayOpen(outcome.day));
        }

        let mut next = self.clone();
        next.last_applied_day = Some(outcome.day);
        let mut awards = Vec::new();
        if !outcome.adherent {
            next.current_streak_days = 0;
            return Ok((next, awards));
        }

        next.total_points += 1;
        next.current_streak_days += 1;
        awards.push(Award {
            kind: AwardKind::DailyPoint,
            day: outcome.day,
            detail: 1,
        });
        if next.current_streak_days.is_multiple_of(CHALLENGE_DAYS) {
            next.challenges_completed += 1;
            awards.push(Award {
                kind: AwardKind::ChallengeCompleted,
                day: outcome.day,
                detail: next.challenges_completed,
            });
            for &m in MILESTONES.iter() {
                if m <= next.challenges_completed && !next.milestones_reached.contains(&m) {
                    next.milestones_reached.push(m);
                    next.rewards.push(Reward {
                        milestone: m,
                        badge_id: badge_id(m),
                        earned_on: outcome.day,
                    });
                    awards.push(Award {
                        kind: AwardKind::MilestoneReached,
                        day: outcome.day,
                        detail: m,
                    });
                }
            }
        }
        Ok((next, awards))
    }

    /// Day on which the given milestone badge was earned.
    pub fn milestone_day(&self, milestone: u32) -> Option<NaiveDate> {
        self.rewards
            .iter()
            .find(|r| r.milestone == milestone)
            .map(|r| r.earned_on)
    }
}

/// Game level: the number of milestone badges collected, 0 through 5.
pub fn level(ledger: &GameLedger) -> u8 {
    ledger.milestones_reached.len() as u8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceScore {
    pub points: u64,
    pub challenges: u32,
    pub milestones: Vec<u32>,
}

/// Parses an oldest-first adherence trace such as `"1101111"`.
pub fn parse_trace(trace: &str) -> Result<Vec<bool>, GameError> {
    trace
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            other => Err(GameError::BadTrace(other)),
        })
        .collect()
}

/// Scores a trace of daily adherence bits by replaying it through
/// [`GameLedger::apply_day`] from an empty ledger.
pub fn score_trace(bits: &[bool]) -> TraceScore {
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let ledger = replay_bits(GameLedger::new("trace"), start, bits);
    TraceScore {
        points: ledger.total_points,
        challenges: ledger.challenges_completed,
        milestones: ledger.milestones_reached,
    }
}

fn replay_bits(mut ledger: GameLedger, start: NaiveDate, bits: &[bool]) -> GameLedger {
    let mut day = start;
    for &adherent in bits {
        let outcome = synthetic_outcome(&ledger.patient_id, day, adherent);
        ledger = ledger.apply_day(&outcome).expect("contiguous synthetic replay").0;
        day = day.succ_opt().expect("date overflow");
    }
    ledger
}

/// A closed one-dose day, used when only the adherence bit matters.
pub fn synthetic_outcome(patient_id: &str, day: NaiveDate, adherent: bool) -> DayOutcome {
    DayOutcome {
        patient_id: patient_id.to_string(),
        day,
        scheduled: 1,
        taken: u32::from(adherent),
        taken_late: 0,
        skipped: 0,
        missed: u32::from(!adherent),
        pending: 0,
        closed: true,
        adherent,
        warnings: Vec::new(),
    }
}
