use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::model::{DateRange, LabResult};

/// Dated tacrolimus trough levels for one patient.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabSeries {
    pub patient_id: String,
    pub observations: Vec<LabResult>,
}

impl LabSeries {
    pub fn new(patient_id: impl Into<String>) -> Self {
        Self {
            patient_id: patient_id.into(),
            observations: Vec::new(),
        }
    }

    /// Inserts keeping draw dates non-decreasing.
    pub fn insert(&mut self, lab: LabResult) {
        let at = self
            .observations
            .partition_point(|o| o.draw_date <= lab.draw_date);
        self.observations.insert(at, lab);
    }

    pub fn values_in(&self, window: DateRange) -> Vec<f64> {
        self.observations
            .iter()
            .filter(|o| window.contains(o.draw_date))
            .map(|o| o.value_ng_ml)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: f64,
    pub cv_percent: f64,
}

/// Sample mean and variance (n − 1 denominator), two-pass.
pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, ss / (n - 1.0))
}

/// Coefficient of variation of the levels drawn inside `window`:
/// sample standard deviation over mean, times 100.
pub fn coefficient_of_variation(
    series: &LabSeries,
    window: DateRange,
) -> Result<CvResult, AnalyticsError> {
    cv_of(&series.values_in(window))
}

pub fn cv_of(levels: &[f64]) -> Result<CvResult, AnalyticsError> {
    if levels.len() < 2 {
        return Err(AnalyticsError::InsufficientData(format!(
            "coefficient of variation needs at least 2 levels, got {}",
            levels.len()
        )));
    }
    let (mean, var) = mean_var(levels);
    if mean.is_nan() || mean <= 0.0 {
        return Err(AnalyticsError::Domain(format!("mean level must be positive, got {mean}")));
    }
    let sd = var.sqrt();
    Ok(CvResult {
        n: levels.len(),
        mean,
        sd,
        cv_percent: sd / mean * 100.0,
    })
}
