use serde::{Deserialize, Serialize};

use super::cv::mean_var;
use super::special::student_t_sf;
use super::AnalyticsError;

/// Result of a two-sided Welch unequal-variance t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub sd_a: f64,
    pub sd_b: f64,
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    pub p_value: f64,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest, AnalyticsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AnalyticsError::InsufficientData(format!(
            "each sample needs at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    let (qa, qb) = (var_a / na, var_b / nb);
    let se2 = qa + qb;
    let mut out = WelchTest {
        n_a: a.len(),
        n_b: b.len(),
        mean_a,
        mean_b,
        sd_a: var_a.sqrt(),
        sd_b: var_b.sqrt(),
        t: 0.0,
        df: na + nb - 2.0,
        p_value: 1.0,
    };
    if se2 == 0.0 {
        if mean_a == mean_b {
            return Ok(out);
        }
        return Err(AnalyticsError::Degenerate(
            "both samples are constant with different means".into(),
        ));
    }
    out.t = (mean_a - mean_b) / se2.sqrt();
    out.df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    out.p_value = (2.0 * student_t_sf(out.t.abs(), out.df)?).min(1.0);
    Ok(out)
}
