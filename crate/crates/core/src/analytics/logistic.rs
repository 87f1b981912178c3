//! Univariate logistic regression by iteratively reweighted least squares.

use serde::{Deserialize, Serialize};

use super::special::normal_sf;
use super::AnalyticsError;

pub const SCORE_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 50;
/// Slopes beyond this magnitude are treated as complete separation.
pub const SEPARATION_SLOPE: f64 = 30.0;
const Z95: f64 = 1.96;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub n: usize,
    pub intercept: f64,
    pub slope: f64,
    pub se_intercept: f64,
    pub se_slope: f64,
    pub odds_ratio: f64,
    pub ci95_lower: f64,
    pub ci95_upper: f64,
    /// Two-sided Wald p-value for the slope.
    pub p_value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the log-likelihood gradient at the returned estimate.
    pub max_abs_score: f64,
}

/// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Eval {
    loglik: f64,
    /// Gradient with respect to (intercept, slope) on the centered covariate.
    score: [f64; 2],
    /// Observed information on the centered covariate.
    info: [[f64; 2]; 2],
}

fn evaluate(xc: &[f64], y: &[f64], b0: f64, b1: f64) -> Eval {
    let mut e = Eval {
        loglik: 0.0,
        score: [0.0; 2],
        info: [[0.0; 2]; 2],
    };
    for (&x, &y) in xc.iter().zip(y) {
        let eta = b0 + b1 * x;
        let p = sigmoid(eta);
        let w = p * (1.0 - p);
        e.loglik += y * eta - softplus(eta);
        e.score[0] += y - p;
        e.score[1] += (y - p) * x;
        e.info[0][0] += w;
        e.info[0][1] += w * x;
        e.info[1][1] += w * x * x;
    }
    e.info[1][0] = e.info[0][1];
    e
}

/// Maximum-likelihood fit of `P(outcome = 1) = logistic(intercept + slope · x)`.
///
/// Newton–Raphson (IRLS) on the mean-centred covariate with step halving
/// whenever a full step lowers the likelihood. Stops when every gradient
/// component on the original scale is below [`SCORE_TOLERANCE`] in absolute
/// value, or after [`MAX_ITERATIONS`]. Standard errors come from the inverse
/// information matrix; the confidence interval is Wald's.
pub fn fit_logistic(rows: &[(f64, bool)]) -> Result<LogisticFit, AnalyticsError> {
    if rows.len() < 2 {
        return Err(AnalyticsError::InsufficientData(format!(
            "logistic regression needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    if rows.iter().any(|(x, _)| !x.is_finite()) {
        return Err(AnalyticsError::Domain("covariate values must be finite".into()));
    }
    let positives = rows.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == rows.len() {
        return Err(AnalyticsError::Degenerate("outcome has a single class".into()));
    }
    let n = rows.len() as f64;
    let center = rows.iter().map(|(x, _)| x).sum::<f64>() / n;
    let xc: Vec<f64> = rows.iter().map(|(x, _)| x - center).collect();
    if xc.iter().all(|x| *x == 0.0) {
        return Err(AnalyticsError::Degenerate("covariate is constant".into()));
    }
    let y: Vec<f64> = rows.iter().map(|(_, y)| f64::from(u8::from(*y))).collect();

    let prevalence = positives as f64 / n;
    let mut b0 = (prevalence / (1.0 - prevalence)).ln();
    let mut b1 = 0.0;
    let mut cur = evaluate(&xc, &y, b0, b1);
    let original_score =
        |e: &Eval| [e.score[0], e.score[1] + center * e.score[0]];
    let max_abs = |s: [f64; 2]| s[0].abs().max(s[1].abs());

    let mut iterations = 0;
    let mut converged = max_abs(original_score(&cur)) < SCORE_TOLERANCE;
    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let [[a, b], [_, d]] = cur.info;
        let det = a * d - b * b;
        if det.is_nan() || det <= 0.0 || det.is_infinite() {
            return Err(AnalyticsError::Separation(
                "information matrix became singular".into(),
            ));
        }
        let step0 = (d * cur.score[0] - b * cur.score[1]) / det;
        let step1 = (a * cur.score[1] - b * cur.score[0]) / det;

        let mut scale = 1.0;
        let mut next = evaluate(&xc, &y, b0 + step0, b1 + step1);
        let mut halvings = 0;
        // Near the optimum likelihood changes fall below rounding noise.
        let slack = 1e-12 * (1.0 + cur.loglik.abs());
        while next.loglik < cur.loglik - slack && halvings < MAX_HALVINGS {
            scale *= 0.5;
            halvings += 1;
            next = evaluate(&xc, &y, b0 + scale * step0, b1 + scale * step1);
        }
        b0 += scale * step0;
        b1 += scale * step1;
        cur = next;
        if b1.abs() > SEPARATION_SLOPE {
            return Err(AnalyticsError::Separation(format!(
                "slope diverged to {b1:.3}; outcome is (quasi-)separated by the covariate"
            )));
        }
        converged = max_abs(original_score(&cur)) < SCORE_TOLERANCE;
    }

    let [[a, b], [_, d]] = cur.info;
    let det = a * d - b * b;
    let var_slope = a / det;
    // Var(intercept) on the original scale: the centred intercept minus centre·slope.
    let var_b0c = d / det;
    let cov_b0c_b1 = -b / det;
    let var_intercept = var_b0c - 2.0 * center * cov_b0c_b1 + center * center * var_slope;

    let se_slope = var_slope.sqrt();
    let z = b1 / se_slope;
    Ok(LogisticFit {
        n: rows.len(),
        intercept: b0 - center * b1,
        slope: b1,
        se_intercept: var_intercept.sqrt(),
        se_slope,
        odds_ratio: b1.exp(),
        ci95_lower: (b1 - Z95 * se_slope).exp(),
        ci95_upper: (b1 + Z95 * se_slope).exp(),
        p_value: (2.0 * normal_sf(z.abs())).min(1.0),
        converged,
        iterations,
        max_abs_score: max_abs(original_score(&cur)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two(x0: (usize, usize), x1: (usize, usize)) -> Vec<(f64, bool)> {
        let mut rows = Vec::new();
        for (x, (pos, neg)) in [(0.0, x0), (1.0, x1)] {
            rows.extend(std::iter::repeat_n((x, true), pos));
            rows.extend(std::iter::repeat_n((x, false), neg));
        }
        rows
    }

    #[test]
    fn binary_covariate_reproduces_table_odds_ratio() {
        let fit = fit_logistic(&two_by_two((10, 10), (20, 10))).unwrap();
        assert!(fit.converged);
        assert!((fit.slope - 2f64.ln()).abs() < 1e-6);
        assert!((fit.odds_ratio - 2.0).abs() < 1e-6);
        assert!(fit.intercept.abs() < 1e-6);
        // Woolf standard error of the log odds ratio: sqrt(1/a + 1/b + 1/c + 1/d).
        let woolf = (1.0 / 10.0 + 1.0 / 10.0 + 1.0 / 20.0 + 1.0 / 10.0f64).sqrt();
        assert!((fit.se_slope - woolf).abs() < 1e-6);
        assert!(fit.ci95_lower <= fit.odds_ratio && fit.odds_ratio <= fit.ci95_upper);
        assert!(fit.max_abs_score < SCORE_TOLERANCE);
    }

    #[test]
    fn single_class_is_degenerate() {
        let rows: Vec<_> = (0..10).map(|i| (i as f64, true)).collect();
        assert!(matches!(fit_logistic(&rows), Err(AnalyticsError::Degenerate(_))));
    }

    #[test]
    fn constant_covariate_is_degenerate() {
        let rows = vec![(2.0, true), (2.0, false), (2.0, true)];
        assert!(matches!(fit_logistic(&rows), Err(AnalyticsError::Degenerate(_))));
    }

    #[test]
    fn separated_outcome_is_reported() {
        let rows: Vec<_> = (0..20).map(|i| (i as f64, i >= 10)).collect();
        assert!(matches!(fit_logistic(&rows), Err(AnalyticsError::Separation(_))));
    }

    #[test]
    fn uncentred_covariate_converges() {
        // Overlapping classes far from the origin.
        let rows: Vec<_> = (0..200)
            .map(|i| {
                let x = 1000.0 + (i % 50) as f64;
                (x, (i * 7919) % 13 < (i % 50) / 5)
            })
            .collect();
        let fit = fit_logistic(&rows).unwrap();
        assert!(fit.converged);
        assert!(fit.max_abs_score < SCORE_TOLERANCE);
    }
}
