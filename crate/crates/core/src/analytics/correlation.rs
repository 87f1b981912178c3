use super::AnalyticsError;

/// 1-based ranks with ties sharing their average rank.
pub fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), AnalyticsError> {
    if x.len() != y.len() {
        return Err(AnalyticsError::Domain(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(AnalyticsError::Domain(format!(
            "correlation needs at least 3 pairs, got {}",
            x.len()
        )));
    }
    Ok(())
}

pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64, AnalyticsError> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalyticsError::Undefined("a variable has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of mid-ranks.
pub fn spearman_correlation(x: &[f64], y: &[f64]) -> Result<f64, AnalyticsError> {
    check_pair(x, y)?;
    pearson_correlation(&mid_ranks(x), &mid_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_and_antitone() {
        let x = [1.0, 2.0, 5.0, 9.0];
        assert!((spearman_correlation(&x, &[0.1, 0.2, 7.0, 80.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman_correlation(&x, &[4.0, 3.0, 2.0, -1.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_example() {
        // d = (1, -1, 1, -1), rho = 1 − 6·4 / (4·15) = 0.6.
        let rho = spearman_correlation(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((rho - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn errors() {
        assert!(spearman_correlation(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(spearman_correlation(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(matches!(
            spearman_correlation(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(AnalyticsError::Undefined(_))
        ));
    }
}
