//! Rank statistics: average ranks with ties and Spearman correlation.

use crate::{Error, Result};

/// Average (fractional) ranks, 1-based; tied values share the mean of the
/// positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // positions i..=j are a tie group; mean 1-based rank
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(u: &[f64], v: &[f64]) -> Option<f64> {
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let mut suu = 0.0;
    let mut svv = 0.0;
    let mut suv = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        suu += (a - mu) * (a - mu);
        svv += (b - mv) * (b - mv);
        suv += (a - mu) * (b - mv);
    }
    if suu == 0.0 || svv == 0.0 {
        return None;
    }
    // Single sqrt keeps identical rank vectors at exactly +/-1: the product
    // of equal sums is a perfect square and IEEE sqrt recovers it exactly.
    Some((suv / (suu * svv).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average-rank tie handling.
///
/// A constant input vector has degenerate ranks and is reported as an error
/// rather than silently returning 0.
pub fn spearman(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 pairs".into()));
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let ru = average_ranks(u);
    let rv = average_ranks(v);
    pearson(&ru, &rv).ok_or(Error::DegenerateRanks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tied_values_share_average_rank() {
        // Frozen oracle: [1, 2, 2, 3] -> ranks [1, 2.5, 2.5, 4].
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        // All tied -> everyone gets the middle rank.
        assert_eq!(average_ranks(&[7.0, 7.0, 7.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn perfect_agreement_is_exactly_one() {
        let u = [0.3, 1.2, -0.5, 2.0, 0.9];
        assert_eq!(spearman(&u, &u).unwrap(), 1.0);
    }

    #[test]
    fn perfect_reversal_is_exactly_minus_one() {
        let u = [0.3, 1.2, -0.5, 2.0, 0.9];
        let v: Vec<f64> = u.iter().map(|x| -x).collect();
        assert_eq!(spearman(&u, &v).unwrap(), -1.0);
    }

    #[test]
    fn monotone_transform_preserves_rho() {
        let u = [0.1f64, 0.7, 0.3, 2.5, 1.1];
        let v: Vec<f64> = u.iter().map(|x| x.exp()).collect();
        assert_eq!(spearman(&u, &v).unwrap(), 1.0);
    }

    #[test]
    fn constant_vector_is_degenerate() {
        let u = [1.0, 1.0, 1.0];
        let v = [0.0, 1.0, 2.0];
        assert!(matches!(spearman(&u, &v), Err(Error::DegenerateRanks)));
        assert!(matches!(spearman(&v, &u), Err(Error::DegenerateRanks)));
    }

    #[test]
    fn mismatched_or_tiny_inputs_rejected() {
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn known_value_with_ties() {
        // Independent hand computation: u ranks [1, 2.5, 2.5, 4],
        // v ranks [2, 1, 3, 4]; Pearson of those = 2/sqrt(10).
        let u = [10.0, 20.0, 20.0, 30.0];
        let v = [5.0, 1.0, 7.0, 9.0];
        let rho = spearman(&u, &v).unwrap();
        assert!((rho - 0.632_455_532_033_675_9).abs() < 1e-12, "rho={rho}");
    }
}
