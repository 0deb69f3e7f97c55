//! Small deterministic statistics: bounded means, Pearson correlation and
//! five-number summaries.

use alloc::vec::Vec;

/// Arithmetic mean, clamped into `[min, max]` of the inputs so floating-point
/// rounding can never push it outside the sample range. `None` when empty.
pub fn bounded_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Some((sum / values.len() as f64).clamp(lo, hi))
}

/// Rounds halves toward positive infinity.
pub fn round_half_up(x: f64) -> f64 {
    libm::floor(x + 0.5)
}

/// Rounds to `decimals` places, halves away from zero.
pub fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = libm::pow(10.0, f64::from(decimals));
    libm::round(x * scale) / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CorrelationError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("correlation is undefined: a series has zero variance")]
    ZeroVariance,
    #[error("series contain a non-finite value")]
    NonFinite,
}

/// Pearson product-moment correlation.
///
/// Means and co-moments are accumulated in a single streaming pass, which
/// stays accurate for series with large offsets. Constant series are an
/// error rather than NaN.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    if x.len() != y.len() {
        return Err(CorrelationError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(CorrelationError::TooFewPoints(x.len()));
    }
    let (mut mean_x, mut mean_y) = (0.0, 0.0);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (k, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        if !xi.is_finite() || !yi.is_finite() {
            return Err(CorrelationError::NonFinite);
        }
        let n = (k + 1) as f64;
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        mean_x += dx / n;
        mean_y += dy / n;
        // Uses the pre-update deviation of one series and the post-update
        // deviation of the other.
        sxx += dx * (xi - mean_x);
        syy += dy * (yi - mean_y);
        sxy += dx * (yi - mean_y);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(CorrelationError::ZeroVariance);
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Minimum, quartiles, median and maximum of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub n: usize,
}

impl FiveNumber {
    /// Quartiles interpolate linearly between order statistics at rank
    /// `p * (n - 1)`. `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<FiveNumber> {
        if values.is_empty() {
            return None;
        }
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let rank = p * (sorted.len() - 1) as f64;
            let lo = libm::floor(rank) as usize;
            let hi = (lo + 1).min(sorted.len() - 1);
            let frac = rank - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        };
        Some(FiveNumber {
            min: sorted[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: sorted[sorted.len() - 1],
            n: sorted.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    // Two-pass textbook formula, kept separate from the streaming one.
    fn pearson_two_pass(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut dx2 = 0.0;
        let mut dy2 = 0.0;
        for (a, b) in x.iter().zip(y) {
            num += (a - mx) * (b - my);
            dx2 += (a - mx) * (a - mx);
            dy2 += (b - my) * (b - my);
        }
        num / (dx2 * dy2).sqrt()
    }

    #[test]
    fn exact_linear_relations() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn error_cases() {
        assert_eq!(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(CorrelationError::LengthMismatch(3, 2))
        );
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(CorrelationError::TooFewPoints(2)));
        assert_eq!(
            pearson(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]),
            Err(CorrelationError::ZeroVariance)
        );
        assert_eq!(
            pearson(&[1.0, f64::NAN, 3.0], &[1.0, 2.0, 3.0]),
            Err(CorrelationError::NonFinite)
        );
    }

    #[test]
    fn bounded_mean_stays_in_range() {
        assert_eq!(bounded_mean(&[1.0, 2.0, 3.0]), Some(2.0));
        assert_eq!(bounded_mean(&[0.1, 0.1, 0.1]), Some(0.1));
        assert_eq!(bounded_mean(&[]), None);
    }

    #[test]
    fn rounding() {
        assert_eq!(round_half_up(2.5), 3.0);
        assert_eq!(round_half_up(2.4999), 2.0);
        assert_eq!(round_to(0.9405, 3), 0.941);
        assert_eq!(round_to(941.0 / 1000.0, 3), 0.941);
    }

    #[test]
    fn five_number_interpolates() {
        let f = FiveNumber::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((f.min, f.q1, f.median, f.q3, f.max, f.n), (1.0, 2.0, 3.0, 4.0, 5.0, 5));
        let f = FiveNumber::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((f.q1, f.median, f.q3), (1.75, 2.5, 3.25));
        let f = FiveNumber::of(&[7.0]).unwrap();
        assert_eq!((f.min, f.q1, f.median, f.q3, f.max), (7.0, 7.0, 7.0, 7.0, 7.0));
        assert!(FiveNumber::of(&[]).is_none());
    }

    proptest! {
        #[test]
        fn streaming_matches_two_pass(
            pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..200)
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Ok(r) = pearson(&x, &y) {
                prop_assert!((r - pearson_two_pass(&x, &y)).abs() < 1e-12);
            }
        }

        #[test]
        fn positive_affine_invariance(
            pairs in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0), 3..100),
            a in 0.01f64..100.0,
            b in -1e3f64..1e3,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let Ok(r) = pearson(&x, &y) else { return Ok(()); };
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson(&scaled, &y).unwrap() - r).abs() < 1e-12);
            let flipped: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&flipped, &y).unwrap() + r).abs() < 1e-12);
        }

        #[test]
        fn five_number_is_ordered(values in proptest::collection::vec(-1e6f64..1e6, 1..50)) {
            let f = FiveNumber::of(&values).unwrap();
            prop_assert!(f.min <= f.q1 && f.q1 <= f.median && f.median <= f.q3 && f.q3 <= f.max);
            prop_assert_eq!(f.n, values.len());
        }
    }

    #[test]
    fn large_offsets_do_not_destabilise() {
        let x = vec![1e9 + 1.0, 1e9 + 2.0, 1e9 + 3.0, 1e9 + 4.0];
        let y = vec![2.0, 4.0, 6.0, 8.5];
        let r = pearson(&x, &y).unwrap();
        let r0 = pearson(&[1.0, 2.0, 3.0, 4.0], &y).unwrap();
        assert!((r - r0).abs() < 1e-12);
    }
}
