//! Empirical quantiles and bootstrap percentile / pivot intervals.
//!
//! Quantiles use the left-continuous order statistic: the `alpha`-quantile of
//! `B` samples is `x_(k)` with `k = clamp(ceil(alpha * B), 1, B)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Percentile,
    Pivot,
    Clt,
}

impl CiMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CiMethod::Percentile => "percentile",
            CiMethod::Pivot => "pivot",
            CiMethod::Clt => "clt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    /// Nominal coverage `1 - alpha`.
    pub level: f64,
    pub method: CiMethod,
    pub degenerate: bool,
}

impl ConfidenceInterval {
    pub fn new(lower: f64, upper: f64, level: f64, method: CiMethod) -> Self {
        debug_assert!(lower <= upper || lower.is_nan() || upper.is_nan());
        Self { lower, upper, level, method, degenerate: lower == upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

fn check_alpha(alpha: f64, closed: bool) -> Result<()> {
    let ok = if closed { (0.0..=1.0).contains(&alpha) } else { alpha > 0.0 && alpha < 1.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha {alpha} out of range")))
    }
}

fn order_statistic_index(alpha: f64, len: usize) -> usize {
    // alpha usually arrives as 1 - level, so alpha * B can sit a few ulps
    // above an integer
    let x = alpha * len as f64;
    let k = if (x - x.round()).abs() <= 1e-9 * x.max(1.0) { x.round() } else { x.ceil() };
    (k as usize).clamp(1, len) - 1
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Left-continuous empirical `alpha`-quantile, `inf{x : F_hat(x) >= alpha}`.
pub fn empirical_quantile(samples: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha, true)?;
    let v = sorted(samples)?;
    Ok(v[order_statistic_index(alpha, v.len())])
}

fn quantile_pair(samples: &[f64], alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha, false)?;
    let v = sorted(samples)?;
    Ok((v[order_statistic_index(alpha / 2.0, v.len())], v[order_statistic_index(1.0 - alpha / 2.0, v.len())]))
}

/// `[q_{alpha/2}, q_{1-alpha/2}]`.
pub fn percentile_ci(samples: &[f64], alpha: f64) -> Result<ConfidenceInterval> {
    let (lo, hi) = quantile_pair(samples, alpha)?;
    Ok(ConfidenceInterval::new(lo, hi, 1.0 - alpha, CiMethod::Percentile))
}

/// `[2 theta_hat - q_{1-alpha/2}, 2 theta_hat - q_{alpha/2}]`.
pub fn pivot_ci(samples: &[f64], point_estimate: f64, alpha: f64) -> Result<ConfidenceInterval> {
    let (lo, hi) = quantile_pair(samples, alpha)?;
    Ok(ConfidenceInterval::new(2.0 * point_estimate - hi, 2.0 * point_estimate - lo, 1.0 - alpha, CiMethod::Pivot))
}

/// Closed-interval coverage indicator.
pub fn covers(ci: &ConfidenceInterval, truth: f64) -> bool {
    ci.lower <= truth && truth <= ci.upper
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantile_hand_cases() {
        assert_eq!(empirical_quantile(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&[10.0, 20.0, 30.0, 40.0], 0.975).unwrap(), 40.0);
        assert_eq!(empirical_quantile(&[7.0; 5], 0.3).unwrap(), 7.0);
        assert_eq!(empirical_quantile(&[1.0, 2.0], 0.0).unwrap(), 1.0);
        assert!(matches!(empirical_quantile(&[], 0.5), Err(Error::EmptySamples)));
    }

    #[test]
    fn percentile_hand_cases() {
        let samples: Vec<f64> = (1..=100).map(f64::from).collect();
        let ci = percentile_ci(&samples, 0.1).unwrap();
        assert_eq!((ci.lower, ci.upper), (5.0, 95.0));
        assert!(!ci.degenerate);
        let ci = percentile_ci(&[2.5; 10], 0.05).unwrap();
        assert!(ci.degenerate && ci.lower == 2.5);
    }

    #[test]
    fn pivot_hand_cases() {
        let ci = pivot_ci(&[4.0; 3], 4.0, 0.05).unwrap();
        assert_eq!((ci.lower, ci.upper), (4.0, 4.0));
        // q_0.025 = x_(1) = 8, q_0.975 = x_(39) = 11 with 40 samples
        let mut samples = vec![8.0; 1];
        samples.extend(std::iter::repeat_n(11.0, 38));
        samples.push(14.0);
        let ci = pivot_ci(&samples, 10.0, 0.05).unwrap();
        assert_eq!((ci.lower, ci.upper), (9.0, 12.0));
    }

    #[test]
    fn order_statistic_survives_level_roundoff() {
        let samples: Vec<f64> = (1..=1000).map(f64::from).collect();
        let ci = percentile_ci(&samples, 1.0 - 0.95).unwrap();
        assert_eq!((ci.lower, ci.upper), (25.0, 975.0));
        let ci = percentile_ci(&samples, 1.0 - 0.9).unwrap();
        assert_eq!((ci.lower, ci.upper), (50.0, 950.0));
    }

    #[test]
    fn coverage_is_closed() {
        let ci = ConfidenceInterval::new(0.0, 1.0, 0.95, CiMethod::Percentile);
        assert!(covers(&ci, 0.0));
        assert!(covers(&ci, 1.0));
        assert!(!covers(&ci, 1.0000001));
        let point = ConfidenceInterval::new(2.0, 2.0, 0.95, CiMethod::Pivot);
        assert!(covers(&point, 2.0));
    }

    #[test]
    fn mirrored_samples_pivot_close_to_percentile() {
        let half: Vec<f64> = (1..=50).map(|i| (i as f64).sqrt()).collect();
        let theta = 3.0;
        let mut samples: Vec<f64> = half.iter().map(|d| theta + d).collect();
        samples.extend(half.iter().map(|d| theta - d));
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let max_gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let perc = percentile_ci(&samples, 0.1).unwrap();
        let piv = pivot_ci(&samples, theta, 0.1).unwrap();
        assert!((perc.lower - piv.lower).abs() <= max_gap + 1e-12);
        assert!((perc.upper - piv.upper).abs() <= max_gap + 1e-12);
    }

    proptest! {
        #[test]
        fn quantile_matches_brute_force(samples in prop::collection::vec(-100.0f64..100.0, 1..40), alpha in 0.0f64..=1.0) {
            let q = empirical_quantile(&samples, alpha).unwrap();
            let n = samples.len() as f64;
            let cdf = |x: f64| samples.iter().filter(|&&y| y <= x).count() as f64 / n;
            // smallest sample value with F_hat(x) >= alpha (alpha = 0 gives the minimum)
            let brute = samples
                .iter()
                .copied()
                .filter(|&x| cdf(x) >= alpha)
                .fold(f64::INFINITY, f64::min);
            prop_assert_eq!(q, brute);
        }

        #[test]
        fn quantile_monotone(samples in prop::collection::vec(-1.0f64..1.0, 1..30), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(empirical_quantile(&samples, lo).unwrap() <= empirical_quantile(&samples, hi).unwrap());
        }

        #[test]
        fn intervals_equivariant(
            samples in prop::collection::vec(-10.0f64..10.0, 1..30),
            theta in -5.0f64..5.0,
            shift in -3.0f64..3.0,
            scale in 0.25f64..4.0,
            alpha in 0.01f64..0.99,
        ) {
            // dyadic shift/scale keep the arithmetic exact
            let shift = (shift * 8.0).round() / 8.0;
            let scale = (scale * 4.0).round() / 4.0;
            let moved: Vec<f64> = samples.iter().map(|x| x + shift).collect();
            let p0 = percentile_ci(&samples, alpha).unwrap();
            let p1 = percentile_ci(&moved, alpha).unwrap();
            prop_assert!((p1.lower - p0.lower - shift).abs() < 1e-12 && (p1.upper - p0.upper - shift).abs() < 1e-12);
            let v0 = pivot_ci(&samples, theta, alpha).unwrap();
            let v1 = pivot_ci(&moved, theta + shift, alpha).unwrap();
            prop_assert!((v1.lower - v0.lower - shift).abs() < 1e-12 && (v1.upper - v0.upper - shift).abs() < 1e-12);
            let scaled: Vec<f64> = samples.iter().map(|x| x * scale).collect();
            let p2 = percentile_ci(&scaled, alpha).unwrap();
            prop_assert!((p2.lower - p0.lower * scale).abs() < 1e-12 && (p2.upper - p0.upper * scale).abs() < 1e-12);
            let v2 = pivot_ci(&scaled, theta * scale, alpha).unwrap();
            prop_assert!((v2.lower - v0.lower * scale).abs() < 1e-12 && (v2.upper - v0.upper * scale).abs() < 1e-12);
            prop_assert!(v0.lower <= v0.upper);
        }
    }
}
