//! Welch two-sample non-inferiority testing with 90% two-sided intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Two-sided confidence level of the reported interval.
pub const CONFIDENCE: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Result<Summary> {
        if xs.len() < 2 {
            return Err(Error::Sample(format!("need at least 2 observations, got {}", xs.len())));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        Ok(Summary {
            mean,
            sd: var.sqrt(),
            n: xs.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonInfResult {
    pub mean_diff: f64,
    pub se: f64,
    pub dof: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub margin: f64,
    pub direction: Direction,
    pub non_inferior: bool,
    pub n_a: usize,
    pub n_b: usize,
    pub method: String,
}

/// Compare `a` (robot) against `b` (manual): the difference is `a − b`.
/// Element-for-element identical samples have an exactly known zero
/// difference and get a degenerate interval.
pub fn noninferiority_test(a: &[f64], b: &[f64], margin: f64, direction: Direction) -> Result<NonInfResult> {
    let (sa, sb) = (Summary::of(a)?, Summary::of(b)?);
    if a == b {
        let zero = Summary { mean: sa.mean, sd: 0.0, n: sa.n };
        let mut r = noninferiority_from_summary(zero, zero, margin, direction)?;
        r.method = "identical samples: zero difference".into();
        return Ok(r);
    }
    noninferiority_from_summary(sa, sb, margin, direction)
}

pub fn noninferiority_from_summary(a: Summary, b: Summary, margin: f64, direction: Direction) -> Result<NonInfResult> {
    if a.n < 2 || b.n < 2 {
        return Err(Error::Sample(format!("need n ≥ 2 per arm, got {} and {}", a.n, b.n)));
    }
    if !(margin > 0.0) {
        return Err(Error::Input(format!("margin must be positive, got {margin}")));
    }
    let (na, nb) = (a.n as f64, b.n as f64);
    let (qa, qb) = (a.sd * a.sd / na, b.sd * b.sd / nb);
    let se = (qa + qb).sqrt();
    let diff = a.mean - b.mean;
    let method = "Welch two-sample t, 90% two-sided CI".to_string();

    if se == 0.0 {
        let inside = match direction {
            Direction::LowerBetter => diff < margin,
            Direction::HigherBetter => diff > -margin,
        };
        return Ok(NonInfResult {
            mean_diff: diff,
            se,
            dof: na + nb - 2.0,
            ci_low: diff,
            ci_high: diff,
            p_value: if inside { 0.0 } else { 1.0 },
            margin,
            direction,
            non_inferior: inside,
            n_a: a.n,
            n_b: b.n,
            method,
        });
    }

    let dof = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Sample(e.to_string()))?;
    let crit = t.inverse_cdf(0.5 + CONFIDENCE / 2.0);
    let (ci_low, ci_high) = (diff - crit * se, diff + crit * se);
    let (non_inferior, p_value) = match direction {
        Direction::LowerBetter => (ci_high < margin, t.cdf((diff - margin) / se)),
        Direction::HigherBetter => (ci_low > -margin, 1.0 - t.cdf((diff + margin) / se)),
    };
    Ok(NonInfResult {
        mean_diff: diff,
        se,
        dof,
        ci_low,
        ci_high,
        p_value,
        margin,
        direction,
        non_inferior,
        n_a: a.n,
        n_b: b.n,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn s(mean: f64, sd: f64) -> Summary {
        Summary { mean, sd, n: 30 }
    }

    #[test]
    fn identical_samples() {
        let x = [1.0, 2.0, 3.0, 4.5];
        for d in [Direction::LowerBetter, Direction::HigherBetter] {
            let r = noninferiority_test(&x, &x, 0.1, d).unwrap();
            assert_eq!(r.mean_diff, 0.0);
            assert!(r.non_inferior);
        }
    }

    #[test]
    fn force_summary() {
        let r = noninferiority_from_summary(s(10.48, 2.72), s(9.52, 1.02), 2.0, Direction::LowerBetter).unwrap();
        assert_abs_diff_eq!(r.mean_diff, 0.96, epsilon = 1e-12);
        assert_abs_diff_eq!(r.se, 0.530_4, epsilon = 1e-4);
        assert!((r.ci_high - 1.86).abs() < 0.01, "ci_high {}", r.ci_high);
        assert!(r.non_inferior);
        assert!(r.p_value < 0.05);
    }

    #[test]
    fn score_and_cnr_summaries() {
        let r = noninferiority_from_summary(s(7.85, 1.54), s(8.21, 1.04), 2.0, Direction::HigherBetter).unwrap();
        assert!(r.non_inferior && r.ci_low > -2.0);
        let r = noninferiority_from_summary(s(4.38, 0.95), s(4.48, 0.70), 0.5, Direction::HigherBetter).unwrap();
        assert!(r.non_inferior, "ci_low {}", r.ci_low);
    }

    #[test]
    fn duration_is_inferior() {
        let r = noninferiority_from_summary(s(27.5, 5.4), s(18.2, 3.2), 5.0, Direction::LowerBetter).unwrap();
        assert!(!r.non_inferior);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(noninferiority_test(&[1.0], &[1.0, 2.0], 1.0, Direction::LowerBetter), Err(Error::Sample(_))));
        assert!(matches!(noninferiority_test(&[1.0, 2.0], &[1.0, 2.0], 0.0, Direction::LowerBetter), Err(Error::Input(_))));
        let r = noninferiority_test(&[3.0, 3.0], &[1.0, 1.0], 1.0, Direction::LowerBetter).unwrap();
        assert_eq!((r.ci_low, r.ci_high), (2.0, 2.0));
        assert!(!r.non_inferior);
    }

    /// Welch interval against a brute-force percentile bootstrap of the mean
    /// difference.
    #[test]
    fn agrees_with_bootstrap() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        use rand_distr::{Distribution, Normal};

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cases = 200;
        let mut agree = 0;
        for _ in 0..cases {
            let (na, nb) = (rng.random_range(10..30), rng.random_range(10..30));
            let da = Normal::new(rng.random_range(-1.0..1.0), rng.random_range(0.5..3.0)).unwrap();
            let db = Normal::new(0.0, rng.random_range(0.5..3.0)).unwrap();
            let a: Vec<f64> = (0..na).map(|_| da.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..nb).map(|_| db.sample(&mut rng)).collect();
            let margin = rng.random_range(0.25..3.0);
            let r = noninferiority_test(&a, &b, margin, Direction::LowerBetter).unwrap();

            let mut diffs: Vec<f64> = (0..10_000)
                .map(|_| {
                    let ma = (0..na).map(|_| a[rng.random_range(0..na)]).sum::<f64>() / na as f64;
                    let mb = (0..nb).map(|_| b[rng.random_range(0..nb)]).sum::<f64>() / nb as f64;
                    ma - mb
                })
                .collect();
            diffs.sort_by(f64::total_cmp);
            let hi = diffs[(0.95 * diffs.len() as f64) as usize];
            if (hi < margin) == r.non_inferior {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.95 * cases as f64, "agreement {agree}/{cases}");
    }

    proptest! {
        #[test]
        fn swap_and_scale(a in proptest::collection::vec(-10.0..10.0f64, 3..12),
                          b in proptest::collection::vec(-10.0..10.0f64, 3..12),
                          c in 0.1..10.0f64) {
            let r = noninferiority_test(&a, &b, 1.0, Direction::LowerBetter).unwrap();
            let w = noninferiority_test(&b, &a, 1.0, Direction::LowerBetter).unwrap();
            prop_assert!((r.mean_diff + w.mean_diff).abs() < 1e-12);
            prop_assert!((r.ci_low + w.ci_high).abs() < 1e-9);
            prop_assert!((r.ci_high + w.ci_low).abs() < 1e-9);
            let sa: Vec<f64> = a.iter().map(|x| x * c).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * c).collect();
            let k = noninferiority_test(&sa, &sb, 1.0, Direction::LowerBetter).unwrap();
            let tol = 1e-9 * (1.0 + r.se.abs() * c);
            prop_assert!((k.mean_diff - c * r.mean_diff).abs() < tol * 10.0);
            prop_assert!((k.se - c * r.se).abs() < tol);
            prop_assert!((k.ci_low - c * r.ci_low).abs() < tol * 10.0);
            prop_assert!((k.ci_high - c * r.ci_high).abs() < tol * 10.0);
            prop_assert!(r.ci_low <= r.mean_diff && r.mean_diff <= r.ci_high);
        }
    }
}
