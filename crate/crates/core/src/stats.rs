//! Small statistics helpers for multi-seed comparisons.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

/// Paired t-test of `a − b`. Needs at least two pairs.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<PairedTTest> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, s) = (mean(&d), std_dev(&d));
    let df = (d.len() - 1) as f64;
    let t = if s == 0.0 {
        if m == 0.0 {
            0.0
        } else {
            m.signum() * f64::INFINITY
        }
    } else {
        m / (s / (d.len() as f64).sqrt())
    };
    let p_value = if t.is_infinite() {
        0.0
    } else {
        2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).ok()?.cdf(t.abs()))
    };
    Some(PairedTTest {
        mean_diff: m,
        t,
        df,
        p_value,
    })
}
