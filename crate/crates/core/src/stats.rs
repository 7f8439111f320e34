//! Sample statistics for comparing policies across replications.

use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two
/// values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn std_err(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    std_dev(xs) / (xs.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub std_err: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Two-sided Student-t confidence interval for the mean of `xs`.
pub fn confidence_interval(xs: &[f64], level: f64) -> Interval {
    let m = mean(xs);
    let se = std_err(xs);
    let half = if xs.len() < 2 || se == 0.0 {
        0.0
    } else {
        let t = StudentsT::new(0.0, 1.0, (xs.len() - 1) as f64).expect("at least one degree of freedom");
        t.inverse_cdf(0.5 + level / 2.0) * se
    };
    Interval { mean: m, std_err: se, lo: m - half, hi: m + half }
}

/// Interval for the mean of `a[r] − b[r]`, replications paired by index.
pub fn paired_difference(a: &[f64], b: &[f64], level: f64) -> Interval {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    confidence_interval(&d, level)
}

/// Standard error of a difference of two independent means.
pub fn pooled_std_err(a: &[f64], b: &[f64]) -> f64 {
    (std_err(a).powi(2) + std_err(b).powi(2)).sqrt()
}
