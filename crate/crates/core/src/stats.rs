//! Sampling statistics: moment summaries, Kolmogorov-Smirnov distances and
//! reference distribution functions.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Mean, variance and standard error of a sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Standard error of the mean.
    pub std_error: f64,
}

/// Summarize a sample; requires at least two observations for a variance.
pub fn summarize(xs: &[f64]) -> SampleSummary {
    let n = xs.len();
    assert!(n >= 2, "need at least two observations");
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let variance = ss / (n as f64 - 1.0);
    SampleSummary {
        n,
        mean,
        variance,
        std_error: (variance / n as f64).sqrt(),
    }
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    // Unit normal construction cannot fail.
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and
/// the continuous CDF `cdf`.  Sorts a copy of the sample and takes the
/// larger one-sided deviation at each jump of the empirical CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    assert!(!samples.is_empty(), "empty sample");
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample"));
    let n = sorted.len() as f64;
    let mut dist = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let upper = ((i + 1) as f64 / n - f).abs();
        let lower = (f - i as f64 / n).abs();
        dist = dist.max(upper).max(lower);
    }
    dist
}

/// Upper `alpha` critical value of the chi-squared law with `df` degrees of
/// freedom.
pub fn chi_squared_critical(df: usize, alpha: f64) -> f64 {
    ChiSquared::new(df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - alpha)
}

/// Pearson chi-squared statistic of observed counts against expected counts.
/// Bins with expected count below `min_expected` are pooled into their right
/// neighbor (the final bin pools leftward).  Returns the statistic and the
/// number of bins after pooling.
pub fn chi_squared_statistic(observed: &[f64], expected: &[f64], min_expected: f64) -> (f64, usize) {
    assert_eq!(observed.len(), expected.len());
    let mut stat = 0.0;
    let mut bins = 0usize;
    let mut obs_acc = 0.0;
    let mut exp_acc = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        obs_acc += o;
        exp_acc += e;
        if exp_acc >= min_expected {
            stat += (obs_acc - exp_acc) * (obs_acc - exp_acc) / exp_acc;
            bins += 1;
            obs_acc = 0.0;
            exp_acc = 0.0;
        }
    }
    if exp_acc > 0.0 {
        if bins > 0 {
            // Fold the remainder into the last closed bin.
            stat += (obs_acc - exp_acc) * (obs_acc - exp_acc) / exp_acc;
        } else {
            stat = (obs_acc - exp_acc) * (obs_acc - exp_acc) / exp_acc;
            bins = 1;
        }
    }
    (stat, bins.max(1))
}
