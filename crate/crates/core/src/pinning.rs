//! Partition functions and free energies of the pinned renewal.
//!
//! The quenched model rewards each contact n with exp(beta omega_n + h -
//! log M(beta)). Partition functions are computed exactly by a forward
//! recursion over the contact set; free energies, fractional moments, and
//! the phase-diagram probes (annealed identity, monotonicity in beta, the
//! finite-size critical-point proxy) are Monte Carlo averages over disorder
//! replicas driven by per-replica generators.

use rayon::prelude::*;

use crate::disorder::DisorderSpec;
use crate::numeric::{bisect_root, LogSumAcc};
use crate::renewal::RenewalModel;
use crate::seeds::derive_rng;
use crate::stats::summarize;
use crate::{Error, Result};

/// A renewal pinned by a charge sequence at inverse temperature beta and
/// pinning reward h.
///
/// The model borrows its contact law; systems at different couplings share
/// one renewal table.
#[derive(Debug, Clone)]
pub struct PinningSystem<'a> {
    renewal: &'a RenewalModel,
    disorder: DisorderSpec,
    beta: f64,
    h: f64,
    /// Cached log M(beta), subtracted from every contact weight.
    log_mgf_beta: f64,
}

/// Monte Carlo estimate of a free energy, with the sampling resolution
/// needed to interpret it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeEnergyEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
    pub replicas: usize,
}

/// Monte Carlo estimate of a fractional moment E[Z^gamma].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalMomentEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub gamma: f64,
    pub n: usize,
    pub replicas: usize,
}

/// One row of a monotonicity scan.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicityRow {
    pub beta: f64,
    pub estimate: FreeEnergyEstimate,
}

/// A flagged increase between adjacent grid points of a monotonicity scan.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicityViolation {
    pub lower_beta: f64,
    pub upper_beta: f64,
    /// Observed increase of the estimate, in absolute units.
    pub increase: f64,
    /// Twice the pooled standard error the increase was measured against.
    pub allowance: f64,
}

/// Free-energy estimates along a beta grid at fixed h, with any increases
/// that exceed the noise allowance.
#[derive(Debug, Clone)]
pub struct MonotonicityTable {
    pub rows: Vec<MonotonicityRow>,
    pub violations: Vec<MonotonicityViolation>,
}

impl MonotonicityTable {
    pub fn is_monotone_within_noise(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Finite-size localization proxy for one system size.
#[derive(Debug, Clone, Copy)]
pub struct CriticalShiftRow {
    pub n: usize,
    /// Smallest grid h whose free-energy estimate clears the threshold by
    /// three standard errors. An upper proxy for the critical point: it
    /// decreases toward it as n grows and the threshold shrinks.
    pub h_proxy: f64,
    pub estimate_at_proxy: FreeEnergyEstimate,
    pub threshold: f64,
}

impl<'a> PinningSystem<'a> {
    pub fn new(
        renewal: &'a RenewalModel,
        disorder: DisorderSpec,
        beta: f64,
        h: f64,
    ) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::OutOfRange {
                what: "inverse temperature",
                value: beta,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        if !h.is_finite() {
            return Err(Error::Construction(format!("pinning reward must be finite, got {h}")));
        }
        let log_mgf_beta = disorder.log_mgf(beta)?;
        Ok(Self { renewal, disorder, beta, h, log_mgf_beta })
    }

    pub fn renewal(&self) -> &RenewalModel {
        self.renewal
    }

    pub fn disorder(&self) -> &DisorderSpec {
        &self.disorder
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// log of the contact weight z_n = exp(beta omega_n + h - log M(beta)).
    pub fn log_weight(&self, omega_n: f64) -> f64 {
        self.beta * omega_n + self.h - self.log_mgf_beta
    }

    /// log Z_{m,n}: the renewal pinned at m and conditioned to touch n, with
    /// every contact in (m, n] collecting its weight.
    ///
    /// Forward recursion over the last-contact position, entirely in the log
    /// domain; the inner sums carry a running maximum so no intermediate
    /// value can overflow or vanish. Charges are 1-based: omega[i - 1] is
    /// the charge at site i.
    pub fn log_partition(&self, omega: &[f64], m: usize, n: usize) -> Result<f64> {
        if m > n {
            return Err(Error::Construction(format!(
                "partition window is inverted: m = {m} > n = {n}"
            )));
        }
        if n > omega.len() {
            return Err(Error::OutOfRange {
                what: "partition endpoint beyond charge array",
                value: n as f64,
                min: 0.0,
                max: omega.len() as f64,
            });
        }
        let span = n - m;
        if span > self.renewal.n_max() {
            return Err(Error::OutOfRange {
                what: "partition span beyond contact-law table",
                value: span as f64,
                min: 0.0,
                max: self.renewal.n_max() as f64,
            });
        }
        if span == 0 {
            return Ok(0.0);
        }
        let mut log_w = vec![f64::NEG_INFINITY; span + 1];
        log_w[0] = 0.0;
        for j in 1..=span {
            let mut acc = LogSumAcc::new();
            for i in 0..j {
                acc.push(log_w[i] + self.renewal.log_k(j - i));
            }
            log_w[j] = acc.value() + self.log_weight(omega[m + j - 1]);
        }
        Ok(log_w[span])
    }

    /// Mean and standard error of (1/n) log Z_{0,n} over IID disorder
    /// replicas.
    ///
    /// Replica i draws its charges from a generator keyed by (seed, i), so
    /// two scans run with the same seed see identical charge realizations
    /// regardless of beta and h; grids built this way are coupled by common
    /// random numbers.
    pub fn quenched_free_energy(
        &self,
        n: usize,
        replicas: usize,
        seed: u64,
    ) -> Result<FreeEnergyEstimate> {
        if replicas < 2 {
            return Err(Error::Construction(format!(
                "at least two replicas are needed for a standard error, got {replicas}"
            )));
        }
        let values = self.log_partition_replicas(n, replicas, seed)?;
        let scaled: Vec<f64> = values.iter().map(|v| v / n as f64).collect();
        let summary = summarize(&scaled);
        Ok(FreeEnergyEstimate {
            value: summary.mean,
            std_error: summary.std_error,
            n,
            replicas,
        })
    }

    /// log Z_{0,n} for each replica, in replica order.
    fn log_partition_replicas(&self, n: usize, replicas: usize, seed: u64) -> Result<Vec<f64>> {
        (0..replicas as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = derive_rng(seed, "quenched-replica", i);
                let omega = self.disorder.sample_iid(n, &mut rng);
                self.log_partition(&omega, 0, n)
            })
            .collect()
    }

    /// z-score of the replica average of Z_{0,n} against the exact annealed
    /// value, which is the beta = 0 partition function at the same h.
    ///
    /// Zero spread (for instance at beta = 0, where every replica computes
    /// the same number) yields a zero score rather than a division by zero.
    pub fn annealed_identity_check(&self, n: usize, replicas: usize, seed: u64) -> Result<f64> {
        if replicas < 2 {
            return Err(Error::Construction(format!(
                "at least two replicas are needed for a z-score, got {replicas}"
            )));
        }
        let annealed_sys =
            PinningSystem::new(self.renewal, self.disorder.clone(), 0.0, self.h)?;
        let zeros = vec![0.0; n];
        let log_annealed = annealed_sys.log_partition(&zeros, 0, n)?;
        let values = self.log_partition_replicas(n, replicas, seed)?;
        // Work relative to the annealed value so the linear-domain average
        // is O(1) no matter how small Z itself is.
        let ratios: Vec<f64> = values.iter().map(|v| (v - log_annealed).exp()).collect();
        let summary = summarize(&ratios);
        if summary.std_error == 0.0 {
            return Ok(0.0);
        }
        Ok((summary.mean - 1.0) / summary.std_error)
    }

    /// Monte Carlo estimate of the fractional moment E[Z_{0,n}^gamma].
    pub fn fractional_moment(
        &self,
        gamma: f64,
        n: usize,
        replicas: usize,
        seed: u64,
    ) -> Result<FractionalMomentEstimate> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::OutOfRange {
                what: "fractional-moment exponent",
                value: gamma,
                min: 0.0,
                max: 1.0,
            });
        }
        if replicas < 2 {
            return Err(Error::Construction(format!(
                "at least two replicas are needed for a standard error, got {replicas}"
            )));
        }
        let values = self.log_partition_replicas(n, replicas, seed)?;
        let powers: Vec<f64> = values.iter().map(|v| (gamma * v).exp()).collect();
        let summary = summarize(&powers);
        Ok(FractionalMomentEstimate {
            estimate: summary.mean,
            std_error: summary.std_error,
            gamma,
            n,
            replicas,
        })
    }
}

/// Free energy of the disorder-free model: 0 for h <= 0, otherwise the
/// unique b > 0 with sum_n K(n) exp(-b n) = exp(-h).
///
/// The Laplace transform of K is evaluated from the stored table plus an
/// analytic correction for the truncated tail; without the correction the
/// small-h critical behavior would be dominated by truncation bias.
pub fn pure_free_energy(model: &RenewalModel, h: f64) -> Result<f64> {
    if h <= 0.0 {
        return Ok(0.0);
    }
    let target = -h;
    let residual = |b: f64| log_laplace_k(model, b) - target;
    // K sums to one, so the transform at 0 is 1 and at h it is at most
    // exp(-h): the root is bracketed by [0, h].
    let b = bisect_root(&residual, 0.0, h, 1e-12);
    let achieved = residual(b);
    if achieved.abs() > 1e-6 {
        return Err(Error::Precision(format!(
            "Laplace inversion at h = {h} left residual {achieved:.3e}"
        )));
    }
    Ok(b)
}

/// log of sum_{n >= 1} K(n) exp(-b n), combining the stored range with an
/// integral correction for the tail beyond the table.
fn log_laplace_k(model: &RenewalModel, b: f64) -> f64 {
    let mut acc = LogSumAcc::new();
    for n in 1..=model.n_max() {
        acc.push(model.log_k(n) - b * n as f64);
    }
    let head = acc.value();
    let tail = laplace_tail(model, b);
    if tail <= 0.0 {
        return head;
    }
    // head is the log of a sum <= 1; fold the linear-domain tail in without
    // leaving the log domain.
    head + (tail * (-head).exp()).ln_1p()
}

/// Euler-Maclaurin value of sum_{n > n_max} K(n) exp(-b n).
///
/// The summand is smooth and decaying, so the integral from n_max + 1/2
/// onward, evaluated after the substitution x = e^t, captures the sum with
/// an error far below the bisection tolerance. Once b x exceeds the
/// underflow range the tail is exactly zero in double precision.
fn laplace_tail(model: &RenewalModel, b: f64) -> f64 {
    let start = model.n_max() as f64 + 0.5;
    if b * start > 700.0 {
        return 0.0;
    }
    let alpha = model.alpha();
    let norm = model.normalizer();
    let spec = model.l_spec();
    let integrand = |t: f64| {
        let x = t.exp();
        let l = spec.eval_l(x).unwrap_or(0.0);
        // K(x) x = L(x) x^{-alpha} / norm, times the Laplace factor.
        l * (-alpha * t - b * x).exp() / norm
    };
    let t0 = start.ln();
    // The factor exp(-b e^t) dies once b e^t is large; integrate to the
    // later of the polynomial and exponential cutoffs.
    let poly_cut = if alpha > 0.0 { t0 + 60.0 / alpha } else { t0 + 80.0 };
    let exp_cut = if b > 0.0 { (700.0 / b).ln() } else { f64::INFINITY };
    let t1 = poly_cut.min(exp_cut.max(t0 + 1.0));
    crate::numeric::adaptive_simpson(&integrand, t0, t1, 1e-10)
}

/// Quenched free-energy estimates along a beta grid at fixed h, coupled by
/// common charges, with any increase beyond twice the pooled standard error
/// flagged.
pub fn monotonicity_scan(
    model: &RenewalModel,
    disorder: &DisorderSpec,
    h: f64,
    betas: &[f64],
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<MonotonicityTable> {
    if betas.is_empty() {
        return Err(Error::Construction("beta grid is empty".to_string()));
    }
    if betas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Construction(
            "beta grid must be strictly increasing".to_string(),
        ));
    }
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let sys = PinningSystem::new(model, disorder.clone(), beta, h)?;
        let estimate = sys.quenched_free_energy(n, replicas, seed)?;
        rows.push(MonotonicityRow { beta, estimate });
    }
    let mut violations = Vec::new();
    for pair in rows.windows(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        let increase = hi.estimate.value - lo.estimate.value;
        let pooled = (lo.estimate.std_error.powi(2) + hi.estimate.std_error.powi(2)).sqrt();
        let allowance = 2.0 * pooled;
        if increase > allowance {
            violations.push(MonotonicityViolation {
                lower_beta: lo.beta,
                upper_beta: hi.beta,
                increase,
                allowance,
            });
        }
    }
    Ok(MonotonicityTable { rows, violations })
}

/// Finite-size critical-point proxies: for each system size, the smallest
/// grid h whose quenched estimate clears the detection threshold by three
/// standard errors.
///
/// A `None` threshold defaults to five times the pooled standard error over
/// the grid, which trades an upward bias for control of false detections.
/// The proxy needs the grid to straddle the detection boundary: a grid that
/// never clears the threshold, or clears it already at its first point,
/// cannot bracket and is reported as such.
pub fn critical_h_scan(
    model: &RenewalModel,
    disorder: &DisorderSpec,
    beta: f64,
    n_list: &[usize],
    h_grid: &[f64],
    replicas: usize,
    threshold: Option<f64>,
    seed: u64,
) -> Result<Vec<CriticalShiftRow>> {
    if h_grid.len() < 2 {
        return Err(Error::Construction(
            "critical-point scan needs at least two grid values".to_string(),
        ));
    }
    if h_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Construction("h grid must be strictly increasing".to_string()));
    }
    if let Some(t) = threshold {
        if !(t > 0.0) {
            return Err(Error::OutOfRange {
                what: "detection threshold",
                value: t,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
    }
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut estimates = Vec::with_capacity(h_grid.len());
        for &h in h_grid {
            let sys = PinningSystem::new(model, disorder.clone(), beta, h)?;
            estimates.push(sys.quenched_free_energy(n, replicas, seed)?);
        }
        let threshold = threshold.unwrap_or_else(|| {
            let pooled = estimates.iter().map(|e| e.std_error.powi(2)).sum::<f64>()
                / estimates.len() as f64;
            (5.0 * pooled.sqrt()).max(1e-12)
        });
        let hit = estimates
            .iter()
            .position(|e| e.value - 3.0 * e.std_error > threshold);
        match hit {
            None => {
                return Err(Error::Bracketing(format!(
                    "no grid h reaches the detection threshold {threshold:.3e} at n = {n}"
                )))
            }
            Some(0) => {
                return Err(Error::Bracketing(format!(
                    "already localized at the leftmost grid point h = {} for n = {n}",
                    h_grid[0]
                )))
            }
            Some(idx) => out.push(CriticalShiftRow {
                n,
                h_proxy: h_grid[idx],
                estimate_at_proxy: estimates[idx],
                threshold,
            }),
        }
    }
    Ok(out)
}
