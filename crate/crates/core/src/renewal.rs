//! Discrete renewal processes with regularly varying inter-arrival laws.
//!
//! The inter-arrival law is K(n) = L(n) / (Z n^{1+alpha}) on 1..N_max with
//! the mass beyond N_max estimated by integral bounds; the renewal mass
//! function u(n) = P(n in tau) comes from the exact convolution recursion.
//! Samplers draw unconditioned paths and pinned bridges, and the module
//! checks the polynomial renewal-density asymptotics and the local-time
//! scaling law at exponent 1/2.

use rand::Rng;

use crate::numeric::{adaptive_simpson, kahan_sum};
use crate::slowvar::{build_envelope, EnvelopeTable, SlowKind, SlowlyVaryingSpec};
use crate::stats::normal_cdf;
use crate::{Error, Result};

/// A renewal process truncated at horizon N_max.
///
/// `k[n]` for n in 1..=N_max carries the normalized inter-arrival
/// probabilities without the tail lump; the sampler's cumulative table
/// folds `tail_mass` into the last entry so gap draws stay normalized.
/// The envelope is built from the slowly varying factor of the normalized
/// law, so renewal-density bounds carry the right constants.
#[derive(Debug, Clone)]
pub struct RenewalModel {
    alpha: f64,
    l: SlowlyVaryingSpec,
    n_max: usize,
    /// K(1..=N_max) at offset n-1.
    k: Vec<f64>,
    log_k: Vec<f64>,
    tail_mass: f64,
    /// u(0..=N_max).
    u: Vec<f64>,
    env: EnvelopeTable,
    /// Cumulative sampling law with the tail folded into the last gap.
    cdf: Vec<f64>,
    /// Normalizer Z = sum_n L(n)/n^{1+alpha} + tail.
    normalizer: f64,
}

/// A sampled renewal trajectory: strictly increasing points in
/// (start, horizon], with the origin of the path implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenewalPath {
    pub points: Vec<usize>,
    pub horizon: usize,
}

/// Persistence classification of the intersection renewal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Persistence {
    Persistent,
    Terminating,
    Undecided,
}

/// Outcome of `intersection_persistence`.
#[derive(Debug, Clone, Copy)]
pub struct IntersectionReport {
    /// Partial sum of u(n)^2 over 1..=N_max.
    pub partial_sum: f64,
    pub classification: Persistence,
}

/// Two-sided renewal-density bound diagnostics; see `doney_bound_report`.
#[derive(Debug, Clone, Copy)]
pub struct DoneyBoundReport {
    /// min over n of u(n) sqrt(n+1) Lbold(n+1).
    pub min_ratio: f64,
    /// max over n of the same ratio.
    pub max_ratio: f64,
    /// Grid points violating the bound with the raw envelope and raw cL.
    pub raw_violations: usize,
    /// Constant that makes both sides hold after rescaling the envelope by
    /// `min_ratio`: cL_effective = min_ratio / max_ratio.
    pub c_l_effective: f64,
}

impl RenewalModel {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn l_spec(&self) -> &SlowlyVaryingSpec {
        &self.l
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// K(n) for n in 1..=N_max (without the sampling tail lump).
    pub fn k(&self, n: usize) -> f64 {
        self.k[n - 1]
    }

    /// log K(n).
    pub fn log_k(&self, n: usize) -> f64 {
        self.log_k[n - 1]
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// u(n) = P(n in tau) for n in 0..=N_max.
    pub fn u(&self, n: usize) -> f64 {
        self.u[n]
    }

    /// Envelope of the normalized law's slowly varying factor.
    pub fn env(&self) -> &EnvelopeTable {
        &self.env
    }

    /// Normalizer of the inter-arrival law.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Slowly varying factor of the normalized law at n: K(n) n^{1+alpha}.
    pub fn l_eff(&self, n: usize) -> f64 {
        self.k(n) * (n as f64).powf(1.0 + self.alpha)
    }

    fn sample_gap<R: Rng>(&self, rng: &mut R) -> usize {
        let x: f64 = rng.gen();
        self.cdf.partition_point(|&c| c < x) + 1
    }
}

/// Build a renewal model with inter-arrival exponent `alpha` and slowly
/// varying factor `l`, truncated at `n_max`.
pub fn build_model(alpha: f64, l: &SlowlyVaryingSpec, n_max: usize) -> Result<RenewalModel> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Construction(format!(
            "inter-arrival exponent must be >= 0, got {alpha}"
        )));
    }
    if n_max < 2 {
        return Err(Error::Construction(format!(
            "renewal horizon must be >= 2, got {n_max}"
        )));
    }

    let raw: Vec<f64> = (1..=n_max)
        .map(|n| Ok(l.eval_l(n as f64)? / (n as f64).powf(1.0 + alpha)))
        .collect::<Result<_>>()?;
    let partial = kahan_sum(&raw);
    let tail = tail_sum(l, alpha, n_max)?;
    let normalizer = partial + tail;
    let tail_mass = tail / normalizer;
    if tail_mass >= 0.5 {
        return Err(Error::Construction(format!(
            "horizon {n_max} too small: {:.1}% of the inter-arrival mass lies beyond it",
            100.0 * tail_mass
        )));
    }

    let k: Vec<f64> = raw.iter().map(|f| f / normalizer).collect();
    let log_k: Vec<f64> = k.iter().map(|p| p.ln()).collect();

    let mut u = vec![0.0; n_max + 1];
    u[0] = 1.0;
    for n in 1..=n_max {
        let mut acc = 0.0;
        for m in 1..=n {
            acc += k[m - 1] * u[n - m];
        }
        u[n] = acc;
    }

    let mut cdf = Vec::with_capacity(n_max);
    let mut acc = 0.0;
    for &p in &k {
        acc += p;
        cdf.push(acc);
    }
    // Fold the tail into the last gap so sampling is exactly normalized.
    *cdf.last_mut().unwrap() = 1.0;

    let env = build_envelope(&l.scaled(1.0 / normalizer)?, n_max)?;

    Ok(RenewalModel {
        alpha,
        l: l.clone(),
        n_max,
        k,
        log_k,
        tail_mass,
        u,
        env,
        cdf,
        normalizer,
    })
}

/// Estimate sum_{n > n_max} L(n)/n^{1+alpha} by Euler-Maclaurin: the
/// integral from n_max+1 plus half the first term minus a twelfth of the
/// first derivative.
fn tail_sum(l: &SlowlyVaryingSpec, alpha: f64, n_max: usize) -> Result<f64> {
    let f = |x: f64| -> Result<f64> { Ok(l_saturating(l, x)? / x.powf(1.0 + alpha)) };
    let start = (n_max + 1) as f64;
    let integral = if alpha > 0.0 {
        // Substitute x = e^t; the integrand L(e^t) e^{-alpha t} decays
        // exponentially, truncate when the factor drops below 1e-26.
        let t0 = start.ln();
        let t1 = t0 + 60.0 / alpha;
        let g = |t: f64| l_saturating(l, t.exp()).unwrap_or(0.0) * (-alpha * t).exp();
        adaptive_simpson(&g, t0, t1, 1e-12)
    } else {
        // alpha = 0: integrable only for logarithmic decay faster than 1/t.
        match l.kind() {
            SlowKind::Logarithmic { a, b } if *b < -1.0 => {
                let t0 = start.ln().max(1.0);
                a * t0.powf(b + 1.0) / (-1.0 - b)
            }
            _ => {
                return Err(Error::Construction(
                    "alpha = 0 needs logarithmic decay with b < -1 for a summable tail".into(),
                ))
            }
        }
    };
    let f0 = f(start)?;
    let fprime = (f(start + 0.5)? - f(start - 0.5)?) / 1.0;
    Ok((integral + 0.5 * f0 - fprime / 12.0).max(0.0))
}

/// L(x) with tabulated kinds extended constantly beyond their grid, used
/// only inside the tail estimate where the grid may end before the decay
/// scale does.
fn l_saturating(l: &SlowlyVaryingSpec, x: f64) -> Result<f64> {
    match l.kind() {
        SlowKind::Tabulated { points } => {
            let xn = points[points.len() - 1].0;
            l.eval_l(x.min(xn))
        }
        _ => l.eval_l(x),
    }
}

/// Ratio of u(n) to its polynomial asymptote
/// (alpha sin(pi alpha)/pi) / (n^{1-alpha} L(n)); approaches 1 for large n.
pub fn check_doney(model: &RenewalModel, n: usize) -> Result<f64> {
    if !(model.alpha > 0.0 && model.alpha < 1.0) {
        return Err(Error::Unsupported(format!(
            "renewal-density asymptotics require alpha in (0,1), got {}",
            model.alpha
        )));
    }
    if n == 0 || n > model.n_max {
        return Err(Error::OutOfRange {
            what: "renewal-density check point",
            value: n as f64,
            min: 1.0,
            max: model.n_max as f64,
        });
    }
    let alpha = model.alpha;
    let constant = alpha * (std::f64::consts::PI * alpha).sin() / std::f64::consts::PI;
    let asym = constant / ((n as f64).powf(1.0 - alpha) * model.l_eff(n));
    Ok(model.u(n) / asym)
}

/// Partial sum of u^2 and the symbolic persistence classification of the
/// intersection renewal at exponent 1/2.
pub fn intersection_persistence(model: &RenewalModel) -> IntersectionReport {
    let partial_sum = (1..=model.n_max).map(|n| model.u(n) * model.u(n)).sum();
    let classification = if model.alpha > 0.5 {
        Persistence::Persistent
    } else if model.alpha < 0.5 {
        Persistence::Terminating
    } else {
        // At alpha = 1/2 the criterion is divergence of sum 1/(n L(n)^2).
        match model.l.kind() {
            SlowKind::Trivial { .. } => Persistence::Persistent,
            SlowKind::Logarithmic { b, .. } => {
                if *b <= 0.5 {
                    Persistence::Persistent
                } else {
                    Persistence::Terminating
                }
            }
            SlowKind::Tabulated { .. } => Persistence::Undecided,
        }
    };
    IntersectionReport {
        partial_sum,
        classification,
    }
}

/// Sample an unconditioned path up to horizon `n`.
pub fn sample_path<R: Rng>(model: &RenewalModel, n: usize, rng: &mut R) -> Result<RenewalPath> {
    if n > model.n_max {
        return Err(Error::OutOfRange {
            what: "sampling horizon",
            value: n as f64,
            min: 0.0,
            max: model.n_max as f64,
        });
    }
    let mut points = Vec::new();
    let mut pos = 0usize;
    loop {
        pos += model.sample_gap(rng);
        if pos > n {
            break;
        }
        points.push(pos);
    }
    Ok(RenewalPath { points, horizon: n })
}

/// Sample the renewal bridge between pinned endpoints d and f: the law of
/// tau cut to (d, f] conditioned on d and f being renewal points.  Gaps are
/// drawn sequentially with P(gap = j | r remaining) = K(j) u(r-j) / u(r).
pub fn sample_bridge<R: Rng>(
    model: &RenewalModel,
    d: usize,
    f: usize,
    rng: &mut R,
) -> Result<RenewalPath> {
    if d > f || f > model.n_max {
        return Err(Error::OutOfRange {
            what: "bridge endpoints",
            value: f as f64,
            min: d as f64,
            max: model.n_max as f64,
        });
    }
    let mut points = Vec::new();
    let mut pos = d;
    while pos < f {
        let r = f - pos;
        let gap = if r == 1 {
            1
        } else {
            let target: f64 = rng.gen::<f64>() * model.u(r);
            let mut acc = 0.0;
            let mut chosen = r;
            for j in 1..=r {
                acc += model.k(j) * model.u(r - j);
                if acc >= target {
                    chosen = j;
                    break;
                }
            }
            chosen
        };
        pos += gap;
        points.push(pos);
    }
    Ok(RenewalPath { points, horizon: f })
}

/// The local-time statistics (L(N)/sqrt(N)) * #(tau intersect [0, N/2])
/// over IID sampled paths.  The count includes the origin.
pub fn local_time_samples<R: Rng>(
    model: &RenewalModel,
    n: usize,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if model.alpha != 0.5 {
        return Err(Error::Unsupported(format!(
            "local-time law requires alpha = 1/2, got {}",
            model.alpha
        )));
    }
    let scale = model.l_eff(n) / (n as f64).sqrt();
    let half = n / 2;
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let path = sample_path(model, half, rng)?;
        out.push(scale * (1 + path.points.len()) as f64);
    }
    Ok(out)
}

/// Kolmogorov-Smirnov distance between the empirical local-time law at
/// horizon `n` and its limit |Z|/(2 sqrt(pi)), Z standard normal.
pub fn local_time_law<R: Rng>(
    model: &RenewalModel,
    n: usize,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let stats = local_time_samples(model, n, samples, rng)?;
    Ok(crate::stats::ks_distance(&stats, half_normal_cdf))
}

/// CDF of |Z|/(2 sqrt(pi)): 2 Phi(2 sqrt(pi) t) - 1 for t >= 0.
pub fn half_normal_cdf(t: f64) -> f64 {
    if t < 0.0 {
        0.0
    } else {
        2.0 * normal_cdf(2.0 * std::f64::consts::PI.sqrt() * t) - 1.0
    }
}

/// Scan the two-sided renewal-density bound
/// Rhalf(n) <= u(n) <= cL^{-1} Rhalf(n) over the whole grid.  The bound's
/// constants are existential, so violations of the raw envelope are
/// reported together with the global rescale that repairs them.
pub fn doney_bound_report(model: &RenewalModel) -> DoneyBoundReport {
    let env = &model.env;
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    let mut raw_violations = 0usize;
    let inv_cl = 1.0 / env.c_l();
    for n in 0..=model.n_max {
        let ratio = model.u(n) * ((n + 1) as f64).sqrt() * env.lbold(n + 1);
        min_ratio = min_ratio.min(ratio);
        max_ratio = max_ratio.max(ratio);
        if ratio < 1.0 || ratio > inv_cl {
            raw_violations += 1;
        }
    }
    DoneyBoundReport {
        min_ratio,
        max_ratio,
        raw_violations,
        c_l_effective: min_ratio / max_ratio,
    }
}
