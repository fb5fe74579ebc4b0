//! Charge laws for the quenched environment.
//!
//! Four families of IID charges, each normalized to mean zero and unit
//! variance, with exact log-moment-generating functions. On top of the base
//! law sits an exponentially tilted measure that biases the charges at a
//! prescribed set of pinned sites while leaving every other site untouched.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::{Error, Result};

/// Maximum rejection attempts per tilted truncated-Gaussian draw before the
/// sampler gives up. A tilt pushing the proposal mean far outside the
/// truncation window makes acceptance exponentially rare; failing loudly is
/// better than spinning.
const REJECTION_ATTEMPT_LIMIT: u64 = 1_000_000;

/// A centered, unit-variance charge law with finite exponential moments.
#[derive(Debug, Clone, PartialEq)]
pub enum DisorderFamily {
    /// Standard normal.
    Gaussian,
    /// Fair coin on {-1, +1}.
    Rademacher,
    /// Rate-1 exponential shifted down by its mean.
    CenteredExponential,
    /// Standard normal conditioned on |x| <= bound, rescaled to unit variance.
    TruncatedGaussian { bound: f64 },
}

/// Validated charge-law specification.
///
/// For the truncated family the rescaling factor is computed once at
/// construction, so evaluation and sampling never redo the CDF arithmetic.
#[derive(Debug, Clone)]
pub struct DisorderSpec {
    family: DisorderFamily,
    /// Standard deviation of the raw truncated normal (1.0 for the other
    /// families, where no rescaling happens).
    truncation_sigma: f64,
}

impl DisorderSpec {
    pub fn new(family: DisorderFamily) -> Result<Self> {
        let truncation_sigma = match family {
            DisorderFamily::TruncatedGaussian { bound } => {
                if !bound.is_finite() || bound <= 0.0 {
                    return Err(Error::Construction(format!(
                        "truncation bound must be positive and finite, got {bound}"
                    )));
                }
                let mass = 2.0 * crate::stats::normal_cdf(bound) - 1.0;
                let var = 1.0 - 2.0 * bound * crate::stats::normal_pdf(bound) / mass;
                if var <= 0.0 {
                    return Err(Error::Construction(format!(
                        "truncation bound {bound} leaves no resolvable variance"
                    )));
                }
                var.sqrt()
            }
            _ => 1.0,
        };
        Ok(Self { family, truncation_sigma })
    }

    pub fn family(&self) -> &DisorderFamily {
        &self.family
    }

    /// log E[exp(t * omega)], exact per family.
    ///
    /// The centered exponential has an MGF pole at t = 1 and is rejected from
    /// there on; the other families accept every real t.
    pub fn log_mgf(&self, t: f64) -> Result<f64> {
        match self.family {
            DisorderFamily::Gaussian => Ok(0.5 * t * t),
            DisorderFamily::Rademacher => {
                // ln cosh t, written to avoid overflow for large |t|.
                let a = t.abs();
                Ok(a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2)
            }
            DisorderFamily::CenteredExponential => {
                if t >= 1.0 {
                    return Err(Error::Unsupported(format!(
                        "centered-exponential MGF diverges for t >= 1, got {t}"
                    )));
                }
                Ok(-t - (1.0 - t).ln())
            }
            DisorderFamily::TruncatedGaussian { bound } => {
                let s = self.truncation_sigma;
                let mass = 2.0 * crate::stats::normal_cdf(bound) - 1.0;
                let window = crate::stats::normal_cdf(bound - t / s)
                    - crate::stats::normal_cdf(-bound - t / s);
                Ok(0.5 * t * t / (s * s) + window.ln() - mass.ln())
            }
        }
    }

    /// Mean of the beta-tilted law, M'(beta)/M(beta).
    pub fn m_beta(&self, beta: f64) -> Result<f64> {
        if !(beta >= 0.0) {
            return Err(Error::OutOfRange {
                what: "tilt strength",
                value: beta,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        match self.family {
            DisorderFamily::Gaussian => Ok(beta),
            DisorderFamily::Rademacher => Ok(beta.tanh()),
            DisorderFamily::CenteredExponential => {
                if beta >= 1.0 {
                    return Err(Error::Unsupported(format!(
                        "centered-exponential tilt requires beta < 1, got {beta}"
                    )));
                }
                Ok(beta / (1.0 - beta))
            }
            DisorderFamily::TruncatedGaussian { bound } => {
                let s = self.truncation_sigma;
                let window = crate::stats::normal_cdf(bound - beta / s)
                    - crate::stats::normal_cdf(-bound - beta / s);
                let edge = crate::stats::normal_pdf(bound + beta / s)
                    - crate::stats::normal_pdf(bound - beta / s);
                Ok(beta / (s * s) + edge / (s * window))
            }
        }
    }

    /// Largest beta0 <= 2 such that the second derivative of the log-MGF
    /// stays inside [1/2, 2] on all of [0, beta0], located by a grid scan
    /// with step 1e-3.
    pub fn beta0_range(&self) -> f64 {
        const STEP: f64 = 1e-3;
        const CAP: f64 = 2.0;
        let mut beta0 = 0.0;
        let mut k = 1u64;
        loop {
            let beta = k as f64 * STEP;
            if beta > CAP + 0.5 * STEP {
                return CAP;
            }
            let curv = self.log_mgf_curvature(beta);
            if !(0.5..=2.0).contains(&curv) {
                return beta0;
            }
            beta0 = beta.min(CAP);
            k += 1;
        }
    }

    /// Second derivative of the log-MGF, which is also the variance of the
    /// t-tilted law.
    fn log_mgf_curvature(&self, t: f64) -> f64 {
        match self.family {
            DisorderFamily::Gaussian => 1.0,
            DisorderFamily::Rademacher => {
                let c = t.cosh();
                1.0 / (c * c)
            }
            DisorderFamily::CenteredExponential => {
                if t >= 1.0 {
                    return f64::INFINITY;
                }
                1.0 / ((1.0 - t) * (1.0 - t))
            }
            DisorderFamily::TruncatedGaussian { .. } => {
                // Central difference of the closed-form tilted mean; the
                // window terms have no tidy second-derivative expression.
                let h = 1e-5;
                let lo = (t - h).max(0.0);
                let hi = t + h;
                let mlo = self.m_beta(lo).expect("tilted mean is defined for all t >= 0");
                let mhi = self.m_beta(hi).expect("tilted mean is defined for all t >= 0");
                (mhi - mlo) / (hi - lo)
            }
        }
    }

    /// One draw from the base law.
    pub fn sample_one(&self, rng: &mut impl Rng) -> f64 {
        match self.family {
            DisorderFamily::Gaussian => StandardNormal.sample(rng),
            DisorderFamily::Rademacher => {
                if rng.gen_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            DisorderFamily::CenteredExponential => {
                let e: f64 = Exp1.sample(rng);
                e - 1.0
            }
            DisorderFamily::TruncatedGaussian { bound } => loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= bound {
                    return z / self.truncation_sigma;
                }
            },
        }
    }

    /// IID charges omega_1..omega_n.
    pub fn sample_iid(&self, n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }
}

/// Charge law with an exponential tilt at a fixed set of pinned sites.
///
/// Sites are 1-based to match the charge indexing omega_1..omega_N; every
/// site outside the pinned set keeps the base law.
#[derive(Debug, Clone)]
pub struct TiltedContext {
    base: DisorderSpec,
    beta: f64,
    pinned_sites: HashSet<usize>,
}

impl TiltedContext {
    pub fn new(base: DisorderSpec, beta: f64, pinned_sites: HashSet<usize>) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::OutOfRange {
                what: "tilt strength",
                value: beta,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        if matches!(base.family, DisorderFamily::CenteredExponential) && beta >= 1.0 {
            return Err(Error::Unsupported(format!(
                "centered-exponential tilt requires beta < 1, got {beta}"
            )));
        }
        if pinned_sites.contains(&0) {
            return Err(Error::Construction(
                "pinned sites are 1-based; site 0 does not exist".to_string(),
            ));
        }
        Ok(Self { base, beta, pinned_sites })
    }

    pub fn base(&self) -> &DisorderSpec {
        &self.base
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn pinned_sites(&self) -> &HashSet<usize> {
        &self.pinned_sites
    }

    /// One draw from the tilted law dP~(omega) proportional to
    /// exp(beta * omega) dP(omega).
    fn sample_tilted_one(&self, rng: &mut impl Rng) -> Result<f64> {
        let beta = self.beta;
        match self.base.family {
            DisorderFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                Ok(beta + z)
            }
            DisorderFamily::Rademacher => {
                // P(+1) = e^beta / (e^beta + e^-beta) = 1 / (1 + e^{-2 beta}).
                let p_plus = 1.0 / (1.0 + (-2.0 * beta).exp());
                Ok(if rng.gen_bool(p_plus) { 1.0 } else { -1.0 })
            }
            DisorderFamily::CenteredExponential => {
                // Tilting the rate-1 exponential by beta < 1 yields a
                // rate-(1-beta) exponential, still shifted down by 1.
                let e: f64 = Exp1.sample(rng);
                Ok(e / (1.0 - beta) - 1.0)
            }
            DisorderFamily::TruncatedGaussian { bound } => {
                // The tilted law is N(beta/sigma, 1) conditioned on the
                // truncation window, then rescaled; rejection from the
                // shifted proposal is exact.
                let mean = beta / self.base.truncation_sigma;
                for _ in 0..REJECTION_ATTEMPT_LIMIT {
                    let z: f64 = StandardNormal.sample(rng);
                    let x = mean + z;
                    if x.abs() <= bound {
                        return Ok(x / self.base.truncation_sigma);
                    }
                }
                Err(Error::Budget {
                    what: "tilted truncated-Gaussian rejection sampling",
                    requested: REJECTION_ATTEMPT_LIMIT,
                    limit: REJECTION_ATTEMPT_LIMIT,
                })
            }
        }
    }

    /// Charges omega_1..omega_n with the tilt applied at the pinned sites.
    pub fn sample_tilted(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
        if let Some(&site) = self.pinned_sites.iter().max() {
            if site > n {
                return Err(Error::OutOfRange {
                    what: "pinned site index",
                    value: site as f64,
                    min: 1.0,
                    max: n as f64,
                });
            }
        }
        let mut out = Vec::with_capacity(n);
        for site in 1..=n {
            if self.pinned_sites.contains(&site) {
                out.push(self.sample_tilted_one(rng)?);
            } else {
                out.push(self.base.sample_one(rng));
            }
        }
        Ok(out)
    }
}
