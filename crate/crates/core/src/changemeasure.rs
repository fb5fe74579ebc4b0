//! The q-body potential, its block functional, and the tilted-measure
//! machinery built on top of them.
//!
//! A block of k sites carries the potential V: a normalized product of
//! kernel-envelope factors over sorted q-tuples, zero on tuples with a
//! repeated coordinate. Contracting V against the charges gives the block
//! functional X, whose variance is fixed by construction; truncating X
//! through an exponential weight g and applying the Hölder inequality
//! splits fractional moments of restricted partition functions into a
//! truncation factor and a tilted expectation. Each analytic step has a
//! Monte Carlo counterpart here, plus the renewal laws (the L² averaging
//! law and the bridge statistic) that drive the tilted bounds.

use rayon::prelude::*;

use crate::coarsegrain::{block_visit_probability, log_partition_on_blocks, CoarseGrainPlan};
use crate::disorder::DisorderSpec;
use crate::pinning::PinningSystem;
use crate::renewal::{sample_bridge, sample_path, RenewalModel, RenewalPath};
use crate::seeds::derive_rng;
use crate::slowvar::EnvelopeTable;
use crate::stats::summarize;
use crate::{Error, Result};

/// Hölder exponent used throughout the fractional-moment estimates.
pub const DEFAULT_GAMMA: f64 = 6.0 / 7.0;

/// Smallest admissible bridge span, as a fraction of the block length.
pub const MIN_SPAN_FRACTION: f64 = 0.1;

/// Largest k^q for which the full multilinear sum is evaluated directly.
const FULL_SUM_LIMIT: u64 = 1 << 24;

/// Largest layered-recursion size q * k^2 for the variance sum.
const VARIANCE_RECURSION_LIMIT: u64 = 5 * (1 << 26);

/// Most renewal points accepted by the path-restricted expectation.
const PATH_POINT_LIMIT: u64 = 10_000;

/// The q-body potential on a block of k sites, tied to a kernel envelope.
///
/// The normalization (q!)^{1/2} k^{1/2} tilde_Lbold(k)^{(q-1)/2} makes the
/// squared potential sum to 1 in the large-k limit. The block functional X
/// is scaled here so its variance equals that squared sum exactly rather
/// than q! times it, keeping the variance identity free of combinatorial
/// bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct PotentialSpec<'a> {
    q: usize,
    k: usize,
    env: &'a EnvelopeTable,
    /// (q!)^{1/2} k^{1/2} tilde_Lbold(k)^{(q-1)/2}.
    norm: f64,
    sqrt_q_factorial: f64,
}

impl<'a> PotentialSpec<'a> {
    pub fn new(q: usize, k: usize, env: &'a EnvelopeTable) -> Result<Self> {
        if !(2..=12).contains(&q) {
            return Err(Error::OutOfRange {
                what: "potential body count",
                value: q as f64,
                min: 2.0,
                max: 12.0,
            });
        }
        if k == 0 || k > env.n_max() {
            return Err(Error::OutOfRange {
                what: "potential block length",
                value: k as f64,
                min: 1.0,
                max: env.n_max() as f64,
            });
        }
        let q_factorial: f64 = (1..=q as u64).product::<u64>() as f64;
        let sqrt_q_factorial = q_factorial.sqrt();
        let tilde = env.tilde_lbold(k);
        let norm = sqrt_q_factorial * (k as f64).sqrt() * tilde.powf((q as f64 - 1.0) / 2.0);
        Ok(Self { q, k, env, norm, sqrt_q_factorial })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn env(&self) -> &EnvelopeTable {
        self.env
    }

    /// The potential at one tuple of block-local coordinates.
    pub fn v_eval(&self, tuple: &[usize]) -> Result<f64> {
        if tuple.len() != self.q {
            return Err(Error::Construction(format!(
                "potential tuple needs {} coordinates, got {}",
                self.q,
                tuple.len()
            )));
        }
        for &c in tuple {
            if c == 0 || c > self.k {
                return Err(Error::OutOfRange {
                    what: "potential coordinate",
                    value: c as f64,
                    min: 1.0,
                    max: self.k as f64,
                });
            }
        }
        let mut sorted = tuple.to_vec();
        sorted.sort_unstable();
        let mut prod = 1.0;
        for pair in sorted.windows(2) {
            if pair[0] == pair[1] {
                return Ok(0.0);
            }
            prod *= self.env.rhalf(pair[1] - pair[0]);
        }
        Ok(prod / self.norm)
    }

    /// Sum of the squared potential over the whole block, via the layered
    /// recursion T_p(i) = sum_{j<i} T_{p-1}(j) R(i-j)^2. Tends to 1 as k
    /// grows, though only at logarithmic speed.
    pub fn sum_v_squared(&self) -> Result<f64> {
        let work = self.q as u64 * (self.k as u64).pow(2);
        if work > VARIANCE_RECURSION_LIMIT {
            return Err(Error::Budget {
                what: "potential variance recursion",
                requested: work,
                limit: VARIANCE_RECURSION_LIMIT,
            });
        }
        let r2: Vec<f64> = (0..self.k)
            .map(|g| {
                let r = self.env.rhalf(g);
                r * r
            })
            .collect();
        let mut layer = vec![1.0f64; self.k + 1];
        layer[0] = 0.0;
        for _ in 1..self.q {
            let mut next = vec![0.0f64; self.k + 1];
            for i in 2..=self.k {
                let mut acc = 0.0;
                for j in 1..i {
                    acc += layer[j] * r2[i - j];
                }
                next[i] = acc;
            }
            layer = next;
        }
        let total: f64 = layer[1..].iter().sum();
        let tilde = self.env.tilde_lbold(self.k);
        Ok(total / (self.k as f64 * tilde.powi(self.q as i32 - 1)))
    }

    fn ensure_full_sum_budget(&self) -> Result<()> {
        let mut size = 1u64;
        for _ in 0..self.q {
            size = size.saturating_mul(self.k as u64);
        }
        if size > FULL_SUM_LIMIT {
            return Err(Error::Budget {
                what: "full potential contraction (restrict to renewal points at this scale)",
                requested: size,
                limit: FULL_SUM_LIMIT,
            });
        }
        Ok(())
    }

    /// The block functional: the potential contracted against one block of
    /// charges, over all increasing q-tuples.
    pub fn x_full(&self, omega: &[f64]) -> Result<f64> {
        if omega.len() != self.k {
            return Err(Error::Construction(format!(
                "charge block length {} does not match k = {}",
                omega.len(),
                self.k
            )));
        }
        self.ensure_full_sum_budget()?;
        let r: Vec<f64> = (0..self.k).map(|g| self.env.rhalf(g)).collect();
        // S_p(i) = omega_i sum_{j<i} R(i-j) S_{p-1}(j) accumulates the
        // kernel product over increasing chains ending at i.
        let mut layer: Vec<f64> = std::iter::once(0.0)
            .chain(omega.iter().copied())
            .collect();
        for _ in 1..self.q {
            let mut next = vec![0.0f64; self.k + 1];
            for i in 2..=self.k {
                let mut acc = 0.0;
                for j in 1..i {
                    acc += r[i - j] * layer[j];
                }
                next[i] = omega[i - 1] * acc;
            }
            layer = next;
        }
        let total: f64 = layer[1..].iter().sum();
        Ok(self.sqrt_q_factorial * total / self.norm)
    }

    /// Expectation of the block functional under the tilted charge law
    /// along a fixed path: every charge at a renewal point acquires mean
    /// m_beta, all others stay centered, so only tuples supported on the
    /// path survive.
    pub fn expected_x_on_path(
        &self,
        path: &RenewalPath,
        disorder: &DisorderSpec,
        beta: f64,
    ) -> Result<f64> {
        if path.points.len() as u64 > PATH_POINT_LIMIT {
            return Err(Error::Budget {
                what: "path-restricted potential sum",
                requested: path.points.len() as u64,
                limit: PATH_POINT_LIMIT,
            });
        }
        for pair in path.points.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Construction(
                    "renewal points must be strictly increasing".to_string(),
                ));
            }
        }
        if let (Some(&first), Some(&last)) = (path.points.first(), path.points.last()) {
            if first == 0 || last > self.k {
                return Err(Error::OutOfRange {
                    what: "renewal point outside the block",
                    value: last as f64,
                    min: 1.0,
                    max: self.k as f64,
                });
            }
        }
        let m = disorder.m_beta(beta)?;
        if path.points.len() < self.q || m == 0.0 {
            return Ok(0.0);
        }
        let chain = chain_sum_over_points(&path.points, self.q, self.env);
        Ok(m.powi(self.q as i32) * self.sqrt_q_factorial * chain / self.norm)
    }
}

/// Kernel-product sum over increasing q-tuples drawn from `points`,
/// computed by the chain recursion restricted to those positions.
fn chain_sum_over_points(points: &[usize], q: usize, env: &EnvelopeTable) -> f64 {
    let r = points.len();
    let mut layer = vec![1.0f64; r];
    for _ in 1..q {
        let mut next = vec![0.0f64; r];
        for a in 1..r {
            let mut acc = 0.0;
            for b in 0..a {
                acc += env.rhalf(points[a] - points[b]) * layer[b];
            }
            next[a] = acc;
        }
        layer = next;
    }
    layer.iter().sum()
}

/// Truncation of the block functional: a hard exponential penalty once X
/// reaches exp(K_cut^2).
#[derive(Debug, Clone, Copy)]
pub struct TruncationSpec {
    k_cut: f64,
}

impl TruncationSpec {
    /// `k_cut` must be positive; infinity disables truncation entirely.
    pub fn new(k_cut: f64) -> Result<Self> {
        if !(k_cut > 0.0) {
            return Err(Error::Construction(format!(
                "truncation level must be positive, got {k_cut}"
            )));
        }
        Ok(Self { k_cut })
    }

    pub fn k_cut(&self) -> f64 {
        self.k_cut
    }

    /// The firing threshold exp(K_cut^2); saturates to infinity once the
    /// level exceeds floating-point range.
    pub fn threshold(&self) -> f64 {
        (self.k_cut * self.k_cut).exp()
    }

    /// exp(sum_j f(X_j)) over the supplied block functionals, in (0, 1]:
    /// each block at or above the threshold contributes e^{-K_cut}.
    pub fn g_weight(&self, xs: &[f64]) -> f64 {
        let threshold = self.threshold();
        let fires = xs.iter().filter(|&&x| x >= threshold).count();
        if fires == 0 {
            1.0
        } else {
            (-self.k_cut * fires as f64).exp()
        }
    }
}

/// Truncation level making the per-block penalty factor at most 2 for a
/// functional of variance at most `variance_bound`: the positive root of
/// 2K^2 - K gamma/(1-gamma) - log(variance_bound) = 0.
pub fn choose_k_cut(gamma: f64, variance_bound: f64) -> Result<f64> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::OutOfRange {
            what: "Holder exponent",
            value: gamma,
            min: 0.0,
            max: 1.0,
        });
    }
    if !(variance_bound >= 1.0) || !variance_bound.is_finite() {
        return Err(Error::Construction(format!(
            "variance bound must be finite and at least 1, got {variance_bound}"
        )));
    }
    let c = gamma / (1.0 - gamma);
    Ok((c + (c * c + 8.0 * variance_bound.ln()).sqrt()) / 4.0)
}

/// The per-block penalty factor of the truncated change of measure.
#[derive(Debug, Clone, Copy)]
pub struct HolderFactorReport {
    /// Analytic bound with the firing probability replaced by Chebyshev.
    pub chebyshev_bound: f64,
    /// Monte Carlo estimate of the factor itself.
    pub mc_estimate: f64,
    pub mc_std_error: f64,
    /// Empirical probability that the functional reaches the threshold.
    pub fire_probability: f64,
}

/// Estimates E[g^{-gamma/(1-gamma)}] for one block: the factor equals
/// (e^{K gamma/(1-gamma)} - 1) P(X >= e^{K^2}) + 1, with the probability
/// both bounded by Chebyshev through the potential's variance sum and
/// estimated by direct sampling of the block functional.
pub fn holder_factor(
    tspec: &TruncationSpec,
    pspec: &PotentialSpec,
    disorder: &DisorderSpec,
    gamma: f64,
    samples: usize,
    seed: u64,
) -> Result<HolderFactorReport> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::OutOfRange {
            what: "Holder exponent",
            value: gamma,
            min: 0.0,
            max: 1.0,
        });
    }
    if samples < 2 {
        return Err(Error::Construction(format!(
            "factor estimation needs at least 2 samples, got {samples}"
        )));
    }
    pspec.ensure_full_sum_budget()?;
    let c = gamma / (1.0 - gamma);
    let k = tspec.k_cut();

    let variance = pspec.sum_v_squared()?;
    // In log space so an astronomically rare threshold cannot overflow:
    // the Chebyshev term is exp(cK + log var - 2K^2).
    let log_p_cheb = variance.ln() - 2.0 * k * k;
    let chebyshev_bound = if log_p_cheb == f64::NEG_INFINITY {
        1.0
    } else {
        let p_cheb = log_p_cheb.exp().min(1.0);
        1.0 - p_cheb + (c * k + log_p_cheb).exp()
    };

    let threshold = tspec.threshold();
    let fires: usize = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, "holder-factor", i as u64);
            let omega = disorder.sample_iid(pspec.k(), &mut rng);
            let x = pspec
                .x_full(&omega)
                .expect("budget and shape were validated before the sampling loop");
            usize::from(x >= threshold)
        })
        .sum();
    let p_hat = fires as f64 / samples as f64;
    let (mc_estimate, mc_std_error) = if fires == 0 {
        (1.0, 0.0)
    } else {
        let amplification = (c * k).exp() - 1.0;
        (
            1.0 + p_hat * amplification,
            amplification * (p_hat * (1.0 - p_hat) / samples as f64).sqrt(),
        )
    };
    Ok(HolderFactorReport {
        chebyshev_bound,
        mc_estimate,
        mc_std_error,
        fire_probability: p_hat,
    })
}

/// Moments of a sampled statistic.
#[derive(Debug, Clone, Copy)]
pub struct MomentReport {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// The averaging-law statistic: kernel-envelope weights summed over the
/// renewal points up to a fraction theta of the horizon, normalized by the
/// envelope transform at the horizon. Converges in L^2 to
/// `ce_target(model)`.
pub fn ce_statistic(
    model: &RenewalModel,
    n: usize,
    theta: f64,
    samples: usize,
    seed: u64,
) -> Result<MomentReport> {
    if model.alpha() != 0.5 {
        return Err(Error::Unsupported(format!(
            "the averaging law holds at tail exponent 1/2, got {}",
            model.alpha()
        )));
    }
    if !(0.0 < theta && theta <= 1.0) {
        return Err(Error::OutOfRange {
            what: "horizon fraction",
            value: theta,
            min: 0.0,
            max: 1.0,
        });
    }
    if n == 0 || n > model.n_max() {
        return Err(Error::OutOfRange {
            what: "statistic horizon",
            value: n as f64,
            min: 1.0,
            max: model.n_max() as f64,
        });
    }
    if samples < 2 {
        return Err(Error::Construction(format!(
            "moment estimation needs at least 2 samples, got {samples}"
        )));
    }
    let horizon = (theta * n as f64).floor() as usize;
    let tilde = model.env().tilde_lbold(n);
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, "ce-statistic", i as u64);
            let path = sample_path(model, horizon, &mut rng)?;
            let sum: f64 = path.points.iter().map(|&p| model.env().rhalf(p)).sum();
            Ok(sum / tilde)
        })
        .collect::<Result<_>>()?;
    let s = summarize(&values);
    Ok(MomentReport {
        mean: s.mean,
        variance: s.variance,
        std_error: s.std_error,
        samples: s.n,
    })
}

/// Limit of `ce_statistic`: the envelope's limiting ratio over 2 pi.
pub fn ce_target(model: &RenewalModel) -> f64 {
    model.env().c_limit() / (2.0 * std::f64::consts::PI)
}

/// Samples of the bridge statistic: the potential summed over increasing
/// q-tuples drawn from the bridge's renewal points (origin included),
/// normalized at the span. Nonnegative; converges in law as the span
/// grows, which is what makes block-level second-moment bounds possible.
pub fn bridge_statistic_samples(
    model: &RenewalModel,
    pspec: &PotentialSpec,
    d: usize,
    f: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if d >= f || f > model.n_max() {
        return Err(Error::OutOfRange {
            what: "bridge endpoints",
            value: f as f64,
            min: d as f64 + 1.0,
            max: model.n_max() as f64,
        });
    }
    let span = f - d;
    if (span as f64) < MIN_SPAN_FRACTION * pspec.k() as f64 {
        return Err(Error::Construction(format!(
            "bridge span {span} is below the minimum fraction {MIN_SPAN_FRACTION} of the \
             block length {}",
            pspec.k()
        )));
    }
    let env = model.env();
    if span > env.n_max() {
        return Err(Error::OutOfRange {
            what: "bridge span beyond the envelope grid",
            value: span as f64,
            min: 1.0,
            max: env.n_max() as f64,
        });
    }
    let q = pspec.q();
    let q_factorial: f64 = (1..=q as u64).product::<u64>() as f64;
    let scale = env.lbold(span) * q_factorial.sqrt()
        / ((span as f64).sqrt() * env.tilde_lbold(span).powi(q as i32 - 1));
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, "bridge-statistic", i as u64);
            let bridge = sample_bridge(model, d, f, &mut rng)?;
            // Shift to span-local coordinates and adjoin the conditioned
            // entry point as coordinate 0.
            let mut pts = Vec::with_capacity(bridge.points.len() + 1);
            pts.push(0usize);
            pts.extend(bridge.points.iter().map(|&p| p - d));
            if pts.len() < q {
                return Ok(0.0);
            }
            Ok(scale * chain_sum_over_points(&pts, q, env))
        })
        .collect()
}

/// Outcome of thresholding the bridge statistic.
#[derive(Debug, Clone, Copy)]
pub struct FromCeReport {
    /// Fraction of sampled bridges whose statistic strictly exceeds the
    /// threshold.
    pub fraction_above: f64,
    pub threshold: f64,
    pub samples: usize,
}

/// Samples the bridge statistic and reports how often it exceeds the
/// threshold. Thresholds stabilize as the span grows, so a quantile
/// measured at one span transfers to larger ones.
pub fn from_ce_test(
    model: &RenewalModel,
    pspec: &PotentialSpec,
    d: usize,
    f: usize,
    samples: usize,
    threshold: f64,
    seed: u64,
) -> Result<FromCeReport> {
    if !(threshold >= 0.0) {
        return Err(Error::OutOfRange {
            what: "bridge statistic threshold",
            value: threshold,
            min: 0.0,
            max: f64::INFINITY,
        });
    }
    let stats = bridge_statistic_samples(model, pspec, d, f, samples, seed)?;
    let above = stats.iter().filter(|&&s| s > threshold).count();
    Ok(FromCeReport {
        fraction_above: above as f64 / stats.len() as f64,
        threshold,
        samples: stats.len(),
    })
}

/// Both sides of the Hölder split for one visited-block set, all relative
/// to the exact visit probability.
#[derive(Debug, Clone, Copy)]
pub struct HolderChainReport {
    /// mean((Z_restricted / P_visit)^gamma).
    pub lhs: f64,
    pub lhs_std_error: f64,
    /// mean(g^{-gamma/(1-gamma)}).
    pub truncation_factor: f64,
    pub truncation_std_error: f64,
    /// mean(g * Z_restricted) / P_visit, the tilted expectation.
    pub tilt_ratio: f64,
    pub tilt_std_error: f64,
    /// truncation_factor^{1-gamma} * tilt_ratio^gamma.
    pub rhs: f64,
    pub gamma: f64,
    pub samples: usize,
}

impl HolderChainReport {
    /// The inequality holds on the shared empirical measure up to float
    /// slack, so failure indicates a computation bug rather than noise.
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-9)
    }
}

/// Monte Carlo check of the Hölder split on a visited-block set: the
/// fractional moment of the restricted partition function against the
/// truncation factor and the tilted expectation. All three means are taken
/// over the same charge samples, and the partition function is scaled by
/// the visit probability so the averages stay O(1).
pub fn holder_chain_check(
    sys: &PinningSystem,
    plan: &CoarseGrainPlan,
    blocks: &[usize],
    tspec: &TruncationSpec,
    pspec: &PotentialSpec,
    gamma: f64,
    samples: usize,
    seed: u64,
) -> Result<HolderChainReport> {
    if plan.n() > 512 {
        return Err(Error::Budget {
            what: "Holder chain system size",
            requested: plan.n() as u64,
            limit: 512,
        });
    }
    if pspec.k() != plan.k() {
        return Err(Error::Construction(format!(
            "potential block length {} does not match the plan's {}",
            pspec.k(),
            plan.k()
        )));
    }
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::OutOfRange {
            what: "Holder exponent",
            value: gamma,
            min: 0.0,
            max: 1.0,
        });
    }
    if samples < 2 {
        return Err(Error::Construction(format!(
            "the Holder check needs at least 2 samples, got {samples}"
        )));
    }
    pspec.ensure_full_sum_budget()?;
    let p_visit = block_visit_probability(sys.renewal(), plan, blocks)?;
    if p_visit == 0.0 {
        return Err(Error::Construction(
            "the visited set must include the final block, otherwise the restricted \
             partition function vanishes"
            .to_string(),
        ));
    }
    let ln_p = p_visit.ln();
    let c = gamma / (1.0 - gamma);
    let n = plan.n();
    let k = plan.k();

    let rows: Vec<(f64, f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_rng(seed, "holder-chain", i as u64);
            let omega = sys.disorder().sample_iid(n, &mut rng);
            let log_hz = log_partition_on_blocks(sys, &omega, plan, blocks)?;
            let z_rel = (log_hz - ln_p).exp();
            let xs: Vec<f64> = blocks
                .iter()
                .map(|&j| pspec.x_full(&omega[(j - 1) * k..j * k]))
                .collect::<Result<_>>()?;
            let g = tspec.g_weight(&xs);
            Ok((z_rel.powf(gamma), g.powf(-c), g * z_rel))
        })
        .collect::<Result<_>>()?;

    let lhs = summarize(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let trunc = summarize(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let tilt = summarize(&rows.iter().map(|r| r.2).collect::<Vec<_>>());
    Ok(HolderChainReport {
        lhs: lhs.mean,
        lhs_std_error: lhs.std_error,
        truncation_factor: trunc.mean,
        truncation_std_error: trunc.std_error,
        tilt_ratio: tilt.mean,
        tilt_std_error: tilt.std_error,
        rhs: trunc.mean.powf(1.0 - gamma) * tilt.mean.powf(gamma),
        gamma,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsegrain::{coarse_length, ShiftParams};
    use crate::disorder::DisorderFamily;
    use crate::renewal::build_model;
    use crate::slowvar::{build_envelope, SlowlyVaryingSpec};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn trivial_envelope(n_max: usize) -> EnvelopeTable {
        let l = SlowlyVaryingSpec::trivial(1.0, 0.25).unwrap();
        build_envelope(&l, n_max).unwrap()
    }

    fn half_model(n_max: usize) -> RenewalModel {
        let l = SlowlyVaryingSpec::trivial(1.0, 0.25).unwrap();
        build_model(0.5, &l, n_max).unwrap()
    }

    fn gaussian() -> DisorderSpec {
        DisorderSpec::new(DisorderFamily::Gaussian).unwrap()
    }

    fn full_block_path(k: usize) -> RenewalPath {
        RenewalPath {
            points: (1..=k).collect(),
            horizon: k,
        }
    }

    #[test]
    fn potential_rejects_bad_shapes() {
        let env = trivial_envelope(64);
        assert!(PotentialSpec::new(1, 16, &env).is_err());
        assert!(PotentialSpec::new(3, 0, &env).is_err());
        assert!(PotentialSpec::new(3, 65, &env).is_err());
        let p = PotentialSpec::new(3, 16, &env).unwrap();
        assert!(p.v_eval(&[1, 2]).is_err());
        assert!(p.v_eval(&[0, 2, 3]).is_err());
        assert!(p.v_eval(&[1, 2, 17]).is_err());
    }

    #[test]
    fn potential_vanishes_on_diagonals_and_ignores_order() {
        let env = trivial_envelope(64);
        let p = PotentialSpec::new(3, 6, &env).unwrap();
        for a in 1..=6usize {
            for b in 1..=6usize {
                for c in 1..=6usize {
                    let v = p.v_eval(&[a, b, c]).unwrap();
                    if a == b || b == c || a == c {
                        assert_eq!(v, 0.0, "diagonal tuple ({a},{b},{c})");
                    } else {
                        assert!(v > 0.0);
                        for perm in [[a, c, b], [b, a, c], [c, b, a], [b, c, a], [c, a, b]] {
                            assert_eq!(v, p.v_eval(&perm).unwrap());
                        }
                    }
                }
            }
        }
        let pair = PotentialSpec::new(2, 32, &env).unwrap();
        for a in 1..=32usize {
            for b in 1..=32usize {
                let v = pair.v_eval(&[a, b]).unwrap();
                assert_eq!(v == 0.0, a == b);
            }
        }
    }

    #[test]
    fn potential_matches_the_direct_formula() {
        let env = trivial_envelope(32);
        let p = PotentialSpec::new(2, 16, &env).unwrap();
        // R(4) / (sqrt(2) sqrt(16) tilde(16)^{1/2}) with a unit envelope.
        assert_relative_eq!(
            p.v_eval(&[3, 7]).unwrap(),
            0.046_342_879_061_194_23,
            max_relative = 1e-12
        );
        assert_relative_eq!(env.tilde_lbold(16), 2.910_140_757_934_875_6, max_relative = 1e-12);
    }

    #[test]
    fn variance_recursion_matches_enumeration() {
        let env = trivial_envelope(64);
        let p = PotentialSpec::new(3, 32, &env).unwrap();
        let mut direct = 0.0;
        for i1 in 1..=32usize {
            for i2 in i1 + 1..=32 {
                for i3 in i2 + 1..=32 {
                    let r1 = env.rhalf(i2 - i1);
                    let r2 = env.rhalf(i3 - i2);
                    direct += r1 * r1 * r2 * r2;
                }
            }
        }
        direct /= 32.0 * env.tilde_lbold(32).powi(2);
        assert_relative_eq!(p.sum_v_squared().unwrap(), direct, max_relative = 1e-12);
    }

    #[test]
    fn variance_normalization_approaches_one_from_below() {
        let env = trivial_envelope(4096);
        let values: Vec<(usize, usize, f64)> = vec![
            (2, 256, 0.737_300_747_996_472_2),
            (2, 4096, 0.821_571_164_915_948_5),
            (3, 256, 0.524_456_084_129_183_8),
            (3, 4096, 0.665_882_200_849_718_5),
        ];
        for (q, k, frozen) in values {
            let p = PotentialSpec::new(q, k, &env).unwrap();
            let v = p.sum_v_squared().unwrap();
            assert_relative_eq!(v, frozen, max_relative = 1e-9);
            assert!(v <= 2.0);
        }
        for q in [2usize, 3] {
            let coarse = PotentialSpec::new(q, 256, &env).unwrap().sum_v_squared().unwrap();
            let fine = PotentialSpec::new(q, 4096, &env).unwrap().sum_v_squared().unwrap();
            assert!(
                (fine - 1.0).abs() < (coarse - 1.0).abs(),
                "q = {q}: {fine} should sit closer to 1 than {coarse}"
            );
        }
    }

    #[test]
    fn oversized_requests_hit_the_budget() {
        let env = trivial_envelope(8192);
        let p = PotentialSpec::new(3, 4096, &env).unwrap();
        assert!(matches!(
            p.x_full(&vec![0.0; 4096]),
            Err(Error::Budget { .. })
        ));
        let heavy = PotentialSpec::new(6, 8192, &env).unwrap();
        assert!(matches!(heavy.sum_v_squared(), Err(Error::Budget { .. })));
        let small = PotentialSpec::new(3, 16, &env).unwrap();
        let long_path = RenewalPath {
            points: (1..=10_001).collect(),
            horizon: 10_001,
        };
        assert!(matches!(
            small.expected_x_on_path(&long_path, &gaussian(), 0.5),
            Err(Error::Budget { .. })
        ));
    }

    #[test]
    fn functional_matches_brute_force_on_small_blocks() {
        let env = trivial_envelope(32);
        let p = PotentialSpec::new(3, 16, &env).unwrap();
        assert_eq!(p.x_full(&vec![0.0; 16]).unwrap(), 0.0);
        let mut rng = derive_rng(61, "x-brute", 0);
        for _ in 0..5 {
            let omega = gaussian().sample_iid(16, &mut rng);
            let mut direct = 0.0;
            for i1 in 1..=16usize {
                for i2 in i1 + 1..=16 {
                    for i3 in i2 + 1..=16 {
                        direct += env.rhalf(i2 - i1)
                            * env.rhalf(i3 - i2)
                            * omega[i1 - 1]
                            * omega[i2 - 1]
                            * omega[i3 - 1];
                    }
                }
            }
            direct /= 4.0 * env.tilde_lbold(16);
            assert_relative_eq!(p.x_full(&omega).unwrap(), direct, max_relative = 1e-11);
        }
    }

    #[test]
    fn functional_is_centered_with_the_predicted_variance() {
        let env = trivial_envelope(256);
        let p = PotentialSpec::new(3, 128, &env).unwrap();
        let disorder = gaussian();
        let samples = 10_000;
        let values: Vec<f64> = (0..samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = derive_rng(62, "x-variance", i as u64);
                p.x_full(&disorder.sample_iid(128, &mut rng)).unwrap()
            })
            .collect();
        let s = summarize(&values);
        assert!(
            s.mean.abs() <= 3.5 * s.std_error,
            "functional mean {} strayed from zero (se {})",
            s.mean,
            s.std_error
        );
        let predicted = p.sum_v_squared().unwrap();
        let ratio = s.variance / predicted;
        assert!(
            (0.9..=1.1).contains(&ratio),
            "variance ratio {ratio} outside the identity window"
        );
    }

    #[test]
    fn tilted_expectation_agrees_with_the_constant_shift() {
        let env = trivial_envelope(64);
        let p = PotentialSpec::new(3, 64, &env).unwrap();
        let disorder = gaussian();
        let beta = 0.5;
        let m = disorder.m_beta(beta).unwrap();
        let full = p.x_full(&vec![m; 64]).unwrap();
        let expected = p
            .expected_x_on_path(&full_block_path(64), &disorder, beta)
            .unwrap();
        assert_relative_eq!(expected, full, max_relative = 1e-11);
        assert!(expected > 0.0);
    }

    #[test]
    fn tilted_expectation_degenerate_cases() {
        let env = trivial_envelope(64);
        let p = PotentialSpec::new(3, 64, &env).unwrap();
        let disorder = gaussian();
        assert_eq!(
            p.expected_x_on_path(&full_block_path(64), &disorder, 0.0).unwrap(),
            0.0
        );
        let sparse = RenewalPath {
            points: vec![5, 40],
            horizon: 64,
        };
        assert_eq!(
            p.expected_x_on_path(&sparse, &disorder, 0.5).unwrap(),
            0.0
        );
        let outside = RenewalPath {
            points: vec![5, 40, 65],
            horizon: 65,
        };
        assert!(p.expected_x_on_path(&outside, &disorder, 0.5).is_err());
        let unsorted = RenewalPath {
            points: vec![5, 5, 40],
            horizon: 64,
        };
        assert!(p.expected_x_on_path(&unsorted, &disorder, 0.5).is_err());
    }

    #[test]
    fn truncation_weight_counts_firing_blocks() {
        assert!(TruncationSpec::new(0.0).is_err());
        assert!(TruncationSpec::new(f64::NAN).is_err());
        let t = TruncationSpec::new(2.0).unwrap();
        let threshold = (4.0f64).exp();
        assert_relative_eq!(t.threshold(), threshold, max_relative = 1e-15);
        assert_eq!(t.g_weight(&[1.0, 2.0]), 1.0);
        assert_relative_eq!(
            t.g_weight(&[threshold + 1.0, 2.0]),
            (-2.0f64).exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            t.g_weight(&[threshold, threshold, threshold]),
            (-6.0f64).exp(),
            max_relative = 1e-15
        );
        let untruncated = TruncationSpec::new(f64::INFINITY).unwrap();
        assert_eq!(untruncated.g_weight(&[1e300, -1e300]), 1.0);
        let mut rng = derive_rng(63, "g-weight", 0);
        for _ in 0..100 {
            let xs = gaussian().sample_iid(4, &mut rng);
            let g = t.g_weight(&xs);
            assert!(g > 0.0 && g <= 1.0);
        }
    }

    #[test]
    fn chosen_truncation_level_solves_the_penalty_equation() {
        assert!(choose_k_cut(1.0, 2.0).is_err());
        assert!(choose_k_cut(0.5, 0.5).is_err());
        let k = choose_k_cut(6.0 / 7.0, 2.0).unwrap();
        assert_relative_eq!(k, 3.111_388_714_829_532_6, max_relative = 1e-12);
        // At the root, 2K^2 - cK exactly offsets log of the variance bound.
        assert_abs_diff_eq!(2.0 * k * k - 6.0 * k - (2.0f64).ln(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn holder_factor_is_bounded_and_consistent() {
        let env = trivial_envelope(64);
        let p = PotentialSpec::new(3, 64, &env).unwrap();
        let k_cut = choose_k_cut(DEFAULT_GAMMA, 2.0).unwrap();
        let t = TruncationSpec::new(k_cut).unwrap();
        let report = holder_factor(&t, &p, &gaussian(), DEFAULT_GAMMA, 2000, 64).unwrap();
        assert_relative_eq!(
            report.chebyshev_bound,
            1.204_854_593_862_256,
            max_relative = 1e-6
        );
        assert!(report.chebyshev_bound <= 2.0);
        assert_eq!(report.fire_probability, 0.0);
        assert_eq!(report.mc_estimate, 1.0);
        assert!(report.chebyshev_bound >= report.mc_estimate - 3.0 * report.mc_std_error);

        let untruncated = TruncationSpec::new(f64::INFINITY).unwrap();
        let free = holder_factor(&untruncated, &p, &gaussian(), DEFAULT_GAMMA, 200, 64).unwrap();
        assert_eq!(free.chebyshev_bound, 1.0);
        assert_eq!(free.mc_estimate, 1.0);
    }

    #[test]
    fn holder_factor_with_a_low_threshold_fires() {
        let env = trivial_envelope(64);
        let p = PotentialSpec::new(3, 64, &env).unwrap();
        let t = TruncationSpec::new(0.3).unwrap();
        let report = holder_factor(&t, &p, &gaussian(), DEFAULT_GAMMA, 2000, 65).unwrap();
        assert!(report.fire_probability > 0.0);
        assert!(report.mc_estimate > 1.0);
        assert!(
            report.chebyshev_bound >= report.mc_estimate - 3.0 * report.mc_std_error,
            "Chebyshev {} fell under the estimate {} (se {})",
            report.chebyshev_bound,
            report.mc_estimate,
            report.mc_std_error
        );
    }

    #[test]
    fn averaging_statistic_matches_its_limit() {
        let model = half_model(4096);
        let report = ce_statistic(&model, 4096, 1.0, 800, 66).unwrap();
        let target = ce_target(&model);
        assert!(
            (report.mean / target - 1.0).abs() < 0.1,
            "mean {} strayed from the limit {target}",
            report.mean
        );
        assert!(report.variance > 0.0);
    }

    #[test]
    fn averaging_statistic_concentrates_with_the_horizon() {
        let model = half_model(4096);
        let mut variances = Vec::new();
        for n in [256usize, 1024, 4096] {
            variances.push(ce_statistic(&model, n, 1.0, 400, 67).unwrap().variance);
        }
        assert!(
            variances[0] > variances[1] && variances[1] > variances[2],
            "variance ladder failed to decrease: {variances:?}"
        );
    }

    #[test]
    fn averaging_statistic_edge_cases() {
        let model = half_model(256);
        let tiny = ce_statistic(&model, 64, 0.01, 10, 68).unwrap();
        assert_eq!(tiny.mean, 0.0);
        assert_eq!(tiny.variance, 0.0);
        assert!(ce_statistic(&model, 64, 0.0, 10, 68).is_err());
        assert!(ce_statistic(&model, 0, 0.5, 10, 68).is_err());
        let l = SlowlyVaryingSpec::trivial(1.0, 0.25).unwrap();
        let skewed = build_model(0.8, &l, 128).unwrap();
        assert!(matches!(
            ce_statistic(&skewed, 64, 1.0, 10, 68),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn averaging_statistic_is_reproducible() {
        let model = half_model(512);
        let a = ce_statistic(&model, 512, 1.0, 100, 69).unwrap();
        let b = ce_statistic(&model, 512, 1.0, 100, 69).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.variance, b.variance);
        let c = ce_statistic(&model, 512, 1.0, 100, 70).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn bridge_statistic_is_nonnegative_and_span_guarded() {
        let model = half_model(1024);
        let pspec = PotentialSpec::new(3, 64, model.env()).unwrap();
        let stats = bridge_statistic_samples(&model, &pspec, 0, 256, 200, 71).unwrap();
        assert_eq!(stats.len(), 200);
        assert!(stats.iter().all(|&s| s >= 0.0));
        assert!(stats.iter().any(|&s| s > 0.0));
        assert!(bridge_statistic_samples(&model, &pspec, 0, 5, 10, 71).is_err());
        assert!(bridge_statistic_samples(&model, &pspec, 10, 10, 10, 71).is_err());
    }

    #[test]
    fn bridge_quantile_transfers_to_longer_spans() {
        let model = half_model(1024);
        let pspec = PotentialSpec::new(3, 64, model.env()).unwrap();
        let mut short = bridge_statistic_samples(&model, &pspec, 0, 256, 600, 72).unwrap();
        short.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let quantile = short[short.len() / 20];
        assert!(quantile > 0.0);
        let report = from_ce_test(&model, &pspec, 0, 1024, 600, quantile, 73).unwrap();
        assert!(
            report.fraction_above >= 0.92,
            "fraction {} fell below the transferred quantile level",
            report.fraction_above
        );
        let everything = from_ce_test(&model, &pspec, 0, 1024, 600, 0.0, 73).unwrap();
        assert!(everything.fraction_above >= 0.99);
        assert!(from_ce_test(&model, &pspec, 0, 1024, 600, -1.0, 73).is_err());
    }

    #[test]
    fn holder_chain_validates_its_inputs() {
        let model = half_model(1024);
        let sys = PinningSystem::new(&model, gaussian(), 0.5, 0.1).unwrap();
        let plan = CoarseGrainPlan::new(64, 9).unwrap();
        let pspec = PotentialSpec::new(3, 64, model.env()).unwrap();
        let tspec = TruncationSpec::new(3.0).unwrap();
        assert!(matches!(
            holder_chain_check(&sys, &plan, &[1, 9], &tspec, &pspec, DEFAULT_GAMMA, 10, 74),
            Err(Error::Budget { .. })
        ));
        let plan = CoarseGrainPlan::new(64, 3).unwrap();
        let mismatched = PotentialSpec::new(3, 32, model.env()).unwrap();
        assert!(holder_chain_check(
            &sys, &plan, &[1, 3], &tspec, &mismatched, DEFAULT_GAMMA, 10, 74
        )
        .is_err());
        assert!(holder_chain_check(
            &sys, &plan, &[1, 2], &tspec, &pspec, DEFAULT_GAMMA, 10, 74
        )
        .is_err());
    }

    #[test]
    fn holder_chain_inequality_holds_on_shared_samples() {
        let model = half_model(256);
        let sys = PinningSystem::new(&model, gaussian(), 0.5, 0.1).unwrap();
        let plan = CoarseGrainPlan::new(64, 3).unwrap();
        let pspec = PotentialSpec::new(3, 64, model.env()).unwrap();
        let k_cut = choose_k_cut(DEFAULT_GAMMA, 2.0).unwrap();
        let tspec = TruncationSpec::new(k_cut).unwrap();
        for blocks in [vec![1usize, 2, 3], vec![3]] {
            let report = holder_chain_check(
                &sys, &plan, &blocks, &tspec, &pspec, DEFAULT_GAMMA, 400, 75,
            )
            .unwrap();
            assert!(
                report.holds(),
                "split failed on {blocks:?}: lhs {} vs rhs {}",
                report.lhs,
                report.rhs
            );
            assert!(report.tilt_ratio > 0.0);
            assert!(report.truncation_factor >= 1.0);
            assert!(report.lhs_std_error.is_finite());
        }
    }

    #[test]
    fn tilted_expectation_shrinks_at_the_coarse_graining_length() {
        // The block length prescribed by a larger amplitude suppresses the
        // tilted expectation at shift h = 1/k.
        let l = SlowlyVaryingSpec::trivial(1.0, 0.25).unwrap();
        let beta = 0.8;
        let k_small = coarse_length(&ShiftParams::new(3, 1.0, beta).unwrap(), &l).unwrap().k;
        let k_large = coarse_length(&ShiftParams::new(3, 2.5, beta).unwrap(), &l).unwrap().k;
        assert_eq!(k_small, 7);
        assert_eq!(k_large, 132);
        let k_cut = choose_k_cut(DEFAULT_GAMMA, 2.0).unwrap();
        let tspec = TruncationSpec::new(k_cut).unwrap();
        let mut ratios = Vec::new();
        for k in [k_small as usize, k_large as usize] {
            let model = half_model(3 * k);
            let sys = PinningSystem::new(&model, gaussian(), beta, 1.0 / k as f64).unwrap();
            let plan = CoarseGrainPlan::new(k, 3).unwrap();
            let pspec = PotentialSpec::new(3, k, model.env()).unwrap();
            let report = holder_chain_check(
                &sys, &plan, &[1, 2, 3], &tspec, &pspec, DEFAULT_GAMMA, 800, 76,
            )
            .unwrap();
            assert!(report.holds());
            ratios.push(report.tilt_ratio);
        }
        assert!(
            ratios[1] < ratios[0],
            "tilted expectation should shrink with the block length: {ratios:?}"
        );
    }
}
