//! Deterministic numerical primitives: log-domain accumulation, adaptive
//! quadrature, root bracketing and least-squares lines.

/// Streaming log-sum-exp accumulator.
///
/// Accumulates `log(sum_i exp(x_i))` with a running maximum shift so the
/// partial sum never overflows or collapses to zero.  Pushing `-inf` terms
/// is a no-op; an empty accumulator evaluates to `-inf`.
#[derive(Debug, Clone, Copy)]
pub struct LogSumAcc {
    max: f64,
    sum: f64,
}

impl LogSumAcc {
    pub fn new() -> Self {
        LogSumAcc {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            // New maximum: rescale the partial sum to the new reference.
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

impl Default for LogSumAcc {
    fn default() -> Self {
        Self::new()
    }
}

/// `log(sum_i exp(x_i))` of a slice via a single shift by the maximum.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Compensated sum of a slice (Neumaier's variant, which keeps the
/// correction term even when a summand exceeds the running total).
pub fn kahan_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// Subdivides until the Richardson error estimate of each panel drops below
/// `rel_tol` times the running magnitude of the integral (with a small
/// absolute floor so integrals near zero terminate).
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson_panel(a, b, fa, fm, fb);
    let scale = whole.abs().max(1e-300);
    simpson_recurse(f, a, b, fa, fm, fb, whole, rel_tol * scale, 52)
}

fn simpson_panel(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn simpson_recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_panel(a, m, fa, flm, fm);
    let right = simpson_panel(m, b, fm, frm, fb);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        // Richardson extrapolation of the two half-panels.
        left + right + err / 15.0
    } else {
        simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Bisection root of a continuous `f` on `[lo, hi]`, assuming
/// `f(lo)` and `f(hi)` have opposite signs.  Stops when the bracket is
/// narrower than `tol` and returns the midpoint.
pub fn bisect_root<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64) -> f64 {
    let mut lo = lo;
    let mut hi = hi;
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid == 0.0 {
            return mid;
        }
        if (fmid > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest `n >= 1` with `pred(n)` true, assuming `pred` is monotone
/// (false below some threshold, true at and above it).  Doubles an upper
/// bracket, then bisects.  Returns `None` if the predicate is still false
/// at `cap`.
pub fn first_true<P: Fn(u64) -> bool>(pred: &P, cap: u64) -> Option<u64> {
    if pred(1) {
        return Some(1);
    }
    let mut lo = 1u64; // pred(lo) is false
    let mut hi = 2u64;
    while !pred(hi) {
        if hi >= cap {
            return None;
        }
        lo = hi;
        hi = hi.saturating_mul(2).min(cap);
    }
    // Invariant: pred(lo) false, pred(hi) true.
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Least-squares line through `(x_i, y_i)`.
#[derive(Debug, Clone, Copy)]
pub struct FittedLine {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination of the fit.
    pub r_squared: f64,
}

/// Ordinary least squares fit of `y` on `x`.  Requires at least two
/// distinct abscissas; degenerate input yields a flat line with
/// `r_squared = 0`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> FittedLine {
    assert_eq!(xs.len(), ys.len(), "mismatched regression input lengths");
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if sxx == 0.0 {
        return FittedLine {
            slope: 0.0,
            intercept: mean_y,
            r_squared: 0.0,
        };
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    FittedLine {
        slope,
        intercept: mean_y - slope * mean_x,
        r_squared,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn logsumexp_matches_direct_sum_in_safe_range() {
        let xs = [0.3, -1.2, 2.5, 0.0];
        let direct: f64 = xs.iter().map(|&x: &f64| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(logsumexp(&xs), direct, max_relative = 1e-14);
        let mut acc = LogSumAcc::new();
        for &x in &xs {
            acc.push(x);
        }
        assert_relative_eq!(acc.value(), direct, max_relative = 1e-14);
    }

    #[test]
    fn logsumexp_survives_large_shifts() {
        let xs = [-1000.0, -1000.0];
        assert_relative_eq!(logsumexp(&xs), -1000.0 + 2f64.ln(), max_relative = 1e-14);
        let xs = [700.0, 710.0];
        let expect = 710.0 + (1.0 + (-10.0f64).exp()).ln();
        assert_relative_eq!(logsumexp(&xs), expect, max_relative = 1e-14);
        let mut acc = LogSumAcc::new();
        acc.push(700.0);
        acc.push(710.0);
        assert_relative_eq!(acc.value(), expect, max_relative = 1e-14);
    }

    #[test]
    fn empty_log_sums_are_minus_infinity() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(LogSumAcc::new().value(), f64::NEG_INFINITY);
        let mut acc = LogSumAcc::new();
        acc.push(f64::NEG_INFINITY);
        assert_eq!(acc.value(), f64::NEG_INFINITY);
    }

    #[test]
    fn simpson_integrates_smooth_functions() {
        // int_0^1 x^2 = 1/3, int_0^pi sin = 2.
        let v = adaptive_simpson(&|x: f64| x * x, 0.0, 1.0, 1e-12);
        assert_relative_eq!(v, 1.0 / 3.0, max_relative = 1e-11);
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert_relative_eq!(v, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn simpson_handles_slowly_decaying_tails_after_substitution() {
        // int_1^inf x^{-3/2} dx = 2 becomes int_0^log(X) e^{-t/2} dt in
        // t = log x, truncated far out.
        let v = adaptive_simpson(&|t: f64| (-0.5 * t).exp(), 0.0, 120.0, 1e-12);
        assert_relative_eq!(v, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn bisection_finds_roots() {
        let r = bisect_root(&|x: f64| x * x - 2.0, 0.0, 2.0, 1e-14);
        assert_relative_eq!(r, 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn first_true_finds_thresholds() {
        assert_eq!(first_true(&|n| n >= 37, 1_000), Some(37));
        assert_eq!(first_true(&|n| n >= 1, 1_000), Some(1));
        assert_eq!(first_true(&|n| n >= 1024, 1024), Some(1024));
        assert_eq!(first_true(&|n| n > 2_000, 1_000), None);
    }

    #[test]
    fn line_fit_recovers_exact_lines() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let fit = fit_line(&xs, &ys);
        assert_relative_eq!(fit.slope, 3.0, max_relative = 1e-12);
        assert_relative_eq!(fit.intercept, -1.0, max_relative = 1e-12);
        assert!(fit.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn kahan_sum_beats_naive_on_ill_conditioned_input() {
        let xs = vec![1.0e16, 1.0, -1.0e16, 1.0];
        assert_eq!(kahan_sum(&xs), 2.0);
    }
}
