//! Slowly varying functions L, their integral transform tilde-L, and the
//! monotone envelope used by the renewal-function bounds.
//!
//! Three kinds are supported: constant functions, logarithmic families
//! a*(log x)^b, and tabulated functions on a finite grid.  The transform
//! tilde_L(x) = int_0^x dy / ((1+y) L(y)^2) drives both the coarse-graining
//! length and the normalization of the q-body potentials, so it is computed
//! to much tighter tolerance than any downstream test uses.

use crate::numeric::adaptive_simpson;
use crate::{Error, Result};

const SIMPSON_REL_TOL: f64 = 1e-9;

/// Functional form of a slowly varying function.
#[derive(Debug, Clone, PartialEq)]
pub enum SlowKind {
    /// Constant c > 0.
    Trivial { c: f64 },
    /// a*(log x)^b for x >= e, clamped to a on [0, e) so the function is
    /// positive and locally bounded near the origin.
    Logarithmic { a: f64, b: f64 },
    /// Piecewise-linear interpolation of (x, L(x)) pairs; queries outside
    /// the grid are range errors.
    Tabulated { points: Vec<(f64, f64)> },
}

/// A validated slowly varying function together with the marginality index
/// epsilon of the slow-growth assumption L(x) = o((log x)^{1/2 - epsilon}).
#[derive(Debug, Clone, PartialEq)]
pub struct SlowlyVaryingSpec {
    kind: SlowKind,
    epsilon: f64,
}

impl SlowlyVaryingSpec {
    /// Constant function L = c.
    pub fn trivial(c: f64, epsilon: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Construction(format!(
                "trivial slowly varying constant must be positive, got {c}"
            )));
        }
        Self::validated(SlowKind::Trivial { c }, epsilon)
    }

    /// Logarithmic family a*(log x)^b.
    pub fn logarithmic(a: f64, b: f64, epsilon: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Construction(format!(
                "logarithmic slowly varying needs a > 0 and finite b, got a={a}, b={b}"
            )));
        }
        Self::validated(SlowKind::Logarithmic { a, b }, epsilon)
    }

    /// Tabulated function; `points` must be strictly increasing in x with
    /// positive values.
    pub fn tabulated(points: Vec<(f64, f64)>, epsilon: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Construction(
                "tabulated slowly varying needs at least two grid points".into(),
            ));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Construction(
                    "tabulated grid abscissas must be strictly increasing".into(),
                ));
            }
        }
        if points.iter().any(|&(x, l)| !x.is_finite() || !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Construction(
                "tabulated values must be finite and positive".into(),
            ));
        }
        if points[0].0 < 0.0 {
            return Err(Error::Construction(
                "tabulated grid must start at x >= 0".into(),
            ));
        }
        Self::validated(SlowKind::Tabulated { points }, epsilon)
    }

    fn validated(kind: SlowKind, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 0.5) {
            return Err(Error::Construction(format!(
                "epsilon must lie in (0, 1/2], got {epsilon}"
            )));
        }
        // For b < 1/2 the slow-growth assumption holds exactly when
        // epsilon < min(1/2 - b, 1/2); enforce it so the index is honest.
        if let SlowKind::Logarithmic { b, .. } = kind {
            if b < 0.5 {
                let cap = (0.5 - b).min(0.5);
                if epsilon >= cap {
                    return Err(Error::Construction(format!(
                        "epsilon must be < min(1/2 - b, 1/2) = {cap} for b = {b}, got {epsilon}"
                    )));
                }
            }
        }
        Ok(SlowlyVaryingSpec { kind, epsilon })
    }

    pub fn kind(&self) -> &SlowKind {
        &self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The same function multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::Construction(format!(
                "scaling factor must be positive, got {factor}"
            )));
        }
        let kind = match &self.kind {
            SlowKind::Trivial { c } => SlowKind::Trivial { c: c * factor },
            SlowKind::Logarithmic { a, b } => SlowKind::Logarithmic {
                a: a * factor,
                b: *b,
            },
            SlowKind::Tabulated { points } => SlowKind::Tabulated {
                points: points.iter().map(|&(x, l)| (x, l * factor)).collect(),
            },
        };
        Ok(SlowlyVaryingSpec {
            kind,
            epsilon: self.epsilon,
        })
    }

    /// L(x).
    pub fn eval_l(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::OutOfRange {
                what: "eval_l argument",
                value: x,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        match &self.kind {
            SlowKind::Trivial { c } => Ok(*c),
            SlowKind::Logarithmic { a, b } => {
                let lx = x.max(std::f64::consts::E).ln();
                Ok(a * lx.powf(*b))
            }
            SlowKind::Tabulated { points } => {
                let (x0, xn) = (points[0].0, points[points.len() - 1].0);
                if x < x0 || x > xn {
                    return Err(Error::OutOfRange {
                        what: "tabulated query",
                        value: x,
                        min: x0,
                        max: xn,
                    });
                }
                // partition_point finds the first grid abscissa > x.
                let hi = points.partition_point(|&(gx, _)| gx <= x);
                if hi == points.len() {
                    return Ok(points[points.len() - 1].1);
                }
                let (xa, la) = points[hi - 1];
                let (xb, lb) = points[hi];
                let t = (x - xa) / (xb - xa);
                Ok(la + t * (lb - la))
            }
        }
    }

    /// tilde_L(x) = int_0^x dy / ((1+y) L(y)^2).
    pub fn eval_tilde_l(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::OutOfRange {
                what: "eval_tilde_l argument",
                value: x,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        match &self.kind {
            SlowKind::Trivial { c } => Ok(x.ln_1p() / (c * c)),
            SlowKind::Logarithmic { .. } => self.tilde_l_logarithmic(x.ln_1p(), x.ln()),
            SlowKind::Tabulated { points } => tilde_l_tabulated(points, x),
        }
    }

    /// tilde_L(x) for x given through its logarithm, usable when x itself
    /// overflows.  `ln_x` must be >= 0 (i.e. x >= 1).
    pub fn eval_tilde_l_log(&self, ln_x: f64) -> Result<f64> {
        if !(ln_x >= 0.0) {
            return Err(Error::OutOfRange {
                what: "eval_tilde_l_log argument",
                value: ln_x,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        match &self.kind {
            SlowKind::Trivial { c } => {
                // log(1+x) = log x + log(1 + 1/x).
                Ok((ln_x + (-ln_x).exp().ln_1p()) / (c * c))
            }
            SlowKind::Logarithmic { .. } => {
                let ln_1p = ln_x + (-ln_x).exp().ln_1p();
                self.tilde_l_logarithmic(ln_1p, ln_x)
            }
            SlowKind::Tabulated { points } => {
                if ln_x > 700.0 {
                    return Err(Error::OutOfRange {
                        what: "tabulated log-scale query",
                        value: ln_x,
                        min: 0.0,
                        max: 700.0,
                    });
                }
                tilde_l_tabulated(points, ln_x.exp())
            }
        }
    }

    fn tilde_l_logarithmic(&self, ln_1p_x: f64, ln_x: f64) -> Result<f64> {
        let (a, b) = match self.kind {
            SlowKind::Logarithmic { a, b } => (a, b),
            _ => unreachable!("logarithmic evaluation on non-logarithmic kind"),
        };
        // On [0, e) the function is clamped to a, so that piece integrates
        // in closed form; b = 0 is constant everywhere.
        if b == 0.0 {
            return Ok(ln_1p_x / (a * a));
        }
        let head_upper = ln_1p_x.min((1.0 + std::f64::consts::E).ln());
        let head = head_upper / (a * a);
        if ln_x <= 1.0 {
            return Ok(head);
        }
        // Beyond e, substitute t = log y: the integrand becomes
        // t^{-2b} / (1 + e^{-t}), smooth on [1, log x].
        let integrand = |t: f64| t.powf(-2.0 * b) / (1.0 + (-t).exp());
        let tail = adaptive_simpson(&integrand, 1.0, ln_x, SIMPSON_REL_TOL) / (a * a);
        Ok(head + tail)
    }
}

fn tilde_l_tabulated(points: &[(f64, f64)], x: f64) -> Result<f64> {
    let (x0, xn) = (points[0].0, points[points.len() - 1].0);
    if x0 != 0.0 {
        return Err(Error::Unsupported(
            "tilde_L of a tabulated function needs a grid starting at x = 0".into(),
        ));
    }
    if x > xn {
        return Err(Error::OutOfRange {
            what: "tabulated query",
            value: x,
            min: x0,
            max: xn,
        });
    }
    let g = |y: f64, l: f64| 1.0 / ((1.0 + y) * l * l);
    let mut acc = 0.0;
    let mut prev = (points[0].0, g(points[0].0, points[0].1));
    for &(gx, gl) in &points[1..] {
        if gx >= x {
            // Final partial panel up to x with interpolated L.
            let (xa, la) = points[points.partition_point(|&(px, _)| px < gx) - 1];
            let t = if gx > xa { (x - xa) / (gx - xa) } else { 0.0 };
            let lx = la + t * (gl - la);
            acc += 0.5 * (x - prev.0) * (prev.1 + g(x, lx));
            return Ok(acc);
        }
        let val = g(gx, gl);
        acc += 0.5 * (gx - prev.0) * (prev.1 + val);
        prev = (gx, val);
    }
    Ok(acc)
}

/// Monotone envelope of a slowly varying function on an integer grid.
///
/// Lbold is the smallest pointwise majorant of L making x -> 1/(sqrt(x)
/// Lbold(x)) non-increasing; cL is the largest constant with cL*Lbold <= L
/// on the grid.  Rhalf(x) = 1/(sqrt(x+1) Lbold(x+1)) and tildeLbold is the
/// transform of the envelope itself.
#[derive(Debug, Clone)]
pub struct EnvelopeTable {
    n_max: usize,
    /// Lbold on 0..=n_max+1 (one past the grid, so Rhalf covers the grid).
    lbold: Vec<f64>,
    c_l: f64,
    rhalf: Vec<f64>,
    tilde_lbold: Vec<f64>,
    c_limit: f64,
}

impl EnvelopeTable {
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Envelope value at grid point `x <= n_max + 1`.
    pub fn lbold(&self, x: usize) -> f64 {
        self.lbold[x]
    }

    /// Largest constant with cL*Lbold <= L on the grid.
    pub fn c_l(&self) -> f64 {
        self.c_l
    }

    /// Rhalf(x) = 1/(sqrt(x+1) Lbold(x+1)) for x <= n_max.
    pub fn rhalf(&self, x: usize) -> f64 {
        self.rhalf[x]
    }

    /// Transform of the envelope at grid point `x <= n_max`.
    pub fn tilde_lbold(&self, x: usize) -> f64 {
        self.tilde_lbold[x]
    }

    /// Envelope-to-function ratio at the end of the grid, the finite-size
    /// stand-in for the limit constant of the envelope representation.
    pub fn c_limit(&self) -> f64 {
        self.c_limit
    }
}

/// Build the monotone envelope of `spec` on the grid 0..N_max.
pub fn build_envelope(spec: &SlowlyVaryingSpec, n_max: usize) -> Result<EnvelopeTable> {
    if n_max < 2 {
        return Err(Error::Construction(format!(
            "envelope grid needs N_max >= 2, got {n_max}"
        )));
    }
    let mut l_vals = Vec::with_capacity(n_max + 2);
    for x in 0..=n_max + 1 {
        let l = spec.eval_l(x as f64)?;
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::Construction(format!(
                "slowly varying spec yields non-positive value {l} at x = {x}"
            )));
        }
        l_vals.push(l);
    }

    // Single left-to-right pass: running_sup tracks sup_{y<=x} L(y) sqrt(y),
    // so Lbold(x) = max(L(x), running_sup / sqrt(x)).
    let mut lbold = Vec::with_capacity(n_max + 2);
    lbold.push(l_vals[0]);
    let mut running_sup = 0.0f64;
    for x in 1..=n_max + 1 {
        running_sup = running_sup.max(l_vals[x] * (x as f64).sqrt());
        lbold.push(l_vals[x].max(running_sup / (x as f64).sqrt()));
    }

    let c_l = (1..=n_max)
        .map(|x| l_vals[x] / lbold[x])
        .fold(f64::INFINITY, f64::min)
        .min(1.0);

    let rhalf: Vec<f64> = (0..=n_max)
        .map(|x| 1.0 / (((x + 1) as f64).sqrt() * lbold[x + 1]))
        .collect();

    let mut tilde_lbold = Vec::with_capacity(n_max + 1);
    tilde_lbold.push(0.0);
    let g = |x: usize| 1.0 / ((1.0 + x as f64) * lbold[x] * lbold[x]);
    let mut acc = 0.0;
    for x in 1..=n_max {
        acc += 0.5 * (g(x - 1) + g(x));
        tilde_lbold.push(acc);
    }

    let c_limit = lbold[n_max] / l_vals[n_max];

    Ok(EnvelopeTable {
        n_max,
        lbold,
        c_l,
        rhalf,
        tilde_lbold,
        c_limit,
    })
}

/// Smallest constant on the grid {1..x_max}^2 for the Potter-type bound
/// L(x)/L(y) <= c * max(x/y, y/x)^a.
pub fn potter_constant(spec: &SlowlyVaryingSpec, a: f64, x_max: usize) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::Construction(format!(
            "Potter exponent must be positive, got {a}"
        )));
    }
    let l_vals: Vec<f64> = (1..=x_max)
        .map(|x| spec.eval_l(x as f64))
        .collect::<Result<_>>()?;
    let mut c = 1.0f64;
    for i in 0..l_vals.len() {
        for j in i + 1..l_vals.len() {
            // max(x/y, y/x) = (j+1)/(i+1) since j > i.
            let penalty = ((j + 1) as f64 / (i + 1) as f64).powf(a);
            c = c.max(l_vals[i] / (l_vals[j] * penalty));
            c = c.max(l_vals[j] / (l_vals[i] * penalty));
        }
    }
    Ok(c)
}
