//! Distribution models, empirical inverses and Stieltjes integration against
//! a left-continuous quantile function.
//!
//! Integrals against `dF⁻¹` are taken over half-open intervals `[a, b)`: the
//! absolutely continuous part is integrated with the model's quantile density
//! and every atom of `F⁻¹` (a jump of the quantile function, i.e. a gap in the
//! support of `F`) located in `[a, b)` contributes its jump size.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::fmt;

use rand_chacha::rand_core::RngCore;

use crate::error::{domain, Error, Result};
use crate::numeric::integrate_adaptive;
use crate::stream::open_unit;
use crate::weights::WeightFunction;

/// Distance from 0 and 1 inside which unbounded quantiles are not integrated.
pub const SAFETY_BAND: f64 = 1e-6;

/// Absolute tolerance for one-dimensional Stieltjes integrals.
pub const STIELTJES_1D_TOL: f64 = 1e-10;

/// Absolute tolerance for the double integral of the covariance kernel.
pub const STIELTJES_2D_TOL: f64 = 1e-8;

/// A jump of the quantile function at `at` of height `jump`.
///
/// With a left-continuous `F⁻¹`, `F⁻¹(at)` is the lower value and
/// `F⁻¹(at+) = F⁻¹(at) + jump`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub at: f64,
    pub jump: f64,
}

/// Local Hölder condition `|F⁻¹(u) − F⁻¹(v)| ≤ C·|u − v|^ε` on an open
/// neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderCondition {
    pub exponent: f64,
    pub constant: f64,
    pub neighborhood: (f64, f64),
}

/// A distribution described through its left-continuous quantile function.
pub trait QuantileModel: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn cdf(&self, x: f64) -> f64;

    /// `F⁻¹(u) = inf{x : F(x) ≥ u}` for `u ∈ (0, 1]`; no argument checks.
    /// Unbounded models return `+∞` at `u = 1`.
    fn quantile(&self, u: f64) -> f64;

    /// Derivative of `F⁻¹` on the absolutely continuous part, if known.
    fn quantile_density(&self, u: f64) -> Option<f64>;

    /// Jumps of `F⁻¹` inside (0, 1).
    fn atoms(&self) -> Vec<Atom> {
        Vec::new()
    }

    /// True when `F` itself has no atoms (so `F(F⁻¹(u)) = u`).
    fn is_continuous(&self) -> bool {
        true
    }

    /// Whether `F⁻¹(0+)` and `F⁻¹(1)` are finite.
    fn bounded_support(&self) -> (bool, bool);

    /// The convention `F⁻¹(0) = F⁻¹(0+)`.
    fn quantile_at_zero(&self) -> f64 {
        self.quantile(f64::MIN_POSITIVE)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        self.quantile(open_unit(rng))
    }

    /// Hölder data on `(center − radius, center + radius)`. The default
    /// reports a Lipschitz condition (ε = 1) with the largest quantile
    /// density on a 201-point grid, and `None` when an atom falls inside.
    fn holder_near(&self, center: f64, radius: f64) -> Option<HolderCondition> {
        let lo = (center - radius).max(f64::MIN_POSITIVE);
        let hi = (center + radius).min(1.0 - f64::EPSILON);
        if self.atoms().iter().any(|a| a.at > lo && a.at < hi) {
            return None;
        }
        let mut c: f64 = 0.0;
        for i in 0..=200 {
            let u = lo + (hi - lo) * i as f64 / 200.0;
            c = c.max(self.quantile_density(u)?);
        }
        Some(HolderCondition { exponent: 1.0, constant: c, neighborhood: (lo, hi) })
    }
}

/// The shipped catalogue of models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Exponential {
        rate: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Pareto type I: `F(x) = 1 − (scale/x)^shape` for `x ≥ scale`.
    Pareto {
        shape: f64,
        scale: f64,
    },
    /// Half the mass uniform on [0, 1], half on [1 + gap, 2 + gap]. `F⁻¹`
    /// jumps by `gap` at u = 1/2.
    GappedUniform {
        gap: f64,
    },
}

impl Model {
    pub fn uniform() -> Self {
        Model::Uniform { lo: 0.0, hi: 1.0 }
    }

    pub fn exponential() -> Self {
        Model::Exponential { rate: 1.0 }
    }

    pub fn normal() -> Self {
        Model::Normal { mean: 0.0, sd: 1.0 }
    }

    pub fn pareto(shape: f64) -> Self {
        Model::Pareto { shape, scale: 1.0 }
    }

    /// Checks the parameters of the model.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Model::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Model::Exponential { rate } => rate.is_finite() && rate > 0.0,
            Model::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            Model::Pareto { shape, scale } => shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0,
            Model::GappedUniform { gap } => gap.is_finite() && gap > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid model parameters: {self:?}")))
        }
    }
}

impl QuantileModel for Model {
    fn name(&self) -> String {
        match *self {
            Model::Uniform { lo, hi } => format!("uniform({lo},{hi})"),
            Model::Exponential { rate } => format!("exponential({rate})"),
            Model::Normal { mean, sd } => format!("normal({mean},{sd})"),
            Model::Pareto { shape, scale } => format!("pareto({shape},{scale})"),
            Model::GappedUniform { gap } => format!("gapped_uniform({gap})"),
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        match *self {
            Model::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Model::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Model::Normal { mean, sd } => std_normal_cdf((x - mean) / sd),
            Model::Pareto { shape, scale } => {
                if x <= scale {
                    0.0
                } else {
                    -(shape * (scale / x).ln()).exp_m1()
                }
            }
            Model::GappedUniform { gap } => {
                if x <= 0.0 {
                    0.0
                } else if x <= 1.0 {
                    0.5 * x
                } else if x < 1.0 + gap {
                    0.5
                } else if x <= 2.0 + gap {
                    0.5 * (x - gap)
                } else {
                    1.0
                }
            }
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        match *self {
            Model::Uniform { lo, hi } => lo + (hi - lo) * u,
            Model::Exponential { rate } => -(-u).ln_1p() / rate,
            Model::Normal { mean, sd } => mean + sd * std_normal_quantile(u),
            Model::Pareto { shape, scale } => scale * (-(-u).ln_1p() / shape).exp(),
            Model::GappedUniform { gap } => {
                if u <= 0.5 {
                    2.0 * u
                } else {
                    2.0 * u + gap
                }
            }
        }
    }

    fn quantile_density(&self, u: f64) -> Option<f64> {
        Some(match *self {
            Model::Uniform { lo, hi } => hi - lo,
            Model::Exponential { rate } => 1.0 / (rate * (1.0 - u)),
            Model::Normal { sd, .. } => sd / std_normal_pdf(std_normal_quantile(u)),
            Model::Pareto { shape, scale } => scale / shape * (-(1.0 / shape + 1.0) * (-u).ln_1p()).exp(),
            Model::GappedUniform { .. } => 2.0,
        })
    }

    fn atoms(&self) -> Vec<Atom> {
        match *self {
            Model::GappedUniform { gap } => vec![Atom { at: 0.5, jump: gap }],
            _ => Vec::new(),
        }
    }

    fn bounded_support(&self) -> (bool, bool) {
        match self {
            Model::Uniform { .. } | Model::GappedUniform { .. } => (true, true),
            Model::Exponential { .. } | Model::Pareto { .. } => (true, false),
            Model::Normal { .. } => (false, false),
        }
    }

    fn quantile_at_zero(&self) -> f64 {
        match *self {
            Model::Normal { .. } => f64::NEG_INFINITY,
            Model::Pareto { scale, .. } => scale,
            _ => self.quantile(0.0),
        }
    }
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function, via `erfc` on both sides.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation refined by one
/// Halley step against the `erfc`-based distribution function.
pub fn std_normal_quantile(u: f64) -> f64 {
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if u >= 1.0 {
        return f64::INFINITY;
    }
    if u > 0.5 {
        // 1 − u is exact here.
        return -std_normal_quantile(1.0 - u);
    }
    let mut x = acklam(u);
    // Halley refinement on the lower half, where Φ(x) is evaluated without
    // cancellation.
    let e = 0.5 * libm::erfc(-x / SQRT_2) - u;
    let t = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x -= t / (1.0 + 0.5 * x * t);
    x
}

fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// `F⁻¹(u)` with the domain check `u ∈ (0, 1]`.
///
/// For unbounded models `u = 1` yields `+∞`; callers integrating through it
/// must reject that value.
pub fn quantile_eval<M: QuantileModel + ?Sized>(model: &M, u: f64) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(domain(format!("quantile level {u} outside (0, 1]")));
    }
    Ok(model.quantile(u))
}

/// Order statistics `X_{1:n} ≤ … ≤ X_{n:n}` of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrame {
    values: Vec<f64>,
}

impl SampleFrame {
    /// Sorts the sample; rejects empty input and NaN values.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(domain("empty sample"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(domain("sample contains NaN"));
        }
        values.sort_unstable_by(f64::total_cmp);
        Ok(Self { values })
    }

    /// Wraps values that are already sorted, checking the order.
    pub fn from_sorted(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(domain("empty sample"));
        }
        if values.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(domain("values are not non-decreasing"));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `X_{i:n}` with 1-based rank `i`.
    pub fn order_stat(&self, i: usize) -> f64 {
        self.values[i - 1]
    }

    /// Empirical inverse `F_n⁻¹(u) = X_{⌈nu⌉:n}`.
    pub fn empirical_inverse(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u <= 1.0) {
            return Err(domain(format!("empirical inverse level {u} outside (0, 1]")));
        }
        Ok(self.order_stat(ceil_rank(self.n(), u)))
    }
}

/// `⌈n·u⌉` clamped to `1..=n`. Levels within a few ulps of a grid point `i/n`
/// are treated as that grid point, so `i as f64 / n as f64` always maps to `i`.
pub fn ceil_rank(n: usize, u: f64) -> usize {
    let t = n as f64 * u;
    let r = t.round();
    let k = if (t - r).abs() <= 4.0 * f64::EPSILON * t.abs().max(1.0) { r } else { t.ceil() };
    (k as usize).clamp(1, n)
}

fn check_limits<M: QuantileModel + ?Sized>(model: &M, a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && 0.0 <= a && a < b && b <= 1.0) {
        return Err(domain(format!("integration range [{a}, {b}) not inside [0, 1]")));
    }
    let (lower, upper) = model.bounded_support();
    if !lower && a < SAFETY_BAND {
        return Err(domain(format!("lower limit {a} inside the safety band of an unbounded quantile")));
    }
    if !upper && b > 1.0 - SAFETY_BAND {
        return Err(domain(format!("upper limit {b} inside the safety band of an unbounded quantile")));
    }
    Ok(())
}

fn require_density<M: QuantileModel + ?Sized>(model: &M, a: f64, b: f64) -> Result<()> {
    let probe = 0.5 * (a + b);
    if model.quantile_density(probe).is_none() && model.atoms().is_empty() {
        return Err(Error::Capability(format!(
            "model {} supplies neither a quantile density nor an atom list",
            model.name()
        )));
    }
    Ok(())
}

fn density<M: QuantileModel + ?Sized>(model: &M, u: f64) -> f64 {
    model.quantile_density(u).unwrap_or(0.0)
}

/// `∫_[a,b) g(u) dF⁻¹(u)`.
pub fn stieltjes_1d<M, G>(g: G, model: &M, a: f64, b: f64) -> Result<f64>
where
    M: QuantileModel + ?Sized,
    G: Fn(f64) -> f64,
{
    stieltjes_1d_with_breaks(g, model, a, b, &[])
}

/// As [`stieltjes_1d`], additionally splitting the quadrature at `breaks`
/// (kinks of `g`).
pub fn stieltjes_1d_with_breaks<M, G>(g: G, model: &M, a: f64, b: f64, breaks: &[f64]) -> Result<f64>
where
    M: QuantileModel + ?Sized,
    G: Fn(f64) -> f64,
{
    check_limits(model, a, b)?;
    require_density(model, a, b)?;
    let atoms = model.atoms();
    let mut cuts: Vec<f64> = atoms.iter().map(|a| a.at).collect();
    cuts.extend_from_slice(breaks);
    let continuous = integrate_adaptive(|u| g(u) * density(model, u), a, b, &cuts, STIELTJES_1D_TOL)?;
    let mut total = continuous;
    for atom in atoms.iter().filter(|atom| atom.at >= a && atom.at < b) {
        let v = g(atom.at) * atom.jump;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite integrand at atom {}", atom.at)));
        }
        total += v;
    }
    Ok(total)
}

/// `∫∫_[a,b)² J(u)J(v)(u∧v − uv) dF⁻¹(u) dF⁻¹(v)`.
///
/// The continuous part is evaluated on the triangle `v < u`, where the kernel
/// is `J(u)(1−u)·J(v)v`, and doubled; the diagonal carries no mass there.
/// Atoms contribute the mixed terms and the atom-by-atom sum (including the
/// diagonal). The inner integral runs at a tolerance ten times tighter than
/// the outer one.
pub fn stieltjes_2d_kernel<M, W>(j: &W, model: &M, a: f64, b: f64) -> Result<f64>
where
    M: QuantileModel + ?Sized,
    W: WeightFunction + ?Sized,
{
    check_limits(model, a, b)?;
    require_density(model, a, b)?;
    let atoms: Vec<Atom> = model.atoms().into_iter().filter(|atom| atom.at >= a && atom.at < b).collect();
    let mut cuts: Vec<f64> = model.atoms().iter().map(|a| a.at).collect();
    cuts.extend(j.breakpoints());

    let outer_tol = STIELTJES_2D_TOL / 4.0;
    let inner_tol = outer_tol / 10.0;
    let lower = |v: f64| j.eval(v) * v * density(model, v);
    let upper = |u: f64| j.eval(u) * (1.0 - u) * density(model, u);

    let mut failure: Option<Error> = None;
    let continuous = integrate_adaptive(
        |u| {
            let q = upper(u);
            if q == 0.0 {
                return 0.0;
            }
            match integrate_adaptive(lower, a, u, &cuts, inner_tol) {
                Ok(inner) => q * inner,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        a,
        b,
        &cuts,
        outer_tol,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut total = 2.0 * continuous;

    for atom in &atoms {
        let (uj, jump) = (atom.at, atom.jump);
        let below = integrate_adaptive(lower, a, uj, &cuts, inner_tol)?;
        let above = integrate_adaptive(upper, uj, b, &cuts, inner_tol)?;
        let cross = j.eval(uj) * ((1.0 - uj) * below + uj * above);
        total += 2.0 * jump * cross;
        for other in &atoms {
            let (ul, jl) = (other.at, other.jump);
            total += jump * jl * j.eval(uj) * j.eval(ul) * (uj.min(ul) - uj * ul);
        }
    }
    if !total.is_finite() {
        return Err(Error::Numeric("non-finite double integral".into()));
    }
    Ok(total)
}
