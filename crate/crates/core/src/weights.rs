//! Weight functions, trimming specifications and coefficient generation.

use std::borrow::Cow;
use std::fmt;
use std::ops::RangeInclusive;
use std::sync::Arc;

use crate::error::{config, domain, Error, Result};
use crate::numeric::{gl5, CompensatedSum};

/// A Lipschitz weight (score) function `J` on an open interval `I`.
pub trait WeightFunction: Send + Sync + fmt::Debug {
    fn eval(&self, u: f64) -> f64;

    /// Endpoints of the open interval on which `J` is defined.
    fn domain(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    /// Declared Lipschitz constant `C`.
    fn lipschitz(&self) -> f64;

    /// Points where `J` is not smooth; quadrature never straddles them.
    fn breakpoints(&self) -> &[f64] {
        &[]
    }

    /// Oriented `∫_a^b J(u) du`.
    ///
    /// Splits at the breakpoints and into pieces no wider than 1/64, then
    /// applies the 5-point Gauss-Legendre rule to each piece. For the
    /// piecewise-polynomial catalogue this is exact up to rounding, which keeps
    /// integrals additive across different subdivisions of the same range.
    fn integral(&self, a: f64, b: f64) -> f64 {
        piecewise_gl5(|u| self.eval(u), self.breakpoints(), a, b)
    }
}

pub(crate) fn piecewise_gl5<F: Fn(f64) -> f64>(f: F, breaks: &[f64], a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let rule = gl5();
    let mut acc = 0.0;
    let mut start = lo;
    let piece = |s: f64, e: f64, acc: &mut f64| {
        let parts = ((e - s) * 64.0).ceil().max(1.0) as usize;
        if parts == 1 {
            *acc += rule.integrate(&f, s, e);
        } else {
            let w = (e - s) / parts as f64;
            for p in 0..parts {
                let ps = s + w * p as f64;
                let pe = if p + 1 == parts { e } else { ps + w };
                *acc += rule.integrate(&f, ps, pe);
            }
        }
    };
    for &bp in breaks {
        if bp > start && bp < hi {
            piece(start, bp, &mut acc);
            start = bp;
        }
    }
    piece(start, hi, &mut acc);
    sign * acc
}

/// Shared handle to a weight function.
pub type SharedWeight = Arc<dyn WeightFunction>;

/// Weight functions selectable by name from configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightFn {
    Constant(f64),
    /// `a + b·u`
    Linear {
        intercept: f64,
        slope: f64,
    },
    /// `c0 + c1·u + c2·u²`
    Quadratic {
        c0: f64,
        c1: f64,
        c2: f64,
    },
    /// `min(hi, max(lo, p(u)))` for a polynomial `p` of degree at most 9.
    ClampedPoly {
        coeffs: Vec<f64>,
        lo: f64,
        hi: f64,
        kinks: Vec<f64>,
    },
}

impl WeightFn {
    /// Builds a clamped polynomial, locating the kinks where `p` crosses the
    /// clamp levels inside (0, 1).
    pub fn clamped_poly(coeffs: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() > 10 {
            return Err(config("clamped polynomial needs between 1 and 10 coefficients"));
        }
        if !(lo < hi) || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(config("clamped polynomial needs finite coefficients and lo < hi"));
        }
        let p = |u: f64| horner(&coeffs, u);
        let mut kinks = Vec::new();
        const GRID: usize = 10_000;
        for level in [lo, hi] {
            let g = |u: f64| p(u) - level;
            let mut prev_u = 0.0;
            let mut prev = g(0.0);
            for i in 1..=GRID {
                let u = i as f64 / GRID as f64;
                let cur = g(u);
                if prev == 0.0 && i > 1 {
                    kinks.push(prev_u);
                } else if prev * cur < 0.0 {
                    kinks.push(bisect(&g, prev_u, u));
                }
                prev_u = u;
                prev = cur;
            }
        }
        kinks.retain(|&k| k > 0.0 && k < 1.0);
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        Ok(WeightFn::ClampedPoly { coeffs, lo, hi, kinks })
    }

    pub fn shared(self) -> SharedWeight {
        Arc::new(self)
    }
}

fn horner(coeffs: &[f64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
}

fn bisect<G: Fn(f64) -> f64>(g: &G, mut a: f64, mut b: f64) -> f64 {
    let ga = g(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if (g(m) < 0.0) == (ga < 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

impl WeightFunction for WeightFn {
    fn eval(&self, u: f64) -> f64 {
        match self {
            WeightFn::Constant(c) => *c,
            WeightFn::Linear { intercept, slope } => intercept + slope * u,
            WeightFn::Quadratic { c0, c1, c2 } => c0 + u * (c1 + u * c2),
            WeightFn::ClampedPoly { coeffs, lo, hi, .. } => horner(coeffs, u).clamp(*lo, *hi),
        }
    }

    fn lipschitz(&self) -> f64 {
        match self {
            WeightFn::Constant(_) => 0.0,
            WeightFn::Linear { slope, .. } => slope.abs(),
            WeightFn::Quadratic { c1, c2, .. } => c1.abs().max((c1 + 2.0 * c2).abs()),
            WeightFn::ClampedPoly { coeffs, .. } => coeffs.iter().enumerate().map(|(k, c)| k as f64 * c.abs()).sum(),
        }
    }

    fn breakpoints(&self) -> &[f64] {
        match self {
            WeightFn::ClampedPoly { kinks, .. } => kinks,
            _ => &[],
        }
    }
}

/// `J` extended by constants outside `(α, 1−β]`, defined on all of [0, 1].
#[derive(Debug, Clone)]
pub struct ExtendedWeight {
    inner: SharedWeight,
    alpha: f64,
    beta: f64,
    at_alpha: f64,
    at_upper: f64,
    breaks: Vec<f64>,
}

impl ExtendedWeight {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn inner(&self) -> &SharedWeight {
        &self.inner
    }
}

/// Builds `J_w(u) = J(α)` for `u ≤ α`, `J(u)` on `(α, 1−β]`, `J(1−β)` above.
pub fn extended_weight(j: SharedWeight, alpha: f64, beta: f64) -> Result<ExtendedWeight> {
    let upper = 1.0 - beta;
    if !(alpha >= 0.0 && beta >= 0.0 && alpha < upper) {
        return Err(config(format!("need 0 ≤ α < 1 − β ≤ 1, got α={alpha}, β={beta}")));
    }
    let (lo, hi) = j.domain();
    if alpha < lo || upper > hi {
        return Err(domain(format!("weight function domain ({lo}, {hi}) does not cover [{alpha}, {upper}]")));
    }
    let mut breaks: Vec<f64> = j.breakpoints().iter().copied().filter(|&b| b > alpha && b < upper).collect();
    breaks.push(alpha);
    breaks.push(upper);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    Ok(ExtendedWeight { at_alpha: j.eval(alpha), at_upper: j.eval(upper), inner: j, alpha, beta, breaks })
}

impl WeightFunction for ExtendedWeight {
    fn eval(&self, u: f64) -> f64 {
        if u <= self.alpha {
            self.at_alpha
        } else if u <= 1.0 - self.beta {
            self.inner.eval(u)
        } else {
            self.at_upper
        }
    }

    fn domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }

    fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
        let upper = 1.0 - self.beta;
        let mut acc = 0.0;
        if lo < self.alpha {
            acc += self.at_alpha * (hi.min(self.alpha) - lo);
        }
        let (ms, me) = (lo.max(self.alpha), hi.min(upper));
        if ms < me {
            acc += self.inner.integral(ms, me);
        }
        if hi > upper {
            acc += self.at_upper * (hi - lo.max(upper));
        }
        sign * acc
    }
}

/// Largest slope of `J` between neighbouring points of an `points`-point grid
/// on `[lo, hi]`.
pub fn measured_lipschitz<W: WeightFunction + ?Sized>(j: &W, lo: f64, hi: f64, points: usize) -> f64 {
    let points = points.max(2);
    let step = (hi - lo) / (points - 1) as f64;
    let mut prev = j.eval(lo);
    let mut worst: f64 = 0.0;
    for i in 1..points {
        let u = lo + step * i as f64;
        let cur = j.eval(u);
        worst = worst.max((cur - prev).abs() / step);
        prev = cur;
    }
    worst
}

/// Checks the declared Lipschitz constant on a 10⁴-point grid over
/// `domain ∩ [0, 1]`; returns the measured constant.
pub fn verify_lipschitz<W: WeightFunction + ?Sized>(j: &W) -> Result<f64> {
    const POINTS: usize = 10_000;
    let (dlo, dhi) = j.domain();
    let lo = dlo.max(0.0);
    let hi = dhi.min(1.0);
    let step = (hi - lo) / (POINTS + 1) as f64;
    let c = j.lipschitz();
    let mut prev_u = lo + step;
    let mut prev = j.eval(prev_u);
    let mut worst: f64 = 0.0;
    for i in 2..=POINTS {
        let u = lo + step * i as f64;
        let cur = j.eval(u);
        let diff = (cur - prev).abs();
        if diff > c * (u - prev_u) + 1e-12 {
            return Err(config(format!(
                "declared Lipschitz constant {c} violated near u={u}: slope {}",
                diff / (u - prev_u)
            )));
        }
        worst = worst.max(diff / (u - prev_u));
        prev_u = u;
        prev = cur;
    }
    Ok(worst)
}

/// How the trimming counts are derived from the limits α, β.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrimRule {
    /// `k_n = round(α·n)`, `m_n = round(β·n)`.
    Fixed,
    /// `k_n = round(n·(α + M·n^{−1/(2+ε)}))` and likewise for `m_n`: the
    /// slowest rate still allowed by the trimming-rate condition.
    Rate { constant: f64 },
    /// The same explicit counts at every n.
    Counts { k: usize, m: usize },
}

/// Trimming counts and limits for one sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimSpec {
    n: usize,
    k: usize,
    m: usize,
    alpha: f64,
    beta: f64,
    epsilon: f64,
}

impl TrimSpec {
    pub fn new(n: usize, k: usize, m: usize, alpha: f64, beta: f64, epsilon: f64) -> Result<Self> {
        if n == 0 {
            return Err(config("sample size n must be positive"));
        }
        if m > n || k >= n - m {
            return Err(config(format!(
                "trimming counts must satisfy 0 ≤ k_n < n − m_n ≤ n (n={n}, k_n={k}, m_n={m})"
            )));
        }
        if !(alpha >= 0.0 && beta >= 0.0 && alpha < 1.0 - beta) {
            return Err(config(format!("limits must satisfy 0 ≤ α < 1 − β ≤ 1 (α={alpha}, β={beta})")));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(config(format!("Hölder exponent ε={epsilon} outside (0, 1]")));
        }
        Ok(Self { n, k, m, alpha, beta, epsilon })
    }

    pub fn from_rule(n: usize, alpha: f64, beta: f64, epsilon: f64, rule: TrimRule) -> Result<Self> {
        let nf = n as f64;
        let shift = match rule {
            TrimRule::Fixed => 0.0,
            TrimRule::Rate { constant } => constant * nf.powf(-1.0 / (2.0 + epsilon)),
            TrimRule::Counts { k, m } => return Self::new(n, k, m, alpha, beta, epsilon),
        };
        let count = |limit: f64| -> Result<usize> {
            let raw = (nf * (limit + shift)).round();
            if raw < 0.0 || !raw.is_finite() {
                return Err(config(format!("trim rule gives a negative count at n={n}")));
            }
            Ok(raw as usize)
        };
        Self::new(n, count(alpha)?, count(beta)?, alpha, beta, epsilon)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `α_n = k_n / n`.
    pub fn alpha_n(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    /// `β_n = m_n / n`.
    pub fn beta_n(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    /// `1 − β_n`, computed as the cell boundary `(n − m_n)/n`.
    pub fn upper_n(&self) -> f64 {
        (self.n - self.m) as f64 / self.n as f64
    }

    /// 1-based ranks `k_n + 1 ..= n − m_n` of the retained order statistics.
    pub fn retained(&self) -> RangeInclusive<usize> {
        self.k + 1..=self.n - self.m
    }

    pub fn retained_len(&self) -> usize {
        self.n - self.m - self.k
    }

    /// `max(|α_n − α|, |β_n − β|)·n^{1/(2+ε)}`: the smallest `M` for which
    /// the rate condition holds at this `n`.
    pub fn rate_constant(&self) -> f64 {
        let gap = (self.alpha_n() - self.alpha).abs().max((self.beta_n() - self.beta).abs());
        gap * (self.n as f64).powf(1.0 / (2.0 + self.epsilon))
    }

    pub fn satisfies_rate(&self, constant: f64) -> bool {
        self.rate_constant() <= constant
    }

    /// Heavy trimming with margin: α, β, α_n, β_n ≥ `margin` and
    /// `α_n + β_n ≤ 1 − margin`.
    pub fn is_heavy(&self, margin: f64) -> bool {
        self.alpha >= margin
            && self.beta >= margin
            && self.alpha_n() >= margin
            && self.beta_n() >= margin
            && self.alpha_n() + self.beta_n() <= 1.0 - margin
    }
}

/// Whether coefficients are given explicitly or generated from `J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Explicit,
    Generated,
}

/// Explicit coefficients `c_{i,n}` and/or a weight function `J`.
#[derive(Debug, Clone)]
pub struct WeightScheme {
    function: Option<SharedWeight>,
    coefficients: Option<Vec<f64>>,
}

impl WeightScheme {
    pub fn generated(j: SharedWeight) -> Self {
        Self { function: Some(j), coefficients: None }
    }

    /// Explicit coefficients for ranks `k_n+1 ..= n−m_n`, with the `J` used
    /// for centering and variance (required by every normalization path).
    pub fn explicit(coefficients: Vec<f64>, j: Option<SharedWeight>) -> Self {
        Self { function: j, coefficients: Some(coefficients) }
    }

    pub fn mode(&self) -> WeightMode {
        if self.coefficients.is_some() {
            WeightMode::Explicit
        } else {
            WeightMode::Generated
        }
    }

    pub fn weight_function(&self) -> Result<&SharedWeight> {
        self.function.as_ref().ok_or_else(|| config("a weight function J is required"))
    }

    pub fn explicit_coefficients(&self) -> Option<&[f64]> {
        self.coefficients.as_deref()
    }

    /// `c_{i,n}` over the retained range: the explicit array (size-checked)
    /// or the generated `c⁰_{i,n}`.
    pub fn coefficients_for(&self, spec: &TrimSpec) -> Result<Cow<'_, [f64]>> {
        match &self.coefficients {
            Some(c) => {
                if c.len() != spec.retained_len() {
                    return Err(config(format!(
                        "{} coefficients supplied for {} retained order statistics",
                        c.len(),
                        spec.retained_len()
                    )));
                }
                Ok(Cow::Borrowed(c))
            }
            None => Ok(Cow::Owned(generated_weights(self.weight_function()?.as_ref(), spec)?)),
        }
    }
}

/// `c⁰_{i,n} = n ∫_{(i−1)/n}^{i/n} J(u) du` for `i = k_n+1 ..= n−m_n`.
pub fn generated_weights<W: WeightFunction + ?Sized>(j: &W, spec: &TrimSpec) -> Result<Vec<f64>> {
    let (lo, hi) = j.domain();
    if spec.alpha_n() < lo || spec.upper_n() > hi {
        return Err(domain(format!(
            "weight function domain ({lo}, {hi}) does not cover [{}, {}]",
            spec.alpha_n(),
            spec.upper_n()
        )));
    }
    Ok(cell_weights(j, spec.n(), spec.retained()))
}

/// `n ∫_{cell i} J` for each rank in `ranks`.
pub fn cell_weights<W: WeightFunction + ?Sized>(j: &W, n: usize, ranks: RangeInclusive<usize>) -> Vec<f64> {
    let nf = n as f64;
    ranks.map(|i| nf * j.integral((i - 1) as f64 / nf, i as f64 / nf)).collect()
}

/// Condition-(iv) diagnostic `S_n = Σ |c_{i,n} − c⁰_{i,n}|^{2+ε}` and `S_n·n^ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionIv {
    pub sum: f64,
    pub scaled: f64,
}

pub fn condition_iv_statistic(scheme: &WeightScheme, spec: &TrimSpec) -> Result<ConditionIv> {
    let explicit =
        scheme.explicit_coefficients().ok_or_else(|| config("condition (iv) needs explicit coefficients"))?;
    if explicit.len() != spec.retained_len() {
        return Err(config(format!(
            "{} coefficients supplied for {} retained order statistics",
            explicit.len(),
            spec.retained_len()
        )));
    }
    let generated = generated_weights(scheme.weight_function()?.as_ref(), spec)?;
    let p = 2.0 + spec.epsilon();
    let sum = explicit.iter().zip(&generated).map(|(c, c0)| (c - c0).abs().powf(p)).collect::<CompensatedSum>().value();
    Ok(ConditionIv { sum, scaled: sum * (spec.n() as f64).powf(spec.epsilon()) })
}

/// `c⁰_{i,n} + amplitude·(−1)^i / n`; satisfies condition (iv) for any ε.
pub fn alternating_perturbation(generated: &[f64], first_rank: usize, n: usize, amplitude: f64) -> Vec<f64> {
    generated
        .iter()
        .enumerate()
        .map(|(j, c0)| {
            let sign = if (first_rank + j).is_multiple_of(2) { 1.0 } else { -1.0 };
            c0 + sign * amplitude / n as f64
        })
        .collect()
}

/// Parses a one-column coefficient CSV. Blank lines, `#` comments and a
/// non-numeric header line are skipped.
pub fn parse_coefficients_csv(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() || field.starts_with('#') {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) => return Err(config(format!("non-finite coefficient on line {}", lineno + 1))),
            Err(_) if out.is_empty() && lineno == 0 => continue,
            Err(_) => return Err(Error::Config(format!("cannot parse coefficient {field:?} on line {}", lineno + 1))),
        }
    }
    if out.is_empty() {
        return Err(config("coefficient file is empty"));
    }
    Ok(out)
}
