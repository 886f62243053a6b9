//! Normal-tail utilities and the two closed-form probability bounds used to
//! control the trimming counts and the uniform order statistics, plus the
//! admissible range of x for the moderate-deviation ratio.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

use crate::error::{config, domain, Result};
use crate::numeric::sig17;
use crate::quantile::std_normal_pdf;

/// `1 − Φ(x)` from the complementary error function.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `Φ(x)`, computed as `normal_tail(−x)` so the lower tail keeps full
/// relative accuracy too.
pub fn normal_cdf(x: f64) -> f64 {
    normal_tail(-x)
}

/// `φ(x)/x`, the leading term of the Mills ratio expansion, for `x > 0`.
pub fn mills_approx(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(domain(format!("Mills approximation needs x > 0, got {x}")));
    }
    Ok(std_normal_pdf(x) / x)
}

/// Classical bracket `φ(x)/x·(1 − 1/x²) ≤ 1 − Φ(x) ≤ φ(x)/x` for `x ≥ 1`.
pub fn mills_bracket(x: f64) -> Result<(f64, f64)> {
    if !(x >= 1.0) {
        return Err(domain(format!("Mills bracket stated for x ≥ 1, got {x}")));
    }
    let hi = mills_approx(x)?;
    Ok((hi * (1.0 - 1.0 / (x * x)), hi))
}

/// `P{|N − np| > nh} ≤ 2·exp(−2nh²)` for `N ~ Binomial(n, p)`.
pub fn hoeffding_binomial_bound(n: usize, h: f64) -> Result<f64> {
    if n == 0 {
        return Err(domain("Hoeffding bound needs n ≥ 1"));
    }
    if !(h > 0.0 && h < 1.0) {
        return Err(domain(format!("Hoeffding deviation h={h} outside (0, 1)")));
    }
    Ok((2.0 * (-2.0 * n as f64 * h * h).exp()).clamp(0.0, 2.0))
}

/// Pre-asymptotic bound for `P{√n |U_{k:n} − p_k| > λ}`:
/// `exp(−(λ²/(2p)) / (1 + 2λ/(3p√n)))`.
pub fn uniform_os_bound(lambda: f64, p: f64, n: usize) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(domain(format!("λ={lambda} must be positive")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("p={p} outside (0, 1)")));
    }
    if n == 0 {
        return Err(domain("order-statistic bound needs n ≥ 1"));
    }
    let rootn = (n as f64).sqrt();
    let exponent = (lambda * lambda / (2.0 * p)) / (1.0 + 2.0 * lambda / (3.0 * p * rootn));
    Ok((-exponent).exp())
}

/// How `a_n` is chosen for the deviation range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnRule {
    /// `a_n = scale / log(1+n)`; a scale below 1 is raised to the floor.
    InverseLog { scale: f64 },
    /// A fixed value; must respect the floor.
    Explicit(f64),
}

impl Default for AnRule {
    fn default() -> Self {
        AnRule::InverseLog { scale: 1.0 }
    }
}

/// Range of x covered by the moderate-deviation ratio at one n.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationRange {
    pub n: usize,
    pub epsilon: f64,
    pub a_n: f64,
    pub big_a: f64,
    /// `n^{ε/(2(2+ε))}`
    pub z_n: f64,
    /// `a_n·z_n`
    pub upper: f64,
    /// `−A`
    pub lower: f64,
    /// `a_n^{−1/2}/z_n`
    pub delta_n: f64,
    pub warnings: Vec<String>,
}

impl DeviationRange {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

/// `1/log(1+n)`.
pub fn an_floor(n: usize) -> f64 {
    1.0 / (n as f64).ln_1p()
}

pub fn deviation_range(n: usize, epsilon: f64, rule: AnRule, big_a: f64) -> Result<DeviationRange> {
    if n < 2 {
        return Err(domain(format!("deviation range needs n ≥ 2, got {n}")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(domain(format!("ε={epsilon} outside (0, 1]")));
    }
    if !(big_a > 0.0 && big_a.is_finite()) {
        return Err(domain(format!("A={big_a} must be positive and finite")));
    }
    let floor = an_floor(n);
    let mut warnings = Vec::new();
    let a_n = match rule {
        AnRule::InverseLog { scale } => {
            let raw = scale * floor;
            if raw < floor {
                warnings.push(format!("a_n={raw} raised to the floor 1/log(1+n)={floor}"));
                floor
            } else {
                raw
            }
        }
        AnRule::Explicit(v) => {
            // Allow rounding slack so that an explicit 1/log(1+n) is accepted.
            if !(v >= floor * (1.0 - 1e-12)) {
                return Err(config(format!("a_n={v} below the floor 1/log(1+n)={floor} at n={n}")));
            }
            v
        }
    };
    let z_n = (n as f64).powf(epsilon / (2.0 * (2.0 + epsilon)));
    Ok(DeviationRange {
        n,
        epsilon,
        a_n,
        big_a,
        z_n,
        upper: a_n * z_n,
        lower: -big_a,
        delta_n: 1.0 / (a_n.sqrt() * z_n),
        warnings,
    })
}

/// Which bound a table row evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Hoeffding,
    UniformOrderStat,
    NormalTail,
}

impl BoundKind {
    fn label(self) -> &'static str {
        match self {
            BoundKind::Hoeffding => "hoeffding",
            BoundKind::UniformOrderStat => "uniform_os",
            BoundKind::NormalTail => "normal_tail",
        }
    }
}

/// One row of a bound table. `param` is h, λ or x depending on the kind;
/// `p` is unused (NaN) for the Hoeffding and normal rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub kind: BoundKind,
    pub n: usize,
    pub param: f64,
    pub p: f64,
    pub bound: f64,
}

impl BoundRow {
    pub const CSV_HEADER: &'static str = "kind,n,param,p,bound";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.kind.label(), self.n, sig17(self.param), sig17(self.p), sig17(self.bound))
    }
}

/// Hoeffding rows over an `n × h` grid.
pub fn hoeffding_table(ns: &[usize], hs: &[f64]) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::with_capacity(ns.len() * hs.len());
    for &n in ns {
        for &h in hs {
            rows.push(BoundRow {
                kind: BoundKind::Hoeffding,
                n,
                param: h,
                p: f64::NAN,
                bound: hoeffding_binomial_bound(n, h)?,
            });
        }
    }
    Ok(rows)
}

/// Order-statistic rows over a `λ × p` grid at fixed n.
pub fn uniform_os_table(n: usize, lambdas: &[f64], ps: &[f64]) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::with_capacity(lambdas.len() * ps.len());
    for &lambda in lambdas {
        for &p in ps {
            rows.push(BoundRow {
                kind: BoundKind::UniformOrderStat,
                n,
                param: lambda,
                p,
                bound: uniform_os_bound(lambda, p, n)?,
            });
        }
    }
    Ok(rows)
}

/// `1 − Φ(x)` rows.
pub fn normal_tail_table(xs: &[f64]) -> Vec<BoundRow> {
    xs.iter()
        .map(|&x| BoundRow { kind: BoundKind::NormalTail, n: 0, param: x, p: f64::NAN, bound: normal_tail(x) })
        .collect()
}

/// Natural log of `1 − Φ(x)`; finite far past the point where the tail
/// itself underflows.
pub fn log_normal_tail(x: f64) -> f64 {
    if x < 30.0 {
        normal_tail(x).ln()
    } else {
        // Asymptotic series to three terms; relative error below 1e-8 here.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - x.ln() - 0.5 * (LN_2 + std::f64::consts::PI.ln()) + series.ln()
    }
}
