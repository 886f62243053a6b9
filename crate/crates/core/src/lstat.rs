//! The trimmed L-statistic, its centering constant, asymptotic variance and
//! normalization.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{config, Error, Result};
use crate::numeric::{integrate_adaptive, sig17, CompensatedSum};
use crate::quantile::{ceil_rank, stieltjes_2d_kernel, QuantileModel, SampleFrame};
use crate::weights::{TrimSpec, WeightFunction, WeightMode, WeightScheme};

/// Requested absolute tolerance for centering constants.
pub const MU_TOL: f64 = 1e-10;

/// Requested absolute tolerance for the asymptotic variance.
pub const SIGMA2_TOL: f64 = 1e-8;

/// Below this the asymptotic variance is treated as zero.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Oriented `∫_a^b g(u) F_n⁻¹(u) du`, integrated exactly cell by cell: on
/// `((i−1)/n, i/n]` the empirical inverse is the constant `X_{i:n}`.
pub fn step_integral<W: WeightFunction + ?Sized>(frame: &SampleFrame, g: &W, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let (lo, hi) = (lo.max(0.0), hi.min(1.0));
    if lo >= hi {
        return 0.0;
    }
    let n = frame.n();
    let nf = n as f64;
    let mut acc = CompensatedSum::new();
    for i in ceil_rank(n, lo)..=ceil_rank(n, hi) {
        let s = lo.max((i - 1) as f64 / nf);
        let e = hi.min(i as f64 / nf);
        if e > s {
            acc.add(frame.order_stat(i) * g.integral(s, e));
        }
    }
    sign * acc.value()
}

/// `n⁻¹ Σ c_j X_{first+j:n}` with compensated accumulation.
pub(crate) fn weighted_order_sum(values: &[f64], coeffs: &[f64], first_rank: usize, n: usize) -> f64 {
    let slice = &values[first_rank - 1..first_rank - 1 + coeffs.len()];
    let mut acc = CompensatedSum::new();
    for (c, x) in coeffs.iter().zip(slice) {
        acc.add(c * x);
    }
    acc.value() / n as f64
}

static RELEASE_CHECK_COUNTER: AtomicU64 = AtomicU64::new(0);

fn run_equivalence_check() -> bool {
    if cfg!(debug_assertions) {
        return true;
    }
    RELEASE_CHECK_COUNTER.fetch_add(1, Ordering::Relaxed).is_multiple_of(100)
}

/// `L_n = n⁻¹ Σ_{i=k_n+1}^{n−m_n} c_{i,n} X_{i:n}`.
///
/// In generated mode the sum is cross-checked against the integral form
/// `∫_{α_n}^{1−β_n} J(u) F_n⁻¹(u) du` (every call in debug builds, one call
/// in a hundred otherwise).
pub fn trimmed_lstat(frame: &SampleFrame, scheme: &WeightScheme, spec: &TrimSpec) -> Result<f64> {
    if frame.n() != spec.n() {
        return Err(config(format!("sample has {} values but the trim spec is for n={}", frame.n(), spec.n())));
    }
    let coeffs = scheme.coefficients_for(spec)?;
    let value = weighted_order_sum(frame.values(), &coeffs, spec.k() + 1, spec.n());
    if scheme.mode() == WeightMode::Generated && run_equivalence_check() {
        let j = scheme.weight_function()?;
        let integral = step_integral(frame, j.as_ref(), spec.alpha_n(), spec.upper_n());
        let scale: f64 =
            coeffs.iter().zip(&frame.values()[spec.k()..]).map(|(c, x)| (c * x).abs()).sum::<f64>() / spec.n() as f64;
        if (value - integral).abs() > 1e-12 * (1.0 + scale) {
            return Err(Error::Numeric(format!(
                "sum form {value} and integral form {integral} of the statistic disagree"
            )));
        }
    }
    Ok(value)
}

/// Quadrature breakpoints for `J·F⁻¹`: kinks of `J` and jumps of `F⁻¹`.
pub(crate) fn joint_breaks<W, M>(j: &W, model: &M) -> Vec<f64>
where
    W: WeightFunction + ?Sized,
    M: QuantileModel + ?Sized,
{
    let mut breaks: Vec<f64> = j.breakpoints().to_vec();
    breaks.extend(model.atoms().iter().map(|a| a.at));
    breaks
}

/// Oriented `∫_a^b J(u) F⁻¹(u) du` by adaptive quadrature.
pub fn weighted_quantile_integral<W, M>(j: &W, model: &M, a: f64, b: f64) -> Result<f64>
where
    W: WeightFunction + ?Sized,
    M: QuantileModel + ?Sized,
{
    let (lo, hi) = (a.min(b), a.max(b));
    let (bounded_below, bounded_above) = model.bounded_support();
    if (lo <= 0.0 && !bounded_below) || (hi >= 1.0 && !bounded_above) {
        return Err(Error::Numeric(format!("quantile of {} is not finite on [{lo}, {hi}]", model.name())));
    }
    let breaks = joint_breaks(j, model);
    integrate_adaptive(|u| j.eval(u) * model.quantile(u), a, b, &breaks, MU_TOL)
}

/// `μ_n = ∫_{α_n}^{1−β_n} J(u) F⁻¹(u) du`.
pub fn centering_mu<W, M>(j: &W, model: &M, spec: &TrimSpec) -> Result<f64>
where
    W: WeightFunction + ?Sized,
    M: QuantileModel + ?Sized,
{
    weighted_quantile_integral(j, model, spec.alpha_n(), spec.upper_n())
}

/// `σ² = ∫∫_[α,1−β)² J(u)J(v)(u∧v − uv) dF⁻¹(u) dF⁻¹(v)`, required positive.
pub fn asymptotic_sigma2<W, M>(j: &W, model: &M, alpha: f64, beta: f64) -> Result<f64>
where
    W: WeightFunction + ?Sized,
    M: QuantileModel + ?Sized,
{
    let s2 = stieltjes_2d_kernel(j, model, alpha, 1.0 - beta)?;
    if s2 <= SIGMA2_FLOOR {
        return Err(Error::Assumption(format!("asymptotic variance {s2:e} is not positive")));
    }
    Ok(s2)
}

/// `x = √n (L_n − μ_n)/σ` together with its inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedStatistic {
    raw: f64,
    mu_n: f64,
    sigma: f64,
    n: usize,
    x: f64,
}

impl NormalizedStatistic {
    pub fn raw(&self) -> f64 {
        self.raw
    }

    pub fn mu_n(&self) -> f64 {
        self.mu_n
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub const CSV_HEADER: &'static str = "n,k_n,m_n,L_n,mu_n,sigma,x";

    /// `n,k_n,m_n,L_n,μ_n,σ,x` with 17 significant digits.
    pub fn csv_row(&self, spec: &TrimSpec) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.n,
            spec.k(),
            spec.m(),
            sig17(self.raw),
            sig17(self.mu_n),
            sig17(self.sigma),
            sig17(self.x)
        )
    }
}

pub fn normalize(raw: f64, mu_n: f64, sigma: f64, n: usize) -> Result<NormalizedStatistic> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Assumption(format!("σ must be positive, got {sigma}")));
    }
    if n == 0 {
        return Err(config("n must be positive"));
    }
    let x = (n as f64).sqrt() * (raw - mu_n) / sigma;
    Ok(NormalizedStatistic { raw, mu_n, sigma, n, x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantile::Model;
    use crate::weights::WeightFn;

    fn unit() -> WeightScheme {
        WeightScheme::generated(WeightFn::Constant(1.0).shared())
    }

    #[test]
    fn trimmed_lstat_examples() {
        let s = TrimSpec::new(4, 1, 1, 0.25, 0.25, 1.0).unwrap();
        let f = SampleFrame::new(vec![3.0, 1.0, 4.0, 2.0]).unwrap();
        assert!((trimmed_lstat(&f, &unit(), &s).unwrap() - 1.25).abs() < 1e-15);
        let c = SampleFrame::new(vec![5.0; 4]).unwrap();
        assert!((trimmed_lstat(&c, &unit(), &s).unwrap() - 2.5).abs() < 1e-15);
        let explicit = WeightScheme::explicit(vec![1.0, 1.0], None);
        assert!((trimmed_lstat(&f, &explicit, &s).unwrap() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn trimmed_lstat_rejects_mismatches() {
        let s = TrimSpec::new(4, 1, 1, 0.25, 0.25, 1.0).unwrap();
        let f5 = SampleFrame::new(vec![1.0; 5]).unwrap();
        assert!(matches!(trimmed_lstat(&f5, &unit(), &s), Err(Error::Config(_))));
        let f4 = SampleFrame::new(vec![1.0; 4]).unwrap();
        let bad = WeightScheme::explicit(vec![1.0; 3], None);
        assert!(matches!(trimmed_lstat(&f4, &bad, &s), Err(Error::Config(_))));
    }

    #[test]
    fn centering_examples() {
        let s = TrimSpec::new(4, 1, 1, 0.25, 0.25, 1.0).unwrap();
        let one = WeightFn::Constant(1.0);
        let mu = centering_mu(&one, &Model::uniform(), &s).unwrap();
        assert!((mu - 0.25).abs() < 1e-12);
        let mu = centering_mu(&one, &Model::exponential(), &s).unwrap();
        assert!((mu - 0.369_187_964_058_863).abs() < 1e-10);
        let lin = WeightFn::Linear { intercept: 0.0, slope: 1.0 };
        let mu = centering_mu(&lin, &Model::uniform(), &s).unwrap();
        assert!((mu - 26.0 / 192.0).abs() < 1e-12);
    }

    #[test]
    fn centering_rejects_infinite_quantile() {
        let s = TrimSpec::new(4, 0, 1, 0.25, 0.25, 1.0).unwrap();
        let r = centering_mu(&WeightFn::Constant(1.0), &Model::normal(), &s);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn sigma2_examples() {
        let one = WeightFn::Constant(1.0);
        let s = asymptotic_sigma2(&one, &Model::uniform(), 0.0, 0.0).unwrap();
        assert!((s - 1.0 / 12.0).abs() < 1e-8);
        let s = asymptotic_sigma2(&one, &Model::uniform(), 0.25, 0.25).unwrap();
        assert!((s - 1.0 / 24.0).abs() < 1e-8);
        let s = asymptotic_sigma2(&one, &Model::normal(), 0.25, 0.25).unwrap();
        assert!((s - 0.298_794_129_304_045_8).abs() < 1e-8);
        let zero = WeightFn::Constant(0.0);
        assert!(matches!(asymptotic_sigma2(&zero, &Model::uniform(), 0.25, 0.25), Err(Error::Assumption(_))));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(0.3, 0.3, 0.2, 10).unwrap().x(), 0.0);
        assert!((normalize(1.5, 1.0, 0.5, 4).unwrap().x() - 2.0).abs() < 1e-15);
        let sigma = (1.0f64 / 24.0).sqrt();
        let z = normalize(0.27, 0.25, sigma, 100).unwrap();
        assert!((z.x() - 0.979_795_897_113_271_2).abs() < 1e-12);
        assert!(matches!(normalize(0.0, 0.0, 0.0, 4), Err(Error::Assumption(_))));
        assert!(matches!(normalize(0.0, 0.0, -1.0, 4), Err(Error::Assumption(_))));
    }

    #[test]
    fn csv_row_format() {
        let s = TrimSpec::new(4, 1, 1, 0.25, 0.25, 1.0).unwrap();
        let z = normalize(1.25, 1.0, 0.5, 4).unwrap();
        assert_eq!(
            z.csv_row(&s),
            "4,1,1,1.2500000000000000e0,1.0000000000000000e0,5.0000000000000000e-1,1.0000000000000000e0"
        );
    }
}
