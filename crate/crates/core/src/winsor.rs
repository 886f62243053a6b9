//! Winsorization and the exact decomposition of the centered trimmed
//! statistic into a non-trimmed statistic of Winsorized observations plus the
//! remainders `R_n⁽¹⁾` and `R_n⁽²⁾`.
//!
//! All integrals with a step-function integrand (`F_n⁻¹`) are integrated
//! cell by cell; only the smooth `J·F⁻¹` pieces go through quadrature. Every
//! `∫_a^b` is oriented, so `a > b` is allowed and flips the sign.

use std::fmt;
use std::sync::Arc;

use crate::error::{config, Error, Result};
use crate::lstat::{centering_mu, step_integral, weighted_order_sum, weighted_quantile_integral};
use crate::numeric::{sig17, CompensatedSum};
use crate::quantile::{Atom, Model, QuantileModel, SampleFrame};
use crate::weights::{
    cell_weights, extended_weight, generated_weights, ExtendedWeight, SharedWeight, TrimSpec, WeightFunction,
    WeightScheme,
};

/// The law of a Winsorized observation: quantile `ξ_α ∨ (F⁻¹(u) ∧ ξ_{1−β})`.
#[derive(Debug, Clone)]
pub struct WinsorizedModel<M: QuantileModel = Model> {
    base: M,
    alpha: f64,
    beta: f64,
    xi_alpha: f64,
    xi_upper: f64,
}

impl<M: QuantileModel> WinsorizedModel<M> {
    pub fn new(base: M, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha < 1.0 - beta) {
            return Err(config(format!("need 0 < α < 1 − β < 1, got α={alpha}, β={beta}")));
        }
        let xi_alpha = base.quantile(alpha);
        let xi_upper = base.quantile(1.0 - beta);
        if !(xi_alpha.is_finite() && xi_upper.is_finite()) {
            return Err(Error::Numeric("non-finite quantile at the Winsorization levels".into()));
        }
        Ok(Self { base, alpha, beta, xi_alpha, xi_upper })
    }

    pub fn base(&self) -> &M {
        &self.base
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `ξ_α = F⁻¹(α)`.
    pub fn xi_alpha(&self) -> f64 {
        self.xi_alpha
    }

    /// `ξ_{1−β} = F⁻¹(1−β)`.
    pub fn xi_upper(&self) -> f64 {
        self.xi_upper
    }
}

impl<M: QuantileModel> QuantileModel for WinsorizedModel<M> {
    fn name(&self) -> String {
        format!("winsorized[{}; {}, {}]", self.base.name(), self.alpha, self.beta)
    }

    fn cdf(&self, x: f64) -> f64 {
        if x < self.xi_alpha {
            0.0
        } else if x >= self.xi_upper {
            1.0
        } else {
            self.base.cdf(x)
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        self.base.quantile(u).clamp(self.xi_alpha, self.xi_upper)
    }

    fn quantile_density(&self, u: f64) -> Option<f64> {
        if u > self.alpha && u <= 1.0 - self.beta {
            self.base.quantile_density(u)
        } else {
            Some(0.0)
        }
    }

    /// Jumps of `F⁻¹` in `[α, 1−β)`; a jump exactly at α survives the clamp
    /// (`G⁻¹(α) = ξ_α`, `G⁻¹(α+) = F⁻¹(α+)`), one at `1−β` does not.
    fn atoms(&self) -> Vec<Atom> {
        self.base.atoms().into_iter().filter(|a| a.at >= self.alpha && a.at < 1.0 - self.beta).collect()
    }

    fn is_continuous(&self) -> bool {
        false
    }

    fn bounded_support(&self) -> (bool, bool) {
        (true, true)
    }

    fn quantile_at_zero(&self) -> f64 {
        self.xi_alpha
    }
}

/// Clamps each value into `[ξ_α, ξ_{1−β}]`, preserving order.
pub fn winsorize(sample: &[f64], xi_alpha: f64, xi_upper: f64) -> Result<Vec<f64>> {
    if !(xi_alpha <= xi_upper) {
        return Err(config(format!("Winsorization limits out of order: {xi_alpha} > {xi_upper}")));
    }
    Ok(sample.iter().map(|&x| winsor_one(x, xi_alpha, xi_upper)).collect())
}

#[inline]
fn winsor_one(x: f64, xi_alpha: f64, xi_upper: f64) -> f64 {
    if x <= xi_alpha {
        xi_alpha
    } else if x <= xi_upper {
        x
    } else {
        xi_upper
    }
}

/// `L̃_n = n⁻¹ Σ c̃_{i,n} W_{i:n}` with `c̃_{i,n} = n ∫_{cell i} J_w`.
pub fn approx_lstat<W: WeightFunction + ?Sized>(frame: &SampleFrame, j_w: &W) -> f64 {
    let n = frame.n();
    let coeffs = cell_weights(j_w, n, 1..=n);
    weighted_order_sum(frame.values(), &coeffs, 1, n)
}

/// `μ_{L̃_n} = ∫₀¹ J_w(u) G⁻¹(u) du`, split at α and 1−β where `G⁻¹` is
/// constant on the outer pieces.
pub fn approx_centering<M: QuantileModel>(j_w: &ExtendedWeight, wmodel: &WinsorizedModel<M>) -> Result<f64> {
    if j_w.alpha() != wmodel.alpha() || j_w.beta() != wmodel.beta() {
        return Err(config("extended weight and Winsorized model use different α, β"));
    }
    let (alpha, upper) = (wmodel.alpha(), 1.0 - wmodel.beta());
    let middle = weighted_quantile_integral(j_w.inner().as_ref(), wmodel.base(), alpha, upper)?;
    let lower = wmodel.xi_alpha() * j_w.integral(0.0, alpha);
    let top = wmodel.xi_upper() * j_w.integral(upper, 1.0);
    Ok(lower + middle + top)
}

/// Binomial counts `N_α`, `N_{1−β}` and `A_n = N_α/n`, `B_n = (n − N_{1−β})/n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExceedanceCounts {
    pub n_alpha: usize,
    pub n_upper: usize,
    pub a_n: f64,
    pub b_n: f64,
}

impl ExceedanceCounts {
    /// Counts over a sorted frame; ties at ξ count as below.
    pub fn from_frame(frame: &SampleFrame, xi_alpha: f64, xi_upper: f64) -> Self {
        let v = frame.values();
        let n_alpha = v.partition_point(|&x| x <= xi_alpha);
        let n_upper = v.partition_point(|&x| x <= xi_upper);
        let n = frame.n();
        Self { n_alpha, n_upper, a_n: n_alpha as f64 / n as f64, b_n: (n - n_upper) as f64 / n as f64 }
    }

    /// `1 − B_n`, as the cell boundary `N_{1−β}/n`.
    pub fn upper_level(&self, n: usize) -> f64 {
        self.n_upper as f64 / n as f64
    }
}

/// `R_n⁽¹⁾ = ∫_α^{A_n} J_w (F_n⁻¹ − ξ_α) − ∫_{1−β}^{1−B_n} J_w (F_n⁻¹ − ξ_{1−β})`.
pub fn remainder_r1<M: QuantileModel>(frame: &SampleFrame, j_w: &ExtendedWeight, wmodel: &WinsorizedModel<M>) -> f64 {
    let counts = ExceedanceCounts::from_frame(frame, wmodel.xi_alpha(), wmodel.xi_upper());
    r1_from_counts(frame, j_w, wmodel.alpha(), wmodel.beta(), wmodel.xi_alpha(), wmodel.xi_upper(), &counts)
}

fn r1_from_counts(
    frame: &SampleFrame,
    j_w: &ExtendedWeight,
    alpha: f64,
    beta: f64,
    xi_alpha: f64,
    xi_upper: f64,
    counts: &ExceedanceCounts,
) -> f64 {
    let upper = 1.0 - beta;
    let top = counts.upper_level(frame.n());
    let first = step_integral(frame, j_w, alpha, counts.a_n) - xi_alpha * j_w.integral(alpha, counts.a_n);
    let second = step_integral(frame, j_w, upper, top) - xi_upper * j_w.integral(upper, top);
    first - second
}

/// `R_n⁽²⁾ = ∫_{α_n}^{α} J (F_n⁻¹ − F⁻¹) − ∫_{1−β_n}^{1−β} J (F_n⁻¹ − F⁻¹)`.
pub fn remainder_r2<W, M>(frame: &SampleFrame, j: &W, model: &M, spec: &TrimSpec) -> Result<f64>
where
    W: WeightFunction + ?Sized,
    M: QuantileModel + ?Sized,
{
    let smooth = R2Smooth::new(j, model, spec)?;
    Ok(smooth.apply(frame, j, spec))
}

/// The sample-free parts of `R_n⁽²⁾`: `∫_{α_n}^{α} J F⁻¹` and
/// `∫_{1−β_n}^{1−β} J F⁻¹`.
#[derive(Debug, Clone, Copy)]
struct R2Smooth {
    lower: f64,
    upper: f64,
}

impl R2Smooth {
    fn new<W, M>(j: &W, model: &M, spec: &TrimSpec) -> Result<Self>
    where
        W: WeightFunction + ?Sized,
        M: QuantileModel + ?Sized,
    {
        let part = |a: f64, b: f64| -> Result<f64> {
            if same_level(a, b) {
                Ok(0.0)
            } else {
                weighted_quantile_integral(j, model, a, b)
            }
        };
        Ok(Self { lower: part(spec.alpha_n(), spec.alpha())?, upper: part(spec.upper_n(), 1.0 - spec.beta())? })
    }

    fn apply<W: WeightFunction + ?Sized>(&self, frame: &SampleFrame, j: &W, spec: &TrimSpec) -> f64 {
        let part = |a: f64, b: f64| if same_level(a, b) { 0.0 } else { step_integral(frame, j, a, b) };
        let lower = part(spec.alpha_n(), spec.alpha()) - self.lower;
        let upper = part(spec.upper_n(), 1.0 - spec.beta()) - self.upper;
        lower - upper
    }
}

/// `k/n` and `α` (or `(n−m)/n` and `1−β`) computed along different paths can
/// differ in the last bits when `k = αn` exactly; such ranges are empty.
fn same_level(a: f64, b: f64) -> bool {
    (a - b).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs())
}

/// `V_n = L_n − L_n⁰ = n⁻¹ Σ (c_{i,n} − c⁰_{i,n}) X_{i:n}`.
pub fn weight_perturbation_vn(frame: &SampleFrame, scheme: &WeightScheme, spec: &TrimSpec) -> Result<f64> {
    let explicit = scheme.explicit_coefficients().ok_or_else(|| config("V_n needs explicit coefficients"))?;
    if explicit.len() != spec.retained_len() {
        return Err(config(format!(
            "{} coefficients supplied for {} retained order statistics",
            explicit.len(),
            spec.retained_len()
        )));
    }
    if frame.n() != spec.n() {
        return Err(config("sample size does not match the trim spec"));
    }
    let generated = generated_weights(scheme.weight_function()?.as_ref(), spec)?;
    let diff: Vec<f64> = explicit.iter().zip(&generated).map(|(c, c0)| c - c0).collect();
    Ok(weighted_order_sum(frame.values(), &diff, spec.k() + 1, spec.n()))
}

/// Relative order of `(α, A_n, 1−β, 1−B_n)`.
///
/// Cases 1–3 are the three orderings with `α ≤ A_n`; 4–6 mirror them with
/// `A_n < α`:
/// 1. `α ≤ A_n ≤ 1−B_n < 1−β`
/// 2. `α ≤ A_n ≤ 1−β ≤ 1−B_n` (with `1−B_n ≥ 1−β`, `A_n < 1−β`)
/// 3. `1−β ≤ A_n ≤ 1−B_n`
/// 4. `A_n < α`, `1−β ≤ 1−B_n`
/// 5. `A_n < α ≤ 1−B_n < 1−β`
/// 6. `A_n ≤ 1−B_n < α`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CaseOrdering(pub u8);

impl CaseOrdering {
    pub fn classify(alpha: f64, a_n: f64, upper: f64, top: f64) -> Self {
        let case = if alpha <= a_n {
            if upper <= a_n {
                3
            } else if top < upper {
                1
            } else {
                2
            }
        } else if top >= upper {
            4
        } else if top >= alpha {
            5
        } else {
            6
        };
        CaseOrdering(case)
    }
}

impl fmt::Display for CaseOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Residual tolerance for the decomposition identity.
pub fn identity_tolerance(l0: f64) -> f64 {
    1e-9 * (1.0 + l0.abs())
}

/// All terms of the decomposition for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub n: usize,
    pub k_n: usize,
    pub m_n: usize,
    /// `L_n` (equals `L0` in generated mode).
    pub ln: f64,
    pub l0: f64,
    pub mu_n: f64,
    pub ltilde: f64,
    pub mu_ltilde: f64,
    pub r1: f64,
    pub r2: f64,
    pub rn: f64,
    pub vn: f64,
    /// `|L⁰ − μ_n − (L̃ − μ_L̃) − R_n|`.
    pub residual: f64,
    /// `|L_n − μ_n − (L̃ − μ_L̃) − R_n − V_n|`.
    pub residual_full: f64,
    pub a_n: f64,
    pub b_n: f64,
    pub n_alpha: usize,
    pub n_upper: usize,
    pub case: CaseOrdering,
}

impl DecompositionReport {
    pub fn pass(&self) -> bool {
        self.residual <= identity_tolerance(self.l0) && self.residual_full <= identity_tolerance(self.l0)
    }

    pub const CSV_HEADER: &'static str = "n,k_n,m_n,L_n,L0,mu_n,L_tilde,mu_L_tilde,R1,R2,R_n,V_n,\
residual,residual_full,A_n,B_n,N_alpha,N_1mb,case,status";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.k_n,
            self.m_n,
            sig17(self.ln),
            sig17(self.l0),
            sig17(self.mu_n),
            sig17(self.ltilde),
            sig17(self.mu_ltilde),
            sig17(self.r1),
            sig17(self.r2),
            sig17(self.rn),
            sig17(self.vn),
            sig17(self.residual),
            sig17(self.residual_full),
            sig17(self.a_n),
            sig17(self.b_n),
            self.n_alpha,
            self.n_upper,
            self.case,
            if self.pass() { "PASS" } else { "FAIL" }
        )
    }
}

impl fmt::Display for DecompositionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}  (k_n = {}, m_n = {})", self.n, self.k_n, self.m_n)?;
        writeln!(f, "  L_n          = {}", sig17(self.ln))?;
        writeln!(f, "  L0_n         = {}", sig17(self.l0))?;
        writeln!(f, "  mu_n         = {}", sig17(self.mu_n))?;
        writeln!(f, "  L~_n         = {}", sig17(self.ltilde))?;
        writeln!(f, "  mu_L~        = {}", sig17(self.mu_ltilde))?;
        writeln!(f, "  R1           = {}", sig17(self.r1))?;
        writeln!(f, "  R2           = {}", sig17(self.r2))?;
        writeln!(f, "  R_n          = {}", sig17(self.rn))?;
        writeln!(f, "  V_n          = {}", sig17(self.vn))?;
        writeln!(f, "  A_n, B_n     = {}, {}", sig17(self.a_n), sig17(self.b_n))?;
        writeln!(f, "  N_a, N_1-b   = {}, {}", self.n_alpha, self.n_upper)?;
        writeln!(f, "  case         = {}", self.case)?;
        writeln!(f, "  residual     = {:e}", self.residual)?;
        write!(f, "  status       = {}", if self.pass() { "PASS" } else { "FAIL" })
    }
}

/// Precomputes every sample-independent piece of the decomposition for one
/// (scheme, model, trim) configuration, so replicates only pay for the step
/// integrals and weighted sums.
#[derive(Debug, Clone)]
pub struct Decomposer<M: QuantileModel = Model> {
    spec: TrimSpec,
    j: SharedWeight,
    j_w: ExtendedWeight,
    wmodel: WinsorizedModel<M>,
    c0: Vec<f64>,
    explicit: Option<Vec<f64>>,
    ctilde: Vec<f64>,
    mu_n: f64,
    mu_ltilde: f64,
    r2_smooth: R2Smooth,
}

impl<M: QuantileModel> Decomposer<M> {
    pub fn new(scheme: &WeightScheme, model: M, spec: &TrimSpec) -> Result<Self> {
        let j: SharedWeight = Arc::clone(scheme.weight_function()?);
        let wmodel = WinsorizedModel::new(model, spec.alpha(), spec.beta())?;
        let j_w = extended_weight(Arc::clone(&j), spec.alpha(), spec.beta())?;
        let c0 = generated_weights(j.as_ref(), spec)?;
        let explicit = match scheme.explicit_coefficients() {
            Some(c) if c.len() != spec.retained_len() => {
                return Err(config(format!(
                    "{} coefficients supplied for {} retained order statistics",
                    c.len(),
                    spec.retained_len()
                )))
            }
            Some(c) => Some(c.to_vec()),
            None => None,
        };
        let ctilde = cell_weights(&j_w, spec.n(), 1..=spec.n());
        let mu_n = centering_mu(j.as_ref(), wmodel.base(), spec)?;
        let mu_ltilde = approx_centering(&j_w, &wmodel)?;
        let r2_smooth = R2Smooth::new(j.as_ref(), wmodel.base(), spec)?;
        Ok(Self { spec: *spec, j, j_w, wmodel, c0, explicit, ctilde, mu_n, mu_ltilde, r2_smooth })
    }

    pub fn spec(&self) -> &TrimSpec {
        &self.spec
    }

    pub fn mu_n(&self) -> f64 {
        self.mu_n
    }

    pub fn mu_ltilde(&self) -> f64 {
        self.mu_ltilde
    }

    pub fn winsorized_model(&self) -> &WinsorizedModel<M> {
        &self.wmodel
    }

    pub fn extended_weight(&self) -> &ExtendedWeight {
        &self.j_w
    }

    pub fn report(&self, frame: &SampleFrame) -> Result<DecompositionReport> {
        let spec = &self.spec;
        let n = spec.n();
        if frame.n() != n {
            return Err(config(format!("sample has {} values, expected {n}", frame.n())));
        }
        let (xa, xb) = (self.wmodel.xi_alpha(), self.wmodel.xi_upper());
        let first = spec.k() + 1;
        let l0 = weighted_order_sum(frame.values(), &self.c0, first, n);
        let ln = match &self.explicit {
            Some(c) => weighted_order_sum(frame.values(), c, first, n),
            None => l0,
        };
        let vn = match &self.explicit {
            Some(c) => {
                let diff: Vec<f64> = c.iter().zip(&self.c0).map(|(c, c0)| c - c0).collect();
                weighted_order_sum(frame.values(), &diff, first, n)
            }
            None => 0.0,
        };
        let winsorized: Vec<f64> = frame.values().iter().map(|&x| winsor_one(x, xa, xb)).collect();
        let ltilde = weighted_order_sum(&winsorized, &self.ctilde, 1, n);

        let counts = ExceedanceCounts::from_frame(frame, xa, xb);
        let r1 = r1_from_counts(frame, &self.j_w, spec.alpha(), spec.beta(), xa, xb, &counts);
        let r2 = self.r2_smooth.apply(frame, self.j.as_ref(), spec);
        let rn = r1 + r2;

        let residual =
            [l0, -self.mu_n, -ltilde, self.mu_ltilde, -r1, -r2].into_iter().collect::<CompensatedSum>().value().abs();
        let residual_full = [ln, -self.mu_n, -ltilde, self.mu_ltilde, -r1, -r2, -vn]
            .into_iter()
            .collect::<CompensatedSum>()
            .value()
            .abs();
        let case = CaseOrdering::classify(spec.alpha(), counts.a_n, 1.0 - spec.beta(), counts.upper_level(n));
        Ok(DecompositionReport {
            n,
            k_n: spec.k(),
            m_n: spec.m(),
            ln,
            l0,
            mu_n: self.mu_n,
            ltilde,
            mu_ltilde: self.mu_ltilde,
            r1,
            r2,
            rn,
            vn,
            residual,
            residual_full,
            a_n: counts.a_n,
            b_n: counts.b_n,
            n_alpha: counts.n_alpha,
            n_upper: counts.n_upper,
            case,
        })
    }
}

/// One-shot decomposition of a single sample.
pub fn decomposition_report<M: QuantileModel>(
    frame: &SampleFrame,
    scheme: &WeightScheme,
    model: M,
    spec: &TrimSpec,
) -> Result<DecompositionReport> {
    Decomposer::new(scheme, model, spec)?.report(frame)
}

/// How replicate samples are drawn. The mixture designs pick one of the
/// bands `(0, α]`, `(α, 1−β]`, `(1−β, 1)` with the given weights, draw `u`
/// uniformly inside it and return `F⁻¹(u)`; shifting mass between bands moves
/// `A_n` and `B_n` away from `α` and `β` and reaches every case ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleDesign {
    Iid,
    Mixture([f64; 3]),
    /// Band weights drawn per replicate from the replicate's own stream.
    RandomMixture,
}

impl SampleDesign {
    pub fn draw<M, R>(&self, model: &M, alpha: f64, beta: f64, n: usize, rng: &mut R) -> Result<Vec<f64>>
    where
        M: QuantileModel + ?Sized,
        R: rand_chacha::rand_core::RngCore + ?Sized,
    {
        use crate::stream::open_unit;
        let weights = match *self {
            SampleDesign::Iid => {
                return Ok((0..n).map(|_| model.quantile(open_unit(rng))).collect());
            }
            SampleDesign::Mixture(w) => w,
            SampleDesign::RandomMixture => {
                // Dirichlet(1/2, 1/2, 1/2) favours lopsided mixtures.
                let mut w = [0.0; 3];
                for x in &mut w {
                    let z = crate::quantile::std_normal_quantile(open_unit(rng));
                    *x = z * z;
                }
                w
            }
        };
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(config("mixture weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(config("mixture weights sum to zero"));
        }
        let upper = 1.0 - beta;
        let bands = [(0.0, alpha), (alpha, upper), (upper, 1.0)];
        Ok((0..n)
            .map(|_| {
                let pick = open_unit(rng) * total;
                let band = if pick < weights[0] {
                    0
                } else if pick < weights[0] + weights[1] {
                    1
                } else {
                    2
                };
                let (lo, hi) = bands[band];
                model.quantile(lo + (hi - lo) * open_unit(rng))
            })
            .collect())
    }
}
