//! Deterministic parallel Monte Carlo: tail-ratio tables, variance ratios
//! and remainder scaling along a ladder of sample sizes.
//!
//! Replicate `r` at sample size `n` draws from `seed_stream(mix_seed(seed, n), r)`.
//! Work is cut into chunks of [`CHUNK`] replicates, evaluated on a rayon pool
//! of `workers` threads and collected in index order, so every output is a
//! function of the configuration alone.

use std::ops::Range;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::bounds::{deviation_range, normal_tail, AnRule};
use crate::error::{config, Error, Result};
use crate::lstat::{asymptotic_sigma2, centering_mu, step_integral, weighted_order_sum};
use crate::numeric::{sig17, CompensatedSum};
use crate::quantile::{std_normal_quantile, Model, QuantileModel, SampleFrame};
use crate::stream::{mix_seed, open_unit, seed_stream, ReplicateRng};
use crate::weights::{
    alternating_perturbation, cell_weights, extended_weight, generated_weights, SharedWeight, TrimRule, TrimSpec,
    WeightMode, WeightScheme,
};
use crate::winsor::{approx_centering, CaseOrdering, Decomposer, DecompositionReport, SampleDesign, WinsorizedModel};

/// Replicates per work unit.
pub const CHUNK: u64 = 4096;

/// Two-sided 99% normal quantile for the Wilson interval.
pub const WILSON_Z99: f64 = 2.575_829_303_548_9;

/// Rows whose expected tail count falls below this are flagged.
pub const MIN_EXPECTED_COUNT: f64 = 20.0;

/// Tail tables with fewer replicates carry a warning.
pub const MIN_TAIL_REPLICATES: u64 = 10_000;

/// Groups for the jackknife standard error of a variance.
pub const JACKKNIFE_GROUPS: usize = 100;

/// What one replicate evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatisticKind {
    /// The trimmed statistic `L_n`.
    TrimmedL,
    /// The non-trimmed statistic of Winsorized data, `L̃_n`.
    Winsorized,
    /// An exact standard normal draw dressed up as `μ + σZ/√n`; for
    /// calibrating the tallies and intervals.
    StandardNormal,
}

/// Points at which tail probabilities are tabulated.
#[derive(Debug, Clone, PartialEq)]
pub enum XGrid {
    Explicit(Vec<f64>),
    /// `0, step, 2·step, …` up to the upper end of the deviation range.
    Auto {
        step: f64,
        an_rule: AnRule,
        big_a: f64,
    },
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub model: Model,
    pub scheme: WeightScheme,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub trim_rule: TrimRule,
    pub n_ladder: Vec<usize>,
    pub replicates: u64,
    pub master_seed: u64,
    pub x_grid: XGrid,
    /// Thread count; affects wall time only.
    pub workers: usize,
    pub statistic: StatisticKind,
    /// When nonzero, `L_n` uses `c⁰ ± amplitude/n` (alternating) instead of
    /// `c⁰`, which makes `V_n` nonzero.
    pub perturbation: f64,
}

impl SimulationConfig {
    /// ε = 1, fixed trims, n = 1000, 10⁴ replicates, seed 1, one worker.
    pub fn new(model: Model, scheme: WeightScheme, alpha: f64, beta: f64) -> Self {
        Self {
            model,
            scheme,
            alpha,
            beta,
            epsilon: 1.0,
            trim_rule: TrimRule::Fixed,
            n_ladder: vec![1000],
            replicates: 10_000,
            master_seed: 1,
            x_grid: XGrid::Explicit(vec![0.0, 0.5, 1.0, 1.5, 2.0]),
            workers: 1,
            statistic: StatisticKind::TrimmedL,
            perturbation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(config("at least two replicates are needed"));
        }
        self.validate_batch()
    }

    /// Everything [`validate`](Self::validate) checks except the replicate
    /// count; a single decomposition is a valid batch.
    pub fn validate_batch(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_ladder.is_empty() {
            return Err(config("the n ladder is empty"));
        }
        if self.replicates == 0 {
            return Err(config("replicates must be at least 1"));
        }
        if self.workers == 0 {
            return Err(config("workers must be at least 1"));
        }
        if !self.perturbation.is_finite() {
            return Err(config("perturbation amplitude must be finite"));
        }
        if self.perturbation != 0.0 && self.scheme.mode() == WeightMode::Explicit {
            return Err(config("perturbation applies to generated weights only"));
        }
        for &n in &self.n_ladder {
            self.spec_for(n)?;
        }
        Ok(())
    }

    pub fn spec_for(&self, n: usize) -> Result<TrimSpec> {
        TrimSpec::from_rule(n, self.alpha, self.beta, self.epsilon, self.trim_rule)
    }

    /// Seed of the experiment at sample size `n`.
    pub fn seed_for(&self, n: usize) -> u64 {
        mix_seed(self.master_seed, n as u64)
    }

    fn weight_function(&self) -> Result<&SharedWeight> {
        self.scheme.weight_function()
    }

    /// Sorted, deduplicated x values for sample size `n`, with warnings for
    /// points outside the deviation range.
    pub fn grid_for(&self, n: usize) -> Result<(Vec<f64>, Vec<String>)> {
        let mut warnings = Vec::new();
        let mut xs = match &self.x_grid {
            XGrid::Explicit(xs) => {
                if xs.iter().any(|x| !x.is_finite()) {
                    return Err(config("x grid contains a non-finite value"));
                }
                xs.clone()
            }
            XGrid::Auto { step, an_rule, big_a } => {
                if !(*step > 0.0) {
                    return Err(config(format!("x grid step {step} must be positive")));
                }
                let range = deviation_range(n, self.epsilon, *an_rule, *big_a)?;
                warnings.extend(range.warnings.iter().cloned());
                let count = (range.upper / step).floor() as usize;
                (0..=count).map(|i| i as f64 * step).collect()
            }
        };
        if xs.is_empty() {
            return Err(config("x grid is empty"));
        }
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        if let XGrid::Explicit(_) = self.x_grid {
            if let Ok(range) = deviation_range(n, self.epsilon, AnRule::default(), 1.0) {
                let outside = xs.iter().filter(|&&x| x > range.upper).count();
                if outside > 0 {
                    warnings.push(format!(
                        "{outside} grid points exceed a_n·z_n = {} for the default a_n at n={n}",
                        range.upper
                    ));
                }
            }
        }
        Ok((xs, warnings))
    }
}

/// Everything needed to evaluate one replicate at a fixed n.
#[derive(Debug, Clone)]
struct Prepared {
    model: Model,
    spec: TrimSpec,
    kind: StatisticKind,
    seed: u64,
    coeffs: Vec<f64>,
    constant_coeff: Option<f64>,
    /// `J`, when the sum form is cross-checked against the integral form.
    check_with: Option<SharedWeight>,
    winsor: Option<WinsorPlan>,
    mu: f64,
    sigma: f64,
}

#[derive(Debug, Clone)]
struct WinsorPlan {
    xi_alpha: f64,
    xi_upper: f64,
    ctilde: Vec<f64>,
    constant: Option<f64>,
}

fn constant_of(c: &[f64]) -> Option<f64> {
    let first = *c.first()?;
    c.iter().all(|&v| v == first).then_some(first)
}

impl Prepared {
    fn new(cfg: &SimulationConfig, n: usize) -> Result<Self> {
        let spec = cfg.spec_for(n)?;
        let j = cfg.weight_function()?;
        let sigma2 = asymptotic_sigma2(j.as_ref(), &cfg.model, cfg.alpha, cfg.beta)?;
        let generated = generated_weights(j.as_ref(), &spec)?;
        let coeffs = match cfg.scheme.explicit_coefficients() {
            Some(_) => cfg.scheme.coefficients_for(&spec)?.into_owned(),
            None if cfg.perturbation != 0.0 => alternating_perturbation(&generated, spec.k() + 1, n, cfg.perturbation),
            None => generated,
        };
        let generated_mode = cfg.scheme.mode() == WeightMode::Generated && cfg.perturbation == 0.0;
        let (mu, winsor) = match cfg.statistic {
            StatisticKind::Winsorized => {
                let wmodel = WinsorizedModel::new(cfg.model, cfg.alpha, cfg.beta)?;
                let j_w = extended_weight(Arc::clone(j), cfg.alpha, cfg.beta)?;
                let ctilde = cell_weights(&j_w, n, 1..=n);
                let plan = WinsorPlan {
                    xi_alpha: wmodel.xi_alpha(),
                    xi_upper: wmodel.xi_upper(),
                    constant: constant_of(&ctilde),
                    ctilde,
                };
                (approx_centering(&j_w, &wmodel)?, Some(plan))
            }
            _ => (centering_mu(j.as_ref(), &cfg.model, &spec)?, None),
        };
        Ok(Self {
            model: cfg.model,
            spec,
            kind: cfg.statistic,
            seed: cfg.seed_for(n),
            constant_coeff: constant_of(&coeffs),
            coeffs,
            check_with: generated_mode.then(|| Arc::clone(j)),
            winsor,
            mu,
            sigma: sigma2.sqrt(),
        })
    }

    fn draw(&self, rng: &mut ReplicateRng, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend((0..self.spec.n()).map(|_| self.model.quantile(open_unit(rng))));
    }

    /// Raw statistic for replicate `r`.
    fn evaluate(&self, r: u64, buf: &mut Vec<f64>) -> Result<f64> {
        let mut rng = seed_stream(self.seed, r);
        let n = self.spec.n();
        match self.kind {
            StatisticKind::StandardNormal => {
                let z = std_normal_quantile(open_unit(&mut rng));
                Ok(self.mu + self.sigma * z / (n as f64).sqrt())
            }
            StatisticKind::Winsorized => {
                self.draw(&mut rng, buf);
                let plan = self.winsor.as_ref().expect("Winsorized plan");
                for x in buf.iter_mut() {
                    *x = x.clamp(plan.xi_alpha, plan.xi_upper);
                }
                match plan.constant {
                    Some(c) => Ok(c * buf.iter().copied().collect::<CompensatedSum>().value() / n as f64),
                    None => {
                        buf.sort_unstable_by(f64::total_cmp);
                        Ok(weighted_order_sum(buf, &plan.ctilde, 1, n))
                    }
                }
            }
            StatisticKind::TrimmedL => {
                self.draw(&mut rng, buf);
                let (k, keep) = (self.spec.k(), self.spec.retained_len());
                let value = match self.constant_coeff {
                    Some(c) => {
                        // Only the retained block is needed, not its order.
                        buf.select_nth_unstable_by(k, f64::total_cmp);
                        let upper = &mut buf[k..];
                        if keep < upper.len() {
                            upper.select_nth_unstable_by(keep, f64::total_cmp);
                        }
                        c * upper[..keep].iter().copied().collect::<CompensatedSum>().value() / n as f64
                    }
                    None => {
                        buf.sort_unstable_by(f64::total_cmp);
                        weighted_order_sum(buf, &self.coeffs, k + 1, n)
                    }
                };
                if r.is_multiple_of(100) {
                    if let Some(j) = &self.check_with {
                        self.check_integral_form(buf, j, value)?;
                    }
                }
                Ok(value)
            }
        }
    }

    fn check_integral_form(&self, buf: &mut [f64], j: &SharedWeight, value: f64) -> Result<()> {
        buf.sort_unstable_by(f64::total_cmp);
        let frame = SampleFrame::from_sorted(buf.to_vec())?;
        let integral = step_integral(&frame, j.as_ref(), self.spec.alpha_n(), self.spec.upper_n());
        let scale: f64 = self.coeffs.iter().zip(&buf[self.spec.k()..]).map(|(c, x)| (c * x).abs()).sum::<f64>()
            / self.spec.n() as f64;
        if (value - integral).abs() > 1e-12 * (1.0 + scale) {
            return Err(Error::Numeric(format!(
                "sum form {value} and integral form {integral} of the statistic disagree"
            )));
        }
        Ok(())
    }
}

/// Runs `f` over `0..replicates` in chunks on a pool of `workers` threads and
/// returns the chunk results in index order.
fn run_chunks<T, F>(replicates: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Range<u64>) -> Result<T> + Sync + Send,
{
    let chunks = replicates.div_ceil(CHUNK);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..chunks).into_par_iter().map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(replicates))).collect())
}

/// Raw statistics of every replicate at one n.
#[derive(Debug, Clone)]
pub struct RawRun {
    pub spec: TrimSpec,
    pub mu: f64,
    pub sigma: f64,
    pub values: Vec<f64>,
}

impl RawRun {
    pub fn normalized(&self) -> impl Iterator<Item = f64> + '_ {
        let scale = (self.spec.n() as f64).sqrt() / self.sigma;
        self.values.iter().map(move |&v| scale * (v - self.mu))
    }
}

/// Evaluates the configured statistic for every replicate at sample size `n`.
pub fn simulate_raw(cfg: &SimulationConfig, n: usize) -> Result<RawRun> {
    cfg.validate()?;
    let prep = Prepared::new(cfg, n)?;
    let chunks = run_chunks(cfg.replicates, cfg.workers, |range| {
        let mut buf = Vec::with_capacity(n);
        range.map(|r| prep.evaluate(r, &mut buf)).collect::<Result<Vec<f64>>>()
    })?;
    Ok(RawRun { spec: prep.spec, mu: prep.mu, sigma: prep.sigma, values: chunks.concat() })
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(count: u64, total: u64, z: f64) -> (f64, f64) {
    let nt = total as f64;
    let p = count as f64 / nt;
    let z2 = z * z;
    let denom = 1.0 + z2 / nt;
    let center = (p + z2 / (2.0 * nt)) / denom;
    let half = z / denom * (p * (1.0 - p) / nt + z2 / (4.0 * nt * nt)).sqrt();
    // The interval contains p algebraically; keep it so through rounding.
    ((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0))
}

/// Counts of normalized values on a fixed grid over `[lo, lo + width·bins)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub lo_milli: i64,
    pub width_milli: i64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, width: f64, bins: usize) -> Self {
        Self {
            lo_milli: (lo * 1000.0).round() as i64,
            width_milli: (width * 1000.0).round() as i64,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo_milli as f64 / 1000.0
    }

    pub fn width(&self) -> f64 {
        self.width_milli as f64 / 1000.0
    }

    pub fn add(&mut self, x: f64) {
        let pos = (x - self.lo()) / self.width();
        if pos < 0.0 {
            self.underflow += 1;
        } else if pos >= self.counts.len() as f64 || pos.is_nan() {
            self.overflow += 1;
        } else {
            self.counts[pos as usize] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailRow {
    pub x: f64,
    /// `#{T > x}`
    pub count_exceed: u64,
    pub p_hat: f64,
    pub normal_tail: f64,
    pub ratio: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `#{T ≤ −x}`
    pub count_lower: u64,
    pub p_hat_lower: f64,
    /// `Φ(−x)`
    pub normal_lower: f64,
    pub ratio_lower: f64,
    pub ci_lo_lower: f64,
    pub ci_hi_lower: f64,
    /// Expected count below [`MIN_EXPECTED_COUNT`].
    pub low_mass: bool,
}

#[derive(Debug, Clone)]
pub struct TailTable {
    pub n: usize,
    pub k_n: usize,
    pub m_n: usize,
    pub mu_n: f64,
    pub sigma: f64,
    pub replicates: u64,
    pub rows: Vec<TailRow>,
    pub histogram: Histogram,
    pub mean: f64,
    pub variance: f64,
    pub warnings: Vec<String>,
    pub runtime: Duration,
}

impl TailTable {
    pub const HEADER: [&'static str; 16] = [
        "n",
        "x",
        "count_exceed",
        "p_hat",
        "normal_tail",
        "ratio",
        "ci_lo",
        "ci_hi",
        "count_lower",
        "p_hat_lower",
        "normal_cdf_neg_x",
        "ratio_lower",
        "ci_lo_lower",
        "ci_hi_lower",
        "replicates",
        "flag",
    ];

    /// Table rows; `sep` is `,` or `\t`. Contains nothing run-specific.
    pub fn to_delimited(&self, sep: char, with_header: bool) -> String {
        let mut out = String::new();
        if with_header {
            out.push_str(&Self::HEADER.join(&sep.to_string()));
            out.push('\n');
        }
        for r in &self.rows {
            let fields = [
                self.n.to_string(),
                sig17(r.x),
                r.count_exceed.to_string(),
                sig17(r.p_hat),
                sig17(r.normal_tail),
                sig17(r.ratio),
                sig17(r.ci_lo),
                sig17(r.ci_hi),
                r.count_lower.to_string(),
                sig17(r.p_hat_lower),
                sig17(r.normal_lower),
                sig17(r.ratio_lower),
                sig17(r.ci_lo_lower),
                sig17(r.ci_hi_lower),
                self.replicates.to_string(),
                if r.low_mass { "insufficient tail mass" } else { "ok" }.to_string(),
            ];
            out.push_str(&fields.join(&sep.to_string()));
            out.push('\n');
        }
        out
    }

    /// `x ratio ci_lo ci_hi` triples for both tails, for plotting.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("# n x tail ratio ci_lo ci_hi\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{} {} upper {} {} {}\n",
                self.n,
                sig17(r.x),
                sig17(r.ratio),
                sig17(r.ci_lo),
                sig17(r.ci_hi)
            ));
            out.push_str(&format!(
                "{} {} lower {} {} {}\n",
                self.n,
                sig17(r.x),
                sig17(r.ratio_lower),
                sig17(r.ci_lo_lower),
                sig17(r.ci_hi_lower)
            ));
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("n,bin_lo,bin_hi,count\n");
        let (lo, w) = (self.histogram.lo(), self.histogram.width());
        out.push_str(&format!("{},-inf,{},{}\n", self.n, sig17(lo), self.histogram.underflow));
        for (i, c) in self.histogram.counts.iter().enumerate() {
            let a = lo + w * i as f64;
            out.push_str(&format!("{},{},{},{}\n", self.n, sig17(a), sig17(a + w), c));
        }
        let top = lo + w * self.histogram.counts.len() as f64;
        out.push_str(&format!("{},{},inf,{}\n", self.n, sig17(top), self.histogram.overflow));
        out
    }
}

/// Upper- and lower-tail frequencies of the normalized statistic against
/// the standard normal, one table per n in the ladder.
pub fn simulate_tail_table(cfg: &SimulationConfig) -> Result<Vec<TailTable>> {
    cfg.validate()?;
    cfg.n_ladder.iter().map(|&n| tail_table_at(cfg, n)).collect()
}

fn tail_table_at(cfg: &SimulationConfig, n: usize) -> Result<TailTable> {
    let start = Instant::now();
    let (xs, mut warnings) = cfg.grid_for(n)?;
    if cfg.replicates < MIN_TAIL_REPLICATES {
        warnings.push(format!(
            "{} replicates is below the {MIN_TAIL_REPLICATES} recommended for tail tables",
            cfg.replicates
        ));
    }
    let run = simulate_raw(cfg, n)?;
    let mut t: Vec<f64> = run.normalized().collect();
    let mut hist = Histogram::new(-6.0, 0.1, 120);
    let mut s1 = CompensatedSum::new();
    let mut s2 = CompensatedSum::new();
    for &v in &t {
        hist.add(v);
        s1.add(v);
        s2.add(v * v);
    }
    let total = cfg.replicates;
    let nt = total as f64;
    let mean = s1.value() / nt;
    let variance = (s2.value() - nt * mean * mean) / (nt - 1.0);
    t.sort_unstable_by(f64::total_cmp);
    let rows = xs
        .iter()
        .map(|&x| {
            let count_exceed = (t.len() - t.partition_point(|&v| v <= x)) as u64;
            let count_lower = t.partition_point(|&v| v <= -x) as u64;
            let tail = normal_tail(x);
            let (lo, hi) = wilson_interval(count_exceed, total, WILSON_Z99);
            let (llo, lhi) = wilson_interval(count_lower, total, WILSON_Z99);
            let p_hat = count_exceed as f64 / nt;
            let p_low = count_lower as f64 / nt;
            TailRow {
                x,
                count_exceed,
                p_hat,
                normal_tail: tail,
                ratio: p_hat / tail,
                ci_lo: lo / tail,
                ci_hi: hi / tail,
                count_lower,
                p_hat_lower: p_low,
                normal_lower: tail,
                ratio_lower: p_low / tail,
                ci_lo_lower: llo / tail,
                ci_hi_lower: lhi / tail,
                low_mass: nt * tail < MIN_EXPECTED_COUNT,
            }
        })
        .collect();
    Ok(TailTable {
        n,
        k_n: run.spec.k(),
        m_n: run.spec.m(),
        mu_n: run.mu,
        sigma: run.sigma,
        replicates: total,
        rows,
        histogram: hist,
        mean,
        variance,
        warnings,
        runtime: start.elapsed(),
    })
}

/// Sample variance with a delete-one-group jackknife standard error. Groups
/// are contiguous index blocks, so the result does not depend on scheduling.
pub fn jackknife_variance(values: &[f64], groups: usize) -> (f64, f64) {
    let len = values.len();
    let g = groups.clamp(2, len.max(2));
    let mut s1 = vec![CompensatedSum::new(); g];
    let mut s2 = vec![CompensatedSum::new(); g];
    let mut sizes = vec![0usize; g];
    for (i, &v) in values.iter().enumerate() {
        let b = i * g / len;
        s1[b].add(v);
        s2[b].add(v * v);
        sizes[b] += 1;
    }
    let mut t1 = CompensatedSum::new();
    let mut t2 = CompensatedSum::new();
    for b in 0..g {
        t1.merge(&s1[b]);
        t2.merge(&s2[b]);
    }
    let var_of = |a: f64, b: f64, m: usize| {
        let m = m as f64;
        let mean = a / m;
        (b - m * mean * mean) / (m - 1.0)
    };
    let (t1, t2) = (t1.value(), t2.value());
    let full = var_of(t1, t2, len);
    let loo: Vec<f64> = (0..g).map(|b| var_of(t1 - s1[b].value(), t2 - s2[b].value(), len - sizes[b])).collect();
    let mean_loo = loo.iter().sum::<f64>() / g as f64;
    let ss: f64 = loo.iter().map(|v| (v - mean_loo).powi(2)).sum();
    (full, ((g as f64 - 1.0) / g as f64 * ss).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRatioRow {
    pub n: usize,
    pub k_n: usize,
    pub m_n: usize,
    pub replicates: u64,
    pub mean: f64,
    pub variance: f64,
    /// `n·Var/σ²`
    pub ratio: f64,
    pub se: f64,
    /// `C·n^{−ε/(2+ε)}`
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRatioReport {
    pub sigma2: f64,
    pub exponent: f64,
    pub fitted_c: f64,
    pub rows: Vec<VarianceRatioRow>,
}

impl VarianceRatioReport {
    pub const CSV_HEADER: &'static str = "n,k_n,m_n,replicates,mean,variance,ratio,se,bound";

    pub fn to_delimited(&self, sep: char) -> String {
        let mut out = Self::CSV_HEADER.replace(',', &sep.to_string());
        out.push('\n');
        for r in &self.rows {
            let f = [
                r.n.to_string(),
                r.k_n.to_string(),
                r.m_n.to_string(),
                r.replicates.to_string(),
                sig17(r.mean),
                sig17(r.variance),
                sig17(r.ratio),
                sig17(r.se),
                sig17(r.bound),
            ];
            out.push_str(&f.join(&sep.to_string()));
            out.push('\n');
        }
        out
    }
}

/// `n·Var(statistic)/σ²` along the ladder, with the envelope
/// `C·n^{−ε/(2+ε)}` fitted through the origin to `|ratio − 1|`.
pub fn variance_ratio(cfg: &SimulationConfig) -> Result<VarianceRatioReport> {
    cfg.validate()?;
    let exponent = cfg.epsilon / (2.0 + cfg.epsilon);
    let mut rows = Vec::with_capacity(cfg.n_ladder.len());
    let mut sigma2 = f64::NAN;
    for &n in &cfg.n_ladder {
        let run = simulate_raw(cfg, n)?;
        sigma2 = run.sigma * run.sigma;
        let (var, se) = jackknife_variance(&run.values, JACKKNIFE_GROUPS);
        let mean = run.values.iter().copied().collect::<CompensatedSum>().value() / run.values.len() as f64;
        let scale = n as f64 / sigma2;
        rows.push(VarianceRatioRow {
            n,
            k_n: run.spec.k(),
            m_n: run.spec.m(),
            replicates: cfg.replicates,
            mean,
            variance: var,
            ratio: scale * var,
            se: scale * se,
            bound: f64::NAN,
        });
    }
    let g = |n: usize| (n as f64).powf(-exponent);
    let num: f64 = rows.iter().map(|r| (r.ratio - 1.0).abs() * g(r.n)).sum();
    let den: f64 = rows.iter().map(|r| g(r.n) * g(r.n)).sum();
    let fitted_c = num / den;
    for r in &mut rows {
        r.bound = fitted_c * g(r.n);
    }
    Ok(VarianceRatioReport { sigma2, exponent, fitted_c, rows })
}

/// Least-squares line `y = a + b·x`; returns `(b, se(b), a)`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let m = xs.len();
    if m != ys.len() || m < 2 {
        return Err(config("slope fit needs at least two matched points"));
    }
    let mf = m as f64;
    let xbar = xs.iter().sum::<f64>() / mf;
    let ybar = ys.iter().sum::<f64>() / mf;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(config("slope fit needs distinct abscissae"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let b = sxy / sxx;
    let a = ybar - b * xbar;
    let se = if m > 2 {
        let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
        (rss / (mf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok((b, se, a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemainderRow {
    pub n: usize,
    pub k_n: usize,
    pub m_n: usize,
    pub replicates: u64,
    /// `mean(n·R_n²)`
    pub mean_n_rn2: f64,
    pub se_n_rn2: f64,
    /// `mean(n·V_n²)`
    pub mean_n_vn2: f64,
    /// `mean(n·R̂_n²)` with `R̂_n = (L⁰ − μ_n) − (L̃ − μ_L̃)`.
    pub mean_n_rn2_oracle: f64,
    pub max_abs_r2: f64,
    pub max_abs_vn: f64,
    pub max_residual: f64,
    pub failures: u64,
    pub case_counts: [u64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemainderReport {
    pub rows: Vec<RemainderRow>,
    pub slope: f64,
    pub slope_se: f64,
    pub slope_oracle: f64,
    pub slope_oracle_se: f64,
}

impl RemainderReport {
    pub const CSV_HEADER: &'static str = "n,k_n,m_n,replicates,mean_nRn2,se_nRn2,mean_nVn2,\
mean_nRn2_oracle,max_abs_R2,max_abs_Vn,max_residual,failures,fitted_slope,slope_se";

    pub fn to_delimited(&self, sep: char) -> String {
        let mut out = Self::CSV_HEADER.replace(',', &sep.to_string());
        out.push('\n');
        for r in &self.rows {
            let f = [
                r.n.to_string(),
                r.k_n.to_string(),
                r.m_n.to_string(),
                r.replicates.to_string(),
                sig17(r.mean_n_rn2),
                sig17(r.se_n_rn2),
                sig17(r.mean_n_vn2),
                sig17(r.mean_n_rn2_oracle),
                sig17(r.max_abs_r2),
                sig17(r.max_abs_vn),
                sig17(r.max_residual),
                r.failures.to_string(),
                sig17(self.slope),
                sig17(self.slope_se),
            ];
            out.push_str(&f.join(&sep.to_string()));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct RemainderTally {
    n_rn2: f64,
    n_rn2_sq: f64,
    n_vn2: f64,
    n_oracle2: f64,
    max_r2: f64,
    max_vn: f64,
    max_residual: f64,
    failures: u64,
    cases: [u64; 6],
}

/// Full decomposition per replicate; `E[n R_n²]` and `E[n V_n²]` along the
/// ladder with a log–log least-squares slope.
pub fn remainder_scaling(cfg: &SimulationConfig) -> Result<RemainderReport> {
    cfg.validate()?;
    if cfg.statistic != StatisticKind::TrimmedL {
        return Err(config("remainder scaling works on the trimmed statistic"));
    }
    let mut rows = Vec::with_capacity(cfg.n_ladder.len());
    for &n in &cfg.n_ladder {
        let spec = cfg.spec_for(n)?;
        let scheme = decomposition_scheme(cfg, &spec)?;
        let decomposer = Decomposer::new(&scheme, cfg.model, &spec)?;
        let seed = cfg.seed_for(n);
        let model = cfg.model;
        let nf = n as f64;
        let chunks = run_chunks(cfg.replicates, cfg.workers, |range| {
            let mut t = RemainderTally::default();
            let mut buf = Vec::with_capacity(n);
            for r in range {
                let mut rng = seed_stream(seed, r);
                buf.clear();
                buf.extend((0..n).map(|_| model.quantile(open_unit(&mut rng))));
                buf.sort_unstable_by(f64::total_cmp);
                let frame = SampleFrame::from_sorted(buf.clone())?;
                let rep = decomposer.report(&frame)?;
                let oracle = (rep.l0 - rep.mu_n) - (rep.ltilde - rep.mu_ltilde);
                t.n_rn2 += nf * rep.rn * rep.rn;
                t.n_rn2_sq += (nf * rep.rn * rep.rn).powi(2);
                t.n_vn2 += nf * rep.vn * rep.vn;
                t.n_oracle2 += nf * oracle * oracle;
                t.max_r2 = t.max_r2.max(rep.r2.abs());
                t.max_vn = t.max_vn.max(rep.vn.abs());
                t.max_residual = t.max_residual.max(rep.residual).max(rep.residual_full);
                t.failures += u64::from(!rep.pass());
                t.cases[usize::from(rep.case.0 - 1)] += 1;
            }
            Ok(t)
        })?;
        let mut sums = [CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new()];
        let mut total = RemainderTally::default();
        for c in &chunks {
            sums[0].add(c.n_rn2);
            sums[1].add(c.n_rn2_sq);
            sums[2].add(c.n_vn2);
            sums[3].add(c.n_oracle2);
            total.max_r2 = total.max_r2.max(c.max_r2);
            total.max_vn = total.max_vn.max(c.max_vn);
            total.max_residual = total.max_residual.max(c.max_residual);
            total.failures += c.failures;
            for i in 0..6 {
                total.cases[i] += c.cases[i];
            }
        }
        let reps = cfg.replicates as f64;
        let mean = sums[0].value() / reps;
        let var = ((sums[1].value() - reps * mean * mean) / (reps - 1.0)).max(0.0);
        rows.push(RemainderRow {
            n,
            k_n: spec.k(),
            m_n: spec.m(),
            replicates: cfg.replicates,
            mean_n_rn2: mean,
            se_n_rn2: (var / reps).sqrt(),
            mean_n_vn2: sums[2].value() / reps,
            mean_n_rn2_oracle: sums[3].value() / reps,
            max_abs_r2: total.max_r2,
            max_abs_vn: total.max_vn,
            max_residual: total.max_residual,
            failures: total.failures,
            case_counts: total.cases,
        });
    }
    let (slope, slope_se) = loglog_slope(&rows, |r| r.mean_n_rn2);
    let (slope_oracle, slope_oracle_se) = loglog_slope(&rows, |r| r.mean_n_rn2_oracle);
    Ok(RemainderReport { rows, slope, slope_se, slope_oracle, slope_oracle_se })
}

/// The scheme whose `L_n` is decomposed: the configured one, or `c⁰` with
/// the alternating perturbation when an amplitude is set.
fn decomposition_scheme(cfg: &SimulationConfig, spec: &TrimSpec) -> Result<WeightScheme> {
    if cfg.perturbation == 0.0 {
        return Ok(cfg.scheme.clone());
    }
    let j = cfg.weight_function()?;
    let c0 = generated_weights(j.as_ref(), spec)?;
    Ok(WeightScheme::explicit(
        alternating_perturbation(&c0, spec.k() + 1, spec.n(), cfg.perturbation),
        Some(Arc::clone(j)),
    ))
}

/// Sample of replicate `r` at sample size `n` under `design`.
pub fn replicate_sample(cfg: &SimulationConfig, n: usize, design: SampleDesign, r: u64) -> Result<Vec<f64>> {
    let mut rng = seed_stream(cfg.seed_for(n), r);
    design.draw(&cfg.model, cfg.alpha, cfg.beta, n, &mut rng)
}

/// Decomposition of every replicate at sample size `n`, in replicate order.
pub fn decompose_batch(cfg: &SimulationConfig, n: usize, design: SampleDesign) -> Result<Vec<DecompositionReport>> {
    cfg.validate_batch()?;
    let spec = cfg.spec_for(n)?;
    let scheme = decomposition_scheme(cfg, &spec)?;
    let decomposer = Decomposer::new(&scheme, cfg.model, &spec)?;
    let chunks = run_chunks(cfg.replicates, cfg.workers, |range| {
        range
            .map(|r| {
                let frame = SampleFrame::new(replicate_sample(cfg, n, design, r)?)?;
                decomposer.report(&frame)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(chunks.concat())
}

fn loglog_slope(rows: &[RemainderRow], y: impl Fn(&RemainderRow) -> f64) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| y(r) > 0.0).map(|r| ((r.n as f64).ln(), y(r).ln())).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    match ols_slope(&xs, &ys) {
        Ok((b, se, _)) => (b, se),
        Err(_) => (f64::NAN, f64::NAN),
    }
}

/// Histogram over the six orderings of `(α, A_n, 1−β, 1−B_n)`.
pub fn case_label(case: CaseOrdering) -> &'static str {
    match case.0 {
        1 => "alpha<=A<=1-B<1-beta",
        2 => "alpha<=A<1-beta<=1-B",
        3 => "1-beta<=A",
        4 => "A<alpha,1-beta<=1-B",
        5 => "A<alpha<=1-B<1-beta",
        _ => "1-B<alpha",
    }
}

/// Frequency of `|N − np| > nh` for `N ~ Binomial(n, p)`, from `trials`
/// simulated sums of Bernoulli draws.
pub fn binomial_exceedance_frequency(n: usize, p: f64, h: f64, trials: u64, seed: u64, workers: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(config(format!("p={p} outside (0, 1)")));
    }
    let centre = n as f64 * p;
    let limit = n as f64 * h;
    let counts = run_chunks(trials, workers, |range| {
        Ok(range
            .filter(|&r| {
                let mut rng = seed_stream(seed, r);
                let hits = (0..n).filter(|_| open_unit(&mut rng) < p).count() as f64;
                (hits - centre).abs() > limit
            })
            .count() as u64)
    })?;
    Ok(counts.iter().sum::<u64>() as f64 / trials as f64)
}

/// Frequency of `√n |U_{k:n} − p| > λ` for the k-th uniform order statistic.
pub fn uniform_os_exceedance_frequency(
    n: usize,
    k: usize,
    p: f64,
    lambda: f64,
    trials: u64,
    seed: u64,
    workers: usize,
) -> Result<f64> {
    if !(1..=n).contains(&k) {
        return Err(config(format!("rank k={k} outside 1..={n}")));
    }
    let rootn = (n as f64).sqrt();
    let counts = run_chunks(trials, workers, |range| {
        let mut buf = Vec::with_capacity(n);
        Ok(range
            .filter(|&r| {
                let mut rng = seed_stream(seed, r);
                buf.clear();
                buf.extend((0..n).map(|_| open_unit(&mut rng)));
                let (_, u, _) = buf.select_nth_unstable_by(k - 1, f64::total_cmp);
                rootn * (*u - p).abs() > lambda
            })
            .count() as u64)
    })?;
    Ok(counts.iter().sum::<u64>() as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightFn;

    fn uniform_cfg() -> SimulationConfig {
        SimulationConfig::new(Model::uniform(), WeightScheme::generated(WeightFn::Constant(1.0).shared()), 0.25, 0.25)
    }

    #[test]
    fn wilson_contains_estimate() {
        for (c, t) in [(0, 100), (1, 100), (50, 100), (100, 100), (3, 1_000_000)] {
            let (lo, hi) = wilson_interval(c, t, WILSON_Z99);
            let p = c as f64 / t as f64;
            assert!(lo <= p && p <= hi);
        }
    }

    #[test]
    fn jackknife_on_known_variance() {
        let v: Vec<f64> = (0..1000).map(|i| (i % 2) as f64).collect();
        let (var, se) = jackknife_variance(&v, 10);
        assert!((var - 0.25 * 1000.0 / 999.0).abs() < 1e-12);
        assert!(se.is_finite());
    }

    #[test]
    fn results_independent_of_workers() {
        let mut cfg = uniform_cfg();
        cfg.n_ladder = vec![200];
        cfg.replicates = 9000;
        let a = simulate_raw(&cfg, 200).unwrap().values;
        cfg.workers = 4;
        let b = simulate_raw(&cfg, 200).unwrap().values;
        assert_eq!(a, b);
    }

    #[test]
    fn select_path_matches_sorted_path() {
        let cfg = uniform_cfg();
        let prep = Prepared::new(&cfg, 101).unwrap();
        let mut slow = prep.clone();
        slow.constant_coeff = None;
        let mut buf = Vec::new();
        for r in 0..50 {
            let a = prep.evaluate(r, &mut buf).unwrap();
            let b = slow.evaluate(r, &mut buf).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn tail_table_invariants() {
        let mut cfg = uniform_cfg();
        cfg.n_ladder = vec![100];
        cfg.replicates = 5000;
        cfg.x_grid = XGrid::Explicit(vec![1.0, 0.0, 3.0, 2.0]);
        let t = &simulate_tail_table(&cfg).unwrap()[0];
        assert_eq!(t.histogram.total(), 5000);
        assert!(t.rows.windows(2).all(|w| w[0].x < w[1].x && w[0].count_exceed >= w[1].count_exceed));
        for r in &t.rows {
            assert!(r.ci_lo <= r.ratio && r.ratio <= r.ci_hi);
            assert!((0.0..=1.0).contains(&r.p_hat));
        }
        assert!(t.rows[3].low_mass);
        assert!(!t.rows[0].low_mass);
        assert!(!t.warnings.is_empty());
    }

    #[test]
    fn standard_normal_hook_is_calibrated() {
        let mut cfg = uniform_cfg();
        cfg.statistic = StatisticKind::StandardNormal;
        cfg.n_ladder = vec![50];
        cfg.replicates = 20_000;
        let t = &simulate_tail_table(&cfg).unwrap()[0];
        for r in &t.rows {
            assert!(r.ci_lo <= 1.0 && 1.0 <= r.ci_hi, "{r:?}");
        }
    }

    #[test]
    fn ols_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let (b, se, a) = ols_slope(&xs, &ys).unwrap();
        assert!((b + 0.5).abs() < 1e-14 && (a - 2.0).abs() < 1e-14 && se < 1e-12);
    }

    #[test]
    fn exact_trims_give_zero_r2_and_vn() {
        let mut cfg = SimulationConfig::new(
            Model::exponential(),
            WeightScheme::generated(WeightFn::Constant(1.0).shared()),
            0.2,
            0.2,
        );
        cfg.n_ladder = vec![250, 500];
        cfg.replicates = 300;
        let rep = remainder_scaling(&cfg).unwrap();
        for r in &rep.rows {
            assert_eq!(r.max_abs_r2, 0.0);
            assert_eq!(r.max_abs_vn, 0.0);
            assert_eq!(r.failures, 0);
        }
    }

    #[test]
    fn perturbation_makes_vn_nonzero() {
        let mut cfg = uniform_cfg();
        cfg.n_ladder = vec![100];
        cfg.replicates = 50;
        cfg.perturbation = 0.5;
        let rep = remainder_scaling(&cfg).unwrap();
        assert!(rep.rows[0].max_abs_vn > 0.0);
        assert_eq!(rep.rows[0].failures, 0);
    }
}
