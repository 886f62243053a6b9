//! One runner per subcommand. Each writes its files into the output
//! directory and reports whether its pass criterion held.

use std::fmt::Write as _;
use std::path::PathBuf;

use trimlstat::bounds::{hoeffding_table, mills_bracket, normal_tail, uniform_os_table, BoundRow};
use trimlstat::mc::{
    binomial_exceedance_frequency, case_label, decompose_batch, remainder_scaling, replicate_sample,
    simulate_tail_table, uniform_os_exceedance_frequency, variance_ratio, VarianceRatioRow,
};
use trimlstat::numeric::sig17;
use trimlstat::stream::mix_seed;
use trimlstat::weights::extended_weight;
use trimlstat::winsor::approx_centering;
use trimlstat::{asymptotic_sigma2, centering_mu, CaseOrdering, QuantileModel, WinsorizedModel};

use crate::config::{RawConfig, Settings};
use crate::manifest::{Clock, RunManifest};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Decompose,
    Constants,
    Tails,
    VarianceRatio,
    Remainder,
    Bounds,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Decompose => "decompose",
            Command::Constants => "constants",
            Command::Tails => "tails",
            Command::VarianceRatio => "variance-ratio",
            Command::Remainder => "remainder",
            Command::Bounds => "bounds",
        }
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: PathBuf,
    pub replicates: Option<u64>,
    pub n: Option<String>,
    pub tsv: bool,
    /// `decompose` only: also write the first sample and its report.
    pub sample: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            config: None,
            seed: None,
            workers: None,
            out: PathBuf::from("out"),
            replicates: None,
            n: None,
            tsv: false,
            sample: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub summary: String,
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
}

struct Ctx {
    out: PathBuf,
    sep: char,
    ext: &'static str,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
        self.outputs.push(path);
        Ok(())
    }

    fn table(&self, name: &str) -> String {
        format!("{name}.{}", self.ext)
    }

    /// Re-delimits a comma-separated line.
    fn delim(&self, s: &str) -> String {
        if self.sep == ',' {
            s.to_string()
        } else {
            s.replace(',', &self.sep.to_string())
        }
    }
}

/// Resolves the configuration (file, environment, flags) into a raw map.
pub fn resolve_config<I>(opts: &Options, env: I) -> Result<RawConfig, CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut raw = match &opts.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    raw.apply_env(env)?;
    if let Some(seed) = opts.seed {
        raw.set("mc.seed", &seed.to_string())?;
    }
    if let Some(w) = opts.workers {
        raw.set("mc.workers", &w.to_string())?;
    }
    if let Some(r) = opts.replicates {
        raw.set("mc.replicates", &r.to_string())?;
    }
    if let Some(n) = &opts.n {
        raw.set("trim.n", n)?;
    }
    Ok(raw)
}

/// Runs `cmd` and writes its outputs and manifest.
pub fn execute<I>(cmd: Command, opts: &Options, env: I) -> Result<Outcome, CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let clock = Clock::start();
    let raw = resolve_config(opts, env)?;
    let settings = Settings::from_raw(&raw)?;
    std::fs::create_dir_all(&opts.out).map_err(|source| CliError::Io { path: opts.out.clone(), source })?;
    let mut ctx = Ctx {
        out: opts.out.clone(),
        sep: if opts.tsv { '\t' } else { ',' },
        ext: if opts.tsv { "tsv" } else { "csv" },
        outputs: Vec::new(),
    };
    let (pass, summary) = match cmd {
        Command::Decompose => decompose(&settings, &mut ctx, opts.sample)?,
        Command::Constants => constants(&settings, &mut ctx)?,
        Command::Tails => tails(&settings, &mut ctx)?,
        Command::VarianceRatio => variance_ratio_cmd(&settings, &mut ctx)?,
        Command::Remainder => remainder(&settings, &mut ctx)?,
        Command::Bounds => bounds(&settings, &mut ctx)?,
    };
    let status = if pass { "PASS" } else { "FAIL" };
    let manifest = RunManifest::finish(
        clock,
        cmd.name(),
        opts.config.clone(),
        raw.canonical(),
        raw.hash(),
        settings.sim.master_seed,
        settings.sim.workers,
        ctx.outputs.clone(),
        status,
    );
    let manifest_path = ctx.out.join("manifest.txt");
    std::fs::write(&manifest_path, manifest.render())
        .map_err(|source| CliError::Io { path: manifest_path.clone(), source })?;
    Ok(Outcome { pass, summary, outputs: ctx.outputs, manifest: manifest_path })
}

fn decompose(s: &Settings, ctx: &mut Ctx, with_sample: bool) -> Result<(bool, String), CliError> {
    let sim = &s.sim;
    let mut csv = ctx.delim(&format!("replicate,{}", trimlstat::DecompositionReport::CSV_HEADER));
    csv.push('\n');
    let mut cases = [0u64; 6];
    let (mut failures, mut total) = (0u64, 0u64);
    let (mut max_res, mut max_full) = (0.0f64, 0.0f64);
    let mut sample_text = String::new();
    for &n in &sim.n_ladder {
        let reports = decompose_batch(sim, n, s.design)?;
        for (r, rep) in reports.iter().enumerate() {
            csv.push_str(&ctx.delim(&format!("{r},{}", rep.csv_row())));
            csv.push('\n');
            cases[usize::from(rep.case.0 - 1)] += 1;
            failures += u64::from(!rep.pass());
            total += 1;
            max_res = max_res.max(rep.residual);
            max_full = max_full.max(rep.residual_full);
        }
        if with_sample && sample_text.is_empty() {
            if let Some(rep) = reports.first() {
                let mut xs = replicate_sample(sim, n, s.design, 0)?;
                xs.sort_by(f64::total_cmp);
                let _ = writeln!(sample_text, "seed = {}", sim.master_seed);
                let _ =
                    writeln!(sample_text, "sample = {}", xs.iter().map(|&x| sig17(x)).collect::<Vec<_>>().join(", "));
                let _ = writeln!(sample_text, "{rep}");
            }
        }
    }
    ctx.write(&ctx.table("decompose"), &csv)?;
    let mut summary = String::from("metric,value\n");
    let mut case_text = String::new();
    let _ = writeln!(summary, "replicates,{total}");
    let _ = writeln!(summary, "failures,{failures}");
    let _ = writeln!(summary, "max_residual,{}", sig17(max_res));
    let _ = writeln!(summary, "max_residual_full,{}", sig17(max_full));
    for (i, c) in cases.iter().enumerate() {
        let case = CaseOrdering(i as u8 + 1);
        let _ = writeln!(summary, "case_{},{c}", case.0);
        let _ = writeln!(case_text, "  case {} ({}): {c}", case.0, case_label(case));
    }
    let summary = ctx.delim(&summary);
    ctx.write(&ctx.table("decompose_summary"), &summary)?;
    if with_sample {
        ctx.write("decompose_sample.txt", &sample_text)?;
    }
    let text = format!(
        "decompose: {total} replicates, {failures} failures, max residual {max_res:e}\n{case_text}{sample_text}"
    );
    Ok((failures == 0, text))
}

fn constants(s: &Settings, ctx: &mut Ctx) -> Result<(bool, String), CliError> {
    let sim = &s.sim;
    let j = sim.scheme.weight_function()?;
    let model = sim.model;
    let sigma2 = asymptotic_sigma2(j.as_ref(), &model, sim.alpha, sim.beta)?;
    let xi_alpha = if sim.alpha > 0.0 { model.quantile(sim.alpha) } else { model.quantile_at_zero() };
    let xi_upper = model.quantile(1.0 - sim.beta);
    let mu_ltilde = if sim.alpha > 0.0 && sim.beta > 0.0 {
        let wmodel = WinsorizedModel::new(model, sim.alpha, sim.beta)?;
        let j_w = extended_weight(j.clone(), sim.alpha, sim.beta)?;
        approx_centering(&j_w, &wmodel)?
    } else {
        f64::NAN
    };
    let mut csv = String::from("n,k_n,m_n,alpha,beta,mu_n,sigma2,xi_alpha,xi_1mb,mu_L_tilde\n");
    let mut text = String::new();
    for &n in &sim.n_ladder {
        let spec = sim.spec_for(n)?;
        let mu_n = centering_mu(j.as_ref(), &model, &spec)?;
        let row = format!(
            "{n},{},{},{},{},{},{},{},{},{}",
            spec.k(),
            spec.m(),
            sig17(sim.alpha),
            sig17(sim.beta),
            sig17(mu_n),
            sig17(sigma2),
            sig17(xi_alpha),
            sig17(xi_upper),
            sig17(mu_ltilde)
        );
        csv.push_str(&row);
        csv.push('\n');
        let _ = writeln!(text, "n={n}: mu_n = {mu_n:.12}, sigma2 = {sigma2:.12}, mu_L~ = {mu_ltilde:.12}");
    }
    let csv = ctx.delim(&csv);
    ctx.write(&ctx.table("constants"), &csv)?;
    Ok((true, text))
}

fn tails(s: &Settings, ctx: &mut Ctx) -> Result<(bool, String), CliError> {
    let tol = s.ratio_tolerance;
    let tables = simulate_tail_table(&s.sim)?;
    let mut csv = String::new();
    let mut plot = String::new();
    let mut hist = String::new();
    let mut text = String::new();
    let mut bad = 0usize;
    for (i, t) in tables.iter().enumerate() {
        csv.push_str(&t.to_delimited(ctx.sep, i == 0));
        plot.push_str(&t.plot_data());
        let h = t.histogram_csv();
        let h = if i == 0 { h } else { h.lines().skip(1).map(|l| format!("{l}\n")).collect() };
        hist.push_str(&ctx.delim(&h));
        for w in &t.warnings {
            let _ = writeln!(text, "warning (n={}): {w}", t.n);
        }
        for r in &t.rows {
            if r.low_mass {
                continue;
            }
            let covers = |lo: f64, hi: f64| lo <= 1.0 + tol && hi >= 1.0 - tol;
            if !covers(r.ci_lo, r.ci_hi) || !covers(r.ci_lo_lower, r.ci_hi_lower) {
                bad += 1;
                let _ = writeln!(
                    text,
                    "n={} x={}: upper CI [{:.4}, {:.4}], lower CI [{:.4}, {:.4}] miss [{}, {}]",
                    t.n,
                    r.x,
                    r.ci_lo,
                    r.ci_hi,
                    r.ci_lo_lower,
                    r.ci_hi_lower,
                    1.0 - tol,
                    1.0 + tol
                );
            }
        }
        let _ = writeln!(
            text,
            "n={}: mu_n = {:.10}, sigma = {:.10}, mean = {:.5}, variance = {:.5}, {:.1}s",
            t.n,
            t.mu_n,
            t.sigma,
            t.mean,
            t.variance,
            t.runtime.as_secs_f64()
        );
    }
    ctx.write(&ctx.table("tails"), &csv)?;
    ctx.write("tails_plot.dat", &plot)?;
    ctx.write(&ctx.table("tails_hist"), &hist)?;
    let _ = writeln!(text, "tails: {bad} unflagged rows outside the tolerance band");
    Ok((bad == 0, text))
}

/// `|ratio − 1|` must not grow along the ladder, except for at most one
/// step whose increase stays within one standard error, and must end at or
/// below `tol`.
pub fn ladder_check(rows: &[VarianceRatioRow], tol: f64) -> (bool, String) {
    let dev: Vec<f64> = rows.iter().map(|r| (r.ratio - 1.0).abs()).collect();
    let mut inversions = 0;
    let mut ok = true;
    let mut why = String::new();
    for i in 1..dev.len() {
        if dev[i] > dev[i - 1] {
            inversions += 1;
            let rise = dev[i] - dev[i - 1];
            if rise > rows[i].se || inversions > 1 {
                ok = false;
                let _ = writeln!(why, "|ratio-1| rises by {rise:.5} at n={} (se {:.5})", rows[i].n, rows[i].se);
            }
        }
    }
    if let Some(&last) = dev.last() {
        if !(last <= tol) {
            ok = false;
            let _ = writeln!(why, "|ratio-1| = {last:.5} at the largest n exceeds {tol}");
        }
    }
    (ok, why)
}

fn variance_ratio_cmd(s: &Settings, ctx: &mut Ctx) -> Result<(bool, String), CliError> {
    let report = variance_ratio(&s.sim)?;
    ctx.write(&ctx.table("variance_ratio"), &report.to_delimited(ctx.sep))?;
    let (ok, why) = ladder_check(&report.rows, s.ratio_tolerance);
    let mut text = String::new();
    for r in &report.rows {
        let _ = writeln!(text, "n={}: ratio = {:.5} ± {:.5}, envelope {:.5}", r.n, r.ratio, r.se, r.bound);
    }
    text.push_str(&why);
    Ok((ok, text))
}

fn remainder(s: &Settings, ctx: &mut Ctx) -> Result<(bool, String), CliError> {
    let sim = &s.sim;
    let report = remainder_scaling(sim)?;
    ctx.write(&ctx.table("remainder"), &report.to_delimited(ctx.sep))?;
    let mut cases = String::from("n");
    for c in 1..=6u8 {
        let _ = write!(cases, ",case_{c}");
    }
    cases.push('\n');
    for r in &report.rows {
        let _ = write!(cases, "{}", r.n);
        for c in r.case_counts {
            let _ = write!(cases, ",{c}");
        }
        cases.push('\n');
    }
    let cases = ctx.delim(&cases);
    ctx.write(&ctx.table("remainder_cases"), &cases)?;
    let target = -sim.epsilon / (2.0 + sim.epsilon);
    let failures: u64 = report.rows.iter().map(|r| r.failures).sum();
    let ok = report.slope <= target + s.slope_slack && failures == 0;
    let text = format!(
        "remainder: slope {:.4} ± {:.4} (oracle {:.4}), required ≤ {:.4}; {failures} identity failures\n",
        report.slope,
        report.slope_se,
        report.slope_oracle,
        target + s.slope_slack
    );
    Ok((ok, text))
}

fn bounds(s: &Settings, ctx: &mut Ctx) -> Result<(bool, String), CliError> {
    let b = &s.bounds;
    let sim = &s.sim;
    let mut rows: Vec<(BoundRow, f64)> = Vec::new();
    let mut salt = 0u64;
    let mut next_seed = || {
        salt += 1;
        mix_seed(sim.master_seed, 0xB0_0000 + salt)
    };
    for row in hoeffding_table(&b.hoeffding_n, &b.hoeffding_h)? {
        let f = binomial_exceedance_frequency(row.n, b.hoeffding_p, row.param, b.trials, next_seed(), sim.workers)?;
        rows.push((row, f));
    }
    for row in uniform_os_table(b.os_n, &b.os_lambda, &b.os_p)? {
        let k = ((row.p * b.os_n as f64).round() as usize).clamp(1, b.os_n);
        let f = uniform_os_exceedance_frequency(b.os_n, k, row.p, row.param, b.trials, next_seed(), sim.workers)?;
        rows.push((row, f));
    }
    let mut csv = format!("{},frequency,trials,status\n", BoundRow::CSV_HEADER);
    let mut bad = 0;
    for (row, f) in &rows {
        let ok = *f <= row.bound;
        bad += usize::from(!ok);
        let _ = writeln!(csv, "{},{},{},{}", row.csv_row(), sig17(*f), b.trials, if ok { "ok" } else { "exceeded" });
    }
    let csv = ctx.delim(&csv);
    ctx.write(&ctx.table("bounds"), &csv)?;
    let mut mills = String::from("x,lower,normal_tail,upper,status\n");
    let mut mills_bad = 0;
    for &x in &b.mills_x {
        let (lo, hi) = mills_bracket(x)?;
        let t = normal_tail(x);
        let ok = lo <= t && t <= hi;
        mills_bad += usize::from(!ok);
        let _ = writeln!(
            mills,
            "{},{},{},{},{}",
            sig17(x),
            sig17(lo),
            sig17(t),
            sig17(hi),
            if ok { "ok" } else { "violated" }
        );
    }
    let mills = ctx.delim(&mills);
    ctx.write(&ctx.table("bounds_mills"), &mills)?;
    let text = format!(
        "bounds: {} of {} frequencies above their bound; {mills_bad} Mills bracket violations\n",
        bad,
        rows.len()
    );
    Ok((bad == 0 && mills_bad == 0, text))
}
