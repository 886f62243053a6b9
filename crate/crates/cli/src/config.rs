//! Configuration files: sectioned `key = value` text, overridden by
//! `TRIMLSTAT_<SECTION>_<KEY>` environment variables and then by flags.
//!
//! The canonical form is one `section.key = value` line per key, sorted,
//! with internal whitespace collapsed and no spaces around commas. The
//! worker count is left out of it because it never changes an output.

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use ini::Ini;
use trimlstat::bounds::AnRule;
use trimlstat::weights::parse_coefficients_csv;
use trimlstat::{Model, SampleDesign, SimulationConfig, StatisticKind, TrimRule, WeightFn, WeightScheme, XGrid};

use crate::CliError;

pub const ENV_PREFIX: &str = "TRIMLSTAT_";

/// Every key a configuration may set.
pub const KNOWN_KEYS: &[&str] = &[
    "model.name",
    "model.lo",
    "model.hi",
    "model.rate",
    "model.mean",
    "model.sd",
    "model.shape",
    "model.scale",
    "model.gap",
    "weights.kind",
    "weights.value",
    "weights.intercept",
    "weights.slope",
    "weights.c0",
    "weights.c1",
    "weights.c2",
    "weights.coeffs",
    "weights.lo",
    "weights.hi",
    "weights.file",
    "weights.perturbation",
    "trim.alpha",
    "trim.beta",
    "trim.epsilon",
    "trim.rule",
    "trim.constant",
    "trim.k",
    "trim.m",
    "trim.n",
    "mc.replicates",
    "mc.seed",
    "mc.workers",
    "mc.statistic",
    "mc.x_grid",
    "mc.x_step",
    "mc.an_rule",
    "mc.an_scale",
    "mc.an_value",
    "mc.big_a",
    "mc.design",
    "mc.mixture",
    "mc.ratio_tolerance",
    "mc.slope_slack",
    "bounds.hoeffding_n",
    "bounds.hoeffding_h",
    "bounds.hoeffding_p",
    "bounds.os_n",
    "bounds.os_lambda",
    "bounds.os_p",
    "bounds.trials",
    "bounds.mills_x",
];

const NOT_HASHED: &[&str] = &["mc.workers"];

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Flat view of a configuration after all overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
    /// Directory relative paths (the coefficient file) are resolved against.
    base_dir: PathBuf,
}

impl RawConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| cfg_err(format!("unreadable config: {e}")))?;
        let mut cfg = RawConfig { entries: BTreeMap::new(), base_dir: base_dir.to_path_buf() };
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                let Some(section) = section else {
                    return Err(cfg_err(format!("key '{key}' appears before any [section]")));
                };
                cfg.set(&format!("{}.{}", section.trim(), key.trim()), value)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.to_ascii_lowercase();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(cfg_err(format!("unknown config key '{key}'")));
        }
        self.entries.insert(key, normalize_value(value));
        Ok(())
    }

    /// Applies `TRIMLSTAT_SECTION_KEY` variables; any other variable with the
    /// prefix is rejected so that typos do not pass silently.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_ascii_lowercase(), v)))
            .collect();
        found.sort();
        for (rest, value) in found {
            let key = match rest.split_once('_') {
                Some((section, key)) => format!("{section}.{key}"),
                None => rest.clone(),
            };
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(cfg_err(format!(
                    "environment variable {ENV_PREFIX}{} names no config key",
                    rest.to_ascii_uppercase()
                )));
            }
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            if NOT_HASHED.contains(&k.as_str()) {
                continue;
            }
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn hash(&self) -> u64 {
        fnv1a(self.canonical().as_bytes())
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_f64(key, v),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| cfg_err(format!("{key}: '{v}' is not a non-negative integer"))),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        self.u64_or(key, default as u64).map(|v| v as usize)
    }

    fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v.split(',').map(|s| parse_f64(key, s)).collect(),
        }
    }

    fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, CliError> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| s.parse().map_err(|_| cfg_err(format!("{key}: '{s}' is not a non-negative integer"))))
                .collect(),
        }
    }

    fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    /// Rejects keys that do not belong to the chosen variant.
    fn only(&self, prefix: &str, allowed: &[&str], owner: &str) -> Result<(), CliError> {
        for key in self.entries.keys().filter(|k| k.starts_with(prefix)) {
            if !allowed.contains(&key.as_str()) {
                return Err(cfg_err(format!("{key} does not apply to {owner}")));
            }
        }
        Ok(())
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn normalize_value(v: &str) -> String {
    let collapsed = v.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.split(',').map(str::trim).collect::<Vec<_>>().join(",")
}

fn parse_f64(key: &str, v: &str) -> Result<f64, CliError> {
    let x: f64 = v.trim().parse().map_err(|_| cfg_err(format!("{key}: '{v}' is not a number")))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(cfg_err(format!("{key}: '{v}' is not finite")))
    }
}

#[derive(Debug, Clone)]
pub struct BoundsSettings {
    pub hoeffding_n: Vec<usize>,
    pub hoeffding_h: Vec<f64>,
    pub hoeffding_p: f64,
    pub os_n: usize,
    pub os_lambda: Vec<f64>,
    pub os_p: Vec<f64>,
    pub trials: u64,
    pub mills_x: Vec<f64>,
}

/// A configuration resolved into typed values.
#[derive(Debug, Clone)]
pub struct Settings {
    pub sim: SimulationConfig,
    pub design: SampleDesign,
    pub ratio_tolerance: f64,
    pub slope_slack: f64,
    pub bounds: BoundsSettings,
}

impl Settings {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        let model = model_from(raw)?;
        let scheme = scheme_from(raw)?;
        let alpha = raw.f64_or("trim.alpha", 0.25)?;
        let beta = raw.f64_or("trim.beta", 0.25)?;
        let mut sim = SimulationConfig::new(model, scheme, alpha, beta);
        sim.epsilon = raw.f64_or("trim.epsilon", 1.0)?;
        sim.trim_rule = match raw.str_or("trim.rule", "fixed") {
            "fixed" => TrimRule::Fixed,
            "rate" => TrimRule::Rate { constant: raw.f64_or("trim.constant", 0.5)? },
            "counts" => {
                if raw.get("trim.k").is_none() || raw.get("trim.m").is_none() {
                    return Err(cfg_err("trim.rule = counts needs both trim.k and trim.m"));
                }
                TrimRule::Counts { k: raw.usize_or("trim.k", 0)?, m: raw.usize_or("trim.m", 0)? }
            }
            other => return Err(cfg_err(format!("trim.rule '{other}' is not fixed, rate or counts"))),
        };
        if !matches!(sim.trim_rule, TrimRule::Rate { .. }) && raw.get("trim.constant").is_some() {
            return Err(cfg_err("trim.constant applies to trim.rule = rate only"));
        }
        if !matches!(sim.trim_rule, TrimRule::Counts { .. })
            && (raw.get("trim.k").is_some() || raw.get("trim.m").is_some())
        {
            return Err(cfg_err("trim.k and trim.m apply to trim.rule = counts only"));
        }
        sim.n_ladder = raw.usize_list_or("trim.n", &[1000])?;
        sim.replicates = raw.u64_or("mc.replicates", 10_000)?;
        sim.master_seed = raw.u64_or("mc.seed", 1)?;
        sim.workers = raw.usize_or("mc.workers", 1)?;
        sim.statistic = match raw.str_or("mc.statistic", "trimmed") {
            "trimmed" => StatisticKind::TrimmedL,
            "winsorized" => StatisticKind::Winsorized,
            "normal" => StatisticKind::StandardNormal,
            other => return Err(cfg_err(format!("mc.statistic '{other}' is not trimmed, winsorized or normal"))),
        };
        sim.perturbation = raw.f64_or("weights.perturbation", 0.0)?;
        sim.x_grid = match raw.str_or("mc.x_grid", "0,0.5,1,1.5,2") {
            "auto" => {
                let an_rule = match raw.str_or("mc.an_rule", "inverse_log") {
                    "inverse_log" => AnRule::InverseLog { scale: raw.f64_or("mc.an_scale", 1.0)? },
                    "explicit" => AnRule::Explicit(
                        raw.get("mc.an_value")
                            .ok_or_else(|| cfg_err("mc.an_rule = explicit needs mc.an_value"))
                            .and_then(|v| parse_f64("mc.an_value", v))?,
                    ),
                    other => return Err(cfg_err(format!("mc.an_rule '{other}' is not inverse_log or explicit"))),
                };
                XGrid::Auto { step: raw.f64_or("mc.x_step", 0.25)?, an_rule, big_a: raw.f64_or("mc.big_a", 1.0)? }
            }
            _ => {
                for key in ["mc.x_step", "mc.an_rule", "mc.an_scale", "mc.an_value", "mc.big_a"] {
                    if raw.get(key).is_some() {
                        return Err(cfg_err(format!("{key} applies to mc.x_grid = auto only")));
                    }
                }
                XGrid::Explicit(raw.f64_list_or("mc.x_grid", &[0.0, 0.5, 1.0, 1.5, 2.0])?)
            }
        };
        let design = match raw.str_or("mc.design", "iid") {
            "iid" => SampleDesign::Iid,
            "random_mixture" => SampleDesign::RandomMixture,
            "mixture" => {
                let w = raw.f64_list_or("mc.mixture", &[])?;
                let w: [f64; 3] = w
                    .try_into()
                    .map_err(|_| cfg_err("mc.design = mixture needs mc.mixture with three band weights"))?;
                SampleDesign::Mixture(w)
            }
            other => return Err(cfg_err(format!("mc.design '{other}' is not iid, mixture or random_mixture"))),
        };
        if !matches!(design, SampleDesign::Mixture(_)) && raw.get("mc.mixture").is_some() {
            return Err(cfg_err("mc.mixture applies to mc.design = mixture only"));
        }
        let bounds = BoundsSettings {
            hoeffding_n: raw.usize_list_or("bounds.hoeffding_n", &[50, 100, 200])?,
            hoeffding_h: raw.f64_list_or("bounds.hoeffding_h", &[0.05, 0.1, 0.15])?,
            hoeffding_p: raw.f64_or("bounds.hoeffding_p", 0.3)?,
            os_n: raw.usize_or("bounds.os_n", 100)?,
            os_lambda: raw.f64_list_or("bounds.os_lambda", &[0.5, 1.0, 2.0])?,
            os_p: raw.f64_list_or("bounds.os_p", &[0.25, 0.5, 0.75])?,
            trials: raw.u64_or("bounds.trials", 100_000)?,
            mills_x: raw.f64_list_or("bounds.mills_x", &(0..=14).map(|i| 1.0 + 0.5 * i as f64).collect::<Vec<_>>())?,
        };
        Ok(Settings {
            sim,
            design,
            ratio_tolerance: raw.f64_or("mc.ratio_tolerance", 0.1)?,
            slope_slack: raw.f64_or("mc.slope_slack", 0.15)?,
            bounds,
        })
    }
}

fn model_from(raw: &RawConfig) -> Result<Model, CliError> {
    let name = raw.str_or("model.name", "uniform");
    let model = match name {
        "uniform" => {
            raw.only("model.", &["model.name", "model.lo", "model.hi"], "the uniform model")?;
            Model::Uniform { lo: raw.f64_or("model.lo", 0.0)?, hi: raw.f64_or("model.hi", 1.0)? }
        }
        "exponential" => {
            raw.only("model.", &["model.name", "model.rate"], "the exponential model")?;
            Model::Exponential { rate: raw.f64_or("model.rate", 1.0)? }
        }
        "normal" => {
            raw.only("model.", &["model.name", "model.mean", "model.sd"], "the normal model")?;
            Model::Normal { mean: raw.f64_or("model.mean", 0.0)?, sd: raw.f64_or("model.sd", 1.0)? }
        }
        "pareto" => {
            raw.only("model.", &["model.name", "model.shape", "model.scale"], "the Pareto model")?;
            Model::Pareto { shape: raw.f64_or("model.shape", 3.0)?, scale: raw.f64_or("model.scale", 1.0)? }
        }
        "gapped_uniform" => {
            raw.only("model.", &["model.name", "model.gap"], "the gapped uniform model")?;
            Model::GappedUniform { gap: raw.f64_or("model.gap", 1.0)? }
        }
        other => return Err(cfg_err(format!("unknown model '{other}'"))),
    };
    model.validate()?;
    Ok(model)
}

fn scheme_from(raw: &RawConfig) -> Result<WeightScheme, CliError> {
    let kind = raw.str_or("weights.kind", "constant");
    let shared = ["weights.kind", "weights.perturbation"];
    let allow = |extra: &[&'static str]| -> Vec<&'static str> { shared.iter().chain(extra).copied().collect() };
    let j = match kind {
        "constant" => {
            raw.only("weights.", &allow(&["weights.value"]), "constant weights")?;
            WeightFn::Constant(raw.f64_or("weights.value", 1.0)?)
        }
        "linear" => {
            raw.only("weights.", &allow(&["weights.intercept", "weights.slope"]), "linear weights")?;
            WeightFn::Linear {
                intercept: raw.f64_or("weights.intercept", 1.0)?,
                slope: raw.f64_or("weights.slope", 0.0)?,
            }
        }
        "quadratic" => {
            raw.only("weights.", &allow(&["weights.c0", "weights.c1", "weights.c2"]), "quadratic weights")?;
            WeightFn::Quadratic {
                c0: raw.f64_or("weights.c0", 1.0)?,
                c1: raw.f64_or("weights.c1", 0.0)?,
                c2: raw.f64_or("weights.c2", 0.0)?,
            }
        }
        "clamped_poly" => {
            raw.only(
                "weights.",
                &allow(&["weights.coeffs", "weights.lo", "weights.hi"]),
                "clamped polynomial weights",
            )?;
            WeightFn::clamped_poly(
                raw.f64_list_or("weights.coeffs", &[1.0])?,
                raw.f64_or("weights.lo", f64::MIN)?,
                raw.f64_or("weights.hi", f64::MAX)?,
            )?
        }
        "explicit" => {
            raw.only("weights.", &["weights.kind", "weights.file"], "explicit weights")?;
            let file = raw.get("weights.file").ok_or_else(|| cfg_err("weights.kind = explicit needs weights.file"))?;
            let path = raw.base_dir.join(file);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| cfg_err(format!("cannot read coefficient file {}: {e}", path.display())))?;
            return Ok(WeightScheme::explicit(parse_coefficients_csv(&text)?, None));
        }
        other => return Err(cfg_err(format!("unknown weight function '{other}'"))),
    };
    Ok(WeightScheme::generated(j.shared()))
}
