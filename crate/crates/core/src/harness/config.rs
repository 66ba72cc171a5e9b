//! Experiment configuration: a flat key=value text format, defaults, merge
//! order (CLI flag over file over default), validation, and a canonical
//! rendering used for config hashing.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::online::{OnlineConfig, TrainMethod};
use crate::outliers::OutlierSpec;
use crate::toyrl::{EnvKind, TrainerConfig};

/// Which driver a config is meant for; optional, checked when declared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Eval,
    Train,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Eval => "eval",
            Scenario::Train => "train",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scenario> {
        match s {
            "eval" => Ok(Scenario::Eval),
            "train" => Ok(Scenario::Train),
            other => Err(Error::Config(format!(
                "unknown scenario '{other}' (expected eval or train)"
            ))),
        }
    }
}

/// Every setting both experiment drivers understand, with defaults applied.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub scenario: Option<Scenario>,
    /// Target environment.
    pub env: EnvKind,
    /// Source environment for out-of-distribution states.
    pub ood_source: EnvKind,
    /// Detector methods for the evaluation grid.
    pub methods: Vec<Method>,
    /// Screening modes for the training experiment.
    pub train_methods: Vec<TrainMethod>,
    /// Outlier kinds/strengths for the evaluation grid.
    pub outliers: Vec<OutlierSpec>,
    pub alphas: Vec<f64>,
    /// Contamination ratios of the fitting set.
    pub lambdas: Vec<f64>,
    /// Projection dimension; `None` scores raw features.
    pub k: Option<usize>,
    /// Projection dimensions for the sensitivity sweep.
    pub k_list: Vec<Option<usize>>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Fitting-set size for the evaluation scenario.
    pub n_fit: usize,
    /// Balanced test-set size (half clean, half outliers); must be even.
    pub n_test: usize,
    /// Existing policy checkpoint; when absent the driver trains one.
    pub policy_path: Option<PathBuf>,
    pub iterations: usize,
    pub n_envs: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub lr: f64,
    /// Detection level for the training scenario.
    pub alpha: f64,
    pub n_c: usize,
    pub window_m: usize,
    pub warmup_fraction: f64,
    pub pca_refit_period: usize,
    pub flag_threshold: f64,
    /// How many of the first slots are contaminated; `None` = half.
    pub contaminated_envs: Option<usize>,
    /// Contamination for the training scenario; `None` = ood from
    /// `ood_source`.
    pub train_outlier: Option<OutlierSpec>,
    pub emit_svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            scenario: None,
            env: EnvKind::Grid,
            ood_source: EnvKind::Chain,
            methods: vec![Method::E1, Method::E2, Method::Tmd, Method::Md, Method::Rmd],
            train_methods: vec![
                TrainMethod::Detector(Method::Md),
                TrainMethod::Auto,
                TrainMethod::Random,
            ],
            outliers: vec![
                OutlierSpec::Random { std: 0.1 },
                OutlierSpec::Adversarial { epsilon: 0.25 },
                OutlierSpec::Ood { source: EnvKind::Chain },
            ],
            alphas: vec![0.01, 0.05, 0.1],
            lambdas: vec![0.0, 0.01, 0.1],
            k: Some(8),
            k_list: vec![Some(2), Some(4), Some(8), None],
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("out"),
            n_fit: 2048,
            n_test: 512,
            policy_path: None,
            iterations: 40,
            n_envs: 8,
            horizon: 64,
            hidden: 64,
            lr: 0.08,
            alpha: 0.05,
            n_c: 512,
            window_m: 2,
            warmup_fraction: 0.5,
            pca_refit_period: 300,
            flag_threshold: 0.5,
            contaminated_envs: None,
            train_outlier: None,
            emit_svg: true,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "scenario",
    "env",
    "ood_source",
    "methods",
    "train_methods",
    "outliers",
    "alphas",
    "lambdas",
    "k",
    "k_list",
    "seeds",
    "out_dir",
    "n_fit",
    "n_test",
    "policy_path",
    "iterations",
    "n_envs",
    "horizon",
    "hidden",
    "lr",
    "alpha",
    "n_c",
    "window_m",
    "warmup_fraction",
    "pca_refit_period",
    "flag_threshold",
    "contaminated_envs",
    "train_outlier",
    "emit_svg",
];

/// Parse flat `key = value` text: one pair per line, `#` comments, blank
/// lines ignored, duplicate keys rejected.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key = value, got '{line}'",
                i + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", i + 1)));
        }
    }
    Ok(map)
}

fn parse_scalar<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("key '{key}': cannot parse '{value}': {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_scalar(key, s)).collect()
}

fn parse_optional_dim(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "none" {
        Ok(None)
    } else {
        Ok(Some(parse_scalar(key, value)?))
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!("key '{key}': expected true or false, got '{other}'"))),
    }
}

impl ExperimentConfig {
    /// Build from a key=value map; unknown keys are errors, missing keys
    /// take defaults. Validates before returning.
    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<ExperimentConfig> {
        for key in map.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown config key '{key}'")));
            }
        }
        let mut cfg = ExperimentConfig::default();
        let get = |key: &str| map.get(key).map(String::as_str);
        if let Some(v) = get("scenario") {
            cfg.scenario = if v == "none" { None } else { Some(v.parse()?) };
        }
        if let Some(v) = get("env") {
            cfg.env = v.parse()?;
        }
        if let Some(v) = get("ood_source") {
            cfg.ood_source = v.parse()?;
        }
        if let Some(v) = get("methods") {
            cfg.methods = parse_list("methods", v)?;
        }
        if let Some(v) = get("train_methods") {
            cfg.train_methods = parse_list("train_methods", v)?;
        }
        if let Some(v) = get("outliers") {
            cfg.outliers = parse_list("outliers", v)?;
        }
        if let Some(v) = get("alphas") {
            cfg.alphas = parse_list("alphas", v)?;
        }
        if let Some(v) = get("lambdas") {
            cfg.lambdas = parse_list("lambdas", v)?;
        }
        if let Some(v) = get("k") {
            cfg.k = parse_optional_dim("k", v)?;
        }
        if let Some(v) = get("k_list") {
            cfg.k_list = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse_optional_dim("k_list", s))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = get("seeds") {
            cfg.seeds = parse_list("seeds", v)?;
        }
        if let Some(v) = get("out_dir") {
            cfg.out_dir = PathBuf::from(v);
        }
        if let Some(v) = get("n_fit") {
            cfg.n_fit = parse_scalar("n_fit", v)?;
        }
        if let Some(v) = get("n_test") {
            cfg.n_test = parse_scalar("n_test", v)?;
        }
        if let Some(v) = get("policy_path") {
            cfg.policy_path =
                if v == "none" { None } else { Some(PathBuf::from(v)) };
        }
        if let Some(v) = get("iterations") {
            cfg.iterations = parse_scalar("iterations", v)?;
        }
        if let Some(v) = get("n_envs") {
            cfg.n_envs = parse_scalar("n_envs", v)?;
        }
        if let Some(v) = get("horizon") {
            cfg.horizon = parse_scalar("horizon", v)?;
        }
        if let Some(v) = get("hidden") {
            cfg.hidden = parse_scalar("hidden", v)?;
        }
        if let Some(v) = get("lr") {
            cfg.lr = parse_scalar("lr", v)?;
        }
        if let Some(v) = get("alpha") {
            cfg.alpha = parse_scalar("alpha", v)?;
        }
        if let Some(v) = get("n_c") {
            cfg.n_c = parse_scalar("n_c", v)?;
        }
        if let Some(v) = get("window_m") {
            cfg.window_m = parse_scalar("window_m", v)?;
        }
        if let Some(v) = get("warmup_fraction") {
            cfg.warmup_fraction = parse_scalar("warmup_fraction", v)?;
        }
        if let Some(v) = get("pca_refit_period") {
            cfg.pca_refit_period = parse_scalar("pca_refit_period", v)?;
        }
        if let Some(v) = get("flag_threshold") {
            cfg.flag_threshold = parse_scalar("flag_threshold", v)?;
        }
        if let Some(v) = get("contaminated_envs") {
            cfg.contaminated_envs =
                if v == "none" { None } else { Some(parse_scalar("contaminated_envs", v)?) };
        }
        if let Some(v) = get("train_outlier") {
            cfg.train_outlier = if v == "none" { None } else { Some(v.parse()?) };
        }
        if let Some(v) = get("emit_svg") {
            cfg.emit_svg = parse_bool("emit_svg", v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file, overlay explicit CLI pairs (flag wins), build.
    pub fn load(
        file: Option<&std::path::Path>,
        cli_pairs: &BTreeMap<String, String>,
    ) -> Result<ExperimentConfig> {
        let mut map = match file {
            Some(path) => parse_kv(&std::fs::read_to_string(path)?)?,
            None => BTreeMap::new(),
        };
        for (k, v) in cli_pairs {
            map.insert(k.clone(), v.clone());
        }
        ExperimentConfig::from_kv(&map)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.methods.is_empty()
            || self.train_methods.is_empty()
            || self.outliers.is_empty()
            || self.alphas.is_empty()
            || self.lambdas.is_empty()
            || self.seeds.is_empty()
            || self.k_list.is_empty()
        {
            return bad("grids (methods/outliers/alphas/lambdas/seeds/k_list) must be nonempty"
                .into());
        }
        for &a in &self.alphas {
            if !(a > 0.0 && a < 1.0) {
                return bad(format!("alpha grid value {a} outside (0, 1)"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        for &l in &self.lambdas {
            if !(0.0..1.0).contains(&l) {
                return bad(format!("lambda grid value {l} outside [0, 1)"));
            }
        }
        for spec in &self.outliers {
            spec.validate()?;
        }
        if let Some(spec) = &self.train_outlier {
            spec.validate()?;
        }
        if self.n_fit == 0 {
            return bad("n_fit must be positive".into());
        }
        if self.n_test < 2 || !self.n_test.is_multiple_of(2) {
            return bad(format!("n_test must be even and >= 2, got {}", self.n_test));
        }
        for k in self.k_list.iter().flatten().chain(self.k.iter()) {
            if *k < 1 || *k > self.hidden {
                return bad(format!(
                    "projection dimension {k} outside 1..={} (feature width)",
                    self.hidden
                ));
            }
        }
        if self.iterations == 0 || self.n_envs == 0 || self.horizon == 0 || self.hidden == 0 {
            return bad("iterations, n_envs, horizon, hidden must be positive".into());
        }
        if let Some(c) = self.contaminated_envs {
            if c > self.n_envs {
                return bad(format!(
                    "contaminated_envs {c} exceeds n_envs {}",
                    self.n_envs
                ));
            }
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction {} outside (0, 1)", self.warmup_fraction));
        }
        if !(self.flag_threshold > 0.0 && self.flag_threshold <= 1.0) {
            return bad(format!("flag_threshold {} outside (0, 1]", self.flag_threshold));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return bad(format!("lr {} must be finite and non-negative", self.lr));
        }
        Ok(())
    }

    /// Canonical key=value rendering of the effective config (every key,
    /// sorted); hashed into the run manifest and written next to outputs.
    pub fn canonical_text(&self) -> String {
        let dim = |k: &Option<usize>| match k {
            Some(v) => v.to_string(),
            None => "none".to_string(),
        };
        let join = |items: Vec<String>| items.join(",");
        let mut pairs: Vec<(&str, String)> = vec![
            ("alpha", self.alpha.to_string()),
            ("alphas", join(self.alphas.iter().map(f64::to_string).collect())),
            (
                "contaminated_envs",
                self.contaminated_envs.map_or("none".into(), |c| c.to_string()),
            ),
            ("emit_svg", self.emit_svg.to_string()),
            ("env", self.env.to_string()),
            ("flag_threshold", self.flag_threshold.to_string()),
            ("hidden", self.hidden.to_string()),
            ("horizon", self.horizon.to_string()),
            ("iterations", self.iterations.to_string()),
            ("k", dim(&self.k)),
            ("k_list", join(self.k_list.iter().map(dim).collect())),
            ("lambdas", join(self.lambdas.iter().map(f64::to_string).collect())),
            ("lr", self.lr.to_string()),
            ("methods", join(self.methods.iter().map(|m| m.to_string()).collect())),
            ("n_c", self.n_c.to_string()),
            ("n_envs", self.n_envs.to_string()),
            ("n_fit", self.n_fit.to_string()),
            ("n_test", self.n_test.to_string()),
            ("ood_source", self.ood_source.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("outliers", join(self.outliers.iter().map(|o| o.to_string()).collect())),
            ("pca_refit_period", self.pca_refit_period.to_string()),
            (
                "policy_path",
                self.policy_path.as_ref().map_or("none".into(), |p| p.display().to_string()),
            ),
            ("scenario", self.scenario.map_or("none".into(), |s| s.to_string())),
            ("seeds", join(self.seeds.iter().map(u64::to_string).collect())),
            (
                "train_methods",
                join(self.train_methods.iter().map(|m| m.to_string()).collect()),
            ),
            (
                "train_outlier",
                self.train_outlier.as_ref().map_or("none".into(), |o| o.to_string()),
            ),
            ("warmup_fraction", self.warmup_fraction.to_string()),
            ("window_m", self.window_m.to_string()),
        ];
        pairs.sort_by_key(|(k, _)| *k);
        let mut text = String::new();
        for (k, v) in pairs {
            text.push_str(k);
            text.push_str(" = ");
            text.push_str(&v);
            text.push('\n');
        }
        text
    }

    pub fn trainer_config(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            iterations: self.iterations,
            n_envs: self.n_envs,
            horizon: self.horizon,
            hidden: self.hidden,
            lr: self.lr,
            seed,
            ..TrainerConfig::default()
        }
    }

    pub fn online_config(&self, method: Method, seed: u64) -> OnlineConfig {
        OnlineConfig {
            method,
            alpha: self.alpha,
            k: self.k,
            n_c: self.n_c,
            window_m: self.window_m,
            warmup_fraction: self.warmup_fraction,
            pca_refit_period: self.pca_refit_period,
            flag_threshold: self.flag_threshold,
            seed,
        }
    }

    /// Contamination plan for the training scenario: the first
    /// `contaminated_envs` slots carry the training outlier.
    pub fn plan(&self) -> Vec<Option<OutlierSpec>> {
        let c = self.contaminated_envs.unwrap_or(self.n_envs / 2);
        let spec =
            self.train_outlier.unwrap_or(OutlierSpec::Ood { source: self.ood_source });
        (0..self.n_envs).map(|i| if i < c { Some(spec) } else { None }).collect()
    }
}
