//! Run configuration: registration parameters plus pipeline settings, read
//! from a flat `key = value` file and overridden by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use facemorph_core::RegistrationParams;

pub const DEFAULT_DOWNSAMPLE: usize = 1000;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_FMR: f64 = 0.001;

pub const KEYS: &[&str] = &[
    "beta",
    "lambda",
    "omega",
    "gamma",
    "kappa",
    "tol",
    "max_iters",
    "sigma_correction",
    "rebalance",
    "alpha",
    "downsample",
    "seed",
    "out",
    "fmr",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub registration: RegistrationParams,
    pub alpha: f64,
    /// Maximum vertex count per cloud before registration.
    pub downsample: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub fmr: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            registration: RegistrationParams::default(),
            alpha: DEFAULT_ALPHA,
            downsample: DEFAULT_DOWNSAMPLE,
            seed: DEFAULT_SEED,
            out: PathBuf::from("out"),
            fmr: DEFAULT_FMR,
        }
    }
}

/// Parsed `key = value` pairs. Blank lines and `#` comments are skipped;
/// dashes in keys are read as underscores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`", lineno + 1))?;
            let key = key.trim().replace('-', "_");
            if !KEYS.contains(&key.as_str()) {
                bail!("config line {}: unknown key `{key}`", lineno + 1);
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!("config key `{key}`: cannot parse `{v}`: {e}"))
            })
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

/// Parses `inf`/`infinity` as well as ordinary numbers.
pub fn parse_kappa(s: &str) -> Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
        other => other.parse::<f64>().map_err(|e| e.to_string()),
    }
}

impl PipelineConfig {
    /// Writes every setting in config-file form, so a run can be archived
    /// and replayed.
    pub fn to_config_text(&self) -> String {
        let r = &self.registration;
        format!(
            "beta = {}\nlambda = {}\nomega = {}\ngamma = {}\nkappa = {}\ntol = {}\nmax_iters = {}\n\
             sigma_correction = {}\nrebalance = {}\nalpha = {}\ndownsample = {}\nseed = {}\nout = {}\nfmr = {}\n",
            r.beta,
            r.lambda,
            r.omega,
            r.gamma,
            if r.kappa.is_infinite() { "inf".to_string() } else { r.kappa.to_string() },
            r.tol,
            r.max_iters,
            r.use_sigma_correction,
            r.rebalance,
            self.alpha,
            self.downsample,
            self.seed,
            self.out.display(),
            self.fmr,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.registration
            .validate()
            .map_err(|e| anyhow!("{e}"))?;
        if !(0.0..=1.0).contains(&self.alpha) {
            bail!("alpha must lie in [0, 1], got {}", self.alpha);
        }
        if self.downsample == 0 {
            bail!("downsample must be at least 1");
        }
        if !(self.fmr > 0.0 && self.fmr < 1.0) {
            bail!("fmr must lie in (0, 1), got {}", self.fmr);
        }
        Ok(())
    }
}
