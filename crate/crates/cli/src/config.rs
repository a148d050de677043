use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dyson_cascade::cascade::DEFAULT_MAX_LEVEL;
use dyson_cascade::HierParams;

use crate::error::CliError;

/// Environment variable that redirects the default output directory.
pub const OUT_ENV: &str = "DYSON_CASCADE_OUT";
pub const DEFAULT_OUT: &str = "dyson-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Suite {
    Laplace,
    Ward,
    Martingale,
    CoarseFine,
    ExpMartingale,
    TotalMass,
    Coupling,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Laplace,
        Suite::Ward,
        Suite::Martingale,
        Suite::CoarseFine,
        Suite::ExpMartingale,
        Suite::TotalMass,
        Suite::Coupling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Laplace => "laplace",
            Suite::Ward => "ward",
            Suite::Martingale => "martingale",
            Suite::CoarseFine => "coarse-fine",
            Suite::ExpMartingale => "exp-martingale",
            Suite::TotalMass => "total-mass",
            Suite::Coupling => "coupling",
        }
    }

    /// Stream tag, so a suite's draws do not depend on which others run.
    pub fn tag(self) -> u64 {
        Suite::ALL.iter().position(|s| *s == self).expect("listed") as u64 + 1
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| CliError::Usage(format!("unknown suite '{s}' (expected one of {})", suite_list(&Suite::ALL))))
    }
}

fn suite_list(suites: &[Suite]) -> String {
    suites.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
}

/// Everything a command needs; `(config, seed)` fixes every output byte.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub wbar: f64,
    pub rho: f64,
    pub level: u32,
    pub replicates: usize,
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide. Never affects results.
    pub threads: usize,
    pub ward_s: f64,
    pub moment_s: f64,
    pub singularity_depth: u32,
    pub suites: Vec<Suite>,
    /// Stored realization checked by the coarse-fine suite.
    pub realization: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            wbar: 1.0,
            rho: 2.0,
            level: 3,
            replicates: 10_000,
            seed: 7,
            threads: 0,
            ward_s: 0.3,
            moment_s: 0.3,
            singularity_depth: 14,
            suites: Suite::ALL.to_vec(),
            realization: None,
            out: default_out(),
        }
    }
}

pub fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| CliError::Usage(format!("{key}: cannot parse '{value}': {e}")))
}

impl RunConfig {
    pub fn params(&self) -> Result<HierParams, CliError> {
        Ok(HierParams::new(self.wbar, self.rho, 0)?)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.params()?;
        let bad = |msg: String| Err(CliError::Usage(msg));
        if self.level > DEFAULT_MAX_LEVEL {
            return bad(format!("level {} exceeds {DEFAULT_MAX_LEVEL}", self.level));
        }
        if self.singularity_depth > DEFAULT_MAX_LEVEL {
            return bad(format!("singularity_depth {} exceeds {DEFAULT_MAX_LEVEL}", self.singularity_depth));
        }
        if self.replicates < 2 {
            return bad(format!("replicates must be at least 2, got {}", self.replicates));
        }
        if !(self.ward_s > 0.0 && self.ward_s <= 1.0) {
            return bad(format!("ward_s must lie in (0, 1], got {}", self.ward_s));
        }
        if !(self.moment_s > 0.0 && self.moment_s < 0.5) {
            return bad(format!("moment_s must lie in (0, 1/2), got {}", self.moment_s));
        }
        if self.suites.is_empty() {
            return bad("no suites selected".into());
        }
        Ok(())
    }

    /// Sets one `key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "wbar" => self.wbar = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "level" => self.level = parse(key, value)?,
            "replicates" => self.replicates = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "ward_s" => self.ward_s = parse(key, value)?,
            "moment_s" => self.moment_s = parse(key, value)?,
            "singularity_depth" => self.singularity_depth = parse(key, value)?,
            "suites" => self.suites = parse_suites(value)?,
            "realization" => {
                self.realization = if value.trim().is_empty() { None } else { Some(PathBuf::from(value.trim())) }
            }
            "out" => self.out = PathBuf::from(value.trim()),
            _ => return Err(CliError::Usage(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses the flat `key = value` format; `#` starts a comment line.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", no + 1)))?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text)
    }

    /// Inverse of [`RunConfig::from_text`]. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_text(&self) -> String {
        let realization = self.realization.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        format!(
            "wbar = {}\nrho = {}\nlevel = {}\nreplicates = {}\nseed = {}\nthreads = {}\nward_s = {}\nmoment_s = {}\n\
             singularity_depth = {}\nsuites = {}\nrealization = {}\nout = {}\n",
            self.wbar,
            self.rho,
            self.level,
            self.replicates,
            self.seed,
            self.threads,
            self.ward_s,
            self.moment_s,
            self.singularity_depth,
            suite_list(&self.suites),
            realization,
            self.out.display(),
        )
    }
}

pub fn parse_suites(value: &str) -> Result<Vec<Suite>, CliError> {
    let value = value.trim();
    if value == "all" {
        return Ok(Suite::ALL.to_vec());
    }
    let mut suites = value.split(',').filter(|s| !s.trim().is_empty()).map(Suite::from_str).collect::<Result<Vec<_>, _>>()?;
    suites.sort();
    suites.dedup();
    Ok(suites)
}
