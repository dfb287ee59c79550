//! Run configuration shared by every subcommand.
//!
//! Configuration lives in a flat `key = value` file. [`RunConfig::render`]
//! writes every key with floats at 17 significant digits, and
//! [`RunConfig::parse_with_keys`] reads that form back, so render → parse → render is
//! lossless and byte-stable.

use std::fmt;

use cholensemble::format::float17;
use cholensemble::mcd::LassoConfig;

/// Worker-thread request: an explicit count or whatever the runtime picks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threads {
    Auto,
    Count(usize),
}

impl fmt::Display for Threads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threads::Auto => write!(f, "auto"),
            Threads::Count(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for Threads {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Threads::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Threads::Count(n)),
            _ => Err(format!(
                "expected \"auto\" or a positive integer, got {s:?}"
            )),
        }
    }
}

/// Report serialization format for `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutputFormat::Csv => write!(f, "csv"),
            OutputFormat::Json => write!(f, "json"),
        }
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("expected \"csv\" or \"json\", got {other:?}")),
        }
    }
}

/// All tunable settings for a run, with the same defaults everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Threads,
    pub orderings: usize,
    pub xi_start: f64,
    pub xi_stop: f64,
    pub xi_step: f64,
    pub lasso: LassoConfig,
    pub output_format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: Threads::Auto,
            orderings: 30,
            xi_start: 0.01,
            xi_stop: 3.0,
            xi_step: 0.05,
            lasso: LassoConfig::default(),
            output_format: OutputFormat::Csv,
        }
    }
}

impl RunConfig {
    /// Renders every key in a fixed order; parsing the result reproduces
    /// `self` exactly.
    pub fn render(&self) -> String {
        let ratio = match self.lasso.lambda_min_ratio {
            None => "auto".to_string(),
            Some(r) => float17(r),
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("seed", self.seed.to_string());
        kv("threads", self.threads.to_string());
        kv("orderings", self.orderings.to_string());
        kv("xi_start", float17(self.xi_start));
        kv("xi_stop", float17(self.xi_stop));
        kv("xi_step", float17(self.xi_step));
        kv("path_length", self.lasso.path_length.to_string());
        kv("lambda_min_ratio", ratio);
        kv("cv_folds", self.lasso.cv_folds.to_string());
        kv("max_iter", self.lasso.max_iter.to_string());
        kv("coord_tol", float17(self.lasso.coord_tol));
        kv("standardize", self.lasso.standardize.to_string());
        kv("fold_seed", self.lasso.fold_seed.to_string());
        kv("output_format", self.output_format.to_string());
        out
    }

    /// Parses `key = value` lines over the defaults and reports which keys
    /// the file set, so callers can tell an explicit value from a default
    /// when layering other sources underneath. Blank lines and lines
    /// starting with `#` are skipped; anything else unrecognized is an
    /// error tagged with its 1-based line number.
    pub fn parse_with_keys(text: &str) -> Result<(RunConfig, Vec<String>), String> {
        let mut config = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {lineno}: expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(format!("config line {lineno}: duplicate key {key:?}"));
            }
            seen.push(key.to_string());
            config
                .apply(key, value)
                .map_err(|e| format!("config line {lineno}: {e}"))?;
        }
        config.validate()?;
        Ok((config, seen))
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse::<T>()
                .map_err(|_| format!("invalid value {value:?} for {key}"))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "threads" => self.threads = value.parse()?,
            "orderings" => self.orderings = num(key, value)?,
            "xi_start" => self.xi_start = num(key, value)?,
            "xi_stop" => self.xi_stop = num(key, value)?,
            "xi_step" => self.xi_step = num(key, value)?,
            "path_length" => self.lasso.path_length = num(key, value)?,
            "lambda_min_ratio" => {
                self.lasso.lambda_min_ratio = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "cv_folds" => self.lasso.cv_folds = num(key, value)?,
            "max_iter" => self.lasso.max_iter = num(key, value)?,
            "coord_tol" => self.lasso.coord_tol = num(key, value)?,
            "standardize" => self.lasso.standardize = num(key, value)?,
            "fold_seed" => self.lasso.fold_seed = num(key, value)?,
            "output_format" => self.output_format = value.parse()?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Range checks that do not depend on the data.
    pub fn validate(&self) -> Result<(), String> {
        if self.orderings < 1 {
            return Err("orderings must be at least 1".to_string());
        }
        if !self.xi_start.is_finite() || self.xi_start <= 0.0 {
            return Err("xi_start must be positive and finite".to_string());
        }
        if !self.xi_step.is_finite() || self.xi_step <= 0.0 {
            return Err("xi_step must be positive and finite".to_string());
        }
        if !self.xi_stop.is_finite() || self.xi_stop < self.xi_start {
            return Err("xi_stop must be finite and at least xi_start".to_string());
        }
        self.lasso.validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    /// Expands (start, stop, step) into the penalty grid start, start+step, …
    /// capped at stop.
    pub fn xi_grid(&self) -> Vec<f64> {
        let (start, stop, step) = (self.xi_start, self.xi_stop, self.xi_step);
        (0..)
            .map(|k| start + step * k as f64)
            .take_while(|&v| v <= stop + 1e-12)
            .collect()
    }
}
