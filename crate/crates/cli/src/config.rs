//! Run configuration: command-line flags layered over an optional
//! `key=value` file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => bail!("unknown format '{other}' (expected csv or json)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Certified,
    Quadrature,
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "certified" => Ok(Method::Certified),
            "quadrature" => Ok(Method::Quadrature),
            other => bail!("unknown method '{other}' (expected certified or quadrature)"),
        }
    }
}

/// Flags shared by every subcommand. All are optional so that a config
/// file can supply them.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// g-function: `builtin:<name>`, a bare builtin name, a `piecewise:`
    /// description, or `@path` to read the description from a file
    #[arg(long)]
    pub g: Option<String>,
    /// Iteration count; `density` accepts a comma-separated list
    #[arg(long)]
    pub n: Option<String>,
    /// Grid depth of the output
    #[arg(long)]
    pub level: Option<u32>,
    /// Dyadic level of the intervals
    #[arg(long)]
    pub k: Option<u32>,
    /// Range `a..b` (inclusive) or a single value
    #[arg(long)]
    pub m: Option<String>,
    /// Output file (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// `key=value` file with defaults for any of these flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Proceed even if uniqueness of the g-measure is not established
    #[arg(long)]
    pub assume_good: bool,
    /// Emit log2 values (density)
    #[arg(long)]
    pub log2: bool,
    /// Mass computation method
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Largest Fourier frequency
    #[arg(long)]
    pub max_freq: Option<u64>,
}

const KEYS: [&str; 11] = [
    "g",
    "n",
    "level",
    "k",
    "m",
    "out",
    "format",
    "assume_good",
    "log2",
    "method",
    "max_freq",
];

/// Parsed `key=value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key=value", i + 1))?;
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            bail!("config line {}: unknown key '{key}'", i + 1);
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Effective settings after merging flags over the config file.
#[derive(Debug, Clone)]
pub struct Settings {
    args: CommonArgs,
    file: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(args: CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self { args, file })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key '{key}': {e}")),
        }
    }

    fn pick<T: FromStr + Clone>(&self, flag: &Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v.clone())),
            None => self.from_file(key),
        }
    }

    fn flag(&self, set: bool, key: &str) -> Result<bool> {
        Ok(set || self.from_file::<bool>(key)?.unwrap_or(false))
    }

    pub fn g_spec(&self) -> Result<String> {
        Ok(self.pick(&self.args.g, "g")?.unwrap_or_else(|| "builtin:tm".into()))
    }

    pub fn n_list(&self) -> Result<Option<Vec<u32>>> {
        match self.pick(&self.args.n, "n")? {
            None => Ok(None),
            Some(s) => s
                .split(',')
                .map(|p| p.trim().parse::<u32>().map_err(|e| anyhow!("bad --n value '{p}': {e}")))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    pub fn n(&self, default: u32) -> Result<u32> {
        match self.n_list()? {
            None => Ok(default),
            Some(v) if v.len() == 1 => Ok(v[0]),
            Some(_) => bail!("--n takes a single value for this command"),
        }
    }

    pub fn level(&self) -> Result<Option<u32>> {
        self.pick(&self.args.level, "level")
    }

    pub fn k(&self, default: u32) -> Result<u32> {
        Ok(self.pick(&self.args.k, "k")?.unwrap_or(default))
    }

    pub fn m_range(&self, default: (u32, u32)) -> Result<(u32, u32)> {
        match self.pick(&self.args.m, "m")? {
            None => Ok(default),
            Some(s) => parse_range(&s),
        }
    }

    pub fn out(&self) -> Result<Option<PathBuf>> {
        self.pick(&self.args.out, "out")
    }

    pub fn format(&self) -> Result<Format> {
        Ok(self.pick(&self.args.format, "format")?.unwrap_or(Format::Csv))
    }

    pub fn assume_good(&self) -> Result<bool> {
        self.flag(self.args.assume_good, "assume_good")
    }

    pub fn log2(&self) -> Result<bool> {
        self.flag(self.args.log2, "log2")
    }

    pub fn method(&self) -> Result<Method> {
        Ok(self.pick(&self.args.method, "method")?.unwrap_or(Method::Certified))
    }

    pub fn max_freq(&self, default: u64) -> Result<u64> {
        Ok(self.pick(&self.args.max_freq, "max_freq")?.unwrap_or(default))
    }
}

/// `a..b` (inclusive), `a..=b`, or a single value `b` meaning `1..b`.
pub fn parse_range(s: &str) -> Result<(u32, u32)> {
    let s = s.trim();
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => {
            let b = b.strip_prefix('=').unwrap_or(b);
            (a.trim().parse::<u32>()?, b.trim().parse::<u32>()?)
        }
        None => (1, s.parse::<u32>()?),
    };
    if a > b {
        bail!("empty range {s}");
    }
    Ok((a, b))
}

/// Reads `@path` descriptions from disk; bare names become builtins.
pub fn resolve_g_text(spec: &str) -> Result<String> {
    if let Some(path) = spec.strip_prefix('@') {
        return std::fs::read_to_string(Path::new(path)).with_context(|| format!("reading g description {path}"));
    }
    if spec.contains(':') {
        Ok(spec.to_string())
    } else {
        Ok(format!("builtin:{spec}"))
    }
}
