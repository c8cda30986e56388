//! Flags, key=value config files, and the resolved run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat key=value file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// cmp | truncgauss | vmf-auto | custom-ordinal
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Starting values, either `name=value,...` or a bare comma list.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Comma-separated names of the tested parameters.
    #[arg(long)]
    pub partition: Option<String>,
    #[arg(long)]
    pub study: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Treat vmf-auto rows as compositions and take square roots.
    #[arg(long)]
    pub sqrt_compositional: bool,
    /// `columns` (grid_row/grid_col), `RxC`, or `auto` for a near-square grid.
    #[arg(long)]
    pub grid: Option<String>,
    /// Sample size, or a comma list of sizes for `replicate`.
    #[arg(long)]
    pub n: Option<String>,
    /// True parameter values for `simulate`, same syntax as `--init`.
    #[arg(long)]
    pub params: Option<String>,
    /// Signal strengths for power curves in `replicate`.
    #[arg(long)]
    pub signals: Option<String>,
    /// auto | nelder-mead | newton
    #[arg(long)]
    pub method: Option<String>,
}

pub const KEYS: [&str; 15] = [
    "model",
    "data",
    "init",
    "seed",
    "reps",
    "level",
    "partition",
    "study",
    "out-dir",
    "sqrt-compositional",
    "grid",
    "n",
    "params",
    "signals",
    "method",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelId {
    Cmp,
    TruncGauss,
    VmfAuto,
    CustomOrdinal,
}

impl ModelId {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "cmp" => Ok(ModelId::Cmp),
            "truncgauss" => Ok(ModelId::TruncGauss),
            "vmf-auto" => Ok(ModelId::VmfAuto),
            "custom-ordinal" => Ok(ModelId::CustomOrdinal),
            other => Err(CliError::Config(format!(
                "unknown model '{other}' (expected cmp, truncgauss, vmf-auto or custom-ordinal)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Cmp => "cmp",
            ModelId::TruncGauss => "truncgauss",
            ModelId::VmfAuto => "vmf-auto",
            ModelId::CustomOrdinal => "custom-ordinal",
        }
    }
}

/// Merged configuration in canonical key order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    entries: BTreeMap<String, String>,
}

pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{}:{}: expected key=value", path.display(), lineno + 1)))?;
        let key = k.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("{}:{}: unknown key '{}'", path.display(), lineno + 1, k.trim())));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

impl RunConfig {
    pub fn resolve(command: &str, flags: &Flags) -> Result<Self, CliError> {
        let mut entries = match &flags.config {
            Some(p) => parse_config_file(p)?,
            None => BTreeMap::new(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                entries.insert(k.to_string(), v);
            }
        };
        set("model", flags.model.clone());
        set("data", flags.data.as_ref().map(|p| p.display().to_string()));
        set("init", flags.init.clone());
        set("seed", flags.seed.map(|v| v.to_string()));
        set("reps", flags.reps.map(|v| v.to_string()));
        set("level", flags.level.map(|v| v.to_string()));
        set("partition", flags.partition.clone());
        set("study", flags.study.clone());
        set("out-dir", flags.out_dir.as_ref().map(|p| p.display().to_string()));
        set("sqrt-compositional", flags.sqrt_compositional.then(|| "true".to_string()));
        set("grid", flags.grid.clone());
        set("n", flags.n.clone());
        set("params", flags.params.clone());
        set("signals", flags.signals.clone());
        set("method", flags.method.clone());
        Ok(Self { command: command.to_string(), entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key).ok_or_else(|| CliError::Config(format!("--{key} is required for '{}'", self.command)))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| CliError::Config(format!("invalid value '{v}' for {key}"))))
            .transpose()
    }

    pub fn model(&self) -> Result<ModelId, CliError> {
        ModelId::parse(self.require("model")?)
    }

    pub fn data(&self) -> Result<PathBuf, CliError> {
        Ok(PathBuf::from(self.require("data")?))
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.get("out-dir").map(PathBuf::from)
    }

    pub fn seed(&self) -> Result<Option<u64>, CliError> {
        self.parse("seed")
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed()?.ok_or_else(|| CliError::Config(format!("--seed is required for '{}'", self.command)))
    }

    pub fn reps(&self) -> Result<Option<usize>, CliError> {
        self.parse("reps")
    }

    pub fn level(&self) -> Result<Option<f64>, CliError> {
        self.parse("level")
    }

    pub fn sqrt_compositional(&self) -> Result<bool, CliError> {
        Ok(self.parse::<bool>("sqrt-compositional")?.unwrap_or(false))
    }

    pub fn sizes(&self) -> Result<Option<Vec<usize>>, CliError> {
        self.get("n").map(|v| parse_list(v, "n")).transpose()
    }

    pub fn signals(&self) -> Result<Option<Vec<f64>>, CliError> {
        self.get("signals").map(|v| parse_list(v, "signals")).transpose()
    }

    pub fn partition(&self) -> Option<Vec<String>> {
        self.get("partition")
            .map(|p| p.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
    }

    /// Canonical `key=value` text of the merged configuration.
    pub fn canonical(&self) -> String {
        let mut s = format!("command={}\n", self.command);
        for (k, v) in &self.entries {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_list<T: std::str::FromStr>(v: &str, key: &str) -> Result<Vec<T>, CliError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| CliError::Config(format!("invalid entry '{s}' in {key}"))))
        .collect()
}

/// Applies `name=value,...` or a bare list of values to `defaults`.
pub fn apply_values(spec: &str, names: &[String], defaults: &[f64], key: &str) -> Result<Vec<f64>, CliError> {
    let mut out = defaults.to_vec();
    let items: Vec<&str> = spec.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.iter().all(|s| !s.contains('=')) {
        if items.len() != names.len() {
            return Err(CliError::Config(format!("{key} has {} values but the model has {} parameters", items.len(), names.len())));
        }
        for (slot, s) in out.iter_mut().zip(&items) {
            *slot = s.parse().map_err(|_| CliError::Config(format!("invalid number '{s}' in {key}")))?;
        }
        return Ok(out);
    }
    for item in items {
        let (name, val) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("mixing named and bare values in {key}")))?;
        let j = names
            .iter()
            .position(|n| n == name.trim())
            .ok_or_else(|| CliError::Config(format!("unknown parameter '{}' in {key}", name.trim())))?;
        out[j] = val.trim().parse().map_err(|_| CliError::Config(format!("invalid number '{val}' in {key}")))?;
    }
    Ok(out)
}
