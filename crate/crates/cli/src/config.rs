//! Run configuration: defaults, `key = value` files and flag overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use fids_core::dataio::DEFAULT_LABEL_COLUMN;
use fids_core::{GridSpec, LabelMap, RoundConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_path: Option<PathBuf>,
    pub label_column: String,
    /// Explicit class order; `None` means discover it from the data.
    pub labels: Option<Vec<String>>,
    pub seed: u64,
    /// `(class name, target count)` pairs.
    pub smote_targets: Vec<(String, usize)>,
    pub k_neighbors: usize,
    pub contamination: f64,
    pub n_trees: usize,
    pub subsample_size: usize,
    pub depths: Vec<usize>,
    pub iterations: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub max_rounds: u32,
    pub epsilon: f64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub l2_leaf_reg: f64,
    pub output_dir: PathBuf,
    /// Where `simulate`, `serve` and `send-model` look for the parts.
    /// Defaults to `output_dir`.
    pub parts_dir: Option<PathBuf>,
    pub transport: Transport,
    pub host: String,
    pub port: u16,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = GridSpec::default();
        let round = RoundConfig::default();
        Self {
            dataset_path: None,
            label_column: DEFAULT_LABEL_COLUMN.to_string(),
            labels: None,
            seed: 0,
            smote_targets: Vec::new(),
            k_neighbors: 5,
            contamination: 0.05,
            n_trees: 100,
            subsample_size: 256,
            depths: grid.depths,
            iterations: grid.iterations,
            learning_rates: grid.learning_rates,
            max_rounds: round.max_rounds,
            epsilon: round.epsilon,
            train_fraction: round.train_fraction,
            validation_fraction: round.validation_fraction,
            l2_leaf_reg: round.l2_leaf_reg,
            output_dir: PathBuf::from("fids-out"),
            parts_dir: None,
            transport: Transport::InProcess,
            host: "127.0.0.1".to_string(),
            port: 7878,
        }
    }
}

#[cfg(test)]
const KEYS: &[&str] = &[
    "dataset_path",
    "label_column",
    "labels",
    "seed",
    "smote_targets",
    "k_neighbors",
    "contamination",
    "n_trees",
    "subsample_size",
    "depths",
    "iterations",
    "learning_rates",
    "max_rounds",
    "epsilon",
    "train_fraction",
    "validation_fraction",
    "l2_leaf_reg",
    "output_dir",
    "parts_dir",
    "transport",
    "host",
    "port",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("`{key}`: cannot parse `{value}`"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(format!("`{key}` needs at least one value"));
    }
    Ok(items)
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        match key {
            "dataset_path" => self.dataset_path = Some(PathBuf::from(value)),
            "label_column" => {
                if value.is_empty() {
                    return Err("`label_column` is empty".into());
                }
                self.label_column = value.to_string();
            }
            "labels" => {
                self.labels = match value {
                    "" | "auto" => None,
                    v if v.eq_ignore_ascii_case("cic-ids2017") => Some(LabelMap::cic_ids2017().names().to_vec()),
                    v => Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "smote_targets" => {
                self.smote_targets = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|item| {
                        let (name, n) = item
                            .rsplit_once(':')
                            .ok_or_else(|| format!("`smote_targets`: expected `class:count`, got `{item}`"))?;
                        Ok((name.trim().to_string(), parse(key, n.trim())?))
                    })
                    .collect::<Result<_, String>>()?;
            }
            "k_neighbors" => self.k_neighbors = parse(key, value)?,
            "contamination" => self.contamination = parse(key, value)?,
            "n_trees" => self.n_trees = parse(key, value)?,
            "subsample_size" => self.subsample_size = parse(key, value)?,
            "depths" => self.depths = parse_list(key, value)?,
            "iterations" => self.iterations = parse_list(key, value)?,
            "learning_rates" => self.learning_rates = parse_list(key, value)?,
            "max_rounds" => self.max_rounds = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "validation_fraction" => self.validation_fraction = parse(key, value)?,
            "l2_leaf_reg" => self.l2_leaf_reg = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "parts_dir" => self.parts_dir = Some(PathBuf::from(value)),
            "transport" => {
                self.transport = match value {
                    "inproc" => Transport::InProcess,
                    "tcp" => Transport::Tcp,
                    other => return Err(format!("`transport` must be inproc or tcp, got `{other}`")),
                }
            }
            "host" => self.host = value.to_string(),
            "port" => self.port = parse(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Applies a `key = value` file on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value).map_err(|e| CliError::config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn parts_dir(&self) -> &Path {
        self.parts_dir.as_deref().unwrap_or(&self.output_dir)
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            depths: self.depths.clone(),
            iterations: self.iterations.clone(),
            learning_rates: self.learning_rates.clone(),
        }
    }

    pub fn round_config(&self) -> Result<RoundConfig, CliError> {
        let cfg = RoundConfig {
            max_rounds: self.max_rounds,
            epsilon: self.epsilon,
            grid: self.grid(),
            seed: self.seed,
            train_fraction: self.train_fraction,
            validation_fraction: self.validation_fraction,
            l2_leaf_reg: self.l2_leaf_reg,
        };
        cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks the preprocessing knobs.
    pub fn validate_prepare(&self) -> Result<(), CliError> {
        if self.k_neighbors == 0 {
            return Err(CliError::config("k_neighbors must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.contamination) {
            return Err(CliError::config(format!("contamination must lie in [0, 1), got {}", self.contamination)));
        }
        if self.n_trees == 0 {
            return Err(CliError::config("n_trees must be at least 1"));
        }
        if self.subsample_size < 2 {
            return Err(CliError::config("subsample_size must be at least 2"));
        }
        Ok(())
    }
}
