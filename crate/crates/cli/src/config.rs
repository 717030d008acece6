//! Run configuration: a flat JSON object holding the trainer settings plus
//! run-level keys (structure, datasets, seeds, output directory).

use std::path::{Path, PathBuf};

use sbm_core::{Grid, StructureSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const OUT_DIR_ENV: &str = "SBM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "runs";
pub const DEFAULT_SEEDS: usize = 10;

/// Keys handled by [`RunConfig`]; everything else must be a trainer setting.
const RUN_KEYS: &[&str] = &[
    "structure",
    "dataset",
    "labels",
    "split",
    "val_dataset",
    "val_labels",
    "val_split",
    "val_count",
    "shuffle_split",
    "grid",
    "seeds",
    "seed_list",
    "n_classes",
    "out",
    "jobs",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub structure: StructureSpec,
    pub dataset: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub split: Option<String>,
    #[serde(default)]
    pub val_dataset: Option<PathBuf>,
    #[serde(default)]
    pub val_labels: Option<PathBuf>,
    #[serde(default)]
    pub val_split: Option<String>,
    /// Held-out instances when no validation dataset is given
    /// (default: one sixth of the data).
    #[serde(default)]
    pub val_count: Option<usize>,
    /// Shuffle before holding out, with the run seed.
    #[serde(default)]
    pub shuffle_split: bool,
    /// `[height, width]`, needed for flat CSV images that are not square.
    #[serde(default)]
    pub grid: Option<(usize, usize)>,
    /// Number of consecutive seeds starting at the trainer seed.
    #[serde(default)]
    pub seeds: Option<usize>,
    #[serde(default)]
    pub seed_list: Option<Vec<u64>>,
    #[serde(default)]
    pub n_classes: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Seeds trained concurrently. Outputs do not depend on it.
    #[serde(default)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveConfig {
    pub run: RunConfig,
    pub train: TrainConfig,
    /// The merged flat object, as snapshotted in the manifest.
    pub snapshot: Value,
}

impl EffectiveConfig {
    pub fn seeds(&self) -> Vec<u64> {
        match &self.run.seed_list {
            Some(list) => list.clone(),
            None => {
                let n = self.run.seeds.unwrap_or(DEFAULT_SEEDS) as u64;
                (self.train.seed..self.train.seed + n).collect()
            }
        }
    }

    pub fn grid(&self) -> Option<Grid> {
        self.run.grid.map(|(h, w)| Grid::new(h, w))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.run.out.clone().unwrap_or_else(|| {
            std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from)
        })
    }
}

pub fn read_file(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::config(format!("config {} is not a JSON object", path.display()))),
        Err(e) => Err(CliError::config(format!("config {}: {e}", path.display()))),
    }
}

/// Applies `overrides` on top of `base` and splits the result into run and
/// trainer settings.
pub fn resolve(mut base: Map<String, Value>, overrides: Map<String, Value>) -> CliResult<EffectiveConfig> {
    base.extend(overrides);
    let snapshot = Value::Object(base.clone());
    let (run, train): (Map<String, Value>, Map<String, Value>) =
        base.into_iter().partition(|(k, _)| RUN_KEYS.contains(&k.as_str()));
    let run: RunConfig = serde_json::from_value(Value::Object(run)).map_err(|e| CliError::config(format!("config: {e}")))?;
    let train: TrainConfig =
        serde_json::from_value(Value::Object(train)).map_err(|e| CliError::config(format!("config: {e}")))?;
    train.validate()?;
    if run.seeds == Some(0) || run.seed_list.as_ref().is_some_and(Vec::is_empty) {
        return Err(CliError::config("at least one seed is required"));
    }
    Ok(EffectiveConfig { run, train, snapshot })
}
