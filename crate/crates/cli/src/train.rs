//! `sbm train`: one training run per seed, plus a run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use sbm_core::checkpoint;
use sbm_core::data::{split, SplitSpec};
use sbm_core::evaluation::{write_metrics_csv, write_timing_csv};
use sbm_core::trainer::{init_classifier, init_params, train};
use sbm_core::{ConnectivityStructure, ImageDataset, Model, Objective, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::EffectiveConfig;
use crate::dataset;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Artifacts of one seed; paths are relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub best_update: usize,
    pub best_value: f64,
    pub final_value: f64,
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub timing: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: Value,
    pub structure: String,
    pub n_visible: usize,
    pub n_hidden: usize,
    pub n_weights: usize,
    pub datasets: Vec<DatasetEntry>,
    pub seeds: Vec<u64>,
    pub runs: Vec<SeedRun>,
}

impl RunManifest {
    #[cfg(test)]
    pub fn read(path: &Path) -> CliResult<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

struct Data {
    train: ImageDataset,
    /// Fixed validation set, or `None` to hold out per seed.
    val: Option<ImageDataset>,
    entries: Vec<DatasetEntry>,
}

fn load_data(cfg: &EffectiveConfig) -> CliResult<Data> {
    let run = &cfg.run;
    let grid = cfg.grid();
    let train = dataset::load(&run.dataset, run.labels.as_deref(), run.split.as_deref(), grid)?;
    let mut entries = vec![DatasetEntry {
        role: "train".into(),
        path: run.dataset.clone(),
        sha256: dataset::content_hash(&run.dataset)?,
    }];
    if let Some(l) = &run.labels {
        entries.push(DatasetEntry { role: "train_labels".into(), path: l.clone(), sha256: dataset::content_hash(l)? });
    }
    let val = match &run.val_dataset {
        Some(p) => {
            entries.push(DatasetEntry { role: "validation".into(), path: p.clone(), sha256: dataset::content_hash(p)? });
            if let Some(l) = &run.val_labels {
                entries.push(DatasetEntry {
                    role: "validation_labels".into(),
                    path: l.clone(),
                    sha256: dataset::content_hash(l)?,
                });
            }
            let split = run.val_split.as_deref().or(run.split.as_deref());
            Some(dataset::load(p, run.val_labels.as_deref(), split, grid)?)
        }
        None => None,
    };
    Ok(Data { train, val, entries })
}

fn initial_model(structure: Arc<ConnectivityStructure>, cfg: &EffectiveConfig, data: &Data, seed: u64) -> CliResult<Model> {
    Ok(match cfg.train.objective {
        Objective::Generative => Model::Generative(init_params(structure, seed)),
        Objective::Discriminative => {
            let n_classes = match cfg.run.n_classes {
                Some(c) => c,
                None => data
                    .train
                    .n_classes()
                    .ok_or_else(|| CliError::config("discriminative training needs a labelled dataset"))?,
            };
            Model::Classifier(init_classifier(structure, n_classes, seed)?)
        }
    })
}

fn run_seed(cfg: &EffectiveConfig, data: &Data, structure: &Arc<ConnectivityStructure>, seed: u64, out: &Path) -> CliResult<SeedRun> {
    let (train_set, val_set) = match &data.val {
        Some(v) => (data.train.clone(), v.clone()),
        None => {
            let n = data.train.len();
            let val_count = cfg.run.val_count.unwrap_or((n / 6).max(1));
            let spec = SplitSpec { seed, shuffle: cfg.run.shuffle_split, ..SplitSpec::holdout(val_count) };
            let (t, v, _) = split(&data.train, &spec)?;
            (t, v)
        }
    };
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let model = initial_model(structure.clone(), cfg, data, seed)?;
    let state = train(model, &train_set, &val_set, &train_cfg)?;
    let best = state.best.as_ref().expect("training always records the initial evaluation");

    let rel = PathBuf::from(format!("seed_{seed}"));
    fs::create_dir_all(out.join(&rel))?;
    let entry = SeedRun {
        seed,
        best_update: best.update,
        best_value: best.value,
        final_value: state.history.last().map_or(f64::NAN, |r| r.value),
        best_checkpoint: rel.join("best.ckpt"),
        final_checkpoint: rel.join("final.ckpt"),
        metrics: rel.join("metrics.csv"),
        timing: rel.join("timing.csv"),
    };
    checkpoint::save(out.join(&entry.best_checkpoint), &best.model)?;
    checkpoint::save(out.join(&entry.final_checkpoint), &state.model)?;
    write_metrics_csv(out.join(&entry.metrics), &state.history)?;
    write_timing_csv(out.join(&entry.timing), &state.history)?;
    Ok(entry)
}

pub fn cmd_train(cfg: &EffectiveConfig, quiet: bool) -> CliResult<RunManifest> {
    let data = load_data(cfg)?;
    let structure = Arc::new(ConnectivityStructure::build(&cfg.run.structure, data.train.grid())?);
    if let Some(v) = &data.val {
        if v.n_visible() != data.train.n_visible() {
            return Err(CliError::new(crate::error::code::DIMENSION, "training and validation images differ in size"));
        }
    }
    let out = cfg.out_dir();
    fs::create_dir_all(&out)?;
    let seeds = cfg.seeds();
    if !quiet {
        eprintln!(
            "training {} ({} hidden units, {} weights) on {} images, seeds {:?}",
            cfg.run.structure,
            structure.n_hidden(),
            structure.nnz(),
            data.train.len(),
            seeds
        );
    }

    let jobs = cfg.run.jobs.unwrap_or(1).clamp(1, seeds.len());
    let results: Mutex<Vec<Option<CliResult<SeedRun>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let k = {
                    let mut n = next.lock().unwrap();
                    if *n >= seeds.len() {
                        break;
                    }
                    *n += 1;
                    *n - 1
                };
                let r = run_seed(cfg, &data, &structure, seeds[k], &out);
                if !quiet {
                    match &r {
                        Ok(run) => eprintln!("seed {}: best {:.6} at update {}", run.seed, run.best_value, run.best_update),
                        Err(e) => eprintln!("seed {}: {e}", seeds[k]),
                    }
                }
                results.lock().unwrap()[k] = Some(r);
            });
        }
    });
    let runs = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every seed is processed"))
        .collect::<CliResult<Vec<_>>>()?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.snapshot.clone(),
        structure: cfg.run.structure.to_string(),
        n_visible: structure.n_visible(),
        n_hidden: structure.n_hidden(),
        n_weights: structure.nnz(),
        datasets: data.entries,
        seeds,
        runs,
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}
