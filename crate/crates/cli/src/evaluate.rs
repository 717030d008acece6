//! `sbm eval` and `sbm denoise`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbm_core::evaluation::{self, AisConfig};
use sbm_core::rbm::{exact_log_z, MAX_EXACT_VISIBLE};
use sbm_core::{checkpoint, ImageDataset, LogZMethod, Model};
use serde::Serialize;

use crate::error::{code, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalMode {
    Loglikelihood,
    Classify,
}

pub struct EvalOptions {
    pub mode: EvalMode,
    pub log_z: LogZMethod,
    pub ais: AisConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub checkpoint: PathBuf,
    pub dataset: Option<String>,
    pub model: String,
    pub n_instances: usize,
    pub metrics: Vec<Metric>,
}

fn check_dims(model: &Model, ds: &ImageDataset) -> CliResult<()> {
    if model.base().n_visible() != ds.n_visible() {
        return Err(CliError::new(
            code::DIMENSION,
            format!("checkpoint has {} visible units but images have {} pixels", model.base().n_visible(), ds.n_visible()),
        ));
    }
    Ok(())
}

fn metric(name: &str, value: f64) -> Metric {
    Metric { name: name.into(), value }
}

fn loglikelihood_metrics(model: &Model, ds: &ImageDataset, opts: &EvalOptions) -> CliResult<Vec<Metric>> {
    let p = model.base();
    let exact = match opts.log_z {
        LogZMethod::Auto => p.n_visible() <= MAX_EXACT_VISIBLE,
        LogZMethod::Exact => true,
        LogZMethod::Ais => false,
    };
    let (log_z, stderr) = if exact {
        (exact_log_z(p)?, 0.0)
    } else {
        let est = evaluation::ais_log_z(p, &opts.ais)?;
        if est.n_nonfinite > 0 {
            eprintln!("warning: {} AIS runs had non-finite weights and were excluded", est.n_nonfinite);
        }
        (est.log_z, est.stderr)
    };
    let ll = evaluation::mean_loglikelihood(ds, p, log_z)?;
    if !ll.is_finite() {
        return Err(CliError::new(code::NON_FINITE, format!("log-likelihood is {ll}")));
    }
    Ok(vec![
        metric("loglikelihood", ll),
        metric("log_z", log_z),
        metric("log_z_stderr", stderr),
        metric("log_z_exact", f64::from(u8::from(exact))),
    ])
}

fn classify_metrics(model: &Model, ds: &ImageDataset, out: &Path) -> CliResult<Vec<Metric>> {
    let c = model
        .as_classifier()
        .map_err(|_| CliError::config("classify mode needs a classification checkpoint"))?;
    let labels = ds.labels().ok_or_else(|| CliError::config("classify mode needs labels"))?;
    let n_c = c.n_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_c) {
        return Err(CliError::config(format!("label {bad} exceeds the checkpoint's {n_c} classes")));
    }
    let mut probs = Vec::with_capacity(ds.len() * n_c);
    let mut preds = Vec::with_capacity(ds.len());
    for k in 0..ds.len() {
        let p = c.predict_proba(ds.image(k))?;
        preds.push(sbm_core::classifier::argmax(&p));
        probs.extend(p);
    }
    let weights = evaluation::balanced_class_weights(labels, n_c);
    let table = evaluation::confusion_matrix(labels, &preds, n_c)?;
    let mut csv = String::from("true_class");
    for k in 0..n_c {
        write!(csv, ",pred_{k}").unwrap();
    }
    csv.push('\n');
    for (k, row) in table.iter().enumerate() {
        write!(csv, "{k}").unwrap();
        for x in row {
            write!(csv, ",{x}").unwrap();
        }
        csv.push('\n');
    }
    fs::write(out.join("confusion.csv"), csv)?;
    Ok(vec![
        metric("logloss", evaluation::log_loss(labels, &probs, n_c, None)?),
        metric("balanced_logloss", evaluation::log_loss(labels, &probs, n_c, Some(&weights))?),
        metric("accuracy", evaluation::accuracy(labels, &preds, false)?),
        metric("balanced_accuracy", evaluation::accuracy(labels, &preds, true)?),
    ])
}

pub fn cmd_eval(checkpoint_path: &Path, ds: &ImageDataset, opts: &EvalOptions) -> CliResult<EvalSummary> {
    let model = checkpoint::load(checkpoint_path)?;
    check_dims(&model, ds)?;
    fs::create_dir_all(&opts.out)?;
    let metrics = match opts.mode {
        EvalMode::Loglikelihood => loglikelihood_metrics(&model, ds, opts)?,
        EvalMode::Classify => classify_metrics(&model, ds, &opts.out)?,
    };
    if let Some(m) = metrics.iter().find(|m| !m.value.is_finite()) {
        return Err(CliError::new(code::NON_FINITE, format!("{} is {}", m.name, m.value)));
    }
    let mut csv = String::from("metric_name,value\n");
    for m in &metrics {
        writeln!(csv, "{},{:e}", m.name, m.value).unwrap();
    }
    fs::write(opts.out.join("metrics.csv"), csv)?;
    let summary = EvalSummary {
        checkpoint: checkpoint_path.to_path_buf(),
        dataset: ds.tag().map(str::to_string),
        model: model.structure().spec().to_string(),
        n_instances: ds.len(),
        metrics,
    };
    fs::write(opts.out.join("metrics.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct DenoiseSummary {
    pub tag: String,
    pub count: usize,
    pub mean_mse_input: f64,
    pub mean_mse_reconstruction: f64,
    pub std_mse_reconstruction: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Reconstructs every corrupted set (plus the clean set itself, tagged
/// `identity`) and compares with the clean images.
pub fn cmd_denoise(
    checkpoint_path: &Path,
    clean: &ImageDataset,
    corrupted: &[ImageDataset],
    steps: usize,
    seed: u64,
    out: &Path,
) -> CliResult<Vec<DenoiseSummary>> {
    let model = checkpoint::load(checkpoint_path)?;
    let params = model.base();
    if clean.is_empty() {
        return Err(CliError::config("clean dataset is empty"));
    }
    check_dims(&model, clean)?;
    let mut sets: Vec<(String, &ImageDataset)> = vec![("identity".into(), clean)];
    for (k, c) in corrupted.iter().enumerate() {
        check_dims(&model, c)?;
        if c.len() != clean.len() {
            return Err(CliError::new(
                code::DIMENSION,
                format!("corrupted set {k} has {} images, clean set has {}", c.len(), clean.len()),
            ));
        }
        sets.push((c.tag().map_or_else(|| format!("corrupted_{k}"), str::to_string), c));
    }
    fs::create_dir_all(out)?;
    let mut per_image = String::from("tag,index,mse_input,mse_reconstruction\n");
    let mut summaries = Vec::new();
    for (tag, set) in &sets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut input = Vec::with_capacity(set.len());
        let mut recon = Vec::with_capacity(set.len());
        for k in 0..set.len() {
            let stream = ChaCha8Rng::from_rng(&mut rng).expect("ChaCha reseeding cannot fail");
            let r = evaluation::denoise(set.image(k), params, steps, stream)?;
            input.push(evaluation::mse(set.image(k), clean.image(k))?);
            recon.push(evaluation::mse(&r, clean.image(k))?);
            writeln!(per_image, "{tag},{k},{:e},{:e}", input[k], recon[k]).unwrap();
        }
        let (mean_r, std_r) = mean_std(&recon);
        summaries.push(DenoiseSummary {
            tag: tag.clone(),
            count: set.len(),
            mean_mse_input: mean_std(&input).0,
            mean_mse_reconstruction: mean_r,
            std_mse_reconstruction: std_r,
        });
    }
    fs::write(out.join("per_image_mse.csv"), per_image)?;
    let mut csv = String::from("tag,count,mean_mse_input,mean_mse_reconstruction,std_mse_reconstruction\n");
    for s in &summaries {
        writeln!(csv, "{},{},{:e},{:e},{:e}", s.tag, s.count, s.mean_mse_input, s.mean_mse_reconstruction, s.std_mse_reconstruction)
            .unwrap();
    }
    fs::write(out.join("summary.csv"), csv)?;
    Ok(summaries)
}
