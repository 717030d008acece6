//! Model assessment: AIS partition-function estimates, log-likelihood,
//! denoising and classification metrics.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, sigmoid, softplus, LN2};
use crate::rbm::{GibbsState, RbmParams};

/// Annealed importance sampling budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AisConfig {
    pub n_runs: usize,
    /// Number of inverse temperatures, including the endpoints 0 and 1.
    pub n_betas: usize,
    pub seed: u64,
    /// Worker threads; 0 picks the available parallelism. Results do not
    /// depend on this value.
    pub threads: usize,
}

impl Default for AisConfig {
    fn default() -> Self {
        AisConfig { n_runs: 1000, n_betas: 2900, seed: 0, threads: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AisEstimate {
    pub log_z: f64,
    /// Standard error of `log_z` (delta method on the importance weights).
    pub stderr: f64,
    pub log_z_base: f64,
    /// Runs whose log-weight was not finite; they are excluded.
    pub n_nonfinite: usize,
}

/// Linearly spaced inverse temperatures from 0 to 1.
pub fn beta_schedule(n_betas: usize) -> Vec<f64> {
    let last = (n_betas - 1) as f64;
    (0..n_betas).map(|k| k as f64 / last).collect()
}

/// One annealing run; returns its log importance weight.
fn ais_run(params: &RbmParams, betas: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let (n_v, n_h) = (params.n_visible(), params.n_hidden());
    let a = params.visible_bias();
    let mut v: Vec<f64> = a.iter().map(|&ai| (rng.gen::<f64>() < sigmoid(ai)) as u8 as f64).collect();
    let mut x = vec![0.0; n_h];
    let mut h = vec![0.0; n_h];
    let mut vin = vec![0.0; n_v];
    let mut log_w = 0.0;
    let wt = params.transposed_weights();
    for k in 1..betas.len() {
        let (prev, beta) = (betas[k - 1], betas[k]);
        params.hidden_input_transposed(&wt, &v, &mut x);
        for &xj in &x {
            log_w += softplus(beta * xj) - softplus(prev * xj);
        }
        if k + 1 == betas.len() {
            break;
        }
        // Gibbs transition that leaves the beta-tempered model invariant.
        for (hj, &xj) in h.iter_mut().zip(&x) {
            *hj = (rng.gen::<f64>() < sigmoid(beta * xj)) as u8 as f64;
        }
        params.visible_input_into(&h, &mut vin);
        for i in 0..n_v {
            let act = a[i] + beta * (vin[i] - a[i]);
            v[i] = (rng.gen::<f64>() < sigmoid(act)) as u8 as f64;
        }
    }
    log_w
}

/// Estimates `ln Z` by annealing from the zero-weight model with the same
/// visible biases (`ln Z_base = Σ_i softplus(a_i) + n_h ln 2`) to the model,
/// scaling `W` and `b` by the inverse temperature.
pub fn ais_log_z(params: &RbmParams, cfg: &AisConfig) -> Result<AisEstimate> {
    if cfg.n_runs == 0 {
        return Err(Error::invalid("AIS needs at least one run"));
    }
    if cfg.n_betas < 2 {
        return Err(Error::invalid("AIS needs at least two inverse temperatures"));
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    let betas = beta_schedule(cfg.n_betas);
    let run = |r: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        ais_run(params, &betas, &mut rng)
    };
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .min(cfg.n_runs);
    let mut log_w = vec![0.0; cfg.n_runs];
    if threads <= 1 {
        log_w.iter_mut().enumerate().for_each(|(r, w)| *w = run(r));
    } else {
        let chunk = cfg.n_runs.div_ceil(threads);
        std::thread::scope(|scope| {
            for (c, out) in log_w.chunks_mut(chunk).enumerate() {
                let run = &run;
                scope.spawn(move || {
                    for (k, w) in out.iter_mut().enumerate() {
                        *w = run(c * chunk + k);
                    }
                });
            }
        });
    }

    let finite: Vec<f64> = log_w.iter().copied().filter(|w| w.is_finite()).collect();
    let n_nonfinite = log_w.len() - finite.len();
    if finite.is_empty() {
        return Err(Error::NonFinite("every AIS importance weight".into()));
    }
    let n = finite.len() as f64;
    let log_mean = log_sum_exp(&finite) - n.ln();
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = finite.iter().map(|w| (w - max).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / n;
    let stderr = if finite.len() > 1 {
        let var = scaled.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt() / (mean * n.sqrt())
    } else {
        0.0
    };
    let log_z_base = params.visible_bias().iter().map(|&a| softplus(a)).sum::<f64>() + params.n_hidden() as f64 * LN2;
    Ok(AisEstimate { log_z: log_z_base + log_mean, stderr, log_z_base, n_nonfinite })
}

/// `-(1/|D|) Σ F(v) - ln Z`.
pub fn mean_loglikelihood(dataset: &ImageDataset, params: &RbmParams, log_z: f64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("log-likelihood of an empty dataset"));
    }
    if dataset.n_visible() != params.n_visible() {
        return Err(Error::shape(format!(
            "dataset has {} pixels per image, model has {} visible units",
            dataset.n_visible(),
            params.n_visible()
        )));
    }
    let total: f64 = (0..dataset.len()).map(|k| params.free_energy_unchecked(dataset.image(k))).sum();
    Ok(-total / dataset.len() as f64 - log_z)
}

/// Reconstructs an image with `steps` Gibbs sweeps started at the image
/// itself, returning the final mean-field visible probabilities.
pub fn denoise(image: &[f64], params: &RbmParams, steps: usize, rng: ChaCha8Rng) -> Result<Vec<f64>> {
    if image.len() != params.n_visible() {
        return Err(Error::shape("image length differs from n_v"));
    }
    if steps == 0 {
        return Err(Error::invalid("denoising needs at least one Gibbs step"));
    }
    let mut state = GibbsState::with_rng(image.to_vec(), params.n_hidden(), rng);
    for _ in 0..steps {
        state.step(params, false)?;
    }
    Ok(state.v)
}

pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("mse of lengths {} and {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::invalid("mse of empty vectors"));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
}

pub const PROB_FLOOR: f64 = 1e-12;

/// Per-class weights `N / (C · count_k)` over the classes that occur.
pub fn balanced_class_weights(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (present * c as f64) })
        .collect()
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {n_classes} classes")));
    }
    Ok(())
}

/// `-(1/N) Σ_i w_{y_i} ln p_{i, y_i}` over row-major `N × C` probabilities.
/// Probabilities are floored at [`PROB_FLOOR`] before the logarithm.
pub fn log_loss(labels: &[usize], probs: &[f64], n_classes: usize, class_weights: Option<&[f64]>) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::invalid("log-loss of an empty set"));
    }
    if probs.len() != labels.len() * n_classes {
        return Err(Error::shape(format!("{} probabilities for {} rows of {n_classes}", probs.len(), labels.len())));
    }
    check_labels(labels, n_classes)?;
    if let Some(w) = class_weights {
        if w.len() != n_classes {
            return Err(Error::shape("one weight per class expected"));
        }
    }
    let mut total = 0.0;
    for (row, &y) in probs.chunks_exact(n_classes).zip(labels) {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("probability row {row:?} is not a distribution")));
        }
        let w = class_weights.map_or(1.0, |w| w[y]);
        total -= w * row[y].max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Plain or class-balanced accuracy.
pub fn accuracy(labels: &[usize], predictions: &[usize], balanced: bool) -> Result<f64> {
    if labels.len() != predictions.len() {
        return Err(Error::shape("labels and predictions differ in length"));
    }
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let n_classes = labels.iter().chain(predictions).max().map_or(0, |m| m + 1);
    let weights = if balanced { balanced_class_weights(labels, n_classes) } else { vec![1.0; n_classes] };
    let hits: f64 = labels
        .iter()
        .zip(predictions)
        .filter(|(y, p)| y == p)
        .map(|(y, _)| weights[*y])
        .sum();
    Ok(hits / labels.len() as f64)
}

/// `table[true][predicted]` counts.
pub fn confusion_matrix(labels: &[usize], predictions: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if labels.len() != predictions.len() {
        return Err(Error::shape("labels and predictions differ in length"));
    }
    check_labels(labels, n_classes)?;
    check_labels(predictions, n_classes)?;
    let mut table = vec![vec![0; n_classes]; n_classes];
    for (&y, &p) in labels.iter().zip(predictions) {
        table[y][p] += 1;
    }
    Ok(table)
}

/// A named scalar produced during training or evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub name: String,
    pub value: f64,
    pub split: String,
    pub model: String,
    pub seed: u64,
    /// Parameter update count at which the metric was taken.
    pub update: usize,
    /// Seconds since the start of the run. Not written to the metrics CSV so
    /// that reruns produce identical files.
    pub wall_time: f64,
}

impl MetricsRecord {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Writes `update_index,metric_name,value`.
pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[MetricsRecord]) -> Result<()> {
    let mut out = String::from("update_index,metric_name,value\n");
    for r in records {
        out.push_str(&format!("{},{},{:e}\n", r.update, r.name, r.value));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes `update_index,metric_name,wall_time`.
pub fn write_timing_csv(path: impl AsRef<Path>, records: &[MetricsRecord]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "update_index,metric_name,wall_time")?;
    for r in records {
        writeln!(out, "{},{},{:.6}", r.update, r.name, r.wall_time)?;
    }
    Ok(())
}
