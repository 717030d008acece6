//! Mini-batch SGD with momentum, initialization, periodic validation and
//! best-checkpoint selection.

use std::sync::Arc;
use std::time::Instant;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassRbmParams;
use crate::data::{Batch, BatchSampler, ImageDataset};
use crate::error::{Error, Result};
use crate::evaluation::{self, AisConfig, MetricsRecord};
use crate::model::Model;
use crate::rbm::{cd_gradient, cd_gradient_dense, exact_log_z, CdOptions, RbmParams, MAX_EXACT_VISIBLE};
use crate::structure::ConnectivityStructure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Maximize the log-likelihood with CD-K.
    Generative,
    /// Maximize `log p(y | v)` with the exact gradient.
    Discriminative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    Loglikelihood,
    Logloss,
    BalancedLogloss,
}

impl ValidationMetric {
    pub fn name(self) -> &'static str {
        match self {
            ValidationMetric::Loglikelihood => "loglikelihood",
            ValidationMetric::Logloss => "logloss",
            ValidationMetric::BalancedLogloss => "balanced_logloss",
        }
    }

    pub fn maximize(self) -> bool {
        self == ValidationMetric::Loglikelihood
    }
}

/// How `ln Z` is obtained for the validation log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogZMethod {
    /// Exact enumeration when `n_v` allows it, AIS otherwise.
    #[default]
    Auto,
    Exact,
    Ais,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_updates: usize,
    pub cd_steps: usize,
    pub eval_interval: usize,
    pub seed: u64,
    pub objective: Objective,
    /// Defaults to log-likelihood for generative training and log-loss for
    /// discriminative training.
    pub validation_metric: Option<ValidationMetric>,
    pub sample_visible: bool,
    pub log_z: LogZMethod,
    pub ais_runs: usize,
    pub ais_betas: usize,
    /// Threads used by validation AIS (0 = all cores). Does not affect results.
    pub ais_threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 16,
            total_updates: 10000,
            cd_steps: 1,
            eval_interval: 200,
            seed: 0,
            objective: Objective::Generative,
            validation_metric: None,
            sample_visible: false,
            log_z: LogZMethod::Auto,
            ais_runs: 50,
            ais_betas: 2900,
            ais_threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn metric(&self) -> ValidationMetric {
        self.validation_metric.unwrap_or(match self.objective {
            Objective::Generative => ValidationMetric::Loglikelihood,
            Objective::Discriminative => ValidationMetric::Logloss,
        })
    }

    pub fn cd_options(&self) -> CdOptions {
        CdOptions { k: self.cd_steps, sample_visible: self.sample_visible }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.total_updates == 0 {
            return bad("total_updates must be at least 1");
        }
        if self.cd_steps == 0 {
            return bad("cd_steps must be at least 1");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be at least 1");
        }
        if self.ais_runs == 0 || self.ais_betas < 2 {
            return bad("AIS needs at least one run and two inverse temperatures");
        }
        match (self.objective, self.metric()) {
            (Objective::Generative, ValidationMetric::Loglikelihood) => Ok(()),
            (Objective::Discriminative, ValidationMetric::Logloss | ValidationMetric::BalancedLogloss) => Ok(()),
            (o, m) => Err(Error::InvalidArgument(format!("metric {} does not fit the {o:?} objective", m.name()))),
        }
    }
}

fn glorot(n_in: usize, n_out: usize) -> f64 {
    6f64.sqrt() / ((n_in + n_out) as f64).sqrt()
}

/// Glorot-uniform weights on the support and zero biases.
pub fn init_params(structure: Arc<ConnectivityStructure>, seed: u64) -> RbmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = glorot(structure.n_visible(), structure.n_hidden());
    let dist = Uniform::new_inclusive(-bound, bound);
    let mut p = RbmParams::zeros(structure);
    p.weights_mut().iter_mut().for_each(|w| *w = dist.sample(&mut rng));
    p
}

/// As [`init_params`], with `U` drawn from the Glorot bound of `(C, n_h)`.
pub fn init_classifier(structure: Arc<ConnectivityStructure>, n_classes: usize, seed: u64) -> Result<ClassRbmParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_h = structure.n_hidden();
    let base = init_params(structure, rng.gen());
    let dist = Uniform::new_inclusive(-glorot(n_classes, n_h), glorot(n_classes, n_h));
    let u = (0..n_classes * n_h).map(|_| dist.sample(&mut rng)).collect();
    ClassRbmParams::from_parts(base, u, vec![0.0; n_classes])
}

#[derive(Debug, Clone)]
pub struct BestCheckpoint {
    pub update: usize,
    pub value: f64,
    pub model: Model,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    /// One buffer per parameter group, in [`Model::parts`] order.
    pub velocity: Vec<Vec<f64>>,
    pub updates: usize,
    pub best: Option<BestCheckpoint>,
    pub history: Vec<MetricsRecord>,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        let velocity = model.parts().iter().map(|p| vec![0.0; p.len()]).collect();
        TrainState { model, velocity, updates: 0, best: None, history: Vec::new() }
    }

    /// `velocity <- momentum * velocity + lr * ascent; params += velocity`.
    pub fn momentum_step(&mut self, ascent: &[&[f64]], learning_rate: f64, momentum: f64) -> Result<()> {
        let mut parts = self.model.parts_mut();
        if ascent.len() != parts.len() || ascent.iter().zip(&parts).any(|(g, p)| g.len() != p.len()) {
            return Err(Error::shape("gradient does not match the parameter groups"));
        }
        for ((p, v), g) in parts.iter_mut().zip(&mut self.velocity).zip(ascent) {
            for ((pk, vk), gk) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *vk = momentum * *vk + learning_rate * gk;
                *pk += *vk;
            }
        }
        self.updates += 1;
        Ok(())
    }

    /// Records a validation value and keeps a snapshot if it is the best so
    /// far (the earliest one wins ties).
    fn record(&mut self, metric: ValidationMetric, value: f64, seed: u64, wall_time: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("validation {} at update {}: {value}", metric.name(), self.updates)));
        }
        self.history.push(MetricsRecord {
            name: metric.name().to_string(),
            value,
            split: "validation".into(),
            model: self.model.structure().spec().to_string(),
            seed,
            update: self.updates,
            wall_time,
        });
        let improves = match &self.best {
            None => true,
            Some(b) if metric.maximize() => value > b.value,
            Some(b) => value < b.value,
        };
        if improves {
            self.best = Some(BestCheckpoint { update: self.updates, value, model: self.model.clone() });
        }
        Ok(())
    }
}

/// Validation metric of `model` on `val`, as configured.
pub fn validation_value(model: &Model, val: &ImageDataset, cfg: &TrainConfig, ais_seed: u64) -> Result<f64> {
    match cfg.metric() {
        ValidationMetric::Loglikelihood => {
            let p = model.as_generative()?;
            let exact = match cfg.log_z {
                LogZMethod::Auto => p.n_visible() <= MAX_EXACT_VISIBLE,
                LogZMethod::Exact => true,
                LogZMethod::Ais => false,
            };
            let log_z = if exact {
                exact_log_z(p)?
            } else {
                let ais = AisConfig { n_runs: cfg.ais_runs, n_betas: cfg.ais_betas, seed: ais_seed, threads: cfg.ais_threads };
                evaluation::ais_log_z(p, &ais)?.log_z
            };
            evaluation::mean_loglikelihood(val, p, log_z)
        }
        metric => {
            let c = model.as_classifier()?;
            let labels = val.labels().ok_or_else(|| Error::invalid("validation set has no labels"))?;
            let n_c = c.n_classes();
            let mut probs = Vec::with_capacity(val.len() * n_c);
            for k in 0..val.len() {
                probs.extend(c.predict_proba(val.image(k))?);
            }
            let weights = (metric == ValidationMetric::BalancedLogloss).then(|| evaluation::balanced_class_weights(labels, n_c));
            evaluation::log_loss(labels, &probs, n_c, weights.as_deref())
        }
    }
}

fn check_compatible(model: &Model, data: &ImageDataset, cfg: &TrainConfig, what: &str) -> Result<()> {
    if data.n_visible() != model.base().n_visible() {
        return Err(Error::shape(format!(
            "{what} images have {} pixels, model has {} visible units",
            data.n_visible(),
            model.base().n_visible()
        )));
    }
    if cfg.objective == Objective::Discriminative {
        let labels = data.labels().ok_or_else(|| Error::invalid(format!("{what} set has no labels")))?;
        let n_c = model.n_classes().unwrap_or(0);
        if labels.iter().any(|&l| l >= n_c) {
            return Err(Error::invalid(format!("{what} labels exceed the model's {n_c} classes")));
        }
    }
    Ok(())
}

/// Trains on `train` and validates on `val` every `eval_interval` updates.
pub fn train(model: Model, train: &ImageDataset, val: &ImageDataset, cfg: &TrainConfig) -> Result<TrainState> {
    check_compatible(&model, val, cfg, "validation")?;
    if val.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let mut ais_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ais_rng.set_stream(3);
    train_with_evaluator(model, train, cfg, |m| validation_value(m, val, cfg, ais_rng.gen()))
}

/// Training loop with a caller-supplied validation metric. The model is
/// evaluated before the first update, every `eval_interval` updates and
/// after the last update.
pub fn train_with_evaluator<F>(model: Model, train: &ImageDataset, cfg: &TrainConfig, mut evaluate: F) -> Result<TrainState>
where
    F: FnMut(&Model) -> Result<f64>,
{
    cfg.validate()?;
    match (&model, cfg.objective) {
        (Model::Generative(_), Objective::Generative) | (Model::Classifier(_), Objective::Discriminative) => {}
        _ => return Err(Error::invalid(format!("{:?} objective does not fit this model type", cfg.objective))),
    }
    check_compatible(&model, train, cfg, "training")?;

    let mut sampler_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sampler_rng.set_stream(1);
    let mut cd_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    cd_rng.set_stream(2);
    let mut sampler = BatchSampler::new(train, cfg.batch_size, sampler_rng.gen())?;
    let metric = cfg.metric();
    let opts = cfg.cd_options();
    let start = Instant::now();

    let mut state = TrainState::new(model);
    state.record(metric, evaluate(&state.model)?, cfg.seed, start.elapsed().as_secs_f64())?;
    for t in 1..=cfg.total_updates {
        let batch = sampler.next_batch();
        match &state.model {
            Model::Generative(p) => {
                let g = cd_gradient(&batch, p, &opts, &mut cd_rng)?;
                state.momentum_step(&[&g.dw, &g.da, &g.db], cfg.learning_rate, cfg.momentum)?;
            }
            Model::Classifier(c) => {
                let mut g = c.disc_gradient(&batch)?;
                g.scale(-1.0);
                state.momentum_step(&[&g.base.dw, &g.base.da, &g.base.db, &g.du, &g.dc], cfg.learning_rate, cfg.momentum)?;
            }
        }
        if t % cfg.eval_interval == 0 || t == cfg.total_updates {
            if !state.model.is_finite() {
                return Err(Error::NonFinite(format!("parameters after update {t}")));
            }
            state.record(metric, evaluate(&state.model)?, cfg.seed, start.elapsed().as_secs_f64())?;
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSummary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single repetition.
    pub std: f64,
}

impl TimeSummary {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        TimeSummary { mean, std }
    }
}

/// Wall-clock seconds per gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub sparse: TimeSummary,
    pub dense: TimeSummary,
    pub repetitions: usize,
}

impl TimingStats {
    /// Dense mean over sparse mean.
    pub fn speedup(&self) -> f64 {
        self.dense.mean / self.sparse.mean
    }
}

/// Times the sparse and dense-masked gradient paths on the same batch:
/// CD-K for generative models, the discriminative gradient for classifiers.
/// The two paths alternate so that drift affects both equally.
pub fn measure_gradient_time(model: &Model, batch: &Batch, repetitions: usize, opts: &CdOptions) -> Result<TimingStats> {
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be at least 1"));
    }
    let rng = ChaCha8Rng::seed_from_u64(0);
    let mut sparse = Vec::with_capacity(repetitions);
    let mut dense = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        match model {
            Model::Generative(p) => drop(cd_gradient(batch, p, opts, &mut rng.clone())?),
            Model::Classifier(c) => drop(c.disc_gradient(batch)?),
        }
        sparse.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        match model {
            Model::Generative(p) => drop(cd_gradient_dense(batch, p, opts, &mut rng.clone())?),
            Model::Classifier(c) => drop(c.disc_gradient_dense(batch)?),
        }
        dense.push(t.elapsed().as_secs_f64());
    }
    Ok(TimingStats {
        sparse: TimeSummary::from_samples(&sparse),
        dense: TimeSummary::from_samples(&dense),
        repetitions,
    })
}
