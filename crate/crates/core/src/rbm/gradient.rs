//! Contrastive-divergence gradients.
//!
//! Both paths compute the same CD-K estimate of `∂L/∂θ` (the ascent
//! direction of the log-likelihood). The sparse path touches only supported
//! weights; the dense path multiplies full `n_v × n_h` matrices and masks the
//! result afterwards. Each batch row draws its own sub-seed from the caller's
//! RNG, so the two paths consume identical random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gibbs::sample_bernoulli;
use super::RbmParams;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::structure::ConnectivityStructure;

/// Gradient over `{W, a, b}`, with `dw` in support order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub dw: Vec<f64>,
    pub da: Vec<f64>,
    pub db: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(params: &RbmParams) -> Self {
        GradientSet {
            dw: vec![0.0; params.weights().len()],
            da: vec![0.0; params.n_visible()],
            db: vec![0.0; params.n_hidden()],
        }
    }

    pub(crate) fn check_shape(&self, params: &RbmParams) -> Result<()> {
        if self.dw.len() != params.weights().len()
            || self.da.len() != params.n_visible()
            || self.db.len() != params.n_hidden()
        {
            return Err(Error::shape("gradient does not match the parameter shapes"));
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for x in self.dw.iter_mut().chain(&mut self.da).chain(&mut self.db) {
            *x *= s;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.dw.iter().chain(&self.da).chain(&self.db).copied()
    }

    pub fn max_abs_diff(&self, other: &GradientSet) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Gradient with a full `n_v × n_h` weight block, as produced by the dense path.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGradientSet {
    pub n_hidden: usize,
    pub dw: Vec<f64>,
    pub da: Vec<f64>,
    pub db: Vec<f64>,
}

impl DenseGradientSet {
    /// Gathers supported entries into support order.
    pub fn to_sparse(&self, structure: &ConnectivityStructure) -> GradientSet {
        let dw = structure.support().map(|(i, j)| self.dw[i * self.n_hidden + j]).collect();
        GradientSet { dw, da: self.da.clone(), db: self.db.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CdOptions {
    /// Number of Gibbs sweeps in the negative phase.
    pub k: usize,
    /// Sample visible units instead of using mean-field reconstructions.
    pub sample_visible: bool,
}

impl Default for CdOptions {
    fn default() -> Self {
        CdOptions { k: 1, sample_visible: false }
    }
}

fn check_batch(batch: &Batch, params: &RbmParams, opts: &CdOptions) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if batch.n_visible != params.n_visible() {
        return Err(Error::shape(format!("batch rows have {} pixels, model has {}", batch.n_visible, params.n_visible())));
    }
    if opts.k == 0 {
        return Err(Error::invalid("CD needs at least one Gibbs step"));
    }
    Ok(())
}

fn hidden_probs(params: &RbmParams, wt: &[f64], v: &[f64], out: &mut [f64]) {
    params.hidden_input_transposed(wt, v, out);
    out.iter_mut().for_each(|x| *x = sigmoid(*x));
}

/// CD-K gradient over the structure's support.
pub fn cd_gradient(batch: &Batch, params: &RbmParams, opts: &CdOptions, rng: &mut ChaCha8Rng) -> Result<GradientSet> {
    check_batch(batch, params, opts)?;
    let s = params.structure();
    let (n_v, n_h) = (params.n_visible(), params.n_hidden());
    let mut grad = GradientSet::zeros_like(params);
    let mut ph0 = vec![0.0; n_h];
    let mut h = vec![0.0; n_h];
    let mut v = vec![0.0; n_v];
    let wt = params.transposed_weights();

    for v0 in batch.rows() {
        let mut row_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        hidden_probs(params, &wt, v0, &mut ph0);
        h.copy_from_slice(&ph0);
        for step in 0..opts.k {
            if step > 0 {
                hidden_probs(params, &wt, &v, &mut h);
            }
            sample_bernoulli(&mut h, &mut row_rng);
            params.visible_probs_into(&h, &mut v);
            if opts.sample_visible {
                sample_bernoulli(&mut v, &mut row_rng);
            }
        }
        let phk = &mut h;
        hidden_probs(params, &wt, &v, phk);

        let vis = s.support_visible();
        for j in 0..n_h {
            let (p0, pk) = (ph0[j], phk[j]);
            let slots = s.slots(j);
            for (g, &i) in grad.dw[slots.clone()].iter_mut().zip(&vis[slots]) {
                *g += v0[i] * p0 - v[i] * pk;
            }
            grad.db[j] += p0 - pk;
        }
        for i in 0..n_v {
            grad.da[i] += v0[i] - v[i];
        }
    }
    grad.scale(1.0 / batch.len() as f64);
    Ok(grad)
}

/// CD-K gradient computed with dense matrices and masked afterwards.
///
/// Reference path for the sparse kernel: same arithmetic order, so both
/// agree to rounding (bitwise in practice) under a shared RNG stream.
pub fn cd_gradient_dense(
    batch: &Batch,
    params: &RbmParams,
    opts: &CdOptions,
    rng: &mut ChaCha8Rng,
) -> Result<DenseGradientSet> {
    check_batch(batch, params, opts)?;
    let (n_v, n_h) = (params.n_visible(), params.n_hidden());
    let w = params.dense_weights();
    let mask = params.structure().mask_matrix();
    let a = params.visible_bias();
    let b = params.hidden_bias();

    let hidden_probs = |v: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            let row = &w[i * n_h..(i + 1) * n_h];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += wij * vi;
            }
        }
        for (o, &bj) in out.iter_mut().zip(b) {
            *o = sigmoid(*o + bj);
        }
    };
    let visible_probs = |h: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &w[i * n_h..(i + 1) * n_h];
            let mut acc = 0.0;
            for (&wij, &hj) in row.iter().zip(h) {
                acc += wij * hj;
            }
            *o = sigmoid(acc + a[i]);
        }
    };

    let mut dw = vec![0.0; n_v * n_h];
    let mut da = vec![0.0; n_v];
    let mut db = vec![0.0; n_h];
    let mut ph0 = vec![0.0; n_h];
    let mut h = vec![0.0; n_h];
    let mut v = vec![0.0; n_v];

    for v0 in batch.rows() {
        let mut row_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        hidden_probs(v0, &mut ph0);
        h.copy_from_slice(&ph0);
        for step in 0..opts.k {
            if step > 0 {
                hidden_probs(&v, &mut h);
            }
            sample_bernoulli(&mut h, &mut row_rng);
            visible_probs(&h, &mut v);
            if opts.sample_visible {
                sample_bernoulli(&mut v, &mut row_rng);
            }
        }
        hidden_probs(&v, &mut h);

        for i in 0..n_v {
            let row = &mut dw[i * n_h..(i + 1) * n_h];
            for j in 0..n_h {
                row[j] += v0[i] * ph0[j] - v[i] * h[j];
            }
            da[i] += v0[i] - v[i];
        }
        for j in 0..n_h {
            db[j] += ph0[j] - h[j];
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for (g, m) in dw.iter_mut().zip(&mask) {
        *g *= m * inv;
    }
    da.iter_mut().chain(&mut db).for_each(|x| *x *= inv);
    Ok(DenseGradientSet { n_hidden: n_h, dw, da, db })
}
