use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RbmParams;
use crate::error::{Error, Result};

/// A Gibbs chain: current visible and hidden vectors plus the chain's RNG.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub v: Vec<f64>,
    pub h: Vec<f64>,
    rng: ChaCha8Rng,
}

impl GibbsState {
    pub fn new(v: Vec<f64>, n_hidden: usize, seed: u64) -> Self {
        GibbsState::with_rng(v, n_hidden, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(v: Vec<f64>, n_hidden: usize, rng: ChaCha8Rng) -> Self {
        GibbsState { v, h: vec![0.0; n_hidden], rng }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// One block-Gibbs sweep: sample `h ~ p(h | v)`, then set `v` to
    /// `p(v | h)` (mean field) or to a Bernoulli sample of it.
    pub fn step(&mut self, params: &RbmParams, sample_visible: bool) -> Result<()> {
        if self.v.len() != params.n_visible() || self.h.len() != params.n_hidden() {
            return Err(Error::shape("Gibbs state does not match the model"));
        }
        params.hidden_probs_into(&self.v, &mut self.h);
        sample_bernoulli(&mut self.h, &mut self.rng);
        params.visible_probs_into(&self.h, &mut self.v);
        if sample_visible {
            sample_bernoulli(&mut self.v, &mut self.rng);
        }
        Ok(())
    }
}

/// Replaces each probability with a 0/1 draw.
#[inline]
pub(crate) fn sample_bernoulli<R: Rng>(probs: &mut [f64], rng: &mut R) {
    for p in probs.iter_mut() {
        let u: f64 = rng.gen();
        *p = if u < *p { 1.0 } else { 0.0 };
    }
}
