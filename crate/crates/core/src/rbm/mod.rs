//! Binary RBM over a (possibly sparse) connectivity structure.
//!
//! Weights live only on the structure's support, stored hidden-unit by
//! hidden-unit in slot order (see [`ConnectivityStructure::slots`]), so an
//! off-support weight cannot become non-zero.

mod exact;
mod gibbs;
mod gradient;

use std::sync::Arc;

pub use exact::{exact_ll_gradient, exact_log_z, visible_state, MAX_EXACT_VISIBLE};
pub use gibbs::GibbsState;
pub use gradient::{cd_gradient, cd_gradient_dense, CdOptions, DenseGradientSet, GradientSet};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::structure::ConnectivityStructure;

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    structure: Arc<ConnectivityStructure>,
    weights: Vec<f64>,
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
}

impl RbmParams {
    pub fn zeros(structure: Arc<ConnectivityStructure>) -> Self {
        RbmParams {
            weights: vec![0.0; structure.nnz()],
            visible_bias: vec![0.0; structure.n_visible()],
            hidden_bias: vec![0.0; structure.n_hidden()],
            structure,
        }
    }

    /// Builds parameters from support-ordered weights and both bias vectors.
    pub fn from_parts(
        structure: Arc<ConnectivityStructure>,
        weights: Vec<f64>,
        visible_bias: Vec<f64>,
        hidden_bias: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != structure.nnz()
            || visible_bias.len() != structure.n_visible()
            || hidden_bias.len() != structure.n_hidden()
        {
            return Err(Error::shape(format!(
                "parameter lengths ({}, {}, {}) do not match structure (nnz {}, n_v {}, n_h {})",
                weights.len(),
                visible_bias.len(),
                hidden_bias.len(),
                structure.nnz(),
                structure.n_visible(),
                structure.n_hidden()
            )));
        }
        Ok(RbmParams { structure, weights, visible_bias, hidden_bias })
    }

    pub fn structure(&self) -> &ConnectivityStructure {
        &self.structure
    }

    pub fn structure_arc(&self) -> &Arc<ConnectivityStructure> {
        &self.structure
    }

    pub fn n_visible(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    /// Support-ordered weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.visible_bias
    }

    pub fn visible_bias_mut(&mut self) -> &mut [f64] {
        &mut self.visible_bias
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.hidden_bias
    }

    pub fn hidden_bias_mut(&mut self) -> &mut [f64] {
        &mut self.hidden_bias
    }

    /// `W_ij`, zero off the support.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let s = &self.structure;
        match s.neighbourhood(j).binary_search(&i) {
            Ok(k) => self.weights[s.slots(j).start + k],
            Err(_) => 0.0,
        }
    }

    /// Dense row-major `n_v × n_h` copy of `W`.
    pub fn dense_weights(&self) -> Vec<f64> {
        let n_h = self.n_hidden();
        let mut w = vec![0.0; self.n_visible() * n_h];
        for ((i, j), &x) in self.structure.support().zip(&self.weights) {
            w[i * n_h + j] = x;
        }
        w
    }

    /// Mutable `(W, a, b)` at once.
    pub fn split_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.visible_bias, &mut self.hidden_bias)
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.visible_bias)
            .chain(&self.hidden_bias)
            .all(|x| x.is_finite())
    }

    fn check_visible(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_visible() {
            return Err(Error::shape(format!("visible vector has length {}, expected {}", v.len(), self.n_visible())));
        }
        Ok(())
    }

    fn check_hidden(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.n_hidden() {
            return Err(Error::shape(format!("hidden vector has length {}, expected {}", h.len(), self.n_hidden())));
        }
        Ok(())
    }

    /// `Σ_{i ∈ V(h_j)} W_ij v_i`, without the bias.
    #[inline]
    pub(crate) fn hidden_interaction(&self, v: &[f64], j: usize) -> f64 {
        let slots = self.structure.slots(j);
        let vis = &self.structure.support_visible()[slots.clone()];
        let w = &self.weights[slots];
        let mut acc = 0.0;
        for (&i, &x) in vis.iter().zip(w) {
            acc += x * v[i];
        }
        acc
    }

    /// Hidden pre-activations `b_j + Σ_i W_ij v_i` into `out`.
    pub(crate) fn hidden_input_into(&self, v: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.hidden_interaction(v, j) + self.hidden_bias[j];
        }
    }

    /// Visible pre-activations `a_i + Σ_{j ∈ H(v_i)} W_ij h_j` into `out`.
    /// Terms are scattered hidden unit by hidden unit, so each sum runs in
    /// ascending `j`.
    pub(crate) fn visible_input_into(&self, h: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let vis = self.structure.support_visible();
        for (j, &hj) in h.iter().enumerate() {
            let slots = self.structure.slots(j);
            for (&i, &w) in vis[slots.clone()].iter().zip(&self.weights[slots]) {
                out[i] += w * hj;
            }
        }
        for (o, &a) in out.iter_mut().zip(&self.visible_bias) {
            *o += a;
        }
    }

    /// Weights gathered into reverse-map order.
    pub(crate) fn transposed_weights(&self) -> Vec<f64> {
        let (_, _, rev_slot) = self.structure.reverse_map();
        rev_slot.iter().map(|&slot| self.weights[slot]).collect()
    }

    /// Same sums as [`Self::hidden_input_into`], scattered visible unit by
    /// visible unit from the output of [`Self::transposed_weights`].
    pub(crate) fn hidden_input_transposed(&self, wt: &[f64], v: &[f64], out: &mut [f64]) {
        let (offsets, hidden, _) = self.structure.reverse_map();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            let r = offsets[i]..offsets[i + 1];
            for (&w, &j) in wt[r.clone()].iter().zip(&hidden[r]) {
                out[j] += w * vi;
            }
        }
        for (o, &b) in out.iter_mut().zip(&self.hidden_bias) {
            *o += b;
        }
    }

    /// `E(v, h) = -Σ v_i W_ij h_j - Σ v_i a_i - Σ h_j b_j`.
    pub fn energy(&self, v: &[f64], h: &[f64]) -> Result<f64> {
        self.check_visible(v)?;
        self.check_hidden(h)?;
        let mut e = 0.0;
        for (j, &hj) in h.iter().enumerate() {
            if hj != 0.0 {
                e -= hj * (self.hidden_interaction(v, j) + self.hidden_bias[j]);
            }
        }
        e -= v.iter().zip(&self.visible_bias).map(|(x, a)| x * a).sum::<f64>();
        Ok(e)
    }

    /// `F(v) = -Σ v_i a_i - Σ_j softplus(b_j + Σ_i W_ij v_i)`.
    pub fn free_energy(&self, v: &[f64]) -> Result<f64> {
        self.check_visible(v)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("visible vector".into()));
        }
        Ok(self.free_energy_unchecked(v))
    }

    pub(crate) fn free_energy_unchecked(&self, v: &[f64]) -> f64 {
        let mut f = -v.iter().zip(&self.visible_bias).map(|(x, a)| x * a).sum::<f64>();
        for j in 0..self.n_hidden() {
            f -= softplus(self.hidden_interaction(v, j) + self.hidden_bias[j]);
        }
        f
    }

    /// `p(h_j = 1 | v)` for every hidden unit.
    pub fn prob_h_given_v(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_visible(v)?;
        let mut out = vec![0.0; self.n_hidden()];
        self.hidden_probs_into(v, &mut out);
        Ok(out)
    }

    pub(crate) fn hidden_probs_into(&self, v: &[f64], out: &mut [f64]) {
        self.hidden_input_into(v, out);
        out.iter_mut().for_each(|x| *x = sigmoid(*x));
    }

    /// `p(v_i = 1 | h)` for every visible unit.
    pub fn prob_v_given_h(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.check_hidden(h)?;
        let mut out = vec![0.0; self.n_visible()];
        self.visible_probs_into(h, &mut out);
        Ok(out)
    }

    pub(crate) fn visible_probs_into(&self, h: &[f64], out: &mut [f64]) {
        self.visible_input_into(h, out);
        out.iter_mut().for_each(|x| *x = sigmoid(*x));
    }

    /// Applies `self += scale * grad` on every parameter group.
    pub fn add_scaled(&mut self, grad: &GradientSet, scale: f64) -> Result<()> {
        grad.check_shape(self)?;
        axpy(&mut self.weights, scale, &grad.dw);
        axpy(&mut self.visible_bias, scale, &grad.da);
        axpy(&mut self.hidden_bias, scale, &grad.db);
        Ok(())
    }
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
