//! Classification RBM.
//!
//! One-hot class units join the hidden layer through a dense `C × n_h`
//! matrix `U` with class biases `c`. The class posterior is exact:
//! `log p(y_k | v) = c_k + Σ_j softplus(o_kj(v)) - log Σ_m (...)` with
//! `o_kj(v) = b_j + U_kj + Σ_i W_ij v_i`.

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softmax_in_place, softplus};
use crate::rbm::{axpy, GradientSet, RbmParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRbmParams {
    pub base: RbmParams,
    /// Row-major `C × n_h`.
    class_weights: Vec<f64>,
    class_bias: Vec<f64>,
}

/// Gradient over `{W, b, U, c}`. `base.da` is always zero: the class
/// posterior does not depend on the visible biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGradientSet {
    pub base: GradientSet,
    pub du: Vec<f64>,
    pub dc: Vec<f64>,
}

impl ClassGradientSet {
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.base.iter().chain(self.du.iter().copied()).chain(self.dc.iter().copied())
    }

    pub fn scale(&mut self, s: f64) {
        self.base.scale(s);
        self.du.iter_mut().chain(&mut self.dc).for_each(|x| *x *= s);
    }

    pub fn max_abs_diff(&self, other: &ClassGradientSet) -> f64 {
        self.iter().zip(other.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl ClassRbmParams {
    pub fn zeros(base: RbmParams, n_classes: usize) -> Result<Self> {
        let n_h = base.n_hidden();
        ClassRbmParams::from_parts(base, vec![0.0; n_classes * n_h], vec![0.0; n_classes])
    }

    pub fn from_parts(base: RbmParams, class_weights: Vec<f64>, class_bias: Vec<f64>) -> Result<Self> {
        let c = class_bias.len();
        if c < 2 {
            return Err(Error::invalid(format!("a classifier needs at least 2 classes, got {c}")));
        }
        if class_weights.len() != c * base.n_hidden() {
            return Err(Error::shape(format!(
                "U has {} entries, expected {c} × {}",
                class_weights.len(),
                base.n_hidden()
            )));
        }
        Ok(ClassRbmParams { base, class_weights, class_bias })
    }

    pub fn n_classes(&self) -> usize {
        self.class_bias.len()
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    pub fn class_weights_mut(&mut self) -> &mut [f64] {
        &mut self.class_weights
    }

    pub fn class_bias(&self) -> &[f64] {
        &self.class_bias
    }

    pub fn class_bias_mut(&mut self) -> &mut [f64] {
        &mut self.class_bias
    }

    /// Mutable `(W, a, b, U, c)`.
    pub(crate) fn split_all_mut(&mut self) -> [&mut [f64]; 5] {
        let (w, a, b) = self.base.split_mut();
        [w, a, b, &mut self.class_weights, &mut self.class_bias]
    }

    #[inline]
    fn u_row(&self, k: usize) -> &[f64] {
        let n_h = self.base.n_hidden();
        &self.class_weights[k * n_h..(k + 1) * n_h]
    }

    pub fn is_finite(&self) -> bool {
        self.base.is_finite() && self.class_weights.iter().chain(&self.class_bias).all(|x| x.is_finite())
    }

    fn check_visible(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.base.n_visible() {
            return Err(Error::shape(format!("visible vector has length {}, expected {}", v.len(), self.base.n_visible())));
        }
        Ok(())
    }

    /// Base energy minus `Σ_k y_k c_k + Σ_kj y_k U_kj h_j`.
    pub fn class_energy(&self, v: &[f64], y: &[f64], h: &[f64]) -> Result<f64> {
        if y.len() != self.n_classes() {
            return Err(Error::shape(format!("class vector has length {}, expected {}", y.len(), self.n_classes())));
        }
        let ones = y.iter().filter(|&&x| x == 1.0).count();
        if ones != 1 || y.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::invalid("class vector is not one-hot"));
        }
        let k = y.iter().position(|&x| x == 1.0).unwrap_or(0);
        let e = self.base.energy(v, h)?;
        let coupling: f64 = self.u_row(k).iter().zip(h).map(|(u, hj)| u * hj).sum();
        Ok(e - self.class_bias[k] - coupling)
    }

    /// Hidden interactions `Σ_i W_ij v_i + b_j`, shared by all classes.
    fn hidden_inputs(&self, v: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.base.n_hidden()];
        self.base.hidden_input_into(v, &mut s);
        s
    }

    fn log_scores(&self, inputs: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let u = self.u_row(k);
            *o = self.class_bias[k] + inputs.iter().zip(u).map(|(s, u)| softplus(s + u)).sum::<f64>();
        }
    }

    /// Unnormalized log-posterior per class.
    pub fn log_class_scores(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_visible(v)?;
        let mut out = vec![0.0; self.n_classes()];
        self.log_scores(&self.hidden_inputs(v), &mut out);
        Ok(out)
    }

    /// `p(y | v)` for every class.
    pub fn predict_proba(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.log_class_scores(v)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// Most probable class; ties go to the lowest index.
    pub fn classify(&self, v: &[f64]) -> Result<usize> {
        let scores = self.log_class_scores(v)?;
        Ok(argmax(&scores))
    }

    /// Mean gradient of `-log p(y | v)` over a labelled batch.
    pub fn disc_gradient(&self, batch: &Batch) -> Result<ClassGradientSet> {
        let labels = self.check_batch(batch)?;
        let s = self.base.structure();
        let (n_h, n_c) = (self.base.n_hidden(), self.n_classes());
        let mut grad = self.zero_gradient();
        let mut probs = vec![0.0; n_c];
        let mut g_hidden = vec![0.0; n_h];

        for (v, &y) in batch.rows().zip(labels) {
            let inputs = self.hidden_inputs(v);
            self.log_scores(&inputs, &mut probs);
            softmax_in_place(&mut probs);
            g_hidden.iter_mut().for_each(|x| *x = 0.0);
            for k in 0..n_c {
                let coef = probs[k] - if k == y { 1.0 } else { 0.0 };
                grad.dc[k] += coef;
                let u = self.u_row(k);
                let du = &mut grad.du[k * n_h..(k + 1) * n_h];
                for j in 0..n_h {
                    let t = sigmoid(inputs[j] + u[j]) * coef;
                    du[j] += t;
                    g_hidden[j] += t;
                }
            }
            for j in 0..n_h {
                let gj = g_hidden[j];
                grad.base.db[j] += gj;
                for slot in s.slots(j) {
                    grad.base.dw[slot] += v[s.support_visible()[slot]] * gj;
                }
            }
        }
        grad.scale(1.0 / batch.len() as f64);
        Ok(grad)
    }

    /// Dense-matrix version of [`Self::disc_gradient`] used for timing
    /// comparisons; the weight gradient is masked back onto the support.
    pub fn disc_gradient_dense(&self, batch: &Batch) -> Result<ClassGradientSet> {
        let labels = self.check_batch(batch)?;
        let (n_v, n_h, n_c) = (self.base.n_visible(), self.base.n_hidden(), self.n_classes());
        let w = self.base.dense_weights();
        let mask = self.base.structure().mask_matrix();
        let b = self.base.hidden_bias();
        let mut dw = vec![0.0; n_v * n_h];
        let mut grad = self.zero_gradient();
        let mut probs = vec![0.0; n_c];
        let mut inputs = vec![0.0; n_h];
        let mut g_hidden = vec![0.0; n_h];

        for (v, &y) in batch.rows().zip(labels) {
            inputs.iter_mut().for_each(|x| *x = 0.0);
            for (i, &vi) in v.iter().enumerate() {
                for (o, &wij) in inputs.iter_mut().zip(&w[i * n_h..(i + 1) * n_h]) {
                    *o += wij * vi;
                }
            }
            for (o, &bj) in inputs.iter_mut().zip(b) {
                *o += bj;
            }
            self.log_scores(&inputs, &mut probs);
            softmax_in_place(&mut probs);
            g_hidden.iter_mut().for_each(|x| *x = 0.0);
            for k in 0..n_c {
                let coef = probs[k] - if k == y { 1.0 } else { 0.0 };
                grad.dc[k] += coef;
                let u = self.u_row(k);
                for j in 0..n_h {
                    let t = sigmoid(inputs[j] + u[j]) * coef;
                    grad.du[k * n_h + j] += t;
                    g_hidden[j] += t;
                }
            }
            axpy(&mut grad.base.db, 1.0, &g_hidden);
            for (i, &vi) in v.iter().enumerate() {
                axpy(&mut dw[i * n_h..(i + 1) * n_h], vi, &g_hidden);
            }
        }
        for (g, m) in dw.iter_mut().zip(&mask) {
            *g *= m;
        }
        grad.base.dw = self.base.structure().support().map(|(i, j)| dw[i * n_h + j]).collect();
        grad.scale(1.0 / batch.len() as f64);
        Ok(grad)
    }

    fn check_batch<'b>(&self, batch: &'b Batch) -> Result<&'b [usize]> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if batch.n_visible != self.base.n_visible() {
            return Err(Error::shape("batch width differs from n_v"));
        }
        let labels = batch
            .labels
            .as_deref()
            .ok_or_else(|| Error::invalid("discriminative gradient needs labels"))?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_classes()) {
            return Err(Error::invalid(format!("label {bad} out of range for {} classes", self.n_classes())));
        }
        Ok(labels)
    }

    pub fn zero_gradient(&self) -> ClassGradientSet {
        ClassGradientSet {
            base: GradientSet::zeros_like(&self.base),
            du: vec![0.0; self.class_weights.len()],
            dc: vec![0.0; self.n_classes()],
        }
    }

    /// `self += scale * grad`.
    pub fn add_scaled(&mut self, grad: &ClassGradientSet, scale: f64) -> Result<()> {
        if grad.du.len() != self.class_weights.len() || grad.dc.len() != self.class_bias.len() {
            return Err(Error::shape("class gradient does not match the parameter shapes"));
        }
        self.base.add_scaled(&grad.base, scale)?;
        axpy(&mut self.class_weights, scale, &grad.du);
        axpy(&mut self.class_bias, scale, &grad.dc);
        Ok(())
    }
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::log_sum_exp;
    use crate::rbm::test_support::*;
    use crate::rbm::visible_state;
    use crate::structure::{ConnectivityStructure, Grid};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_classifier(base: RbmParams, n_c: usize, scale: f64, seed: u64) -> ClassRbmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC1A55);
        let n_h = base.n_hidden();
        let u = (0..n_c * n_h).map(|_| rng.gen_range(-scale..scale)).collect();
        let c = (0..n_c).map(|_| rng.gen_range(-scale..scale)).collect();
        ClassRbmParams::from_parts(base, u, c).unwrap()
    }

    fn one_hot(k: usize, n: usize) -> Vec<f64> {
        (0..n).map(|m| (m == k) as u8 as f64).collect()
    }

    /// `p(y | v)` by enumerating every hidden state and class.
    fn brute_posterior(p: &ClassRbmParams, v: &[f64]) -> Vec<f64> {
        let (n_h, n_c) = (p.base.n_hidden(), p.n_classes());
        let per_class: Vec<f64> = (0..n_c)
            .map(|k| {
                let terms: Vec<f64> = (0..1usize << n_h)
                    .map(|hb| -p.class_energy(v, &one_hot(k, n_c), &hidden_state(n_h, hb)).unwrap())
                    .collect();
                log_sum_exp(&terms)
            })
            .collect();
        let z = log_sum_exp(&per_class);
        per_class.iter().map(|l| (l - z).exp()).collect()
    }

    #[test]
    fn class_energy_reductions() {
        let base = random_dense(3, 2, 1.0, 1);
        let zero_class = ClassRbmParams::zeros(base.clone(), 3).unwrap();
        let v = [1.0, 0.0, 1.0];
        let h = [1.0, 0.0];
        assert_eq!(zero_class.class_energy(&v, &one_hot(2, 3), &h).unwrap(), base.energy(&v, &h).unwrap());
        let z = ClassRbmParams::zeros(RbmParams::zeros(base.structure_arc().clone()), 3).unwrap();
        assert_eq!(z.class_energy(&v, &one_hot(0, 3), &h).unwrap(), 0.0);
        assert!(z.class_energy(&v, &[1.0, 1.0, 0.0], &h).is_err());
        assert!(z.class_energy(&v, &[0.0, 0.0, 0.0], &h).is_err());
        assert!(z.class_energy(&v, &[0.5, 0.5, 0.0], &h).is_err());
    }

    #[test]
    fn class_energy_hand_case() {
        let base = random_dense(2, 1, 1.0, 5);
        let p = ClassRbmParams::from_parts(base.clone(), vec![3.0, 0.0], vec![1.0, 0.0]).unwrap();
        let v = [1.0, 1.0];
        let e = base.energy(&v, &[1.0]).unwrap();
        assert_eq!(p.class_energy(&v, &[1.0, 0.0], &[1.0]).unwrap(), e - 1.0 - 3.0);
    }

    #[test]
    fn needs_two_classes() {
        assert!(ClassRbmParams::zeros(random_dense(2, 1, 1.0, 5), 1).is_err());
    }

    #[test]
    fn zero_model_is_uniform_and_picks_class_zero() {
        let z = ClassRbmParams::zeros(RbmParams::zeros(Arc::new(ConnectivityStructure::dense(4, 3).unwrap())), 10).unwrap();
        let p = z.predict_proba(&[1.0, 0.0, 0.5, 1.0]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.1).abs() < 1e-15));
        assert_eq!(z.classify(&[1.0, 0.0, 0.5, 1.0]).unwrap(), 0);
    }

    #[test]
    fn class_bias_dominates() {
        let mut z = ClassRbmParams::zeros(random_dense(4, 3, 1.0, 2), 3).unwrap();
        z.class_weights_mut().iter_mut().for_each(|x| *x = 0.0);
        z.class_bias_mut().copy_from_slice(&[0.0, 10.0, 0.0]);
        assert_eq!(z.classify(&[1.0, 0.0, 0.5, 1.0]).unwrap(), 1);
    }

    #[test]
    fn posterior_matches_enumeration() {
        for seed in 0..5 {
            let p = random_classifier(random_dense(6, 8, 1.0, seed), 3, 1.0, seed);
            for bits in [0usize, 13, 63, 42] {
                let v = visible_state(6, bits);
                let fast = p.predict_proba(&v).unwrap();
                let brute = brute_posterior(&p, &v);
                for (a, b) in fast.iter().zip(&brute) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn swapping_class_rows_swaps_outputs() {
        let p = random_classifier(random_dense(5, 4, 1.0, 3), 3, 1.5, 3);
        let mut q = p.clone();
        let n_h = 4;
        let (u, c) = (p.class_weights().to_vec(), p.class_bias().to_vec());
        q.class_weights_mut()[..n_h].copy_from_slice(&u[2 * n_h..]);
        q.class_weights_mut()[2 * n_h..].copy_from_slice(&u[..n_h]);
        q.class_bias_mut()[0] = c[2];
        q.class_bias_mut()[2] = c[0];
        let v = [0.3, 1.0, 0.0, 0.7, 1.0];
        let (a, b) = (p.predict_proba(&v).unwrap(), q.predict_proba(&v).unwrap());
        assert!((a[0] - b[2]).abs() < 1e-15 && (a[2] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
    }

    fn mean_nll(p: &ClassRbmParams, batch: &Batch) -> f64 {
        let labels = batch.labels.as_ref().unwrap();
        batch
            .rows()
            .zip(labels)
            .map(|(v, &y)| -p.predict_proba(v).unwrap()[y].ln())
            .sum::<f64>()
            / batch.len() as f64
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn disc_gradient_finite_differences() {
        let h = 1e-4;
        for seed in 0..3 {
            let p = random_classifier(random_structured("M(0,1;0,2)", Grid::new(2, 3), 1.0, seed), 3, 1.0, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = (0..5 * 6).map(|_| rng.gen::<f64>()).collect();
            let batch = Batch::new(6, values, Some((0..5).map(|k| k % 3).collect())).unwrap();
            let g = p.disc_gradient(&batch).unwrap();
            assert!(g.base.da.iter().all(|&x| x == 0.0));

            let check = |name: &str, k: usize, analytic: f64, bump: &dyn Fn(&mut ClassRbmParams, f64)| {
                let (mut plus, mut minus) = (p.clone(), p.clone());
                bump(&mut plus, h);
                bump(&mut minus, -h);
                let num = (mean_nll(&plus, &batch) - mean_nll(&minus, &batch)) / (2.0 * h);
                assert!(rel_err(num, analytic) < 1e-5, "{name}[{k}]: fd {num} analytic {analytic}");
            };
            for k in 0..g.base.dw.len() {
                check("dw", k, g.base.dw[k], &|q, d| q.base.weights_mut()[k] += d);
            }
            for k in 0..g.base.db.len() {
                check("db", k, g.base.db[k], &|q, d| q.base.hidden_bias_mut()[k] += d);
            }
            for k in 0..g.du.len() {
                check("du", k, g.du[k], &|q, d| q.class_weights_mut()[k] += d);
            }
            for k in 0..g.dc.len() {
                check("dc", k, g.dc[k], &|q, d| q.class_bias_mut()[k] += d);
            }
        }
    }

    #[test]
    fn class_bias_gradient_is_posterior_minus_target() {
        let p = random_classifier(random_dense(4, 3, 1.0, 9), 4, 1.0, 9);
        let v = vec![0.1, 0.9, 0.4, 1.0];
        let batch = Batch::new(4, v.clone(), Some(vec![2])).unwrap();
        let g = p.disc_gradient(&batch).unwrap();
        let post = p.predict_proba(&v).unwrap();
        for k in 0..4 {
            let expected = post[k] - if k == 2 { 1.0 } else { 0.0 };
            assert!((g.dc[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn confident_correct_model_has_vanishing_gradient() {
        let mut p = random_classifier(random_dense(4, 3, 0.5, 1), 3, 0.5, 1);
        p.class_bias_mut()[1] = 200.0;
        let batch = Batch::new(4, vec![1.0, 0.0, 1.0, 0.0], Some(vec![1])).unwrap();
        let g = p.disc_gradient(&batch).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-50));
    }

    #[test]
    fn dense_path_agrees() {
        let p = random_classifier(random_structured("M(1,2;2,1)", Grid::square(7), 0.5, 4), 5, 0.5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = Batch::new(49, (0..16 * 49).map(|_| rng.gen::<f64>()).collect(), Some((0..16).map(|k| k % 5).collect())).unwrap();
        let a = p.disc_gradient(&batch).unwrap();
        let b = p.disc_gradient_dense(&batch).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn label_errors() {
        let p = ClassRbmParams::zeros(random_dense(2, 2, 1.0, 0), 2).unwrap();
        let bad = Batch::new(2, vec![0.0, 1.0], Some(vec![2])).unwrap();
        assert!(p.disc_gradient(&bad).is_err());
        let unlabelled = Batch::new(2, vec![0.0, 1.0], None).unwrap();
        assert!(p.disc_gradient(&unlabelled).is_err());
    }

    proptest! {
        #[test]
        fn posterior_is_normalized_and_shift_invariant(seed in any::<u64>(), shift in -50.0f64..50.0, bits in 0usize..64) {
            let p = random_classifier(random_dense(6, 5, 2.0, seed), 4, 2.0, seed);
            let v = visible_state(6, bits);
            let probs = p.predict_proba(&v).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&x| x > 0.0));
            let mut q = p.clone();
            q.class_bias_mut().iter_mut().for_each(|c| *c += shift);
            let shifted = q.predict_proba(&v).unwrap();
            for (a, b) in probs.iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert_eq!(p.classify(&v).unwrap(), q.classify(&v).unwrap());
        }
    }
}
