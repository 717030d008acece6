//! Exact enumeration over all `2^n_v` visible states, for small models.

use super::{GradientSet, RbmParams};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, sigmoid};

pub const MAX_EXACT_VISIBLE: usize = 20;

/// Binary visible vector whose bit `i` is `bits >> i & 1`.
pub fn visible_state(n_v: usize, bits: usize) -> Vec<f64> {
    (0..n_v).map(|i| ((bits >> i) & 1) as f64).collect()
}

fn guard(params: &RbmParams) -> Result<()> {
    if params.n_visible() > MAX_EXACT_VISIBLE {
        return Err(Error::TooLarge { n_v: params.n_visible(), max: MAX_EXACT_VISIBLE });
    }
    Ok(())
}

fn neg_free_energies(params: &RbmParams) -> Vec<f64> {
    let n_v = params.n_visible();
    let mut v = vec![0.0; n_v];
    (0..1usize << n_v)
        .map(|bits| {
            for (i, x) in v.iter_mut().enumerate() {
                *x = ((bits >> i) & 1) as f64;
            }
            -params.free_energy_unchecked(&v)
        })
        .collect()
}

/// `ln Z = ln Σ_v exp(-F(v))`.
pub fn exact_log_z(params: &RbmParams) -> Result<f64> {
    guard(params)?;
    Ok(log_sum_exp(&neg_free_energies(params)))
}

/// Exact `∂L/∂θ` of the batch-mean log-likelihood: data expectations (with
/// `p(h|v)` for the hidden units) minus model expectations by enumeration.
pub fn exact_ll_gradient(batch: &Batch, params: &RbmParams) -> Result<GradientSet> {
    guard(params)?;
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if batch.n_visible != params.n_visible() {
        return Err(Error::shape("batch width differs from n_v"));
    }
    let s = params.structure();
    let n_v = params.n_visible();
    let n_h = params.n_hidden();
    let mut grad = GradientSet::zeros_like(params);

    let mut ph = vec![0.0; n_h];
    let accumulate = |grad: &mut GradientSet, v: &[f64], ph: &[f64], weight: f64| {
        for j in 0..n_h {
            for slot in s.slots(j) {
                grad.dw[slot] += weight * v[s.support_visible()[slot]] * ph[j];
            }
            grad.db[j] += weight * ph[j];
        }
        for i in 0..n_v {
            grad.da[i] += weight * v[i];
        }
    };

    let inv_b = 1.0 / batch.len() as f64;
    for v in batch.rows() {
        params.hidden_probs_into(v, &mut ph);
        accumulate(&mut grad, v, &ph, inv_b);
    }

    let log_q = neg_free_energies(params);
    let log_z = log_sum_exp(&log_q);
    for (bits, lq) in log_q.iter().enumerate() {
        let q = (lq - log_z).exp();
        let v = visible_state(n_v, bits);
        for (j, p) in ph.iter_mut().enumerate() {
            *p = sigmoid(params.hidden_interaction(&v, j) + params.hidden_bias()[j]);
        }
        accumulate(&mut grad, &v, &ph, -q);
    }
    Ok(grad)
}
