//! HMM pieces of the sampler: forward filtering, backward sampling, and
//! sticky Dirichlet transition rows.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[inline]
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Draws an index with probability proportional to `exp(log_w)`.
pub(crate) fn sample_log_categorical(log_w: &[f64], rng: &mut Rng) -> usize {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return rng.random_range(0..log_w.len());
    }
    let w: Vec<f64> = log_w.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    // rounding fell off the end: last index with positive weight
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Row-stochastic transition matrix over a trajectory's active skills, in
/// the order of that trajectory's feature list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn uniform(k: usize) -> Self {
        Self {
            rows: vec![vec![1.0 / k as f64; k]; k],
        }
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn log_rows(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect()
    }
}

/// Transition counts between consecutive modes, indexed by position in
/// `active`. Modes outside `active` are skipped.
pub fn transition_counts(z: &[usize], active: &[usize]) -> Vec<Vec<f64>> {
    let k = active.len();
    let mut counts = vec![vec![0.0; k]; k];
    for w in z.windows(2) {
        let from = active.iter().position(|&a| a == w[0]);
        let to = active.iter().position(|&a| a == w[1]);
        if let (Some(f), Some(t)) = (from, to) {
            counts[f][t] += 1.0;
        }
    }
    counts
}

/// Rows of `Dir(counts + dir_gamma + kappa·self)`: the posterior mean.
pub fn posterior_mean_transitions(z: &[usize], active: &[usize], dir_gamma: f64, kappa: f64) -> TransitionMatrix {
    let counts = transition_counts(z, active);
    let rows = counts
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let params: Vec<f64> = row
                .iter()
                .enumerate()
                .map(|(l, c)| c + dir_gamma + if l == j { kappa } else { 0.0 })
                .collect();
            let total: f64 = params.iter().sum();
            params.iter().map(|p| p / total).collect()
        })
        .collect();
    TransitionMatrix { rows }
}

/// Draws each row from `Dir(counts + dir_gamma + kappa·self)` over the
/// active skills.
pub fn sample_transitions(z: &[usize], active: &[usize], dir_gamma: f64, kappa: f64, rng: &mut Rng) -> TransitionMatrix {
    let counts = transition_counts(z, active);
    let rows = counts
        .iter()
        .enumerate()
        .map(|(j, row)| {
            let mut draws: Vec<f64> = row
                .iter()
                .enumerate()
                .map(|(l, c)| {
                    let shape = c + dir_gamma + if l == j { kappa } else { 0.0 };
                    Gamma::new(shape, 1.0).expect("shape is positive").sample(rng)
                })
                .collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 && total.is_finite() {
                draws.iter_mut().for_each(|d| *d /= total);
            } else {
                // all draws underflowed; fall back to the mean
                let params: Vec<f64> = row
                    .iter()
                    .enumerate()
                    .map(|(l, c)| c + dir_gamma + if l == j { kappa } else { 0.0 })
                    .collect();
                let t: f64 = params.iter().sum();
                draws = params.iter().map(|p| p / t).collect();
            }
            draws
        })
        .collect();
    TransitionMatrix { rows }
}

/// Forward filter. `log_em[t][k]` is the emission log-likelihood of step `t`
/// under active skill `k`; the first mode is uniform over the active skills.
/// Returns the filtered messages and the log marginal likelihood.
pub fn forward(log_em: &[Vec<f64>], log_trans: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let k = log_trans.len();
    let init = -(k as f64).ln();
    let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(log_em.len());
    let mut scratch = vec![0.0; k];
    for (t, em) in log_em.iter().enumerate() {
        let row: Vec<f64> = if t == 0 {
            em.iter().map(|e| init + e).collect()
        } else {
            let prev = &alpha[t - 1];
            (0..k)
                .map(|l| {
                    for (j, s) in scratch.iter_mut().enumerate() {
                        *s = prev[j] + log_trans[j][l];
                    }
                    em[l] + log_sum_exp(&scratch)
                })
                .collect()
        };
        alpha.push(row);
    }
    let marginal = alpha.last().map_or(0.0, |a| log_sum_exp(a));
    (alpha, marginal)
}

pub fn log_marginal(log_em: &[Vec<f64>], log_trans: &[Vec<f64>]) -> f64 {
    forward(log_em, log_trans).1
}

/// Forward-filter backward-sample: an exact draw of the mode sequence
/// (as indices into the active list) from its conditional posterior.
pub fn ffbs(log_em: &[Vec<f64>], log_trans: &[Vec<f64>], rng: &mut Rng) -> Vec<usize> {
    let (alpha, _) = forward(log_em, log_trans);
    let t_len = alpha.len();
    let mut z = vec![0; t_len];
    if t_len == 0 {
        return z;
    }
    z[t_len - 1] = sample_log_categorical(&alpha[t_len - 1], rng);
    let k = log_trans.len();
    let mut w = vec![0.0; k];
    for t in (0..t_len - 1).rev() {
        let next = z[t + 1];
        for j in 0..k {
            w[j] = alpha[t][j] + log_trans[j][next];
        }
        z[t] = sample_log_categorical(&w, rng);
    }
    z
}
