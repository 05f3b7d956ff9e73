//! Maximum-entropy inverse reinforcement learning on a deterministic
//! gridworld.
//!
//! A demonstration of length `T` from start `s0` is scored against every
//! action sequence of length `T` from `s0`, with
//! `P(path) ∝ exp(sum of theta · f(s'))` over the states `s'` entered along
//! the path. The log-likelihood is concave in `theta` and its gradient is
//! the difference between empirical and expected feature counts.
//!
//! Partition functions are computed in log space by a backward recursion
//! over the number of remaining steps, and expected visitations by a single
//! forward pass that handles every path length at once.

use serde::{Deserialize, Serialize};

use crate::demo::Trajectory;
use crate::error::{Error, Result};
use crate::gridworld::GridWorld;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    k: usize,
    rows: Vec<Vec<f64>>,
}

impl FeatureMap {
    /// One indicator feature per state.
    pub fn one_hot(n_states: usize) -> Self {
        let rows = (0..n_states)
            .map(|s| {
                let mut f = vec![0.0; n_states];
                f[s] = 1.0;
                f
            })
            .collect();
        Self { k: n_states, rows }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidParameter("feature rows must share one dimension".into()));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("features must be finite".into()));
        }
        Ok(Self { k, rows })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn feature(&self, s: usize) -> &[f64] {
        &self.rows[s]
    }

    /// `theta · f_s` for every state.
    pub fn state_rewards(&self, theta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|f| f.iter().zip(theta).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub theta: Vec<f64>,
}

impl RewardWeights {
    pub fn zeros(k: usize) -> Self {
        Self { theta: vec![0.0; k] }
    }

    pub fn state_rewards(&self, fmap: &FeatureMap) -> Vec<f64> {
        fmap.state_rewards(&self.theta)
    }
}

/// The part of a demonstration IRL needs: where it starts and which states
/// it enters, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePath {
    pub start: usize,
    pub visited: Vec<usize>,
}

impl StatePath {
    pub fn new(start: usize, visited: Vec<usize>) -> Self {
        Self { start, visited }
    }

    pub fn len(&self) -> usize {
        self.visited.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visited.is_empty()
    }
}

impl From<&Trajectory> for StatePath {
    fn from(t: &Trajectory) -> Self {
        let visited = (0..t.len()).map(|i| t.next_state(i)).collect();
        Self::new(t.start(), visited)
    }
}

fn check_paths(paths: &[StatePath]) -> Result<()> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("IRL needs at least one demonstration"));
    }
    if paths.iter().any(StatePath::is_empty) {
        return Err(Error::EmptyInput("IRL demonstrations must have at least one step"));
    }
    Ok(())
}

/// Mean over paths of the summed features of the states each path enters.
pub fn empirical_feature_expectations(paths: &[StatePath], fmap: &FeatureMap) -> Result<Vec<f64>> {
    check_paths(paths)?;
    let mut acc = vec![0.0; fmap.k()];
    for p in paths {
        for &s in &p.visited {
            for (a, f) in acc.iter_mut().zip(fmap.feature(s)) {
                *a += f;
            }
        }
    }
    let m = paths.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    Ok(acc)
}

#[inline]
fn log_sum_exp(xs: &[f64; 4]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log_z[r][s]`: log of the summed path weight over all `r`-step action
/// sequences starting at `s`.
pub fn log_partition(gw: &GridWorld, state_rewards: &[f64], horizon: usize) -> Vec<Vec<f64>> {
    let n = gw.n_states();
    let mut log_z = Vec::with_capacity(horizon + 1);
    log_z.push(vec![0.0; n]);
    for r in 1..=horizon {
        let prev = &log_z[r - 1];
        let cur = (0..n)
            .map(|s| {
                let terms = gw.successors(s).map(|t| state_rewards[t] + prev[t]);
                log_sum_exp(&terms)
            })
            .collect();
        log_z.push(cur);
    }
    log_z
}

/// Pushes start mass forward under the maximum-entropy policy.
/// `mass_by_remaining[r][s]` is the weight of paths at `s` with `r` steps
/// left. Returns expected entry counts per state.
fn forward_visitations(
    gw: &GridWorld,
    state_rewards: &[f64],
    log_z: &[Vec<f64>],
    mut mass_by_remaining: Vec<Vec<f64>>,
) -> Vec<f64> {
    let n = gw.n_states();
    let horizon = mass_by_remaining.len() - 1;
    let mut visits = vec![0.0; n];
    for r in (1..=horizon).rev() {
        let (lower, upper) = mass_by_remaining.split_at_mut(r);
        let cur = &upper[0];
        let next = &mut lower[r - 1];
        for s in 0..n {
            let m = cur[s];
            if m == 0.0 {
                continue;
            }
            for &t in gw.successors(s) {
                let p = (state_rewards[t] + log_z[r - 1][t] - log_z[r][s]).exp();
                let w = m * p;
                next[t] += w;
                visits[t] += w;
            }
        }
    }
    visits
}

/// Expected number of entries into each state over `horizon` steps, starting
/// from `start_dist` (a distribution over states).
pub fn expected_state_visitations(
    gw: &GridWorld,
    theta: &RewardWeights,
    fmap: &FeatureMap,
    start_dist: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    if start_dist.len() != gw.n_states() {
        return Err(Error::InvalidParameter("start distribution has the wrong length".into()));
    }
    let rewards = theta.state_rewards(fmap);
    let log_z = log_partition(gw, &rewards, horizon);
    let mut mass = vec![vec![0.0; gw.n_states()]; horizon + 1];
    mass[horizon].copy_from_slice(start_dist);
    Ok(forward_visitations(gw, &rewards, &log_z, mass))
}

/// Summed expected entry counts over all paths.
fn model_visits(gw: &GridWorld, rewards: &[f64], paths: &[StatePath]) -> Vec<f64> {
    let horizon = paths.iter().map(StatePath::len).max().unwrap_or(0);
    let log_z = log_partition(gw, rewards, horizon);
    let mut mass = vec![vec![0.0; gw.n_states()]; horizon + 1];
    for p in paths {
        mass[p.len()][p.start] += 1.0;
    }
    forward_visitations(gw, rewards, &log_z, mass)
}

fn features_of_visits(fmap: &FeatureMap, visits: &[f64], scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; fmap.k()];
    for (s, &v) in visits.iter().enumerate() {
        if v != 0.0 {
            for (o, f) in out.iter_mut().zip(fmap.feature(s)) {
                *o += v * f * scale;
            }
        }
    }
    out
}

/// Expected feature counts per path under the model, each path contributing
/// with its own start state and length.
pub fn expected_feature_expectations(
    gw: &GridWorld,
    theta: &RewardWeights,
    fmap: &FeatureMap,
    paths: &[StatePath],
) -> Result<Vec<f64>> {
    check_paths(paths)?;
    let rewards = theta.state_rewards(fmap);
    let visits = model_visits(gw, &rewards, paths);
    Ok(features_of_visits(fmap, &visits, 1.0 / paths.len() as f64))
}

/// Mean per-path log-likelihood of the demonstrations.
pub fn log_likelihood(gw: &GridWorld, theta: &RewardWeights, fmap: &FeatureMap, paths: &[StatePath]) -> Result<f64> {
    check_paths(paths)?;
    let rewards = theta.state_rewards(fmap);
    let horizon = paths.iter().map(StatePath::len).max().unwrap_or(0);
    let log_z = log_partition(gw, &rewards, horizon);
    let total: f64 = paths
        .iter()
        .map(|p| p.visited.iter().map(|&s| rewards[s]).sum::<f64>() - log_z[p.len()][p.start])
        .sum();
    Ok(total / paths.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlParams {
    pub lr: f64,
    pub iters: usize,
    pub tol: f64,
}

impl Default for IrlParams {
    fn default() -> Self {
        Self {
            lr: 0.1,
            iters: 500,
            tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlFit {
    pub weights: RewardWeights,
    pub iterations: usize,
    /// `L∞` norm of `empirical - expected` at the returned weights.
    pub gradient_inf_norm: f64,
}

impl IrlFit {
    pub fn converged(&self, tol: f64) -> bool {
        self.gradient_inf_norm <= tol
    }
}

const DIVERGENCE_WINDOW: usize = 10;

/// Gradient ascent from `theta = 0` on the mean log-likelihood.
///
/// The step is `lr * gradient / mean_path_length`; the normalization keeps
/// the step stable when paths linger in one state. Stops once the `L∞`
/// gradient is at most `tol` or after `iters` steps. Ten consecutive
/// increases of the gradient norm are reported as divergence.
pub fn maxent_irl(gw: &GridWorld, paths: &[StatePath], fmap: &FeatureMap, params: &IrlParams) -> Result<IrlFit> {
    check_paths(paths)?;
    if fmap.n_states() != gw.n_states() {
        return Err(Error::InvalidParameter("feature map does not match the gridworld".into()));
    }
    let empirical = empirical_feature_expectations(paths, fmap)?;
    let mean_len = paths.iter().map(StatePath::len).sum::<usize>() as f64 / paths.len() as f64;
    let step = params.lr / mean_len;
    let scale = 1.0 / paths.len() as f64;

    let mut theta = RewardWeights::zeros(fmap.k());
    let mut rising = 0;
    let mut last_norm = f64::INFINITY;
    let mut iteration = 0;
    loop {
        let rewards = theta.state_rewards(fmap);
        let visits = model_visits(gw, &rewards, paths);
        let expected = features_of_visits(fmap, &visits, scale);
        let grad: Vec<f64> = empirical.iter().zip(&expected).map(|(e, x)| e - x).collect();
        let inf = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if inf <= params.tol || iteration >= params.iters {
            return Ok(IrlFit {
                weights: theta,
                iterations: iteration,
                gradient_inf_norm: inf,
            });
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::IrlDivergence {
                iteration,
                gradient_norm: norm,
            });
        }
        rising = if norm > last_norm { rising + 1 } else { 0 };
        if rising >= DIVERGENCE_WINDOW {
            return Err(Error::IrlDivergence {
                iteration,
                gradient_norm: norm,
            });
        }
        last_norm = norm;
        for (t, g) in theta.theta.iter_mut().zip(&grad) {
            *t += step * g;
        }
        iteration += 1;
    }
}
