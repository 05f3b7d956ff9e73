//! Synthetic corpora from known skills, for checking segmentation recovery.
//!
//! Each ground-truth skill heads for a target state under a Boltzmann policy
//! over goal-reward action-values. A demonstration chains several skills:
//! it follows one until that skill's target is reached, then switches to a
//! different skill.

use rand::Rng as _;

use crate::demo::Trajectory;
use crate::error::{Error, Result};
use crate::gridworld::{value_iteration, Action, GridWorld, RewardFunction, StochasticPolicy};
use crate::irl::RewardWeights;
use crate::rng;

use super::Skill;

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub demos: Vec<Trajectory>,
    /// Ground-truth skill index at every step.
    pub labels: Vec<Vec<usize>>,
    pub skills: Vec<Skill>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub n_demos: usize,
    /// Skill switches per demonstration (segments = switches + 1).
    pub switches: usize,
    pub tau: f64,
    pub discount: f64,
    /// Per-segment step cap.
    pub max_segment_steps: usize,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n_demos: 40,
            switches: 2,
            tau: 5.0,
            discount: 0.9,
            max_segment_steps: 60,
            seed: 0,
        }
    }
}

/// Skills that seek each of `targets`, with Q from a +10/-1 goal reward.
pub fn target_skills(gw: &GridWorld, targets: &[usize], discount: f64, tau: f64) -> Result<Vec<Skill>> {
    targets
        .iter()
        .enumerate()
        .map(|(id, &t)| {
            let reward = RewardFunction::goal(gw, t);
            let q = value_iteration(gw, &reward, discount, 1e-10)?;
            Ok(Skill::from_q(id, RewardWeights { theta: reward.state_rewards().to_vec() }, q, tau))
        })
        .collect()
}

fn sample_action(policy: &StochasticPolicy, s: usize, rng: &mut rng::Rng) -> Action {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for a in Action::ALL {
        acc += policy.prob(s, a);
        if u < acc {
            return a;
        }
    }
    Action::Right
}

/// Chains target-seeking skills into labelled demonstrations.
pub fn generate(gw: &GridWorld, targets: &[usize], params: &SyntheticParams) -> Result<SyntheticCorpus> {
    if targets.len() < 2 {
        return Err(Error::InvalidParameter("synthetic corpora need at least two skills".into()));
    }
    if params.n_demos == 0 || params.max_segment_steps == 0 {
        return Err(Error::InvalidParameter("n_demos and max_segment_steps must be >= 1".into()));
    }
    let skills = target_skills(gw, targets, params.discount, params.tau)?;
    let policies: Vec<StochasticPolicy> = skills.iter().map(|k| k.policy(params.tau)).collect();
    let mut rng = rng::from_seed(params.seed);
    let mut demos = Vec::with_capacity(params.n_demos);
    let mut labels = Vec::with_capacity(params.n_demos);
    let non_targets: Vec<usize> = (0..gw.n_states()).filter(|s| !targets.contains(s)).collect();
    for id in 0..params.n_demos {
        let mut s = non_targets[rng.random_range(0..non_targets.len())];
        let mut current = rng.random_range(0..targets.len());
        let mut steps = Vec::new();
        let mut z = Vec::new();
        for seg in 0..=params.switches {
            if seg > 0 {
                let others: Vec<usize> = (0..targets.len()).filter(|&k| k != current && targets[k] != s).collect();
                current = others[rng.random_range(0..others.len())];
            }
            let mut n = 0;
            while s != targets[current] && n < params.max_segment_steps {
                let a = sample_action(&policies[current], s, &mut rng);
                steps.push((s, a));
                z.push(current);
                s = gw.step(s, a);
                n += 1;
            }
        }
        let goal = s;
        demos.push(Trajectory::from_steps(gw, id, goal, steps)?);
        labels.push(z);
    }
    Ok(SyntheticCorpus { demos, labels, skills })
}

/// Frame accuracy under the best one-to-one mapping from predicted labels to
/// true labels. Predicted labels left unmatched count as errors.
pub fn aligned_accuracy(truth: &[Vec<usize>], predicted: &[Vec<usize>]) -> f64 {
    let mut true_ids: Vec<usize> = truth.iter().flatten().copied().collect();
    true_ids.sort_unstable();
    true_ids.dedup();
    let mut pred_ids: Vec<usize> = predicted.iter().flatten().copied().collect();
    pred_ids.sort_unstable();
    pred_ids.dedup();
    let total: usize = truth.iter().map(Vec::len).sum();
    if total == 0 {
        return 1.0;
    }
    let ti = |x: usize| true_ids.binary_search(&x).unwrap();
    let pi = |x: usize| pred_ids.binary_search(&x).unwrap();
    let mut overlap = vec![vec![0usize; true_ids.len()]; pred_ids.len()];
    for (zt, zp) in truth.iter().zip(predicted) {
        for (&a, &b) in zt.iter().zip(zp) {
            overlap[pi(b)][ti(a)] += 1;
        }
    }
    // assignment by dynamic programming over subsets of true labels
    let masks = 1usize << true_ids.len();
    let mut best = vec![usize::MIN; masks];
    let mut reachable = vec![false; masks];
    reachable[0] = true;
    for row in &overlap {
        let mut next = best.clone();
        let mut next_reach = reachable.clone();
        for m in 0..masks {
            if !reachable[m] {
                continue;
            }
            for (j, &o) in row.iter().enumerate() {
                if m & (1 << j) == 0 {
                    let nm = m | (1 << j);
                    if !next_reach[nm] || best[m] + o > next[nm] {
                        next[nm] = best[m] + o;
                        next_reach[nm] = true;
                    }
                }
            }
        }
        best = next;
        reachable = next_reach;
    }
    let matched = (0..masks).filter(|&m| reachable[m]).map(|m| best[m]).max().unwrap_or(0);
    matched as f64 / total as f64
}

/// Positions where the label changes, per demonstration.
pub fn change_points(labels: &[Vec<usize>]) -> Vec<Vec<usize>> {
    labels
        .iter()
        .map(|z| (1..z.len()).filter(|&t| z[t] != z[t - 1]).collect())
        .collect()
}

/// Fraction of true change points matched by a predicted one within `slack`
/// steps.
pub fn boundary_recall(truth: &[Vec<usize>], predicted: &[Vec<usize>], slack: usize) -> f64 {
    let tc = change_points(truth);
    let pc = change_points(predicted);
    let mut hit = 0;
    let mut total = 0;
    for (t, p) in tc.iter().zip(&pc) {
        for &b in t {
            total += 1;
            if p.iter().any(|&q| q.abs_diff(b) <= slack) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}
