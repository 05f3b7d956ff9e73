//! Reward-based skill segmentation.
//!
//! Each demonstration switches between a finite set of skills. Which skills a
//! demonstration may use is a binary feature row drawn from a beta process;
//! within a demonstration, skills follow a sticky Markov chain; and a skill
//! emits actions from a Boltzmann policy over action-values obtained by value
//! iteration on a reward learned with maximum-entropy IRL.
//!
//! The sampler alternates blocked Gibbs updates of the mode sequences and
//! transition rows, Metropolis-Hastings flips of shared feature entries,
//! birth/death moves on demonstration-unique skills, and periodic reward
//! refits on the segments assigned to each skill. The state with the highest
//! joint log-likelihood is returned.

pub mod hmm;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demo::Trajectory;
use crate::error::{Error, Result};
use crate::gridworld::{value_iteration, Action, GridWorld, QTable, RewardFunction, StochasticPolicy};
use crate::irl::{maxent_irl, FeatureMap, IrlParams, RewardWeights, StatePath};
use crate::rng::{self, Rng};

pub use hmm::{ffbs, posterior_mean_transitions, sample_transitions, TransitionMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    /// Beta-process mass.
    pub bp_mass: f64,
    /// Dirichlet concentration on every transition.
    pub dir_gamma: f64,
    /// Extra Dirichlet mass on self-transitions.
    pub sticky_kappa: f64,
    /// Boltzmann inverse temperature of skill policies.
    pub tau: f64,
    /// Discount for the value iteration behind each skill's Q.
    pub q_discount: f64,
    pub vi_tol: f64,
    pub sweeps: usize,
    /// Wall-clock cap; results then depend on machine speed.
    pub time_budget_secs: Option<f64>,
    pub refit_every: usize,
    pub moves_per_sweep: usize,
    /// Merge proposals per sweep.
    pub merges_per_sweep: usize,
    pub window_min: usize,
    pub window_max: usize,
    pub irl: IrlParams,
    pub seed: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            bp_mass: 0.3,
            dir_gamma: 1.0,
            sticky_kappa: 25.0,
            tau: 2.0,
            q_discount: 0.9,
            vi_tol: 1e-6,
            sweeps: 500,
            time_budget_secs: None,
            refit_every: 5,
            moves_per_sweep: 10,
            merges_per_sweep: 1,
            window_min: 5,
            window_max: 20,
            irl: IrlParams {
                lr: 1.0,
                ..IrlParams::default()
            },
            seed: 0,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.bp_mass > 0.0) {
            return bad(format!("bp_mass must be > 0, got {}", self.bp_mass));
        }
        if !(self.dir_gamma > 0.0) {
            return bad(format!("dir_gamma must be > 0, got {}", self.dir_gamma));
        }
        if !(self.sticky_kappa >= 0.0) {
            return bad(format!("sticky_kappa must be >= 0, got {}", self.sticky_kappa));
        }
        if !(self.tau >= 0.0) {
            return bad(format!("tau must be >= 0, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.q_discount) {
            return bad(format!("q_discount must be in [0, 1), got {}", self.q_discount));
        }
        if self.refit_every == 0 {
            return bad("refit_every must be >= 1".into());
        }
        if self.window_min == 0 || self.window_min > self.window_max {
            return bad(format!("bad birth window [{}, {}]", self.window_min, self.window_max));
        }
        Ok(())
    }
}

/// A skill: reward weights, the action-values they induce, and the Boltzmann
/// log-policy used as the emission model.
#[derive(Debug, Clone, PartialEq)]
pub struct Skill {
    pub id: usize,
    pub weights: RewardWeights,
    pub q: QTable,
    log_policy: Vec<[f64; 4]>,
}

impl Skill {
    pub fn from_weights(gw: &GridWorld, id: usize, weights: RewardWeights, fmap: &FeatureMap, config: &SegmenterConfig) -> Result<Self> {
        let reward = RewardFunction::from_state_rewards(weights.state_rewards(fmap));
        let q = value_iteration(gw, &reward, config.q_discount, config.vi_tol)?;
        Ok(Self::from_q(id, weights, q, config.tau))
    }

    pub fn from_q(id: usize, weights: RewardWeights, q: QTable, tau: f64) -> Self {
        let log_policy = q.boltzmann_log_policy(tau);
        Self {
            id,
            weights,
            q,
            log_policy,
        }
    }

    #[inline]
    pub fn log_prob(&self, s: usize, a: Action) -> f64 {
        self.log_policy[s][a.index()]
    }

    pub fn policy(&self, tau: f64) -> StochasticPolicy {
        self.q.boltzmann_policy(tau)
    }
}

/// Sum over steps of the Boltzmann log-probability of the action taken.
pub fn emission_log_likelihood(traj: &Trajectory, skill: &Skill, tau: f64) -> f64 {
    let log_policy = skill.q.boltzmann_log_policy(tau);
    traj.steps.iter().map(|&(s, a)| log_policy[s][a.index()]).sum()
}

fn emissions(traj: &Trajectory, skills: &[&Skill]) -> Vec<Vec<f64>> {
    traj.steps
        .iter()
        .map(|&(s, a)| skills.iter().map(|k| k.log_prob(s, a)).collect())
        .collect()
}

/// Draws a mode sequence (skill ids) for `traj` from its conditional
/// posterior given the active skills and transition matrix.
pub fn sample_mode_sequence(traj: &Trajectory, active: &[&Skill], trans: &TransitionMatrix, rng: &mut Rng) -> Vec<usize> {
    let idx = ffbs(&emissions(traj, active), &trans.log_rows(), rng);
    idx.into_iter().map(|k| active[k].id).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationState {
    /// Sorted by id.
    pub skills: Vec<Skill>,
    /// Per demonstration: sorted ids of the skills it may use.
    pub features: Vec<Vec<usize>>,
    /// Per demonstration: skill id at every step.
    pub modes: Vec<Vec<usize>>,
    /// Per demonstration, aligned with `features`.
    pub transitions: Vec<TransitionMatrix>,
    pub joint_log_likelihood: f64,
    pub next_id: usize,
}

impl SegmentationState {
    pub fn n_skills(&self) -> usize {
        self.skills.len()
    }

    pub fn skill(&self, id: usize) -> Option<&Skill> {
        self.skills
            .binary_search_by_key(&id, |k| k.id)
            .ok()
            .map(|i| &self.skills[i])
    }

    fn active_skills(&self, i: usize) -> Vec<&Skill> {
        self.features[i]
            .iter()
            .map(|&id| self.skill(id).expect("feature refers to a live skill"))
            .collect()
    }

    /// Steps assigned to each skill across all demonstrations.
    pub fn occupancy(&self) -> BTreeMap<usize, usize> {
        let mut occ: BTreeMap<usize, usize> = self.skills.iter().map(|k| (k.id, 0)).collect();
        for z in &self.modes {
            for id in z {
                *occ.entry(*id).or_default() += 1;
            }
        }
        occ
    }

    /// Number of demonstrations that have each skill switched on.
    pub fn feature_counts(&self) -> BTreeMap<usize, usize> {
        let mut m: BTreeMap<usize, usize> = self.skills.iter().map(|k| (k.id, 0)).collect();
        for row in &self.features {
            for id in row {
                *m.entry(*id).or_default() += 1;
            }
        }
        m
    }

    /// Binary demonstration × skill matrix in skill order.
    pub fn feature_matrix(&self) -> Vec<Vec<u8>> {
        self.features
            .iter()
            .map(|row| {
                self.skills
                    .iter()
                    .map(|k| u8::from(row.binary_search(&k.id).is_ok()))
                    .collect()
            })
            .collect()
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.skills.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err("skills not sorted by id".into());
        }
        for (i, row) in self.features.iter().enumerate() {
            if row.is_empty() {
                return Err(format!("demo {i} has no active skill"));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("demo {i} feature row not sorted"));
            }
            if let Some(id) = row.iter().find(|id| self.skill(**id).is_none()) {
                return Err(format!("demo {i} refers to missing skill {id}"));
            }
            if let Some(id) = self.modes[i].iter().find(|id| row.binary_search(id).is_err()) {
                return Err(format!("demo {i} uses inactive skill {id}"));
            }
            let t = &self.transitions[i];
            if t.k() != row.len() {
                return Err(format!("demo {i} transition size {} != {}", t.k(), row.len()));
            }
            for r in &t.rows {
                let s: f64 = r.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(format!("demo {i} transition row sums to {s}"));
                }
            }
        }
        if let Some((id, _)) = self.occupancy().into_iter().find(|(_, n)| *n == 0) {
            return Err(format!("skill {id} has no assigned steps"));
        }
        Ok(())
    }
}

/// A maximal run of one skill inside a demonstration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub skill: usize,
    pub trajectory: usize,
    pub start_state: usize,
    /// State entered after the last step.
    pub end_state: usize,
    pub steps: Vec<(usize, Action)>,
}

impl Segment {
    pub fn path(&self) -> StatePath {
        let mut visited: Vec<usize> = self.steps.iter().skip(1).map(|s| s.0).collect();
        visited.push(self.end_state);
        StatePath::new(self.start_state, visited)
    }
}

/// Splits every demonstration into maximal constant-mode runs, grouped by
/// skill id.
pub fn extract_segments(modes: &[Vec<usize>], demos: &[Trajectory]) -> BTreeMap<usize, Vec<Segment>> {
    let mut out: BTreeMap<usize, Vec<Segment>> = BTreeMap::new();
    for (z, traj) in modes.iter().zip(demos) {
        let mut start = 0;
        for t in 1..=z.len() {
            if t == z.len() || z[t] != z[start] {
                out.entry(z[start]).or_default().push(Segment {
                    skill: z[start],
                    trajectory: traj.id,
                    start_state: traj.steps[start].0,
                    end_state: traj.next_state(t - 1),
                    steps: traj.steps[start..t].to_vec(),
                });
                start = t;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveKind {
    Birth,
    Death,
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoveOutcome {
    pub kind: MoveKind,
    pub trajectory: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepStats {
    pub sweep: usize,
    pub joint_log_likelihood: f64,
    pub n_skills: usize,
}

#[derive(Debug, Clone)]
pub struct SamplerRun {
    pub best: SegmentationState,
    pub best_sweep: usize,
    pub trace: Vec<SweepStats>,
}

pub struct Sampler<'a> {
    gw: &'a GridWorld,
    demos: &'a [Trajectory],
    fmap: FeatureMap,
    config: SegmenterConfig,
    ln_fact: Vec<f64>,
    /// Birth windows available in each demonstration.
    windows: Vec<usize>,
    ln_total_windows: f64,
}

impl<'a> Sampler<'a> {
    pub fn new(gw: &'a GridWorld, demos: &'a [Trajectory], config: SegmenterConfig) -> Result<Self> {
        config.validate()?;
        if demos.is_empty() {
            return Err(Error::EmptyInput("segmentation needs at least one demonstration"));
        }
        let mut ln_fact = vec![0.0; demos.len() + 1];
        for n in 1..=demos.len() {
            ln_fact[n] = ln_fact[n - 1] + (n as f64).ln();
        }
        let windows: Vec<usize> = demos
            .iter()
            .map(|d| window_count(d.len(), config.window_min, config.window_max))
            .collect();
        let ln_total_windows = (windows.iter().sum::<usize>() as f64).ln();
        Ok(Self {
            gw,
            demos,
            fmap: FeatureMap::one_hot(gw.n_states()),
            config,
            ln_fact,
            windows,
            ln_total_windows,
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.fmap
    }

    /// IRL on `paths`, then value iteration and the Boltzmann policy.
    pub fn fit_skill(&self, id: usize, paths: &[StatePath]) -> Result<Skill> {
        let fit = maxent_irl(self.gw, paths, &self.fmap, &self.config.irl)?;
        Skill::from_weights(self.gw, id, fit.weights, &self.fmap, &self.config)
    }

    /// One skill fit on every demonstration, active everywhere.
    pub fn initial_state(&self) -> Result<SegmentationState> {
        let paths: Vec<StatePath> = self.demos.iter().map(StatePath::from).collect();
        let skill = self.fit_skill(0, &paths).map_err(|e| e.for_skill(0))?;
        let n = self.demos.len();
        let mut state = SegmentationState {
            skills: vec![skill],
            features: vec![vec![0]; n],
            modes: self.demos.iter().map(|d| vec![0; d.len()]).collect(),
            transitions: vec![TransitionMatrix::uniform(1); n],
            joint_log_likelihood: f64::NEG_INFINITY,
            next_id: 1,
        };
        state.joint_log_likelihood = self.joint_log_likelihood(&state);
        Ok(state)
    }

    fn log_ibp_prior(&self, state: &SegmentationState) -> f64 {
        let n = self.demos.len();
        let alpha = self.config.bp_mass;
        let harmonic: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
        let mut histories: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut columns: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, row) in state.features.iter().enumerate() {
            for &id in row {
                columns.entry(id).or_default().push(i);
            }
        }
        let mut lp = columns.len() as f64 * alpha.ln() - alpha * harmonic;
        for col in columns.into_values() {
            let m = col.len();
            lp += self.ln_fact[n - m] + self.ln_fact[m - 1] - self.ln_fact[n];
            *histories.entry(col).or_default() += 1;
        }
        lp - histories.values().map(|&c| self.ln_fact[c.min(n)]).sum::<f64>()
    }

    fn trajectory_log_lik(&self, state: &SegmentationState, i: usize) -> f64 {
        let active = state.active_skills(i);
        self.proposal_log_lik(i, &state.modes[i], &active)
    }

    /// Sum of per-demonstration log marginals (modes summed out, transitions
    /// at their posterior mean given the current modes) plus the
    /// beta-process prior on the feature matrix.
    pub fn joint_log_likelihood(&self, state: &SegmentationState) -> f64 {
        let data: f64 = (0..self.demos.len()).map(|i| self.trajectory_log_lik(state, i)).sum();
        data + self.log_ibp_prior(state)
    }

    /// Marginal likelihood of demo `i` under `skills`, using the posterior
    /// mean transitions given its current modes. Used to score proposals.
    fn proposal_log_lik(&self, i: usize, z: &[usize], skills: &[&Skill]) -> f64 {
        let ids: Vec<usize> = skills.iter().map(|k| k.id).collect();
        let trans = posterior_mean_transitions(z, &ids, self.config.dir_gamma, self.config.sticky_kappa);
        hmm::log_marginal(&emissions(&self.demos[i], skills), &trans.log_rows())
    }

    fn resample_trajectory(&self, state: &mut SegmentationState, i: usize, rng: &mut Rng) {
        let z = {
            let active = state.active_skills(i);
            sample_mode_sequence(&self.demos[i], &active, &state.transitions[i], rng)
        };
        state.modes[i] = z;
        state.transitions[i] = sample_transitions(
            &state.modes[i],
            &state.features[i],
            self.config.dir_gamma,
            self.config.sticky_kappa,
            rng,
        );
    }

    /// Re-draws transitions for demo `i` from the prior mean restricted to its
    /// current feature row, then modes and transitions from the posterior.
    fn reset_trajectory(&self, state: &mut SegmentationState, i: usize, rng: &mut Rng) {
        state.transitions[i] = posterior_mean_transitions(
            &state.modes[i],
            &state.features[i],
            self.config.dir_gamma,
            self.config.sticky_kappa,
        );
        self.resample_trajectory(state, i, rng);
    }

    /// Blocked Gibbs update of every mode sequence and transition matrix.
    pub fn sample_modes_and_transitions(&self, state: &mut SegmentationState, rng: &mut Rng) {
        for i in 0..self.demos.len() {
            self.resample_trajectory(state, i, rng);
        }
    }

    /// Metropolis-Hastings flips of feature entries for skills that some
    /// other demonstration also uses, with the beta-process prior
    /// `P(f_ij = 1) = m_-i,j / N`.
    pub fn flip_shared_features(&self, state: &mut SegmentationState, rng: &mut Rng) -> usize {
        let n = self.demos.len() as f64;
        let mut counts = state.feature_counts();
        let mut accepted = 0;
        for i in 0..self.demos.len() {
            let ids: Vec<usize> = state.skills.iter().map(|k| k.id).collect();
            for id in ids {
                let has = state.features[i].binary_search(&id);
                let m_others = counts[&id] - usize::from(has.is_ok());
                if m_others == 0 {
                    continue;
                }
                let mut proposed = state.features[i].clone();
                match has {
                    Ok(pos) => {
                        if proposed.len() == 1 {
                            continue;
                        }
                        proposed.remove(pos);
                    }
                    Err(pos) => proposed.insert(pos, id),
                }
                let log_on = (m_others as f64 / n).ln();
                let log_off = ((n - m_others as f64) / n).ln();
                let prior = if has.is_ok() { log_off - log_on } else { log_on - log_off };
                let cur: Vec<&Skill> = state.active_skills(i);
                let prop: Vec<&Skill> = proposed.iter().map(|id| state.skill(*id).unwrap()).collect();
                let z = &state.modes[i];
                let log_ratio = self.proposal_log_lik(i, z, &prop) - self.proposal_log_lik(i, z, &cur) + prior;
                if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
                    state.features[i] = proposed;
                    *counts.get_mut(&id).unwrap() = if has.is_ok() { m_others } else { m_others + 1 };
                    self.reset_trajectory(state, i, rng);
                    accepted += 1;
                }
            }
        }
        accepted
    }

    /// Log ratio of the base measure to the birth proposal for a skill fit
    /// on a window of demo `i`. The base measure is uniform over every
    /// window of the corpus; the proposal is uniform over the windows of
    /// demo `i`.
    fn log_base_ratio(&self, i: usize) -> f64 {
        (self.windows[i] as f64).ln() - self.ln_total_windows
    }

    fn unique_skills(&self, state: &SegmentationState, i: usize) -> Vec<usize> {
        let counts = state.feature_counts();
        state.features[i]
            .iter()
            .copied()
            .filter(|id| counts[id] == 1)
            .collect()
    }

    /// One birth or death move on the skills unique to a random
    /// demonstration.
    ///
    /// Births fit a new skill by IRL on a uniformly chosen window of 5-20
    /// steps. Acceptance uses the marginal likelihood ratio, the Poisson
    /// prior on the number of unique skills (rate `bp_mass / N`), the ratio
    /// of base measure to proposal, and the birth/death selection
    /// probabilities. Deaths of skills that carry no
    /// steps are always accepted.
    pub fn birth_death_move(&self, state: &mut SegmentationState, rng: &mut Rng) -> Result<MoveOutcome> {
        let n_demos = self.demos.len();
        let i = rng.random_range(0..n_demos);
        let unique = self.unique_skills(state, i);
        let k = unique.len();
        let lambda = self.config.bp_mass / n_demos as f64;
        let p_birth = |k: usize| -> f64 { if k == 0 { 1.0 } else { 0.5 } };
        let birth = k == 0 || rng.random::<f64>() < 0.5;

        if birth {
            let traj = &self.demos[i];
            let (start, w) = nth_window(
                traj.len(),
                self.config.window_min,
                self.config.window_max,
                rng.random_range(0..self.windows[i]),
            );
            let path = StatePath::new(
                traj.steps[start].0,
                (start..start + w).map(|t| traj.next_state(t)).collect(),
            );
            let new_id = state.next_id;
            let skill = match self.fit_skill(new_id, std::slice::from_ref(&path)) {
                Ok(s) => s,
                // a window IRL cannot fit is simply a rejected proposal
                Err(Error::IrlDivergence { .. }) => {
                    return Ok(MoveOutcome {
                        kind: MoveKind::Birth,
                        trajectory: i,
                        accepted: false,
                    })
                }
                Err(e) => return Err(e),
            };
            let cur = state.active_skills(i);
            let mut prop = cur.clone();
            prop.push(&skill);
            let z = &state.modes[i];
            let log_ratio = self.proposal_log_lik(i, z, &prop) - self.proposal_log_lik(i, z, &cur)
                + self.log_base_ratio(i)
                + (lambda / (k as f64 + 1.0)).ln()
                + (0.5 / (k as f64 + 1.0)).ln()
                - p_birth(k).ln();
            let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
            if accepted {
                state.skills.push(skill);
                state.next_id += 1;
                state.features[i].push(new_id);
                self.reset_trajectory(state, i, rng);
            }
            return Ok(MoveOutcome {
                kind: MoveKind::Birth,
                trajectory: i,
                accepted,
            });
        }

        let victim = unique[rng.random_range(0..k)];
        let outcome = |accepted| MoveOutcome {
            kind: MoveKind::Death,
            trajectory: i,
            accepted,
        };
        if state.features[i].len() == 1 {
            return Ok(outcome(false));
        }
        let carries_steps = state.modes[i].contains(&victim);
        let accepted = if !carries_steps {
            true
        } else {
            let cur = state.active_skills(i);
            let prop: Vec<&Skill> = cur.iter().copied().filter(|s| s.id != victim).collect();
            let z = &state.modes[i];
            let log_ratio = self.proposal_log_lik(i, z, &prop) - self.proposal_log_lik(i, z, &cur)
                - self.log_base_ratio(i)
                + (k as f64 / lambda).ln()
                + p_birth(k - 1).ln()
                - (0.5 / k as f64).ln();
            log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
        };
        if accepted {
            state.features[i].retain(|&id| id != victim);
            state.skills.retain(|s| s.id != victim);
            self.reset_trajectory(state, i, rng);
        }
        Ok(outcome(accepted))
    }

    /// Drops skills with no assigned steps from the skill set and every
    /// feature row.
    pub fn prune_orphans(&self, state: &mut SegmentationState, rng: &mut Rng) {
        let dead: Vec<usize> = state
            .occupancy()
            .into_iter()
            .filter(|(_, n)| *n == 0)
            .map(|(id, _)| id)
            .collect();
        if dead.is_empty() {
            return;
        }
        state.skills.retain(|s| !dead.contains(&s.id));
        for i in 0..self.demos.len() {
            if state.features[i].iter().any(|id| dead.contains(id)) {
                state.features[i].retain(|id| !dead.contains(id));
                state.transitions[i] = sample_transitions(
                    &state.modes[i],
                    &state.features[i],
                    self.config.dir_gamma,
                    self.config.sticky_kappa,
                    rng,
                );
            }
        }
    }

    /// Proposes replacing a random skill and its closest partner with one
    /// skill fit on the union of their segments. The partner is the skill
    /// that loses the least likelihood when the two swap steps. Accepted
    /// with probability `min(1, exp(ΔJLL))`.
    pub fn merge_move(&self, state: &mut SegmentationState, rng: &mut Rng) -> Result<MoveOutcome> {
        let outcome = |accepted| MoveOutcome {
            kind: MoveKind::Merge,
            trajectory: 0,
            accepted,
        };
        if state.n_skills() < 2 {
            return Ok(outcome(false));
        }
        let segments = extract_segments(&state.modes, self.demos);
        let steps_of = |id: usize| segments.get(&id).into_iter().flatten().flat_map(|g| g.steps.iter().copied());
        let a = &state.skills[rng.random_range(0..state.n_skills())];
        let swap_loss = |b: &Skill| -> f64 {
            steps_of(a.id).map(|(s, x)| a.log_prob(s, x) - b.log_prob(s, x)).sum::<f64>()
                + steps_of(b.id).map(|(s, x)| b.log_prob(s, x) - a.log_prob(s, x)).sum::<f64>()
        };
        let b = state
            .skills
            .iter()
            .filter(|k| k.id != a.id)
            .map(|k| (swap_loss(k), k))
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .map(|(_, k)| k)
            .expect("at least two skills");
        let (a, b) = (a.id, b.id);
        let paths: Vec<StatePath> = [a, b]
            .iter()
            .flat_map(|id| segments.get(id).into_iter().flatten().map(Segment::path))
            .collect();
        let merged_id = state.next_id;
        let merged = match self.fit_skill(merged_id, &paths) {
            Ok(k) => k,
            Err(Error::IrlDivergence { .. }) => return Ok(outcome(false)),
            Err(e) => return Err(e),
        };

        let mut proposal = state.clone();
        proposal.skills.retain(|k| k.id != a && k.id != b);
        proposal.skills.push(merged);
        proposal.next_id += 1;
        let mut touched = Vec::new();
        for i in 0..self.demos.len() {
            let row = &mut proposal.features[i];
            if row.iter().any(|&id| id == a || id == b) {
                row.retain(|&id| id != a && id != b);
                row.push(merged_id);
                for z in proposal.modes[i].iter_mut().filter(|z| **z == a || **z == b) {
                    *z = merged_id;
                }
                touched.push(i);
            }
        }
        let log_ratio = self.joint_log_likelihood(&proposal) - self.joint_log_likelihood(state);
        let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
        if accepted {
            *state = proposal;
            for i in touched {
                self.reset_trajectory(state, i, rng);
            }
        }
        Ok(outcome(accepted))
    }

    /// Re-learns every skill's reward from the segments currently assigned
    /// to it. A skill keeps its old reward when the refit would lower the
    /// likelihood of its own steps.
    pub fn refit_skill_rewards(&self, state: &mut SegmentationState) -> Result<()> {
        let segments = extract_segments(&state.modes, self.demos);
        let refits: Vec<Skill> = state
            .skills
            .par_iter()
            .map(|skill| {
                let paths: Vec<StatePath> = segments
                    .get(&skill.id)
                    .map(|segs| segs.iter().map(Segment::path).collect())
                    .unwrap_or_default();
                if paths.is_empty() {
                    return Err(Error::EmptyInput("skill has no segments to refit").for_skill(skill.id));
                }
                let refit = self.fit_skill(skill.id, &paths).map_err(|e| e.for_skill(skill.id))?;
                let segs = &segments[&skill.id];
                let fit_of = |k: &Skill| -> f64 {
                    segs.iter().flat_map(|g| &g.steps).map(|&(s, a)| k.log_prob(s, a)).sum()
                };
                Ok(if fit_of(&refit) >= fit_of(skill) { refit } else { skill.clone() })
            })
            .collect::<Result<_>>()?;
        state.skills = refits;
        Ok(())
    }

    /// One full sweep: modes and transitions, shared-feature flips,
    /// birth/death moves, orphan pruning, merges, and a reward refit every
    /// `refit_every` sweeps.
    pub fn sweep(&self, state: &mut SegmentationState, sweep: usize, rng: &mut Rng) -> Result<()> {
        self.sample_modes_and_transitions(state, rng);
        self.flip_shared_features(state, rng);
        for _ in 0..self.config.moves_per_sweep {
            self.birth_death_move(state, rng)?;
        }
        self.prune_orphans(state, rng);
        for _ in 0..self.config.merges_per_sweep {
            self.merge_move(state, rng)?;
        }
        if sweep % self.config.refit_every == 0 {
            self.refit_skill_rewards(state)?;
        }
        state.joint_log_likelihood = self.joint_log_likelihood(state);
        debug_assert_eq!(state.check_invariants(), Ok(()));
        Ok(())
    }

    pub fn run(&self) -> Result<SamplerRun> {
        let started = Instant::now();
        let mut rng = rng::from_seed(self.config.seed);
        let mut state = self.initial_state()?;
        let mut best = state.clone();
        let mut best_sweep = 0;
        let mut trace = vec![SweepStats {
            sweep: 0,
            joint_log_likelihood: state.joint_log_likelihood,
            n_skills: state.n_skills(),
        }];
        for sweep in 1..=self.config.sweeps {
            if let Some(budget) = self.config.time_budget_secs {
                if started.elapsed().as_secs_f64() >= budget {
                    break;
                }
            }
            self.sweep(&mut state, sweep, &mut rng)?;
            trace.push(SweepStats {
                sweep,
                joint_log_likelihood: state.joint_log_likelihood,
                n_skills: state.n_skills(),
            });
            if state.joint_log_likelihood > best.joint_log_likelihood {
                best = state.clone();
                best_sweep = sweep;
            }
        }
        Ok(SamplerRun {
            best,
            best_sweep,
            trace,
        })
    }
}

/// Number of contiguous windows with length in `[min_len, max_len]`; a
/// demonstration shorter than `min_len` has the single whole window.
fn window_count(len: usize, min_len: usize, max_len: usize) -> usize {
    if len <= min_len {
        return 1;
    }
    (min_len..=max_len.min(len)).map(|w| len - w + 1).sum()
}

/// The `n`-th window in (length, start) order, as `(start, length)`.
fn nth_window(len: usize, min_len: usize, max_len: usize, mut n: usize) -> (usize, usize) {
    if len <= min_len {
        return (0, len);
    }
    for w in min_len..=max_len.min(len) {
        let count = len - w + 1;
        if n < count {
            return (n, w);
        }
        n -= count;
    }
    unreachable!("window index out of range")
}

/// Runs the sampler and returns the highest-likelihood state.
pub fn run_sampler(gw: &GridWorld, demos: &[Trajectory], config: &SegmenterConfig) -> Result<SegmentationState> {
    Ok(Sampler::new(gw, demos, config.clone())?.run()?.best)
}
