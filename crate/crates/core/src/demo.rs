//! Expert demonstrations: tabular Q-learning per goal, then greedy rollouts.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{argmax_action, Action, GridWorld, QTable, RewardFunction};
use crate::rng;

/// A demonstration: the `(state, action)` pairs taken and the state reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub id: usize,
    pub goal: usize,
    pub steps: Vec<(usize, Action)>,
    pub final_state: usize,
}

impl Trajectory {
    /// Builds a trajectory, deriving `final_state` from the dynamics.
    pub fn from_steps(gw: &GridWorld, id: usize, goal: usize, steps: Vec<(usize, Action)>) -> Result<Self> {
        let bad = |msg: String| Error::InvalidTrajectory { id, msg };
        let Some(&(last_s, last_a)) = steps.last() else {
            return Err(bad("no steps".into()));
        };
        if goal >= gw.n_states() {
            return Err(bad(format!("goal {goal} is not a state")));
        }
        for (t, &(s, _)) in steps.iter().enumerate() {
            if s >= gw.n_states() {
                return Err(bad(format!("state {s} at step {t} is out of range")));
            }
        }
        for (t, w) in steps.windows(2).enumerate() {
            let expect = gw.step(w[0].0, w[0].1);
            if w[1].0 != expect {
                return Err(bad(format!(
                    "step {} starts in {} but dynamics give {expect}",
                    t + 1,
                    w[1].0
                )));
            }
        }
        Ok(Self {
            id,
            goal,
            final_state: gw.step(last_s, last_a),
            steps,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start(&self) -> usize {
        self.steps[0].0
    }

    /// State entered after step `t`.
    pub fn next_state(&self, t: usize) -> usize {
        self.steps.get(t + 1).map_or(self.final_state, |s| s.0)
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryLine {
    id: usize,
    goal: usize,
    steps: Vec<(usize, Action)>,
}

pub fn to_jsonl(trajs: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajs {
        let line = TrajectoryLine {
            id: t.id,
            goal: t.goal,
            steps: t.steps.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("trajectory serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: impl AsRef<Path>, trajs: &[Trajectory]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(to_jsonl(trajs).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn parse_jsonl(gw: &GridWorld, reader: impl BufRead) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<trajectories>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryLine = serde_json::from_str(&line)?;
        out.push(Trajectory::from_steps(gw, rec.id, rec.goal, rec.steps)?);
    }
    Ok(out)
}

pub fn read_jsonl(gw: &GridWorld, path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(gw, std::io::BufReader::new(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QLearningParams {
    pub alpha: f64,
    pub epsilon: f64,
    pub discount: f64,
    pub episodes: usize,
    pub seed: u64,
    /// Episodes are truncated after this many steps.
    pub max_episode_steps: usize,
}

impl Default for QLearningParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            epsilon: 0.1,
            discount: 0.9,
            episodes: 5000,
            seed: 7,
            max_episode_steps: 100_000,
        }
    }
}

impl QLearningParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParameter(format!("epsilon must be in [0, 1], got {}", self.epsilon)));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidParameter(format!("discount must be in [0, 1), got {}", self.discount)));
        }
        Ok(())
    }
}

/// Non-terminal states, the candidates for episode starts.
pub(crate) fn start_states(gw: &GridWorld, reward: &RewardFunction) -> Vec<usize> {
    (0..gw.n_states()).filter(|&s| !reward.is_terminal(s)).collect()
}

/// One-step tabular Q-learning with epsilon-greedy exploration and uniform
/// random starts. Returns the table and the step count of every episode.
///
/// The random draws per decision (one uniform for exploration, one index
/// when exploring) match [`crate::smdp::smdp_q_learning`] with no options.
pub fn q_learning_with_curve(
    gw: &GridWorld,
    reward: &RewardFunction,
    params: &QLearningParams,
) -> Result<(QTable, Vec<usize>)> {
    params.validate()?;
    let starts = start_states(gw, reward);
    if reward.terminal().is_none() || starts.is_empty() {
        return Err(Error::InvalidParameter("Q-learning needs an episodic reward with a terminal state".into()));
    }
    let mut rng = rng::from_seed(params.seed);
    let mut q = QTable::zeros(gw.n_states(), params.discount);
    let mut curve = Vec::with_capacity(params.episodes);
    for _ in 0..params.episodes {
        let mut s = starts[rng.random_range(0..starts.len())];
        let mut steps = 0;
        while steps < params.max_episode_steps {
            let a = if rng.random::<f64>() < params.epsilon {
                Action::ALL[rng.random_range(0..4)]
            } else {
                argmax_action(q.row(s))
            };
            let next = gw.step(s, a);
            let r = reward.reward(s, a, next);
            steps += 1;
            let done = reward.is_terminal(next);
            let target = if done { r } else { r + params.discount * q.max_value(next) };
            let old = q.get(s, a);
            q.set(s, a, old + params.alpha * (target - old));
            if done {
                break;
            }
            s = next;
        }
        curve.push(steps);
    }
    Ok((q, curve))
}

pub fn q_learning(gw: &GridWorld, reward: &RewardFunction, params: &QLearningParams) -> Result<QTable> {
    q_learning_with_curve(gw, reward, params).map(|(q, _)| q)
}

/// Fraction of non-terminal states whose greedy action under `learned` is
/// optimal under `oracle` (within `1e-9`).
pub fn policy_agreement(learned: &QTable, oracle: &QTable, reward: &RewardFunction) -> f64 {
    let states: Vec<usize> = (0..learned.n_states()).filter(|&s| !reward.is_terminal(s)).collect();
    let agree = states
        .iter()
        .filter(|&&s| oracle.optimal_actions(s, 1e-9).contains(&learned.greedy_action(s)))
        .count();
    agree as f64 / states.len().max(1) as f64
}

/// Greedy rollout from `start` until `goal`, capped at `4 * n_states` steps.
pub fn greedy_rollout(gw: &GridWorld, q: &QTable, start: usize, goal: usize) -> Result<Vec<(usize, Action)>> {
    let limit = 4 * gw.n_states();
    let mut steps = Vec::new();
    let mut s = start;
    while s != goal {
        if steps.len() >= limit {
            return Err(Error::GoalUnreachable { start, goal, limit });
        }
        let a = q.greedy_action(s);
        steps.push((s, a));
        s = gw.step(s, a);
    }
    Ok(steps)
}

/// `n` demonstrations between uniformly random start/goal pairs. Each goal's
/// policy is learned once by Q-learning on its own RNG stream.
pub fn generate_demos(gw: &GridWorld, n: usize, seed: u64, params: &QLearningParams) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::InvalidParameter("demo count must be >= 1".into()));
    }
    if gw.n_states() < 2 {
        return Err(Error::InvalidParameter("need at least two states for start/goal pairs".into()));
    }
    let mut rng = rng::from_seed(seed);
    let pairs: Vec<(usize, usize)> = (0..n)
        .map(|_| {
            let goal = rng.random_range(0..gw.n_states());
            let mut start = rng.random_range(0..gw.n_states());
            while start == goal {
                start = rng.random_range(0..gw.n_states());
            }
            (start, goal)
        })
        .collect();

    let mut goals: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    goals.sort_unstable();
    goals.dedup();
    let tables: BTreeMap<usize, QTable> = goals
        .par_iter()
        .map(|&g| {
            let p = QLearningParams {
                seed: rng::derive_seed(seed, &[g as u64]),
                ..*params
            };
            q_learning(gw, &RewardFunction::goal(gw, g), &p).map(|q| (g, q))
        })
        .collect::<Result<_>>()?;

    pairs
        .iter()
        .enumerate()
        .map(|(id, &(start, goal))| {
            let steps = greedy_rollout(gw, &tables[&goal], start, goal)?;
            Ok(Trajectory {
                id,
                goal,
                steps,
                final_state: goal,
            })
        })
        .collect()
}
