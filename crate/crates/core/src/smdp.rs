//! Q-learning over primitive actions plus options, and the learning-curve
//! comparison between option sets.

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::demo::{start_states, QLearningParams};
use crate::error::{Error, Result};
use crate::gridworld::{Action, GridWorld, RewardFunction};
use crate::options::{SkillOption, OPTION_STEP_CAP};
use crate::rng;

/// Outcome of running one option to termination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionOutcome {
    pub final_state: usize,
    /// `Σ_t discount^t r_t` over the option's steps.
    pub discounted_reward: f64,
    pub duration: usize,
}

/// Follows the option from `s` until `β = 1` or the episode ends. At least
/// one step is taken before termination is tested.
pub fn execute_option(
    gw: &GridWorld,
    reward: &RewardFunction,
    option: &SkillOption,
    s: usize,
    discount: f64,
) -> Result<OptionOutcome> {
    if option.action(s).is_none() {
        return Err(Error::InvalidParameter(format!(
            "option {} has no action at state {s}",
            option.id
        )));
    }
    let mut state = s;
    let mut total = 0.0;
    let mut weight = 1.0;
    let mut k = 0;
    loop {
        let Some(a) = option.action(state) else { break };
        let next = gw.step(state, a);
        total += weight * reward.reward(state, a, next);
        weight *= discount;
        k += 1;
        state = next;
        if reward.is_terminal(state) || option.terminates(state) {
            break;
        }
        if k >= OPTION_STEP_CAP {
            return Err(Error::OptionStepCap {
                option: option.id,
                start: s,
                limit: OPTION_STEP_CAP,
            });
        }
    }
    Ok(OptionOutcome {
        final_state: state,
        discounted_reward: total,
        duration: k,
    })
}

/// Action-values over the four primitives followed by every option.
#[derive(Debug, Clone, PartialEq)]
pub struct SmdpQTable {
    values: Vec<Vec<f64>>,
    /// Per state: eligible choice indices, primitives first.
    eligible: Vec<Vec<usize>>,
}

impl SmdpQTable {
    pub fn new(n_states: usize, options: &[SkillOption]) -> Self {
        let eligible = (0..n_states)
            .map(|s| {
                (0..4)
                    .chain(options.iter().enumerate().filter(|(_, o)| o.can_start(s)).map(|(i, _)| 4 + i))
                    .collect()
            })
            .collect();
        Self {
            values: vec![vec![0.0; 4 + options.len()]; n_states],
            eligible,
        }
    }

    pub fn get(&self, s: usize, choice: usize) -> f64 {
        self.values[s][choice]
    }

    pub fn eligible(&self, s: usize) -> &[usize] {
        &self.eligible[s]
    }

    pub fn max_value(&self, s: usize) -> f64 {
        self.eligible[s]
            .iter()
            .map(|&c| self.values[s][c])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// First eligible choice with the largest value.
    pub fn greedy(&self, s: usize) -> usize {
        let row = &self.values[s];
        let mut best = self.eligible[s][0];
        for &c in &self.eligible[s][1..] {
            if row[c] > row[best] {
                best = c;
            }
        }
        best
    }
}

/// One run of SMDP Q-learning. Returns the table and the primitive steps
/// taken in every episode.
///
/// Options update with `Q(s,o) += α (r̄ + discount^k max Q(s',·) - Q(s,o))`.
/// With no options the random draws and updates are exactly those of
/// [`crate::demo::q_learning_with_curve`].
pub fn smdp_q_learning(
    gw: &GridWorld,
    reward: &RewardFunction,
    options: &[SkillOption],
    params: &QLearningParams,
) -> Result<(SmdpQTable, Vec<usize>)> {
    params.validate()?;
    let starts = start_states(gw, reward);
    if reward.terminal().is_none() || starts.is_empty() {
        return Err(Error::InvalidParameter("Q-learning needs an episodic reward with a terminal state".into()));
    }
    let mut rng = rng::from_seed(params.seed);
    let mut q = SmdpQTable::new(gw.n_states(), options);
    let mut curve = Vec::with_capacity(params.episodes);
    for _ in 0..params.episodes {
        let mut s = starts[rng.random_range(0..starts.len())];
        let mut steps = 0;
        while steps < params.max_episode_steps {
            let choice = if rng.random::<f64>() < params.epsilon {
                let el = q.eligible(s);
                el[rng.random_range(0..el.len())]
            } else {
                q.greedy(s)
            };
            let (next, r, k) = if choice < 4 {
                let a = Action::ALL[choice];
                let next = gw.step(s, a);
                (next, reward.reward(s, a, next), 1)
            } else {
                let out = execute_option(gw, reward, &options[choice - 4], s, params.discount)?;
                (out.final_state, out.discounted_reward, out.duration)
            };
            steps += k;
            let done = reward.is_terminal(next);
            let target = if done {
                r
            } else {
                r + params.discount.powi(k as i32) * q.max_value(next)
            };
            let old = q.values[s][choice];
            q.values[s][choice] = old + params.alpha * (target - old);
            if done {
                break;
            }
            s = next;
        }
        curve.push(steps);
    }
    Ok((q, curve))
}

/// Per-episode mean and standard error of steps over independent runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningCurve {
    pub goal: usize,
    pub condition: String,
    pub mean_steps: Vec<f64>,
    pub stderr: Vec<f64>,
    pub runs: usize,
}

impl LearningCurve {
    pub fn from_runs(goal: usize, condition: &str, runs: &[Vec<usize>]) -> Self {
        let n = runs.len();
        let episodes = runs.first().map_or(0, Vec::len);
        let mut mean_steps = Vec::with_capacity(episodes);
        let mut stderr = Vec::with_capacity(episodes);
        for e in 0..episodes {
            let xs: Vec<f64> = runs.iter().map(|r| r[e] as f64).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let se = if n > 1 {
                let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            mean_steps.push(m);
            stderr.push(se);
        }
        Self {
            goal,
            condition: condition.to_string(),
            mean_steps,
            stderr,
            runs: n,
        }
    }

    /// Mean of `mean_steps` over episodes `[from, to)`.
    pub fn window_mean(&self, from: usize, to: usize) -> f64 {
        let w = &self.mean_steps[from..to.min(self.mean_steps.len())];
        w.iter().sum::<f64>() / w.len() as f64
    }
}

/// Seed of one run, independent of which other conditions are compared.
pub fn run_seed(seed: u64, goal: usize, condition: &str, run: usize) -> u64 {
    rng::derive_seed(seed, &[goal as u64, rng::label_tag(condition), run as u64])
}

/// `runs` seeded SMDP Q-learning runs for every goal and named option set.
/// Curves are ordered by goal, then condition as given.
pub fn compare(
    gw: &GridWorld,
    conditions: &[(&str, &[SkillOption])],
    goals: &[usize],
    runs: usize,
    params: &QLearningParams,
) -> Result<Vec<LearningCurve>> {
    if runs == 0 {
        return Err(Error::InvalidParameter("runs must be >= 1".into()));
    }
    let mut curves = Vec::new();
    for &goal in goals {
        let reward = RewardFunction::goal(gw, goal);
        for &(name, options) in conditions {
            let results: Vec<Vec<usize>> = (0..runs)
                .into_par_iter()
                .map(|run| {
                    let p = QLearningParams {
                        seed: run_seed(params.seed, goal, name, run),
                        ..*params
                    };
                    smdp_q_learning(gw, &reward, options, &p).map(|(_, c)| c)
                })
                .collect::<Result<_>>()?;
            curves.push(LearningCurve::from_runs(goal, name, &results));
        }
    }
    Ok(curves)
}

/// Mean shortest-path length to `goal` over uniformly random non-goal starts.
pub fn optimal_mean_steps(gw: &GridWorld, goal: usize) -> f64 {
    let dist = gw.bfs_distances(goal);
    let starts: Vec<usize> = (0..gw.n_states()).filter(|&s| s != goal).collect();
    starts.iter().map(|&s| dist[s] as f64).sum::<f64>() / starts.len() as f64
}

/// CSV with header `goal,condition,episode,mean_steps,stderr,runs`; episodes
/// are numbered from 1.
pub fn curves_csv(curves: &[LearningCurve]) -> String {
    let mut out = String::from("goal,condition,episode,mean_steps,stderr,runs\n");
    for c in curves {
        for (e, (m, se)) in c.mean_steps.iter().zip(&c.stderr).enumerate() {
            out.push_str(&format!("{},{},{},{},{},{}\n", c.goal, c.condition, e + 1, m, se, c.runs));
        }
    }
    out
}
