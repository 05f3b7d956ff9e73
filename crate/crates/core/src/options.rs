//! Options `(I, π, β)` built from segmented skills, and the handcrafted
//! room-to-hallway baseline.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demo::Trajectory;
use crate::error::{Error, Result};
use crate::gridworld::{Action, GridWorld};
use crate::ocsvm::{self, OcSvmModel, OcSvmParams};
use crate::segmenter::{extract_segments, Segment, SegmentationState, Skill};

/// Steps after which an option rollout is considered non-terminating.
pub const OPTION_STEP_CAP: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionSource {
    Learned,
    Handcrafted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillOption {
    pub id: usize,
    pub source: OptionSource,
    /// Skill the option was built from, if learned.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub skill: Option<usize>,
    pub initiation: BTreeSet<usize>,
    /// States where `β = 1`.
    pub termination: BTreeSet<usize>,
    pub policy: BTreeMap<usize, Action>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub initiation_model: Option<OcSvmModel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub termination_model: Option<OcSvmModel>,
}

impl SkillOption {
    pub fn can_start(&self, s: usize) -> bool {
        self.initiation.contains(&s)
    }

    /// `β(s)`. States outside the policy domain terminate.
    pub fn terminates(&self, s: usize) -> bool {
        self.termination.contains(&s) || !self.policy.contains_key(&s)
    }

    pub fn action(&self, s: usize) -> Option<Action> {
        self.policy.get(&s).copied()
    }

    /// States visited from `start` until termination, excluding `start`.
    /// The first step is always taken before `β` is checked.
    pub fn rollout(&self, gw: &GridWorld, start: usize) -> Result<Vec<usize>> {
        let mut path = Vec::new();
        let mut s = start;
        loop {
            let Some(a) = self.action(s) else {
                return Ok(path);
            };
            s = gw.step(s, a);
            path.push(s);
            if self.terminates(s) {
                return Ok(path);
            }
            if path.len() >= OPTION_STEP_CAP {
                return Err(Error::OptionStepCap {
                    option: self.id,
                    start,
                    limit: OPTION_STEP_CAP,
                });
            }
        }
    }

    /// Every initiation state has a policy action and a rollout that ends at
    /// a termination state within the step cap.
    pub fn check_well_formed(&self, gw: &GridWorld) -> Result<()> {
        let skill = self.skill.unwrap_or(self.id);
        let mut bad = Vec::new();
        for &s in &self.initiation {
            let ok = self.policy.contains_key(&s)
                && self
                    .rollout(gw, s)
                    .is_ok_and(|p| p.last().is_some_and(|e| self.termination.contains(e)));
            if !ok {
                bad.push(s);
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::NonTerminatingOption {
                skill,
                states: bad,
                limit: OPTION_STEP_CAP,
            })
        }
    }
}

/// How the end-state frequency threshold is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdDenominator {
    /// Number of segments of the skill.
    #[default]
    Segments,
    /// Number of state occurrences across the skill's segments.
    Occurrences,
}

/// Drops segments whose end state occurs fewer than `frac × denominator`
/// times among the skill's segment end states.
pub fn threshold_segments(segments: &[Segment], frac: f64, denominator: ThresholdDenominator) -> Result<Vec<Segment>> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold fraction must be in (0, 1), got {frac}")));
    }
    let Some(first) = segments.first() else {
        return Err(Error::EmptyInput("thresholding needs at least one segment"));
    };
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for seg in segments {
        *counts.entry(seg.end_state).or_default() += 1;
    }
    let total = match denominator {
        ThresholdDenominator::Segments => segments.len(),
        ThresholdDenominator::Occurrences => segments.iter().map(|s| s.steps.len() + 1).sum(),
    };
    let cut = frac * total as f64;
    let kept: Vec<Segment> = segments
        .iter()
        .filter(|s| counts[&s.end_state] as f64 >= cut)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::DegenerateSkill(first.skill));
    }
    Ok(kept)
}

fn fit_states(gw: &GridWorld, states: &[usize], params: &OcSvmParams) -> Result<(OcSvmModel, BTreeSet<usize>)> {
    let points: Vec<ocsvm::Point> = states.iter().map(|&s| ocsvm::state_point(gw, s)).collect();
    let model = ocsvm::fit(&points, params.nu, params.kernel_gamma, params.tol)?.model;
    let set = ocsvm::classify_states(&model, gw);
    Ok((model, set))
}

/// Builds an option from a skill and the start and end states of its
/// segments.
///
/// Initiation and termination sets come from one-class SVMs on the start
/// and end states. The policy is the skill's greedy policy, kept only on the
/// states its rollouts from the initiation set pass through.
pub fn build_option(
    gw: &GridWorld,
    id: usize,
    skill: &Skill,
    start_states: &[usize],
    end_states: &[usize],
    params: &OcSvmParams,
) -> Result<SkillOption> {
    if start_states.is_empty() || end_states.is_empty() {
        return Err(Error::EmptyInput("option needs start and end states"));
    }
    let (init_model, initiation) = fit_states(gw, start_states, params)?;
    let (term_model, termination) = fit_states(gw, end_states, params)?;
    let mut option = SkillOption {
        id,
        source: OptionSource::Learned,
        skill: Some(skill.id),
        initiation,
        termination,
        policy: BTreeMap::new(),
        initiation_model: Some(init_model),
        termination_model: Some(term_model),
    };
    close_policy(gw, skill, &mut option)?;
    Ok(option)
}

/// Fills `option.policy` with the skill's greedy actions along rollouts from
/// every initiation state.
fn close_policy(gw: &GridWorld, skill: &Skill, option: &mut SkillOption) -> Result<()> {
    if option.initiation.is_empty() {
        return Err(Error::EmptyInitiation { skill: skill.id });
    }
    let mut policy = BTreeMap::new();
    let mut bad = Vec::new();
    for &start in &option.initiation {
        let mut s = start;
        let mut n = 0;
        loop {
            let a = skill.q.greedy_action(s);
            policy.insert(s, a);
            s = gw.step(s, a);
            n += 1;
            if option.termination.contains(&s) {
                break;
            }
            if n >= OPTION_STEP_CAP {
                bad.push(start);
                break;
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::NonTerminatingOption {
            skill: skill.id,
            states: bad,
            limit: OPTION_STEP_CAP,
        });
    }
    option.policy = policy;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionParams {
    pub threshold_frac: f64,
    pub denominator: ThresholdDenominator,
    pub ocsvm: OcSvmParams,
}

impl Default for OptionParams {
    fn default() -> Self {
        Self {
            threshold_frac: 0.02,
            denominator: ThresholdDenominator::Segments,
            ocsvm: OcSvmParams::default(),
        }
    }
}

/// A skill that yields no usable option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSkill {
    pub skill: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedOptions {
    /// Numbered from 0 in skill-id order.
    pub options: Vec<SkillOption>,
    pub skipped: Vec<SkippedSkill>,
}

/// One option per skill of a segmentation.
///
/// Segments that end a demonstration stop because the demonstration
/// reached its goal, so their end states are not used as termination
/// examples. Initiation states whose rollouts never terminate are removed.
/// A skill is skipped when every kept segment ends a demonstration or no
/// initiation state reaches termination; it is an error when thresholding
/// discards all of its segments.
pub fn learned_options(
    gw: &GridWorld,
    state: &SegmentationState,
    demos: &[Trajectory],
    params: &OptionParams,
) -> Result<LearnedOptions> {
    if !(params.threshold_frac > 0.0 && params.threshold_frac < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold fraction must be in (0, 1), got {}",
            params.threshold_frac
        )));
    }
    let segments = extract_segments(&state.modes, demos);
    let built: Vec<std::result::Result<SkillOption, SkippedSkill>> = state
        .skills
        .par_iter()
        .map(|skill| {
            let skip = |reason: &str| {
                Ok(Err(SkippedSkill {
                    skill: skill.id,
                    reason: reason.to_string(),
                }))
            };
            let segs = segments.get(&skill.id).map(Vec::as_slice).unwrap_or_default();
            let kept: Vec<Segment> = threshold_segments(segs, params.threshold_frac, params.denominator)
                .map_err(|_| Error::DegenerateSkill(skill.id))?
                .into_iter()
                .filter(|g| g.end_state != demos[g.trajectory].final_state)
                .collect();
            if kept.is_empty() {
                return skip("every segment ends a demonstration");
            }
            let starts: Vec<usize> = kept.iter().map(|s| s.start_state).collect();
            let ends: Vec<usize> = kept.iter().map(|s| s.end_state).collect();
            let (init_model, initiation) = fit_states(gw, &starts, &params.ocsvm).map_err(|e| e.for_skill(skill.id))?;
            let (term_model, termination) = fit_states(gw, &ends, &params.ocsvm).map_err(|e| e.for_skill(skill.id))?;
            let mut option = SkillOption {
                id: 0,
                source: OptionSource::Learned,
                skill: Some(skill.id),
                initiation,
                termination,
                policy: BTreeMap::new(),
                initiation_model: Some(init_model),
                termination_model: Some(term_model),
            };
            let closed = match close_policy(gw, skill, &mut option) {
                Err(Error::NonTerminatingOption { states, .. }) => {
                    option.initiation.retain(|s| !states.contains(s));
                    close_policy(gw, skill, &mut option)
                }
                other => other,
            };
            match closed {
                Ok(()) => Ok(Ok(option)),
                Err(Error::EmptyInitiation { .. }) => skip("no initiation state reaches termination"),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut options = Vec::new();
    let mut skipped = Vec::new();
    for b in built {
        match b {
            Ok(mut o) => {
                o.id = options.len();
                options.push(o);
            }
            Err(s) => skipped.push(s),
        }
    }
    Ok(LearnedOptions { options, skipped })
}

fn angle_about(center: (f64, f64), rc: (usize, usize)) -> f64 {
    (rc.0 as f64 - center.0).atan2(rc.1 as f64 - center.1)
}

/// Two options per room: go to the hallway met when travelling clockwise
/// around the map, or anticlockwise.
///
/// Each option may start anywhere in its room or at the room's other
/// hallway, follows a shortest path, and terminates at its hallway.
pub fn handcrafted_options(gw: &GridWorld) -> Result<Vec<SkillOption>> {
    gw.check_four_rooms()?;
    let hallways = gw.hallways();
    let n = gw.n_states() as f64;
    let center = (0..gw.n_states()).fold((0.0, 0.0), |acc, s| {
        let (r, c) = gw.coords(s);
        (acc.0 + r as f64 / n, acc.1 + c as f64 / n)
    });
    let mut rooms = gw.rooms();
    // order rooms clockwise from the top-left
    rooms.sort_by(|a, b| {
        let ang = |room: &Vec<usize>| {
            let m = room.len() as f64;
            let (r, c) = room.iter().fold((0.0, 0.0), |acc, &s| {
                let (r, c) = gw.coords(s);
                (acc.0 + r as f64 / m, acc.1 + c as f64 / m)
            });
            (r - center.0).atan2(c - center.1)
        };
        ang(a).total_cmp(&ang(b))
    });

    let mut out = Vec::with_capacity(8);
    for room in &rooms {
        let m = room.len() as f64;
        let room_center = room.iter().fold((0.0, 0.0), |acc, &s| {
            let (r, c) = gw.coords(s);
            (acc.0 + r as f64 / m, acc.1 + c as f64 / m)
        });
        let room_angle = (room_center.0 - center.0).atan2(room_center.1 - center.1);
        let doors: Vec<usize> = hallways
            .iter()
            .copied()
            .filter(|&h| gw.neighbors(h).iter().any(|t| room.binary_search(t).is_ok()))
            .collect();
        if doors.len() != 2 {
            return Err(Error::NotFourRooms(format!("room has {} hallways", doors.len())));
        }
        let offset = |h: usize| {
            let d = angle_about(center, gw.coords(h)) - room_angle;
            d.sin().atan2(d.cos())
        };
        // screen rows grow downward, so increasing angle is clockwise
        let (cw, acw) = if offset(doors[0]) > offset(doors[1]) {
            (doors[0], doors[1])
        } else {
            (doors[1], doors[0])
        };
        for (target, other) in [(cw, acw), (acw, cw)] {
            let dist = gw.bfs_distances(target);
            let mut initiation: BTreeSet<usize> = room.iter().copied().collect();
            initiation.insert(other);
            let policy = initiation
                .iter()
                .map(|&s| {
                    let a = Action::ALL
                        .into_iter()
                        .find(|&a| dist[gw.step(s, a)] + 1 == dist[s])
                        .expect("a shortest-path step exists in a connected room");
                    (s, a)
                })
                .collect();
            out.push(SkillOption {
                id: out.len(),
                source: OptionSource::Handcrafted,
                skill: None,
                initiation,
                termination: BTreeSet::from([target]),
                policy,
                initiation_model: None,
                termination_model: None,
            });
        }
    }
    Ok(out)
}
