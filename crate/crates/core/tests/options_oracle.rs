//! Option construction checked against shortest paths and hallway geometry.

use skillopt::gridworld::value_iteration;
use skillopt::irl::RewardWeights;
use skillopt::options::{build_option, handcrafted_options, learned_options, OptionParams};
use skillopt::segmenter::{Skill, SegmentationState, TransitionMatrix};
use skillopt::demo::Trajectory;
use skillopt::ocsvm::OcSvmParams;
use skillopt::{Action, Error, GridWorld, RewardFunction};

fn hallway_skill(gw: &GridWorld, id: usize, hallway: usize) -> Skill {
    let q = value_iteration(gw, &RewardFunction::goal(gw, hallway), 0.9, 1e-10).unwrap();
    Skill::from_q(id, RewardWeights::zeros(gw.n_states()), q, 5.0)
}

fn shortest_path(gw: &GridWorld, start: usize, goal: usize) -> Vec<(usize, Action)> {
    let dist = gw.bfs_distances(goal);
    let mut s = start;
    let mut steps = Vec::new();
    while s != goal {
        let a = Action::ALL.into_iter().find(|&a| dist[gw.step(s, a)] + 1 == dist[s]).unwrap();
        steps.push((s, a));
        s = gw.step(s, a);
    }
    steps
}

#[test]
fn handcrafted_rollouts_are_shortest_paths() {
    let gw = GridWorld::four_rooms();
    for o in handcrafted_options(&gw).unwrap() {
        assert_eq!(o.termination.len(), 1);
        let target = *o.termination.iter().next().unwrap();
        let dist = gw.bfs_distances(target);
        for &s in &o.initiation {
            let path = o.rollout(&gw, s).unwrap();
            assert_eq!(*path.last().unwrap(), target);
            assert_eq!(path.len(), dist[s], "option {} from {s}", o.id);
        }
        o.check_well_formed(&gw).unwrap();
    }
}

#[test]
fn hallway_segments_give_hallway_terminations() {
    let gw = GridWorld::four_rooms();
    let hallway = gw.state_at(3, 6).unwrap();
    let skill = hallway_skill(&gw, 0, hallway);
    let room: Vec<usize> = gw
        .rooms()
        .into_iter()
        .find(|r| r.contains(&gw.state_at(1, 1).unwrap()))
        .unwrap();
    let zone = gw.hallway_zone(hallway);
    let option = build_option(&gw, 0, &skill, &room, &vec![hallway; room.len()], &OcSvmParams::default()).unwrap();
    option.check_well_formed(&gw).unwrap();
    for &s in &option.initiation {
        let end = *option.rollout(&gw, s).unwrap().last().unwrap();
        assert!(zone.iter().any(|&z| gw.manhattan(end, z) <= 1), "rollout from {s} ends at {end}");
    }
}

#[test]
fn zone_to_zone_option_is_tiny() {
    let gw = GridWorld::four_rooms();
    let hallway = gw.state_at(7, 9).unwrap();
    let skill = hallway_skill(&gw, 3, hallway);
    let zone = gw.hallway_zone(hallway);
    let o = build_option(&gw, 0, &skill, &zone, &zone, &OcSvmParams::default()).unwrap();
    o.check_well_formed(&gw).unwrap();
    assert!(o.policy.len() <= 2 * zone.len());
    for &s in &o.initiation {
        let path = o.rollout(&gw, s).unwrap();
        assert!(path.len() <= 2, "rollout from {s}: {path:?}");
        assert!(zone.iter().any(|&z| gw.manhattan(*path.last().unwrap(), z) <= 1));
    }
}

/// Two demonstrations that each cross one hallway and then walk to a goal,
/// segmented at the hallway.
#[test]
fn learned_options_ignore_goal_ends() {
    let gw = GridWorld::four_rooms();
    let h_top = gw.state_at(3, 6).unwrap();
    let h_left = gw.state_at(6, 2).unwrap();
    let mut demos = Vec::new();
    let mut modes = Vec::new();
    let starts = [(1, 1), (2, 2), (1, 3), (2, 4), (4, 1), (5, 3), (4, 4), (1, 5)];
    for (i, &(r, c)) in starts.iter().enumerate() {
        let start = gw.state_at(r, c).unwrap();
        let (hall, goal) = if i % 2 == 0 {
            (h_top, gw.state_at(2 + i % 3, 9).unwrap())
        } else {
            (h_left, gw.state_at(9, 1 + i % 3).unwrap())
        };
        let mut steps = shortest_path(&gw, start, hall);
        let first = steps.len();
        steps.extend(shortest_path(&gw, hall, goal));
        let skill = usize::from(hall == h_left);
        let mut z = vec![skill; first];
        z.extend(vec![2; steps.len() - first]);
        demos.push(Trajectory::from_steps(&gw, i, goal, steps).unwrap());
        modes.push(z);
    }
    let skills = vec![
        hallway_skill(&gw, 0, h_top),
        hallway_skill(&gw, 1, h_left),
        hallway_skill(&gw, 2, gw.state_at(9, 9).unwrap()),
    ];
    let n = demos.len();
    let state = SegmentationState {
        skills,
        features: vec![vec![0, 1, 2]; n],
        modes,
        transitions: vec![TransitionMatrix::uniform(3); n],
        joint_log_likelihood: 0.0,
        next_id: 3,
    };
    // skill 2 only ever ends at a demonstration's goal
    let learned = learned_options(&gw, &state, &demos, &OptionParams::default()).unwrap();
    assert_eq!(learned.options.len(), 2);
    assert_eq!(learned.skipped.len(), 1);
    assert_eq!(learned.skipped[0].skill, 2);
    let mut two = state.clone();
    two.skills.truncate(2);
    for (z, f) in two.modes.iter_mut().zip(two.features.iter_mut()) {
        let first = z.iter().position(|&k| k == 2).unwrap();
        let own = z[0];
        for k in &mut z[first..] {
            *k = own;
        }
        *f = vec![0, 1];
    }
    // every skill now ends at the goals only, so nothing is left
    let none = learned_options(&gw, &two, &demos, &OptionParams::default()).unwrap();
    assert!(none.options.is_empty());
    assert_eq!(none.skipped.iter().map(|s| s.skill).collect::<Vec<_>>(), vec![0, 1]);

    let strict = OptionParams {
        threshold_frac: 0.9,
        ..OptionParams::default()
    };
    match learned_options(&gw, &state, &demos, &strict) {
        Err(Error::DegenerateSkill(2)) => {}
        other => panic!("expected skill 2 to be degenerate, got {other:?}"),
    }

    let mut split = state.clone();
    split.skills.truncate(2);
    for (z, f) in split.modes.iter_mut().zip(split.features.iter_mut()) {
        let own = z[0];
        for k in z.iter_mut().filter(|k| **k == 2) {
            *k = 1 - own;
        }
        *f = vec![0, 1];
    }
    let learned = learned_options(&gw, &split, &demos, &OptionParams::default()).unwrap();
    assert!(learned.skipped.is_empty());
    let options = learned.options;
    assert_eq!(options.len(), 2);
    assert_eq!(options.iter().map(|o| (o.id, o.skill)).collect::<Vec<_>>(), vec![(0, Some(0)), (1, Some(1))]);
    for (o, hall) in options.iter().zip([h_top, h_left]) {
        o.check_well_formed(&gw).unwrap();
        let zone = gw.hallway_zone(hall);
        assert!(o.termination.iter().all(|&t| zone.iter().any(|&z| gw.manhattan(t, z) <= 1)));
    }
}
