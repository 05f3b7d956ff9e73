//! Demonstrations and tabular learners checked against shortest paths and
//! value iteration.

use skillopt::demo::{generate_demos, parse_jsonl, policy_agreement, q_learning, to_jsonl, QLearningParams};
use skillopt::gridworld::value_iteration;
use skillopt::{Action, GridWorld, RewardFunction};

fn corridor(n: usize) -> GridWorld {
    let wall = "#".repeat(n + 2);
    GridWorld::parse(&format!("{wall}\n#{}#\n{wall}\n", ".".repeat(n))).unwrap()
}

#[test]
fn demo_lengths_equal_bfs_distances() {
    let gw = GridWorld::four_rooms();
    let params = QLearningParams {
        episodes: 20_000,
        ..QLearningParams::default()
    };
    let demos: Vec<_> = (0..3)
        .flat_map(|seed| generate_demos(&gw, 500, seed, &params).unwrap())
        .collect();
    assert_eq!(demos.len(), 1500);
    for d in &demos {
        assert_eq!(d.final_state, d.goal);
        assert_eq!(d.len(), gw.bfs_distances(d.goal)[d.start()], "demo {}", d.id);
        for w in d.steps.windows(2) {
            assert_eq!(gw.step(w[0].0, w[0].1), w[1].0);
        }
    }
}

#[test]
fn q_learning_agrees_with_value_iteration() {
    let gw = GridWorld::four_rooms();
    let reward = RewardFunction::goal(&gw, gw.state_at(7, 9).unwrap());
    let oracle = value_iteration(&gw, &reward, 0.9, 1e-10).unwrap();
    let learned = q_learning(&gw, &reward, &QLearningParams::default()).unwrap();
    assert!(policy_agreement(&learned, &oracle, &reward) >= 0.95);
}

#[test]
fn two_state_chain_policy_is_exact() {
    let gw = corridor(2);
    let reward = RewardFunction::goal(&gw, 1);
    let oracle = value_iteration(&gw, &reward, 0.9, 1e-12).unwrap();
    let learned = q_learning(
        &gw,
        &reward,
        &QLearningParams {
            episodes: 500,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(learned.greedy_action(0), Action::Right);
    assert_eq!(policy_agreement(&learned, &oracle, &reward), 1.0);
}

#[test]
fn value_iteration_matches_closed_form_on_corridor() {
    let n = 8;
    let gw = corridor(n);
    let goal = n - 1;
    let reward = RewardFunction::goal(&gw, goal);
    let q = value_iteration(&gw, &reward, 0.9, 1e-12).unwrap();
    // V(d) = 10 at distance 1, V(d) = -1 + 0.9 V(d-1) beyond
    let mut v = vec![0.0; n];
    v[1] = 10.0;
    for d in 2..n {
        v[d] = -1.0 + 0.9 * v[d - 1];
    }
    for s in 0..goal {
        let d = goal - s;
        assert!((q.max_value(s) - v[d]).abs() < 1e-9, "state {s}");
        assert_eq!(q.greedy_action(s), Action::Right);
    }
}

#[test]
fn jsonl_round_trip() {
    let gw = GridWorld::four_rooms();
    let demos = generate_demos(&gw, 20, 4, &QLearningParams::default()).unwrap();
    let text = to_jsonl(&demos);
    assert_eq!(text.lines().count(), 20);
    let back = parse_jsonl(&gw, text.as_bytes()).unwrap();
    assert_eq!(back, demos);
}

#[test]
fn same_seed_same_demos() {
    let gw = GridWorld::four_rooms();
    let p = QLearningParams::default();
    let a = generate_demos(&gw, 50, 9, &p).unwrap();
    let b = generate_demos(&gw, 50, 9, &p).unwrap();
    assert_eq!(a, b);
}
