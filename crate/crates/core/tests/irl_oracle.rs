//! Maximum-entropy IRL checked against brute-force enumeration of every
//! action sequence, and the analytic gradient against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skillopt::irl::{
    empirical_feature_expectations, expected_feature_expectations, log_likelihood, log_partition, maxent_irl,
    FeatureMap, IrlParams, RewardWeights, StatePath,
};
use skillopt::{Action, GridWorld};

mod common;
use common::{brute_expected_features, brute_log_z};

/// 2x2 open room plus a dead-end cell: 5 states.
fn small_grid() -> GridWorld {
    GridWorld::parse("#####\n#...#\n#..##\n#####\n").unwrap()
}

/// 2x5 open room: 10 states.
fn ten_state_grid() -> GridWorld {
    GridWorld::parse("#######\n#.....#\n#.....#\n#######\n").unwrap()
}

fn random_theta(rng: &mut ChaCha8Rng, k: usize) -> RewardWeights {
    RewardWeights {
        theta: (0..k).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

fn sample_paths(gw: &GridWorld, rng: &mut ChaCha8Rng, n: usize, max_len: usize) -> Vec<StatePath> {
    (0..n)
        .map(|_| {
            let start = rng.random_range(0..gw.n_states());
            let len = rng.random_range(1..=max_len);
            let mut s = start;
            let visited = (0..len)
                .map(|_| {
                    s = gw.step(s, Action::ALL[rng.random_range(0..4)]);
                    s
                })
                .collect();
            StatePath::new(start, visited)
        })
        .collect()
}

#[test]
fn partition_function_matches_enumeration() {
    let gw = small_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let theta = random_theta(&mut rng, gw.n_states());
        let rewards = theta.state_rewards(&FeatureMap::one_hot(gw.n_states()));
        let log_z = log_partition(&gw, &rewards, 4);
        for h in 0..=4 {
            for s in 0..gw.n_states() {
                let expected = if h == 0 { 0.0 } else { brute_log_z(&gw, &rewards, s, h) };
                assert!((log_z[h][s] - expected).abs() < 1e-10, "h={h} s={s}");
            }
        }
    }
}

#[test]
fn expected_features_match_enumeration() {
    let gw = small_grid();
    let fmap = FeatureMap::one_hot(gw.n_states());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let theta = random_theta(&mut rng, gw.n_states());
        let paths = sample_paths(&gw, &mut rng, 4, 4);
        let model = expected_feature_expectations(&gw, &theta, &fmap, &paths).unwrap();
        let brute = brute_expected_features(&gw, &theta.state_rewards(&fmap), &paths);
        for (m, b) in model.iter().zip(&brute) {
            assert!((m - b).abs() < 1e-10);
        }
    }
}

#[test]
fn expected_features_with_dense_features() {
    let gw = small_grid();
    let rows: Vec<Vec<f64>> = (0..gw.n_states())
        .map(|s| {
            let (r, c) = gw.coords(s);
            vec![r as f64, c as f64, 1.0]
        })
        .collect();
    let fmap = FeatureMap::from_rows(rows.clone()).unwrap();
    let theta = RewardWeights {
        theta: vec![0.3, -0.7, 0.1],
    };
    let paths = vec![StatePath::new(0, vec![1, 4]), StatePath::new(4, vec![3, 0, 1])];
    let model = expected_feature_expectations(&gw, &theta, &fmap, &paths).unwrap();
    let visits = brute_expected_features(&gw, &theta.state_rewards(&fmap), &paths);
    for j in 0..3 {
        let brute: f64 = visits.iter().zip(&rows).map(|(v, f)| v * f[j]).sum();
        assert!((model[j] - brute).abs() < 1e-10);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let gw = small_grid();
    let fmap = FeatureMap::one_hot(gw.n_states());
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..5 {
        let theta = random_theta(&mut rng, gw.n_states());
        let paths = sample_paths(&gw, &mut rng, 3, 4);
        let emp = empirical_feature_expectations(&paths, &fmap).unwrap();
        let exp = expected_feature_expectations(&gw, &theta, &fmap, &paths).unwrap();
        let analytic: Vec<f64> = emp.iter().zip(&exp).map(|(e, x)| e - x).collect();
        let h = 1e-5;
        let numeric: Vec<f64> = (0..theta.theta.len())
            .map(|j| {
                let mut up = theta.clone();
                up.theta[j] += h;
                let mut down = theta.clone();
                down.theta[j] -= h;
                (log_likelihood(&gw, &up, &fmap, &paths).unwrap() - log_likelihood(&gw, &down, &fmap, &paths).unwrap())
                    / (2.0 * h)
            })
            .collect();
        let scale = analytic.iter().fold(0.0_f64, |m, g| m.max(g.abs())).max(1e-12);
        let err = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0_f64, |m, (a, n)| m.max((a - n).abs()));
        assert!(err / scale <= 1e-4, "relative error {}", err / scale);
    }
}

#[test]
fn converged_fit_matches_feature_expectations() {
    let gw = ten_state_grid();
    assert_eq!(gw.n_states(), 10);
    let fmap = FeatureMap::one_hot(10);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let paths = sample_paths(&gw, &mut rng, 6, 5);
    let fit = maxent_irl(
        &gw,
        &paths,
        &fmap,
        &IrlParams {
            lr: 0.5,
            iters: 200_000,
            tol: 1e-3,
        },
    )
    .unwrap();
    let emp = empirical_feature_expectations(&paths, &fmap).unwrap();
    let brute = brute_expected_features(&gw, &fit.weights.state_rewards(&fmap), &paths);
    let gap = emp.iter().zip(&brute).fold(0.0_f64, |m, (e, b)| m.max((e - b).abs()));
    assert!(gap <= 1e-2, "feature gap {gap}");
}

#[test]
fn likelihood_increases_along_the_fit() {
    let gw = small_grid();
    let fmap = FeatureMap::one_hot(gw.n_states());
    let paths = vec![StatePath::new(0, vec![1, 1, 1]), StatePath::new(2, vec![1, 4])];
    let mut last = log_likelihood(&gw, &RewardWeights::zeros(gw.n_states()), &fmap, &paths).unwrap();
    for iters in [5, 20, 80] {
        let fit = maxent_irl(
            &gw,
            &paths,
            &fmap,
            &IrlParams {
                lr: 0.1,
                iters,
                tol: 1e-9,
            },
        )
        .unwrap();
        let ll = log_likelihood(&gw, &fit.weights, &fmap, &paths).unwrap();
        assert!(ll >= last - 1e-12);
        last = ll;
    }
}
