//! Segmentation of synthetic corpora whose true skills and switch points are
//! known.

use skillopt::segmenter::synthetic::{aligned_accuracy, boundary_recall, generate, SyntheticCorpus, SyntheticParams};
use skillopt::segmenter::{Sampler, SegmenterConfig};
use skillopt::GridWorld;

fn corpus(gw: &GridWorld) -> SyntheticCorpus {
    let targets = [(1, 1), (11, 11), (1, 11)].map(|(r, c)| gw.state_at(r, c).unwrap());
    generate(
        gw,
        &targets,
        &SyntheticParams {
            n_demos: 30,
            switches: 2,
            tau: 5.0,
            seed: 4,
            ..SyntheticParams::default()
        },
    )
    .unwrap()
}

fn config(sweeps: usize) -> SegmenterConfig {
    SegmenterConfig {
        tau: 1.5,
        bp_mass: 0.3,
        sweeps,
        irl: skillopt::irl::IrlParams {
            lr: 1.0,
            iters: 200,
            tol: 1e-2,
        },
        seed: 1,
        ..SegmenterConfig::default()
    }
}

#[test]
fn recovers_synthetic_skills() {
    let gw = GridWorld::four_rooms();
    let data = corpus(&gw);
    let run = Sampler::new(&gw, &data.demos, config(30)).unwrap().run().unwrap();
    let acc = aligned_accuracy(&data.labels, &run.best.modes);
    let recall = boundary_recall(&data.labels, &run.best.modes, 2);
    eprintln!("k {} accuracy {acc:.3} recall {recall:.3}", run.best.n_skills());
    assert!(run.best.n_skills() >= 3, "only {} skills", run.best.n_skills());
    assert!(acc >= 0.8, "accuracy {acc}");
    assert!(recall >= 0.7, "boundary recall {recall}");
}

#[test]
fn run_keeps_the_best_sweep() {
    let gw = GridWorld::four_rooms();
    let data = corpus(&gw);
    let sampler = Sampler::new(&gw, &data.demos, config(8)).unwrap();
    let run = sampler.run().unwrap();
    assert_eq!(run.trace.len(), 9);
    assert_eq!(run.trace[0].n_skills, 1);
    let best = run.trace.iter().map(|t| t.joint_log_likelihood).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(run.best.joint_log_likelihood, best);
    assert_eq!(run.trace[run.best_sweep].joint_log_likelihood, best);
    assert_eq!(run.best.check_invariants(), Ok(()));
    assert!((sampler.joint_log_likelihood(&run.best) - best).abs() < 1e-9);

    let again = sampler.run().unwrap();
    assert_eq!(again.best.modes, run.best.modes);
    assert_eq!(again.best_sweep, run.best_sweep);
}

#[test]
fn births_grow_the_single_initial_skill() {
    let gw = GridWorld::four_rooms();
    let data = corpus(&gw);
    let sampler = Sampler::new(&gw, &data.demos, config(5)).unwrap();
    let init = sampler.initial_state().unwrap();
    assert_eq!(init.n_skills(), 1);
    assert!(init.modes.iter().flatten().all(|&z| z == init.skills[0].id));
    let run = sampler.run().unwrap();
    assert!(run.trace.iter().any(|t| t.n_skills > 1));
    assert!(run.best.joint_log_likelihood > init.joint_log_likelihood);
}

#[test]
fn invalid_config_is_rejected() {
    let gw = GridWorld::four_rooms();
    let data = corpus(&gw);
    let bad = SegmenterConfig {
        window_min: 0,
        ..config(1)
    };
    assert!(Sampler::new(&gw, &data.demos, bad).is_err());
    assert!(Sampler::new(&gw, &[], config(1)).is_err());
}
