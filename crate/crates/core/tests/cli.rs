//! End-to-end checks of the `skillopt` binary on a small configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use skillopt::cli::{
    Meta, OptionsArtifact, PipelineConfig, SegmentationArtifact, CURVES_FILE, MANIFEST_FILE, OPTIONS_FILE,
    SEGMENTATION_FILE, TRAJECTORIES_FILE,
};
use skillopt::demo;
use skillopt::irl::RewardWeights;
use skillopt::segmenter::{posterior_mean_transitions, SegmentationState, Skill};
use skillopt::{GridWorld, QTable};

fn small_config(out_dir: &Path) -> PipelineConfig {
    PipelineConfig {
        out_dir: out_dir.to_path_buf(),
        n_demos: 30,
        sweeps: 4,
        refit_every: 2,
        moves_per_sweep: 3,
        irl_iters: 60,
        tau: 1.5,
        bp_mass: 0.3,
        irl_lr: 1.0,
        episodes: 15,
        runs: 2,
        ..PipelineConfig::default()
    }
}

fn write_config(dir: &Path, cfg: &PipelineConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn skillopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skillopt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read<T: serde::de::DeserializeOwned>(path: PathBuf) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_is_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = small_config(&a);
    let config = write_config(tmp.path(), &cfg);
    let config = config.to_str().unwrap();
    ok(skillopt(&["--config", config, "run", "--out-dir", a.to_str().unwrap()]));
    let report = ok(skillopt(&["--config", config, "run", "--out-dir", b.to_str().unwrap()]));
    assert!(report.contains("handcrafted"));

    for file in [TRAJECTORIES_FILE, SEGMENTATION_FILE, OPTIONS_FILE, CURVES_FILE, MANIFEST_FILE] {
        let x = fs::read(a.join(file)).unwrap();
        let y = fs::read(b.join(file)).unwrap();
        assert!(x == y, "{file} differs between runs");
    }

    let trajectories = fs::read_to_string(a.join(TRAJECTORIES_FILE)).unwrap();
    assert_eq!(trajectories.lines().count(), cfg.n_demos);

    let seg: SegmentationArtifact = read(a.join(SEGMENTATION_FILE));
    let opts: OptionsArtifact = read(a.join(OPTIONS_FILE));
    let meta = cfg.meta();
    assert_eq!(seg.meta, meta);
    assert_eq!(opts.meta, meta);
    assert_eq!(seg.z.len(), cfg.n_demos);
    assert_eq!(seg.features.len(), cfg.n_demos);
    assert!(seg.features.iter().all(|row| row.len() == seg.skills.len()));

    let manifest: std::collections::BTreeMap<String, serde_json::Value> = read(a.join(MANIFEST_FILE));
    for file in [TRAJECTORIES_FILE, CURVES_FILE] {
        let entry = &manifest[file];
        let m: Meta = serde_json::from_value(entry["meta"].clone()).unwrap();
        assert_eq!(m, meta);
        assert_eq!(entry["sha256"].as_str().unwrap().len(), 64);
    }

    let csv = fs::read_to_string(a.join(CURVES_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("goal,condition,episode,mean_steps,stderr,runs"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6 * cfg.episodes);
    let groups: std::collections::BTreeSet<(&str, &str)> = rows.iter().map(|r| (r[0], r[1])).collect();
    assert_eq!(groups.len(), 6);
    for cond in ["none", "learned", "handcrafted"] {
        assert_eq!(groups.iter().filter(|(_, c)| *c == cond).count(), 2);
    }
    assert!(rows.iter().all(|r| r[5] == "2"));
}

#[test]
fn stages_match_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let (staged, whole) = (tmp.path().join("staged"), tmp.path().join("whole"));
    let cfg = small_config(&staged);
    let config = write_config(tmp.path(), &cfg);
    let config = config.to_str().unwrap();
    ok(skillopt(&["--config", config, "gen-demos"]));
    ok(skillopt(&["--config", config, "segment"]));
    ok(skillopt(&["--config", config, "build-options"]));
    ok(skillopt(&["--config", config, "evaluate"]));
    ok(skillopt(&["--config", config, "run", "--out-dir", whole.to_str().unwrap()]));
    for file in [SEGMENTATION_FILE, OPTIONS_FILE, CURVES_FILE] {
        assert!(fs::read(staged.join(file)).unwrap() == fs::read(whole.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn handcrafted_build_writes_eight_options() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(skillopt(&["build-options", "--handcrafted", "--out-dir", tmp.path().to_str().unwrap()]));
    assert!(out.contains("built 8 options"));
    let art: OptionsArtifact = read(tmp.path().join(OPTIONS_FILE));
    assert_eq!(art.options.len(), 8);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let config = write_config(tmp.path(), &cfg);
    ok(skillopt(&["--config", config.to_str().unwrap(), "gen-demos", "--n-demos", "7"]));
    let text = fs::read_to_string(tmp.path().join(TRAJECTORIES_FILE)).unwrap();
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn missing_input_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = skillopt(&[
        "segment",
        "--demos",
        tmp.path().join("absent.jsonl").to_str().unwrap(),
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
    assert!(!tmp.path().join(SEGMENTATION_FILE).exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"n_demo": 3}"#).unwrap();
    let out = skillopt(&["--config", config.to_str().unwrap(), "gen-demos"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_demo"));
}

#[test]
fn degenerate_skill_names_the_skill() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let config = write_config(tmp.path(), &cfg);
    ok(skillopt(&["--config", config.to_str().unwrap(), "gen-demos"]));

    // One skill covering every step, so its segment end states are the
    // scattered demonstration goals.
    let gw = GridWorld::four_rooms();
    let demos = demo::read_jsonl(&gw, &tmp.path().join(TRAJECTORIES_FILE)).unwrap();
    let n = gw.n_states();
    let state = SegmentationState {
        skills: vec![Skill::from_q(0, RewardWeights::zeros(n), QTable::zeros(n, cfg.q_discount), cfg.tau)],
        features: vec![vec![0]; demos.len()],
        modes: demos.iter().map(|d| vec![0; d.len()]).collect(),
        transitions: vec![posterior_mean_transitions(&[], &[0], cfg.dir_gamma, cfg.sticky_kappa); demos.len()],
        joint_log_likelihood: 0.0,
        next_id: 1,
    };
    let art = SegmentationArtifact::new(cfg.meta(), cfg.segmenter_config(), &state, 0);
    fs::write(tmp.path().join(SEGMENTATION_FILE), serde_json::to_string(&art).unwrap()).unwrap();

    let out = skillopt(&["--config", config.to_str().unwrap(), "build-options", "--threshold-frac", "0.5"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("skill 0"), "{stderr}");
    assert!(!tmp.path().join(OPTIONS_FILE).exists());
}
