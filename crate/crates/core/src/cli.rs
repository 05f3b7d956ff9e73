//! Pipeline configuration, artifacts, and the stage commands behind the
//! `skillopt` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::demo::{self, QLearningParams, Trajectory};
use crate::error::{Error, Result};
use crate::gridworld::GridWorld;
use crate::irl::{IrlParams, RewardWeights};
use crate::ocsvm::OcSvmParams;
use crate::options::{self, OptionParams, SkillOption, SkippedSkill, ThresholdDenominator};
use crate::rng;
use crate::segmenter::{Sampler, SegmentationState, SegmenterConfig, Skill, TransitionMatrix};
use crate::smdp::{self, LearningCurve};

pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const SEGMENTATION_FILE: &str = "segmentation.json";
pub const OPTIONS_FILE: &str = "options.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

impl FromStr for ThresholdDenominator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "segments" => Ok(Self::Segments),
            "occurrences" => Ok(Self::Occurrences),
            _ => Err(format!("expected `segments` or `occurrences`, got `{s}`")),
        }
    }
}

fn parse_cell(s: &str) -> std::result::Result<[usize; 2], String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected ROW,COL, got `{s}`"))?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
    Ok([p(r)?, p(c)?])
}

macro_rules! pipeline_config {
    ($( $(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        /// Every setting of the pipeline. Read from flat JSON; any missing key
        /// takes its default.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct PipelineConfig {
            /// Map file; the built-in four-rooms map when absent.
            pub map: Option<PathBuf>,
            $( $(#[doc = $doc])* pub $field: $ty, )*
            /// Wall-clock cap on the sampler in seconds. Makes results
            /// machine-dependent.
            pub time_budget_secs: Option<f64>,
            /// Evaluation goals as `[row, col]`.
            pub goals: Vec<[usize; 2]>,
        }

        impl Default for PipelineConfig {
            fn default() -> Self {
                Self {
                    map: None,
                    $( $field: $default, )*
                    time_budget_secs: None,
                    goals: vec![[7, 9], [9, 9]],
                }
            }
        }

        /// Command-line overrides, one flag per config key.
        #[derive(Debug, Clone, Default, Args)]
        pub struct ConfigOverrides {
            /// Map file
            #[arg(long)]
            pub map: Option<PathBuf>,
            $( $(#[doc = $doc])* #[arg(long)] pub $field: Option<$ty>, )*
            /// Wall-clock cap on the sampler in seconds
            #[arg(long)]
            pub time_budget_secs: Option<f64>,
            /// Evaluation goals, each ROW,COL
            #[arg(long, value_parser = parse_cell, num_args = 1..)]
            pub goals: Option<Vec<[usize; 2]>>,
        }

        impl ConfigOverrides {
            pub fn apply(&self, cfg: &mut PipelineConfig) {
                if let Some(v) = &self.map {
                    cfg.map = Some(v.clone());
                }
                $( if let Some(v) = &self.$field { cfg.$field = v.clone(); } )*
                if let Some(v) = self.time_budget_secs {
                    cfg.time_budget_secs = Some(v);
                }
                if let Some(v) = &self.goals {
                    cfg.goals = v.clone();
                }
            }
        }
    };
}

pipeline_config! {
    /// Output directory for artifacts
    out_dir: PathBuf = PathBuf::from("out"),
    /// Master seed; every stage derives its own stream from it
    seed: u64 = 0,
    /// Number of demonstrations
    n_demos: usize = 500,
    /// Q-learning episodes per goal when generating demonstrations
    demo_episodes: usize = 20_000,
    /// Learning rate of Q-learning
    alpha: f64 = 0.5,
    /// Exploration rate of Q-learning
    epsilon: f64 = 0.1,
    /// Discount of Q-learning
    discount: f64 = 0.9,
    /// Beta-process mass
    bp_mass: f64 = 0.3,
    /// Dirichlet concentration of skill transitions
    dir_gamma: f64 = 1.0,
    /// Extra self-transition mass
    sticky_kappa: f64 = 25.0,
    /// Boltzmann inverse temperature of skills
    tau: f64 = 2.0,
    /// Discount used to turn skill rewards into action-values
    q_discount: f64 = 0.9,
    /// Sampler sweeps
    sweeps: usize = 500,
    /// Sweeps between reward refits
    refit_every: usize = 5,
    /// Birth/death moves per sweep
    moves_per_sweep: usize = 10,
    /// Merge proposals per sweep
    merges_per_sweep: usize = 1,
    /// Shortest birth window
    window_min: usize = 5,
    /// Longest birth window
    window_max: usize = 20,
    /// IRL step size
    irl_lr: f64 = 1.0,
    /// IRL iteration cap
    irl_iters: usize = 500,
    /// IRL gradient tolerance
    irl_tol: f64 = 1e-2,
    /// One-class SVM nu
    nu: f64 = 0.1,
    /// RBF kernel width
    kernel_gamma: f64 = 0.5,
    /// End-state frequency threshold
    threshold_frac: f64 = 0.02,
    /// Threshold denominator: segments or occurrences
    threshold_denominator: ThresholdDenominator = ThresholdDenominator::Segments,
    /// Evaluation episodes per run
    episodes: usize = 200,
    /// Evaluation runs per goal and condition
    runs: usize = 25,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn gridworld(&self) -> Result<GridWorld> {
        match &self.map {
            None => Ok(GridWorld::four_rooms()),
            Some(p) => GridWorld::parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        }
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output
    /// directory.
    pub fn hash(&self) -> String {
        let canonical = Self {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    pub fn meta(&self) -> Meta {
        Meta {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.hash(),
            seed: self.seed,
        }
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        rng::derive_seed(self.seed, &[rng::label_tag(stage)])
    }

    pub fn demo_params(&self) -> QLearningParams {
        QLearningParams {
            alpha: self.alpha,
            epsilon: self.epsilon,
            discount: self.discount,
            episodes: self.demo_episodes,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn segmenter_config(&self) -> SegmenterConfig {
        SegmenterConfig {
            bp_mass: self.bp_mass,
            dir_gamma: self.dir_gamma,
            sticky_kappa: self.sticky_kappa,
            tau: self.tau,
            q_discount: self.q_discount,
            sweeps: self.sweeps,
            time_budget_secs: self.time_budget_secs,
            refit_every: self.refit_every,
            moves_per_sweep: self.moves_per_sweep,
            merges_per_sweep: self.merges_per_sweep,
            window_min: self.window_min,
            window_max: self.window_max,
            irl: IrlParams {
                lr: self.irl_lr,
                iters: self.irl_iters,
                tol: self.irl_tol,
            },
            seed: self.stage_seed("segment"),
            ..Default::default()
        }
    }

    pub fn option_params(&self) -> OptionParams {
        OptionParams {
            threshold_frac: self.threshold_frac,
            denominator: self.threshold_denominator,
            ocsvm: OcSvmParams {
                nu: self.nu,
                kernel_gamma: self.kernel_gamma,
                ..Default::default()
            },
        }
    }

    pub fn eval_params(&self) -> QLearningParams {
        QLearningParams {
            alpha: self.alpha,
            epsilon: self.epsilon,
            discount: self.discount,
            episodes: self.episodes,
            seed: self.stage_seed("evaluate"),
            ..Default::default()
        }
    }

    pub fn goal_states(&self, gw: &GridWorld) -> Result<Vec<usize>> {
        self.goals
            .iter()
            .map(|&[r, c]| {
                gw.state_at(r, c)
                    .ok_or_else(|| Error::InvalidParameter(format!("goal ({r}, {c}) is not a floor cell")))
            })
            .collect()
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }
}

/// Provenance embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRecord {
    pub id: usize,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationArtifact {
    pub meta: Meta,
    pub config: SegmenterConfig,
    pub seed: u64,
    pub skills: Vec<SkillRecord>,
    /// Skill id at every step of every demonstration.
    pub z: Vec<Vec<usize>>,
    /// Demonstration × skill indicator matrix, columns in `skills` order.
    #[serde(rename = "F")]
    pub features: Vec<Vec<u8>>,
    pub transitions: Vec<TransitionMatrix>,
    pub joint_log_likelihood: f64,
    pub best_sweep: usize,
}

impl SegmentationArtifact {
    pub fn new(meta: Meta, config: SegmenterConfig, state: &SegmentationState, best_sweep: usize) -> Self {
        Self {
            meta,
            seed: config.seed,
            config,
            skills: state
                .skills
                .iter()
                .map(|k| SkillRecord {
                    id: k.id,
                    theta: k.weights.theta.clone(),
                })
                .collect(),
            z: state.modes.clone(),
            features: state.feature_matrix(),
            transitions: state.transitions.clone(),
            joint_log_likelihood: state.joint_log_likelihood,
            best_sweep,
        }
    }

    /// Rebuilds the sampler state, recomputing each skill's action-values
    /// from its reward weights.
    pub fn to_state(&self, gw: &GridWorld) -> Result<SegmentationState> {
        let fmap = crate::irl::FeatureMap::one_hot(gw.n_states());
        let skills = self
            .skills
            .iter()
            .map(|r| {
                Skill::from_weights(gw, r.id, RewardWeights { theta: r.theta.clone() }, &fmap, &self.config)
            })
            .collect::<Result<Vec<_>>>()?;
        let features = self
            .features
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&skills)
                    .filter(|(f, _)| **f == 1)
                    .map(|(_, k)| k.id)
                    .collect()
            })
            .collect();
        let next_id = skills.iter().map(|k| k.id + 1).max().unwrap_or(0);
        let state = SegmentationState {
            skills,
            features,
            modes: self.z.clone(),
            transitions: self.transitions.clone(),
            joint_log_likelihood: self.joint_log_likelihood,
            next_id,
        };
        state
            .check_invariants()
            .map_err(|m| Error::InvalidParameter(format!("inconsistent segmentation: {m}")))?;
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionsArtifact {
    pub meta: Meta,
    pub options: Vec<SkillOption>,
    /// Skills that produced no option.
    #[serde(default)]
    pub skipped: Vec<SkippedSkill>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub meta: Meta,
    pub sha256: String,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Records `file` in the output directory's manifest. Used for artifacts
/// whose format has no room for provenance.
fn record_in_manifest(cfg: &PipelineConfig, file: &str, bytes: &[u8]) -> Result<()> {
    let path = cfg.path(MANIFEST_FILE);
    let mut manifest: BTreeMap<String, ManifestEntry> = if path.exists() {
        read_json(&path)?
    } else {
        BTreeMap::new()
    };
    manifest.insert(
        file.to_string(),
        ManifestEntry {
            meta: cfg.meta(),
            sha256: format!("{:x}", Sha256::digest(bytes)),
        },
    );
    write_json(&path, &manifest)
}

pub fn cmd_gen_demos(cfg: &PipelineConfig) -> Result<PathBuf> {
    let gw = cfg.gridworld()?;
    let demos = demo::generate_demos(&gw, cfg.n_demos, cfg.seed, &cfg.demo_params())?;
    let text = demo::to_jsonl(&demos);
    let path = cfg.path(TRAJECTORIES_FILE);
    write_file(&path, text.as_bytes())?;
    record_in_manifest(cfg, TRAJECTORIES_FILE, text.as_bytes())?;
    Ok(path)
}

pub fn load_demos(gw: &GridWorld, path: &Path) -> Result<Vec<Trajectory>> {
    demo::read_jsonl(gw, path)
}

pub fn cmd_segment(cfg: &PipelineConfig, demos_path: &Path) -> Result<SegmentationArtifact> {
    let gw = cfg.gridworld()?;
    let demos = load_demos(&gw, demos_path)?;
    let seg_cfg = cfg.segmenter_config();
    let run = Sampler::new(&gw, &demos, seg_cfg.clone())?.run()?;
    let artifact = SegmentationArtifact::new(cfg.meta(), seg_cfg, &run.best, run.best_sweep);
    write_json(&cfg.path(SEGMENTATION_FILE), &artifact)?;
    Ok(artifact)
}

pub fn cmd_build_options(
    cfg: &PipelineConfig,
    segmentation_path: &Path,
    demos_path: &Path,
    handcrafted: bool,
) -> Result<OptionsArtifact> {
    let gw = cfg.gridworld()?;
    let (options, skipped) = if handcrafted {
        (options::handcrafted_options(&gw)?, Vec::new())
    } else {
        let seg: SegmentationArtifact = read_json(segmentation_path)?;
        let state = seg.to_state(&gw)?;
        let demos = load_demos(&gw, demos_path)?;
        let learned = options::learned_options(&gw, &state, &demos, &cfg.option_params())?;
        (learned.options, learned.skipped)
    };
    let artifact = OptionsArtifact {
        meta: cfg.meta(),
        options,
        skipped,
    };
    write_json(&cfg.path(OPTIONS_FILE), &artifact)?;
    Ok(artifact)
}

/// Learning curves for no options, the options in `options_path`, and the
/// handcrafted options, at every configured goal.
pub fn cmd_evaluate(cfg: &PipelineConfig, options_path: &Path) -> Result<Vec<LearningCurve>> {
    let gw = cfg.gridworld()?;
    let learned: OptionsArtifact = read_json(options_path)?;
    for o in &learned.options {
        o.check_well_formed(&gw)?;
    }
    let handcrafted = options::handcrafted_options(&gw)?;
    let goals = cfg.goal_states(&gw)?;
    let conditions: [(&str, &[SkillOption]); 3] =
        [("none", &[]), ("learned", &learned.options), ("handcrafted", &handcrafted)];
    let curves = smdp::compare(&gw, &conditions, &goals, cfg.runs, &cfg.eval_params())?;
    let csv = smdp::curves_csv(&curves);
    write_file(&cfg.path(CURVES_FILE), csv.as_bytes())?;
    record_in_manifest(cfg, CURVES_FILE, csv.as_bytes())?;
    Ok(curves)
}

/// All stages in order, each reading the previous stage's artifact.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<LearningCurve>> {
    let demos = cmd_gen_demos(cfg)?;
    cmd_segment(cfg, &demos)?;
    cmd_build_options(cfg, &cfg.path(SEGMENTATION_FILE), &demos, false)?;
    cmd_evaluate(cfg, &cfg.path(OPTIONS_FILE))
}

#[derive(Debug, Parser)]
#[command(name = "skillopt", version, about = "Discover options from demonstrations and evaluate them")]
pub struct Cli {
    /// Flat JSON config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate demonstrations
    GenDemos(#[command(flatten)] ConfigOverrides),
    /// Segment demonstrations into skills
    Segment {
        /// Demonstrations file (default: OUT_DIR/trajectories.jsonl)
        #[arg(long)]
        demos: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Build options from a segmentation
    BuildOptions {
        /// Emit the eight handcrafted room options instead
        #[arg(long)]
        handcrafted: bool,
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        segmentation: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Compare learning curves with and without options
    Evaluate {
        #[arg(long)]
        options: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Run every stage
    Run(#[command(flatten)] ConfigOverrides),
}

fn resolve(config: &Option<PathBuf>, overrides: &ConfigOverrides) -> Result<PipelineConfig> {
    let mut cfg = match config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    overrides.apply(&mut cfg);
    Ok(cfg)
}

fn summarize(curves: &[LearningCurve]) -> String {
    curves
        .iter()
        .map(|c| {
            let n = c.mean_steps.len();
            format!(
                "goal {} {:<12} episodes 1-5: {:8.2}  last 20: {:8.2}\n",
                c.goal,
                c.condition,
                c.window_mean(0, 5.min(n)),
                c.window_mean(n.saturating_sub(20), n)
            )
        })
        .collect()
}

/// Executes a parsed command line and returns a short report.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::GenDemos(o) => {
            let cfg = resolve(&cli.config, o)?;
            let path = cmd_gen_demos(&cfg)?;
            Ok(format!("wrote {} demonstrations to {}\n", cfg.n_demos, path.display()))
        }
        Command::Segment { demos, overrides } => {
            let cfg = resolve(&cli.config, overrides)?;
            let demos = demos.clone().unwrap_or_else(|| cfg.path(TRAJECTORIES_FILE));
            let art = cmd_segment(&cfg, &demos)?;
            Ok(format!(
                "{} skills, joint log-likelihood {:.3} (sweep {})\n",
                art.skills.len(),
                art.joint_log_likelihood,
                art.best_sweep
            ))
        }
        Command::BuildOptions {
            handcrafted,
            demos,
            segmentation,
            overrides,
        } => {
            let cfg = resolve(&cli.config, overrides)?;
            let demos = demos.clone().unwrap_or_else(|| cfg.path(TRAJECTORIES_FILE));
            let seg = segmentation.clone().unwrap_or_else(|| cfg.path(SEGMENTATION_FILE));
            let art = cmd_build_options(&cfg, &seg, &demos, *handcrafted)?;
            let mut report = format!("built {} options\n", art.options.len());
            for s in &art.skipped {
                report.push_str(&format!("skipped skill {}: {}\n", s.skill, s.reason));
            }
            Ok(report)
        }
        Command::Evaluate { options, overrides } => {
            let cfg = resolve(&cli.config, overrides)?;
            let path = options.clone().unwrap_or_else(|| cfg.path(OPTIONS_FILE));
            Ok(summarize(&cmd_evaluate(&cfg, &path)?))
        }
        Command::Run(o) => {
            let cfg = resolve(&cli.config, o)?;
            Ok(summarize(&run_pipeline(&cfg)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_json_with_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"n_demos": 12, "goals": [[1, 1]]}"#).unwrap();
        assert_eq!(cfg.n_demos, 12);
        assert_eq!(cfg.goals, vec![[1, 1]]);
        assert_eq!(cfg.runs, 25);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"no_such_key": 1}"#).is_err());
    }

    #[test]
    fn overrides_win() {
        let cli = Cli::parse_from(["skillopt", "run", "--n-demos", "9", "--goals", "1,2", "3,4", "--tau", "2.5"]);
        let Command::Run(o) = &cli.command else { panic!() };
        let cfg = resolve(&None, o).unwrap();
        assert_eq!(cfg.n_demos, 9);
        assert_eq!(cfg.goals, vec![[1, 2], [3, 4]]);
        assert_eq!(cfg.tau, 2.5);
        assert_eq!(cfg.sweeps, 500);
    }

    #[test]
    fn hash_tracks_config() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn parse_cells() {
        assert_eq!(parse_cell("7,9"), Ok([7, 9]));
        assert!(parse_cell("7").is_err());
        assert!(parse_cell("a,1").is_err());
    }
}
