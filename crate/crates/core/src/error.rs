use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("map parse error at line {line}: {msg}")]
    MapParse { line: usize, msg: String },

    #[error("map is not a strict four-rooms layout: {0}")]
    NotFourRooms(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("value iteration did not converge in {iterations} sweeps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("policy from state {start} did not reach goal {goal} within {limit} steps")]
    GoalUnreachable { start: usize, goal: usize, limit: usize },

    #[error("IRL diverged after {iteration} iterations (gradient norm {gradient_norm:e})")]
    IrlDivergence { iteration: usize, gradient_norm: f64 },

    #[error("skill {skill}: {source}")]
    Skill {
        skill: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("one-class SVM did not converge in {iterations} iterations (KKT gap {gap:e})")]
    SvmNoConvergence { iterations: usize, gap: f64 },

    #[error("skill {0} is degenerate: every segment was discarded by thresholding")]
    DegenerateSkill(usize),

    #[error("option for skill {skill} has an empty initiation set")]
    EmptyInitiation { skill: usize },

    #[error("option for skill {skill}: rollouts from states {states:?} do not terminate within {limit} steps")]
    NonTerminatingOption {
        skill: usize,
        states: Vec<usize>,
        limit: usize,
    },

    #[error("option {option} exceeded {limit} steps from state {start}")]
    OptionStepCap {
        option: usize,
        start: usize,
        limit: usize,
    },

    #[error("invalid trajectory {id}: {msg}")]
    InvalidTrajectory { id: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn for_skill(self, skill: usize) -> Self {
        Error::Skill {
            skill,
            source: Box::new(self),
        }
    }
}
