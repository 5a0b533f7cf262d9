use std::fmt;

use aia_core::Error as CoreError;

pub type ExpResult<T> = std::result::Result<T, ExpError>;

/// Driver failures, one variant per exit code.
#[derive(Debug)]
pub enum ExpError {
    Config(String),
    /// A pipeline stage failed; `step` names the chain step that was running.
    Pipeline { step: String, message: String },
    Metric(String),
    /// Anything else (I/O, malformed artifacts), tagged with the step.
    Step { step: String, message: String },
}

impl ExpError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExpError::Config(_) => 2,
            ExpError::Pipeline { .. } => 3,
            ExpError::Metric(_) => 4,
            ExpError::Step { .. } => 1,
        }
    }
}

impl fmt::Display for ExpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpError::Config(m) => write!(f, "config error: {m}"),
            ExpError::Pipeline { step, message } => write!(f, "step '{step}' failed: {message}"),
            ExpError::Metric(m) => write!(f, "metric failure: {m}"),
            ExpError::Step { step, message } => write!(f, "step '{step}' failed: {message}"),
        }
    }
}

impl std::error::Error for ExpError {}

/// Attaches the step name to a core error.
pub trait StepContext<T> {
    fn step(self, name: &str) -> ExpResult<T>;
}

impl<T> StepContext<T> for aia_core::Result<T> {
    fn step(self, name: &str) -> ExpResult<T> {
        self.map_err(|e| match e {
            CoreError::PipelineFault { .. } => ExpError::Pipeline {
                step: name.into(),
                message: e.to_string(),
            },
            other => ExpError::Step {
                step: name.into(),
                message: other.to_string(),
            },
        })
    }
}

impl<T> StepContext<T> for std::io::Result<T> {
    fn step(self, name: &str) -> ExpResult<T> {
        self.map_err(|e| ExpError::Step {
            step: name.into(),
            message: e.to_string(),
        })
    }
}

pub(crate) fn metric<T>(r: aia_core::Result<T>) -> ExpResult<T> {
    r.map_err(|e| ExpError::Metric(e.to_string()))
}
