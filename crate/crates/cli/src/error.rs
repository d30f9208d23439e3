use std::fmt;
use std::path::Path;

use exitbench_core::cost::CostError;
use exitbench_core::evaluate::EvalError;
use exitbench_core::exitsim::ExitError;
use exitbench_core::metrics::MetricError;
use exitbench_core::trace::TraceError;
use exitbench_core::trainer::TrainError;
use exitbench_service::StoreError;

/// Process exit statuses. Usage errors exit with 2 (clap's convention).
pub mod exit {
    pub const IO: i32 = 3;
    pub const PARSE: i32 = 4;
    pub const INVALID: i32 = 5;
    pub const DIVERGED: i32 = 6;
    pub const SERVICE: i32 = 7;
}

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub status: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, status: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            status,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::new("io_error", exit::IO, format!("{}: {e}", path.display()))
    }

    pub fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(code, exit::INVALID, message)
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "code": self.code, "message": self.message } }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.message, self.code)
    }
}

impl From<CostError> for CliError {
    fn from(e: CostError) -> Self {
        match e {
            CostError::Schema(_) => Self::new("schema_error", exit::PARSE, e.to_string()),
            _ => Self::invalid("invalid_spec", e.to_string()),
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Empty => Self::invalid("empty_submission", e.to_string()),
            TraceError::Parse { .. } => Self::new("trace_parse", exit::PARSE, e.to_string()),
            TraceError::Cost { .. } => Self::invalid("trace_cost", e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Parse { .. } => Self::new("gold_parse", exit::PARSE, e.to_string()),
            _ => Self::invalid("metric_error", e.to_string()),
        }
    }
}

impl From<ExitError> for CliError {
    fn from(e: ExitError) -> Self {
        match e {
            ExitError::Parse { .. } => Self::new("logits_parse", exit::PARSE, e.to_string()),
            ExitError::PolicyMismatch { .. } => Self::invalid("policy_mismatch", e.to_string()),
            ExitError::Trace(t) => t.into(),
            ExitError::Metric(m) => m.into(),
            _ => Self::invalid("simulation_error", e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => Self::new("diverged", exit::DIVERGED, e.to_string()),
            _ => Self::invalid("invalid_training_config", e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let status = match &e {
            EvalError::Io { .. } => exit::IO,
            EvalError::Spec(CostError::Schema(_))
            | EvalError::Trace {
                source: TraceError::Parse { .. },
                ..
            } => exit::PARSE,
            _ => exit::INVALID,
        };
        Self::new(e.code(), status, e.to_string())
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Eval(inner) => inner.into(),
            other => Self::new(other.code(), exit::SERVICE, other.to_string()),
        }
    }
}
