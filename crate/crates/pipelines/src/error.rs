use quasilie_core::expr::{EvalError, ParseError};
use quasilie_core::fields::FieldError;
use quasilie_core::flows::FlowError;
use quasilie_core::invariants::InvariantError;
use quasilie_core::schemes::SchemeError;
use quasilie_core::superposition::SuperpositionError;

/// Pipeline failures, grouped by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("numeric breakdown: {0}")]
    Numeric(String),
}

impl PipelineError {
    /// 1 = a check or precondition failed, 2 = usage/config, 3 = numeric breakdown.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Precondition(_) => 1,
            PipelineError::Usage(_) | PipelineError::Config(_) | PipelineError::Io(_) => 2,
            PipelineError::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl From<ParseError> for PipelineError {
    fn from(e: ParseError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Unbound(_) => PipelineError::Config(e.to_string()),
            EvalError::Domain { .. } => PipelineError::Numeric(e.to_string()),
        }
    }
}

impl From<FieldError> for PipelineError {
    fn from(e: FieldError) -> Self {
        match &e {
            FieldError::Parse { .. }
            | FieldError::UnboundSymbol(_)
            | FieldError::Dimension(_)
            | FieldError::InvalidPath(_) => PipelineError::Config(e.to_string()),
            FieldError::Eval { source: EvalError::Unbound(_), .. } => PipelineError::Config(e.to_string()),
            FieldError::Other(_) => PipelineError::Precondition(e.to_string()),
            FieldError::Eval { .. } | FieldError::BlowUp { .. } | FieldError::AtPoint { .. } => {
                PipelineError::Numeric(e.to_string())
            }
        }
    }
}

impl From<FlowError> for PipelineError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Field(f) => f.into(),
            FlowError::Singular { .. } | FlowError::SingularJacobian { .. } | FlowError::Expr { .. } => {
                PipelineError::Numeric(e.to_string())
            }
            FlowError::Dimension(_) | FlowError::NotClosedForm(_) | FlowError::ParamConflict(_) => {
                PipelineError::Config(e.to_string())
            }
        }
    }
}

impl From<SchemeError> for PipelineError {
    fn from(e: SchemeError) -> Self {
        match e {
            SchemeError::Field(f) => f.into(),
            SchemeError::Flow(f) => f.into(),
            SchemeError::Basis { .. } => PipelineError::Numeric(e.to_string()),
            SchemeError::RankDeficient { .. } | SchemeError::Dimension(_) => PipelineError::Config(e.to_string()),
            SchemeError::ZeroCoefficient { .. }
            | SchemeError::NotPositive { .. }
            | SchemeError::ControlNotFound { .. }
            | SchemeError::Precondition(_) => PipelineError::Precondition(e.to_string()),
        }
    }
}

impl From<SuperpositionError> for PipelineError {
    fn from(e: SuperpositionError) -> Self {
        match e {
            SuperpositionError::Field(f) => f.into(),
            SuperpositionError::Flow(f) => f.into(),
            SuperpositionError::Dimension(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Numeric(e.to_string()),
        }
    }
}

impl From<InvariantError> for PipelineError {
    fn from(e: InvariantError) -> Self {
        match e {
            InvariantError::Expr(x) => x.into(),
            InvariantError::Domain(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Numeric(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Io(std::io::Error::other(e.to_string()))
    }
}
