use std::fmt;

use iopscope_core::detect::DetectError;
use iopscope_core::export::ExportError;
use iopscope_core::ingest::IngestError;
use iopscope_core::kb::KbError;
use iopscope_core::review::ReviewError;
use iopscope_core::scoring::ScoreError;
use iopscope_core::wavelet::WaveletError;
use iopscope_service::StartError;

/// Failure class, reported as the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad flags, config file or missing required setting.
    Config,
    /// Unreadable or malformed input files.
    Input,
    /// Inputs that parse but violate a model invariant.
    Validation,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Input => 3,
            ErrorClass::Validation => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub source: anyhow::Error,
}

impl CliError {
    pub fn new(class: ErrorClass, source: impl Into<anyhow::Error>) -> Self {
        Self {
            class,
            source: source.into(),
        }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        Self::new(ErrorClass::Config, anyhow::anyhow!("{message}"))
    }

    pub fn input(message: impl fmt::Display) -> Self {
        Self::new(ErrorClass::Input, anyhow::anyhow!("{message}"))
    }

    pub fn context(self, context: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            class: self.class,
            source: self.source.context(context),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl std::error::Error for CliError {}

impl From<KbError> for CliError {
    fn from(e: KbError) -> Self {
        let class = match e {
            KbError::Parse(_) | KbError::UnsupportedFormat(_) => ErrorClass::Input,
            _ => ErrorClass::Validation,
        };
        Self::new(class, e)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let class = match e {
            IngestError::UnresolvedComponent(_) | IngestError::DuplicateComponent(_) => ErrorClass::Validation,
            _ => ErrorClass::Input,
        };
        Self::new(class, e)
    }
}

impl From<ExportError> for CliError {
    fn from(e: ExportError) -> Self {
        Self::new(ErrorClass::Input, e)
    }
}

impl From<WaveletError> for CliError {
    fn from(e: WaveletError) -> Self {
        let class = match e {
            WaveletError::BadOmega0(_) => ErrorClass::Config,
            _ => ErrorClass::Input,
        };
        Self::new(class, e)
    }
}

impl From<DetectError> for CliError {
    fn from(e: DetectError) -> Self {
        let class = match e {
            DetectError::BadConfig(_) => ErrorClass::Config,
            _ => ErrorClass::Validation,
        };
        Self::new(class, e)
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Kb(inner) => inner.into(),
            ScoreError::FactorBelowOne(_) | ScoreError::BadTolerance(_) | ScoreError::NoPeriods => {
                Self::new(ErrorClass::Config, e)
            }
            other => Self::new(ErrorClass::Validation, other),
        }
    }
}

impl From<ReviewError> for CliError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::Table(_) => Self::new(ErrorClass::Input, e),
            ReviewError::Kb(inner) => inner.into(),
            other => Self::new(ErrorClass::Validation, other),
        }
    }
}

impl From<StartError> for CliError {
    fn from(e: StartError) -> Self {
        let class = match e {
            StartError::Kb {
                source: KbError::Parse(_) | KbError::UnsupportedFormat(_),
                ..
            } => ErrorClass::Input,
            StartError::Kb { .. } => ErrorClass::Validation,
            _ => ErrorClass::Input,
        };
        Self::new(class, e)
    }
}
