use thiserror::Error;

use crate::dci::DciError;
use crate::eval::EvalError;
use crate::nn::NnError;
use crate::report::ReportError;
use crate::synth::SynthError;
use crate::train::TrainError;
use crate::vocab::VocabError;

/// Coarse failure class shown to users and mapped to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Format,
    Config,
    Numeric,
}

impl std::fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorCategory::Io => "IO",
            ErrorCategory::Format => "Format",
            ErrorCategory::Config => "Config",
            ErrorCategory::Numeric => "Numeric",
        })
    }
}

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dci(#[from] DciError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
}

fn report_category(e: &ReportError) -> ErrorCategory {
    match e {
        ReportError::Io(_) => ErrorCategory::Io,
        _ => ErrorCategory::Format,
    }
}

fn nn_category(e: &NnError) -> ErrorCategory {
    match e {
        NnError::Config(_) | NnError::BatchMismatch { .. } => ErrorCategory::Config,
        NnError::Io(_) => ErrorCategory::Io,
        NnError::ShapeMismatch { .. } | NnError::TargetNotInVocab(_) | NnError::Checkpoint(_) => ErrorCategory::Format,
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Report(e) => report_category(e),
            Error::Vocab(VocabError::Report(e)) => report_category(e),
            Error::Vocab(VocabError::DuplicateToken(_)) => ErrorCategory::Format,
            Error::Vocab(_) => ErrorCategory::Config,
            Error::Nn(e) => nn_category(e),
            Error::Train(TrainError::Nn(e)) => nn_category(e),
            Error::Train(TrainError::NonFinite(_)) => ErrorCategory::Numeric,
            Error::Train(TrainError::NoEligibleAv) => ErrorCategory::Format,
            Error::Train(_) => ErrorCategory::Config,
            Error::Dci(DciError::Io(_)) => ErrorCategory::Io,
            Error::Dci(DciError::KTooLarge { .. } | DciError::Config(_)) => ErrorCategory::Config,
            Error::Dci(_) => ErrorCategory::Format,
            Error::Eval(EvalError::KTooLarge { .. }) => ErrorCategory::Config,
            Error::Eval(_) => ErrorCategory::Format,
            Error::Synth(_) | Error::Config(_) => ErrorCategory::Config,
            Error::Io(_) => ErrorCategory::Io,
            Error::Json(_) | Error::Format(_) => ErrorCategory::Format,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories() {
        assert_eq!(Error::from(ReportError::BadDate("x".into())).category(), ErrorCategory::Format);
        assert_eq!(Error::from(TrainError::NonFinite("loss".into())).category(), ErrorCategory::Numeric);
        assert_eq!(Error::from(DciError::Io("gone".into())).category(), ErrorCategory::Io);
        assert_eq!(Error::from(SynthError::SpecInvalid("n".into())).category(), ErrorCategory::Config);
        assert_eq!(ErrorCategory::Io.to_string(), "IO");
    }
}
