//! Error classification and process exit codes.
//!
//! 0 success, 2 configuration error, 3 data error, 4 numerical failure.

use ctcst_core::corpus::CorpusError;
use ctcst_core::ctc::CtcError;
use ctcst_core::decode::DecodeError;
use ctcst_core::metrics::{AlignError, BinError, BleuError, WerError};
use ctcst_core::nn::NnError;
use ctcst_core::saliency::SaliencyError;
use ctcst_core::train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CtcError> for CliError {
    fn from(e: CtcError) -> Self {
        match e {
            CtcError::InfeasibleGradient => CliError::Numeric(e.to_string()),
            CtcError::InvalidVocabulary(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::InvalidConfig(_) | NnError::SelectorOutOfRange(_) => {
                CliError::Config(e.to_string())
            }
            NnError::NonFiniteActivation { .. } | NnError::NonFiniteLoss => {
                CliError::Numeric(e.to_string())
            }
            NnError::Ctc(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainError::Utterance { id, source } => {
                let wrapped: CliError = source.into();
                match wrapped {
                    CliError::Numeric(msg) => CliError::Numeric(format!("utterance {id}: {msg}")),
                    CliError::Config(msg) => CliError::Config(format!("utterance {id}: {msg}")),
                    CliError::Data(msg) => CliError::Data(format!("utterance {id}: {msg}")),
                }
            }
            TrainError::Nn(inner) => inner.into(),
            TrainError::Ctc(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidSpec(_) => CliError::Config(e.to_string()),
            CorpusError::Ctc(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Utterance { id, source } => {
                let wrapped: CliError = source.into();
                match wrapped {
                    CliError::Numeric(msg) => CliError::Numeric(format!("utterance {id}: {msg}")),
                    CliError::Config(msg) => CliError::Config(format!("utterance {id}: {msg}")),
                    CliError::Data(msg) => CliError::Data(format!("utterance {id}: {msg}")),
                }
            }
            DecodeError::Ctc(inner) => inner.into(),
        }
    }
}

impl From<SaliencyError> for CliError {
    fn from(e: SaliencyError) -> Self {
        match e {
            SaliencyError::LayerOutOfRange { .. } | SaliencyError::OccurrenceNotFound { .. } => {
                CliError::Config(e.to_string())
            }
            SaliencyError::NonFinite => CliError::Numeric(e.to_string()),
            SaliencyError::Nn(inner) => inner.into(),
            SaliencyError::Io(inner) => inner.into(),
        }
    }
}

impl From<AlignError> for CliError {
    fn from(e: AlignError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BleuError> for CliError {
    fn from(e: BleuError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<WerError> for CliError {
    fn from(e: WerError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BinError> for CliError {
    fn from(e: BinError) -> Self {
        match e {
            BinError::ZeroBins => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Data("x".into()).exit_code(), 3);
        assert_eq!(CliError::Numeric("x".into()).exit_code(), 4);
    }

    #[test]
    fn numeric_failures_keep_their_class_through_wrapping() {
        let err: CliError = TrainError::Utterance {
            id: "u1".into(),
            source: NnError::NonFiniteLoss,
        }
        .into();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn infeasible_gradient_is_numeric() {
        let err: CliError = CtcError::InfeasibleGradient.into();
        assert_eq!(err.exit_code(), 4);
    }
}
