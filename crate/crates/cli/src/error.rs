use histner::corpus::CorpusError;
use histner::evaluator::EvalError;
use histner::gateway::GatewayError;
use histner::harness::HarnessError;
use histner::promptkit::PromptError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Degenerate(String),
    #[error("{0}")]
    Credentials(String),
    #[error("{0}")]
    CacheMiss(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Degenerate(_) => 2,
            CliError::Credentials(_) => 3,
            CliError::CacheMiss(_) => 4,
        }
    }

    pub fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::MissingCredentials { .. } | GatewayError::Auth(_) => CliError::Credentials(e.to_string()),
            GatewayError::CacheMiss { .. } => CliError::CacheMiss(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Gateway(g) => g.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::input(e)
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        CliError::input(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::input(e)
    }
}
