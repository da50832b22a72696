use rehearsal_client::ClientError;
use rehearsal_service::StartError;

/// Failure categories, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("parse failed: {0}")]
    Parse(String),
    #[error("provider failed: {0}")]
    Provider(String),
    #[error("replay diverged: {0}")]
    Divergence(String),
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("service error: {0}")]
    Service(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) | CliError::Service(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Provider(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::InvalidTranscript(_) => 5,
        }
    }

    pub fn from_start(e: StartError) -> Self {
        match e {
            StartError::Provider(m) => CliError::Provider(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Api { status: 422, code, message } if code != "invalid_body" => {
                CliError::Parse(format!("{code}: {message}"))
            }
            ClientError::Api { status: 502, code, message } => CliError::Provider(format!("{code}: {message}")),
            _ => CliError::Service(e.to_string()),
        }
    }
}
