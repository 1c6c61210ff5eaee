use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("no iterate produced: {0}")]
    NoIterate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Io(_) => 2,
            Self::NoIterate(_) => 3,
        }
    }
}

impl From<volseg::Error> for CliError {
    fn from(e: volseg::Error) -> Self {
        use volseg::Error as E;
        match e {
            E::Io(_) | E::Image(_) => Self::Io(e.to_string()),
            E::NonFinite { .. } | E::SingularCovariance { .. } => Self::NoIterate(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
