use std::fmt;

/// Failure of a CLI run, carrying its exit code class.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration file, flag or override. Exit code 2.
    Config(String),
    /// A stage ran before the stage producing its inputs. Exit code 3.
    Missing { stages: Vec<String>, paths: Vec<String> },
    /// Non-finite losses or similar. Exit code 4.
    Numerical(String),
    /// Anything else (I/O, malformed artifacts). Exit code 1.
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Missing { .. } => 3,
            Self::Numerical(_) => 4,
            Self::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Missing { stages, paths } => {
                let names: Vec<String> = stages.iter().map(|s| format!("`{s}`")).collect();
                write!(f, "missing prerequisite: run stage {} first (not found: {})", names.join(", "), paths.join(", "))
            }
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
            Self::Other(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<llmemb::Error> for CliError {
    fn from(e: llmemb::Error) -> Self {
        match e {
            llmemb::Error::Config(_) => Self::Config(e.to_string()),
            llmemb::Error::Numerical(_) => Self::Numerical(e.to_string()),
            llmemb::Error::MissingArtifact { stage, path } => Self::Missing { stages: vec![stage], paths: vec![path.display().to_string()] },
            other => Self::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Other(e.to_string())
    }
}
