//! Experiment harness around the `fedindex` library: TOML configuration,
//! the four subcommands, and all file output.

pub mod config;
pub mod experiment;

/// Harness errors, partitioned by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Divergence(fedindex::Error),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 0 is success; each failure class gets its own code.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<fedindex::Error> for CliError {
    fn from(err: fedindex::Error) -> Self {
        use fedindex::Error::*;
        match err {
            Diverged { .. } | NonFiniteGradient { .. } | NonFinite(_) => CliError::Divergence(err),
            Io(_) | PopulationFormat { .. } => CliError::Io(err.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_distinct_exit_codes() {
        let config = CliError::Config("bad".into());
        let diverged = CliError::from(fedindex::Error::Diverged {
            round: 3,
            producer: 1,
            quantity: "gradient",
        });
        let io = CliError::from(fedindex::Error::PopulationFormat {
            line: 2,
            reason: "oops".into(),
        });
        assert_eq!(config.exit_code(), 2);
        assert_eq!(diverged.exit_code(), 3);
        assert_eq!(io.exit_code(), 4);
        assert!(matches!(diverged, CliError::Divergence(_)));
    }
}
