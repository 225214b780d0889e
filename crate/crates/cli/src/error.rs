use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] robust_growth::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} acceptance criteria failed")]
    Acceptance(usize),
}

impl CliError {
    /// Config error anchored at `key` in `[section]` when the key can be found.
    pub fn at(src: &str, section: &str, key: &str, msg: String) -> Self {
        match crate::config::locate(src, section, key) {
            Some(line) => CliError::Config(format!("line {line}: [{section}] {key}: {msg}")),
            None => CliError::Config(format!("[{section}] {key}: {msg}")),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Acceptance(_) => 3,
            CliError::Io { .. } => 1,
        }
    }
}
