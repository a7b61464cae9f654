use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing upstream artifact: {}", .0.display())]
    Dependency(PathBuf),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Dependency(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<sgmarl_core::Error> for CliError {
    fn from(e: sgmarl_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<sgmarl_core::nn::NnError> for CliError {
    fn from(e: sgmarl_core::nn::NnError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
