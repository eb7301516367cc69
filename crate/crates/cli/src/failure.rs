use std::fmt;

use inmap_core::{Error, ErrorKind, StageError};

/// A failed invocation: the stage it stopped in and the exit status to use.
#[derive(Debug)]
pub struct Failure {
    pub stage: String,
    pub kind: ErrorKind,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            stage: "config".into(),
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn at(stage: impl fmt::Display, err: Error) -> Self {
        Self {
            stage: stage.to_string(),
            kind: err.kind(),
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerics => 4,
        }
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Self::at(e.stage, e.source)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.message)
    }
}

pub trait At<T> {
    fn at(self, stage: &str) -> Result<T, Failure>;
}

impl<T> At<T> for inmap_core::Result<T> {
    fn at(self, stage: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::at(stage, e))
    }
}
