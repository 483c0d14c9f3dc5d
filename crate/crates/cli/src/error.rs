use thiserror::Error;

use ccopf::model::ModelError;
use ccopf::nlp::NlpError;
use ccopf::saa::SaaError;
use ccopf::scenario::ScenarioError;
use ccopf::verify::VerifyError;

/// A command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    NonConvergence(String),
}

impl Failure {
    pub fn input(msg: impl Into<String>) -> Failure {
        Failure::Input(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Infeasible(_) => 2,
            Failure::Input(_) => 3,
            Failure::NonConvergence(_) => 4,
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<SaaError> for Failure {
    fn from(e: SaaError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<VerifyError> for Failure {
    fn from(e: VerifyError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<NlpError> for Failure {
    fn from(e: NlpError) -> Self {
        match e {
            NlpError::Infeasible { .. } => Failure::Infeasible(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}
