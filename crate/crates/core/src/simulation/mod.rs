//! Simulated clients and therapists, session runners, profile extraction,
//! session rephrasing and questionnaire completion.

pub mod extract;
pub mod prompts;
pub mod questionnaire;
pub mod session;

use serde::{Deserialize, Serialize};

pub use extract::{extract_profile, ExtractionAudit, ExtractionFailure, ExtractionOutput};
pub use prompts::{RenderedPrompt, Templates};
pub use questionnaire::{complete_questionnaires, CompletionOutput};
pub use session::{
    rephrase_session, run_human_session, run_session, ClientEngine, Exchange, HumanError, HumanEvent,
    HumanSession, LiveState, RephraseOutput, SessionRun, TherapistEngine, TherapistMode,
};

use crate::gateway::GatewayError;
use crate::model::ModelError;
use crate::profiles::ProfileError;
use prompts::TemplateError;

#[derive(Debug, thiserror::Error)]
pub enum SimulationError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("mirror therapist needs a rephrased reference session, got {0:?}")]
    NotRephrased(String),
    #[error("session {id} ended after {turns} turns: {error}")]
    TooShort { id: String, turns: usize, error: String },
    #[error("questionnaire completion produced no scores: {0}")]
    NothingCompleted(String),
    #[error("invalid run limits: {0}")]
    Limits(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunLimits {
    pub max_turns: usize,
    /// Identical client utterances in a row that end a session; below 2
    /// disables the check.
    pub repetition_window: usize,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits {
            max_turns: 120,
            repetition_window: 2,
        }
    }
}

impl RunLimits {
    pub fn new(max_turns: usize, repetition_window: usize) -> Result<Self, SimulationError> {
        let l = RunLimits {
            max_turns,
            repetition_window,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.max_turns < 4 {
            return Err(SimulationError::Limits(format!("max_turns {} < 4", self.max_turns)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Repetition,
    TurnLimit,
    HumanEnded,
    Timeout,
    Aborted,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Repetition => "repetition",
            Termination::TurnLimit => "turn-limit",
            Termination::HumanEnded => "human-ended",
            Termination::Timeout => "timeout",
            Termination::Aborted => "aborted",
        }
    }
}

/// Lowercase alphanumerics only; used to spot a client repeating itself.
pub fn normalize_utterance(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// True when the last `window` utterances are identical after normalization.
pub fn is_repeating<'a>(utterances: impl DoubleEndedIterator<Item = &'a str>, window: usize) -> bool {
    let last: Vec<String> = utterances.rev().take(window).map(normalize_utterance).collect();
    last.len() == window && window >= 2 && last.iter().all(|u| *u == last[0])
}
