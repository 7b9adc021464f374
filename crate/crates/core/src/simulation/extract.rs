//! Profile extraction: one query per profile field over the full transcript.

use serde::Serialize;

use super::prompts::{self, RenderedPrompt, Templates};
use super::SimulationError;
use crate::gateway::{ChatMessage, GatewayError, Llm};
use crate::instruments::Registry;
use crate::model::SessionTranscript;
use crate::profiles::{extraction_plan, ProfileAssembler, ProfileField, PsychologicalProfile};

const FORMAT_REMINDER: &str = "\n\nAnswer in the exact required format.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub field: ProfileField,
    pub question: String,
    /// Raw answers in order; an empty string stands for a refusal.
    pub answers: Vec<String>,
    /// True when no answer parsed and the field's fallback was recorded.
    pub fell_back: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractionAudit {
    pub session_id: String,
    pub provider: String,
    pub model: String,
    pub system_prompt: Option<RenderedPrompt>,
    pub entries: Vec<AuditEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractionOutput {
    pub profile: PsychologicalProfile,
    pub audit: ExtractionAudit,
}

/// Extraction stopped early; `audit` holds the answers gathered so far.
#[derive(Debug, thiserror::Error)]
#[error("profile extraction for {} failed: {error}", audit.session_id)]
pub struct ExtractionFailure {
    pub error: SimulationError,
    pub audit: ExtractionAudit,
}

/// Runs the extraction plan sequentially. Each query carries the whole
/// transcript in the system message and the question as the user message.
/// An unparseable answer is retried once with a format reminder, then the
/// field's fallback is recorded. Transport errors abort.
pub fn extract_profile(
    session: &SessionTranscript,
    llm: &Llm,
    templates: &Templates,
    registry: &Registry,
) -> Result<ExtractionOutput, Box<ExtractionFailure>> {
    let rendered = templates.render(prompts::EXTRACTION, &[("conversation", &session.render_dialogue())]);
    let mut audit = ExtractionAudit {
        session_id: session.id().to_string(),
        provider: llm.provider_id.clone(),
        model: llm.model.clone(),
        system_prompt: None,
        entries: Vec::new(),
    };
    let system = match rendered {
        Ok(s) => s,
        Err(e) => return Err(Box::new(ExtractionFailure { error: e.into(), audit })),
    };
    audit.system_prompt = Some(system.clone());
    let mut assembler = ProfileAssembler::new();
    for query in extraction_plan(registry) {
        let mut entry = AuditEntry {
            field: query.field.clone(),
            question: query.question_text.clone(),
            answers: Vec::new(),
            fell_back: false,
        };
        let mut parsed = None;
        for attempt in 0..2 {
            let question = if attempt == 0 {
                query.question_text.clone()
            } else {
                format!("{}{FORMAT_REMINDER}", query.question_text)
            };
            let msgs = vec![ChatMessage::system(&system.text), ChatMessage::user(question)];
            match llm.complete(msgs) {
                Ok(answer) => {
                    let p = query.parse(&answer);
                    entry.answers.push(answer);
                    if let Ok(p) = p {
                        parsed = Some(p);
                        break;
                    }
                }
                Err(GatewayError::Refusal(_)) => entry.answers.push(String::new()),
                Err(e) => {
                    audit.entries.push(entry);
                    return Err(Box::new(ExtractionFailure { error: e.into(), audit }));
                }
            }
        }
        if parsed.is_none() {
            entry.fell_back = true;
            parsed = query.fallback();
            log::warn!("{}: no parseable answer for {}", session.id(), query.field);
        }
        if let Some(p) = parsed {
            assembler.set(query.field, p);
        }
        audit.entries.push(entry);
    }
    match assembler.finish(registry) {
        Ok(profile) => Ok(ExtractionOutput { profile, audit }),
        Err(e) => Err(Box::new(ExtractionFailure { error: e.into(), audit })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Purpose, Reply, Rule, ScriptedMock};
    use crate::instruments::{registry, Trait};
    use crate::model::{Origin, Quality, Speaker};
    use crate::profiles::Gender;
    use std::sync::Arc;

    fn session() -> SessionTranscript {
        SessionTranscript::new(
            "s1",
            Quality::High,
            Origin::Corpus,
            [
                (Speaker::Therapist, "Hi Ricky, how are you?".to_string()),
                (Speaker::Client, "Not great, I drink too much.".to_string()),
            ],
        )
        .unwrap()
    }

    fn llm(mock: ScriptedMock) -> Llm {
        Llm::new("mock", Arc::new(mock), "m", Purpose::Extraction)
    }

    #[test]
    fn pipeline_mock_yields_profile_with_full_audit() {
        let mut mock = ScriptedMock::pipeline();
        mock.rules.insert(0, Rule::contains("name of this client", Reply::text("Ricky")));
        let out = extract_profile(&session(), &llm(mock), &Templates::bundled(), registry()).unwrap();
        assert_eq!(out.profile.name.as_deref(), Some("Ricky"));
        assert_eq!(out.profile.gender, Gender::Unidentified);
        assert!(out.profile.symptoms.is_empty());
        assert_eq!(out.profile.trait_level(Trait::Openness), Some("41-60%"));
        assert_eq!(out.audit.entries.len(), 75);
        assert!(out.audit.system_prompt.unwrap().text.contains("I drink too much"));
        assert!(out.audit.entries.iter().all(|e| !e.fell_back));
    }

    #[test]
    fn out_of_grammar_twice_falls_back() {
        let mut mock = ScriptedMock::pipeline();
        mock.rules.insert(0, Rule::contains("level of openness", Reply::text("Quite open really")));
        let out = extract_profile(&session(), &llm(mock), &Templates::bundled(), registry()).unwrap();
        assert_eq!(out.profile.trait_level(Trait::Openness), None);
        let e = out
            .audit
            .entries
            .iter()
            .find(|e| e.field == ProfileField::Trait(Trait::Openness))
            .unwrap();
        assert!(e.fell_back);
        assert_eq!(e.answers.len(), 2);
    }

    #[test]
    fn transport_error_aborts_with_partial_audit() {
        let mut mock = ScriptedMock::pipeline();
        mock.rules.insert(0, Rule::contains("occupation", Reply::Fail("down".into())));
        let err = extract_profile(&session(), &llm(mock), &Templates::bundled(), registry()).unwrap_err();
        assert!(matches!(err.error, SimulationError::Gateway(GatewayError::Transport(_))));
        assert_eq!(err.audit.entries.len(), 4);
    }
}
