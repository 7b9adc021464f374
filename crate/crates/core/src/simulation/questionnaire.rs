//! Questionnaire completion by the simulated client after a session.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

use super::prompts::{self, RenderedPrompt, Templates};
use super::SimulationError;
use crate::gateway::{ChatMessage, GatewayError, Llm};
use crate::instruments::{
    validate_response_set, Instrument, InstrumentId, Item, ItemRef, ItemScore, RangePolicy, Registry,
};
use crate::model::SessionTranscript;
use crate::profiles::PsychologicalProfile;
use crate::scoring::{ItemResponse, Provenance, QuestionnaireResponseSet};

const FORMAT_REMINDER: &str = "\n\nStart with a single integer on the scale.";

static LEADING_INT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[^0-9\-]*?(-?\d+)").unwrap());

#[derive(Debug, Clone, Serialize)]
pub struct CompletionOutput {
    pub responses: QuestionnaireResponseSet,
    /// Items whose answer was outside the scale and was clamped.
    pub flagged: Vec<(InstrumentId, ItemRef)>,
    pub missing: Vec<(InstrumentId, ItemRef)>,
    pub system_prompt: RenderedPrompt,
}

/// Rating and explanation from an answer such as `"5. I felt heard."`.
pub fn parse_rating(answer: &str) -> Option<(i64, String)> {
    let caps = LEADING_INT.captures(answer)?;
    let m = caps.get(1)?;
    let raw = m.as_str().parse().ok()?;
    let rest = answer[m.end()..]
        .trim_start_matches(|c: char| c.is_whitespace() || ".:,;)-/".contains(c))
        .trim();
    Some((raw, rest.to_string()))
}

fn traits_block(profile: &PsychologicalProfile) -> String {
    profile
        .traits
        .iter()
        .map(|(t, a)| {
            let level = a.level.as_deref().unwrap_or("Cannot be identified");
            format!("- {} is {}. {}", t.label(), level, a.rationale).trim_end().to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn scale_description(instrument: &Instrument, item: &Item) -> String {
    let mut labels: BTreeMap<i64, String> = instrument.scale_labels.clone();
    if let Some((left, right)) = &item.poles {
        labels.insert(item.scale_min, left.clone());
        labels.insert(item.scale_max, right.clone());
    }
    labels.extend(item.anchors.clone());
    labels
        .iter()
        .map(|(k, v)| format!("{k} = {v}"))
        .collect::<Vec<_>>()
        .join("; ")
}

fn item_prompt(templates: &Templates, instrument: &Instrument, item: &Item) -> Result<String, SimulationError> {
    let statement = match &item.poles {
        Some((l, r)) => format!("{} ({l} ... {r})", item.text),
        None => item.text.clone(),
    };
    let id = instrument.id.to_string();
    let r = item.item_ref().to_string();
    let scale = format!("{} to {}", item.scale_min, item.scale_max);
    Ok(templates
        .render(
            prompts::QUESTIONNAIRE_ITEM,
            &[
                ("instrument", &id),
                ("item_ref", &r),
                ("instruction", &instrument.instruction),
                ("item_text", &statement),
                ("scale", &scale),
                ("scale_description", &scale_description(instrument, item)),
            ],
        )?
        .text)
}

/// Asks one query per item with the session, problem and traits as shared
/// system context. An unparseable answer or refusal is retried once and then
/// recorded as missing; SEQ answers also need an explanation. Out-of-scale
/// ratings are clamped and flagged. Transport errors abort.
pub fn complete_questionnaires(
    profile: &PsychologicalProfile,
    transcript: &SessionTranscript,
    instruments: &[InstrumentId],
    llm: &Llm,
    templates: &Templates,
    registry: &Registry,
) -> Result<CompletionOutput, SimulationError> {
    let problem = format!("{}\n{}", profile.problem, profile.reasons_for_visiting);
    let system = templates.render(
        prompts::QUESTIONNAIRE,
        &[
            ("problem", &problem),
            ("traits", &traits_block(profile)),
            ("conversation", &transcript.render_dialogue()),
        ],
    )?;
    let mut responses = QuestionnaireResponseSet {
        provenance: Provenance {
            session_id: transcript.id().to_string(),
            profile_id: transcript.reference_session_id.clone(),
            provider: Some(llm.provider_id.clone()),
        },
        instruments: BTreeMap::new(),
    };
    let mut flagged = Vec::new();
    let mut missing = Vec::new();
    for &id in instruments {
        let instrument = registry.instrument(id);
        let mut raws = BTreeMap::new();
        let mut explanations = BTreeMap::new();
        for item in &instrument.items {
            let prompt = item_prompt(templates, instrument, item)?;
            for attempt in 0..2 {
                let user = if attempt == 0 {
                    prompt.clone()
                } else {
                    format!("{prompt}{FORMAT_REMINDER}")
                };
                let answer = match llm.complete(vec![ChatMessage::system(&system.text), ChatMessage::user(user)]) {
                    Ok(a) => a,
                    Err(GatewayError::Refusal(_)) => continue,
                    Err(e) => return Err(e.into()),
                };
                match parse_rating(&answer) {
                    Some((_, why)) if id == InstrumentId::Seq && why.is_empty() => continue,
                    Some((raw, why)) => {
                        raws.insert(item.item_ref(), raw);
                        explanations.insert(item.item_ref(), why);
                        break;
                    }
                    None => continue,
                }
            }
        }
        let validated = validate_response_set(instrument, &raws, RangePolicy::ClampAndFlag)
            .expect("responses only cover the instrument's own items");
        let mut items = BTreeMap::new();
        for (r, score) in validated.scores {
            let response = match score {
                ItemScore::Present { raw, clamped } => {
                    if clamped {
                        flagged.push((id, r.clone()));
                    }
                    ItemResponse {
                        raw: Some(raw),
                        clamped,
                        explanation: explanations.remove(&r).filter(|e| !e.is_empty()),
                    }
                }
                ItemScore::Missing => {
                    missing.push((id, r.clone()));
                    ItemResponse::default()
                }
            };
            items.insert(r, response);
        }
        responses.instruments.insert(id, items);
    }
    if responses.instruments.values().all(|m| m.values().all(|r| r.raw.is_none())) {
        return Err(SimulationError::NothingCompleted(transcript.id().to_string()));
    }
    Ok(CompletionOutput {
        responses,
        flagged,
        missing,
        system_prompt: system,
    })
}
