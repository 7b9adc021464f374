//! Client and therapist engines, the automated session loop, interactive
//! human sessions and session rephrasing.

use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::prompts::{self, RenderedPrompt, Templates};
use super::{is_repeating, RunLimits, SimulationError, Termination};
use crate::gateway::{ChatMessage, GatewayError, Llm, Role};
use crate::instruments::Registry;
use crate::model::{ModelError, Origin, Quality, SessionTranscript, Speaker};
use crate::profiles::PsychologicalProfile;

const OPENING_CUE: &str = "(The client has just arrived. Please open the session.)";

/// Chat history from the point of view of `me`: my turns become assistant
/// messages, the other side's user messages. Consecutive turns by the same
/// speaker are joined so roles alternate.
fn history_messages(system: &str, history: &[(Speaker, String)], me: Speaker) -> Vec<ChatMessage> {
    let mut msgs = vec![ChatMessage::system(system)];
    for (speaker, text) in history {
        let role = if *speaker == me { Role::Assistant } else { Role::User };
        match msgs.last_mut() {
            Some(last) if last.role == role => {
                last.content.push('\n');
                last.content.push_str(text);
            }
            _ => msgs.push(ChatMessage {
                role,
                content: text.clone(),
            }),
        }
    }
    if msgs.len() == 1 || msgs[1].role == Role::Assistant {
        msgs.insert(1, ChatMessage::user(OPENING_CUE));
    }
    msgs
}

pub struct ClientEngine {
    pub profile: PsychologicalProfile,
    pub reference: SessionTranscript,
    pub llm: Llm,
    pub system_prompt: RenderedPrompt,
}

impl ClientEngine {
    pub fn new(
        profile: PsychologicalProfile,
        reference: SessionTranscript,
        llm: Llm,
        templates: &Templates,
        registry: &Registry,
    ) -> Result<Self, SimulationError> {
        let system_prompt = templates.render(
            prompts::CLIENT,
            &[
                ("profile", &profile.render(registry)),
                ("reference_transcript", &reference.render_dialogue()),
            ],
        )?;
        Ok(ClientEngine {
            profile,
            reference,
            llm,
            system_prompt,
        })
    }

    pub fn reply(&self, history: &[(Speaker, String)]) -> Result<String, GatewayError> {
        self.llm
            .complete(history_messages(&self.system_prompt.text, history, Speaker::Client))
    }
}

#[derive(Debug, Clone)]
pub enum TherapistMode {
    /// Imitates the therapist of a (rephrased) reference session.
    Mirror { reference: SessionTranscript },
    UnderTest,
}

pub struct TherapistEngine {
    pub mode: TherapistMode,
    pub llm: Llm,
    pub system_prompt: RenderedPrompt,
}

impl TherapistEngine {
    /// `reference` must come from [`rephrase_session`].
    pub fn mirror(reference: SessionTranscript, llm: Llm, templates: &Templates) -> Result<Self, SimulationError> {
        if !reference.metadata.contains_key("rephrased_from") {
            return Err(SimulationError::NotRephrased(reference.id().to_string()));
        }
        let system_prompt = templates.render(
            prompts::THERAPIST_MIRROR,
            &[("reference_transcript", &reference.render_dialogue())],
        )?;
        Ok(TherapistEngine {
            mode: TherapistMode::Mirror { reference },
            llm,
            system_prompt,
        })
    }

    pub fn under_test(llm: Llm, templates: &Templates) -> Result<Self, SimulationError> {
        Ok(TherapistEngine {
            mode: TherapistMode::UnderTest,
            llm,
            system_prompt: templates.render(prompts::THERAPIST, &[])?,
        })
    }

    pub fn reply(&self, history: &[(Speaker, String)]) -> Result<String, GatewayError> {
        self.llm
            .complete(history_messages(&self.system_prompt.text, history, Speaker::Therapist))
    }

    fn origin(&self) -> Origin {
        match self.mode {
            TherapistMode::Mirror { .. } => Origin::SimClientXLlm,
            TherapistMode::UnderTest => Origin::SimClientXTherapistUnderTest,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionRun {
    pub transcript: SessionTranscript,
    pub termination: Termination,
    pub prompts: Vec<RenderedPrompt>,
    pub error: Option<String>,
}

/// Alternates therapist and client turns, therapist first, until the client
/// repeats itself, the turn limit is reached, or a provider call fails.
pub fn run_session(
    id: &str,
    client: &ClientEngine,
    therapist: &TherapistEngine,
    limits: RunLimits,
) -> Result<SessionRun, SimulationError> {
    limits.validate()?;
    let mut history: Vec<(Speaker, String)> = Vec::new();
    let mut error = None;
    let termination = loop {
        if history.len() >= limits.max_turns {
            break Termination::TurnLimit;
        }
        let speaker = match history.last() {
            Some((Speaker::Therapist, _)) => Speaker::Client,
            _ => Speaker::Therapist,
        };
        let reply = match speaker {
            Speaker::Therapist => therapist.reply(&history),
            Speaker::Client => client.reply(&history),
        };
        match reply {
            Ok(text) => history.push((speaker, text)),
            Err(e) => {
                error = Some(format!("{} turn {}: {e}", speaker, history.len()));
                break Termination::Aborted;
            }
        }
        let client_utterances = history
            .iter()
            .filter(|(s, _)| *s == Speaker::Client)
            .map(|(_, t)| t.as_str());
        if speaker == Speaker::Client && is_repeating(client_utterances, limits.repetition_window) {
            break Termination::Repetition;
        }
    };
    if history.len() < 2 {
        return Err(SimulationError::TooShort {
            id: id.to_string(),
            turns: history.len(),
            error: error.unwrap_or_default(),
        });
    }
    let quality = match therapist.mode {
        TherapistMode::Mirror { .. } => client.reference.quality,
        TherapistMode::UnderTest => Quality::Unlabeled,
    };
    let mut transcript = SessionTranscript::new(id, quality, therapist.origin(), history)?
        .with_reference(client.reference.id())
        .with_meta("termination", termination.as_str())
        .with_meta("client_provider", &client.llm.provider_id)
        .with_meta("client_model", &client.llm.model)
        .with_meta("therapist_provider", &therapist.llm.provider_id)
        .with_meta("therapist_model", &therapist.llm.model);
    transcript.topic = client.reference.topic.clone();
    if let Some(e) = &error {
        transcript = transcript.with_meta("aborted", "true").with_meta("error", e);
    }
    Ok(SessionRun {
        transcript,
        termination,
        prompts: vec![client.system_prompt.clone(), therapist.system_prompt.clone()],
        error,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RephraseOutput {
    pub transcript: SessionTranscript,
    /// Turns whose paraphrase was refused or empty and kept verbatim.
    pub flagged: Vec<usize>,
}

/// Paraphrases every turn, keeping speakers and order. The result is named
/// `<id>-rephrased` and records its source in `rephrased_from`.
pub fn rephrase_session(
    session: &SessionTranscript,
    llm: &Llm,
    templates: &Templates,
) -> Result<RephraseOutput, SimulationError> {
    let system = templates.render(prompts::REPHRASE, &[])?;
    let mut flagged = Vec::new();
    let mut failure = None;
    let rephrased = session.map_texts(|turn| {
        if failure.is_some() {
            return turn.text.clone();
        }
        let msgs = vec![
            ChatMessage::system(&system.text),
            ChatMessage::user(&turn.text),
        ];
        match llm.complete(msgs) {
            Ok(text) => text,
            Err(GatewayError::Refusal(_)) => {
                flagged.push(turn.index);
                turn.text.clone()
            }
            Err(e) => {
                failure = Some(e);
                turn.text.clone()
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    let mut transcript = rephrased
        .renamed(format!("{}-rephrased", session.id()))?
        .with_meta("rephrased_from", session.id());
    transcript.reference_session_id = Some(session.id().to_string());
    if !flagged.is_empty() {
        let list: Vec<String> = flagged.iter().map(|i| i.to_string()).collect();
        transcript = transcript.with_meta("rephrase_kept_original", list.join(","));
    }
    Ok(RephraseOutput { transcript, flagged })
}

// ---------------------------------------------------------------------------
// Interactive sessions with a human therapist

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LiveState {
    Open,
    Ended,
    TimedOut,
}

#[derive(Debug, thiserror::Error)]
pub enum HumanError {
    #[error("session is {0:?}, not open")]
    NotOpen(LiveState),
    #[error("message is empty")]
    EmptyMessage,
    #[error("client engine failed: {0}")]
    Provider(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Exchange {
    pub client_reply: String,
    /// Index of the client's reply turn.
    pub turn_index: usize,
    /// Set when this exchange closed the session.
    pub ended: Option<Termination>,
}

pub struct HumanSession {
    id: String,
    client: ClientEngine,
    limits: RunLimits,
    turns: Vec<(Speaker, String, Option<i64>)>,
    state: LiveState,
    termination: Option<Termination>,
    last_activity: Instant,
}

fn unix_now() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64)
}

impl HumanSession {
    pub fn new(id: impl Into<String>, client: ClientEngine, limits: RunLimits) -> Self {
        HumanSession {
            id: id.into(),
            client,
            limits,
            turns: Vec::new(),
            state: LiveState::Open,
            termination: None,
            last_activity: Instant::now(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> LiveState {
        self.state
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    pub fn client(&self) -> &ClientEngine {
        &self.client
    }

    pub fn turns(&self) -> impl Iterator<Item = (Speaker, &str)> {
        self.turns.iter().map(|(s, t, _)| (*s, t.as_str()))
    }

    pub fn idle_for(&self) -> Duration {
        self.last_activity.elapsed()
    }

    /// Records the therapist's message and the client's reply together; on
    /// a provider error neither is recorded.
    pub fn message(&mut self, text: &str) -> Result<Exchange, HumanError> {
        if self.state != LiveState::Open {
            return Err(HumanError::NotOpen(self.state));
        }
        if text.trim().is_empty() {
            return Err(HumanError::EmptyMessage);
        }
        self.last_activity = Instant::now();
        let mut history: Vec<(Speaker, String)> =
            self.turns.iter().map(|(s, t, _)| (*s, t.clone())).collect();
        history.push((Speaker::Therapist, text.to_string()));
        let reply = self.client.reply(&history)?;
        let now = Some(unix_now());
        self.turns.push((Speaker::Therapist, text.to_string(), now));
        self.turns.push((Speaker::Client, reply.clone(), now));
        let turn_index = self.turns.len() - 1;
        let client_utterances = self
            .turns
            .iter()
            .filter(|(s, _, _)| *s == Speaker::Client)
            .map(|(_, t, _)| t.as_str());
        let ended = if is_repeating(client_utterances, self.limits.repetition_window) {
            Some(Termination::Repetition)
        } else if self.turns.len() >= self.limits.max_turns {
            Some(Termination::TurnLimit)
        } else {
            None
        };
        if let Some(t) = ended {
            self.state = LiveState::Ended;
            self.termination = Some(t);
        }
        Ok(Exchange {
            client_reply: reply,
            turn_index,
            ended,
        })
    }

    /// Idempotent.
    pub fn end(&mut self) {
        if self.state == LiveState::Open {
            self.state = LiveState::Ended;
            self.termination = Some(Termination::HumanEnded);
        }
    }

    pub fn time_out(&mut self) {
        if self.state == LiveState::Open {
            self.state = LiveState::TimedOut;
            self.termination = Some(Termination::Timeout);
        }
    }

    /// The exchanged turns as a transcript; fails with fewer than two turns.
    pub fn transcript(&self) -> Result<SessionTranscript, ModelError> {
        let mut t = SessionTranscript::new_timed(
            self.id.clone(),
            Quality::Unlabeled,
            Origin::SimClientXHuman,
            self.turns.iter().cloned(),
        )?
        .with_reference(self.client.reference.id())
        .with_meta("client_provider", &self.client.llm.provider_id)
        .with_meta("client_model", &self.client.llm.model);
        if let Some(term) = self.termination {
            t = t.with_meta("termination", term.as_str());
        }
        t.topic = self.client.reference.topic.clone();
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HumanEvent {
    Message(String),
    End,
}

/// Drives a human session from a channel of events until the human ends it,
/// a limit closes it, or no event arrives within `idle_timeout`. Each
/// message's outcome is handed to `on_exchange`.
pub fn run_human_session(
    mut session: HumanSession,
    inbox: Receiver<HumanEvent>,
    idle_timeout: Duration,
    mut on_exchange: impl FnMut(Result<Exchange, HumanError>),
) -> Result<SessionRun, SimulationError> {
    while session.state() == LiveState::Open {
        match inbox.recv_timeout(idle_timeout) {
            Ok(HumanEvent::Message(text)) => on_exchange(session.message(&text)),
            Ok(HumanEvent::End) | Err(RecvTimeoutError::Disconnected) => session.end(),
            Err(RecvTimeoutError::Timeout) => session.time_out(),
        }
    }
    let transcript = session.transcript()?;
    Ok(SessionRun {
        transcript,
        termination: session.termination().expect("closed sessions have a termination"),
        prompts: vec![session.client.system_prompt.clone()],
        error: None,
    })
}
