//! Deterministic scripted providers for tests and offline runs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, GatewayError, Provider, Role};
use crate::instruments::{registry, InstrumentId, Item, ItemRef};
use crate::scoring::{AROUSAL, DEPTH, POSITIVITY, SMOOTHNESS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Reply {
    Text(String),
    /// `{n}` is replaced by the number of non-system messages in the request.
    Numbered(String),
    /// Answers questionnaire items from quality markers in the conversation.
    Rubric,
    Refuse,
    Fail(String),
}

impl Reply {
    pub fn text(s: impl Into<String>) -> Self {
        Reply::Text(s.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    LastUser,
    System,
    Anywhere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub contains: String,
    #[serde(default)]
    pub scope: Scope,
    pub reply: Reply,
}

impl Rule {
    pub fn contains(needle: impl Into<String>, reply: Reply) -> Self {
        Rule {
            contains: needle.into(),
            scope: Scope::LastUser,
            reply,
        }
    }

    pub fn in_system(needle: impl Into<String>, reply: Reply) -> Self {
        Rule {
            contains: needle.into(),
            scope: Scope::System,
            reply,
        }
    }

    fn matches(&self, req: &ChatRequest) -> bool {
        let hit = |role: Option<Role>| {
            req.messages
                .iter()
                .filter(|m| role.is_none_or(|r| m.role == r))
                .any(|m| m.content.contains(&self.contains))
        };
        match self.scope {
            Scope::LastUser => req.last_user().contains(&self.contains),
            Scope::System => hit(Some(Role::System)),
            Scope::Anywhere => hit(None),
        }
    }
}

/// First matching rule wins; otherwise the default reply. Stateless, so the
/// same request always gets the same answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedMock {
    pub rules: Vec<Rule>,
    pub default: Reply,
}

impl ScriptedMock {
    pub fn new(rules: Vec<Rule>, default: impl Into<String>) -> Self {
        ScriptedMock {
            rules,
            default: Reply::Text(default.into()),
        }
    }

    /// Plausible answers for every prompt the pipeline sends: profile
    /// extraction, rephrasing, client and therapist turns, and rubric-rated
    /// questionnaire items.
    pub fn pipeline() -> Self {
        let t = |s: &str, r: &str| Rule::contains(s, Reply::text(r));
        ScriptedMock {
            rules: vec![
                Rule::contains("Questionnaire:", Reply::Rubric),
                Rule::in_system("Rephrase the utterance", Reply::Numbered("[rephrased] Line {n} of the session.".into())),
                Rule::in_system(
                    "You are the client",
                    Reply::Numbered("I guess so. That is my answer number {n}.".into()),
                ),
                Rule::in_system(
                    "You are the therapist",
                    Reply::Numbered("Tell me more about that, it matters. (turn {n})".into()),
                ),
                t("what is the name of this client", "Not Specified"),
                t("most probable gender", "Cannot be identified"),
                t("Estimate the client's age", "Adult. The conversation offers few cues about age."),
                t("client's occupation", "Not Specified"),
                t(
                    "main problem the client",
                    "Behavior change. The client is weighing whether to change a habit that worries the people around them.",
                ),
                t(
                    "reasons for the client's visit",
                    "The client is visiting the therapist because others encouraged them to talk about the habit.",
                ),
                t("0~20%", "41-60%. The conversation shows a moderate level of this trait."),
                t("Cannot be identified. Begin your answer with the level", "Medium. The client shows a moderate level."),
                t("determine whether the client exhibits", "Cannot be identified."),
            ],
            default: Reply::Text("Okay.".into()),
        }
    }

    pub fn reply_for(&self, req: &ChatRequest) -> &Reply {
        self.rules
            .iter()
            .find(|r| r.matches(req))
            .map_or(&self.default, |r| &r.reply)
    }
}

impl Provider for ScriptedMock {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        match self.reply_for(request) {
            Reply::Text(s) => Ok(s.clone()),
            Reply::Numbered(s) => {
                let n = request.messages.iter().filter(|m| m.role != Role::System).count();
                Ok(s.replace("{n}", &n.to_string()))
            }
            Reply::Rubric => Ok(rubric_answer(request)),
            Reply::Refuse => Err(GatewayError::Refusal("scripted refusal".into())),
            Reply::Fail(msg) => Err(GatewayError::Transport(msg.clone())),
        }
    }
}

/// Marker embedded in synthetic sessions to steer the rubric client.
pub const HIGH_MARKER: &str = "[quality:high]";
pub const LOW_MARKER: &str = "[quality:low]";

fn field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(key))
        .map(str::trim)
}

fn right_pole_favorable(right: &str) -> bool {
    let flipped = [DEPTH, SMOOTHNESS, POSITIVITY, AROUSAL]
        .iter()
        .flatten()
        .any(|(adj, flip)| *adj == right && *flip);
    !flipped
}

fn favorable_raw(item: &Item) -> i64 {
    let right_good = match &item.poles {
        Some((_, right)) => right_pole_favorable(right),
        None => !item.negatively_phrased,
    };
    if right_good {
        item.scale_max
    } else {
        item.scale_min
    }
}

/// Rates an item at the favorable end for `[quality:high]` conversations and
/// the unfavorable end for `[quality:low]` ones, one step inward for about
/// half of the (conversation, item) pairs. Unmarked conversations get the
/// scale midpoint.
pub fn rubric_answer(req: &ChatRequest) -> String {
    let prompt = req.last_user();
    let item = field(prompt, "Questionnaire:")
        .and_then(|id| id.parse::<InstrumentId>().ok())
        .zip(field(prompt, "Item:").and_then(|r| r.parse::<ItemRef>().ok()))
        .and_then(|(id, r)| registry().instrument(id).item(&r));
    let Some(item) = item else {
        return "I cannot tell which item this is.".into();
    };
    let context: String = req.messages.iter().map(|m| m.content.as_str()).collect();
    let high = context.contains(HIGH_MARKER);
    let low = context.contains(LOW_MARKER);
    let wobble = {
        let h = Sha256::digest(format!("{context}\u{0}{}{}", item.instrument, item.item_ref()));
        (h[0] & 1) as i64
    };
    let good = favorable_raw(item);
    let bad = item.scale_min + item.scale_max - good;
    let toward = |from: i64, to: i64| from + (to - from).signum() * wobble;
    let (raw, why) = if high && !low {
        (toward(good, bad), "The therapist listened closely and I felt understood and hopeful.")
    } else if low && !high {
        (toward(bad, good), "The therapist did not really listen and I felt frustrated and unsure.")
    } else {
        ((item.scale_min + item.scale_max) / 2, "The session felt neither especially good nor bad.")
    };
    format!("{raw}. {why}")
}
