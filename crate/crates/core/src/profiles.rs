//! Psychological profiles, the extraction question plan and answer parsers.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::files;
use crate::instruments::{registry, Registry, Trait, BIG_FIVE_LEVELS};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("profile schema: {0}")]
    Schema(String),
    #[error("profile fields failed: {}", .0.join("; "))]
    Fields(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unparseable {what} answer: {answer:?}")]
pub struct ParseError {
    pub what: &'static str,
    pub answer: String,
}

fn parse_error(what: &'static str, answer: &str) -> ParseError {
    ParseError {
        what,
        answer: answer.chars().take(200).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
    Unidentified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitAssessment {
    /// `None` when the level could not be identified.
    pub level: Option<String>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymptomFinding {
    pub id: String,
    /// Free-text severity phrase as given by the extractor, e.g. "mild".
    pub severity: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileRecord", into = "ProfileRecord")]
pub struct PsychologicalProfile {
    /// `None` means not specified in the session.
    pub name: Option<String>,
    pub gender: Gender,
    pub age_estimate: String,
    pub occupation: Option<String>,
    pub problem: String,
    pub reasons_for_visiting: String,
    pub traits: BTreeMap<Trait, TraitAssessment>,
    pub symptoms: Vec<SymptomFinding>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileRecord {
    schema_version: u32,
    name: Option<String>,
    gender: Gender,
    age_estimate: String,
    occupation: Option<String>,
    problem: String,
    reasons_for_visiting: String,
    traits: BTreeMap<Trait, TraitAssessment>,
    symptoms: Vec<SymptomFinding>,
}

impl TryFrom<ProfileRecord> for PsychologicalProfile {
    type Error = String;

    fn try_from(r: ProfileRecord) -> Result<Self, String> {
        if r.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {}", r.schema_version));
        }
        let p = PsychologicalProfile {
            name: r.name,
            gender: r.gender,
            age_estimate: r.age_estimate,
            occupation: r.occupation,
            problem: r.problem,
            reasons_for_visiting: r.reasons_for_visiting,
            traits: r.traits,
            symptoms: r.symptoms,
        };
        p.validate(registry()).map_err(|errs| errs.join("; "))?;
        Ok(p)
    }
}

impl From<PsychologicalProfile> for ProfileRecord {
    fn from(p: PsychologicalProfile) -> Self {
        ProfileRecord {
            schema_version: SCHEMA_VERSION,
            name: p.name,
            gender: p.gender,
            age_estimate: p.age_estimate,
            occupation: p.occupation,
            problem: p.problem,
            reasons_for_visiting: p.reasons_for_visiting,
            traits: p.traits,
            symptoms: p.symptoms,
        }
    }
}

impl PsychologicalProfile {
    /// Field-level problems; empty when the profile is valid.
    pub fn validate(&self, registry: &Registry) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.problem.trim().is_empty() {
            errs.push("problem is empty".to_string());
        }
        if self.reasons_for_visiting.trim().is_empty() {
            errs.push("reasons_for_visiting is empty".to_string());
        }
        for t in Trait::ALL {
            match self.traits.get(&t) {
                None => errs.push(format!("trait {} missing", t.label())),
                Some(TraitAssessment { level: Some(l), .. }) if t.level_index(l).is_none() => {
                    errs.push(format!("trait {} has unknown level {l:?}", t.label()))
                }
                Some(_) => {}
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.symptoms {
            if registry.symptom(&s.id).is_none() {
                errs.push(format!("unknown symptom id {:?}", s.id));
            }
            if !seen.insert(&s.id) {
                errs.push(format!("duplicate symptom id {:?}", s.id));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn trait_level(&self, t: Trait) -> Option<&str> {
        self.traits.get(&t).and_then(|a| a.level.as_deref())
    }

    pub fn symptom_ids(&self) -> impl Iterator<Item = &str> {
        self.symptoms.iter().map(|s| s.id.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ProfileError> {
        serde_json::from_str(json).map_err(|e| ProfileError::Schema(e.to_string()))
    }

    /// Plain-text rendering used inside prompts.
    pub fn render(&self, registry: &Registry) -> String {
        let mut out = String::new();
        let or_ns = |v: &Option<String>| v.clone().unwrap_or_else(|| "Not Specified".into());
        out += &format!("Name: {}\n", or_ns(&self.name));
        out += &format!(
            "Gender: {}\n",
            match self.gender {
                Gender::Male => "Male",
                Gender::Female => "Female",
                Gender::Unidentified => "Cannot be identified",
            }
        );
        out += &format!("Age: {}\n", self.age_estimate);
        out += &format!("Occupation: {}\n", or_ns(&self.occupation));
        out += &format!("Problem: {}\n", self.problem);
        out += &format!("Reasons for Visiting: {}\n", self.reasons_for_visiting);
        out += "Apparent Traits:\n";
        for (t, a) in &self.traits {
            let level = a.level.as_deref().unwrap_or("Cannot be identified");
            out += &format!("- {} is {}. {}\n", t.label(), level, a.rationale);
        }
        out += "Symptoms:\n";
        if self.symptoms.is_empty() {
            out += "- None identified\n";
        }
        for s in &self.symptoms {
            let text = registry.symptom(&s.id).map_or(s.id.as_str(), |d| d.text.as_str());
            out += &format!("- {text} (severity: {}): {}\n", s.severity, s.rationale);
        }
        out
    }
}

pub fn profile_path(root: &Path, session_id: &str) -> PathBuf {
    root.join("profiles").join(format!("{session_id}.json"))
}

pub fn save_profile(root: &Path, session_id: &str, profile: &PsychologicalProfile) -> Result<PathBuf, ProfileError> {
    let path = profile_path(root, session_id);
    files::write_json_atomic(&path, profile).map_err(|source| ProfileError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn load_profile(root: &Path, session_id: &str) -> Result<PsychologicalProfile, ProfileError> {
    let path = profile_path(root, session_id);
    let text = std::fs::read_to_string(&path).map_err(|source| ProfileError::Io {
        path: path.clone(),
        source,
    })?;
    PsychologicalProfile::from_json(&text)
}

// ---------------------------------------------------------------------------
// Extraction plan

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileField {
    Name,
    Gender,
    Age,
    Occupation,
    Problem,
    Reasons,
    Trait(Trait),
    Symptom(String),
}

impl fmt::Display for ProfileField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileField::Name => f.write_str("name"),
            ProfileField::Gender => f.write_str("gender"),
            ProfileField::Age => f.write_str("age"),
            ProfileField::Occupation => f.write_str("occupation"),
            ProfileField::Problem => f.write_str("problem"),
            ProfileField::Reasons => f.write_str("reasons"),
            ProfileField::Trait(t) => write!(f, "trait:{}", t.abbrev()),
            ProfileField::Symptom(id) => write!(f, "symptom:{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParserId {
    NameOrNotSpecified,
    Gender,
    FreeText,
    TraitLevel,
    Symptom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtractionQuery {
    pub field: ProfileField,
    pub question_text: String,
    pub parser: ParserId,
}

const NAME_Q: &str = "what is the name of this client? Answer with only the name or 'Not Specified'";
const GENDER_Q: &str = "What is the most probable gender of this client based on information, such as the client's name and the pronoun used in the conversation? Answer with only 'Male', 'Female', or 'Cannot be identified'";
const AGE_Q: &str = "Estimate the client's age from the conversation. If unsure, please provide a brief estimate or respond with 'unclear'. Begin your answer with an estimated age, followed by one sentence explanation";
const OCCUPATION_Q: &str = "What is the client's occupation? If unsure, please provide a brief estimate or respond with 'unclear'. Answer with only the occupation or 'Not Specified'.";
const PROBLEM_Q: &str = "What is the main problem the client is currently facing? Begin your answer with the problem type, followed by a short and straightforward explanation. Example problem types: relationship, weight control, school-related issues, etc";
const REASONS_Q: &str = "What are the reasons for the client's visit to the therapist? Provide a brief and clear explanation, starting with 'The client is visiting the therapist because.'";
const THREE_LEVEL_TAIL: &str = "Choose one of the following options: Low, Medium, High, or Cannot be identified. Begin your answer with the level, followed by a concise and straightforward one-sentence explanation";
const SYMPTOM_Q: &str = "Based on this conversation, determine whether the client exhibits the listed symptoms. If yes, estimate the symptom's severity. If no, respond with 'Cannot be identified.' Begin your response with 'The severity is approximately [severity level].' or 'Cannot be identified.', followed by a brief and clear explanation. This assessment will be used for client simulation.";

fn trait_meaning(t: Trait) -> &'static str {
    match t {
        Trait::Openness => "Openness describes how curious, imaginative and willing to try new ideas and experiences a person is.",
        Trait::Conscientiousness => "Conscientiousness describes how organized, dependable, disciplined and goal-directed a person is.",
        Trait::Extraversion => "Extraversion describes how sociable, talkative, assertive and energized by the company of others a person is.",
        Trait::Agreeableness => "Agreeableness describes how cooperative, trusting, kind and considerate toward others a person is.",
        Trait::Neuroticism => "Neuroticism describes how prone a person is to negative emotions such as anxiety, anger, sadness and emotional instability.",
        _ => "",
    }
}

fn trait_question(t: Trait) -> String {
    match t {
        Trait::EmotionFluctuation => {
            format!("Identify how frequently the client's emotions fluctuate. {THREE_LEVEL_TAIL}")
        }
        Trait::UnwillingnessToExpress => format!(
            "Identify the level of the client's unwillingness to express feelings. {THREE_LEVEL_TAIL}"
        ),
        Trait::ResistanceTowardTherapist => format!(
            "Identify the level of resistance of the client towards the therapist. {THREE_LEVEL_TAIL}."
        ),
        big => format!(
            "{} Identify the client's level of {}. Choose one of the following options: 0~20%, 21~40%, 41~60%, 61~80% or 81~100%.",
            trait_meaning(big),
            big.label().to_lowercase()
        ),
    }
}

/// The 75 extraction queries in fixed order: demographics and problem,
/// the eight traits, then one per symptom descriptor.
pub fn extraction_plan(registry: &Registry) -> Vec<ExtractionQuery> {
    let q = |field, text: &str, parser| ExtractionQuery {
        field,
        question_text: text.to_string(),
        parser,
    };
    let mut plan = vec![
        q(ProfileField::Name, NAME_Q, ParserId::NameOrNotSpecified),
        q(ProfileField::Gender, GENDER_Q, ParserId::Gender),
        q(ProfileField::Age, AGE_Q, ParserId::FreeText),
        q(ProfileField::Occupation, OCCUPATION_Q, ParserId::NameOrNotSpecified),
        q(ProfileField::Problem, PROBLEM_Q, ParserId::FreeText),
        q(ProfileField::Reasons, REASONS_Q, ParserId::FreeText),
    ];
    for t in Trait::ALL {
        plan.push(q(ProfileField::Trait(t), &trait_question(t), ParserId::TraitLevel));
    }
    for s in registry.symptoms() {
        plan.push(q(
            ProfileField::Symptom(s.id.clone()),
            &format!("{SYMPTOM_Q}\nSymptom: {}", s.text),
            ParserId::Symptom,
        ));
    }
    plan
}

// ---------------------------------------------------------------------------
// Parsers

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum SymptomAnswer {
    Present { severity: String, rationale: String },
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ParsedAnswer {
    Name(Option<String>),
    Gender(Gender),
    Text(String),
    Trait(TraitAssessment),
    Symptom(SymptomAnswer),
}

static CANNOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)cannot\s+be\s+identified").unwrap());
static RANGE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(\d{1,3})\s*%?\s*(?:-|~|–|—|∼|to)\s*(\d{1,3})\s*%").unwrap()
});
static THREE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(low|medium|high)\b").unwrap());
static SEVERITY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)the\s+severity\s+is\s+approximately\s+([^.\n]+?)\s*(?:\.|\n|$)").unwrap()
});

fn trimmed(answer: &str) -> &str {
    answer.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`').trim()
}

/// Text after the sentence that contains byte offset `from`.
fn remainder_after(answer: &str, from: usize) -> String {
    match answer[from..].find(". ").or_else(|| answer[from..].find(".\n")) {
        Some(i) => answer[from + i + 1..].trim().to_string(),
        None => String::new(),
    }
}

fn big_five_bucket(lo: u32, hi: u32) -> Option<&'static str> {
    let i = match lo {
        0 => 0,
        20 | 21 => 1,
        40 | 41 => 2,
        60 | 61 => 3,
        80 | 81 => 4,
        _ => return None,
    };
    (hi == 20 * (i as u32 + 1)).then_some(BIG_FIVE_LEVELS[i])
}

/// First level token in the answer; `None` level for "Cannot be identified".
/// Percentage ranges may be written with `-`, `~` or `–`, and a bucket may be
/// named by its round lower bound ("60-80%" means "61-80%").
pub fn parse_trait_level(t: Trait, answer: &str) -> Result<TraitAssessment, ParseError> {
    let cannot = CANNOT.find(answer).map(|m| (m.start(), m.end()));
    let level = if t.is_big_five() {
        RANGE.captures_iter(answer).find_map(|c| {
            let lo = c[1].parse().ok()?;
            let hi = c[2].parse().ok()?;
            let m = c.get(0)?;
            big_five_bucket(lo, hi).map(|l| (m.start(), m.end(), l))
        })
    } else {
        THREE.find(answer).map(|m| {
            let idx = ["low", "medium", "high"]
                .iter()
                .position(|l| m.as_str().eq_ignore_ascii_case(l))
                .expect("regex alternatives");
            (m.start(), m.end(), t.levels()[idx])
        })
    };
    let (level, end) = match (level, cannot) {
        (Some((s, e, l)), Some((cs, _))) if s < cs => (Some(l), e),
        (Some((_, e, l)), None) => (Some(l), e),
        (_, Some((_, ce))) => (None, ce),
        (None, None) => return Err(parse_error("trait level", answer)),
    };
    Ok(TraitAssessment {
        level: level.map(str::to_string),
        rationale: remainder_after(answer, end),
    })
}

pub fn parse_symptom_answer(answer: &str) -> Result<SymptomAnswer, ParseError> {
    let cannot = CANNOT.find(answer).map(|m| m.start());
    let sev = SEVERITY.captures(answer);
    match (sev, cannot) {
        (Some(c), cannot) if cannot.is_none_or(|cs| c.get(0).unwrap().start() < cs) => {
            let m = c.get(0).unwrap();
            Ok(SymptomAnswer::Present {
                severity: c[1].trim().to_string(),
                rationale: answer[m.end()..].trim().to_string(),
            })
        }
        (_, Some(_)) => Ok(SymptomAnswer::Absent),
        _ => Err(parse_error("symptom", answer)),
    }
}

fn parse_name(answer: &str) -> Result<Option<String>, ParseError> {
    let a = trimmed(answer).trim_end_matches('.').trim();
    if a.is_empty() {
        return Err(parse_error("name", answer));
    }
    let lower = a.to_lowercase();
    if lower == "not specified" || lower == "unclear" || CANNOT.is_match(a) {
        return Ok(None);
    }
    Ok(Some(a.to_string()))
}

fn parse_gender(answer: &str) -> Result<Gender, ParseError> {
    let a = trimmed(answer).to_lowercase();
    if a.starts_with("female") {
        Ok(Gender::Female)
    } else if a.starts_with("male") {
        Ok(Gender::Male)
    } else if CANNOT.find(&a).is_some_and(|m| m.start() == 0) {
        Ok(Gender::Unidentified)
    } else {
        Err(parse_error("gender", answer))
    }
}

impl ExtractionQuery {
    pub fn parse(&self, answer: &str) -> Result<ParsedAnswer, ParseError> {
        match (self.parser, &self.field) {
            (ParserId::NameOrNotSpecified, _) => parse_name(answer).map(ParsedAnswer::Name),
            (ParserId::Gender, _) => parse_gender(answer).map(ParsedAnswer::Gender),
            (ParserId::FreeText, _) => {
                let a = trimmed(answer);
                if a.is_empty() {
                    Err(parse_error("text", answer))
                } else {
                    Ok(ParsedAnswer::Text(a.to_string()))
                }
            }
            (ParserId::TraitLevel, ProfileField::Trait(t)) => {
                parse_trait_level(*t, answer).map(ParsedAnswer::Trait)
            }
            (ParserId::Symptom, _) => parse_symptom_answer(answer).map(ParsedAnswer::Symptom),
            (ParserId::TraitLevel, _) => Err(parse_error("trait level", answer)),
        }
    }

    /// What to record when both attempts fail to parse. Problem and reasons
    /// have no fallback; assembly then reports them.
    pub fn fallback(&self) -> Option<ParsedAnswer> {
        match &self.field {
            ProfileField::Name | ProfileField::Occupation => Some(ParsedAnswer::Name(None)),
            ProfileField::Gender => Some(ParsedAnswer::Gender(Gender::Unidentified)),
            ProfileField::Age => Some(ParsedAnswer::Text("unclear".into())),
            ProfileField::Problem | ProfileField::Reasons => None,
            ProfileField::Trait(_) => Some(ParsedAnswer::Trait(TraitAssessment {
                level: None,
                rationale: String::new(),
            })),
            ProfileField::Symptom(_) => Some(ParsedAnswer::Symptom(SymptomAnswer::Absent)),
        }
    }
}

/// Collects parsed answers and builds a validated profile.
#[derive(Debug, Default)]
pub struct ProfileAssembler {
    answers: BTreeMap<ProfileField, ParsedAnswer>,
}

impl ProfileAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, field: ProfileField, answer: ParsedAnswer) {
        self.answers.insert(field, answer);
    }

    pub fn finish(self, registry: &Registry) -> Result<PsychologicalProfile, ProfileError> {
        let mut errs = Vec::new();
        let mut take = |f: ProfileField| {
            let v = self.answers.get(&f).cloned();
            if v.is_none() {
                errs.push(format!("{f}: no answer"));
            }
            v
        };
        let name = match take(ProfileField::Name) {
            Some(ParsedAnswer::Name(n)) => n,
            _ => None,
        };
        let occupation = match take(ProfileField::Occupation) {
            Some(ParsedAnswer::Name(n)) => n,
            _ => None,
        };
        let gender = match take(ProfileField::Gender) {
            Some(ParsedAnswer::Gender(g)) => g,
            _ => Gender::Unidentified,
        };
        let text = |a: Option<ParsedAnswer>| match a {
            Some(ParsedAnswer::Text(t)) => t,
            _ => String::new(),
        };
        let age_estimate = text(take(ProfileField::Age));
        let problem = text(take(ProfileField::Problem));
        let reasons_for_visiting = text(take(ProfileField::Reasons));
        let mut traits = BTreeMap::new();
        for t in Trait::ALL {
            if let Some(ParsedAnswer::Trait(a)) = take(ProfileField::Trait(t)) {
                traits.insert(t, a);
            }
        }
        let mut symptoms = Vec::new();
        for s in registry.symptoms() {
            if let Some(ParsedAnswer::Symptom(SymptomAnswer::Present { severity, rationale })) =
                take(ProfileField::Symptom(s.id.clone()))
            {
                symptoms.push(SymptomFinding {
                    id: s.id.clone(),
                    severity,
                    rationale,
                });
            }
        }
        let profile = PsychologicalProfile {
            name,
            gender,
            age_estimate,
            occupation,
            problem,
            reasons_for_visiting,
            traits,
            symptoms,
        };
        if let Err(more) = profile.validate(registry) {
            errs.extend(more);
        }
        if errs.is_empty() {
            Ok(profile)
        } else {
            Err(ProfileError::Fields(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PsychologicalProfile {
        let mut traits = BTreeMap::new();
        for t in Trait::ALL {
            traits.insert(
                t,
                TraitAssessment {
                    level: Some(t.levels()[0].to_string()),
                    rationale: "because".into(),
                },
            );
        }
        traits.get_mut(&Trait::Neuroticism).unwrap().level = None;
        PsychologicalProfile {
            name: Some("Ricky".into()),
            gender: Gender::Male,
            age_estimate: "Late 20s.".into(),
            occupation: None,
            problem: "Substance abuse.".into(),
            reasons_for_visiting: "The client is visiting the therapist because of friends.".into(),
            traits,
            symptoms: vec![SymptomFinding {
                id: "phq9.2".into(),
                severity: "mild".into(),
                rationale: "stuck".into(),
            }],
        }
    }

    #[test]
    fn plan_shape() {
        let plan = extraction_plan(registry());
        assert_eq!(plan.len(), 75);
        assert_eq!(plan.iter().filter(|q| q.parser == ParserId::Symptom).count(), 61);
        assert!(plan[14..]
            .iter()
            .all(|q| q.question_text.starts_with("Based on this conversation, determine whether the client exhibits")));
        let ef = plan
            .iter()
            .find(|q| q.field == ProfileField::Trait(Trait::EmotionFluctuation))
            .unwrap();
        assert!(ef.question_text.contains("options: Low, Medium, High, or Cannot be identified"));
        let o = plan.iter().find(|q| q.field == ProfileField::Trait(Trait::Openness)).unwrap();
        assert!(o.question_text.starts_with("Openness describes"));
        assert_eq!(plan, extraction_plan(registry()));
    }

    #[test]
    fn trait_parsing() {
        let a = parse_trait_level(Trait::Openness, "Openness is approximately 0-20%. The client appears rigid.").unwrap();
        assert_eq!(a.level.as_deref(), Some("0-20%"));
        assert_eq!(a.rationale, "The client appears rigid.");
        for (answer, want) in [
            ("Extraversion is approximately 60-80%, moderate.", "61-80%"),
            ("21~40%", "21-40%"),
            ("41 – 60 %", "41-60%"),
            ("about 81%-100%", "81-100%"),
        ] {
            assert_eq!(parse_trait_level(Trait::Extraversion, answer).unwrap().level.as_deref(), Some(want));
        }
        let m = parse_trait_level(Trait::EmotionFluctuation, "Medium. The client's emotions shift.").unwrap();
        assert_eq!(m.level.as_deref(), Some("Medium"));
        let u = parse_trait_level(Trait::Openness, "Cannot be identified. Too short.").unwrap();
        assert_eq!(u.level, None);
        assert!(parse_trait_level(Trait::Neuroticism, "hello").is_err());
        assert!(parse_trait_level(Trait::Neuroticism, "Medium").is_err());
        assert!(parse_trait_level(Trait::Openness, "age 20-25%").is_err());
    }

    #[test]
    fn symptom_parsing() {
        assert_eq!(parse_symptom_answer("Cannot be identified.").unwrap(), SymptomAnswer::Absent);
        assert_eq!(
            parse_symptom_answer("The severity is approximately mild. He mentions missing auditions.").unwrap(),
            SymptomAnswer::Present {
                severity: "mild".into(),
                rationale: "He mentions missing auditions.".into()
            }
        );
        assert!(parse_symptom_answer("Maybe.").is_err());
    }

    #[test]
    fn demographic_parsing() {
        let plan = extraction_plan(registry());
        assert_eq!(plan[0].parse("Ricky").unwrap(), ParsedAnswer::Name(Some("Ricky".into())));
        assert_eq!(plan[0].parse("Not Specified.").unwrap(), ParsedAnswer::Name(None));
        assert_eq!(plan[1].parse("Female").unwrap(), ParsedAnswer::Gender(Gender::Female));
        assert_eq!(plan[1].parse("Male.").unwrap(), ParsedAnswer::Gender(Gender::Male));
        assert_eq!(
            plan[1].parse("Cannot be identified").unwrap(),
            ParsedAnswer::Gender(Gender::Unidentified)
        );
        assert!(plan[1].parse("probably a man").is_err());
        assert!(plan[4].parse("  ").is_err());
    }

    #[test]
    fn json_round_trip_and_schema_errors() {
        let p = sample();
        let json = p.to_json();
        assert!(json.contains("\"schema_version\": 1"));
        assert_eq!(PsychologicalProfile::from_json(&json).unwrap(), p);

        let bad = json.replace("phq9.2", "phq9.99");
        assert!(matches!(PsychologicalProfile::from_json(&bad), Err(ProfileError::Schema(_))));

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v.as_object_mut().unwrap().remove("traits");
        assert!(PsychologicalProfile::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn assembler_reports_missing_fields() {
        let plan = extraction_plan(registry());
        let mut asm = ProfileAssembler::new();
        for q in &plan {
            if q.field != ProfileField::Problem {
                asm.set(q.field.clone(), q.fallback().unwrap_or(ParsedAnswer::Text("x".into())));
            }
        }
        match asm.finish(registry()) {
            Err(ProfileError::Fields(errs)) => assert!(errs.iter().any(|e| e.starts_with("problem"))),
            other => panic!("{other:?}"),
        }
    }

    proptest::proptest! {
        #[test]
        fn parsers_never_panic(s in "\\PC{0,80}") {
            for t in Trait::ALL {
                let _ = parse_trait_level(t, &s);
            }
            let _ = parse_symptom_answer(&s);
            for q in extraction_plan(registry()).iter().take(14) {
                let _ = q.parse(&s);
            }
        }
    }
}
