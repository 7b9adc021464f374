//! Session transcripts, corpus ingestion and the file-backed session store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::files;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("transcript id must be non-empty and file-name safe, got {0:?}")]
    BadId(String),
    #[error("transcript needs at least 2 turns, got {0}")]
    TooFewTurns(usize),
    #[error("turn {0} has empty text")]
    EmptyTurn(usize),
    #[error("unknown {kind} {value:?}")]
    UnknownLabel { kind: &'static str, value: String },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session {0} already exists")]
    Conflict(String),
    #[error("session {0} not found")]
    NotFound(String),
    #[error("invalid transcript: {0}")]
    Invalid(#[from] ModelError),
    #[error("store i/o on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Client,
    Therapist,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Client => "Client",
            Speaker::Therapist => "Therapist",
        })
    }
}

impl FromStr for Speaker {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "client" | "c" | "patient" => Ok(Speaker::Client),
            "therapist" | "t" | "counselor" | "counsellor" => Ok(Speaker::Therapist),
            _ => Err(ModelError::UnknownLabel {
                kind: "speaker",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    High,
    Low,
    Unlabeled,
}

impl FromStr for Quality {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(Quality::High),
            "low" => Ok(Quality::Low),
            "unlabeled" | "" => Ok(Quality::Unlabeled),
            _ => Err(ModelError::UnknownLabel {
                kind: "quality",
                value: s.to_string(),
            }),
        }
    }
}

/// Where a transcript came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Corpus,
    #[serde(rename = "sim-client-x-llm")]
    SimClientXLlm,
    SimClientXHuman,
    SimClientXTherapistUnderTest,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Corpus => "corpus",
            Origin::SimClientXLlm => "sim-client-x-llm",
            Origin::SimClientXHuman => "sim-client-x-human",
            Origin::SimClientXTherapistUnderTest => "sim-client-x-therapist-under-test",
        }
    }

    pub const ALL: [Origin; 4] = [
        Origin::Corpus,
        Origin::SimClientXLlm,
        Origin::SimClientXHuman,
        Origin::SimClientXTherapistUnderTest,
    ];
}

impl FromStr for Origin {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Origin::ALL
            .into_iter()
            .find(|o| o.as_str() == s.trim())
            .ok_or_else(|| ModelError::UnknownLabel {
                kind: "origin",
                value: s.to_string(),
            })
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    /// UTC seconds.
    pub created_at: Option<i64>,
}

/// One counseling session. Construct through [`SessionTranscript::new`] or
/// deserialization; both enforce the invariants (non-empty file-safe id,
/// at least two turns, no blank turn text).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TranscriptRecord", into = "TranscriptRecord")]
pub struct SessionTranscript {
    id: String,
    turns: Vec<Turn>,
    pub quality: Quality,
    pub origin: Origin,
    pub reference_session_id: Option<String>,
    pub topic: Option<String>,
    pub metadata: BTreeMap<String, String>,
}

impl SessionTranscript {
    pub fn new(
        id: impl Into<String>,
        quality: Quality,
        origin: Origin,
        turns: impl IntoIterator<Item = (Speaker, String)>,
    ) -> Result<Self, ModelError> {
        let turns = turns
            .into_iter()
            .enumerate()
            .map(|(index, (speaker, text))| Turn {
                index,
                speaker,
                text,
                created_at: None,
            })
            .collect();
        Self::from_turns(id.into(), quality, origin, turns)
    }

    /// Like [`SessionTranscript::new`] with a creation time per turn.
    pub fn new_timed(
        id: impl Into<String>,
        quality: Quality,
        origin: Origin,
        turns: impl IntoIterator<Item = (Speaker, String, Option<i64>)>,
    ) -> Result<Self, ModelError> {
        let turns = turns
            .into_iter()
            .enumerate()
            .map(|(index, (speaker, text, created_at))| Turn {
                index,
                speaker,
                text,
                created_at,
            })
            .collect();
        Self::from_turns(id.into(), quality, origin, turns)
    }

    fn from_turns(
        id: String,
        quality: Quality,
        origin: Origin,
        turns: Vec<Turn>,
    ) -> Result<Self, ModelError> {
        if !files::is_safe_id(&id) {
            return Err(ModelError::BadId(id));
        }
        validate_turns(&turns)?;
        Ok(SessionTranscript {
            id,
            turns,
            quality,
            origin,
            reference_session_id: None,
            topic: None,
            metadata: BTreeMap::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn with_reference(mut self, reference_session_id: impl Into<String>) -> Self {
        self.reference_session_id = Some(reference_session_id.into());
        self
    }

    pub fn with_topic(mut self, topic: impl Into<String>) -> Self {
        self.topic = Some(topic.into());
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    /// Same session under a new id.
    pub fn renamed(&self, id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        if !files::is_safe_id(&id) {
            return Err(ModelError::BadId(id));
        }
        Ok(SessionTranscript { id, ..self.clone() })
    }

    /// Replace the text of every turn, keeping speakers and order.
    pub fn map_texts(&self, mut f: impl FnMut(&Turn) -> String) -> Result<Self, ModelError> {
        let turns: Vec<Turn> = self
            .turns
            .iter()
            .map(|t| Turn {
                text: f(t),
                ..t.clone()
            })
            .collect();
        validate_turns(&turns)?;
        Ok(SessionTranscript {
            turns,
            ..self.clone()
        })
    }

    pub fn speakers(&self) -> Vec<Speaker> {
        self.turns.iter().map(|t| t.speaker).collect()
    }

    /// Newline-joined text of one speaker's turns, in order.
    pub fn speaker_text(&self, speaker: Speaker) -> String {
        self.turns
            .iter()
            .filter(|t| t.speaker == speaker)
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn client_text(&self) -> String {
        self.speaker_text(Speaker::Client)
    }

    pub fn therapist_text(&self) -> String {
        self.speaker_text(Speaker::Therapist)
    }

    pub fn utterances(&self, speaker: Speaker) -> impl Iterator<Item = &str> {
        self.turns
            .iter()
            .filter(move |t| t.speaker == speaker)
            .map(|t| t.text.as_str())
    }

    /// "Therapist: ...\nClient: ..." rendering used inside prompts.
    pub fn render_dialogue(&self) -> String {
        render_turns(&self.turns)
    }
}

pub fn render_turns(turns: &[Turn]) -> String {
    turns
        .iter()
        .map(|t| format!("{}: {}", t.speaker, t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn validate_turns(turns: &[Turn]) -> Result<(), ModelError> {
    if turns.len() < 2 {
        return Err(ModelError::TooFewTurns(turns.len()));
    }
    for (i, t) in turns.iter().enumerate() {
        if t.text.trim().is_empty() {
            return Err(ModelError::EmptyTurn(i));
        }
        debug_assert_eq!(t.index, i);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TurnRecord {
    speaker: Speaker,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_at: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TranscriptRecord {
    id: String,
    quality: Quality,
    #[serde(default = "default_origin")]
    origin: Origin,
    #[serde(default)]
    topic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_session_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
    turns: Vec<TurnRecord>,
}

fn default_origin() -> Origin {
    Origin::Corpus
}

impl TryFrom<TranscriptRecord> for SessionTranscript {
    type Error = ModelError;

    fn try_from(r: TranscriptRecord) -> Result<Self, Self::Error> {
        let turns = r
            .turns
            .into_iter()
            .enumerate()
            .map(|(index, t)| Turn {
                index,
                speaker: t.speaker,
                text: t.text,
                created_at: t.created_at,
            })
            .collect();
        let mut s = SessionTranscript::from_turns(r.id, r.quality, r.origin, turns)?;
        s.topic = r.topic;
        s.reference_session_id = r.reference_session_id;
        s.metadata = r.metadata;
        Ok(s)
    }
}

impl From<SessionTranscript> for TranscriptRecord {
    fn from(s: SessionTranscript) -> Self {
        TranscriptRecord {
            id: s.id,
            quality: s.quality,
            origin: s.origin,
            topic: s.topic,
            reference_session_id: s.reference_session_id,
            metadata: s.metadata,
            turns: s
                .turns
                .into_iter()
                .map(|t| TurnRecord {
                    speaker: t.speaker,
                    text: t.text,
                    created_at: t.created_at,
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Ingestion

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// `.json` files holding one transcript object or an array of them.
    TranscriptJson,
    /// `.csv` files with a `speaker,text` header, one session per file. The
    /// file stem is the session id; a parent directory named `high` or `low`
    /// sets the quality label.
    TwoColumnCsv,
}

impl FromStr for CorpusFormat {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "json" | "transcript-json" | "transcriptjson" => Ok(CorpusFormat::TranscriptJson),
            "csv" | "two-column-csv" | "twocolumncsv" => Ok(CorpusFormat::TwoColumnCsv),
            _ => Err(ModelError::UnknownLabel {
                kind: "corpus format",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Sessions with fewer turns are rejected as too short.
    pub min_turns: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { min_turns: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub source: String,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub accepted: Vec<SessionTranscript>,
    pub rejects: Vec<Reject>,
}

/// Load every transcript under `source` (a file or a directory walked in
/// sorted order). Bad records land in `rejects`; only an unreadable source
/// is an error.
pub fn ingest_corpus(
    source: &Path,
    format: CorpusFormat,
    opts: &IngestOptions,
) -> io::Result<Ingested> {
    let ext = match format {
        CorpusFormat::TranscriptJson => "json",
        CorpusFormat::TwoColumnCsv => "csv",
    };
    let meta = fs::metadata(source)?;
    let paths: Vec<PathBuf> = if meta.is_dir() {
        let mut v = Vec::new();
        for entry in walkdir::WalkDir::new(source).sort_by_file_name() {
            let entry = entry.map_err(io::Error::other)?;
            if entry.file_type().is_file()
                && entry.path().extension().and_then(|e| e.to_str()) == Some(ext)
            {
                v.push(entry.into_path());
            }
        }
        v
    } else {
        vec![source.to_path_buf()]
    };

    let mut out = Ingested::default();
    let mut seen = BTreeSet::new();
    for path in paths {
        let label = path.display().to_string();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if meta.is_dir() => {
                out.rejects.push(Reject {
                    source: label,
                    id: None,
                    reason: format!("unreadable: {e}"),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let parsed = match format {
            CorpusFormat::TranscriptJson => parse_json_records(&text),
            CorpusFormat::TwoColumnCsv => vec![parse_csv_session(&path, &text)],
        };
        for record in parsed {
            let candidate = record.and_then(|t| {
                if t.turns().len() < opts.min_turns {
                    Err((
                        Some(t.id().to_string()),
                        format!(
                            "too short: {} turns (minimum {})",
                            t.turns().len(),
                            opts.min_turns
                        ),
                    ))
                } else if !seen.insert(t.id().to_string()) {
                    Err((Some(t.id().to_string()), "duplicate id".to_string()))
                } else {
                    Ok(t)
                }
            });
            match candidate {
                Ok(t) => out.accepted.push(t),
                Err((id, reason)) => out.rejects.push(Reject {
                    source: label.clone(),
                    id,
                    reason,
                }),
            }
        }
    }
    Ok(out)
}

type RecordResult = Result<SessionTranscript, (Option<String>, String)>;

fn parse_json_records(text: &str) -> Vec<RecordResult> {
    let value: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return vec![Err((None, format!("malformed json: {e}")))],
    };
    let values = match value {
        serde_json::Value::Array(items) => items,
        other => vec![other],
    };
    values
        .into_iter()
        .map(|v| {
            let id = v.get("id").and_then(|i| i.as_str()).map(str::to_string);
            serde_json::from_value::<SessionTranscript>(v)
                .map_err(|e| (id, format!("invalid transcript: {e}")))
        })
        .collect()
}

fn parse_csv_session(path: &Path, text: &str) -> RecordResult {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let quality = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .and_then(|n| match n.to_ascii_lowercase().as_str() {
            "high" => Some(Quality::High),
            "low" => Some(Quality::Low),
            _ => None,
        })
        .unwrap_or(Quality::Unlabeled);
    let err = |reason: String| (Some(id.clone()), reason);

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut turns = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| err(format!("malformed csv row {}: {e}", row + 1)))?;
        if rec.len() != 2 {
            return Err(err(format!(
                "csv row {} has {} columns, expected 2",
                row + 1,
                rec.len()
            )));
        }
        let speaker: Speaker = rec[0].parse().map_err(|e: ModelError| err(e.to_string()))?;
        turns.push((speaker, rec[1].to_string()));
    }
    SessionTranscript::new(id.clone(), quality, Origin::Corpus, turns)
        .map_err(|e| err(format!("invalid transcript: {e}")))
}

// ---------------------------------------------------------------------------
// Store

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub origin: Origin,
    pub quality: Quality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_session_id: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SessionFilter {
    pub origin: Option<Origin>,
    pub quality: Option<Quality>,
}

impl SessionFilter {
    pub fn matches(&self, e: &IndexEntry) -> bool {
        self.origin.is_none_or(|o| o == e.origin) && self.quality.is_none_or(|q| q == e.quality)
    }
}

/// One JSON file per session at `<root>/<origin>/<id>.json`, plus
/// `<root>/index.json` mapping ids to their origin and quality.
#[derive(Debug)]
pub struct SessionStore {
    root: PathBuf,
    index: RwLock<BTreeMap<String, IndexEntry>>,
    index_write: Mutex<()>,
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| StoreError::Io {
            path: root.clone(),
            source,
        })?;
        let index_path = root.join("index.json");
        let index = if index_path.exists() {
            files::read_json(&index_path).map_err(|source| StoreError::Io {
                path: index_path,
                source,
            })?
        } else {
            BTreeMap::new()
        };
        Ok(SessionStore {
            root,
            index: RwLock::new(index),
            index_write: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_path(&self, origin: Origin, id: &str) -> PathBuf {
        self.root.join(origin.as_str()).join(format!("{id}.json"))
    }

    /// Store a new session. Fails with [`StoreError::Conflict`] if the id exists.
    pub fn put(&self, transcript: &SessionTranscript) -> Result<String, StoreError> {
        self.write(transcript, false)
    }

    /// Store a session, overwriting any previous one with the same id.
    pub fn replace(&self, transcript: &SessionTranscript) -> Result<String, StoreError> {
        self.write(transcript, true)
    }

    fn write(&self, t: &SessionTranscript, overwrite: bool) -> Result<String, StoreError> {
        let _guard = self.index_write.lock();
        let previous = self.index.read().get(t.id()).cloned();
        if previous.is_some() && !overwrite {
            return Err(StoreError::Conflict(t.id().to_string()));
        }
        let path = self.session_path(t.origin, t.id());
        files::write_json_atomic(&path, t).map_err(|source| StoreError::Io {
            path: path.clone(),
            source,
        })?;
        if let Some(prev) = previous.filter(|p| p.origin != t.origin) {
            let _ = fs::remove_file(self.session_path(prev.origin, t.id()));
        }
        let snapshot = {
            let mut index = self.index.write();
            index.insert(
                t.id().to_string(),
                IndexEntry {
                    origin: t.origin,
                    quality: t.quality,
                    reference_session_id: t.reference_session_id.clone(),
                },
            );
            index.clone()
        };
        let index_path = self.root.join("index.json");
        files::write_json_atomic(&index_path, &snapshot).map_err(|source| StoreError::Io {
            path: index_path,
            source,
        })?;
        Ok(t.id().to_string())
    }

    pub fn get(&self, id: &str) -> Result<SessionTranscript, StoreError> {
        let entry = self
            .index
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        let path = self.session_path(entry.origin, id);
        files::read_json(&path).map_err(|source| StoreError::Io { path, source })
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.read().contains_key(id)
    }

    pub fn entry(&self, id: &str) -> Option<IndexEntry> {
        self.index.read().get(id).cloned()
    }

    /// Matching ids in sorted order.
    pub fn list(&self, filter: &SessionFilter) -> Vec<String> {
        self.index
            .read()
            .iter()
            .filter(|(_, e)| filter.matches(e))
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Path of a per-session artifact directory such as `profiles` or `assessments`.
    pub fn artifact_dir(&self, kind: &str) -> PathBuf {
        self.root.join(kind)
    }
}
