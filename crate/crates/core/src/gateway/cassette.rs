//! JSON-lines cassettes of request/response pairs.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{ChatRequest, GatewayError, Provider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub digest: String,
    pub request: ChatRequest,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cassette {
    pub records: Vec<CassetteRecord>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path)
            .map_err(|e| GatewayError::Replay(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: CassetteRecord = serde_json::from_str(line)
                .map_err(|e| GatewayError::Replay(format!("cassette line {}: {e}", n + 1)))?;
            records.push(rec);
        }
        Ok(Cassette { records })
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Forwards to an inner provider and appends every exchange to a cassette
/// file. Refusals are stored as empty responses so replay reproduces them.
pub struct Recorder<P> {
    inner: P,
    path: PathBuf,
    lock: Mutex<()>,
}

impl<P: Provider> Recorder<P> {
    pub fn new(inner: P, path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)
                .map_err(|e| GatewayError::Config(format!("{}: {e}", dir.display())))?;
        }
        Ok(Recorder {
            inner,
            path,
            lock: Mutex::new(()),
        })
    }

    fn append(&self, record: &CassetteRecord) -> Result<(), GatewayError> {
        let line = serde_json::to_string(record).expect("record serializes") + "\n";
        let _guard = self.lock.lock();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| GatewayError::Transport(format!("cassette {}: {e}", self.path.display())))?;
        f.write_all(line.as_bytes())
            .map_err(|e| GatewayError::Transport(format!("cassette {}: {e}", self.path.display())))
    }
}

impl<P: Provider> Provider for Recorder<P> {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let result = self.inner.complete(request);
        let response = match &result {
            Ok(text) => text.clone(),
            Err(GatewayError::Refusal(_)) => String::new(),
            Err(_) => return result,
        };
        self.append(&CassetteRecord {
            digest: request.digest(),
            request: request.clone(),
            response,
        })?;
        result
    }
}

/// Serves recorded responses. Identical requests are answered in recording
/// order; a request the cassette does not hold is an error naming it.
pub struct Replay {
    queues: Mutex<BTreeMap<String, VecDeque<String>>>,
    served: AtomicUsize,
}

impl Replay {
    pub fn new(cassette: Cassette) -> Self {
        let mut queues: BTreeMap<String, VecDeque<String>> = BTreeMap::new();
        for r in cassette.records {
            queues.entry(r.digest).or_default().push_back(r.response);
        }
        Replay {
            queues: Mutex::new(queues),
            served: AtomicUsize::new(0),
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::new(Cassette::load(path)?))
    }

    pub fn remaining(&self) -> usize {
        self.queues.lock().values().map(VecDeque::len).sum()
    }
}

impl Provider for Replay {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let digest = request.digest();
        let position = self.served.fetch_add(1, Ordering::SeqCst);
        let mut queues = self.queues.lock();
        let response = queues.get_mut(&digest).and_then(VecDeque::pop_front).ok_or_else(|| {
            let preview: String = request.last_user().chars().take(80).collect();
            GatewayError::Replay(format!(
                "request #{position} (digest {digest}) is not in the cassette; last user message starts {preview:?}"
            ))
        })?;
        if response.is_empty() {
            return Err(GatewayError::Refusal("recorded refusal".into()));
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, Reply, Rule, ScriptedMock};

    fn req(text: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            temperature: 0.7,
            max_tokens: 64,
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(text)],
        }
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mock = ScriptedMock::new(
            vec![
                Rule::contains("hello", Reply::text("hi there")),
                Rule::contains("refuse", Reply::Refuse),
            ],
            "default",
        );
        let rec = Recorder::new(mock, &path).unwrap();
        assert_eq!(rec.complete(&req("hello")).unwrap(), "hi there");
        assert_eq!(rec.complete(&req("other")).unwrap(), "default");
        assert!(rec.complete(&req("please refuse")).unwrap_err().is_refusal());
        assert_eq!(rec.complete(&req("hello")).unwrap(), "hi there");

        let cassette = Cassette::load(&path).unwrap();
        assert_eq!(cassette.records.len(), 4);
        assert_eq!(cassette.to_jsonl(), fs::read_to_string(&path).unwrap());

        let replay = Replay::new(cassette);
        assert_eq!(replay.complete(&req("hello")).unwrap(), "hi there");
        assert_eq!(replay.complete(&req("other")).unwrap(), "default");
        assert!(replay.complete(&req("please refuse")).unwrap_err().is_refusal());
        assert_eq!(replay.complete(&req("hello")).unwrap(), "hi there");
        assert_eq!(replay.remaining(), 0);
    }

    #[test]
    fn replay_errors() {
        let empty = Replay::new(Cassette::default());
        assert!(matches!(empty.complete(&req("x")), Err(GatewayError::Replay(_))));

        let c = Cassette {
            records: vec![CassetteRecord {
                digest: req("original prompt").digest(),
                request: req("original prompt"),
                response: "ok".into(),
            }],
        };
        let replay = Replay::new(c);
        match replay.complete(&req("edited prompt")) {
            Err(GatewayError::Replay(msg)) => {
                assert!(msg.contains("request #0") && msg.contains("edited prompt"), "{msg}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_cassette_line() {
        assert!(Cassette::parse("{\"digest\":1}\n").is_err());
        assert_eq!(Cassette::parse("\n\n").unwrap().records.len(), 0);
    }
}
