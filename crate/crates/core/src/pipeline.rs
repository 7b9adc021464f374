//! Store-level pipeline steps shared by the command line and the service:
//! ingest, profile extraction, session simulation, assessment and reports.
//!
//! Everything lives under one root directory:
//!
//! ```text
//! <root>/index.json, <root>/<origin>/<id>.json   transcripts
//! <root>/rejects.json                            last ingest's rejects
//! <root>/profiles/<id>.json                      extracted profiles
//! <root>/audits/extraction/<id>.json             raw extraction answers
//! <root>/rephrased/<id>.json                     rephrased references
//! <root>/manifests/<id>.json                     one per simulated session
//! <root>/assessments/<id>.json                   questionnaire answers and scores
//! <root>/reports/<run-id>.{json,md,csv}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::files;
use crate::gateway::{GatewayConfig, GatewayError, Llm, Providers, Purpose, RoleName};
use crate::instruments::{registry, InstrumentId, ItemRef, Registry};
use crate::metrics::{self, Baseline, FunctionWordLexicon, LexicalCosine, TextSimilarity};
use crate::model::{
    ingest_corpus, CorpusFormat, IngestOptions, Origin, Quality, Reject, SessionFilter, SessionStore, SessionTranscript,
    Speaker, StoreError,
};
use crate::profiles::{self, ProfileError, PsychologicalProfile};
use crate::reporting::{self, Correlation, Report, ReportError, SessionAssessment};
use crate::scoring::{self, AspectScores, QuestionnaireResponseSet};
use crate::simulation::{
    self, complete_questionnaires, extract_profile, rephrase_session, run_session, ClientEngine, RunLimits,
    SimulationError, Templates, TherapistEngine,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
    #[error("not found: {0}")]
    NotFound(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs `f` over `items` on up to `jobs` threads; results keep input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

// ---------------------------------------------------------------------------
// Ingest

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub accepted: usize,
    pub rejected: usize,
    pub rejects_path: PathBuf,
}

/// Loads a corpus into the store. Sessions whose id is already stored are
/// rejected as duplicates; all rejects go to `<root>/rejects.json`.
pub fn ingest(source: &Path, format: CorpusFormat, store: &SessionStore) -> Result<IngestSummary, PipelineError> {
    let loaded = ingest_corpus(source, format, &IngestOptions::default()).map_err(io_err(source))?;
    let mut rejects = loaded.rejects;
    let mut accepted = 0;
    for t in loaded.accepted {
        match store.put(&t) {
            Ok(_) => accepted += 1,
            Err(StoreError::Conflict(id)) => rejects.push(Reject {
                source: source.display().to_string(),
                id: Some(id),
                reason: "duplicate session id".into(),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    let rejects_path = store.root().join("rejects.json");
    files::write_json_atomic(&rejects_path, &rejects).map_err(io_err(&rejects_path))?;
    Ok(IngestSummary {
        accepted,
        rejected: rejects.len(),
        rejects_path,
    })
}

// ---------------------------------------------------------------------------
// Workspace

/// A store together with configured providers and templates.
pub struct Workspace {
    pub store: SessionStore,
    pub providers: Providers,
    pub templates: Templates,
    pub registry: &'static Registry,
    pub jobs: usize,
}

impl Workspace {
    /// `config` of `None` means the default offline mock provider. Relative
    /// paths in the config resolve against the config file's directory.
    pub fn open(root: &Path, config: Option<&Path>, templates: Option<&Path>, jobs: usize) -> Result<Self, PipelineError> {
        let store = SessionStore::open(root)?;
        let (cfg, base) = match config {
            Some(p) => (
                GatewayConfig::load(p)?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (GatewayConfig::default(), root.to_path_buf()),
        };
        let templates = match templates {
            Some(dir) => Templates::with_overrides(dir).map_err(SimulationError::from)?,
            None => Templates::bundled(),
        };
        Ok(Workspace {
            store,
            providers: Providers::build(cfg, &base)?,
            templates,
            registry: registry(),
            jobs: jobs.max(1),
        })
    }

    pub fn root(&self) -> &Path {
        self.store.root()
    }

    fn artifact(&self, kind: &str, id: &str) -> PathBuf {
        self.store.artifact_dir(kind).join(format!("{id}.json"))
    }

    pub fn profile(&self, id: &str) -> Result<PsychologicalProfile, PipelineError> {
        if !profiles::profile_path(self.root(), id).exists() {
            return Err(PipelineError::NotFound(format!("profile {id}")));
        }
        Ok(profiles::load_profile(self.root(), id)?)
    }

    pub fn has_profile(&self, id: &str) -> bool {
        profiles::profile_path(self.root(), id).exists()
    }

    pub fn profile_ids(&self) -> Vec<String> {
        self.store
            .list(&SessionFilter::default())
            .into_iter()
            .filter(|id| self.has_profile(id))
            .collect()
    }

    fn llm_or_role(&self, provider: Option<&str>, role: RoleName) -> Result<Llm, PipelineError> {
        Ok(match provider {
            Some(p) => self.providers.llm(p, role.purpose())?,
            None => self.providers.for_role(role),
        })
    }

    /// The rephrased copy of a reference session, made on first use.
    pub fn rephrased(&self, reference: &SessionTranscript) -> Result<SessionTranscript, PipelineError> {
        let path = self.artifact("rephrased", reference.id());
        if path.exists() {
            return files::read_json(&path).map_err(io_err(&path));
        }
        let llm = self.providers.for_role(RoleName::Rephrase);
        let out = rephrase_session(reference, &llm, &self.templates)?;
        if !out.flagged.is_empty() {
            log::warn!("{}: kept {} turns verbatim", reference.id(), out.flagged.len());
        }
        files::write_json_atomic(&path, &out.transcript).map_err(io_err(&path))?;
        Ok(out.transcript)
    }

    /// A client engine for `profile_id`, talking as the client of
    /// `reference_id`, on the routed provider unless one is given.
    pub fn client_engine(
        &self,
        profile_id: &str,
        reference_id: &str,
        provider: Option<&str>,
    ) -> Result<ClientEngine, PipelineError> {
        let profile = self.profile(profile_id)?;
        let reference = self.store.get(reference_id)?;
        let llm = match provider {
            Some(p) => self.providers.llm(p, Purpose::Simulation)?,
            None => self.providers.client_for(&profile),
        };
        Ok(ClientEngine::new(profile, reference, llm, &self.templates, self.registry)?)
    }
}

// ---------------------------------------------------------------------------
// Session selection

/// `all`, or comma-separated `origin=…`, `quality=…` and `id=…` terms (a bare
/// term is an id). Ids are unioned, then origin and quality filter.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selector {
    pub ids: Vec<String>,
    pub origin: Option<Origin>,
    pub quality: Option<Quality>,
}

impl FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut sel = Selector::default();
        for term in s.split(',').map(str::trim).filter(|t| !t.is_empty() && *t != "all") {
            match term.split_once('=') {
                Some(("origin", v)) => sel.origin = Some(v.parse().map_err(|e| format!("{e}"))?),
                Some(("quality", v)) => sel.quality = Some(v.parse().map_err(|e| format!("{e}"))?),
                Some(("id", v)) => sel.ids.push(v.to_string()),
                Some((k, _)) => return Err(format!("unknown selector key {k:?}")),
                None => sel.ids.push(term.to_string()),
            }
        }
        Ok(sel)
    }
}

impl Selector {
    pub fn resolve(&self, store: &SessionStore) -> Result<Vec<String>, PipelineError> {
        let filter = SessionFilter {
            origin: self.origin,
            quality: self.quality,
        };
        if self.ids.is_empty() {
            return Ok(store.list(&filter));
        }
        let mut out = Vec::new();
        for id in &self.ids {
            let entry = store
                .entry(id)
                .ok_or_else(|| PipelineError::NotFound(format!("session {id}")))?;
            if filter.matches(&entry) && !out.contains(id) {
                out.push(id.clone());
            }
        }
        out.sort();
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Profile extraction

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExtractSummary {
    pub extracted: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

/// Extracts and saves a profile per session, skipping sessions that already
/// have one unless `force`. Audits are written even for failed extractions.
pub fn extract_profiles(
    ws: &Workspace,
    ids: &[String],
    provider: Option<&str>,
    force: bool,
) -> Result<ExtractSummary, PipelineError> {
    let llm = ws.llm_or_role(provider, RoleName::Extraction)?;
    let (todo, skipped): (Vec<String>, Vec<String>) =
        ids.iter().cloned().partition(|id| force || !ws.has_profile(id));
    let results = par_map(&todo, ws.jobs, |id| -> Result<(), String> {
        let session = ws.store.get(id).map_err(|e| e.to_string())?;
        let audit_path = ws.artifact("audits/extraction", id);
        let (result, audit) = match extract_profile(&session, &llm, &ws.templates, ws.registry) {
            Ok(out) => (Ok(out.profile), out.audit),
            Err(f) => (Err(f.error.to_string()), f.audit),
        };
        files::write_json_atomic(&audit_path, &audit).map_err(|e| e.to_string())?;
        let profile = result?;
        profiles::save_profile(ws.root(), id, &profile).map_err(|e| e.to_string())?;
        Ok(())
    });
    let mut summary = ExtractSummary {
        skipped,
        ..Default::default()
    };
    for (id, r) in todo.into_iter().zip(results) {
        match r {
            Ok(()) => summary.extracted.push(id),
            Err(e) => summary.failed.push((id, e)),
        }
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Simulation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    ClientXMirror,
    ClientXUnderTest,
}

impl FromStr for SimMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "client-x-mirror" => Ok(SimMode::ClientXMirror),
            "client-x-under-test" => Ok(SimMode::ClientXUnderTest),
            _ => Err(format!("unknown mode {s:?} (client-x-mirror or client-x-under-test)")),
        }
    }
}

/// What to simulate. Reference sessions default to every stored corpus
/// session that has a profile. Under test, one session is run per therapist
/// target (provider ids; empty means the therapist role's provider).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunPlan {
    pub sessions: Vec<String>,
    pub therapists: Vec<String>,
    pub limits: RunLimits,
    /// Client provider for every session, instead of per-profile routing.
    pub client_provider: Option<String>,
    /// Seed for random-pair baselines in reports.
    pub seed: u64,
}

impl RunPlan {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let plan: RunPlan = files::read_json(path).map_err(io_err(path))?;
        plan.limits.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub role: String,
    pub provider: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub template: String,
    pub template_version: u32,
}

impl EngineConfig {
    fn of(role: &str, llm: &Llm, template: &simulation::RenderedPrompt) -> Self {
        EngineConfig {
            role: role.into(),
            provider: llm.provider_id.clone(),
            model: llm.model.clone(),
            temperature: llm.temperature,
            max_tokens: llm.max_tokens,
            template: template.template.clone(),
            template_version: template.version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub session_id: String,
    pub mode: SimMode,
    pub reference_session_id: String,
    pub profile_id: String,
    pub engines: Vec<EngineConfig>,
    pub template_versions: BTreeMap<String, u32>,
    pub limits: RunLimits,
    /// Cassettes read or written by the providers involved.
    pub cassettes: Vec<PathBuf>,
    pub termination: String,
    pub turns: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutcome {
    pub session_id: String,
    pub result: Result<String, String>,
}

fn cassettes_for(ws: &Workspace, provider_ids: &[&str]) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = provider_ids
        .iter()
        .filter_map(|id| ws.providers.config.providers.get(*id))
        .flat_map(|s| s.cassette.iter().chain(s.record.iter()).cloned())
        .collect();
    out.sort();
    out.dedup();
    out
}

pub fn sim_session_id(reference: &str, mode: SimMode, therapist: &str) -> String {
    match mode {
        SimMode::ClientXMirror => format!("sim-{reference}-mirror"),
        SimMode::ClientXUnderTest => format!("sim-{reference}-{therapist}"),
    }
}

fn simulate_one(
    ws: &Workspace,
    plan: &RunPlan,
    mode: SimMode,
    reference_id: &str,
    therapist_provider: &str,
) -> Result<String, PipelineError> {
    let id = sim_session_id(reference_id, mode, therapist_provider);
    let client = ws.client_engine(reference_id, reference_id, plan.client_provider.as_deref())?;
    let therapist_llm = ws.providers.llm(therapist_provider, Purpose::Simulation)?;
    let therapist = match mode {
        SimMode::ClientXMirror => {
            let rephrased = ws.rephrased(&client.reference)?;
            TherapistEngine::mirror(rephrased, therapist_llm, &ws.templates)?
        }
        SimMode::ClientXUnderTest => TherapistEngine::under_test(therapist_llm, &ws.templates)?,
    };
    let run = run_session(&id, &client, &therapist, plan.limits)?;
    ws.store.replace(&run.transcript)?;
    let manifest = Manifest {
        session_id: id.clone(),
        mode,
        reference_session_id: reference_id.to_string(),
        profile_id: reference_id.to_string(),
        engines: vec![
            EngineConfig::of("client", &client.llm, &client.system_prompt),
            EngineConfig::of("therapist", &therapist.llm, &therapist.system_prompt),
        ],
        template_versions: ws.templates.versions(),
        limits: plan.limits,
        cassettes: cassettes_for(ws, &[&client.llm.provider_id, &therapist.llm.provider_id]),
        termination: run.termination.as_str().to_string(),
        turns: run.transcript.turns().len(),
        error: run.error.clone(),
    };
    let path = ws.artifact("manifests", &id);
    files::write_json_atomic(&path, &manifest).map_err(io_err(&path))?;
    Ok(id)
}

/// Runs every (reference, therapist) pair of the plan concurrently and
/// stores transcripts and manifests. Outcomes keep plan order.
pub fn simulate(ws: &Workspace, plan: &RunPlan, mode: SimMode) -> Result<Vec<SimOutcome>, PipelineError> {
    plan.limits.validate()?;
    let references = if plan.sessions.is_empty() {
        ws.store
            .list(&SessionFilter {
                origin: Some(Origin::Corpus),
                quality: None,
            })
            .into_iter()
            .filter(|id| ws.has_profile(id))
            .collect()
    } else {
        plan.sessions.clone()
    };
    if references.is_empty() {
        return Err(PipelineError::Invalid(
            "no corpus session has a profile; run extract-profiles first".into(),
        ));
    }
    let therapists: Vec<String> = match mode {
        SimMode::ClientXMirror => vec![ws.providers.config.role_provider(RoleName::Therapist).to_string()],
        SimMode::ClientXUnderTest if plan.therapists.is_empty() => {
            vec![ws.providers.config.role_provider(RoleName::Therapist).to_string()]
        }
        SimMode::ClientXUnderTest => plan.therapists.clone(),
    };
    for t in therapists.iter().chain(plan.client_provider.iter()) {
        if !ws.providers.contains(t) {
            return Err(PipelineError::Invalid(format!("plan refers to unknown provider {t:?}")));
        }
    }
    let jobs: Vec<(String, String)> = references
        .iter()
        .flat_map(|r| therapists.iter().map(move |t| (r.clone(), t.clone())))
        .collect();
    let results = par_map(&jobs, ws.jobs, |(r, t)| simulate_one(ws, plan, mode, r, t));
    Ok(jobs
        .into_iter()
        .zip(results)
        .map(|((r, t), res)| SimOutcome {
            session_id: sim_session_id(&r, mode, &t),
            result: res.map_err(|e| e.to_string()),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Assessment

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub session_id: String,
    pub profile_id: String,
    pub provider: String,
    pub scores: AspectScores,
    pub flagged: Vec<(InstrumentId, ItemRef)>,
    pub missing: Vec<(InstrumentId, ItemRef)>,
    pub responses: QuestionnaireResponseSet,
}

/// Profile used to assess a session: a `profile_id` metadata entry if
/// present, else its reference's for simulated sessions and its own for
/// corpus sessions.
pub fn profile_id_for(t: &SessionTranscript) -> &str {
    if let Some(p) = t.metadata.get("profile_id") {
        return p;
    }
    match t.origin {
        Origin::Corpus => t.id(),
        _ => t.reference_session_id.as_deref().unwrap_or(t.id()),
    }
}

pub fn assessment_path(root: &Path, id: &str) -> PathBuf {
    root.join("assessments").join(format!("{id}.json"))
}

pub fn load_assessment(root: &Path, id: &str) -> Result<AssessmentRecord, PipelineError> {
    let path = assessment_path(root, id);
    if !path.exists() {
        return Err(PipelineError::NotFound(format!("assessment {id}")));
    }
    files::read_json(&path).map_err(io_err(&path))
}

/// Questionnaire completion and scoring for one stored session.
pub fn assess_session(ws: &Workspace, id: &str, provider: Option<&str>) -> Result<AssessmentRecord, PipelineError> {
    let transcript = ws.store.get(id)?;
    let profile_id = profile_id_for(&transcript).to_string();
    let profile = ws.profile(&profile_id)?;
    let llm = ws.llm_or_role(provider, RoleName::Completion)?;
    let out = complete_questionnaires(
        &profile,
        &transcript,
        &InstrumentId::ASSESSMENT,
        &llm,
        &ws.templates,
        ws.registry,
    )?;
    let scores = scoring::score(ws.registry, &out.responses)
        .map_err(|e| PipelineError::Invalid(format!("{id}: scoring failed: {e}")))?;
    let record = AssessmentRecord {
        session_id: id.to_string(),
        profile_id,
        provider: llm.provider_id.clone(),
        scores,
        flagged: out.flagged,
        missing: out.missing,
        responses: out.responses,
    };
    let path = assessment_path(ws.root(), id);
    files::write_json_atomic(&path, &record).map_err(io_err(&path))?;
    Ok(record)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AssessSummary {
    pub assessed: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

pub fn assess(ws: &Workspace, ids: &[String], provider: Option<&str>, force: bool) -> AssessSummary {
    let (todo, skipped): (Vec<String>, Vec<String>) = ids
        .iter()
        .cloned()
        .partition(|id| force || !assessment_path(ws.root(), id).exists());
    let results = par_map(&todo, ws.jobs, |id| assess_session(ws, id, provider));
    let mut summary = AssessSummary {
        skipped,
        ..Default::default()
    };
    for (id, r) in todo.into_iter().zip(results) {
        match r {
            Ok(_) => summary.assessed.push(id),
            Err(e) => summary.failed.push((id, e.to_string())),
        }
    }
    summary
}

// ---------------------------------------------------------------------------
// Reports

/// Sessions forming one group: explicit ids, or every assessed session
/// matching the origin, quality and therapist provider given.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupSpec {
    pub sessions: Vec<String>,
    pub origin: Option<Origin>,
    pub quality: Option<Quality>,
    pub therapist_provider: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSpec {
    pub run_id: Option<String>,
    pub groups: BTreeMap<String, GroupSpec>,
    /// Pairs of group names to test against each other.
    pub comparisons: Vec<(String, String)>,
    /// Correlate each simulated session's scores with its reference's.
    pub stability: bool,
    pub correlation: Correlation,
    /// Compare each simulated session's extracted profile with its reference's.
    pub consistency: bool,
}

impl ReportSpec {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        files::read_json(path).map_err(io_err(path))
    }
}

fn assessed_ids(root: &Path) -> Vec<String> {
    let mut ids: Vec<String> = std::fs::read_dir(root.join("assessments"))
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix(".json").map(str::to_string)
        })
        .collect();
    ids.sort();
    ids
}

fn therapist_provider_of(ws: &Workspace, id: &str) -> Option<String> {
    let path = ws.artifact("manifests", id);
    let m: Manifest = files::read_json(&path).ok()?;
    m.engines.into_iter().find(|e| e.role == "therapist").map(|e| e.provider)
}

fn group_members(ws: &Workspace, name: &str, spec: &GroupSpec, assessed: &[String]) -> Result<Vec<String>, PipelineError> {
    let candidates: Vec<String> = if spec.sessions.is_empty() {
        assessed.to_vec()
    } else {
        for id in &spec.sessions {
            if !assessed.contains(id) {
                return Err(PipelineError::NotFound(format!("group {name}: session {id} has no assessment")));
            }
        }
        spec.sessions.clone()
    };
    let mut out = Vec::new();
    for id in candidates {
        let Some(entry) = ws.store.entry(&id) else { continue };
        let filter = SessionFilter {
            origin: spec.origin,
            quality: spec.quality,
        };
        if !filter.matches(&entry) {
            continue;
        }
        if let Some(p) = &spec.therapist_provider {
            if therapist_provider_of(ws, &id).as_deref() != Some(p.as_str()) {
                continue;
            }
        }
        out.push(id);
    }
    Ok(out)
}

fn similarity(ws: &Workspace) -> Box<dyn TextSimilarity> {
    match &ws.providers.config.embedding {
        Some(e) => Box::new(metrics::EmbeddingSimilarity {
            embedder: crate::gateway::http::HttpEmbedder::new(e.endpoint.clone(), e.model.clone(), e.api_key_env.clone()),
        }),
        None => Box::new(LexicalCosine),
    }
}

/// Mean similarity between an extracted profile and the originals of other,
/// randomly chosen reference sessions.
fn random_baseline(
    extracted: &PsychologicalProfile,
    others: &[&PsychologicalProfile],
    sim: &dyn TextSimilarity,
    rng: &mut ChaCha8Rng,
    draws: usize,
) -> Option<Baseline> {
    if others.is_empty() {
        return None;
    }
    let (mut p, mut r) = (0.0, 0.0);
    for _ in 0..draws {
        let o = others.choose(rng).expect("non-empty");
        p += sim.similarity(&o.problem, &extracted.problem).ok()?;
        r += sim.similarity(&o.reasons_for_visiting, &extracted.reasons_for_visiting).ok()?;
    }
    Some(Baseline {
        problem: p / draws as f64,
        reasons: r / draws as f64,
    })
}

/// Assembles groups, comparisons and the optional stability and
/// consistency sections. Fails on an unknown or empty group.
pub fn build_report(ws: &Workspace, spec: &ReportSpec, run_id: &str, seed: u64) -> Result<Report, PipelineError> {
    let assessed = assessed_ids(ws.root());
    let lexicon = FunctionWordLexicon::bundled();
    let mut groups = BTreeMap::new();
    for (name, g) in &spec.groups {
        let members = group_members(ws, name, g, &assessed)?;
        let mut sessions = Vec::new();
        for id in &members {
            let record = load_assessment(ws.root(), id)?;
            let t = ws.store.get(id)?;
            let reference = match &t.reference_session_id {
                Some(r) if t.origin != Origin::Corpus => ws.store.get(r).ok(),
                _ => None,
            };
            sessions.push(SessionAssessment {
                session_id: id.clone(),
                scores: record.scores,
                style: reporting::session_style(&t, Speaker::Therapist, reference.as_ref(), &lexicon),
            });
        }
        groups.insert(name.clone(), reporting::assemble(name, sessions)?);
    }
    let mut comparisons = Vec::new();
    for (a, b) in &spec.comparisons {
        let ga = groups.get(a).ok_or_else(|| ReportError::UnknownGroup(a.clone()))?;
        let gb = groups.get(b).ok_or_else(|| ReportError::UnknownGroup(b.clone()))?;
        comparisons.push(reporting::compare(ga, gb)?);
    }
    let simulated: Vec<String> = groups
        .values()
        .flat_map(|g| g.sessions.iter().map(|s| s.session_id.clone()))
        .filter(|id| ws.store.entry(id).is_some_and(|e| e.origin != Origin::Corpus))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let stability = if spec.stability {
        let mut pairs = Vec::new();
        for id in &simulated {
            let Some(reference) = ws.store.entry(id).and_then(|e| e.reference_session_id) else { continue };
            if let (Ok(orig), Ok(sim)) = (load_assessment(ws.root(), &reference), load_assessment(ws.root(), id)) {
                pairs.push((orig.scores, sim.scores));
            }
        }
        Some(reporting::stability_correlation(&pairs, spec.correlation)?)
    } else {
        None
    };
    let mut consistency = BTreeMap::new();
    if spec.consistency {
        let sim = similarity(ws);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let originals: BTreeMap<String, PsychologicalProfile> = ws
            .profile_ids()
            .into_iter()
            .filter(|id| ws.store.entry(id).is_some_and(|e| e.origin == Origin::Corpus))
            .filter_map(|id| ws.profile(&id).ok().map(|p| (id, p)))
            .collect();
        for id in &simulated {
            let Some(reference) = ws.store.entry(id).and_then(|e| e.reference_session_id) else { continue };
            let (Some(original), Ok(extracted)) = (originals.get(&reference), ws.profile(id)) else { continue };
            let others: Vec<&PsychologicalProfile> =
                originals.iter().filter(|(k, _)| **k != reference).map(|(_, p)| p).collect();
            let baseline = random_baseline(&extracted, &others, sim.as_ref(), &mut rng, 10);
            let report = metrics::consistency(original, &extracted, sim.as_ref(), baseline.as_ref())
                .map_err(ReportError::from)?;
            consistency.insert(id.clone(), report);
        }
    }
    Ok(Report {
        run_id: run_id.to_string(),
        groups: groups.into_values().collect(),
        comparisons,
        stability,
        consistency,
    })
}
