use std::path::{Path, PathBuf};

use clientsim_core::model::{CorpusFormat, Origin, Quality, SessionStore, SessionTranscript, Speaker};
use clientsim_core::pipeline::{
    self, par_map, GroupSpec, Manifest, PipelineError, ReportSpec, RunPlan, Selector, SimMode, Workspace,
};
use clientsim_core::simulation::RunLimits;

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/tests/fixtures/corpus.json")
}

fn workspace(dir: &Path, config: Option<&str>) -> Workspace {
    let root = dir.join("store");
    let store = SessionStore::open(&root).unwrap();
    pipeline::ingest(&corpus(), CorpusFormat::TranscriptJson, &store).unwrap();
    let config = config.map(|text| {
        let p = dir.join("clientsim.toml");
        std::fs::write(&p, text).unwrap();
        p
    });
    Workspace::open(&root, config.as_deref(), None, 1).unwrap()
}

fn ids(sel: &str, ws: &Workspace) -> Vec<String> {
    sel.parse::<Selector>().unwrap().resolve(&ws.store).unwrap()
}

fn plan(max_turns: usize) -> RunPlan {
    RunPlan {
        sessions: vec![],
        therapists: vec![],
        limits: RunLimits {
            max_turns,
            repetition_window: 2,
        },
        client_provider: None,
        seed: 0,
    }
}

#[test]
fn par_map_keeps_order() {
    let xs: Vec<u32> = (0..50).collect();
    assert_eq!(par_map(&xs, 7, |x| x * 2), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
    assert_eq!(par_map(&xs, 1, |x| x + 1)[49], 50);
}

#[test]
fn selectors() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(dir.path(), None);
    assert_eq!(ids("all", &ws).len(), 6);
    assert_eq!(ids("quality=high", &ws), ["mi-high-01", "mi-high-02", "mi-high-03"]);
    assert_eq!(ids("mi-low-02,id=mi-high-01,mi-low-02", &ws), ["mi-high-01", "mi-low-02"]);
    assert!(ids("origin=sim-client-x-llm", &ws).is_empty());
    assert!("colour=red".parse::<Selector>().is_err());
    let missing = "ghost".parse::<Selector>().unwrap().resolve(&ws.store);
    assert!(matches!(missing, Err(PipelineError::NotFound(_))));
}

#[test]
fn duplicate_ingest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(dir.path(), None);
    let again = pipeline::ingest(&corpus(), CorpusFormat::TranscriptJson, &ws.store).unwrap();
    assert_eq!((again.accepted, again.rejected), (0, 6));
    assert!(std::fs::read_to_string(again.rejects_path).unwrap().contains("duplicate"));
}

#[test]
fn mirror_simulation_and_assessment() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(dir.path(), None);
    let s = pipeline::extract_profiles(&ws, &ids("origin=corpus", &ws), None, false).unwrap();
    assert_eq!(s.extracted.len(), 6);

    let outcomes = pipeline::simulate(&ws, &plan(10), SimMode::ClientXMirror).unwrap();
    assert_eq!(outcomes.len(), 6);
    assert!(outcomes.iter().all(|o| o.result.is_ok()));

    let sim = ws.store.get("sim-mi-high-01-mirror").unwrap();
    assert_eq!(sim.origin, Origin::SimClientXLlm);
    assert_eq!(sim.quality, Quality::High);
    assert_eq!(sim.reference_session_id.as_deref(), Some("mi-high-01"));
    assert_eq!(sim.turns().len(), 10);
    assert_eq!(sim.turns()[0].speaker, Speaker::Therapist);
    assert_eq!(pipeline::profile_id_for(&sim), "mi-high-01");

    let manifest: Manifest = serde_json::from_str(
        &std::fs::read_to_string(ws.root().join("manifests/sim-mi-high-01-mirror.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest.termination, "turn-limit");
    assert_eq!(manifest.turns, 10);
    assert_eq!(manifest.engines.len(), 2);
    assert!(ws.root().join("rephrased/mi-high-01.json").exists());

    let all = ids("all", &ws);
    let first = pipeline::assess(&ws, &all, None, false);
    assert_eq!((first.assessed.len(), first.failed.len()), (12, 0));
    let again = pipeline::assess(&ws, &all, None, false);
    assert_eq!((again.assessed.len(), again.skipped.len()), (0, 12));
    let forced = pipeline::assess(&ws, &all[..1], None, true);
    assert_eq!(forced.assessed.len(), 1);

    let record = pipeline::load_assessment(ws.root(), "sim-mi-high-01-mirror").unwrap();
    assert_eq!(record.profile_id, "mi-high-01");
    assert!(record.missing.is_empty());
    assert!(record.scores.session_outcome.is_some());

    let spec = ReportSpec {
        groups: [
            (
                "sim".to_string(),
                GroupSpec {
                    origin: Some(Origin::SimClientXLlm),
                    ..Default::default()
                },
            ),
            (
                "original".to_string(),
                GroupSpec {
                    origin: Some(Origin::Corpus),
                    ..Default::default()
                },
            ),
        ]
        .into(),
        comparisons: vec![("sim".into(), "original".into())],
        stability: true,
        consistency: true,
        ..Default::default()
    };
    // consistency covers only simulated sessions with their own profile
    let early = pipeline::build_report(&ws, &spec, "r", 0).unwrap();
    assert!(early.consistency.is_empty());
    pipeline::extract_profiles(&ws, &ids("origin=sim-client-x-llm", &ws), None, false).unwrap();
    let report = pipeline::build_report(&ws, &spec, "r", 0).unwrap();
    assert_eq!(report.groups.len(), 2);
    assert_eq!(report.comparisons.len(), 1);
    assert_eq!(report.stability.as_ref().unwrap().aspects.len(), 6);
    assert_eq!(report.consistency.len(), 6);
    assert_eq!(report, pipeline::build_report(&ws, &spec, "r", 0).unwrap());
}

#[test]
fn under_test_sessions_per_therapist() {
    let dir = tempfile::tempdir().unwrap();
    let ws = workspace(
        dir.path(),
        Some("[providers.mock]\nkind = \"mock\"\n\n[providers.other]\nkind = \"mock\"\n\n[roles]\ndefault = \"mock\"\n"),
    );
    pipeline::extract_profiles(&ws, &["mi-low-01".to_string()], None, false).unwrap();
    let mut p = plan(6);
    p.sessions = vec!["mi-low-01".into()];
    p.therapists = vec!["mock".into(), "other".into()];
    let outcomes = pipeline::simulate(&ws, &p, SimMode::ClientXUnderTest).unwrap();
    let got: Vec<_> = outcomes.iter().map(|o| o.session_id.as_str()).collect();
    assert_eq!(got, ["sim-mi-low-01-mock", "sim-mi-low-01-other"]);
    let t = ws.store.get("sim-mi-low-01-other").unwrap();
    assert_eq!(t.origin, Origin::SimClientXTherapistUnderTest);
    assert_eq!(t.quality, Quality::Unlabeled);

    p.therapists = vec!["absent".into()];
    assert!(matches!(
        pipeline::simulate(&ws, &p, SimMode::ClientXUnderTest),
        Err(PipelineError::Invalid(_))
    ));
}

#[test]
fn recorded_run_replays_offline() {
    let rec_dir = tempfile::tempdir().unwrap();
    let cassette = rec_dir.path().join("run.jsonl");
    let ws = workspace(
        rec_dir.path(),
        Some(&format!("[providers.live]\nkind = \"mock\"\nrecord = {:?}\n", cassette.to_str().unwrap())),
    );
    let refs = vec!["mi-high-02".to_string()];
    pipeline::extract_profiles(&ws, &refs, None, false).unwrap();
    let mut p = plan(8);
    p.sessions = refs.clone();
    pipeline::simulate(&ws, &p, SimMode::ClientXMirror).unwrap();
    let recorded = ws.store.get("sim-mi-high-02-mirror").unwrap();

    let replay_dir = tempfile::tempdir().unwrap();
    let ws2 = workspace(
        replay_dir.path(),
        Some(&format!("[providers.tape]\nkind = \"replay\"\ncassette = {:?}\n", cassette.to_str().unwrap())),
    );
    pipeline::extract_profiles(&ws2, &refs, None, false).unwrap();
    assert_eq!(ws2.profile("mi-high-02").unwrap(), ws.profile("mi-high-02").unwrap());
    let out = pipeline::simulate(&ws2, &p, SimMode::ClientXMirror).unwrap();
    assert!(out[0].result.is_ok(), "{:?}", out[0].result);
    let replayed = ws2.store.get("sim-mi-high-02-mirror").unwrap();
    let texts = |t: &SessionTranscript| t.turns().iter().map(|x| x.text.clone()).collect::<Vec<_>>();
    assert_eq!(texts(&replayed), texts(&recorded));
}
