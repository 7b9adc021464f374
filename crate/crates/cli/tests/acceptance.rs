//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use clientsim_core::instruments::{registry, InstrumentId, ItemRef, Trait};
use clientsim_core::metrics::lexicon::{lsm, FunctionWordLexicon, Lexicon};
use clientsim_core::metrics::stats::mann_whitney_u;
use clientsim_core::metrics::text::normalized_relative_similarity;
use clientsim_core::scoring::{
    aspect_score, normalize_item, seq_dimensions, session_outcome_items, therapeutic_alliance_items,
    QuestionnaireResponseSet,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: impl Into<String>, bad: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(bad.into())
    }
}

// ---------------------------------------------------------------------------
// Scoring oracle

/// Raw answers keyed by (instrument, part, item number).
type Answers = BTreeMap<(&'static str, u32, u32), i64>;

const CECS_REVERSED_PART1: [u32; 11] = [1, 3, 4, 7, 8, 11, 16, 23, 38, 42, 43];
const CECS_REVERSED_PART2: [u32; 3] = [2, 4, 7];

fn random_answers(rng: &mut ChaCha8Rng) -> Answers {
    let mut a = Answers::new();
    for n in 1..=12 {
        a.insert(("WAISR", 0, n), rng.random_range(1..=5));
    }
    for n in 1..=4 {
        a.insert(("SRS", 0, n), rng.random_range(0..=10));
    }
    for n in 1..=44 {
        a.insert(("CECS", 1, n), rng.random_range(1..=7));
    }
    for n in 1..=8 {
        a.insert(("CECS", 2, n), rng.random_range(1..=7));
    }
    for n in 1..=21 {
        a.insert(("SEQ", 0, n), rng.random_range(1..=7));
    }
    a
}

fn to_response_set(a: &Answers) -> QuestionnaireResponseSet {
    let mut set = QuestionnaireResponseSet::default();
    for (&(inst, part, n), &raw) in a {
        let (id, r) = match inst {
            "WAISR" => (InstrumentId::WaiSr, ItemRef::new(n)),
            "SRS" => (InstrumentId::Srs, ItemRef::new(n)),
            "CECS" => (InstrumentId::Cecs, ItemRef::in_part(&format!("part{part}"), n)),
            _ => (InstrumentId::Seq, ItemRef::new(n)),
        };
        set.set_raw(id, r, raw);
    }
    set
}

fn oracle_norm(inst: &str, part: u32, n: u32, raw: i64) -> f64 {
    let raw = raw as f64;
    match inst {
        "WAISR" => raw / 5.0,
        "SRS" => raw / 10.0,
        _ => {
            let reversed = (part == 1 && CECS_REVERSED_PART1.contains(&n))
                || (part == 2 && CECS_REVERSED_PART2.contains(&n));
            if reversed {
                (8.0 - raw) / 7.0
            } else {
                raw / 7.0
            }
        }
    }
}

fn oracle_mean(a: &Answers, items: &[(&'static str, u32, u32)]) -> f64 {
    let total: f64 = items
        .iter()
        .map(|&(inst, part, n)| oracle_norm(inst, part, n, a[&(inst, part, n)]))
        .sum();
    total / items.len() as f64
}

fn oracle_outcome(a: &Answers) -> f64 {
    let mut items = vec![];
    items.extend([1, 2, 10, 12].map(|n| ("WAISR", 0, n)));
    items.extend([3, 4].map(|n| ("SRS", 0, n)));
    items.extend([31, 37].map(|n| ("CECS", 1, n)));
    items.extend((1..=8).map(|n| ("CECS", 2, n)));
    oracle_mean(a, &items)
}

fn oracle_alliance(a: &Answers) -> f64 {
    let mut items = vec![];
    items.extend([3, 4, 5, 6, 7, 8, 9, 11].map(|n| ("WAISR", 0, n)));
    items.extend([1, 2].map(|n| ("SRS", 0, n)));
    items.extend((1..=44).filter(|n| *n != 31 && *n != 37).map(|n| ("CECS", 1, n)));
    oracle_mean(a, &items)
}

/// SEQ feelings from item numbers: (number, flipped).
fn oracle_feeling(a: &Answers, items: [(u32, bool); 5]) -> f64 {
    let total: f64 = items
        .iter()
        .map(|&(n, flipped)| {
            let raw = a[&("SEQ", 0, n)] as f64;
            if flipped {
                8.0 - raw
            } else {
                raw
            }
        })
        .sum();
    total / 5.0
}

const ORACLE_DEPTH: [(u32, bool); 5] = [(3, true), (4, false), (7, true), (8, false), (9, true)];
const ORACLE_SMOOTHNESS: [(u32, bool); 5] = [(2, false), (5, true), (6, false), (10, false), (11, true)];
const ORACLE_POSITIVITY: [(u32, bool); 5] = [(12, true), (13, false), (15, false), (17, true), (18, true)];
const ORACLE_AROUSAL: [(u32, bool); 5] = [(14, true), (16, false), (19, false), (20, true), (21, false)];

fn scoring_oracle() -> Outcome {
    let reg = registry();
    let outcome_sel = session_outcome_items();
    let alliance_sel = therapeutic_alliance_items();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sets: Vec<Answers> = (0..1000).map(|_| random_answers(&mut rng)).collect();
    let started = Instant::now();
    let mut worst = 0.0f64;
    for a in &sets {
        let set = to_response_set(a);
        let o = aspect_score(reg, &set, &outcome_sel).map_err(|e| e.to_string())?;
        let t = aspect_score(reg, &set, &alliance_sel).map_err(|e| e.to_string())?;
        let f = seq_dimensions(reg, &set);
        let pairs = [
            (o.value, oracle_outcome(a)),
            (t.value, oracle_alliance(a)),
            (f.depth.ok_or("depth undefined")?, oracle_feeling(a, ORACLE_DEPTH)),
            (f.smoothness.ok_or("smoothness undefined")?, oracle_feeling(a, ORACLE_SMOOTHNESS)),
            (f.positivity.ok_or("positivity undefined")?, oracle_feeling(a, ORACLE_POSITIVITY)),
            (f.arousal.ok_or("arousal undefined")?, oracle_feeling(a, ORACLE_AROUSAL)),
        ];
        for (got, want) in pairs {
            worst = worst.max((got - want).abs());
        }
    }
    let elapsed = started.elapsed();
    check(
        worst <= 1e-12 && elapsed < Duration::from_secs(5),
        format!("1000 sets, max |diff| {worst:.1e}, {:.3}s", elapsed.as_secs_f64()),
        format!("max |diff| {worst:.1e}, {:.3}s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------

fn reverse_scoring() -> Outcome {
    let mut n = 0;
    for inst in registry().instruments() {
        for item in inst.reverse_items() {
            let at_min = normalize_item(item, item.scale_min).map_err(|e| e.to_string())?;
            let at_max = normalize_item(item, item.scale_max).map_err(|e| e.to_string())?;
            if at_min != 1.0 || at_max != 1.0 / item.scale_max as f64 {
                return Err(format!(
                    "{} {}: min -> {at_min}, max -> {at_max}",
                    inst.id.as_str(),
                    item.item_ref()
                ));
            }
            n += 1;
        }
    }
    check(n == 19, format!("{n} reverse items"), format!("expected 19 reverse items, found {n}"))
}

fn seq_midpoint() -> Outcome {
    let mut set = QuestionnaireResponseSet::default();
    for n in 1..=21 {
        set.set_raw(InstrumentId::Seq, ItemRef::new(n), 4);
    }
    let f = seq_dimensions(registry(), &set);
    let all = [f.depth, f.smoothness, f.positivity, f.arousal];
    check(
        all.iter().all(|v| *v == Some(4.0)),
        "all four dimensions 4.0",
        format!("{all:?}"),
    )
}

fn lsm_criterion() -> Outcome {
    let bundled = FunctionWordLexicon::bundled();
    let text = "I think that we should not go to the store because it is very late and he was tired.";
    let same = lsm(text, text, &bundled).map_err(|e| e.to_string())?;

    // one lexicon word per category; the two 20-token texts differ only in
    // one negation against one content word
    let lex = FunctionWordLexicon::new(
        Lexicon::from_sources([
            ("prepositions", "of\n"),
            ("articles", "the\n"),
            ("auxiliary_verbs", "is\n"),
            ("adverbs", "very\n"),
            ("conjunctions", "and\n"),
            ("personal_pronouns", "i\n"),
            ("impersonal_pronouns", "it\n"),
            ("negations", "not\n"),
        ])
        .map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let base = "of the is very and i it x x x x x x x x x x x x";
    let diverged = lsm(&format!("{base} not"), &format!("{base} y"), &lex).map_err(|e| e.to_string())?;
    // seven categories match exactly, negations score 1 - 5/(5 + 0.0001)
    let hand = (7.0 + (1.0 - 5.0 / 5.0001)) / 8.0;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vocab = [
        "the", "a", "of", "in", "i", "you", "it", "not", "and", "but", "is", "very", "dog", "run", "never", "we",
    ];
    let mut in_range = true;
    for _ in 0..500 {
        let mut sample = || {
            let len = rng.random_range(1..30);
            (0..len).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
        };
        let (a, b) = (sample(), sample());
        let v = lsm(&a, &b, &bundled).map_err(|e| e.to_string())?;
        in_range &= v > 0.0 && v <= 1.0;
    }
    check(
        same == 1.0 && (diverged - hand).abs() <= 1e-3 && (diverged - 0.875).abs() <= 1e-3 && in_range,
        format!("identical 1.0, divergence {diverged:.6} (hand {hand:.6}), 500 random pairs in (0,1]"),
        format!("identical {same}, divergence {diverged} vs {hand}, in range {in_range}"),
    )
}

fn relative_similarity_arithmetic() -> Outcome {
    let r = normalized_relative_similarity(0.72, 0.19).map_err(|e| e.to_string())?;
    check(
        (r - 73.02).abs() <= 1.5,
        format!("0.72/0.19 -> {r:.2}% (published 73.02%)"),
        format!("0.72/0.19 -> {r:.4}%"),
    )
}

// ---------------------------------------------------------------------------
// Mann-Whitney oracle

/// Twice U, so ties stay integral.
fn twice_u(a: &[i64], b: &[i64]) -> i64 {
    let mut u = 0;
    for x in a {
        for y in b {
            u += match x.cmp(y) {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    u
}

/// Two-sided p over every split of the pooled values into groups of the
/// original sizes.
fn exhaustive_p(a: &[i64], b: &[i64]) -> f64 {
    let pooled: Vec<i64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let center2 = (a.len() * b.len()) as i64;
    let observed = (twice_u(a, b) - center2).abs();
    let (mut extreme, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let mut ga = Vec::new();
        let mut gb = Vec::new();
        for (i, v) in pooled.iter().enumerate() {
            if mask & (1 << i) != 0 {
                ga.push(*v);
            } else {
                gb.push(*v);
            }
        }
        if (twice_u(&ga, &gb) - center2).abs() >= observed {
            extreme += 1;
        }
        total += 1;
    }
    extreme as f64 / total as f64
}

fn mann_whitney_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = 600;
    for case in 0..cases {
        let na = rng.random_range(2..=8);
        let nb = rng.random_range(2..=10 - na);
        let spread = rng.random_range(2..=12);
        let a: Vec<i64> = (0..na).map(|_| rng.random_range(0..spread)).collect();
        let b: Vec<i64> = (0..nb).map(|_| rng.random_range(0..spread)).collect();
        let fa: Vec<f64> = a.iter().map(|v| *v as f64).collect();
        let fb: Vec<f64> = b.iter().map(|v| *v as f64).collect();
        let got = mann_whitney_u(&fa, &fb).map_err(|e| e.to_string())?;
        let want = exhaustive_p(&a, &b);
        if got.p != want || got.u * 2.0 != twice_u(&a, &b) as f64 {
            return Err(format!("case {case}: {a:?} vs {b:?}: p {} (oracle {want}), U {}", got.p, got.u));
        }
    }
    Ok(format!("{cases} cases with combined n <= 10, p identical"))
}

// ---------------------------------------------------------------------------
// Pipeline runs

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_clientsim"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(
        out.status.success(),
        "",
        format!(
            "clientsim {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ),
    )
    .map(|_| ())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn fixture_run(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let store = dir.join("store");
    let st = p(&store);
    cli(&["ingest", p(&fixture("corpus.json")), "--out", st])?;
    cli(&["extract-profiles", "--store", st])?;
    cli(&["simulate", "--store", st, "--plan", p(&fixture("plan.json")), "--mode", "client-x-mirror"])?;
    cli(&["extract-profiles", "--store", st, "--sessions", "origin=sim-client-x-llm"])?;
    cli(&["assess", "--store", st])?;
    cli(&["report", "--store", st, "--groups", p(&fixture("groups.json"))])?;
    let mut out = Vec::new();
    for ext in ["json", "md", "csv"] {
        let name = format!("fixture.{ext}");
        let bytes = std::fs::read(store.join("reports").join(&name)).map_err(|e| format!("{name}: {e}"))?;
        out.push((name, bytes));
    }
    Ok(out)
}

fn end_to_end_determinism() -> Outcome {
    let mut runs = Vec::new();
    let mut slowest = Duration::ZERO;
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let started = Instant::now();
        runs.push(fixture_run(dir.path())?);
        slowest = slowest.max(started.elapsed());
    }
    let identical = runs[0] == runs[1];
    check(
        identical && slowest < Duration::from_secs(60),
        format!("6 sessions, 3 report files byte-identical, slowest run {:.2}s", slowest.as_secs_f64()),
        format!("identical {identical}, slowest run {:.2}s", slowest.as_secs_f64()),
    )
}

fn synthetic_corpus(per_group: usize) -> Value {
    let mut sessions = Vec::new();
    for (quality, marker, therapist_lines) in [
        (
            "high",
            "[quality:high]",
            [
                "What would you like to focus on today?",
                "It sounds like this matters a great deal to you.",
                "What would change if you took that step?",
                "You have thought carefully about this.",
            ],
        ),
        (
            "low",
            "[quality:low]",
            [
                "You need to stop doing that.",
                "That is not a good reason.",
                "Just follow the plan I gave you.",
                "We are running out of time.",
            ],
        ),
    ] {
        for i in 0..per_group {
            let mut turns = Vec::new();
            for (k, line) in therapist_lines.iter().enumerate() {
                turns.push(json!({ "speaker": "therapist", "text": format!("{marker} {line}") }));
                turns.push(json!({
                    "speaker": "client",
                    "text": format!("Session {i}, answer {k}: I keep coming back to the same worry about work."),
                }));
            }
            sessions.push(json!({ "id": format!("syn-{quality}-{i:02}"), "quality": quality, "turns": turns }));
        }
    }
    Value::Array(sessions)
}

fn synthetic_discrimination() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("synthetic.json");
    let groups = dir.path().join("groups.json");
    std::fs::write(&corpus, synthetic_corpus(20).to_string()).map_err(|e| e.to_string())?;
    std::fs::write(
        &groups,
        json!({
            "run_id": "synthetic",
            "groups": { "high": { "quality": "high" }, "low": { "quality": "low" } },
            "comparisons": [["high", "low"]],
        })
        .to_string(),
    )
    .map_err(|e| e.to_string())?;
    let store = dir.path().join("store");
    let st = p(&store);
    cli(&["ingest", p(&corpus), "--out", st])?;
    cli(&["extract-profiles", "--store", st])?;
    cli(&["assess", "--store", st])?;
    cli(&["report", "--store", st, "--groups", p(&groups), "--format", "json"])?;
    let text = std::fs::read_to_string(store.join("reports/synthetic.json")).map_err(|e| e.to_string())?;
    let report: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let so = &report["comparisons"][0]["aspects"]["session_outcome"];
    let n_high = report["groups"][0]["sessions"].as_array().map_or(0, Vec::len);
    let n_low = report["groups"][1]["sessions"].as_array().map_or(0, Vec::len);
    let (high, low, pv) = (so["mean_a"].as_f64(), so["mean_b"].as_f64(), so["p"].as_f64());
    match (high, low, pv) {
        (Some(h), Some(l), Some(pv)) => check(
            n_high == 20 && n_low == 20 && h > l && pv < 0.05,
            format!("20 vs 20 sessions, mean {h:.4} > {l:.4}, p = {pv:.2e}"),
            format!("n {n_high}/{n_low}, means {h:.4} vs {l:.4}, p = {pv:.4}"),
        ),
        _ => Err(format!("session outcome comparison missing: {so}")),
    }
}

// ---------------------------------------------------------------------------

fn registry_integrity() -> Outcome {
    let reg = registry();
    let expected = [
        (InstrumentId::Phq9, 9, 0),
        (InstrumentId::Gad7, 7, 0),
        (InstrumentId::Oq45, 45, 0),
        (InstrumentId::Srs, 4, 0),
        (InstrumentId::Cecs, 52, 14),
        (InstrumentId::Seq, 21, 0),
        (InstrumentId::WaiSr, 12, 0),
        (InstrumentId::Haq2, 19, 5),
    ];
    for (id, items, reversed) in expected {
        let inst = reg.instrument(id);
        let got = (inst.items.len(), inst.reverse_items().count());
        if got != (items, reversed) {
            return Err(format!("{}: {got:?} items/reversed, expected {:?}", id.as_str(), (items, reversed)));
        }
    }
    let symptoms = reg.symptoms().len();
    let big_five = Trait::ALL.iter().filter(|t| t.is_big_five()).all(|t| t.levels().len() == 5);
    let others = Trait::ALL.iter().filter(|t| !t.is_big_five()).all(|t| t.levels().len() == 3);
    check(
        symptoms == 61 && big_five && others && reg.traits().len() == 8,
        "item counts 9/7/45/4/52/21/12/19, 14 + 5 reverse items, 61 symptoms, 5 + 3 trait levels",
        format!("symptoms {symptoms}, trait levels ok {big_five}/{others}"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("scoring oracle", scoring_oracle),
        ("reverse scoring", reverse_scoring),
        ("SEQ midpoint", seq_midpoint),
        ("language style matching", lsm_criterion),
        ("relative similarity arithmetic", relative_similarity_arithmetic),
        ("Mann-Whitney exact p", mann_whitney_oracle),
        ("end-to-end determinism", end_to_end_determinism),
        ("synthetic discrimination", synthetic_discrimination),
        ("registry integrity", registry_integrity),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
