//! Group assessments, comparisons, stability correlations and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::files;
use crate::metrics::{self, lexicon::FunctionWordLexicon, text, ConsistencyReport, MetricsError, PMethod, Summary};
use crate::model::{SessionTranscript, Speaker};
use crate::scoring::{Aspect, AspectScores};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("group {0:?} has no sessions")]
    EmptyGroup(String),
    #[error("unknown group {0:?}")]
    UnknownGroup(String),
    #[error("need at least 3 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("bad run id {0:?}")]
    BadRunId(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Verbal style of one speaker in one session.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionStyle {
    pub tokens: usize,
    pub responses: usize,
    pub turns: usize,
    /// Against the same speaker in the reference session, when there is one.
    pub vocab_overlap: Option<f64>,
    pub lsm: Option<f64>,
}

impl SessionStyle {
    pub fn avg_response_tokens(&self) -> Option<f64> {
        (self.responses > 0).then(|| self.tokens as f64 / self.responses as f64)
    }
}

pub fn session_style(
    transcript: &SessionTranscript,
    speaker: Speaker,
    reference: Option<&SessionTranscript>,
    lexicon: &FunctionWordLexicon,
) -> SessionStyle {
    let mine = transcript.speaker_text(speaker);
    let (vocab_overlap, lsm) = match reference {
        Some(r) => {
            let theirs = r.speaker_text(speaker);
            let overlap = text::vocab_overlap(&mine, &theirs);
            (
                (!overlap.degenerate).then_some(overlap.value),
                metrics::lsm(&mine, &theirs, lexicon).ok(),
            )
        }
        None => (None, None),
    };
    SessionStyle {
        tokens: transcript.utterances(speaker).map(|u| text::tokens(u).len()).sum(),
        responses: transcript.utterances(speaker).count(),
        turns: transcript.turns().len(),
        vocab_overlap,
        lsm,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAssessment {
    pub session_id: String,
    pub scores: AspectScores,
    pub style: SessionStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectSummary {
    /// Absent when no session defines the aspect.
    pub summary: Option<Summary>,
    pub undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSummary {
    pub avg_response_tokens: Option<f64>,
    pub avg_session_turns: f64,
    pub vocab_overlap: Option<f64>,
    pub lsm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TherapistAssessment {
    pub group: String,
    /// Sorted by session id.
    pub sessions: Vec<SessionAssessment>,
    pub aspects: BTreeMap<Aspect, AspectSummary>,
    pub style: StyleSummary,
}

impl TherapistAssessment {
    pub fn values(&self, aspect: Aspect) -> Vec<f64> {
        self.sessions.iter().filter_map(|s| s.scores.get(aspect)).collect()
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn assemble(group: &str, mut sessions: Vec<SessionAssessment>) -> Result<TherapistAssessment, ReportError> {
    if sessions.is_empty() {
        return Err(ReportError::EmptyGroup(group.to_string()));
    }
    sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let mut aspects = BTreeMap::new();
    for aspect in Aspect::ALL {
        let values: Vec<f64> = sessions.iter().filter_map(|s| s.scores.get(aspect)).collect();
        let summary = if values.is_empty() { None } else { Some(Summary::of(&values)?) };
        aspects.insert(
            aspect,
            AspectSummary {
                summary,
                undefined: sessions.len() - values.len(),
            },
        );
    }
    let tokens: usize = sessions.iter().map(|s| s.style.tokens).sum();
    let responses: usize = sessions.iter().map(|s| s.style.responses).sum();
    let turns: Vec<f64> = sessions.iter().map(|s| s.style.turns as f64).collect();
    let overlaps: Vec<f64> = sessions.iter().filter_map(|s| s.style.vocab_overlap).collect();
    let lsms: Vec<f64> = sessions.iter().filter_map(|s| s.style.lsm).collect();
    let style = StyleSummary {
        avg_response_tokens: (responses > 0).then(|| tokens as f64 / responses as f64),
        avg_session_turns: mean(&turns).unwrap_or(0.0),
        vocab_overlap: mean(&overlaps),
        lsm: mean(&lsms),
    };
    Ok(TherapistAssessment {
        group: group.to_string(),
        sessions,
        aspects,
        style,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// The first group's mean is larger.
    Higher,
    Lower,
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectComparison {
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    pub direction: Option<Direction>,
    pub u: Option<f64>,
    /// Absent when either side has fewer than two defined values.
    pub p: Option<f64>,
    pub method: Option<PMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub group_a: String,
    pub group_b: String,
    pub aspects: BTreeMap<Aspect, AspectComparison>,
}

/// Two-sided Mann-Whitney per aspect over the sessions that define it.
pub fn compare(a: &TherapistAssessment, b: &TherapistAssessment) -> Result<Comparison, ReportError> {
    let mut aspects = BTreeMap::new();
    for aspect in Aspect::ALL {
        let (xa, xb) = (a.values(aspect), b.values(aspect));
        let (mean_a, mean_b) = (mean(&xa), mean(&xb));
        let direction = mean_a.zip(mean_b).map(|(ma, mb)| match ma.total_cmp(&mb) {
            std::cmp::Ordering::Greater => Direction::Higher,
            std::cmp::Ordering::Less => Direction::Lower,
            std::cmp::Ordering::Equal => Direction::Equal,
        });
        let test = if xa.len() >= 2 && xb.len() >= 2 {
            Some(metrics::mann_whitney_u(&xa, &xb)?)
        } else {
            None
        };
        aspects.insert(
            aspect,
            AspectComparison {
                mean_a,
                mean_b,
                direction,
                u: test.map(|t| t.u),
                p: test.map(|t| t.p),
                method: test.map(|t| t.method),
            },
        );
    }
    Ok(Comparison {
        group_a: a.group.clone(),
        group_b: b.group.clone(),
        aspects,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    #[default]
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectCorrelation {
    pub pairs: usize,
    /// Absent with fewer than 3 usable pairs or zero variance.
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub method: Correlation,
    pub aspects: BTreeMap<Aspect, AspectCorrelation>,
}

/// Correlation per aspect between assessments of original sessions and of
/// their simulated counterparts. Pairs where either side leaves the aspect
/// undefined are skipped for that aspect.
pub fn stability_correlation(
    pairs: &[(AspectScores, AspectScores)],
    method: Correlation,
) -> Result<Stability, ReportError> {
    if pairs.len() < 3 {
        return Err(ReportError::TooFewPairs(pairs.len()));
    }
    let mut aspects = BTreeMap::new();
    for aspect in Aspect::ALL {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs
            .iter()
            .filter_map(|(a, b)| a.get(aspect).zip(b.get(aspect)))
            .unzip();
        let r = if x.len() < 3 {
            None
        } else {
            match method {
                Correlation::Pearson => metrics::pearson(&x, &y)?,
                Correlation::Spearman => metrics::spearman(&x, &y)?,
            }
        };
        aspects.insert(aspect, AspectCorrelation { pairs: x.len(), r });
    }
    Ok(Stability { method, aspects })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub groups: Vec<TherapistAssessment>,
    pub comparisons: Vec<Comparison>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<Stability>,
    /// Profile consistency per simulated session.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub consistency: BTreeMap<String, ConsistencyReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Markdown,
    Csv,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Json, Format::Markdown, Format::Csv];

    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Markdown => "md",
            Format::Csv => "csv",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "md" | "markdown" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            _ => Err(format!("unknown report format {s:?}")),
        }
    }
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn render_markdown(r: &Report) -> String {
    let mut out = format!("# Assessment report {}\n\n", r.run_id);
    out += "## Verbal style\n\n";
    out += "| Group | Sessions | Avg response tokens | Avg session turns | Vocab overlap | LSM |\n";
    out += "|---|---|---|---|---|---|\n";
    for g in &r.groups {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.2} | {} | {} |",
            g.group,
            g.sessions.len(),
            num(g.style.avg_response_tokens),
            g.style.avg_session_turns,
            num(g.style.vocab_overlap),
            num(g.style.lsm)
        );
    }
    for aspect in Aspect::ALL {
        let _ = write!(
            out,
            "\n## {}\n\n| Group | n | Undefined | Mean | Median | Q1 | Q3 | Min | Max |\n|---|---|---|---|---|---|---|---|---|\n",
            aspect.label()
        );
        for g in &r.groups {
            let a = &g.aspects[&aspect];
            match &a.summary {
                Some(s) => {
                    let _ = writeln!(
                        out,
                        "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                        g.group, s.n, a.undefined, s.mean, s.median, s.q1, s.q3, s.min, s.max
                    );
                }
                None => {
                    let _ = writeln!(out, "| {} | 0 | {} | n/a | n/a | n/a | n/a | n/a | n/a |", g.group, a.undefined);
                }
            }
        }
    }
    for c in &r.comparisons {
        let _ = write!(
            out,
            "\n## {} vs {}\n\n| Aspect | Mean A | Mean B | Direction | U | p | Method |\n|---|---|---|---|---|---|---|\n",
            c.group_a, c.group_b
        );
        for (aspect, a) in &c.aspects {
            let direction = a.direction.map_or("n/a", |d| match d {
                Direction::Higher => "higher",
                Direction::Lower => "lower",
                Direction::Equal => "equal",
            });
            let method = a.method.map_or("n/a", |m| match m {
                PMethod::Exact => "exact",
                PMethod::Normal => "normal",
                PMethod::Degenerate => "degenerate",
            });
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                aspect.label(),
                num(a.mean_a),
                num(a.mean_b),
                direction,
                a.u.map_or("n/a".into(), |u| format!("{u}")),
                num(a.p),
                method
            );
        }
    }
    if let Some(s) = &r.stability {
        let _ = write!(
            out,
            "\n## Assessment stability ({:?})\n\n| Aspect | Pairs | r |\n|---|---|---|\n",
            s.method
        );
        for (aspect, c) in &s.aspects {
            let _ = writeln!(out, "| {} | {} | {} |", aspect.label(), c.pairs, num(c.r));
        }
    }
    if !r.consistency.is_empty() {
        out += "\n## Profile consistency\n\n";
        out += "| Session | Problem sim. (%) | Reason sim. (%) | Topic | Symptom P | Symptom R | Symptom F1 | Trait recall | Trait F1 |\n";
        out += "|---|---|---|---|---|---|---|---|---|\n";
        for (id, c) in &r.consistency {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                id,
                num(c.problem_rel_similarity),
                num(c.reason_rel_similarity),
                c.topic_match.map_or("n/a", |m| if m { "match" } else { "differ" }),
                c.symptom.precision,
                c.symptom.recall,
                c.symptom.f1,
                c.trait_recall,
                c.trait_f1
            );
        }
    }
    out
}

fn render_csv(r: &Report) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "aspect", "statistic", "value"]).expect("in-memory write");
    for g in &r.groups {
        for aspect in Aspect::ALL {
            let summary = g.aspects[&aspect].summary;
            for stat in Summary::STATISTICS {
                let value = summary
                    .and_then(|s| s.get(stat))
                    .map_or_else(String::new, |v| v.to_string());
                w.write_record([g.group.as_str(), aspect.key(), stat, &value])
                    .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

pub fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Markdown => render_markdown(report),
        Format::Csv => render_csv(report),
    }
}

pub fn report_path(root: &Path, run_id: &str, format: Format) -> PathBuf {
    root.join("reports").join(format!("{run_id}.{}", format.extension()))
}

/// Writes the report under `<root>/reports/` in each requested format.
pub fn write_report(root: &Path, report: &Report, formats: &[Format]) -> Result<Vec<PathBuf>, ReportError> {
    if !files::is_safe_id(&report.run_id) {
        return Err(ReportError::BadRunId(report.run_id.clone()));
    }
    let mut paths = Vec::new();
    for &f in formats {
        let path = report_path(root, &report.run_id, f);
        files::write_bytes_atomic(&path, render(report, f).as_bytes())
            .map_err(|source| ReportError::Io { path: path.clone(), source })?;
        paths.push(path);
    }
    Ok(paths)
}
