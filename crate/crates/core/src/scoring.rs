//! Client-centered assessment scores computed from completed questionnaires.
//!
//! Every item is first normalized into (0, 1] so that higher is better:
//! `raw / max` for ordinary items and `(max + 1 - raw) / max` for negatively
//! phrased ones. Session outcome and therapeutic alliance are means of
//! normalized scores over fixed WAI-SR, SRS and CECS item selections. The four
//! SEQ feeling dimensions average five bipolar adjective ratings each, with
//! "negative" adjectives flipped as `8 - raw`, and stay on the 1..=7 scale.
//!
//! Missing items are dropped from both numerator and denominator. An aspect
//! with more than half of its items missing is reported as absent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instruments::{InstrumentId, Item, ItemRef, Registry};

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("{item}: raw score {raw} outside {min}..={max}")]
    OutOfRange {
        item: String,
        raw: i64,
        min: i64,
        max: i64,
    },
    #[error("{0}: reverse scoring is undefined for a scale starting at 0")]
    ReverseOnZeroBasedScale(String),
    #[error("no selected item has a score")]
    Undefined,
    #[error("empty item selection")]
    EmptySelection,
    #[error("{instrument} has no item {item}")]
    UnknownItem {
        instrument: InstrumentId,
        item: String,
    },
}

/// One item's answer from a completion run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ItemResponse {
    /// `None` when the item is missing (refusal or unparseable answer).
    pub raw: Option<i64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuestionnaireResponseSet {
    pub provenance: Provenance,
    pub instruments: BTreeMap<InstrumentId, BTreeMap<ItemRef, ItemResponse>>,
}

impl QuestionnaireResponseSet {
    pub fn raw(&self, instrument: InstrumentId, item: &ItemRef) -> Option<i64> {
        self.instruments
            .get(&instrument)
            .and_then(|m| m.get(item))
            .and_then(|r| r.raw)
    }

    pub fn set_raw(&mut self, instrument: InstrumentId, item: ItemRef, raw: i64) {
        self.instruments
            .entry(instrument)
            .or_default()
            .entry(item)
            .or_default()
            .raw = Some(raw);
    }

    /// SEQ explanations in item order, for style analysis.
    pub fn explanations(&self, instrument: InstrumentId) -> Vec<&str> {
        self.instruments
            .get(&instrument)
            .map(|m| {
                m.values()
                    .filter_map(|r| r.explanation.as_deref())
                    .filter(|e| !e.trim().is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn count_missing(&self) -> usize {
        self.instruments
            .values()
            .flat_map(|m| m.values())
            .filter(|r| r.raw.is_none())
            .count()
    }
}

pub fn normalize_item(item: &Item, raw: i64) -> Result<f64, ScoringError> {
    if !item.in_range(raw) {
        return Err(ScoringError::OutOfRange {
            item: format!("{} {}", item.instrument, item.item_ref()),
            raw,
            min: item.scale_min,
            max: item.scale_max,
        });
    }
    let max = item.scale_max as f64;
    if item.negatively_phrased {
        if item.scale_min < 1 {
            return Err(ScoringError::ReverseOnZeroBasedScale(format!(
                "{} {}",
                item.instrument,
                item.item_ref()
            )));
        }
        Ok((max + 1.0 - raw as f64) / max)
    } else {
        Ok(raw as f64 / max)
    }
}

pub type Selection = Vec<(InstrumentId, ItemRef)>;

fn numbered(id: InstrumentId, nums: impl IntoIterator<Item = u32>) -> Selection {
    nums.into_iter().map(|n| (id, ItemRef::new(n))).collect()
}

fn cecs(part: &str, nums: impl IntoIterator<Item = u32>) -> Selection {
    nums.into_iter()
        .map(|n| (InstrumentId::Cecs, ItemRef::in_part(part, n)))
        .collect()
}

/// WAI-SR 1, 2, 10, 12; SRS 3, 4; CECS part 1 items 31, 37; CECS part 2 items 1-8.
pub fn session_outcome_items() -> Selection {
    let mut s = numbered(InstrumentId::WaiSr, [1, 2, 10, 12]);
    s.extend(numbered(InstrumentId::Srs, [3, 4]));
    s.extend(cecs("part1", [31, 37]));
    s.extend(cecs("part2", 1..=8));
    s
}

/// WAI-SR 3-9, 11; SRS 1, 2; CECS part 1 items 1-30, 32-36, 38-44.
pub fn therapeutic_alliance_items() -> Selection {
    let mut s = numbered(InstrumentId::WaiSr, (3..=9).chain([11]));
    s.extend(numbered(InstrumentId::Srs, [1, 2]));
    s.extend(cecs("part1", (1..=30).chain(32..=36).chain(38..=44)));
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectValue {
    pub value: f64,
    pub n_present: usize,
    pub n_missing: usize,
}

/// Mean normalized score over the present items of `selection`.
pub fn aspect_score(
    registry: &Registry,
    responses: &QuestionnaireResponseSet,
    selection: &[(InstrumentId, ItemRef)],
) -> Result<AspectValue, ScoringError> {
    if selection.is_empty() {
        return Err(ScoringError::EmptySelection);
    }
    let mut sum = 0.0;
    let mut n_present = 0;
    let mut n_missing = 0;
    for (id, r) in selection {
        let item = registry
            .instrument(*id)
            .item(r)
            .ok_or_else(|| ScoringError::UnknownItem {
                instrument: *id,
                item: r.to_string(),
            })?;
        match responses.raw(*id, r) {
            Some(raw) => {
                sum += normalize_item(item, raw)?;
                n_present += 1;
            }
            None => n_missing += 1,
        }
    }
    if n_present == 0 {
        return Err(ScoringError::Undefined);
    }
    Ok(AspectValue {
        value: sum / n_present as f64,
        n_present,
        n_missing,
    })
}

/// (right-pole adjective, flipped as `8 - raw`)
pub const DEPTH: [(&str, bool); 5] = [
    ("worthless", true),
    ("deep", false),
    ("empty", true),
    ("powerful", false),
    ("ordinary", true),
];
pub const SMOOTHNESS: [(&str, bool); 5] = [
    ("easy", false),
    ("tense", true),
    ("pleasant", false),
    ("smooth", false),
    ("uncomfortable", true),
];
pub const POSITIVITY: [(&str, bool); 5] = [
    ("sad", true),
    ("pleased", false),
    ("definite", false),
    ("afraid", true),
    ("unfriendly", true),
];
pub const AROUSAL: [(&str, bool); 5] = [
    ("still", true),
    ("excited", false),
    ("fast", false),
    ("peaceful", true),
    ("aroused", false),
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Feelings {
    pub depth: Option<f64>,
    pub smoothness: Option<f64>,
    pub positivity: Option<f64>,
    pub arousal: Option<f64>,
}

impl Feelings {
    pub fn get(&self, d: FeelingDimension) -> Option<f64> {
        match d {
            FeelingDimension::Depth => self.depth,
            FeelingDimension::Smoothness => self.smoothness,
            FeelingDimension::Positivity => self.positivity,
            FeelingDimension::Arousal => self.arousal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeelingDimension {
    Depth,
    Smoothness,
    Positivity,
    Arousal,
}

impl FeelingDimension {
    pub const ALL: [FeelingDimension; 4] = [
        FeelingDimension::Depth,
        FeelingDimension::Smoothness,
        FeelingDimension::Positivity,
        FeelingDimension::Arousal,
    ];

    pub fn adjectives(self) -> &'static [(&'static str, bool); 5] {
        match self {
            FeelingDimension::Depth => &DEPTH,
            FeelingDimension::Smoothness => &SMOOTHNESS,
            FeelingDimension::Positivity => &POSITIVITY,
            FeelingDimension::Arousal => &AROUSAL,
        }
    }
}

fn seq_dimension(
    registry: &Registry,
    responses: &QuestionnaireResponseSet,
    dim: FeelingDimension,
) -> Option<f64> {
    let seq = registry.instrument(InstrumentId::Seq);
    let flip_base = (seq.scale_max + 1) as f64;
    let mut sum = 0.0;
    for (adjective, flipped) in dim.adjectives() {
        let item = seq.item_by_right_pole(adjective)?;
        let raw = responses.raw(InstrumentId::Seq, &item.item_ref())? as f64;
        sum += if *flipped { flip_base - raw } else { raw };
    }
    Some(sum / 5.0)
}

/// Depth, smoothness, positivity and arousal. A dimension with any of its
/// five adjectives missing is `None`; the others are still computed.
pub fn seq_dimensions(registry: &Registry, responses: &QuestionnaireResponseSet) -> Feelings {
    Feelings {
        depth: seq_dimension(registry, responses, FeelingDimension::Depth),
        smoothness: seq_dimension(registry, responses, FeelingDimension::Smoothness),
        positivity: seq_dimension(registry, responses, FeelingDimension::Positivity),
        arousal: seq_dimension(registry, responses, FeelingDimension::Arousal),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MissingCounts {
    pub session_outcome: usize,
    pub therapeutic_alliance: usize,
    pub feelings: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AspectScores {
    pub session_outcome: Option<f64>,
    pub therapeutic_alliance: Option<f64>,
    pub feelings: Feelings,
    pub missing: MissingCounts,
}

/// The six reported aspects, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    SessionOutcome,
    TherapeuticAlliance,
    Depth,
    Smoothness,
    Positivity,
    Arousal,
}

impl Aspect {
    pub const ALL: [Aspect; 6] = [
        Aspect::SessionOutcome,
        Aspect::TherapeuticAlliance,
        Aspect::Depth,
        Aspect::Smoothness,
        Aspect::Positivity,
        Aspect::Arousal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Aspect::SessionOutcome => "Session Outcome",
            Aspect::TherapeuticAlliance => "Therapeutic Alliance",
            Aspect::Depth => "Depth",
            Aspect::Smoothness => "Smoothness",
            Aspect::Positivity => "Positivity",
            Aspect::Arousal => "Arousal",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Aspect::SessionOutcome => "session_outcome",
            Aspect::TherapeuticAlliance => "therapeutic_alliance",
            Aspect::Depth => "depth",
            Aspect::Smoothness => "smoothness",
            Aspect::Positivity => "positivity",
            Aspect::Arousal => "arousal",
        }
    }
}

impl AspectScores {
    pub fn get(&self, aspect: Aspect) -> Option<f64> {
        match aspect {
            Aspect::SessionOutcome => self.session_outcome,
            Aspect::TherapeuticAlliance => self.therapeutic_alliance,
            Aspect::Depth => self.feelings.depth,
            Aspect::Smoothness => self.feelings.smoothness,
            Aspect::Positivity => self.feelings.positivity,
            Aspect::Arousal => self.feelings.arousal,
        }
    }
}

fn thresholded(v: Result<AspectValue, ScoringError>, total: usize) -> Result<(Option<f64>, usize), ScoringError> {
    match v {
        Ok(a) if a.n_missing * 2 > total => Ok((None, a.n_missing)),
        Ok(a) => Ok((Some(a.value), a.n_missing)),
        Err(ScoringError::Undefined) => Ok((None, total)),
        Err(e) => Err(e),
    }
}

/// All six aspects for one completed response set.
pub fn score(
    registry: &Registry,
    responses: &QuestionnaireResponseSet,
) -> Result<AspectScores, ScoringError> {
    let outcome_sel = session_outcome_items();
    let alliance_sel = therapeutic_alliance_items();
    let (session_outcome, miss_o) = thresholded(
        aspect_score(registry, responses, &outcome_sel),
        outcome_sel.len(),
    )?;
    let (therapeutic_alliance, miss_a) = thresholded(
        aspect_score(registry, responses, &alliance_sel),
        alliance_sel.len(),
    )?;
    let seq = registry.instrument(InstrumentId::Seq);
    let seq_missing = seq
        .items
        .iter()
        .filter(|i| responses.raw(InstrumentId::Seq, &i.item_ref()).is_none())
        .count();
    Ok(AspectScores {
        session_outcome,
        therapeutic_alliance,
        feelings: seq_dimensions(registry, responses),
        missing: MissingCounts {
            session_outcome: miss_o,
            therapeutic_alliance: miss_a,
            feelings: seq_missing,
        },
    })
}
