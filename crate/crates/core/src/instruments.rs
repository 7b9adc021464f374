//! Questionnaire instruments, the symptom taxonomy and the apparent-trait
//! taxonomy.
//!
//! Instruments are loaded from JSON data files (bundled copies are compiled
//! in; [`Registry::load_dir`] reads edited copies from disk). Loading checks
//! every instrument's item count and reverse-scored item count, the 61-entry
//! symptom taxonomy and the trait level lists, and fails naming the offending
//! instrument.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("instrument {instrument}: {problem}")]
    Instrument {
        instrument: String,
        problem: String,
    },
    #[error("symptom taxonomy: {0}")]
    Symptoms(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("{instrument}: scores out of range for items {items:?}")]
    OutOfRange {
        instrument: InstrumentId,
        items: Vec<String>,
    },
    #[error("{instrument}: unknown item {item}")]
    UnknownItem {
        instrument: InstrumentId,
        item: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstrumentId {
    #[serde(rename = "PHQ9")]
    Phq9,
    #[serde(rename = "GAD7")]
    Gad7,
    #[serde(rename = "OQ45")]
    Oq45,
    #[serde(rename = "SRS")]
    Srs,
    #[serde(rename = "CECS")]
    Cecs,
    #[serde(rename = "SEQ")]
    Seq,
    #[serde(rename = "WAISR")]
    WaiSr,
    #[serde(rename = "HAQ2")]
    Haq2,
}

impl InstrumentId {
    pub const ALL: [InstrumentId; 8] = [
        InstrumentId::Phq9,
        InstrumentId::Gad7,
        InstrumentId::Oq45,
        InstrumentId::Srs,
        InstrumentId::Cecs,
        InstrumentId::Seq,
        InstrumentId::WaiSr,
        InstrumentId::Haq2,
    ];

    /// The five questionnaires a simulated client completes after a session.
    pub const ASSESSMENT: [InstrumentId; 5] = [
        InstrumentId::Srs,
        InstrumentId::Cecs,
        InstrumentId::Seq,
        InstrumentId::WaiSr,
        InstrumentId::Haq2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InstrumentId::Phq9 => "PHQ9",
            InstrumentId::Gad7 => "GAD7",
            InstrumentId::Oq45 => "OQ45",
            InstrumentId::Srs => "SRS",
            InstrumentId::Cecs => "CECS",
            InstrumentId::Seq => "SEQ",
            InstrumentId::WaiSr => "WAISR",
            InstrumentId::Haq2 => "HAQ2",
        }
    }

    fn file_name(self) -> &'static str {
        match self {
            InstrumentId::Phq9 => "phq9.json",
            InstrumentId::Gad7 => "gad7.json",
            InstrumentId::Oq45 => "oq45.json",
            InstrumentId::Srs => "srs.json",
            InstrumentId::Cecs => "cecs.json",
            InstrumentId::Seq => "seq.json",
            InstrumentId::WaiSr => "waisr.json",
            InstrumentId::Haq2 => "haq2.json",
        }
    }

    fn bundled(self) -> &'static str {
        match self {
            InstrumentId::Phq9 => include_str!("../data/instruments/phq9.json"),
            InstrumentId::Gad7 => include_str!("../data/instruments/gad7.json"),
            InstrumentId::Oq45 => include_str!("../data/instruments/oq45.json"),
            InstrumentId::Srs => include_str!("../data/instruments/srs.json"),
            InstrumentId::Cecs => include_str!("../data/instruments/cecs.json"),
            InstrumentId::Seq => include_str!("../data/instruments/seq.json"),
            InstrumentId::WaiSr => include_str!("../data/instruments/waisr.json"),
            InstrumentId::Haq2 => include_str!("../data/instruments/haq2.json"),
        }
    }

    /// (item count, negatively phrased item count)
    fn expected_counts(self) -> (usize, usize) {
        match self {
            InstrumentId::Phq9 => (9, 0),
            InstrumentId::Gad7 => (7, 0),
            InstrumentId::Oq45 => (45, 0),
            InstrumentId::Srs => (4, 0),
            InstrumentId::Cecs => (52, 14),
            InstrumentId::Seq => (21, 0),
            InstrumentId::WaiSr => (12, 0),
            InstrumentId::Haq2 => (19, 5),
        }
    }
}

impl fmt::Display for InstrumentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InstrumentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        let norm = if norm == "HAQII" { "HAQ2".to_string() } else { norm };
        InstrumentId::ALL
            .into_iter()
            .find(|i| i.as_str() == norm)
            .ok_or_else(|| format!("unknown instrument {s:?}"))
    }
}

/// Item address within an instrument: `"3"` or `"part1.3"` for CECS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemRef {
    pub part: Option<String>,
    pub number: u32,
}

impl ItemRef {
    pub fn new(number: u32) -> Self {
        ItemRef { part: None, number }
    }

    pub fn in_part(part: &str, number: u32) -> Self {
        ItemRef {
            part: Some(part.to_string()),
            number,
        }
    }
}

impl fmt::Display for ItemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.part {
            Some(p) => write!(f, "{p}.{}", self.number),
            None => write!(f, "{}", self.number),
        }
    }
}

impl FromStr for ItemRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (part, num) = match s.rsplit_once('.') {
            Some((p, n)) => (Some(p.to_string()), n),
            None => (None, s),
        };
        let number = num
            .trim()
            .parse()
            .map_err(|_| format!("bad item reference {s:?}"))?;
        Ok(ItemRef { part, number })
    }
}

impl Serialize for ItemRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ItemRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub instrument: InstrumentId,
    pub part: Option<String>,
    pub number: u32,
    pub text: String,
    pub scale_min: i64,
    pub scale_max: i64,
    pub negatively_phrased: bool,
    /// Labels for specific scores, e.g. the SRS 0 and 10 statements.
    pub anchors: BTreeMap<i64, String>,
    /// Left and right adjectives of an SEQ bipolar item.
    pub poles: Option<(String, String)>,
}

impl Item {
    pub fn item_ref(&self) -> ItemRef {
        ItemRef {
            part: self.part.clone(),
            number: self.number,
        }
    }

    pub fn in_range(&self, raw: i64) -> bool {
        (self.scale_min..=self.scale_max).contains(&raw)
    }
}

#[derive(Debug, Clone)]
pub struct Instrument {
    pub id: InstrumentId,
    pub title: String,
    pub instruction: String,
    pub scale_min: i64,
    pub scale_max: i64,
    /// Meaning of individual scale points ("1" → "Strongly disagree").
    pub scale_labels: BTreeMap<i64, String>,
    pub items: Vec<Item>,
}

impl Instrument {
    pub fn item(&self, r: &ItemRef) -> Option<&Item> {
        self.items
            .iter()
            .find(|i| i.number == r.number && i.part == r.part)
    }

    pub fn reverse_items(&self) -> impl Iterator<Item = &Item> {
        self.items.iter().filter(|i| i.negatively_phrased)
    }

    /// Find the SEQ item whose right-hand pole is `adjective`.
    pub fn item_by_right_pole(&self, adjective: &str) -> Option<&Item> {
        self.items
            .iter()
            .find(|i| i.poles.as_ref().is_some_and(|(_, r)| r == adjective))
    }
}

#[derive(Deserialize)]
struct ScaleFile {
    min: i64,
    max: i64,
    #[serde(default)]
    labels: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct ItemFile {
    part: Option<String>,
    number: u32,
    text: String,
    poles: Option<[String; 2]>,
    #[serde(default)]
    anchors: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct InstrumentFile {
    id: InstrumentId,
    #[serde(default)]
    title: String,
    instruction: String,
    scale: ScaleFile,
    reverse: Vec<ItemRef>,
    items: Vec<ItemFile>,
}

fn parse_score_keys(
    id: InstrumentId,
    m: BTreeMap<String, String>,
) -> Result<BTreeMap<i64, String>, RegistryError> {
    m.into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse::<i64>()
                .map(|k| (k, v))
                .map_err(|_| RegistryError::Instrument {
                    instrument: id.to_string(),
                    problem: format!("label key {k:?} is not a score"),
                })
        })
        .collect()
}

fn parse_instrument(expected: InstrumentId, text: &str) -> Result<Instrument, RegistryError> {
    let bad = |problem: String| RegistryError::Instrument {
        instrument: expected.to_string(),
        problem,
    };
    let file: InstrumentFile =
        serde_json::from_str(text).map_err(|e| bad(format!("schema error: {e}")))?;
    if file.id != expected {
        return Err(bad(format!("file declares id {}", file.id)));
    }
    if file.scale.min >= file.scale.max {
        return Err(bad(format!(
            "scale min {} is not below max {}",
            file.scale.min, file.scale.max
        )));
    }
    let reverse: BTreeSet<ItemRef> = file.reverse.into_iter().collect();
    let mut items = Vec::with_capacity(file.items.len());
    let mut seen = BTreeSet::new();
    for it in file.items {
        let r = ItemRef {
            part: it.part.clone(),
            number: it.number,
        };
        if !seen.insert(r.clone()) {
            return Err(bad(format!("duplicate item {r}")));
        }
        items.push(Item {
            instrument: expected,
            negatively_phrased: reverse.contains(&r),
            part: it.part,
            number: it.number,
            text: it.text,
            scale_min: file.scale.min,
            scale_max: file.scale.max,
            anchors: parse_score_keys(expected, it.anchors)?,
            poles: it.poles.map(|[l, r]| (l, r)),
        });
    }
    if let Some(r) = reverse.iter().find(|r| !seen.contains(r)) {
        return Err(bad(format!("reverse list names missing item {r}")));
    }
    let (n_items, n_reverse) = expected.expected_counts();
    if items.len() != n_items {
        return Err(bad(format!(
            "expected {n_items} items, found {}",
            items.len()
        )));
    }
    if reverse.len() != n_reverse {
        return Err(bad(format!(
            "expected {n_reverse} negatively phrased items, found {}",
            reverse.len()
        )));
    }
    if expected == InstrumentId::Seq && items.iter().any(|i| i.poles.is_none()) {
        return Err(bad("every SEQ item needs a pair of poles".into()));
    }
    Ok(Instrument {
        id: expected,
        title: file.title,
        instruction: file.instruction,
        scale_min: file.scale.min,
        scale_max: file.scale.max,
        scale_labels: parse_score_keys(expected, file.scale.labels)?,
        items,
    })
}

// ---------------------------------------------------------------------------
// Symptoms

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SymptomCategory {
    Depression,
    Anxiety,
    SymptomDistress,
    InterpersonalRelations,
    SocialRoles,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SymptomDescriptor {
    pub id: String,
    pub text: String,
    pub category: SymptomCategory,
}

/// Which labels the two OQ-45 item groups carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OqGrouping {
    /// Interpersonal relations = items 4, 12, 14, 21, 28, 32, 38, 39, 44.
    #[default]
    AsPrinted,
    /// The conventional OQ-45 subscales, i.e. the two labels swapped.
    Standard,
}

#[derive(Deserialize)]
struct OqCategoriesFile {
    symptom_distress: Vec<u32>,
    interpersonal_relations: Vec<u32>,
    social_roles: Vec<u32>,
}

const OQ_CATEGORIES: &str = include_str!("../data/oq45_categories.json");

fn build_symptoms(
    instruments: &BTreeMap<InstrumentId, Instrument>,
    categories_json: &str,
    grouping: OqGrouping,
) -> Result<Vec<SymptomDescriptor>, RegistryError> {
    let cats: OqCategoriesFile = serde_json::from_str(categories_json)
        .map_err(|e| RegistryError::Symptoms(format!("category file: {e}")))?;
    let (interpersonal, social) = match grouping {
        OqGrouping::AsPrinted => (cats.interpersonal_relations, cats.social_roles),
        OqGrouping::Standard => (cats.social_roles, cats.interpersonal_relations),
    };
    let mut oq_category = BTreeMap::new();
    for (list, cat) in [
        (&cats.symptom_distress, SymptomCategory::SymptomDistress),
        (&interpersonal, SymptomCategory::InterpersonalRelations),
        (&social, SymptomCategory::SocialRoles),
    ] {
        for &n in list {
            if oq_category.insert(n, cat).is_some() {
                return Err(RegistryError::Symptoms(format!(
                    "OQ-45 item {n} is in more than one category"
                )));
            }
        }
    }

    let mut out = Vec::new();
    for (id, prefix) in [
        (InstrumentId::Phq9, "phq9"),
        (InstrumentId::Gad7, "gad7"),
        (InstrumentId::Oq45, "oq45"),
    ] {
        for item in &instruments[&id].items {
            let category = match id {
                InstrumentId::Phq9 => SymptomCategory::Depression,
                InstrumentId::Gad7 => SymptomCategory::Anxiety,
                _ => *oq_category.get(&item.number).ok_or_else(|| {
                    RegistryError::Symptoms(format!("OQ-45 item {} has no category", item.number))
                })?,
            };
            out.push(SymptomDescriptor {
                id: format!("{prefix}.{}", item.number),
                text: item.text.clone(),
                category,
            });
        }
    }
    if oq_category.len() != 45 {
        return Err(RegistryError::Symptoms(format!(
            "OQ-45 categories cover {} items, expected 45",
            oq_category.len()
        )));
    }
    if out.len() != 61 {
        return Err(RegistryError::Symptoms(format!(
            "expected 61 symptoms, found {}",
            out.len()
        )));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Traits

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Trait {
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    Neuroticism,
    EmotionFluctuation,
    UnwillingnessToExpress,
    ResistanceTowardTherapist,
}

pub const BIG_FIVE_LEVELS: [&str; 5] = ["0-20%", "21-40%", "41-60%", "61-80%", "81-100%"];
pub const THREE_LEVELS: [&str; 3] = ["Low", "Medium", "High"];

impl Trait {
    pub const ALL: [Trait; 8] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
        Trait::EmotionFluctuation,
        Trait::UnwillingnessToExpress,
        Trait::ResistanceTowardTherapist,
    ];

    pub fn is_big_five(self) -> bool {
        matches!(
            self,
            Trait::Openness
                | Trait::Conscientiousness
                | Trait::Extraversion
                | Trait::Agreeableness
                | Trait::Neuroticism
        )
    }

    pub fn levels(self) -> &'static [&'static str] {
        if self.is_big_five() {
            &BIG_FIVE_LEVELS
        } else {
            &THREE_LEVELS
        }
    }

    pub fn level_index(self, label: &str) -> Option<usize> {
        self.levels().iter().position(|l| *l == label)
    }

    pub fn label(self) -> &'static str {
        match self {
            Trait::Openness => "Openness",
            Trait::Conscientiousness => "Conscientiousness",
            Trait::Extraversion => "Extraversion",
            Trait::Agreeableness => "Agreeableness",
            Trait::Neuroticism => "Neuroticism",
            Trait::EmotionFluctuation => "Emotion Fluctuation",
            Trait::UnwillingnessToExpress => "Unwillingness to Express Feelings",
            Trait::ResistanceTowardTherapist => "Resistance towards the Therapist",
        }
    }

    /// Short abbreviation used in report tables.
    pub fn abbrev(self) -> &'static str {
        match self {
            Trait::Openness => "O",
            Trait::Conscientiousness => "C",
            Trait::Extraversion => "E",
            Trait::Agreeableness => "A",
            Trait::Neuroticism => "N",
            Trait::EmotionFluctuation => "EF",
            Trait::UnwillingnessToExpress => "UWE",
            Trait::ResistanceTowardTherapist => "RT",
        }
    }
}

impl FromStr for Trait {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Trait::ALL
            .into_iter()
            .find(|t| {
                let variant = format!("{t:?}").to_ascii_lowercase();
                let label: String = t
                    .label()
                    .chars()
                    .filter(|c| c.is_ascii_alphanumeric())
                    .collect::<String>()
                    .to_ascii_lowercase();
                key == variant || key == label || key == t.abbrev().to_ascii_lowercase()
            })
            .ok_or_else(|| format!("unknown trait {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraitDescriptor {
    pub name: Trait,
    pub levels: Vec<&'static str>,
}

// ---------------------------------------------------------------------------
// Registry

#[derive(Debug, Clone)]
pub struct Registry {
    instruments: BTreeMap<InstrumentId, Instrument>,
    symptoms: Vec<SymptomDescriptor>,
    traits: Vec<TraitDescriptor>,
}

static BUNDLED: OnceLock<Registry> = OnceLock::new();

/// The registry built from the bundled data files.
pub fn registry() -> &'static Registry {
    BUNDLED.get_or_init(|| {
        Registry::load_bundled(OqGrouping::AsPrinted).expect("bundled instrument data is valid")
    })
}

impl Registry {
    pub fn load_bundled(grouping: OqGrouping) -> Result<Self, RegistryError> {
        Self::build(|id| Ok(id.bundled().to_string()), OQ_CATEGORIES, grouping)
    }

    /// Load `<dir>/<instrument>.json` files; a missing file falls back to the
    /// bundled copy. `<dir>/oq45_categories.json` may override the groupings.
    pub fn load_dir(dir: &Path, grouping: OqGrouping) -> Result<Self, RegistryError> {
        let read = |path: &Path| {
            fs::read_to_string(path).map_err(|source| RegistryError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let cats_path = dir.join("oq45_categories.json");
        let cats = if cats_path.exists() {
            read(&cats_path)?
        } else {
            OQ_CATEGORIES.to_string()
        };
        Self::build(
            |id| {
                let p = dir.join(id.file_name());
                if p.exists() {
                    read(&p)
                } else {
                    Ok(id.bundled().to_string())
                }
            },
            &cats,
            grouping,
        )
    }

    fn build(
        mut source: impl FnMut(InstrumentId) -> Result<String, RegistryError>,
        categories: &str,
        grouping: OqGrouping,
    ) -> Result<Self, RegistryError> {
        let mut instruments = BTreeMap::new();
        for id in InstrumentId::ALL {
            instruments.insert(id, parse_instrument(id, &source(id)?)?);
        }
        let symptoms = build_symptoms(&instruments, categories, grouping)?;
        let traits = Trait::ALL
            .into_iter()
            .map(|t| TraitDescriptor {
                name: t,
                levels: t.levels().to_vec(),
            })
            .collect();
        Ok(Registry {
            instruments,
            symptoms,
            traits,
        })
    }

    pub fn instrument(&self, id: InstrumentId) -> &Instrument {
        &self.instruments[&id]
    }

    pub fn instruments(&self) -> impl Iterator<Item = &Instrument> {
        self.instruments.values()
    }

    pub fn symptoms(&self) -> &[SymptomDescriptor] {
        &self.symptoms
    }

    pub fn symptom(&self, id: &str) -> Option<&SymptomDescriptor> {
        self.symptoms.iter().find(|s| s.id == id)
    }

    pub fn traits(&self) -> &[TraitDescriptor] {
        &self.traits
    }

    /// Look an item up by its statement text (exact match after trimming).
    pub fn find_item_by_text(&self, text: &str) -> Option<&Item> {
        let text = text.trim();
        self.instruments
            .values()
            .flat_map(|i| i.items.iter())
            .find(|i| i.text == text)
    }
}

// ---------------------------------------------------------------------------
// Response validation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangePolicy {
    Strict,
    ClampAndFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum ItemScore {
    Present { raw: i64, clamped: bool },
    Missing,
}

impl ItemScore {
    pub fn raw(self) -> Option<i64> {
        match self {
            ItemScore::Present { raw, .. } => Some(raw),
            ItemScore::Missing => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedResponses {
    pub instrument: InstrumentId,
    /// Every item of the instrument, in instrument order.
    pub scores: BTreeMap<ItemRef, ItemScore>,
}

impl ValidatedResponses {
    pub fn flagged(&self) -> Vec<ItemRef> {
        self.scores
            .iter()
            .filter(|(_, s)| matches!(s, ItemScore::Present { clamped: true, .. }))
            .map(|(r, _)| r.clone())
            .collect()
    }

    pub fn missing(&self) -> Vec<ItemRef> {
        self.scores
            .iter()
            .filter(|(_, s)| matches!(s, ItemScore::Missing))
            .map(|(r, _)| r.clone())
            .collect()
    }

    pub fn raw_map(&self) -> BTreeMap<ItemRef, i64> {
        self.scores
            .iter()
            .filter_map(|(r, s)| s.raw().map(|raw| (r.clone(), raw)))
            .collect()
    }
}

/// Check raw scores against the instrument's scale. Items absent from
/// `responses` are recorded as missing.
pub fn validate_response_set(
    instrument: &Instrument,
    responses: &BTreeMap<ItemRef, i64>,
    policy: RangePolicy,
) -> Result<ValidatedResponses, ValidationError> {
    if let Some(r) = responses.keys().find(|r| instrument.item(r).is_none()) {
        return Err(ValidationError::UnknownItem {
            instrument: instrument.id,
            item: r.to_string(),
        });
    }
    let mut offending = Vec::new();
    let mut scores = BTreeMap::new();
    for item in &instrument.items {
        let r = item.item_ref();
        let score = match responses.get(&r) {
            None => ItemScore::Missing,
            Some(&raw) if item.in_range(raw) => ItemScore::Present {
                raw,
                clamped: false,
            },
            Some(&raw) => {
                offending.push(r.to_string());
                ItemScore::Present {
                    raw: raw.clamp(item.scale_min, item.scale_max),
                    clamped: true,
                }
            }
        };
        scores.insert(r, score);
    }
    if policy == RangePolicy::Strict && !offending.is_empty() {
        return Err(ValidationError::OutOfRange {
            instrument: instrument.id,
            items: offending,
        });
    }
    Ok(ValidatedResponses {
        instrument: instrument.id,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn item_counts_and_scales() {
        let reg = registry();
        let expect = [
            (InstrumentId::Phq9, 9, 0, 3),
            (InstrumentId::Gad7, 7, 0, 3),
            (InstrumentId::Oq45, 45, 0, 4),
            (InstrumentId::Srs, 4, 0, 10),
            (InstrumentId::Cecs, 52, 1, 7),
            (InstrumentId::Seq, 21, 1, 7),
            (InstrumentId::WaiSr, 12, 1, 5),
            (InstrumentId::Haq2, 19, 1, 6),
        ];
        for (id, n, lo, hi) in expect {
            let ins = reg.instrument(id);
            assert_eq!(ins.items.len(), n, "{id}");
            assert_eq!((ins.scale_min, ins.scale_max), (lo, hi), "{id}");
        }
    }

    #[test]
    fn reverse_sets_match_tables() {
        let reg = registry();
        let cecs: BTreeSet<String> = reg
            .instrument(InstrumentId::Cecs)
            .reverse_items()
            .map(|i| i.item_ref().to_string())
            .collect();
        let mut expected: BTreeSet<String> = [1, 3, 4, 7, 8, 11, 16, 23, 38, 42, 43]
            .iter()
            .map(|n| format!("part1.{n}"))
            .collect();
        expected.extend([2, 4, 7].iter().map(|n| format!("part2.{n}")));
        assert_eq!(cecs, expected);
        assert_eq!(cecs.len(), 14);

        let haq: Vec<u32> = reg
            .instrument(InstrumentId::Haq2)
            .reverse_items()
            .map(|i| i.number)
            .collect();
        assert_eq!(haq, vec![4, 8, 11, 16, 19]);
    }

    #[test]
    fn seq_poles() {
        let seq = registry().instrument(InstrumentId::Seq);
        assert_eq!(
            seq.item(&ItemRef::new(1)).unwrap().poles,
            Some(("bad".to_string(), "good".to_string()))
        );
        assert_eq!(seq.item_by_right_pole("worthless").unwrap().number, 3);
        assert_eq!(seq.item_by_right_pole("aroused").unwrap().number, 21);
    }

    #[test]
    fn symptom_partition() {
        let reg = registry();
        assert_eq!(reg.symptoms().len(), 61);
        let count = |c| reg.symptoms().iter().filter(|s| s.category == c).count();
        assert_eq!(count(SymptomCategory::Depression), 9);
        assert_eq!(count(SymptomCategory::Anxiety), 7);
        assert_eq!(
            count(SymptomCategory::SymptomDistress)
                + count(SymptomCategory::InterpersonalRelations)
                + count(SymptomCategory::SocialRoles),
            45
        );
        assert_eq!(
            reg.symptom("oq45.4").unwrap().category,
            SymptomCategory::InterpersonalRelations
        );
        let standard = Registry::load_bundled(OqGrouping::Standard).unwrap();
        assert_eq!(
            standard.symptom("oq45.4").unwrap().category,
            SymptomCategory::SocialRoles
        );
    }

    #[test]
    fn trait_levels() {
        let reg = registry();
        assert_eq!(reg.traits().len(), 8);
        for d in reg.traits() {
            let n = if d.name.is_big_five() { 5 } else { 3 };
            assert_eq!(d.levels.len(), n);
        }
        assert_eq!(
            "Resistance towards the Therapist".parse::<Trait>(),
            Ok(Trait::ResistanceTowardTherapist)
        );
        assert_eq!("EF".parse::<Trait>(), Ok(Trait::EmotionFluctuation));
    }

    #[test]
    fn validation_policies() {
        let reg = registry();
        let seq = reg.instrument(InstrumentId::Seq);
        let mut resp = BTreeMap::new();
        resp.insert(ItemRef::new(1), 9);
        let v = validate_response_set(seq, &resp, RangePolicy::ClampAndFlag).unwrap();
        assert_eq!(
            v.scores[&ItemRef::new(1)],
            ItemScore::Present {
                raw: 7,
                clamped: true
            }
        );
        assert_eq!(v.missing().len(), 20);

        let wai = reg.instrument(InstrumentId::WaiSr);
        let resp = BTreeMap::from([(ItemRef::new(2), 3)]);
        let v = validate_response_set(wai, &resp, RangePolicy::Strict).unwrap();
        assert_eq!(v.scores[&ItemRef::new(2)].raw(), Some(3));

        let srs = reg.instrument(InstrumentId::Srs);
        let resp = BTreeMap::from([(ItemRef::new(1), -1)]);
        assert_eq!(
            validate_response_set(srs, &resp, RangePolicy::Strict),
            Err(ValidationError::OutOfRange {
                instrument: InstrumentId::Srs,
                items: vec!["1".into()]
            })
        );

        let resp = BTreeMap::from([(ItemRef::new(99), 1)]);
        assert!(matches!(
            validate_response_set(srs, &resp, RangePolicy::ClampAndFlag),
            Err(ValidationError::UnknownItem { .. })
        ));
    }

    #[test]
    fn count_mismatch_names_instrument() {
        let mut v: serde_json::Value = serde_json::from_str(InstrumentId::WaiSr.bundled()).unwrap();
        v["items"].as_array_mut().unwrap().pop();
        let err = parse_instrument(InstrumentId::WaiSr, &v.to_string()).unwrap_err();
        assert!(err.to_string().contains("WAISR"), "{err}");
    }

    #[test]
    fn item_ref_round_trip() {
        for s in ["3", "part1.31", "part2.8"] {
            assert_eq!(s.parse::<ItemRef>().unwrap().to_string(), s);
        }
    }

    proptest::proptest! {
        #[test]
        fn clamp_is_idempotent(scores in proptest::collection::vec(-5i64..15, 21)) {
            let seq = registry().instrument(InstrumentId::Seq);
            let resp: BTreeMap<ItemRef, i64> = scores
                .iter()
                .enumerate()
                .map(|(i, &s)| (ItemRef::new(i as u32 + 1), s))
                .collect();
            let once = validate_response_set(seq, &resp, RangePolicy::ClampAndFlag).unwrap();
            let twice = validate_response_set(seq, &once.raw_map(), RangePolicy::ClampAndFlag).unwrap();
            proptest::prop_assert_eq!(once.raw_map(), twice.raw_map());
            proptest::prop_assert!(twice.flagged().is_empty());
        }
    }
}
