//! Agreement between an original profile and one re-extracted from a
//! simulated session, and topic precision.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::text::{normalized_relative_similarity, TextSimilarity};
use super::MetricsError;
use crate::instruments::Trait;
use crate::profiles::PsychologicalProfile;

const UNIDENTIFIED: &str = "Unidentified";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Set agreement. Two empty sets agree perfectly; an empty denominator
/// against a non-empty other side scores 0.
pub fn set_prf<T: Ord>(original: &BTreeSet<T>, extracted: &BTreeSet<T>) -> Prf {
    if original.is_empty() && extracted.is_empty() {
        return Prf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let hit = original.intersection(extracted).count() as f64;
    let ratio = |d: usize| if d == 0 { 0.0 } else { hit / d as f64 };
    let (precision, recall) = (ratio(extracted.len()), ratio(original.len()));
    Prf {
        precision,
        recall,
        f1: f1(precision, recall),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Averaging {
    /// Per-class F1 within a trait, averaged over the classes that occur.
    #[default]
    Macro,
    /// Pooled counts; equals accuracy for single-label data.
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitScore {
    pub recall: f64,
    pub f1: f64,
}

/// Accumulates (original level, extracted level) pairs per trait.
/// An unidentified level is treated as its own class.
#[derive(Debug, Clone, Default)]
pub struct TraitAgreement {
    pairs: BTreeMap<Trait, Vec<(String, String)>>,
}

impl TraitAgreement {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, original: &PsychologicalProfile, extracted: &PsychologicalProfile) {
        for t in Trait::ALL {
            let level = |p: &PsychologicalProfile| p.trait_level(t).unwrap_or(UNIDENTIFIED).to_string();
            self.pairs
                .entry(t)
                .or_default()
                .push((level(original), level(extracted)));
        }
    }

    pub fn per_trait(&self, averaging: F1Averaging) -> BTreeMap<Trait, TraitScore> {
        self.pairs
            .iter()
            .filter(|(_, p)| !p.is_empty())
            .map(|(t, pairs)| (*t, score_pairs(pairs, averaging)))
            .collect()
    }

    /// Mean over traits of the per-trait recall and F1.
    pub fn overall(&self, averaging: F1Averaging) -> Option<TraitScore> {
        let per = self.per_trait(averaging);
        if per.is_empty() {
            return None;
        }
        let n = per.len() as f64;
        Some(TraitScore {
            recall: per.values().map(|s| s.recall).sum::<f64>() / n,
            f1: per.values().map(|s| s.f1).sum::<f64>() / n,
        })
    }
}

fn score_pairs(pairs: &[(String, String)], averaging: F1Averaging) -> TraitScore {
    let correct = pairs.iter().filter(|(a, b)| a == b).count() as f64;
    let accuracy = correct / pairs.len() as f64;
    let f1_value = match averaging {
        F1Averaging::Micro => accuracy,
        F1Averaging::Macro => {
            let classes: BTreeSet<&str> = pairs
                .iter()
                .flat_map(|(a, b)| [a.as_str(), b.as_str()])
                .collect();
            let per_class: Vec<f64> = classes
                .iter()
                .map(|c| {
                    let tp = pairs.iter().filter(|(a, b)| a == c && b == c).count() as f64;
                    let pred = pairs.iter().filter(|(_, b)| b == c).count() as f64;
                    let gold = pairs.iter().filter(|(a, _)| a == c).count() as f64;
                    let p = if pred == 0.0 { 0.0 } else { tp / pred };
                    let r = if gold == 0.0 { 0.0 } else { tp / gold };
                    f1(p, r)
                })
                .collect();
            per_class.iter().sum::<f64>() / per_class.len() as f64
        }
    };
    TraitScore {
        recall: accuracy,
        f1: f1_value,
    }
}

/// Mean similarity of randomly paired texts, the baseline for the normalized
/// relative similarity of problems and reasons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub problem: f64,
    pub reasons: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub problem_similarity: f64,
    pub reasons_similarity: f64,
    /// Percent; present when a baseline was supplied.
    pub problem_rel_similarity: Option<f64>,
    pub reason_rel_similarity: Option<f64>,
    pub topic_match: Option<bool>,
    pub symptom: Prf,
    pub trait_recall: f64,
    pub trait_f1: f64,
    pub per_trait: BTreeMap<Trait, bool>,
}

impl ConsistencyReport {
    pub fn with_topics(mut self, original: Option<&str>, simulated: Option<&str>) -> Self {
        self.topic_match = match (original, simulated) {
            (Some(a), Some(b)) => Some(a == b),
            _ => None,
        };
        self
    }
}

pub fn consistency(
    original: &PsychologicalProfile,
    extracted: &PsychologicalProfile,
    similarity: &dyn TextSimilarity,
    baseline: Option<&Baseline>,
) -> Result<ConsistencyReport, MetricsError> {
    let problem_similarity = similarity.similarity(&original.problem, &extracted.problem)?;
    let reasons_similarity =
        similarity.similarity(&original.reasons_for_visiting, &extracted.reasons_for_visiting)?;
    let rel = |target: f64, random: f64| normalized_relative_similarity(target, random).ok();
    let symptom = set_prf(
        &original.symptom_ids().collect(),
        &extracted.symptom_ids().collect(),
    );
    let mut agreement = TraitAgreement::new();
    agreement.add(original, extracted);
    let overall = agreement
        .overall(F1Averaging::Macro)
        .expect("eight traits always scored");
    let per_trait = Trait::ALL
        .into_iter()
        .map(|t| (t, original.trait_level(t) == extracted.trait_level(t)))
        .collect();
    Ok(ConsistencyReport {
        problem_similarity,
        reasons_similarity,
        problem_rel_similarity: baseline.and_then(|b| rel(problem_similarity, b.problem)),
        reason_rel_similarity: baseline.and_then(|b| rel(reasons_similarity, b.reasons)),
        topic_match: None,
        symptom,
        trait_recall: overall.recall,
        trait_f1: overall.f1,
        per_trait,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicTaxonomy {
    pub labels: Vec<String>,
}

impl Default for TopicTaxonomy {
    fn default() -> Self {
        TopicTaxonomy {
            labels: [
                "smoking",
                "alcohol",
                "drug use",
                "weight management",
                "relationships",
                "school/work",
                "legal",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

impl TopicTaxonomy {
    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }
}

/// Fraction of sessions whose predicted topic equals the gold topic.
pub fn topic_precision(
    predicted: &[String],
    gold: &[String],
    taxonomy: &TopicTaxonomy,
) -> Result<f64, MetricsError> {
    if predicted.len() != gold.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), gold.len()));
    }
    if predicted.is_empty() {
        return Err(MetricsError::TooFewValues { needed: 1, got: 0 });
    }
    if let Some(bad) = predicted.iter().chain(gold).find(|l| !taxonomy.contains(l)) {
        return Err(MetricsError::UnknownTopic(bad.clone()));
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::LexicalCosine;
    use crate::profiles::{Gender, SymptomFinding, TraitAssessment};

    fn profile(levels: [usize; 8], symptoms: &[&str]) -> PsychologicalProfile {
        PsychologicalProfile {
            name: None,
            gender: Gender::Unidentified,
            age_estimate: "unclear".into(),
            occupation: None,
            problem: "Drug use. Struggling with meth.".into(),
            reasons_for_visiting: "The client is visiting the therapist because friends worry.".into(),
            traits: Trait::ALL
                .into_iter()
                .zip(levels)
                .map(|(t, i)| {
                    (
                        t,
                        TraitAssessment {
                            level: Some(t.levels()[i].to_string()),
                            rationale: String::new(),
                        },
                    )
                })
                .collect(),
            symptoms: symptoms
                .iter()
                .map(|id| SymptomFinding {
                    id: id.to_string(),
                    severity: "mild".into(),
                    rationale: String::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn identical_profiles() {
        let p = profile([0, 1, 2, 3, 4, 0, 1, 2], &["phq9.1", "gad7.2"]);
        let r = consistency(&p, &p, &LexicalCosine, None).unwrap();
        assert_eq!(r.symptom, Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(r.trait_recall, 1.0);
        assert_eq!(r.trait_f1, 1.0);
        assert!((r.problem_similarity - 1.0).abs() < 1e-12);
        assert_eq!(r.problem_rel_similarity, None);
    }

    #[test]
    fn half_overlap_symptoms() {
        let a = profile([0; 8], &["phq9.1", "phq9.2"]);
        let b = profile([0; 8], &["phq9.1", "phq9.3"]);
        let r = consistency(&a, &b, &LexicalCosine, Some(&Baseline { problem: 0.5, reasons: 0.5 })).unwrap();
        assert_eq!(r.symptom, Prf { precision: 0.5, recall: 0.5, f1: 0.5 });
        assert!((r.problem_rel_similarity.unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn off_by_one_traits() {
        let a = profile([0, 0, 0, 0, 0, 0, 0, 0], &[]);
        let b = profile([1, 1, 1, 1, 1, 1, 1, 1], &[]);
        let r = consistency(&a, &b, &LexicalCosine, None).unwrap();
        assert_eq!(r.trait_recall, 0.0);
        assert_eq!(r.trait_f1, 0.0);
        assert!(r.per_trait.values().all(|m| !m));
        // no symptoms on either side counts as full agreement
        assert_eq!(r.symptom.f1, 1.0);
    }

    #[test]
    fn macro_f1_across_sessions() {
        // openness: gold [L0, L0, L1], predicted [L0, L1, L1]
        let mut agg = TraitAgreement::new();
        agg.add(&profile([0; 8], &[]), &profile([0; 8], &[]));
        agg.add(&profile([0; 8], &[]), &profile([1; 8], &[]));
        agg.add(&profile([1; 8], &[]), &profile([1; 8], &[]));
        let s = agg.per_trait(F1Averaging::Macro)[&Trait::Openness];
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-15);
        // class L0: p=1, r=0.5 → 2/3; class L1: p=0.5, r=1 → 2/3
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        let m = agg.per_trait(F1Averaging::Micro)[&Trait::Openness];
        assert_eq!(m.f1, m.recall);
    }

    #[test]
    fn empty_denominator_conventions() {
        let a: BTreeSet<&str> = ["x"].into();
        let e = BTreeSet::new();
        assert_eq!(set_prf(&a, &e), Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
        assert_eq!(set_prf(&e, &a).f1, 0.0);
    }

    #[test]
    fn topics() {
        let tax = TopicTaxonomy::default();
        assert_eq!(tax.labels.len(), 7);
        let gold: Vec<String> = ["smoking"; 10].map(String::from).to_vec();
        let mut pred = gold.clone();
        assert_eq!(topic_precision(&pred, &gold, &tax).unwrap(), 1.0);
        pred[0] = "legal".into();
        assert!((topic_precision(&pred, &gold, &tax).unwrap() - 0.9).abs() < 1e-15);
        pred = vec!["alcohol".into(); 10];
        assert_eq!(topic_precision(&pred, &gold, &tax).unwrap(), 0.0);
        pred[0] = "gardening".into();
        assert!(matches!(topic_precision(&pred, &gold, &tax), Err(MetricsError::UnknownTopic(_))));
    }

    proptest::proptest! {
        #[test]
        fn f1_bounded_by_twice_min(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let v = f1(p, r);
            proptest::prop_assert!(v <= 2.0 * p.min(r) + 1e-15);
            proptest::prop_assert!((0.0..=1.0).contains(&v));
            proptest::prop_assert_eq!(v == 0.0, p * r == 0.0);
        }
    }
}
