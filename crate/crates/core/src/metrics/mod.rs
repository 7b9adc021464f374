//! Text and statistical metrics: vocabulary overlap, language style matching,
//! similarity, profile consistency and group significance tests.

pub mod consistency;
pub mod lexicon;
pub mod stats;
pub mod text;

pub use consistency::{consistency, set_prf, topic_precision, Baseline, ConsistencyReport, F1Averaging, Prf, TopicTaxonomy, TraitAgreement};
pub use lexicon::{lsm, lsm_by_category, style_profile, FunctionWordLexicon, Lexicon, StyleLexicon};
pub use stats::{mann_whitney_u, pearson, spearman, MannWhitney, PMethod, Summary};
pub use text::{
    normalized_relative_similarity, vocab_overlap, EmbeddingSimilarity, Embedder, LexicalCosine,
    Overlap, TextSimilarity,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("text has no tokens")]
    EmptyText,
    #[error("target similarity must be positive, got {0}")]
    NonPositiveTarget(f64),
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("topic {0:?} is not in the taxonomy")]
    UnknownTopic(String),
}
