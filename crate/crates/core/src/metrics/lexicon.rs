//! Word-category lexicons, language style matching and category rate profiles.
//!
//! Lexicon files hold one lowercase word per line; a trailing `*` makes the
//! entry a stem that matches any word with that prefix. Blank lines and lines
//! starting with `#` are ignored. A directory of such files forms a lexicon,
//! one category per file stem.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::text::words;
use super::MetricsError;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Entry {
    Word(String),
    Stem(String),
}

impl Entry {
    fn matches(&self, token: &str) -> bool {
        match self {
            Entry::Word(w) => w == token,
            Entry::Stem(s) => token.starts_with(s.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    entries: Vec<Entry>,
}

impl Category {
    pub fn parse(name: &str, text: &str) -> Result<Self, MetricsError> {
        let bad = |why: String| MetricsError::Lexicon(format!("category {name}: {why}"));
        let mut seen = BTreeSet::new();
        let mut entries = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.chars().any(char::is_uppercase) {
                return Err(bad(format!("entry {line:?} is not lowercase")));
            }
            if !seen.insert(line.to_string()) {
                return Err(bad(format!("duplicate entry {line:?}")));
            }
            entries.push(match line.strip_suffix('*') {
                Some(stem) => Entry::Stem(stem.to_string()),
                None => Entry::Word(line.to_string()),
            });
        }
        Ok(Category { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.iter().any(|e| e.matches(token))
    }
}

/// Named word categories.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    categories: BTreeMap<String, Category>,
}

impl Lexicon {
    pub fn from_sources<'a>(
        sources: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, MetricsError> {
        let mut categories = BTreeMap::new();
        for (name, text) in sources {
            categories.insert(name.to_string(), Category::parse(name, text)?);
        }
        Ok(Lexicon { categories })
    }

    /// One category per `*.txt` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, MetricsError> {
        let mut files = Vec::new();
        let entries = fs::read_dir(dir)
            .map_err(|e| MetricsError::Lexicon(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry
                .map_err(|e| MetricsError::Lexicon(e.to_string()))?
                .path();
            if path.extension().and_then(|e| e.to_str()) == Some("txt") {
                let name = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                let text = fs::read_to_string(&path)
                    .map_err(|e| MetricsError::Lexicon(format!("{}: {e}", path.display())))?;
                files.push((name, text));
            }
        }
        Self::from_sources(files.iter().map(|(n, t)| (n.as_str(), t.as_str())))
    }

    pub fn category(&self, name: &str) -> Option<&Category> {
        self.categories.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }

    /// Percent of word tokens falling in each category.
    pub fn rates(&self, text: &str) -> BTreeMap<String, f64> {
        let toks = words(text);
        self.categories
            .iter()
            .map(|(name, cat)| {
                let rate = if toks.is_empty() {
                    0.0
                } else {
                    let hits = toks.iter().filter(|t| cat.contains(t)).count();
                    100.0 * hits as f64 / toks.len() as f64
                };
                (name.clone(), rate)
            })
            .collect()
    }
}

/// The eight function-word categories compared by language style matching.
pub const FUNCTION_CATEGORIES: [&str; 8] = [
    "prepositions",
    "articles",
    "auxiliary_verbs",
    "adverbs",
    "conjunctions",
    "personal_pronouns",
    "impersonal_pronouns",
    "negations",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionWordLexicon(Lexicon);

impl FunctionWordLexicon {
    pub fn new(lexicon: Lexicon) -> Result<Self, MetricsError> {
        for name in FUNCTION_CATEGORIES {
            match lexicon.category(name) {
                Some(c) if !c.is_empty() => {}
                Some(_) => return Err(MetricsError::Lexicon(format!("category {name} is empty"))),
                None => return Err(MetricsError::Lexicon(format!("missing category {name}"))),
            }
        }
        if let Some(extra) = lexicon.names().find(|n| !FUNCTION_CATEGORIES.contains(n)) {
            return Err(MetricsError::Lexicon(format!(
                "unexpected function-word category {extra}"
            )));
        }
        Ok(FunctionWordLexicon(lexicon))
    }

    pub fn bundled() -> Self {
        let lex = Lexicon::from_sources([
            ("prepositions", include_str!("../../data/lexicons/function/prepositions.txt")),
            ("articles", include_str!("../../data/lexicons/function/articles.txt")),
            ("auxiliary_verbs", include_str!("../../data/lexicons/function/auxiliary_verbs.txt")),
            ("adverbs", include_str!("../../data/lexicons/function/adverbs.txt")),
            ("conjunctions", include_str!("../../data/lexicons/function/conjunctions.txt")),
            ("personal_pronouns", include_str!("../../data/lexicons/function/personal_pronouns.txt")),
            ("impersonal_pronouns", include_str!("../../data/lexicons/function/impersonal_pronouns.txt")),
            ("negations", include_str!("../../data/lexicons/function/negations.txt")),
        ])
        .expect("bundled function-word lexicon parses");
        Self::new(lex).expect("bundled function-word lexicon is complete")
    }

    pub fn load_dir(dir: &Path) -> Result<Self, MetricsError> {
        Self::new(Lexicon::load_dir(dir)?)
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StyleLexicon(Lexicon);

impl StyleLexicon {
    pub fn bundled() -> Self {
        let lex = Lexicon::from_sources([
            ("pos_tone", include_str!("../../data/lexicons/style/pos_tone.txt")),
            ("neg_tone", include_str!("../../data/lexicons/style/neg_tone.txt")),
            ("pos_emotion", include_str!("../../data/lexicons/style/pos_emotion.txt")),
            ("neg_emotion", include_str!("../../data/lexicons/style/neg_emotion.txt")),
            ("anxiety", include_str!("../../data/lexicons/style/anxiety.txt")),
            ("anger", include_str!("../../data/lexicons/style/anger.txt")),
            ("sadness", include_str!("../../data/lexicons/style/sadness.txt")),
            ("tentative", include_str!("../../data/lexicons/style/tentative.txt")),
            ("differentiation", include_str!("../../data/lexicons/style/differentiation.txt")),
            ("impersonal_pronouns", include_str!("../../data/lexicons/style/impersonal_pronouns.txt")),
        ])
        .expect("bundled style lexicon parses");
        StyleLexicon(lex)
    }

    pub fn new(lexicon: Lexicon) -> Self {
        StyleLexicon(lexicon)
    }

    pub fn load_dir(dir: &Path) -> Result<Self, MetricsError> {
        Ok(StyleLexicon(Lexicon::load_dir(dir)?))
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.0
    }
}

const LSM_GUARD: f64 = 0.0001;

/// Per-category language style matching,
/// `1 − |r_a − r_b| / (r_a + r_b + 0.0001)` on percent rates.
pub fn lsm_by_category(
    a: &str,
    b: &str,
    lexicon: &FunctionWordLexicon,
) -> Result<BTreeMap<String, f64>, MetricsError> {
    if words(a).is_empty() || words(b).is_empty() {
        return Err(MetricsError::EmptyText);
    }
    let (ra, rb) = (lexicon.0.rates(a), lexicon.0.rates(b));
    Ok(FUNCTION_CATEGORIES
        .iter()
        .map(|c| {
            let (x, y) = (ra[*c], rb[*c]);
            (c.to_string(), 1.0 - (x - y).abs() / (x + y + LSM_GUARD))
        })
        .collect())
}

/// Mean of the eight category scores.
pub fn lsm(a: &str, b: &str, lexicon: &FunctionWordLexicon) -> Result<f64, MetricsError> {
    let per = lsm_by_category(a, b, lexicon)?;
    Ok(per.values().sum::<f64>() / per.len() as f64)
}

/// Percent of tokens per style category. Stem entries (`word*`) match by prefix.
pub fn style_profile(text: &str, lexicon: &StyleLexicon) -> BTreeMap<String, f64> {
    lexicon.0.rates(text)
}
