//! Versioned prompt templates with `{{placeholder}}` substitution.
//!
//! A template file starts with a `version: N` line and a `---` separator.
//! Placeholders are filled in a single pass, so text substituted into one
//! placeholder is never itself expanded.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TemplateError {
    #[error("template {0}: missing 'version: N' header")]
    Header(String),
    #[error("template {template}: no value for {{{{{name}}}}}")]
    Unfilled { template: String, name: String },
    #[error("template {template}: value given for unknown placeholder {name}")]
    Unknown { template: String, name: String },
    #[error("unknown template {0}")]
    Missing(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    pub version: u32,
    pub body: String,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Self, TemplateError> {
        let header = || TemplateError::Header(name.to_string());
        let (head, body) = text.split_once("\n---\n").ok_or_else(header)?;
        let version = head
            .trim()
            .strip_prefix("version:")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(header)?;
        Ok(Template {
            name: name.to_string(),
            version,
            body: body.trim_end().to_string(),
        })
    }

    pub fn placeholders(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut rest = self.body.as_str();
        while let Some(i) = rest.find("{{") {
            match rest[i + 2..].find("}}") {
                Some(j) => {
                    out.push(&rest[i + 2..i + 2 + j]);
                    rest = &rest[i + 2 + j + 2..];
                }
                None => break,
            }
        }
        out
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let names = self.placeholders();
        if let Some((name, _)) = vars.iter().find(|(n, _)| !names.contains(n)) {
            return Err(TemplateError::Unknown {
                template: self.name.clone(),
                name: name.to_string(),
            });
        }
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some(i) = rest.find("{{") {
            let Some(j) = rest[i + 2..].find("}}") else {
                break;
            };
            let name = &rest[i + 2..i + 2 + j];
            let value = vars
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::Unfilled {
                    template: self.name.clone(),
                    name: name.to_string(),
                })?;
            out.push_str(&rest[..i]);
            out.push_str(value);
            rest = &rest[i + 2 + j + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

pub const EXTRACTION: &str = "extraction_system";
pub const CLIENT: &str = "client_system";
pub const THERAPIST_MIRROR: &str = "therapist_mirror_system";
pub const THERAPIST: &str = "therapist_system";
pub const REPHRASE: &str = "rephrase_system";
pub const QUESTIONNAIRE: &str = "questionnaire_system";
pub const QUESTIONNAIRE_ITEM: &str = "questionnaire_item";

const BUNDLED: [(&str, &str); 7] = [
    (EXTRACTION, include_str!("../../templates/extraction_system.txt")),
    (CLIENT, include_str!("../../templates/client_system.txt")),
    (THERAPIST_MIRROR, include_str!("../../templates/therapist_mirror_system.txt")),
    (THERAPIST, include_str!("../../templates/therapist_system.txt")),
    (REPHRASE, include_str!("../../templates/rephrase_system.txt")),
    (QUESTIONNAIRE, include_str!("../../templates/questionnaire_system.txt")),
    (QUESTIONNAIRE_ITEM, include_str!("../../templates/questionnaire_item.txt")),
];

#[derive(Debug, Clone)]
pub struct Templates {
    map: BTreeMap<String, Template>,
}

impl Templates {
    pub fn bundled() -> Self {
        let map = BUNDLED
            .iter()
            .map(|(n, t)| (n.to_string(), Template::parse(n, t).expect("bundled template parses")))
            .collect();
        Templates { map }
    }

    /// Bundled templates, replaced by any `<name>.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = Self::bundled();
        for (name, _) in BUNDLED {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| TemplateError::Io(format!("{}: {e}", path.display())))?;
                t.map.insert(name.to_string(), Template::parse(name, &text)?);
            }
        }
        Ok(t)
    }

    pub fn get(&self, name: &str) -> Result<&Template, TemplateError> {
        self.map.get(name).ok_or_else(|| TemplateError::Missing(name.to_string()))
    }

    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<RenderedPrompt, TemplateError> {
        let t = self.get(name)?;
        Ok(RenderedPrompt {
            template: t.name.clone(),
            version: t.version,
            text: t.render(vars)?,
        })
    }

    pub fn versions(&self) -> BTreeMap<String, u32> {
        self.map.iter().map(|(n, t)| (n.clone(), t.version)).collect()
    }
}

impl Default for Templates {
    fn default() -> Self {
        Self::bundled()
    }
}

/// A rendered prompt together with the template it came from, kept for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderedPrompt {
    pub template: String,
    pub version: u32,
    pub text: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_templates_parse() {
        let t = Templates::bundled();
        assert_eq!(t.versions().len(), 7);
        assert_eq!(
            t.get(CLIENT).unwrap().placeholders(),
            vec!["profile", "reference_transcript"]
        );
    }

    #[test]
    fn single_pass_substitution() {
        let t = Template::parse("t", "version: 2\n---\nA {{x}} B {{y}}\n").unwrap();
        assert_eq!(t.version, 2);
        assert_eq!(t.render(&[("x", "{{y}}"), ("y", "1")]).unwrap(), "A {{y}} B 1");
        assert!(matches!(t.render(&[("x", "1")]), Err(TemplateError::Unfilled { .. })));
        assert!(matches!(
            t.render(&[("x", "1"), ("y", "2"), ("z", "3")]),
            Err(TemplateError::Unknown { .. })
        ));
        assert!(Template::parse("t", "no header").is_err());
    }

    #[test]
    fn overrides_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("therapist_system.txt"), "version: 7\n---\nBe kind.\n").unwrap();
        let t = Templates::with_overrides(dir.path()).unwrap();
        assert_eq!(t.versions()[THERAPIST], 7);
        assert_eq!(t.render(THERAPIST, &[]).unwrap().text, "Be kind.");
    }
}
