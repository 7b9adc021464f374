//! Provider configuration (TOML), construction and per-profile routing.
//!
//! ```toml
//! [providers.gpt]
//! kind = "openai"
//! model = "gpt-3.5-turbo"
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! api_key_env = "OPENAI_API_KEY"
//! requests_per_minute = 60
//! record = "cassettes/gpt.jsonl"
//!
//! [providers.offline]
//! kind = "mock"
//!
//! [roles]
//! default = "offline"
//! client = "gpt"
//!
//! [[routing]]
//! provider = "gpt"
//! when = { openness = ["61-80%", "81-100%"], agreeableness = ["61-80%", "81-100%"] }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cassette::{Recorder, Replay};
use super::http::OpenAiProvider;
use super::mock::ScriptedMock;
use super::{GatewayError, Llm, Provider, Purpose, RateLimited, RetryPolicy};
use crate::instruments::Trait;
use crate::profiles::PsychologicalProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Openai,
    Mock,
    Replay,
}

fn default_model() -> String {
    "mock".into()
}

fn default_max_tokens() -> u32 {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    /// Mock script (JSON); the built-in pipeline script when absent.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Cassette to replay from.
    #[serde(default)]
    pub cassette: Option<PathBuf>,
    /// Cassette to append every exchange to.
    #[serde(default)]
    pub record: Option<PathBuf>,
}

impl ProviderSpec {
    pub fn mock() -> Self {
        ProviderSpec {
            kind: ProviderKind::Mock,
            model: default_model(),
            endpoint: None,
            api_key_env: None,
            max_tokens: default_max_tokens(),
            retry: RetryPolicy::default(),
            requests_per_minute: None,
            script: None,
            cassette: None,
            record: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Temperatures {
    pub extraction: f64,
    pub simulation: f64,
    pub completion: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures {
            extraction: Purpose::Extraction.default_temperature(),
            simulation: Purpose::Simulation.default_temperature(),
            completion: Purpose::Completion.default_temperature(),
        }
    }
}

impl Temperatures {
    pub fn get(&self, purpose: Purpose) -> f64 {
        match purpose {
            Purpose::Extraction => self.extraction,
            Purpose::Simulation => self.simulation,
            Purpose::Completion => self.completion,
        }
    }
}

/// Which provider plays each part. Unset roles use `default`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub default: Option<String>,
    pub extraction: Option<String>,
    pub completion: Option<String>,
    pub rephrase: Option<String>,
    pub therapist: Option<String>,
    pub client: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleName {
    Extraction,
    Completion,
    Rephrase,
    Therapist,
    Client,
}

impl RoleName {
    pub fn purpose(self) -> Purpose {
        match self {
            RoleName::Extraction | RoleName::Rephrase => Purpose::Extraction,
            RoleName::Completion => Purpose::Completion,
            RoleName::Therapist | RoleName::Client => Purpose::Simulation,
        }
    }
}

/// Sends clients whose profile matches every condition to `provider`.
/// Conditions map a trait name to the accepted level labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingRule {
    pub provider: String,
    pub when: BTreeMap<String, Vec<String>>,
}

impl RoutingRule {
    fn conditions(&self) -> Result<Vec<(Trait, &[String])>, GatewayError> {
        self.when
            .iter()
            .map(|(name, levels)| {
                let t: Trait = name.parse().map_err(GatewayError::Config)?;
                if let Some(bad) = levels.iter().find(|l| t.level_index(l).is_none()) {
                    return Err(GatewayError::Config(format!(
                        "routing: {bad:?} is not a level of {}",
                        t.label()
                    )));
                }
                Ok((t, levels.as_slice()))
            })
            .collect()
    }

    pub fn matches(&self, profile: &PsychologicalProfile) -> bool {
        self.conditions().is_ok_and(|conds| {
            conds.iter().all(|(t, levels)| {
                profile
                    .trait_level(*t)
                    .is_some_and(|l| levels.iter().any(|x| x == l))
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default)]
    pub temperatures: Temperatures,
    pub providers: BTreeMap<String, ProviderSpec>,
    #[serde(default)]
    pub roles: Roles,
    #[serde(default)]
    pub routing: Vec<RoutingRule>,
    #[serde(default)]
    pub embedding: Option<EmbeddingSpec>,
}

impl Default for GatewayConfig {
    /// A single offline provider named `mock`.
    fn default() -> Self {
        GatewayConfig {
            temperatures: Temperatures::default(),
            providers: [("mock".to_string(), ProviderSpec::mock())].into(),
            roles: Roles::default(),
            routing: Vec::new(),
            embedding: None,
        }
    }
}

impl GatewayConfig {
    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        let cfg: GatewayConfig = toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Every referenced provider exists, every routing condition names a
    /// real trait and level, and temperatures are in range.
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.providers.is_empty() {
            return Err(GatewayError::Config("no providers configured".into()));
        }
        let known = |id: &str, what: &str| {
            if self.providers.contains_key(id) {
                Ok(())
            } else {
                Err(GatewayError::Config(format!("{what} refers to unknown provider {id:?}")))
            }
        };
        let r = &self.roles;
        for (what, id) in [
            ("roles.default", &r.default),
            ("roles.extraction", &r.extraction),
            ("roles.completion", &r.completion),
            ("roles.rephrase", &r.rephrase),
            ("roles.therapist", &r.therapist),
            ("roles.client", &r.client),
        ] {
            if let Some(id) = id {
                known(id, what)?;
            }
        }
        for rule in &self.routing {
            known(&rule.provider, "routing")?;
            rule.conditions()?;
        }
        for p in [Purpose::Extraction, Purpose::Simulation, Purpose::Completion] {
            let t = self.temperatures.get(p);
            if !(0.0..=2.0).contains(&t) {
                return Err(GatewayError::Config(format!("temperature {t} outside [0, 2]")));
            }
        }
        for (id, spec) in &self.providers {
            match spec.kind {
                ProviderKind::Openai if spec.endpoint.is_none() => {
                    return Err(GatewayError::Config(format!("provider {id}: endpoint required")))
                }
                ProviderKind::Replay if spec.cassette.is_none() => {
                    return Err(GatewayError::Config(format!("provider {id}: cassette required")))
                }
                _ => {}
            }
        }
        if self.roles.default.is_none() && self.providers.len() > 1 {
            let r = &self.roles;
            if [&r.extraction, &r.completion, &r.rephrase, &r.therapist, &r.client]
                .iter()
                .any(|x| x.is_none())
            {
                return Err(GatewayError::Config(
                    "several providers configured: set roles.default or every role".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn role_provider(&self, role: RoleName) -> &str {
        let r = &self.roles;
        let explicit = match role {
            RoleName::Extraction => &r.extraction,
            RoleName::Completion => &r.completion,
            RoleName::Rephrase => &r.rephrase,
            RoleName::Therapist => &r.therapist,
            RoleName::Client => &r.client,
        };
        explicit
            .as_deref()
            .or(r.default.as_deref())
            .unwrap_or_else(|| self.providers.keys().next().expect("validated non-empty"))
    }

    /// First routing rule the profile satisfies, else the client role.
    pub fn client_provider_for(&self, profile: &PsychologicalProfile) -> &str {
        self.routing
            .iter()
            .find(|r| r.matches(profile))
            .map(|r| r.provider.as_str())
            .unwrap_or_else(|| self.role_provider(RoleName::Client))
    }
}

/// Instantiated providers keyed by id.
pub struct Providers {
    pub config: GatewayConfig,
    built: BTreeMap<String, Arc<dyn Provider>>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Providers {
    /// Relative paths in the config resolve against `base`.
    pub fn build(config: GatewayConfig, base: &Path) -> Result<Self, GatewayError> {
        config.validate()?;
        let mut built = BTreeMap::new();
        for (id, spec) in &config.providers {
            let mut p: Arc<dyn Provider> = match spec.kind {
                ProviderKind::Openai => Arc::new(OpenAiProvider::new(
                    spec.endpoint.clone().expect("validated"),
                    spec.api_key_env.clone(),
                    spec.retry,
                )),
                ProviderKind::Mock => match &spec.script {
                    None => Arc::new(ScriptedMock::pipeline()),
                    Some(path) => {
                        let path = resolve(base, path);
                        let text = std::fs::read_to_string(&path)
                            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
                        let script: ScriptedMock = serde_json::from_str(&text)
                            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
                        Arc::new(script)
                    }
                },
                ProviderKind::Replay => Arc::new(Replay::load(&resolve(
                    base,
                    spec.cassette.as_deref().expect("validated"),
                ))?),
            };
            if let Some(rpm) = spec.requests_per_minute {
                p = Arc::new(RateLimited::new(p, rpm));
            }
            if let Some(path) = &spec.record {
                p = Arc::new(Recorder::new(p, resolve(base, path))?);
            }
            built.insert(id.clone(), p);
        }
        Ok(Providers { config, built })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.built.keys().map(String::as_str)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.built.contains_key(id)
    }

    pub fn llm(&self, id: &str, purpose: Purpose) -> Result<Llm, GatewayError> {
        let provider = self
            .built
            .get(id)
            .ok_or_else(|| GatewayError::Config(format!("unknown provider {id:?}")))?;
        let spec = &self.config.providers[id];
        let mut llm = Llm::new(id, provider.clone(), spec.model.clone(), purpose)
            .with_temperature(self.config.temperatures.get(purpose));
        llm.max_tokens = spec.max_tokens;
        Ok(llm)
    }

    pub fn for_role(&self, role: RoleName) -> Llm {
        self.llm(self.config.role_provider(role), role.purpose())
            .expect("role providers validated")
    }

    pub fn client_for(&self, profile: &PsychologicalProfile) -> Llm {
        self.llm(self.config.client_provider_for(profile), Purpose::Simulation)
            .expect("routing providers validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{Gender, TraitAssessment};

    const CFG: &str = r#"
[providers.a]
kind = "mock"
model = "model-a"

[providers.b]
kind = "mock"
model = "model-b"
max_tokens = 64

[roles]
default = "b"

[[routing]]
provider = "a"
when = { openness = ["61-80%", "81-100%"], agreeableness = ["61-80%", "81-100%"] }
"#;

    fn profile(o: &str, a: &str) -> PsychologicalProfile {
        let traits = Trait::ALL
            .into_iter()
            .map(|t| {
                let level = match t {
                    Trait::Openness => o,
                    Trait::Agreeableness => a,
                    _ => t.levels()[0],
                };
                (t, TraitAssessment { level: Some(level.into()), rationale: String::new() })
            })
            .collect();
        PsychologicalProfile {
            name: None,
            gender: Gender::Unidentified,
            age_estimate: "unclear".into(),
            occupation: None,
            problem: "p".into(),
            reasons_for_visiting: "r".into(),
            traits,
            symptoms: vec![],
        }
    }

    #[test]
    fn routing_by_traits() {
        let cfg = GatewayConfig::from_toml(CFG).unwrap();
        assert_eq!(cfg.client_provider_for(&profile("81-100%", "61-80%")), "a");
        assert_eq!(cfg.client_provider_for(&profile("81-100%", "21-40%")), "b");
        assert_eq!(cfg.role_provider(RoleName::Completion), "b");
        let providers = Providers::build(cfg, Path::new(".")).unwrap();
        let llm = providers.client_for(&profile("61-80%", "61-80%"));
        assert_eq!((llm.model.as_str(), llm.temperature), ("model-a", 0.7));
        let ex = providers.for_role(RoleName::Extraction);
        assert_eq!((ex.model.as_str(), ex.temperature, ex.max_tokens), ("model-b", 0.0, 64));
    }

    #[test]
    fn invalid_configs() {
        let bad = CFG.replace("default = \"b\"", "default = \"zzz\"");
        assert!(GatewayConfig::from_toml(&bad).is_err());
        let bad = CFG.replace("openness", "curiosity");
        assert!(GatewayConfig::from_toml(&bad).is_err());
        let bad = CFG.replace("\"61-80%\", \"81-100%\"]", "\"High\"]");
        assert!(GatewayConfig::from_toml(&bad).is_err());
        let bad = CFG.replace("[roles]\ndefault = \"b\"\n", "");
        assert!(GatewayConfig::from_toml(&bad).is_err());
        assert!(GatewayConfig::from_toml("[providers.x]\nkind = \"openai\"\n").is_err());
        assert!(GatewayConfig::from_toml("[providers.x]\nkind = \"mock\"\napi_key = \"sk-inline\"\n").is_err());
    }

    #[test]
    fn default_is_single_mock() {
        let cfg = GatewayConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.role_provider(RoleName::Therapist), "mock");
    }
}
