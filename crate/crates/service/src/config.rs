//! Layered configuration: defaults, then a TOML file, then environment
//! variables, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use streamdesk_core::backend::{BackendKind, BackendProfile};
use streamdesk_core::clickqa::NEAR_MISS_RADIUS;
use streamdesk_core::kea::KeaConfig;
use streamdesk_core::memory::DEFAULT_RECENT_K;
use streamdesk_core::ses::SesConfig;
use thiserror::Error;

pub const ENV_BACKEND_ENDPOINT: &str = "STREAMDESK_BACKEND_ENDPOINT";
pub const ENV_STORAGE: &str = "STREAMDESK_STORAGE";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("override {0:?}: expected key=value with a dotted key such as ses.alpha=1.5")]
    OverrideSyntax(String),
    #[error("override {key}: {message}")]
    Override { key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8787,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClickConfig {
    /// Composite the cursor icon onto the rendered frame before transcription.
    pub visual_prompt: bool,
    pub near_miss_radius: f64,
    /// History entries handed to the answer path.
    pub recent_k: usize,
}

impl Default for ClickConfig {
    fn default() -> Self {
        Self {
            visual_prompt: true,
            near_miss_radius: NEAR_MISS_RADIUS,
            recent_k: DEFAULT_RECENT_K,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeChoice {
    #[default]
    Exact,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerConfig,
    /// Directory holding product records.
    pub storage: PathBuf,
    /// Lexicon file; the built-in list is used when absent.
    pub lexicon: Option<PathBuf>,
    /// Snippets served to the supplementary retrieval step.
    pub retrieval_snippets: Vec<String>,
    pub judge: JudgeChoice,
    pub backend: BackendProfile,
    pub ses: SesConfig,
    pub kea: KeaConfig,
    pub clickqa: ClickConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            server: ServerConfig::default(),
            storage: PathBuf::from("streamdesk-data"),
            lexicon: None,
            retrieval_snippets: Vec::new(),
            judge: JudgeChoice::default(),
            backend: BackendProfile::default(),
            ses: SesConfig::default(),
            kea: KeaConfig::default(),
            clickqa: ClickConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    /// Apply the environment layer. `lookup` is `std::env::var` in
    /// production and a map in tests.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(endpoint) = lookup(ENV_BACKEND_ENDPOINT).filter(|s| !s.is_empty()) {
            self.backend.kind = BackendKind::Http;
            self.backend.endpoint = Some(endpoint);
        }
        if let Some(storage) = lookup(ENV_STORAGE).filter(|s| !s.is_empty()) {
            self.storage = PathBuf::from(storage);
        }
    }

    /// Apply one `dotted.key=value` override; the value is read as a TOML
    /// scalar, falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .filter(|(k, _)| !k.trim().is_empty())
            .ok_or_else(|| ConfigError::OverrideSyntax(assignment.to_string()))?;
        let key = key.trim();
        let value = parse_scalar(raw.trim());
        let mut tree = toml::Value::try_from(&*self).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut node = &mut tree;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node.as_table_mut().ok_or_else(|| ConfigError::Override {
                key: key.into(),
                message: format!("{} is not a section", parts[..i].join(".")),
            })?;
            if i + 1 == parts.len() {
                table.insert((*part).to_string(), value);
                break;
            }
            node = table
                .entry((*part).to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        *self = tree.try_into().map_err(|e: toml::de::Error| ConfigError::Override {
            key: key.into(),
            message: e.message().to_string(),
        })?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.ses.validate().map_err(|e| ConfigError::Invalid(format!("ses: {e}")))?;
        self.kea.validate().map_err(|e| ConfigError::Invalid(format!("kea: {e}")))?;
        self.backend.validate().map_err(|e| ConfigError::Invalid(format!("backend: {e}")))?;
        let r = self.clickqa.near_miss_radius;
        if r < 0.0 || !r.is_finite() {
            return Err(ConfigError::Invalid(format!("clickqa.near_miss_radius must be >= 0, got {r}")));
        }
        if self.storage.as_os_str().is_empty() {
            return Err(ConfigError::Invalid("storage path is empty".into()));
        }
        Ok(())
    }

    /// File (if any), then environment, then overrides; validated.
    pub fn layered(
        file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(env);
        for o in overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    // wrap in a one-key document so TOML does the literal parsing
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn defaults_are_valid() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn file_then_env_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "storage = \"from-file\"\n[ses]\nalpha = 2.0\nwindow_size = 32\n[server]\nport = 9000\n",
        )
        .unwrap();
        let cfg = Config::layered(
            Some(&path),
            env(&[(ENV_STORAGE, "from-env"), (ENV_BACKEND_ENDPOINT, "http://127.0.0.1:1/v1")]),
            &["ses.alpha=1.25".into(), "server.port=9100".into()],
        )
        .unwrap();
        assert_eq!(cfg.storage, PathBuf::from("from-env"));
        assert_eq!(cfg.backend.kind, BackendKind::Http);
        assert_eq!(cfg.ses.alpha, 1.25);
        assert_eq!(cfg.ses.window_size, 32);
        assert_eq!(cfg.server.port, 9100);
        // a flag beats the environment
        let cfg = Config::layered(Some(&path), env(&[(ENV_STORAGE, "from-env")]), &["storage=cli".into()]).unwrap();
        assert_eq!(cfg.storage, PathBuf::from("cli"));
    }

    #[test]
    fn overrides_are_typed() {
        let mut cfg = Config::default();
        cfg.apply_override("kea.delta=7").unwrap();
        cfg.apply_override("clickqa.visual_prompt=false").unwrap();
        cfg.apply_override("backend.kind=mock").unwrap();
        assert_eq!(cfg.kea.delta, 7);
        assert!(!cfg.clickqa.visual_prompt);
        assert!(matches!(cfg.apply_override("kea.delta=-1"), Err(ConfigError::Override { .. })));
        assert!(matches!(cfg.apply_override("nonsense"), Err(ConfigError::OverrideSyntax(_))));
        assert!(matches!(cfg.apply_override("ses.bogus=1"), Err(ConfigError::Override { .. })));
    }

    #[test]
    fn invalid_values_rejected() {
        let err = Config::layered(None, env(&[]), &["ses.min_segment_len=100".into()]).unwrap_err();
        assert!(err.to_string().contains("min_segment_len"));
        let err = Config::layered(None, env(&[]), &["backend.kind=http".into()]).unwrap_err();
        assert!(err.to_string().contains("endpoint"));
    }

    #[test]
    fn unknown_file_keys_rejected() {
        let err = Config::from_toml_str("prot = 1\n", Path::new("x.toml")).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
    }
}
