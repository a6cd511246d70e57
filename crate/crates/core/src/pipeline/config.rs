use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::{validate_endpoints, ModelEndpoint, RequestKind};
use crate::keyframe::SelectionParams;
use crate::template::{TemplateConfig, TEMPLATE_VERSION};

pub const ENV_PREFIX: &str = "COLA_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("override {key}: {message}")]
    Override { key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    VqaMcq,
    Har,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Averaging ensemble of cosine similarities (VQA only).
    Ensemble,
    /// Coordinating language model over VLM captions and answers.
    #[default]
    Cola,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub mode: Mode,
    pub dataset_manifest: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_parallel")]
    pub parallel_videos: usize,
    /// Overrides `selection.kmeans_seed` when set.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_template_version")]
    pub template_version: String,
    /// Fallback frame rate for sources that do not carry one.
    #[serde(default)]
    pub fps_hint: Option<f64>,
    /// Argv template with `{input}`, used for files that are neither images
    /// nor framestreams.
    #[serde(default)]
    pub decoder_command: Option<String>,
    /// VLM endpoints to query; every endpoint with both `caption` and `vqa`
    /// when empty.
    #[serde(default)]
    pub vlm_endpoints: Vec<String>,
    /// The coordinating LLM; the only `generate` endpoint when unset.
    #[serde(default)]
    pub llm_endpoint: Option<String>,
    /// The embedding endpoint for ensemble mode; the only `embed` endpoint
    /// when unset.
    #[serde(default)]
    pub embed_endpoint: Option<String>,
    #[serde(default)]
    pub selection: SelectionParams,
    #[serde(default)]
    pub template: TemplateConfig,
    pub endpoints: Vec<ModelEndpoint>,
}

fn default_parallel() -> usize {
    4
}

fn default_template_version() -> String {
    TEMPLATE_VERSION.to_string()
}

/// Endpoint names resolved against capabilities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roles {
    pub vlms: Vec<String>,
    pub llm: Option<String>,
    pub embed: Option<String>,
}

fn parse_scalar(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn key_matches(candidate: &str, segment: &str) -> bool {
    candidate.to_lowercase().replace('-', "_") == segment
}

/// Sets `path` (already split and lowercased) inside `root`. Arrays of tables
/// are addressed by the element's `name` field.
fn apply_override(
    root: &mut toml::Value,
    path: &[String],
    value: toml::Value,
    key: &str,
) -> Result<(), ConfigError> {
    let err = |message: String| ConfigError::Override {
        key: key.to_string(),
        message,
    };
    let (head, rest) = path.split_first().ok_or_else(|| err("empty key".into()))?;
    match root {
        toml::Value::Table(t) => {
            let existing = t.keys().find(|k| key_matches(k, head)).cloned();
            if rest.is_empty() {
                t.insert(existing.unwrap_or_else(|| head.clone()), value);
                return Ok(());
            }
            let name = existing.unwrap_or_else(|| head.clone());
            let child = t
                .entry(name)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            apply_override(child, rest, value, key)
        }
        toml::Value::Array(items) => {
            let item = items
                .iter_mut()
                .find(|v| {
                    v.get("name")
                        .and_then(toml::Value::as_str)
                        .is_some_and(|n| key_matches(n, head))
                })
                .ok_or_else(|| err(format!("no entry named {head:?}")))?;
            if rest.is_empty() {
                return Err(err("cannot replace a whole array entry".into()));
            }
            apply_override(item, rest, value, key)
        }
        _ => Err(err(format!("{head:?} is not inside a table"))),
    }
}

impl RunConfig {
    /// Reads the config and applies `COLA_` overrides from the process
    /// environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_with_env(path, std::env::vars())
    }

    /// Reads `path` as TOML and applies overrides from `vars`.
    ///
    /// `COLA_SELECTION__MAX_KEYFRAMES=5` sets `selection.max_keyframes`;
    /// `COLA_ENDPOINTS__VLM_A__BASE_URL=...` sets `base_url` on the endpoint
    /// named `vlm-a`. Values are parsed as TOML scalars, falling back to
    /// plain strings. Relative paths resolve against the config's directory.
    pub fn load_with_env(
        path: &Path,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut tree: toml::Value = toml::from_str::<toml::Table>(&text)
            .map(toml::Value::Table)
            .map_err(|e| ConfigError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let mut overrides: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.len() > ENV_PREFIX.len())
            .collect();
        overrides.sort();
        for (key, raw) in overrides {
            let segs: Vec<String> = key[ENV_PREFIX.len()..]
                .split("__")
                .map(str::to_lowercase)
                .collect();
            apply_override(&mut tree, &segs, parse_scalar(&raw), &key)?;
        }
        let mut cfg: Self = tree
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset_manifest);
        fix(&mut self.output_dir);
        if let Some(c) = self.cache_dir.as_mut() {
            fix(c);
        }
    }

    /// Selection parameters with the run seed applied.
    pub fn effective_selection(&self) -> SelectionParams {
        let mut s = self.selection.clone();
        if let Some(seed) = self.seed {
            s.kmeans_seed = seed;
        }
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.template_version != TEMPLATE_VERSION {
            return invalid(format!(
                "template_version {:?} is not supported (expected {TEMPLATE_VERSION:?})",
                self.template_version
            ));
        }
        if self.parallel_videos < 1 {
            return invalid("parallel_videos must be >= 1".into());
        }
        if let Some(fps) = self.fps_hint {
            if !(fps.is_finite() && fps > 0.0) {
                return invalid(format!("fps_hint must be positive, got {fps}"));
            }
        }
        validate_endpoints(&self.endpoints).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.selection
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.task == Task::Har && self.mode == Mode::Ensemble {
            return invalid("ensemble mode applies to the vqa-mcq task only".into());
        }
        self.roles().map(|_| ())
    }

    fn find(&self, name: &str, kind: RequestKind) -> Result<String, ConfigError> {
        let ep = self
            .endpoints
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown endpoint {name:?}")))?;
        if !ep.supports(kind) {
            return Err(ConfigError::Invalid(format!(
                "endpoint {name:?} lacks the {kind} capability"
            )));
        }
        Ok(name.to_string())
    }

    fn unique(&self, explicit: Option<&String>, kind: RequestKind) -> Result<String, ConfigError> {
        if let Some(name) = explicit {
            return self.find(name, kind);
        }
        let all: Vec<&ModelEndpoint> = self.endpoints.iter().filter(|e| e.supports(kind)).collect();
        match all.as_slice() {
            [one] => Ok(one.name.clone()),
            [] => Err(ConfigError::Invalid(format!(
                "no endpoint has the {kind} capability"
            ))),
            _ => Err(ConfigError::Invalid(format!(
                "several endpoints have the {kind} capability; name one explicitly"
            ))),
        }
    }

    /// Resolves which endpoints play which part for the configured task and mode.
    pub fn roles(&self) -> Result<Roles, ConfigError> {
        let vlm_kinds: &[RequestKind] = match self.mode {
            Mode::Cola => &[RequestKind::Caption, RequestKind::Vqa],
            Mode::Ensemble => &[RequestKind::Vqa],
        };
        let vlms: Vec<String> = if self.vlm_endpoints.is_empty() {
            self.endpoints
                .iter()
                .filter(|e| vlm_kinds.iter().all(|&k| e.supports(k)))
                .map(|e| e.name.clone())
                .collect()
        } else {
            let mut v = Vec::new();
            for name in &self.vlm_endpoints {
                for &k in vlm_kinds {
                    self.find(name, k)?;
                }
                if v.contains(name) {
                    return Err(ConfigError::Invalid(format!(
                        "vlm endpoint {name:?} listed twice"
                    )));
                }
                v.push(name.clone());
            }
            v
        };
        if vlms.is_empty() {
            return Err(ConfigError::Invalid(
                "at least one VLM endpoint is required".into(),
            ));
        }
        let (llm, embed) = match self.mode {
            Mode::Cola => (
                Some(self.unique(self.llm_endpoint.as_ref(), RequestKind::Generate)?),
                None,
            ),
            Mode::Ensemble => (
                None,
                Some(self.unique(self.embed_endpoint.as_ref(), RequestKind::Embed)?),
            ),
        };
        Ok(Roles { vlms, llm, embed })
    }
}
