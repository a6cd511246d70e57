use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ConfigError;
use crate::template::MAX_CHOICES;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaItem {
    pub item_id: String,
    pub image_path: PathBuf,
    pub question: String,
    pub choices: Vec<String>,
    pub correct_choice_idx: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarVideo {
    pub video_id: String,
    /// Image directory, framestream file, or any file the decoder understands.
    pub source: PathBuf,
    pub action_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetManifest {
    VqaMcq {
        #[serde(default)]
        split: Option<String>,
        items: Vec<VqaItem>,
    },
    Har {
        #[serde(default)]
        split: Option<String>,
        class_names: Vec<String>,
        videos: Vec<HarVideo>,
    },
}

fn invalid<T>(path: &Path, msg: impl std::fmt::Display) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(format!("{}: {msg}", path.display())))
}

/// Ids become file names, so they must be plain path components.
fn check_id(path: &Path, id: &str, seen: &mut BTreeSet<String>) -> Result<(), ConfigError> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\', '\0']) {
        return invalid(path, format!("id {id:?} is not usable as a file name"));
    }
    if !seen.insert(id.to_string()) {
        return invalid(path, format!("id {id:?} appears twice"));
    }
    Ok(())
}

impl DatasetManifest {
    /// Reads the manifest; relative media paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        m.validate(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut m {
            Self::VqaMcq { items, .. } => items.iter_mut().for_each(|i| fix(&mut i.image_path)),
            Self::Har { videos, .. } => videos.iter_mut().for_each(|v| fix(&mut v.source)),
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        match self {
            Self::VqaMcq { items, .. } => items.len(),
            Self::Har { videos, .. } => videos.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split(&self) -> Option<&str> {
        match self {
            Self::VqaMcq { split, .. } | Self::Har { split, .. } => split.as_deref(),
        }
    }

    pub fn validate(&self, path: &Path) -> Result<(), ConfigError> {
        if self.is_empty() {
            return invalid(path, "manifest has no items");
        }
        let mut seen = BTreeSet::new();
        match self {
            Self::VqaMcq { items, .. } => {
                for it in items {
                    check_id(path, &it.item_id, &mut seen)?;
                    if it.choices.is_empty() || it.choices.len() > MAX_CHOICES {
                        return invalid(
                            path,
                            format!("{}: needs 1..={MAX_CHOICES} choices", it.item_id),
                        );
                    }
                    if it.correct_choice_idx >= it.choices.len() {
                        return invalid(
                            path,
                            format!(
                                "{}: correct_choice_idx {} out of range for {} choices",
                                it.item_id,
                                it.correct_choice_idx,
                                it.choices.len()
                            ),
                        );
                    }
                }
            }
            Self::Har {
                class_names,
                videos,
                ..
            } => {
                let classes: BTreeSet<&str> = class_names.iter().map(String::as_str).collect();
                if classes.len() != class_names.len() || class_names.is_empty() {
                    return invalid(path, "class_names must be nonempty and distinct");
                }
                if class_names.len() > MAX_CHOICES {
                    return invalid(path, format!("at most {MAX_CHOICES} classes are supported"));
                }
                for v in videos {
                    check_id(path, &v.video_id, &mut seen)?;
                    if !classes.contains(v.action_label.as_str()) {
                        return invalid(
                            path,
                            format!(
                                "{}: action_label {:?} not in class_names",
                                v.video_id, v.action_label
                            ),
                        );
                    }
                }
            }
        }
        Ok(())
    }
}
