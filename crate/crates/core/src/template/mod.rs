//! Coordination prompts in the line-oriented `cola-v1` grammar.
//!
//! A VQA prompt looks like
//!
//! ```text
//! INSTRUCTION: <text>
//! Context [vlm-a]: <caption>
//! Context [vlm-b]: <caption>
//! Question: <question>
//! Choices: (a) <c1> (b) <c2> (c) <c3>
//! Plausible answer [vlm-a]: <answer>
//! Plausible answer [vlm-b]: <answer>
//! Answer:
//! ```
//!
//! A HAR prompt replaces the context and answer lines with one `Frame <k>:`
//! block per keyframe, each carrying that keyframe's `Context` and
//! `Plausible answer` lines, followed by the fixed video question and the
//! class names as choices. Endpoints always appear in name order.

mod export;
mod normalize;
mod parse;
mod render;

pub use export::{export_training_records, read_training_records};
pub use normalize::{normalize_answer, normalize_text};
pub use parse::{parse_har_prompt, parse_vqa_prompt, ParsedFrame, ParsedHar, ParsedVqa};
pub use render::{build_har_prompt, build_vqa_prompt};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const TEMPLATE_VERSION: &str = "cola-v1";
pub const HAR_FRAME_QUESTION: &str = "What action is happening in the frame?";
pub const HAR_VIDEO_QUESTION: &str = "What action is happening in the video?";

pub const DEFAULT_VQA_INSTRUCTION: &str = "Several vision-language models describe the same image and propose answers. Weigh their contexts and plausible answers, then pick the correct choice.";
pub const DEFAULT_HAR_INSTRUCTION: &str = "Several vision-language models describe unordered keyframes from one video and say what action each frame shows. Weigh their outputs and name the single action performed in the video.";

/// Choice labels `(a)` … `(z)`.
pub const MAX_CHOICES: usize = 26;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("invalid context: {0}")]
    InvalidContext(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("training record {index} has no target")]
    MissingTarget { index: usize },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Instruction wording; the grammar itself is fixed by `TEMPLATE_VERSION`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    pub vqa_instruction: String,
    pub har_instruction: String,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            vqa_instruction: DEFAULT_VQA_INSTRUCTION.into(),
            har_instruction: DEFAULT_HAR_INSTRUCTION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaContext {
    pub item_id: String,
    /// Endpoint name → caption.
    pub captions: BTreeMap<String, String>,
    pub question: String,
    pub choices: Vec<String>,
    /// Endpoint name → plausible answer.
    pub answers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeBlock {
    pub cluster_id: usize,
    pub captions: BTreeMap<String, String>,
    pub answers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarContext {
    pub video_id: String,
    /// In the order produced by keyframe selection.
    pub blocks: Vec<KeyframeBlock>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub endpoints: Vec<String>,
    pub template_version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cluster_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_text: String,
    pub provenance: Provenance,
    pub target: Option<String>,
}

impl PromptRecord {
    pub fn with_target(mut self, target: impl Into<String>) -> Self {
        self.target = Some(target.into());
        self
    }
}

/// Collapses runs of whitespace (including newlines) to single spaces and
/// trims, so free-form model output fits on one prompt line.
pub fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub(crate) fn choice_label(i: usize) -> char {
    (b'a' + i as u8) as char
}
