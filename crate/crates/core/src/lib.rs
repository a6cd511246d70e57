//! Keyframe selection, black-box model coordination, prompt templating,
//! ensemble scoring and evaluation for LLM-coordinated vision-language
//! pipelines.

pub mod ensemble;
pub mod frame;
pub mod gateway;
pub mod keyframe;
pub mod metrics;
pub mod pipeline;
pub mod template;

pub use ensemble::{ensemble_predict, ensemble_scores, ChoiceScores, EnsembleError};
pub use frame::{open_frame_source, Frame, FrameError, FrameSource, FrameStream, SourceKind};
pub use gateway::{Gateway, GatewayError, ModelEndpoint, ModelResponse, RequestKind};
pub use keyframe::{select_keyframes, Keyframe, KeyframeError, SelectionParams};
pub use metrics::{ConfusionMatrix, EvalReport, MetricsError, PrfTable};
pub use pipeline::{PipelineError, RunConfig, RunOutcome};
pub use template::{PromptRecord, TemplateConfig, TemplateError};
