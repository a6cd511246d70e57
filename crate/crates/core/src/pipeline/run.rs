use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use futures::future::join_all;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use super::{ConfigError, DatasetManifest, HarVideo, Mode, Roles, RunConfig, Task, VqaItem};
use crate::ensemble::{ensemble_predict, ChoiceScores};
use crate::frame::{open_frame_source, FrameSource};
use crate::gateway::{
    count_attempts, EncodedImage, EndpointStats, Gateway, GatewayEmbedder, GatewayError,
    RequestKind,
};
use crate::keyframe::{select_keyframes, write_keyframes, Keyframe, SelectionParams};
use crate::metrics::{mcq_accuracy, write_report, ConfusionMatrix, EvalReport, ItemCounts};
use crate::template::{
    build_har_prompt, build_vqa_prompt, export_training_records, normalize_answer, single_line,
    HarContext, KeyframeBlock, PromptRecord, VqaContext, HAR_FRAME_QUESTION,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ITEM_ERRORS: i32 = 2;
pub const EXIT_TOTAL_FAILURE: i32 = 3;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const RUN_STATS_FILE: &str = "run_stats.json";
pub const TRAIN_FILE: &str = "train.jsonl";
const ARTIFACT_DIRS: [&str; 3] = ["keyframes", "prompts", "responses"];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("writing {path}: {message}")]
    Output { path: PathBuf, message: String },
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            _ => EXIT_TOTAL_FAILURE,
        }
    }
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Why one item was excluded from scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub id: String,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub message: String,
}

impl ItemError {
    fn new(id: &str, stage: &str, endpoint: Option<&str>, message: impl std::fmt::Display) -> Self {
        Self {
            id: id.to_string(),
            stage: stage.to_string(),
            endpoint: endpoint.map(str::to_string),
            message: message.to_string(),
        }
    }

    fn gateway(id: &str, stage: &str, e: &GatewayError) -> Self {
        Self::new(id, stage, e.endpoint(), e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub gold_index: usize,
    pub gold: String,
    pub predicted_index: Option<usize>,
    pub predicted: Option<String>,
    /// Raw text the prediction was read from.
    pub raw: String,
}

/// One model response as persisted under `responses/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub endpoint: String,
    pub kind: RequestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemTrace {
    pub id: String,
    pub responses: Vec<ResponseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ChoiceScores>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunStats {
    pub items: ItemCounts,
    pub endpoints: BTreeMap<String, EndpointStats>,
    /// HTTP attempts made on behalf of each item, retries included.
    pub item_attempts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub predictions: Vec<Prediction>,
    pub errors: Vec<ItemError>,
    pub stats: BTreeMap<String, EndpointStats>,
    pub item_attempts: BTreeMap<String, u64>,
    pub output_dir: PathBuf,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        let items = self.report.items;
        if items.evaluated == 0 {
            EXIT_TOTAL_FAILURE
        } else if items.errored > 0 {
            EXIT_ITEM_ERRORS
        } else {
            EXIT_OK
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExportOutcome {
    pub path: PathBuf,
    pub records: Vec<PromptRecord>,
    pub errors: Vec<ItemError>,
}

impl ExportOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.records.is_empty() {
            EXIT_TOTAL_FAILURE
        } else if !self.errors.is_empty() {
            EXIT_ITEM_ERRORS
        } else {
            EXIT_OK
        }
    }
}

struct Ctx {
    gateway: Gateway,
    config: RunConfig,
    roles: Roles,
    out: PathBuf,
}

/// A prompt ready for the coordinating model.
struct Prepared {
    id: String,
    gold_index: usize,
    record: PromptRecord,
    trace: ItemTrace,
}

struct Finished {
    prediction: Prediction,
    trace: ItemTrace,
    prompt: Option<String>,
}

impl Ctx {
    fn new(config: &RunConfig, mode: Mode) -> Result<Self, PipelineError> {
        let mut config = config.clone();
        config.mode = mode;
        config.validate()?;
        let roles = config.roles()?;
        let gateway = Gateway::new(config.endpoints.clone(), config.cache_dir.as_deref())?;
        Ok(Self {
            gateway,
            out: config.output_dir.clone(),
            config,
            roles,
        })
    }

    fn manifest(&self, task: Task) -> Result<DatasetManifest, PipelineError> {
        let m = DatasetManifest::load(&self.config.dataset_manifest)?;
        let found = match m {
            DatasetManifest::VqaMcq { .. } => Task::VqaMcq,
            DatasetManifest::Har { .. } => Task::Har,
        };
        if found != task {
            return Err(ConfigError::Invalid(format!(
                "manifest {} is for the {found:?} task, run asked for {task:?}",
                self.config.dataset_manifest.display()
            ))
            .into());
        }
        Ok(m)
    }

    fn prepare_output(&self) -> Result<(), PipelineError> {
        std::fs::create_dir_all(&self.out).map_err(|e| output_err(&self.out, e))?;
        for d in ARTIFACT_DIRS {
            let p = self.out.join(d);
            if p.exists() {
                std::fs::remove_dir_all(&p).map_err(|e| output_err(&p, e))?;
            }
            std::fs::create_dir_all(&p).map_err(|e| output_err(&p, e))?;
        }
        Ok(())
    }

    /// Captions the image and asks every VLM the question.
    async fn query_vlms(
        &self,
        id: &str,
        image: &EncodedImage,
        question: &str,
        choices: Option<&[String]>,
        cluster_id: Option<usize>,
    ) -> Result<
        (
            BTreeMap<String, String>,
            BTreeMap<String, String>,
            Vec<ResponseRecord>,
        ),
        ItemError,
    > {
        let gw = &self.gateway;
        let calls = self.roles.vlms.iter().flat_map(|ep| {
            [
                futures::future::Either::Left(gw.caption(ep, image)),
                futures::future::Either::Right(gw.vqa_answer(ep, image, question, choices)),
            ]
        });
        let results = join_all(calls).await;
        let mut captions = BTreeMap::new();
        let mut answers = BTreeMap::new();
        let mut records = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            let stage = if i % 2 == 0 { "caption" } else { "vqa" };
            let r = r.map_err(|e| ItemError::gateway(id, stage, &e))?;
            let text = single_line(r.text().unwrap_or_default());
            let ep = &self.roles.vlms[i / 2];
            records.push(ResponseRecord {
                endpoint: ep.clone(),
                kind: r.kind,
                cluster_id,
                text: text.clone(),
            });
            if i % 2 == 0 {
                captions.insert(ep.clone(), text);
            } else {
                answers.insert(ep.clone(), text);
            }
        }
        Ok((captions, answers, records))
    }

    async fn select(&self, video: &HarVideo) -> Result<Vec<Keyframe>, ItemError> {
        let id = video.video_id.clone();
        let err = |stage: &str, e: &dyn std::fmt::Display| ItemError::new(&id, stage, None, e);
        let mut source = FrameSource::infer(&video.source, self.config.decoder_command.as_deref())
            .map_err(|e| err("open", &e))?;
        if let Some(fps) = self.config.fps_hint {
            source = source.fps_hint(fps);
        }
        let params: SelectionParams = self.config.effective_selection();
        let kf_dir = self.out.join("keyframes").join(&id);
        let vid = id.clone();
        let task =
            tokio::task::spawn_blocking(move || -> Result<Vec<Keyframe>, (String, String)> {
                let mut stream =
                    open_frame_source(&source).map_err(|e| ("open".to_string(), e.to_string()))?;
                let kfs = select_keyframes(&mut stream, &params, &vid)
                    .map_err(|e| ("select".to_string(), e.to_string()))?;
                write_keyframes(&kf_dir, &vid, &kfs)
                    .map_err(|e| ("persist".to_string(), e.to_string()))?;
                Ok(kfs)
            });
        match task.await {
            Ok(Ok(kfs)) if kfs.is_empty() => Err(err("select", &"no keyframes passed the filters")),
            Ok(Ok(kfs)) => Ok(kfs),
            Ok(Err((stage, msg))) => Err(err(&stage, &msg)),
            Err(join) => Err(err("select", &join)),
        }
    }

    async fn prepare_har(
        &self,
        video: &HarVideo,
        class_names: &[String],
    ) -> Result<Prepared, ItemError> {
        let id = video.video_id.as_str();
        let keyframes = self.select(video).await?;
        let mut images = Vec::with_capacity(keyframes.len());
        for kf in &keyframes {
            images.push(
                EncodedImage::from_frame(&kf.frame)
                    .map_err(|e| ItemError::gateway(id, "encode", &e))?,
            );
        }
        let per_kf = join_all(keyframes.iter().zip(&images).map(|(kf, img)| {
            self.query_vlms(id, img, HAR_FRAME_QUESTION, None, Some(kf.cluster_id))
        }))
        .await;
        let mut blocks = Vec::with_capacity(keyframes.len());
        let mut responses = Vec::new();
        for (kf, r) in keyframes.iter().zip(per_kf) {
            let (captions, answers, records) = r?;
            responses.extend(records);
            blocks.push(KeyframeBlock {
                cluster_id: kf.cluster_id,
                captions,
                answers,
            });
        }
        let ctx = HarContext {
            video_id: id.to_string(),
            blocks,
            class_names: class_names.to_vec(),
        };
        let record = build_har_prompt(&ctx, &self.config.template)
            .map_err(|e| ItemError::new(id, "template", None, e))?;
        let gold_index = class_names
            .iter()
            .position(|c| *c == video.action_label)
            .expect("manifest validated");
        Ok(Prepared {
            id: id.to_string(),
            gold_index,
            record: record.with_target(video.action_label.clone()),
            trace: ItemTrace {
                id: id.to_string(),
                responses,
                scores: None,
            },
        })
    }

    async fn prepare_vqa(&self, item: &VqaItem) -> Result<Prepared, ItemError> {
        let id = item.item_id.as_str();
        let image = self.load_image(item)?;
        let (captions, answers, responses) = self
            .query_vlms(id, &image, &item.question, Some(&item.choices), None)
            .await?;
        let ctx = VqaContext {
            item_id: id.to_string(),
            captions,
            question: item.question.clone(),
            choices: item.choices.clone(),
            answers,
        };
        let record = build_vqa_prompt(&ctx, &self.config.template)
            .map_err(|e| ItemError::new(id, "template", None, e))?;
        Ok(Prepared {
            id: id.to_string(),
            gold_index: item.correct_choice_idx,
            record: record.with_target(item.choices[item.correct_choice_idx].clone()),
            trace: ItemTrace {
                id: id.to_string(),
                responses,
                scores: None,
            },
        })
    }

    fn load_image(&self, item: &VqaItem) -> Result<EncodedImage, ItemError> {
        EncodedImage::from_path(&item.image_path)
            .map_err(|e| ItemError::new(&item.item_id, "image", None, e))
    }

    /// Sends the prompt to the coordinating model and maps its answer.
    async fn coordinate(&self, mut p: Prepared, labels: &[String]) -> Result<Finished, ItemError> {
        let llm = self.roles.llm.as_deref().expect("cola mode has an llm");
        let r = self
            .gateway
            .generate(llm, &p.record.prompt_text)
            .await
            .map_err(|e| ItemError::gateway(&p.id, "generate", &e))?;
        let raw = r.into_text().unwrap_or_default();
        p.trace.responses.push(ResponseRecord {
            endpoint: llm.to_string(),
            kind: RequestKind::Generate,
            cluster_id: None,
            text: raw.clone(),
        });
        let predicted_index = normalize_answer(&raw, labels);
        Ok(Finished {
            prediction: Prediction {
                id: p.id,
                gold_index: p.gold_index,
                gold: labels[p.gold_index].clone(),
                predicted_index,
                predicted: predicted_index.map(|i| labels[i].clone()),
                raw,
            },
            trace: p.trace,
            prompt: Some(p.record.prompt_text),
        })
    }

    async fn ensemble_item(&self, item: &VqaItem) -> Result<Finished, ItemError> {
        let id = item.item_id.as_str();
        let image = self.load_image(item)?;
        let embedder = GatewayEmbedder {
            gateway: &self.gateway,
            endpoint: self
                .roles
                .embed
                .as_deref()
                .expect("ensemble mode has an embedder"),
        };
        let (answers, scores) = ensemble_predict(
            &self.gateway,
            &image,
            &item.question,
            &item.choices,
            &self.roles.vlms,
            &embedder,
        )
        .await
        .map_err(|e| ItemError::new(id, "ensemble", e.endpoint(), &e))?;
        let responses = answers
            .iter()
            .map(|(ep, text)| ResponseRecord {
                endpoint: ep.clone(),
                kind: RequestKind::Vqa,
                cluster_id: None,
                text: text.clone(),
            })
            .collect();
        let k = scores.chosen_index;
        Ok(Finished {
            prediction: Prediction {
                id: id.to_string(),
                gold_index: item.correct_choice_idx,
                gold: item.choices[item.correct_choice_idx].clone(),
                predicted_index: Some(k),
                predicted: Some(item.choices[k].clone()),
                raw: item.choices[k].clone(),
            },
            trace: ItemTrace {
                id: id.to_string(),
                responses,
                scores: Some(scores),
            },
            prompt: None,
        })
    }

    fn persist_item(&self, f: &Finished) -> Result<(), PipelineError> {
        if let Some(prompt) = &f.prompt {
            let p = self
                .out
                .join("prompts")
                .join(format!("{}.txt", f.prediction.id));
            std::fs::write(&p, prompt).map_err(|e| output_err(&p, e))?;
        }
        let p = self
            .out
            .join("responses")
            .join(format!("{}.json", f.prediction.id));
        let json = serde_json::to_string_pretty(&f.trace).expect("trace serialises") + "\n";
        std::fs::write(&p, json).map_err(|e| output_err(&p, e))
    }

    fn finish(
        &self,
        classes: Vec<String>,
        results: Vec<(Result<Finished, ItemError>, u64)>,
        mcq: bool,
    ) -> Result<RunOutcome, PipelineError> {
        let total = results.len();
        let mut predictions = Vec::new();
        let mut errors = Vec::new();
        let mut item_attempts = BTreeMap::new();
        for (r, attempts) in results {
            match r {
                Ok(f) => {
                    self.persist_item(&f)?;
                    item_attempts.insert(f.prediction.id.clone(), attempts);
                    predictions.push(f.prediction);
                }
                Err(e) => {
                    item_attempts.insert(e.id.clone(), attempts);
                    errors.push(e);
                }
            }
        }
        let predicted: Vec<Option<usize>> = predictions.iter().map(|p| p.predicted_index).collect();
        let gold: Vec<usize> = predictions.iter().map(|p| p.gold_index).collect();
        let cm = ConfusionMatrix::from_indices(classes, &predicted, &gold)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let accuracy = if mcq {
            mcq_accuracy(&predicted, &gold).ok()
        } else if predictions.is_empty() {
            None
        } else {
            Some(cm.accuracy())
        };
        let items = ItemCounts {
            total,
            evaluated: predictions.len(),
            errored: errors.len(),
        };
        let report = EvalReport::new(&cm, accuracy, items);
        write_report(&report, &self.out).map_err(|e| output_err(&self.out, e))?;
        write_jsonl(&self.out.join(PREDICTIONS_FILE), &predictions)?;
        write_jsonl(&self.out.join(ERRORS_FILE), &errors)?;
        let stats = self.gateway.stats();
        let run_stats = RunStats {
            items,
            endpoints: stats.clone(),
            item_attempts: item_attempts.clone(),
        };
        let p = self.out.join(RUN_STATS_FILE);
        let json = serde_json::to_string_pretty(&run_stats).expect("stats serialise") + "\n";
        std::fs::write(&p, json).map_err(|e| output_err(&p, e))?;
        for e in &errors {
            tracing::warn!(item = %e.id, stage = %e.stage, endpoint = ?e.endpoint, "item failed: {}", e.message);
        }
        Ok(RunOutcome {
            report,
            predictions,
            errors,
            stats,
            item_attempts,
            output_dir: self.out.clone(),
        })
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("row serialises"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| output_err(path, e))
}

/// Choice letters used as confusion-matrix classes for multiple choice.
fn choice_classes(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| ((b'a' + i as u8) as char).to_string())
        .collect()
}

/// Runs whichever task the config names.
pub async fn run(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    match config.task {
        Task::Har => run_har(config).await,
        Task::VqaMcq => run_vqa(config, config.mode).await,
    }
}

/// Keyframes → per-frame VLM captions and answers → coordination prompt →
/// LLM answer → class, for every video in the manifest.
pub async fn run_har(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    let ctx = Ctx::new(config, Mode::Cola)?;
    let DatasetManifest::Har {
        class_names,
        videos,
        ..
    } = ctx.manifest(Task::Har)?
    else {
        unreachable!("task checked")
    };
    ctx.prepare_output()?;
    let ctx_ref = &ctx;
    let classes = &class_names;
    let results: Vec<_> = stream::iter(&videos)
        .map(|v| {
            count_attempts(async move {
                let p = ctx_ref.prepare_har(v, classes).await?;
                ctx_ref.coordinate(p, classes).await
            })
        })
        .buffered(config.parallel_videos)
        .collect()
        .await;
    ctx.finish(class_names.clone(), results, false)
}

/// Multiple-choice VQA with either the averaging ensemble or the
/// coordinating language model.
pub async fn run_vqa(config: &RunConfig, mode: Mode) -> Result<RunOutcome, PipelineError> {
    let ctx = Ctx::new(config, mode)?;
    let DatasetManifest::VqaMcq { items, .. } = ctx.manifest(Task::VqaMcq)? else {
        unreachable!("task checked")
    };
    ctx.prepare_output()?;
    let ctx_ref = &ctx;
    let results: Vec<_> = stream::iter(&items)
        .map(|item| {
            count_attempts(async move {
                match mode {
                    Mode::Ensemble => ctx_ref.ensemble_item(item).await,
                    Mode::Cola => {
                        let p = ctx_ref.prepare_vqa(item).await?;
                        ctx_ref.coordinate(p, &item.choices).await
                    }
                }
            })
        })
        .buffered(config.parallel_videos)
        .collect()
        .await;
    let n = items.iter().map(|i| i.choices.len()).max().unwrap_or(0);
    ctx.finish(choice_classes(n), results, true)
}

/// Builds coordination prompts with the gold label as target and writes
/// them to `<output_dir>/train.jsonl`. Never calls the language model.
pub async fn export_training_data(config: &RunConfig) -> Result<ExportOutcome, PipelineError> {
    let ctx = Ctx::new(config, Mode::Cola)?;
    let manifest = DatasetManifest::load(&ctx.config.dataset_manifest)?;
    ctx.prepare_output()?;
    let ctx_ref = &ctx;
    let results: Vec<Result<Prepared, ItemError>> = match &manifest {
        DatasetManifest::Har {
            class_names,
            videos,
            ..
        } => {
            stream::iter(videos)
                .map(|v| ctx_ref.prepare_har(v, class_names))
                .buffered(config.parallel_videos)
                .collect()
                .await
        }
        DatasetManifest::VqaMcq { items, .. } => {
            stream::iter(items)
                .map(|i| ctx_ref.prepare_vqa(i))
                .buffered(config.parallel_videos)
                .collect()
                .await
        }
    };
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(p) => records.push(p.record),
            Err(e) => errors.push(e),
        }
    }
    let path = ctx.out.join(TRAIN_FILE);
    export_training_records(&records, &path).map_err(|e| output_err(&path, e))?;
    write_jsonl(&ctx.out.join(ERRORS_FILE), &errors)?;
    Ok(ExportOutcome {
        path,
        records,
        errors,
    })
}
