use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::frame::{Frame, FrameStream};

use super::color::{luv_frame_diff, rgb_to_luv, LuvPlanes};
use super::features::{brightness_score, entropy_score, FrameFeatures};
use super::kmeans::{kmeans_cluster, KMeansParams};
use super::KeyframeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionParams {
    pub max_keyframes: usize,
    /// Mean per-pixel, per-channel absolute LUV difference.
    pub luv_diff_threshold: f64,
    pub brightness_min: f64,
    pub brightness_max: f64,
    /// Bits.
    pub entropy_min: f64,
    pub histogram_bins_per_channel: usize,
    pub kmeans_seed: u64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            max_keyframes: 10,
            luv_diff_threshold: 8.0,
            brightness_min: 10.0,
            brightness_max: 245.0,
            entropy_min: 1.0,
            histogram_bins_per_channel: 64,
            kmeans_seed: 42,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-6,
        }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<(), KeyframeError> {
        let bad = |m: String| Err(KeyframeError::InvalidParams(m));
        if self.max_keyframes < 1 {
            return bad("max_keyframes must be >= 1".into());
        }
        if !(0.0 <= self.brightness_min
            && self.brightness_min < self.brightness_max
            && self.brightness_max <= 255.0)
        {
            return bad(format!(
                "brightness bounds must satisfy 0 <= min < max <= 255, got [{}, {}]",
                self.brightness_min, self.brightness_max
            ));
        }
        if !(0.0..=8.0).contains(&self.entropy_min) {
            return bad(format!("entropy_min {} outside [0, 8]", self.entropy_min));
        }
        if self.luv_diff_threshold.is_nan() || self.luv_diff_threshold < 0.0 {
            return bad("luv_diff_threshold must be non-negative".into());
        }
        if self.histogram_bins_per_channel < 1 || self.kmeans_max_iters < 1 {
            return bad("histogram bins and k-means iterations must be >= 1".into());
        }
        Ok(())
    }

    fn passes_gates(&self, brightness: f64, entropy: f64) -> bool {
        (self.brightness_min..=self.brightness_max).contains(&brightness)
            && entropy >= self.entropy_min
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub frame: Frame,
    pub features: FrameFeatures,
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub frame: Frame,
    pub features: FrameFeatures,
    pub cluster_id: usize,
    pub source_video: String,
}

/// Keeps frames that differ enough from the last accepted candidate and pass
/// the brightness and entropy gates.
pub fn candidate_filter<S: FrameStream + ?Sized>(
    frames: &mut S,
    params: &SelectionParams,
) -> Result<Vec<Candidate>, KeyframeError> {
    params.validate()?;
    let mut out = Vec::new();
    let mut last: Option<LuvPlanes> = None;
    while let Some(frame) = frames.next_frame()? {
        let brightness = brightness_score(&frame);
        let entropy = entropy_score(&frame);
        if !params.passes_gates(brightness, entropy) {
            continue;
        }
        let luv = rgb_to_luv(&frame);
        if let Some(prev) = &last {
            if luv_frame_diff(&luv, prev)? <= params.luv_diff_threshold {
                continue;
            }
        }
        let features = FrameFeatures::compute(&frame, params.histogram_bins_per_channel)?;
        last = Some(luv);
        out.push(Candidate { frame, features });
    }
    Ok(out)
}

/// Index into `members` of the sharpest frame; ties go to the lower frame index.
fn sharpest(candidates: &[Candidate], members: &[usize]) -> usize {
    *members
        .iter()
        .max_by(|&&a, &&b| {
            let (fa, fb) = (&candidates[a], &candidates[b]);
            fa.features
                .laplacian_variance
                .total_cmp(&fb.features.laplacian_variance)
                .then(fb.frame.index.cmp(&fa.frame.index))
        })
        .expect("clusters are never empty")
}

/// Reduces candidates to at most `max_keyframes`, one per histogram cluster.
///
/// Output is in cluster order, not chronological order.
pub fn choose_keyframes(
    candidates: Vec<Candidate>,
    params: &SelectionParams,
    source_video: &str,
) -> Result<Vec<Keyframe>, KeyframeError> {
    params.validate()?;
    if candidates.len() <= params.max_keyframes {
        return Ok(candidates
            .into_iter()
            .enumerate()
            .map(|(rank, c)| Keyframe {
                frame: c.frame,
                features: c.features,
                cluster_id: rank,
                source_video: source_video.to_string(),
            })
            .collect());
    }

    let histograms: Vec<Vec<f64>> = candidates
        .iter()
        .map(|c| c.features.histogram.clone())
        .collect();
    let clustering = kmeans_cluster(
        &histograms,
        KMeansParams {
            k: params.max_keyframes,
            seed: params.kmeans_seed,
            max_iters: params.kmeans_max_iters,
            tol: params.kmeans_tol,
        },
    )?;
    let mut members = vec![Vec::new(); params.max_keyframes];
    for (i, &c) in clustering.assignment.iter().enumerate() {
        members[c].push(i);
    }
    let winners: Vec<usize> = members.iter().map(|m| sharpest(&candidates, m)).collect();

    let mut slots: Vec<Option<Candidate>> = candidates.into_iter().map(Some).collect();
    Ok(winners
        .into_iter()
        .enumerate()
        .map(|(cluster_id, i)| {
            let c = slots[i].take().expect("one winner per cluster");
            Keyframe {
                frame: c.frame,
                features: c.features,
                cluster_id,
                source_video: source_video.to_string(),
            }
        })
        .collect())
}

pub fn select_keyframes<S: FrameStream + ?Sized>(
    frames: &mut S,
    params: &SelectionParams,
    source_video: &str,
) -> Result<Vec<Keyframe>, KeyframeError> {
    let candidates = candidate_filter(frames, params)?;
    choose_keyframes(candidates, params, source_video)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeEntry {
    pub cluster_id: usize,
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub file: String,
    pub width: u32,
    pub height: u32,
    pub features: FrameFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeManifest {
    pub video_id: String,
    pub keyframes: Vec<KeyframeEntry>,
}

pub const KEYFRAME_MANIFEST: &str = "keyframes.json";

/// Writes `<dir>/kf_<cluster_id>.png` and a sidecar `keyframes.json`.
pub fn write_keyframes(
    dir: &Path,
    video_id: &str,
    keyframes: &[Keyframe],
) -> Result<(), KeyframeError> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(keyframes.len());
    for kf in keyframes {
        let file = format!("kf_{}.png", kf.cluster_id);
        kf.frame
            .clone()
            .into_rgb_image()
            .save_with_format(dir.join(&file), image::ImageFormat::Png)
            .map_err(|e| KeyframeError::Image(e.to_string()))?;
        entries.push(KeyframeEntry {
            cluster_id: kf.cluster_id,
            frame_index: kf.frame.index,
            timestamp_ms: kf.frame.timestamp_ms,
            file,
            width: kf.frame.width(),
            height: kf.frame.height(),
            features: kf.features.clone(),
        });
    }
    let manifest = KeyframeManifest {
        video_id: video_id.to_string(),
        keyframes: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join(KEYFRAME_MANIFEST), json + "\n")?;
    Ok(())
}
