//! Writes the bundled demo dataset: five multiple-choice images, three
//! framestream videos, run configs and gold-echo mock fixtures.
//!
//! ```text
//! cargo run -p cola-core --example make_demo_fixtures -- fixtures/demo
//! ```

use std::path::Path;

use cola_core::frame::{write_framestream, Frame, MemoryStream};
use cola_core::gateway::{EncodedImage, MockFixtures, RequestKind};
use cola_core::keyframe::{select_keyframes, SelectionParams};
use cola_core::template::HAR_FRAME_QUESTION;

pub const CLASS_NAMES: [&str; 3] = ["walking", "running", "waving"];

pub struct VqaSpec {
    pub id: &'static str,
    pub question: &'static str,
    pub choices: [&'static str; 4],
    pub gold: usize,
    pub caption: &'static str,
}

pub const VQA_ITEMS: [VqaSpec; 5] = [
    VqaSpec {
        id: "q1",
        question: "What color is the large square?",
        choices: ["red", "green", "blue", "yellow"],
        gold: 0,
        caption: "a large red square on a gray background",
    },
    VqaSpec {
        id: "q2",
        question: "How many bright bars are there?",
        choices: ["one", "two", "three", "four"],
        gold: 2,
        caption: "three bright vertical bars on a dark background",
    },
    VqaSpec {
        id: "q3",
        question: "Which corner holds the white spot?",
        choices: ["top left", "top right", "bottom left", "bottom right"],
        gold: 3,
        caption: "a small white spot in the bottom right corner",
    },
    VqaSpec {
        id: "q4",
        question: "What is the background color?",
        choices: ["black", "blue", "orange", "purple"],
        gold: 1,
        caption: "a plain blue background with a faint grid",
    },
    VqaSpec {
        id: "q5",
        question: "Which way do the stripes run?",
        choices: ["up and down", "left to right", "diagonal", "no stripes"],
        gold: 2,
        caption: "diagonal green and black stripes",
    },
];

/// (video id, label, number of scenes)
pub const HAR_VIDEOS: [(&str, &str, usize); 3] = [
    ("v_walk", "walking", 3),
    ("v_run", "running", 12),
    ("v_wave", "waving", 5),
];

const FRAMES_PER_SCENE: usize = 4;

fn vqa_image(i: usize) -> Frame {
    let (w, h) = (96, 64);
    Frame::from_fn(w, h, |x, y| match i {
        0 if (24..72).contains(&x) && (8..56).contains(&y) => [200, 30, 30],
        0 => [128, 128, 128],
        1 if [16, 44, 72].iter().any(|&b| (b..b + 8).contains(&x)) => [240, 240, 220],
        1 => [20, 20, 30],
        2 if x >= 84 && y >= 52 => [255, 255, 255],
        2 => [60, 70, 80],
        3 if x % 12 == 0 || y % 12 == 0 => [40, 60, 200],
        3 => [30, 50, 180],
        _ if ((x + y) / 8) % 2 == 0 => [30, 170, 60],
        _ => [10, 10, 10],
    })
    .expect("valid size")
}

/// A textured scene; distinct `scene` values differ strongly in colour.
fn scene_frame(video: usize, scene: usize) -> Frame {
    let hue = (scene * 7 + video * 3) % 12;
    let base: [u8; 3] = match hue % 6 {
        0 => [200, 40, 40],
        1 => [40, 180, 60],
        2 => [40, 60, 200],
        3 => [210, 190, 40],
        4 => [170, 50, 170],
        _ => [40, 180, 190],
    };
    let dim = if hue >= 6 { 2 } else { 1 };
    Frame::from_fn(64, 48, |x, y| {
        let t = (((x / 4 + y / 4 + scene as u32) % 4) * 10) as u8;
        base.map(|c| (c / dim).saturating_add(t))
    })
    .expect("valid size")
}

fn video_frames(video: usize, scenes: usize) -> Vec<Frame> {
    (0..scenes)
        .flat_map(|s| std::iter::repeat_n(scene_frame(video, s), FRAMES_PER_SCENE))
        .enumerate()
        .map(|(i, f)| f.with_position(i as u64, i as u64 * 40))
        .collect()
}

const CONFIG_ENDPOINTS: &str = r#"
[[endpoints]]
name = "vlm-a"
base_url = "http://127.0.0.1:8765"
capabilities = ["caption", "vqa"]
backoff_base_ms = 20
backoff_max_ms = 200

[[endpoints]]
name = "vlm-b"
base_url = "http://127.0.0.1:8765"
capabilities = ["caption", "vqa"]
backoff_base_ms = 20
backoff_max_ms = 200

[[endpoints]]
name = "llm"
base_url = "http://127.0.0.1:8765"
capabilities = ["generate"]
backoff_base_ms = 20
backoff_max_ms = 200

[[endpoints]]
name = "embedder"
base_url = "http://127.0.0.1:8765"
capabilities = ["embed"]
backoff_base_ms = 20
backoff_max_ms = 200
"#;

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialisable") + "\n"
}

pub fn generate(root: &Path) -> std::io::Result<()> {
    let mut fx = MockFixtures::default();

    let vqa_dir = root.join("vqa");
    std::fs::create_dir_all(vqa_dir.join("images"))?;
    let mut items = Vec::new();
    for (i, spec) in VQA_ITEMS.iter().enumerate() {
        let frame = vqa_image(i);
        let file = format!("images/{}.png", spec.id);
        frame
            .clone()
            .into_rgb_image()
            .save_with_format(vqa_dir.join(&file), image::ImageFormat::Png)
            .map_err(std::io::Error::other)?;
        let img = EncodedImage::from_frame(&frame).map_err(std::io::Error::other)?;
        let choices: Vec<String> = spec.choices.iter().map(|c| c.to_string()).collect();
        let gold = spec.choices[spec.gold];
        fx.add_caption(&img, spec.caption);
        fx.add_vqa(&img, spec.question, Some(&choices), gold);
        fx.add_rule(
            RequestKind::Generate,
            format!("Question: {}\n", spec.question),
            gold,
        );
        items.push(serde_json::json!({
            "item_id": spec.id,
            "image_path": file,
            "question": spec.question,
            "choices": choices,
            "correct_choice_idx": spec.gold,
        }));
    }
    let manifest = serde_json::json!({ "task": "vqa-mcq", "split": "demo", "items": items });
    std::fs::write(vqa_dir.join("manifest.json"), pretty(&manifest))?;

    let har_dir = root.join("har");
    std::fs::create_dir_all(har_dir.join("videos"))?;
    let params = SelectionParams::default();
    let mut videos = Vec::new();
    for (v, (id, label, scenes)) in HAR_VIDEOS.iter().enumerate() {
        let frames = video_frames(v, *scenes);
        let file = format!("videos/{id}.fs");
        let mut out = Vec::new();
        write_framestream(&mut out, &frames, 25_000, true).map_err(std::io::Error::other)?;
        std::fs::write(har_dir.join(&file), out)?;
        let kfs = select_keyframes(&mut MemoryStream::new(frames), &params, id)
            .map_err(std::io::Error::other)?;
        assert_eq!(
            kfs.len(),
            (*scenes).min(params.max_keyframes),
            "{id}: scenes must all be candidates"
        );
        for kf in &kfs {
            let img = EncodedImage::from_frame(&kf.frame).map_err(std::io::Error::other)?;
            fx.add_caption(&img, format!("a person {label} in a colourful room"));
            fx.add_vqa(&img, HAR_FRAME_QUESTION, None, *label);
        }
        fx.add_rule(
            RequestKind::Generate,
            format!("Plausible answer [vlm-a]: {label}\n"),
            *label,
        );
        videos.push(serde_json::json!({ "video_id": id, "source": file, "action_label": label }));
    }
    let manifest = serde_json::json!({
        "task": "har",
        "split": "demo",
        "class_names": CLASS_NAMES,
        "videos": videos,
    });
    std::fs::write(har_dir.join("manifest.json"), pretty(&manifest))?;

    std::fs::write(root.join("mock.json"), pretty(&fx))?;
    std::fs::write(
        root.join("har.toml"),
        format!(
            "task = \"har\"\ndataset_manifest = \"har/manifest.json\"\noutput_dir = \"out/har\"\ncache_dir = \"cache\"\nseed = 42\n{CONFIG_ENDPOINTS}"
        ),
    )?;
    std::fs::write(
        root.join("vqa.toml"),
        format!(
            "task = \"vqa-mcq\"\nmode = \"cola\"\ndataset_manifest = \"vqa/manifest.json\"\noutput_dir = \"out/vqa\"\ncache_dir = \"cache\"\n{CONFIG_ENDPOINTS}"
        ),
    )?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> std::io::Result<()> {
    let root = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "fixtures/demo".into());
    generate(Path::new(&root))
}
