use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::*;

fn invalid(msg: impl Into<String>) -> TemplateError {
    TemplateError::InvalidContext(msg.into())
}

fn check_text(what: &str, text: &str) -> Result<(), TemplateError> {
    if text.trim().is_empty() {
        return Err(invalid(format!("{what} is empty")));
    }
    if text.contains(['\n', '\r']) {
        return Err(invalid(format!("{what} contains a line break")));
    }
    Ok(())
}

fn check_endpoint_map(what: &str, map: &BTreeMap<String, String>) -> Result<(), TemplateError> {
    if map.is_empty() {
        return Err(invalid(format!("at least one {what} is required")));
    }
    for (name, text) in map {
        if name.is_empty() || name.contains([']', '\n', '\r']) {
            return Err(invalid(format!("bad endpoint name {name:?}")));
        }
        check_text(&format!("{what} from {name}"), text)?;
    }
    Ok(())
}

fn has_choice_marker(text: &str) -> bool {
    text.as_bytes()
        .windows(3)
        .any(|w| w[0] == b'(' && w[1].is_ascii_lowercase() && w[2] == b')')
}

fn check_choices(what: &str, choices: &[String]) -> Result<(), TemplateError> {
    if choices.is_empty() {
        return Err(invalid(format!("{what} list is empty")));
    }
    if choices.len() > MAX_CHOICES {
        return Err(invalid(format!(
            "{} {what}s exceed the {MAX_CHOICES} available labels",
            choices.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for c in choices {
        check_text(what, c)?;
        if has_choice_marker(c) {
            return Err(invalid(format!("{what} {c:?} contains a choice marker")));
        }
        if !seen.insert(c.as_str()) {
            return Err(invalid(format!("duplicate {what} {c:?}")));
        }
    }
    Ok(())
}

fn push_line(out: &mut String, line: std::fmt::Arguments<'_>) {
    out.write_fmt(line).expect("writing to a String");
    out.push('\n');
}

fn push_choices(out: &mut String, choices: &[String]) {
    out.push_str("Choices:");
    for (i, c) in choices.iter().enumerate() {
        let _ = write!(out, " ({}) {c}", choice_label(i));
    }
    out.push('\n');
}

fn push_contexts(out: &mut String, captions: &BTreeMap<String, String>) {
    for (name, text) in captions {
        push_line(out, format_args!("Context [{name}]: {text}"));
    }
}

fn push_answers(out: &mut String, answers: &BTreeMap<String, String>) {
    for (name, text) in answers {
        push_line(out, format_args!("Plausible answer [{name}]: {text}"));
    }
}

fn endpoint_names<'a>(maps: impl IntoIterator<Item = &'a BTreeMap<String, String>>) -> Vec<String> {
    let names: BTreeSet<&String> = maps.into_iter().flat_map(|m| m.keys()).collect();
    names.into_iter().cloned().collect()
}

pub fn build_vqa_prompt(
    ctx: &VqaContext,
    config: &TemplateConfig,
) -> Result<PromptRecord, TemplateError> {
    check_text("instruction", &config.vqa_instruction)?;
    check_endpoint_map("caption", &ctx.captions)?;
    check_endpoint_map("plausible answer", &ctx.answers)?;
    check_text("question", &ctx.question)?;
    check_choices("choice", &ctx.choices)?;

    let mut out = String::new();
    push_line(
        &mut out,
        format_args!("INSTRUCTION: {}", config.vqa_instruction),
    );
    push_contexts(&mut out, &ctx.captions);
    push_line(&mut out, format_args!("Question: {}", ctx.question));
    push_choices(&mut out, &ctx.choices);
    push_answers(&mut out, &ctx.answers);
    out.push_str("Answer:");

    Ok(PromptRecord {
        prompt_text: out,
        provenance: Provenance {
            source_id: ctx.item_id.clone(),
            endpoints: endpoint_names([&ctx.captions, &ctx.answers]),
            template_version: TEMPLATE_VERSION.into(),
            cluster_ids: Vec::new(),
        },
        target: None,
    })
}

pub fn build_har_prompt(
    ctx: &HarContext,
    config: &TemplateConfig,
) -> Result<PromptRecord, TemplateError> {
    check_text("instruction", &config.har_instruction)?;
    if ctx.blocks.is_empty() {
        return Err(invalid("at least one keyframe block is required"));
    }
    let mut clusters = BTreeSet::new();
    for b in &ctx.blocks {
        check_endpoint_map("caption", &b.captions)?;
        check_endpoint_map("plausible answer", &b.answers)?;
        if !clusters.insert(b.cluster_id) {
            return Err(invalid(format!("cluster {} appears twice", b.cluster_id)));
        }
    }
    check_choices("class name", &ctx.class_names)?;

    let mut out = String::new();
    push_line(
        &mut out,
        format_args!("INSTRUCTION: {}", config.har_instruction),
    );
    for (k, b) in ctx.blocks.iter().enumerate() {
        push_line(&mut out, format_args!("Frame {k}:"));
        push_contexts(&mut out, &b.captions);
        push_answers(&mut out, &b.answers);
    }
    push_line(&mut out, format_args!("Question: {HAR_VIDEO_QUESTION}"));
    push_choices(&mut out, &ctx.class_names);
    out.push_str("Answer:");

    Ok(PromptRecord {
        prompt_text: out,
        provenance: Provenance {
            source_id: ctx.video_id.clone(),
            endpoints: endpoint_names(ctx.blocks.iter().flat_map(|b| [&b.captions, &b.answers])),
            template_version: TEMPLATE_VERSION.into(),
            cluster_ids: ctx.blocks.iter().map(|b| b.cluster_id).collect(),
        },
        target: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn vqa_ctx() -> VqaContext {
        VqaContext {
            item_id: "q1".into(),
            captions: map(&[
                ("vlm-b", "a dog on a couch"),
                ("vlm-a", "a brown dog lying down"),
            ]),
            question: "What is the dog doing?".into(),
            choices: vec![
                "sleeping".into(),
                "eating".into(),
                "running".into(),
                "barking".into(),
            ],
            answers: map(&[("vlm-a", "sleeping"), ("vlm-b", "resting")]),
        }
    }

    #[test]
    fn vqa_structure() {
        let r = build_vqa_prompt(&vqa_ctx(), &TemplateConfig::default()).unwrap();
        let lines: Vec<&str> = r.prompt_text.lines().collect();
        assert_eq!(
            lines.iter().filter(|l| l.starts_with("Context [")).count(),
            2
        );
        assert_eq!(
            lines
                .iter()
                .filter(|l| l.starts_with("Plausible answer ["))
                .count(),
            2
        );
        let choices: Vec<&&str> = lines.iter().filter(|l| l.starts_with("Choices:")).collect();
        assert_eq!(choices.len(), 1);
        assert_eq!(
            *choices[0],
            "Choices: (a) sleeping (b) eating (c) running (d) barking"
        );
        // endpoint order is by name, not insertion
        assert_eq!(lines[1], "Context [vlm-a]: a brown dog lying down");
        assert_eq!(lines.last(), Some(&"Answer:"));
        assert_eq!(r.provenance.endpoints, vec!["vlm-a", "vlm-b"]);
        assert_eq!(r.provenance.template_version, "cola-v1");
    }

    #[test]
    fn har_structure() {
        let block = |id, cap: &str, ans: &str| KeyframeBlock {
            cluster_id: id,
            captions: map(&[("vlm-a", cap), ("vlm-b", cap)]),
            answers: map(&[("vlm-a", ans), ("vlm-b", ans)]),
        };
        let ctx = HarContext {
            video_id: "v".into(),
            blocks: vec![block(3, "a man on a street", "walking")],
            class_names: vec!["walking".into(), "running".into()],
        };
        let r = build_har_prompt(&ctx, &TemplateConfig::default()).unwrap();
        let lines: Vec<&str> = r.prompt_text.lines().collect();
        assert_eq!(lines[1], "Frame 0:");
        assert!(lines[2..6]
            .iter()
            .all(|l| l.starts_with("Context [") || l.starts_with("Plausible answer [")));
        assert_eq!(lines[6], "Question: What action is happening in the video?");
        assert_eq!(r.provenance.cluster_ids, vec![3]);

        let ctx = HarContext {
            blocks: (0..10).map(|i| block(9 - i, "scene", "standing")).collect(),
            ..ctx
        };
        let r = build_har_prompt(&ctx, &TemplateConfig::default()).unwrap();
        let frames: Vec<&str> = r
            .prompt_text
            .lines()
            .filter(|l| l.starts_with("Frame "))
            .collect();
        assert_eq!(
            frames,
            (0..10).map(|k| format!("Frame {k}:")).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_invalid_contexts() {
        let cfg = TemplateConfig::default();
        let mut c = vqa_ctx();
        c.captions.clear();
        assert!(build_vqa_prompt(&c, &cfg).is_err());
        let mut c = vqa_ctx();
        c.choices[1] = "sleeping".into();
        assert!(build_vqa_prompt(&c, &cfg).is_err());
        let mut c = vqa_ctx();
        c.question = "two\nlines".into();
        assert!(build_vqa_prompt(&c, &cfg).is_err());
        let mut c = vqa_ctx();
        c.choices[0] = "see (b) below".into();
        assert!(build_vqa_prompt(&c, &cfg).is_err());
        let mut c = vqa_ctx();
        c.answers.insert("bad]name".into(), "x".into());
        assert!(build_vqa_prompt(&c, &cfg).is_err());
    }
}
