use std::collections::BTreeMap;

use super::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedVqa {
    pub instruction: String,
    pub captions: BTreeMap<String, String>,
    pub question: String,
    pub choices: Vec<String>,
    pub answers: BTreeMap<String, String>,
}

impl ParsedVqa {
    /// True when every field rendered from `ctx` came back unchanged.
    pub fn matches(&self, ctx: &VqaContext) -> bool {
        self.captions == ctx.captions
            && self.question == ctx.question
            && self.choices == ctx.choices
            && self.answers == ctx.answers
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFrame {
    pub captions: BTreeMap<String, String>,
    pub answers: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedHar {
    pub instruction: String,
    pub frames: Vec<ParsedFrame>,
    pub question: String,
    pub class_names: Vec<String>,
}

impl ParsedHar {
    pub fn matches(&self, ctx: &HarContext) -> bool {
        self.question == HAR_VIDEO_QUESTION
            && self.class_names == ctx.class_names
            && self.frames.len() == ctx.blocks.len()
            && self
                .frames
                .iter()
                .zip(&ctx.blocks)
                .all(|(f, b)| f.captions == b.captions && f.answers == b.answers)
    }
}

struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.split('\n').collect(),
            pos: 0,
        }
    }

    fn err(&self, message: impl Into<String>) -> TemplateError {
        TemplateError::Parse {
            line: self.pos + 1,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    fn expect_prefix(&mut self, prefix: &str) -> Result<&'a str, TemplateError> {
        let line = self
            .peek()
            .ok_or_else(|| self.err(format!("expected `{prefix}`, found end")))?;
        let rest = line
            .strip_prefix(prefix)
            .ok_or_else(|| self.err(format!("expected `{prefix}`, found {line:?}")))?;
        self.pos += 1;
        Ok(rest)
    }

    /// Consumes consecutive `<tag> [<name>]: <text>` lines.
    fn tagged(&mut self, tag: &str) -> Result<BTreeMap<String, String>, TemplateError> {
        let open = format!("{tag} [");
        let mut out = BTreeMap::new();
        while let Some(rest) = self.peek().and_then(|l| l.strip_prefix(open.as_str())) {
            let (name, text) = rest
                .split_once("]: ")
                .ok_or_else(|| self.err(format!("malformed `{tag}` line")))?;
            if out.insert(name.to_string(), text.to_string()).is_some() {
                return Err(self.err(format!("endpoint {name:?} repeated")));
            }
            self.pos += 1;
        }
        Ok(out)
    }

    fn choices(&mut self) -> Result<Vec<String>, TemplateError> {
        let rest = self.expect_prefix("Choices: ")?;
        let mut rest = rest
            .strip_prefix("(a) ")
            .ok_or_else(|| self.err("choices must start with `(a) `"))?;
        let mut out = Vec::new();
        for i in 1..MAX_CHOICES {
            let marker = format!(" ({}) ", choice_label(i));
            match rest.find(&marker) {
                Some(at) => {
                    out.push(rest[..at].to_string());
                    rest = &rest[at + marker.len()..];
                }
                None => break,
            }
        }
        out.push(rest.to_string());
        Ok(out)
    }

    fn finish(&mut self) -> Result<(), TemplateError> {
        if self.peek() != Some("Answer:") {
            return Err(self.err("expected terminal `Answer:`"));
        }
        self.pos += 1;
        if self.pos != self.lines.len() {
            return Err(self.err("text after `Answer:`"));
        }
        Ok(())
    }
}

pub fn parse_vqa_prompt(text: &str) -> Result<ParsedVqa, TemplateError> {
    let mut l = Lines::new(text);
    let instruction = l.expect_prefix("INSTRUCTION: ")?.to_string();
    let captions = l.tagged("Context")?;
    let question = l.expect_prefix("Question: ")?.to_string();
    let choices = l.choices()?;
    let answers = l.tagged("Plausible answer")?;
    l.finish()?;
    Ok(ParsedVqa {
        instruction,
        captions,
        question,
        choices,
        answers,
    })
}

pub fn parse_har_prompt(text: &str) -> Result<ParsedHar, TemplateError> {
    let mut l = Lines::new(text);
    let instruction = l.expect_prefix("INSTRUCTION: ")?.to_string();
    let mut frames = Vec::new();
    while let Some(line) = l.peek().filter(|s| s.starts_with("Frame ")) {
        let expected = format!("Frame {}:", frames.len());
        if line != expected {
            return Err(l.err(format!("expected `{expected}`, found {line:?}")));
        }
        l.pos += 1;
        let captions = l.tagged("Context")?;
        let answers = l.tagged("Plausible answer")?;
        frames.push(ParsedFrame { captions, answers });
    }
    let question = l.expect_prefix("Question: ")?.to_string();
    let class_names = l.choices()?;
    l.finish()?;
    Ok(ParsedHar {
        instruction,
        frames,
        question,
        class_names,
    })
}
