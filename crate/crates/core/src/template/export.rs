use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PromptRecord, Provenance, TemplateError};

#[derive(Serialize, Deserialize)]
struct TrainingLine {
    prompt: String,
    target: String,
    provenance: Provenance,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> TemplateError {
    TemplateError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes one `{"prompt", "target", "provenance"}` JSON object per line.
/// Every record must carry a target; nothing is written otherwise.
pub fn export_training_records(records: &[PromptRecord], path: &Path) -> Result<(), TemplateError> {
    let mut lines = Vec::with_capacity(records.len());
    for (index, r) in records.iter().enumerate() {
        let target = r
            .target
            .clone()
            .ok_or(TemplateError::MissingTarget { index })?;
        lines.push(TrainingLine {
            prompt: r.prompt_text.clone(),
            target,
            provenance: r.provenance.clone(),
        });
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for line in &lines {
        serde_json::to_writer(&mut out, line).map_err(|e| io_err(path, e))?;
        out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_training_records(path: &Path) -> Result<Vec<PromptRecord>, TemplateError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.is_empty() {
            continue;
        }
        let t: TrainingLine = serde_json::from_str(&line).map_err(|e| io_err(path, e))?;
        out.push(PromptRecord {
            prompt_text: t.prompt,
            provenance: t.provenance,
            target: Some(t.target),
        });
    }
    Ok(out)
}
