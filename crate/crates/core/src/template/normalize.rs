use std::collections::BTreeSet;

/// Case-folds, drops a leading `(x)` / `x)` choice marker, turns punctuation
/// into spaces and collapses whitespace.
pub fn normalize_text(raw: &str) -> String {
    let lowered = raw.trim().to_lowercase();
    let stripped = strip_marker(&lowered);
    let cleaned: String = stripped
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_marker(s: &str) -> &str {
    let b = s.as_bytes();
    let rest = if b.len() >= 3 && b[0] == b'(' && b[1].is_ascii_lowercase() && b[2] == b')' {
        &s[3..]
    } else if b.len() >= 2 && b[0].is_ascii_lowercase() && b[1] == b')' {
        &s[2..]
    } else {
        return s;
    };
    rest.trim_start()
}

fn contains_phrase(haystack: &str, needle: &str) -> bool {
    !needle.is_empty() && format!(" {haystack} ").contains(&format!(" {needle} "))
}

/// Maps free-form model output onto one of `labels`.
///
/// Tries, in order: exact match after normalisation; a label that is the
/// only one appearing as a whole phrase in the answer (or containing the
/// whole answer); the label sharing the most words, ties to the lower index.
/// Returns `None` when no label shares a single word.
pub fn normalize_answer<S: AsRef<str>>(raw: &str, labels: &[S]) -> Option<usize> {
    let answer = normalize_text(raw);
    let norm: Vec<String> = labels.iter().map(|l| normalize_text(l.as_ref())).collect();

    if let Some(i) = norm.iter().position(|l| !l.is_empty() && *l == answer) {
        return Some(i);
    }

    let hits: Vec<usize> = norm
        .iter()
        .enumerate()
        .filter(|(_, l)| contains_phrase(&answer, l) || contains_phrase(l, &answer))
        .map(|(i, _)| i)
        .collect();
    if hits.len() == 1 {
        return Some(hits[0]);
    }

    let words: BTreeSet<&str> = answer.split_whitespace().collect();
    let mut best: Option<(usize, usize)> = None;
    for (i, l) in norm.iter().enumerate() {
        let overlap = l
            .split_whitespace()
            .collect::<BTreeSet<_>>()
            .intersection(&words)
            .count();
        if overlap > 0 && best.is_none_or(|(_, b)| overlap > b) {
            best = Some((i, overlap));
        }
    }
    best.map(|(i, _)| i)
}
