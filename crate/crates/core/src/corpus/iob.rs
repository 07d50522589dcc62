//! IOB validation, span extraction and scheme conversion.

use serde::Serialize;

use super::schema::{Scheme, Tag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub reason: String,
}

/// An entity span over token indices, `first..=last`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub entity_type: String,
    pub first: usize,
    pub last: usize,
}

/// Checks a tag sequence against the rules of `scheme`.
///
/// Under IOB2 an `I-X` must follow `B-X` or `I-X`. Under IOB1 an `I-X` may
/// open a chunk, and `B-X` is only legal directly after a chunk of type X.
pub fn validate_iob<S: AsRef<str>>(tags: &[S], scheme: Scheme) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut prev: Option<Tag> = None;
    for (index, raw) in tags.iter().enumerate() {
        let raw = raw.as_ref();
        let Some(tag) = Tag::parse(raw) else {
            violations.push(Violation {
                index,
                reason: format!("malformed tag `{raw}`"),
            });
            prev = None;
            continue;
        };
        let prev_type = prev.and_then(|p| p.entity_type());
        match (scheme, tag) {
            (Scheme::Iob2, Tag::Inside(t)) if prev_type != Some(t) => {
                violations.push(Violation {
                    index,
                    reason: match prev_type {
                        None => format!("`{raw}` does not continue a chunk"),
                        Some(p) => format!("`{raw}` follows a chunk of type `{p}`"),
                    },
                });
            }
            (Scheme::Iob1, Tag::Begin(t)) if prev_type != Some(t) => {
                violations.push(Violation {
                    index,
                    reason: format!("`{raw}` does not directly follow a `{t}` chunk"),
                });
            }
            _ => {}
        }
        prev = Some(tag);
    }
    violations
}

fn ensure_valid<S: AsRef<str>>(tags: &[S], scheme: Scheme) -> Result<()> {
    let violations = validate_iob(tags, scheme);
    if let Some(v) = violations.first() {
        return Err(Error::Validation(format!(
            "invalid {scheme} sequence at index {}: {}",
            v.index, v.reason
        )));
    }
    Ok(())
}

/// Extracts entity spans from a sequence that is valid under `scheme`.
pub fn spans<S: AsRef<str>>(tags: &[S], scheme: Scheme) -> Result<Vec<Span>> {
    ensure_valid(tags, scheme)?;
    let mut out: Vec<Span> = Vec::new();
    let mut open: Option<Span> = None;
    for (i, raw) in tags.iter().enumerate() {
        let tag = Tag::parse(raw.as_ref()).expect("validated");
        let starts_new = match tag {
            Tag::Outside => {
                out.extend(open.take());
                continue;
            }
            Tag::Begin(_) => true,
            Tag::Inside(t) => match scheme {
                Scheme::Iob2 => false,
                Scheme::Iob1 => open.as_ref().is_none_or(|s| s.entity_type != t),
            },
        };
        if starts_new {
            out.extend(open.take());
            open = Some(Span {
                entity_type: tag.entity_type().unwrap().to_string(),
                first: i,
                last: i,
            });
        } else if let Some(s) = open.as_mut() {
            s.last = i;
        }
    }
    out.extend(open);
    Ok(out)
}

/// Encodes non-overlapping spans as tags under `scheme`.
///
/// Spans must be sorted by position and within `len`.
pub fn encode_spans(spans: &[Span], len: usize, scheme: Scheme) -> Vec<String> {
    let mut tags = vec!["O".to_string(); len];
    let mut prev_end: Option<(usize, &str)> = None;
    for s in spans {
        let adjacent_same = matches!(prev_end, Some((end, t)) if end + 1 == s.first && t == s.entity_type);
        for (k, tag) in tags.iter_mut().enumerate().take(s.last + 1).skip(s.first) {
            let begin = k == s.first && (scheme == Scheme::Iob2 || adjacent_same);
            *tag = format!("{}-{}", if begin { 'B' } else { 'I' }, s.entity_type);
        }
        prev_end = Some((s.last, s.entity_type.as_str()));
    }
    tags
}

/// Re-encodes a tag sequence from one scheme to another, preserving the
/// chunk set exactly.
pub fn convert_scheme<S: AsRef<str>>(tags: &[S], from: Scheme, to: Scheme) -> Result<Vec<String>> {
    let spans = spans(tags, from)?;
    Ok(encode_spans(&spans, tags.len(), to))
}
