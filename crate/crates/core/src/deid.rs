//! Policy-driven de-identification of protected entity spans.
//!
//! Protected spans are either masked with a `<TYPE>` placeholder or replaced
//! by a fake value drawn deterministically from a per-type dictionary. Every
//! replacement is logged so the original text can be restored exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chunking::{Chunk, ChunkRecord};
use crate::error::{Error, Result};

/// Protected types applied when no policy file is given.
pub const DEFAULT_PROTECTED_TYPES: &[&str] = &[
    "Age",
    "Contact",
    "Date",
    "Patient_ID",
    "Location",
    "Name",
    "Profession",
    "City",
    "Country",
    "Doctor",
    "Hospital",
    "Medical_Record",
    "Organization",
    "Patient",
    "Phone",
    "Street",
    "Username",
    "Zip",
    "Account",
    "License",
];

/// Case- and separator-insensitive key, so `Patient_ID`, `patient id` and
/// `PatientID` name the same type.
pub fn type_key(entity_type: &str) -> String {
    entity_type
        .chars()
        .filter(|c| !matches!(c, ' ' | '_' | '-'))
        .flat_map(char::to_lowercase)
        .collect()
}

/// `<TYPE>`: upper case with spaces and underscores removed.
pub fn placeholder(entity_type: &str) -> String {
    let name: String = entity_type
        .chars()
        .filter(|c| !matches!(c, ' ' | '_'))
        .flat_map(char::to_uppercase)
        .collect();
    format!("<{name}>")
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeidMode {
    Mask,
    Substitute(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeidPolicy {
    modes: BTreeMap<String, DeidMode>,
    pub seed: u64,
}

impl Default for DeidPolicy {
    /// Masks every default protected type.
    fn default() -> Self {
        let mut p = DeidPolicy::empty(42);
        for t in DEFAULT_PROTECTED_TYPES {
            p.modes.insert(type_key(t), DeidMode::Mask);
        }
        p
    }
}

impl DeidPolicy {
    /// A policy that protects nothing.
    pub fn empty(seed: u64) -> Self {
        DeidPolicy {
            modes: BTreeMap::new(),
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn set_mode(&mut self, entity_type: &str, mode: DeidMode) -> Result<()> {
        if let DeidMode::Substitute(dict) = &mode {
            if dict.is_empty() {
                return Err(Error::Validation(format!(
                    "substitution dictionary for `{entity_type}` is empty"
                )));
            }
        }
        self.modes.insert(type_key(entity_type), mode);
        Ok(())
    }

    pub fn mode(&self, entity_type: &str) -> Option<&DeidMode> {
        self.modes.get(&type_key(entity_type))
    }

    pub fn is_protected(&self, entity_type: &str) -> bool {
        self.mode(entity_type).is_some()
    }

    pub fn num_protected(&self) -> usize {
        self.modes.len()
    }

    /// Parses `Type = mask` and `Type = substitute:<path>` lines. Dictionary
    /// paths are resolved against `base_dir`; dictionaries hold one value
    /// per line. `#` starts a comment.
    pub fn parse(text: &str, base_dir: &Path, seed: u64) -> Result<Self> {
        let mut policy = DeidPolicy::empty(seed);
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (ty, mode) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(k + 1, "expected `type = mask` or `type = substitute:<path>`"))?;
            let (ty, mode) = (ty.trim(), mode.trim());
            let mode = if mode.eq_ignore_ascii_case("mask") {
                DeidMode::Mask
            } else if let Some(path) = mode.strip_prefix("substitute:") {
                let path = base_dir.join(path.trim());
                let dict: Vec<String> = std::fs::read_to_string(&path)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect();
                DeidMode::Substitute(dict)
            } else {
                return Err(Error::parse(k + 1, format!("unknown mode `{mode}`")));
            };
            policy.set_mode(ty, mode).map_err(|e| Error::parse(k + 1, e.to_string()))?;
        }
        Ok(policy)
    }

    pub fn load(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&std::fs::read_to_string(path)?, base, seed)
    }

    fn replacement(&self, entity_type: &str, surface: &str) -> Option<String> {
        match self.mode(entity_type)? {
            DeidMode::Mask => Some(placeholder(entity_type)),
            DeidMode::Substitute(dict) => {
                let mut h = Sha256::new();
                h.update(self.seed.to_le_bytes());
                h.update(surface.as_bytes());
                let digest = h.finalize();
                let mut first = [0u8; 8];
                first.copy_from_slice(&digest[..8]);
                let start = (u64::from_le_bytes(first) % dict.len() as u64) as usize;
                // never hand back the original surface
                (0..dict.len())
                    .map(|k| &dict[(start + k) % dict.len()])
                    .find(|v| v.as_str() != surface)
                    .cloned()
                    .or_else(|| Some(placeholder(entity_type)))
            }
        }
    }
}

/// A typed character span (inclusive offsets) in a text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub begin: usize,
    pub end: usize,
    pub entity_type: String,
}

impl From<&Chunk> for Annotation {
    fn from(c: &Chunk) -> Self {
        Annotation {
            begin: c.begin,
            end: c.end,
            entity_type: c.entity_type.clone(),
        }
    }
}

impl From<&ChunkRecord> for Annotation {
    fn from(c: &ChunkRecord) -> Self {
        Annotation {
            begin: c.begin,
            end: c.end,
            entity_type: c.entity_type.clone(),
        }
    }
}

/// One applied replacement; offsets refer to the original text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub begin: usize,
    pub end: usize,
    pub original: String,
    pub entity_type: String,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeidResult {
    pub text: String,
    /// Ordered by `begin`.
    pub log: Vec<Replacement>,
}

impl DeidResult {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("log entry serialises") + "\n")
            .collect()
    }

    pub fn parse_log(text: &str) -> Result<Vec<Replacement>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(k, l)| serde_json::from_str(l).map_err(|e| Error::parse(k + 1, e.to_string())))
            .collect()
    }
}

/// Byte offset of every char boundary, including the end of the text.
fn char_starts(text: &str) -> Vec<usize> {
    text.char_indices().map(|(b, _)| b).chain([text.len()]).collect()
}

/// Replaces protected spans right to left so earlier offsets stay valid.
/// Spans of unprotected types are left alone.
pub fn apply_policy(text: &str, annotations: &[Annotation], policy: &DeidPolicy) -> Result<DeidResult> {
    let starts = char_starts(text);
    let n_chars = starts.len() - 1;
    let mut protected: Vec<&Annotation> = Vec::new();
    for a in annotations {
        if a.begin > a.end || a.end >= n_chars {
            return Err(Error::Validation(format!(
                "span [{}, {}] ({}) is outside a text of {n_chars} characters",
                a.begin, a.end, a.entity_type
            )));
        }
        if policy.is_protected(&a.entity_type) {
            protected.push(a);
        }
    }
    protected.sort_by_key(|a| (a.begin, a.end));
    for w in protected.windows(2) {
        if w[1].begin <= w[0].end {
            return Err(Error::Validation(format!(
                "protected spans [{}, {}] ({}) and [{}, {}] ({}) overlap",
                w[0].begin, w[0].end, w[0].entity_type, w[1].begin, w[1].end, w[1].entity_type
            )));
        }
    }
    let mut out = text.to_string();
    let mut log = Vec::with_capacity(protected.len());
    for a in protected.iter().rev() {
        let (b0, b1) = (starts[a.begin], starts[a.end + 1]);
        let original = &text[b0..b1];
        let replacement = policy
            .replacement(&a.entity_type, original)
            .expect("span is protected");
        out.replace_range(b0..b1, &replacement);
        log.push(Replacement {
            begin: a.begin,
            end: a.end,
            original: original.to_string(),
            entity_type: a.entity_type.clone(),
            replacement,
        });
    }
    log.reverse();
    Ok(DeidResult { text: out, log })
}

/// Restores the original text from a de-identified text and its log.
pub fn reverse(result: &DeidResult) -> Result<String> {
    let mut positions = Vec::with_capacity(result.log.len());
    let mut shift: isize = 0;
    let mut prev_end: Option<usize> = None;
    for r in &result.log {
        if r.begin > r.end || prev_end.is_some_and(|e| r.begin <= e) {
            return Err(Error::Validation(format!(
                "log entry [{}, {}] is out of order or overlaps",
                r.begin, r.end
            )));
        }
        let orig_len = r.original.chars().count();
        if orig_len != r.end - r.begin + 1 {
            return Err(Error::Validation(format!(
                "log entry [{}, {}] does not match its original `{}`",
                r.begin, r.end, r.original
            )));
        }
        let at = r.begin as isize + shift;
        positions.push(at as usize);
        shift += r.replacement.chars().count() as isize - orig_len as isize;
        prev_end = Some(r.end);
    }
    let starts = char_starts(&result.text);
    let mut text = result.text.clone();
    for (r, &at) in result.log.iter().zip(&positions).rev() {
        let len = r.replacement.chars().count();
        let (Some(&b0), Some(&b1)) = (starts.get(at), starts.get(at + len)) else {
            return Err(Error::Validation(format!(
                "log entry [{}, {}] points past the end of the text",
                r.begin, r.end
            )));
        };
        if text[b0..b1] != r.replacement {
            return Err(Error::Validation(format!(
                "text at [{}, {}] is not the logged replacement `{}`",
                r.begin, r.end, r.replacement
            )));
        }
        text.replace_range(b0..b1, &r.original);
    }
    Ok(text)
}
