//! Entity chunks decoded from IOB2 tags, with confidences, chunk vectors
//! and the tab-separated chunk record format.

use std::fmt;
use std::str::FromStr;

use crate::corpus::{encode_spans, spans, Scheme, Sentence, Span};
use crate::embeddings::{pool_mean, EmbeddingTable};
use crate::error::{Error, Result};

/// How token marginals combine into a chunk confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConfidenceRule {
    #[default]
    Min,
    GeometricMean,
}

impl FromStr for ConfidenceRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(ConfidenceRule::Min),
            "geometric_mean" | "geomean" => Ok(ConfidenceRule::GeometricMean),
            _ => Err(Error::InvalidArgument(format!("unknown confidence rule `{s}`"))),
        }
    }
}

impl fmt::Display for ConfidenceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfidenceRule::Min => "min",
            ConfidenceRule::GeometricMean => "geometric_mean",
        })
    }
}

impl ConfidenceRule {
    pub fn combine(&self, probs: &[f64]) -> f64 {
        let c = match self {
            ConfidenceRule::Min => probs.iter().copied().fold(1.0, f64::min),
            ConfidenceRule::GeometricMean => {
                if probs.iter().any(|p| *p <= 0.0) {
                    0.0
                } else {
                    (probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64).exp()
                }
            }
        };
        c.clamp(0.0, 1.0)
    }
}

/// A typed entity span within one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub entity_type: String,
    /// Inclusive token indices.
    pub first: usize,
    pub last: usize,
    /// Inclusive character offsets.
    pub begin: usize,
    pub end: usize,
    pub surface: String,
    pub confidence: f64,
    pub sent_index: usize,
}

impl Chunk {
    pub fn span(&self) -> Span {
        Span {
            entity_type: self.entity_type.clone(),
            first: self.first,
            last: self.last,
        }
    }
}

/// Token surfaces from `first` to `last`, separated as in the source text:
/// adjacent tokens are glued, any gap becomes one space.
pub fn joined_surface(sentence: &Sentence, first: usize, last: usize) -> String {
    let mut out = String::new();
    for (k, t) in sentence.tokens[first..=last].iter().enumerate() {
        if k > 0 && t.begin > sentence.tokens[first + k - 1].end + 1 {
            out.push(' ');
        }
        out.push_str(&t.surface);
    }
    out
}

/// Maximal `B-X (I-X)*` runs as chunks. `confidences[i]` is the marginal
/// probability of the tag assigned to token `i`.
pub fn decode_chunks<S: AsRef<str>>(
    sentence: &Sentence,
    tags: &[S],
    confidences: &[f64],
    rule: ConfidenceRule,
) -> Result<Vec<Chunk>> {
    if tags.len() != sentence.len() || confidences.len() != sentence.len() {
        return Err(Error::Validation(format!(
            "sentence has {} tokens but {} tags and {} confidences",
            sentence.len(),
            tags.len(),
            confidences.len()
        )));
    }
    let found = spans(tags, Scheme::Iob2)?;
    Ok(found
        .into_iter()
        .map(|s| Chunk {
            begin: sentence.tokens[s.first].begin,
            end: sentence.tokens[s.last].end,
            surface: joined_surface(sentence, s.first, s.last),
            confidence: rule.combine(&confidences[s.first..=s.last]),
            sent_index: sentence.sent_index,
            entity_type: s.entity_type,
            first: s.first,
            last: s.last,
        })
        .collect())
}

/// IOB2 tags for non-overlapping chunks over a sentence of `len` tokens.
pub fn chunks_to_tags(chunks: &[Chunk], len: usize) -> Result<Vec<String>> {
    let mut owner: Vec<Option<usize>> = vec![None; len];
    for (k, c) in chunks.iter().enumerate() {
        if c.first > c.last || c.last >= len {
            return Err(Error::Validation(format!(
                "chunk [{}..{}] lies outside a sentence of {len} tokens",
                c.first, c.last
            )));
        }
        for slot in &mut owner[c.first..=c.last] {
            if let Some(j) = *slot {
                let o = &chunks[j];
                return Err(Error::Validation(format!(
                    "chunks [{}..{}] {} and [{}..{}] {} overlap",
                    o.first, o.last, o.entity_type, c.first, c.last, c.entity_type
                )));
            }
            *slot = Some(k);
        }
    }
    let spans: Vec<Span> = chunks.iter().map(Chunk::span).collect();
    Ok(encode_spans(&spans, len, Scheme::Iob2))
}

/// Average of the chunk's mean token vector and the sentence's mean token
/// vector.
pub fn chunk_embedding(table: &EmbeddingTable, sentence: &Sentence, chunk: &Chunk) -> Result<Vec<f64>> {
    if sentence.is_empty() {
        return Err(Error::InvalidArgument("cannot embed a chunk of an empty sentence".into()));
    }
    if chunk.first > chunk.last || chunk.last >= sentence.len() {
        return Err(Error::InvalidArgument(format!(
            "chunk [{}..{}] lies outside the sentence",
            chunk.first, chunk.last
        )));
    }
    let vectors: Vec<&[f64]> = sentence.tokens.iter().map(|t| table.lookup(&t.surface)).collect();
    let v_chunk = pool_mean(&vectors[chunk.first..=chunk.last])?;
    let v_sent = pool_mean(&vectors)?;
    Ok(v_chunk.iter().zip(&v_sent).map(|(a, b)| (a + b) / 2.0).collect())
}

/// One line of chunk output.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkRecord {
    pub doc_id: String,
    pub sent_index: usize,
    pub begin: usize,
    pub end: usize,
    pub surface: String,
    pub entity_type: String,
    pub confidence: f64,
}

impl ChunkRecord {
    pub fn from_chunk(doc_id: &str, chunk: &Chunk) -> Self {
        ChunkRecord {
            doc_id: doc_id.to_string(),
            sent_index: chunk.sent_index,
            begin: chunk.begin,
            end: chunk.end,
            surface: chunk.surface.clone(),
            entity_type: chunk.entity_type.clone(),
            confidence: chunk.confidence,
        }
    }
}

pub const CHUNK_HEADER: &str = "doc\tsen\tbeg\tend\tchunk\tentity\tconf";

/// Tab-separated records with a header; confidence to two decimals.
pub fn write_chunk_records(records: &[ChunkRecord]) -> String {
    let mut out = String::from(CHUNK_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.2}\n",
            r.doc_id, r.sent_index, r.begin, r.end, r.surface, r.entity_type, r.confidence
        ));
    }
    out
}

pub fn parse_chunk_records(text: &str) -> Result<Vec<ChunkRecord>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        if line.trim().is_empty() || (k == 0 && line == CHUNK_HEADER) {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(Error::parse(lineno, format!("expected 7 tab-separated fields, found {}", f.len())));
        }
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::parse(lineno, format!("bad {what} `{s}`")))
        };
        let confidence: f64 = f[6]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad confidence `{}`", f[6])))?;
        out.push(ChunkRecord {
            doc_id: f[0].to_string(),
            sent_index: num(f[1], "sentence index")?,
            begin: num(f[2], "begin offset")?,
            end: num(f[3], "end offset")?,
            surface: f[4].to_string(),
            entity_type: f[5].to_string(),
            confidence,
        });
    }
    Ok(out)
}
