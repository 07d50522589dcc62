//! Corpus ingestion: raw-text segmentation, CoNLL reading/writing, IOB
//! handling, vocabularies and deterministic data splits.

mod conll;
mod iob;
mod partition;
mod schema;
mod text;
mod vocab;

use serde::{Deserialize, Serialize};

pub use conll::{parse_conll, write_conll, ColumnSpec, ConllReader};
pub use iob::{convert_scheme, encode_spans, spans, validate_iob, Span, Violation};
pub use partition::{split_corpus, stratified_kfold};
pub use schema::{LabelSchema, Scheme, Tag, TransitionMask, CLINICAL_TYPES, NON_CLINICAL_TYPES};
pub use text::{sentence_split, tokenize, SentenceSplitter, DEFAULT_ABBREVIATIONS};
pub use vocab::{Vocabulary, PAD, UNK};

use crate::error::{Error, Result};

/// Default maximum sentence length in tokens.
pub const MAX_SEQ_LENGTH: usize = 512;

/// A token with inclusive character offsets into its source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub begin: usize,
    pub end: usize,
    pub tag: Option<String>,
}

impl Token {
    pub fn new(surface: impl Into<String>, begin: usize) -> Self {
        let surface = surface.into();
        let end = begin + surface.chars().count().saturating_sub(1);
        Token {
            surface,
            begin,
            end,
            tag: None,
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub doc_id: String,
    pub sent_index: usize,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>, doc_id: impl Into<String>, sent_index: usize) -> Self {
        Sentence {
            tokens,
            doc_id: doc_id.into(),
            sent_index,
        }
    }

    /// Builds an untagged sentence from surfaces joined by single spaces.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let mut tokens = Vec::with_capacity(words.len());
        let mut offset = 0;
        for w in words {
            let t = Token::new(w.as_ref(), offset);
            offset = t.end + 2;
            tokens.push(t);
        }
        Sentence::new(tokens, "doc0", 0)
    }

    /// Builds a tagged sentence from `(surface, tag)` pairs joined by single
    /// spaces.
    pub fn from_tagged<S: AsRef<str>, T: AsRef<str>>(pairs: &[(S, T)]) -> Self {
        let words: Vec<&str> = pairs.iter().map(|(w, _)| w.as_ref()).collect();
        let mut s = Self::from_words(&words);
        for (tok, (_, tag)) in s.tokens.iter_mut().zip(pairs) {
            tok.tag = Some(tag.as_ref().to_string());
        }
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn is_tagged(&self) -> bool {
        self.tokens.first().is_some_and(|t| t.tag.is_some())
    }

    /// Tags of a fully tagged sentence, or `None` when untagged.
    pub fn tags(&self) -> Option<Vec<&str>> {
        self.tokens.iter().map(|t| t.tag.as_deref()).collect()
    }

    /// Sentence text rebuilt from token offsets, relative to the first token.
    pub fn text(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.tokens.first() else {
            return out;
        };
        let mut cursor = first.begin;
        for t in &self.tokens {
            for _ in cursor..t.begin {
                out.push(' ');
            }
            out.push_str(&t.surface);
            cursor = t.end + 1;
        }
        out
    }

    /// The set of entity types present in the gold tags.
    pub fn entity_types(&self) -> std::collections::BTreeSet<String> {
        self.tokens
            .iter()
            .filter_map(|t| t.tag.as_deref())
            .filter_map(Tag::parse)
            .filter_map(|t| t.entity_type().map(str::to_string))
            .collect()
    }

    /// Structural invariants: non-empty tokens without newlines, increasing
    /// offsets and all-or-nothing tagging.
    pub fn check(&self) -> Result<()> {
        let mut prev_end: Option<usize> = None;
        let tagged = self.is_tagged();
        for (i, t) in self.tokens.iter().enumerate() {
            if t.surface.is_empty() || t.surface.contains('\n') {
                return Err(Error::Validation(format!(
                    "{}:{} token {i} has an empty or multi-line surface",
                    self.doc_id, self.sent_index
                )));
            }
            if t.begin > t.end || prev_end.is_some_and(|p| t.begin <= p) {
                return Err(Error::Validation(format!(
                    "{}:{} token {i} has non-increasing offsets",
                    self.doc_id, self.sent_index
                )));
            }
            if t.tag.is_some() != tagged {
                return Err(Error::Validation(format!(
                    "{}:{} is only partially tagged",
                    self.doc_id, self.sent_index
                )));
            }
            prev_end = Some(t.end);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub schema: LabelSchema,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>, schema: LabelSchema) -> Self {
        Corpus { sentences, schema }
    }

    pub fn empty(schema: LabelSchema) -> Self {
        Corpus::new(Vec::new(), schema)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Subset by sentence index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Corpus {
        Corpus::new(
            indices.iter().map(|&i| self.sentences[i].clone()).collect(),
            self.schema.clone(),
        )
    }

    /// Checks every sentence's structure, that every tag is in the schema
    /// and that tag sequences are valid IOB2.
    pub fn validate(&self) -> Result<()> {
        for s in &self.sentences {
            s.check()?;
            if let Some(tags) = s.tags() {
                if let Some(bad) = tags.iter().find(|t| !self.schema.contains_tag(t)) {
                    return Err(Error::Schema(format!(
                        "{}:{} tag `{bad}` is not in the schema",
                        s.doc_id, s.sent_index
                    )));
                }
                if let Some(v) = validate_iob(&tags, Scheme::Iob2).first() {
                    return Err(Error::Validation(format!(
                        "{}:{} token {}: {}",
                        s.doc_id, s.sent_index, v.index, v.reason
                    )));
                }
            }
        }
        Ok(())
    }

    /// Groups consecutive sentences sharing a document id, in corpus order.
    pub fn documents(&self) -> Vec<(String, Vec<&Sentence>)> {
        let mut docs: Vec<(String, Vec<&Sentence>)> = Vec::new();
        for s in &self.sentences {
            match docs.last_mut() {
                Some((id, members)) if *id == s.doc_id => members.push(s),
                _ => docs.push((s.doc_id.clone(), vec![s])),
            }
        }
        docs
    }
}

/// Segments raw text into sentences of tokens with absolute offsets.
pub fn segment_document(
    splitter: &SentenceSplitter,
    text: &str,
    doc_id: &str,
    max_seq_length: usize,
) -> Vec<Sentence> {
    splitter
        .split(text)
        .into_iter()
        .enumerate()
        .map(|(i, (sent, begin, _))| {
            let mut tokens = tokenize(&sent, begin);
            truncate(&mut tokens, max_seq_length, doc_id, i);
            Sentence::new(tokens, doc_id, i)
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Builds word and character vocabularies from a corpus.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Vocabulary {
    Vocabulary::build(corpus, min_count)
}

pub(crate) fn truncate(tokens: &mut Vec<Token>, max: usize, doc_id: &str, sent_index: usize) {
    if tokens.len() > max {
        log::warn!(
            "{doc_id}:{sent_index} has {} tokens; truncating to {max}",
            tokens.len()
        );
        tokens.truncate(max);
    }
}
