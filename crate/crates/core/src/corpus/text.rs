//! Rule-based sentence splitting and tokenization of raw text.
//!
//! All offsets are character (not byte) offsets with inclusive ends.

use std::collections::HashSet;
use std::path::Path;

use super::Token;
use crate::error::Result;

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "Fig.", "Figs.", "e.g.", "i.e.", "etc.", "vs.", "al.",
    "approx.", "No.", "St.",
];

/// Splits text after `.`, `!` or `?` when followed by whitespace and an
/// upper-case letter or digit, and at every newline. Words in the
/// abbreviation list never end a sentence.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: HashSet<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        SentenceSplitter::new(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl SentenceSplitter {
    pub fn new<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SentenceSplitter {
            abbreviations: abbreviations.into_iter().map(Into::into).collect(),
        }
    }

    /// Reads an abbreviation list, one entry per line; `#` starts a comment.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(SentenceSplitter::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string),
        ))
    }

    pub fn add_abbreviation(&mut self, abbreviation: impl Into<String>) {
        self.abbreviations.insert(abbreviation.into());
    }

    /// Returns `(sentence_text, begin, end)` triples with inclusive
    /// character offsets. Leading and trailing whitespace is trimmed.
    pub fn split(&self, text: &str) -> Vec<(String, usize, usize)> {
        let chars: Vec<char> = text.chars().collect();
        let n = chars.len();
        let mut out = Vec::new();
        let mut seg_start = 0;
        for i in 0..n {
            let c = chars[i];
            if c == '\n' {
                push_trimmed(&chars, seg_start, i, &mut out);
                seg_start = i + 1;
            } else if matches!(c, '.' | '!' | '?') && self.is_boundary(&chars, i) {
                push_trimmed(&chars, seg_start, i + 1, &mut out);
                seg_start = i + 1;
            }
        }
        push_trimmed(&chars, seg_start, n, &mut out);
        out
    }

    fn is_boundary(&self, chars: &[char], i: usize) -> bool {
        let n = chars.len();
        if i + 1 >= n || !chars[i + 1].is_whitespace() {
            return false;
        }
        let mut j = i + 1;
        while j < n && chars[j].is_whitespace() {
            if chars[j] == '\n' {
                // the newline splits on its own
                return false;
            }
            j += 1;
        }
        if j >= n || !(chars[j].is_uppercase() || chars[j].is_ascii_digit()) {
            return false;
        }
        let word_start = chars[..i]
            .iter()
            .rposition(|c| c.is_whitespace())
            .map_or(0, |p| p + 1);
        let word: String = chars[word_start..=i].iter().collect();
        !self.abbreviations.contains(&word)
    }
}

fn push_trimmed(chars: &[char], start: usize, end: usize, out: &mut Vec<(String, usize, usize)>) {
    let Some(first) = (start..end).find(|&k| !chars[k].is_whitespace()) else {
        return;
    };
    let last = (start..end).rev().find(|&k| !chars[k].is_whitespace()).unwrap();
    out.push((chars[first..=last].iter().collect(), first, last));
}

/// Sentence splitting with the default abbreviation list.
pub fn sentence_split(text: &str) -> Vec<(String, usize, usize)> {
    SentenceSplitter::default().split(text)
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '«' | '»' | '…' | '–' | '—')
}

/// Splits on whitespace and detaches leading/trailing punctuation, one
/// character per token. Word-internal punctuation (hyphens, slashes,
/// decimal points) stays attached.
pub fn tokenize(text: &str, base_offset: usize) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let word = &chars[start..i];
        let lead = word.iter().take_while(|c| is_punct(**c)).count();
        if lead == word.len() {
            for (k, c) in word.iter().enumerate() {
                tokens.push(Token::new(c.to_string(), base_offset + start + k));
            }
            continue;
        }
        let trail = word.iter().rev().take_while(|c| is_punct(**c)).count();
        for (k, c) in word[..lead].iter().enumerate() {
            tokens.push(Token::new(c.to_string(), base_offset + start + k));
        }
        let core: String = word[lead..word.len() - trail].iter().collect();
        tokens.push(Token::new(core, base_offset + start + lead));
        for k in word.len() - trail..word.len() {
            tokens.push(Token::new(word[k].to_string(), base_offset + start + k));
        }
    }
    tokens
}
