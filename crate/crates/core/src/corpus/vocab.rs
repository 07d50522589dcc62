use std::collections::HashMap;

use super::Corpus;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

const PAD_WORD: &str = "<pad>";
const UNK_WORD: &str = "<unk>";

/// Word and character index maps with reserved PAD and UNK slots.
///
/// Words are case-preserved. Entries after the reserved slots are ordered by
/// descending frequency, then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    word_index: HashMap<String, usize>,
    chars: Vec<char>,
    char_index: HashMap<char, usize>,
    min_count: usize,
}

impl Vocabulary {
    pub fn build(corpus: &Corpus, min_count: usize) -> Self {
        let mut word_freq: HashMap<&str, usize> = HashMap::new();
        let mut char_freq: HashMap<char, usize> = HashMap::new();
        for s in &corpus.sentences {
            for t in &s.tokens {
                *word_freq.entry(t.surface.as_str()).or_default() += 1;
                for c in t.surface.chars() {
                    *char_freq.entry(c).or_default() += 1;
                }
            }
        }
        let mut words: Vec<(&str, usize)> = word_freq
            .into_iter()
            .filter(|&(_, n)| n >= min_count)
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut chars: Vec<(char, usize)> = char_freq.into_iter().collect();
        chars.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Self::from_parts(
            words.into_iter().map(|(w, _)| w.to_string()).collect(),
            chars.into_iter().map(|(c, _)| c).collect(),
            min_count,
        )
    }

    /// Rebuilds a vocabulary from its non-reserved entries in index order.
    pub fn from_parts(words: Vec<String>, chars: Vec<char>, min_count: usize) -> Self {
        let mut all_words = vec![PAD_WORD.to_string(), UNK_WORD.to_string()];
        all_words.extend(words);
        let word_index = all_words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        // reserved char slots hold placeholders that never match input
        let mut all_chars = vec!['\u{0}', '\u{1}'];
        all_chars.extend(chars);
        let char_index = all_chars
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, c)| (*c, i))
            .collect();
        Vocabulary {
            words: all_words,
            word_index,
            chars: all_chars,
            char_index,
            min_count,
        }
    }

    pub fn word_id(&self, word: &str) -> usize {
        match self.word_index.get(word) {
            Some(&i) if i > UNK => i,
            _ => UNK,
        }
    }

    pub fn char_id(&self, c: char) -> usize {
        self.char_index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Words after the reserved slots, in index order.
    pub fn regular_words(&self) -> &[String] {
        &self.words[2..]
    }

    /// Characters after the reserved slots, in index order.
    pub fn regular_chars(&self) -> &[char] {
        &self.chars[2..]
    }
}
