//! CoNLL-style column files.
//!
//! One token per line, whitespace-separated columns, a blank line between
//! sentences and `-DOCSTART-` lines between documents. Offsets are
//! synthesized: tokens are joined by single spaces and the sentences of a
//! document by single newlines.

use super::iob::convert_scheme;
use super::schema::{LabelSchema, Scheme, Tag};
use super::{truncate, Corpus, Sentence, Token, MAX_SEQ_LENGTH};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnSpec {
    pub n_columns: usize,
    pub token_col: usize,
    pub tag_col: Option<usize>,
}

impl ColumnSpec {
    /// `token TAB tag`
    pub const TSV2: ColumnSpec = ColumnSpec {
        n_columns: 2,
        token_col: 0,
        tag_col: Some(1),
    };
    /// `token POS chunk NER` as in CoNLL-2003.
    pub const CONLL4: ColumnSpec = ColumnSpec {
        n_columns: 4,
        token_col: 0,
        tag_col: Some(3),
    };
    /// One untagged token per line.
    pub const TOKENS: ColumnSpec = ColumnSpec {
        n_columns: 1,
        token_col: 0,
        tag_col: None,
    };

    fn separator(&self) -> char {
        if self.n_columns == 2 {
            '\t'
        } else {
            ' '
        }
    }
}

/// Configurable CoNLL reader.
///
/// With a schema every tag must belong to it (strict mode); without one the
/// schema is inferred from the tags in order of first appearance.
#[derive(Debug, Clone)]
pub struct ConllReader {
    pub columns: ColumnSpec,
    pub scheme: Scheme,
    pub schema: Option<LabelSchema>,
    pub max_seq_length: usize,
}

impl ConllReader {
    pub fn new(columns: ColumnSpec) -> Self {
        ConllReader {
            columns,
            scheme: Scheme::Iob2,
            schema: None,
            max_seq_length: MAX_SEQ_LENGTH,
        }
    }

    pub fn scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn schema(mut self, schema: LabelSchema) -> Self {
        self.schema = Some(schema);
        self
    }

    pub fn max_seq_length(mut self, max: usize) -> Self {
        self.max_seq_length = max;
        self
    }

    pub fn parse(&self, text: &str) -> Result<Corpus> {
        let raw = self.read_rows(text)?;
        let mut inferred: Vec<String> = Vec::new();
        let mut sentences = Vec::with_capacity(raw.len());
        let mut doc_offset = 0;
        let mut prev_doc = usize::MAX;
        let mut sent_index = 0;
        for RawSentence { doc, line, rows } in raw {
            if doc != prev_doc {
                prev_doc = doc;
                doc_offset = 0;
                sent_index = 0;
            }
            let mut tags: Option<Vec<String>> = None;
            if self.columns.tag_col.is_some() {
                let raw_tags: Vec<&str> = rows.iter().map(|(_, t)| t.as_str()).collect();
                if let Some(bad) = raw_tags.iter().find(|t| Tag::parse(t).is_none()) {
                    return Err(Error::Schema(format!("line {line}: malformed tag `{bad}`")));
                }
                let converted = convert_scheme(&raw_tags, self.scheme, Scheme::Iob2)
                    .map_err(|e| Error::parse(line, e.to_string()))?;
                for t in &converted {
                    if let Some(ty) = Tag::parse(t).and_then(|p| p.entity_type()) {
                        match &self.schema {
                            Some(schema) if schema.type_index(ty).is_none() => {
                                return Err(Error::Schema(format!(
                                    "line {line}: tag `{t}` is not in the schema"
                                )));
                            }
                            Some(_) => {}
                            None => {
                                if !inferred.iter().any(|x| x == ty) {
                                    inferred.push(ty.to_string());
                                }
                            }
                        }
                    }
                }
                tags = Some(converted);
            }
            let mut tokens = Vec::with_capacity(rows.len());
            let mut offset = doc_offset;
            for (k, (word, _)) in rows.iter().enumerate() {
                let mut tok = Token::new(word.clone(), offset);
                offset = tok.end + 2;
                if let Some(tags) = &tags {
                    tok.tag = Some(tags[k].clone());
                }
                tokens.push(tok);
            }
            doc_offset = offset;
            let doc_id = format!("doc{doc}");
            truncate(&mut tokens, self.max_seq_length, &doc_id, sent_index);
            sentences.push(Sentence::new(tokens, doc_id, sent_index));
            sent_index += 1;
        }
        let schema = match &self.schema {
            Some(s) => s.with_scheme(Scheme::Iob2),
            None => LabelSchema::new(&inferred, Scheme::Iob2)?,
        };
        let corpus = Corpus::new(sentences, schema);
        corpus.validate()?;
        Ok(corpus)
    }

    fn read_rows(&self, text: &str) -> Result<Vec<RawSentence>> {
        let mut out = Vec::new();
        let mut doc = 0;
        let mut doc_has_sentences = false;
        let mut current: Option<RawSentence> = None;
        for (k, line) in text.lines().enumerate() {
            let lineno = k + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                out.extend(current.take());
                continue;
            }
            if trimmed.starts_with("-DOCSTART-") {
                if let Some(s) = current.take() {
                    out.push(s);
                    doc_has_sentences = true;
                }
                if doc_has_sentences {
                    doc += 1;
                    doc_has_sentences = false;
                }
                continue;
            }
            let cols: Vec<&str> = trimmed.split_whitespace().collect();
            if cols.len() != self.columns.n_columns {
                return Err(Error::parse(
                    lineno,
                    format!(
                        "expected {} columns, found {}",
                        self.columns.n_columns,
                        cols.len()
                    ),
                ));
            }
            let word = cols[self.columns.token_col].to_string();
            let tag = self
                .columns
                .tag_col
                .map(|c| cols[c].to_string())
                .unwrap_or_default();
            doc_has_sentences = true;
            current
                .get_or_insert_with(|| RawSentence {
                    doc,
                    line: lineno,
                    rows: Vec::new(),
                })
                .rows
                .push((word, tag));
        }
        out.extend(current);
        Ok(out)
    }
}

struct RawSentence {
    doc: usize,
    line: usize,
    rows: Vec<(String, String)>,
}

/// Parses canonical IOB2 data with an inferred schema.
pub fn parse_conll(text: &str, columns: ColumnSpec) -> Result<Corpus> {
    ConllReader::new(columns).parse(text)
}

/// Writes a corpus in the given column layout, re-encoding tags into
/// `scheme`. Extra columns are filled with `_`.
pub fn write_conll(corpus: &Corpus, columns: ColumnSpec, scheme: Scheme) -> Result<String> {
    let sep = columns.separator();
    let mut out = String::new();
    let docs = corpus.documents();
    let multi_doc = docs.len() > 1;
    for (_, sentences) in docs {
        if multi_doc {
            let mut cols = vec!["-X-"; columns.n_columns];
            cols[columns.token_col] = "-DOCSTART-";
            if let Some(c) = columns.tag_col {
                cols[c] = "O";
            }
            out.push_str(&cols.join(&sep.to_string()));
            out.push_str("\n\n");
        }
        for s in sentences {
            let tags = match s.tags() {
                Some(t) => Some(convert_scheme(&t, Scheme::Iob2, scheme)?),
                None => None,
            };
            for (k, tok) in s.tokens.iter().enumerate() {
                let mut cols = vec!["_"; columns.n_columns];
                cols[columns.token_col] = &tok.surface;
                if let Some(c) = columns.tag_col {
                    cols[c] = tags.as_ref().map_or("O", |t| t[k].as_str());
                }
                out.push_str(&cols.join(&sep.to_string()));
                out.push('\n');
            }
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_two_column() {
        let c = parse_conll("fever\tB-Symptom\n\ncough\tB-Symptom\n", ColumnSpec::TSV2).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.sentences.iter().all(|s| s.len() == 1));
        assert_eq!(c.schema.entity_types(), &["Symptom"]);
        // second sentence starts after "fever\n"
        assert_eq!(c.sentences[1].tokens[0].begin, 6);
    }

    #[test]
    fn empty_and_malformed() {
        assert!(parse_conll("", ColumnSpec::TSV2).unwrap().is_empty());
        match parse_conll("a b", ColumnSpec::CONLL4) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_conll("a O\nb O x\n", ColumnSpec::TSV2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn strict_schema() {
        let schema = LabelSchema::new(&["Symptom"], Scheme::Iob2).unwrap();
        let reader = ConllReader::new(ColumnSpec::TSV2).schema(schema);
        assert!(reader.parse("fever\tB-Symptom\n").is_ok());
        assert!(matches!(reader.parse("flu\tB-Disease\n"), Err(Error::Schema(_))));
        assert!(matches!(
            parse_conll("flu\tX-Disease\n", ColumnSpec::TSV2),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn docstart_and_conll4() {
        let text = "-DOCSTART- -X- -X- O\n\nEU NNP B-NP B-ORG\nrejects VBZ B-VP O\n\n-DOCSTART- -X- -X- O\n\nPeter NNP B-NP B-PER\n";
        let c = parse_conll(text, ColumnSpec::CONLL4).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[0].doc_id, "doc0");
        assert_eq!(c.sentences[1].doc_id, "doc1");
        assert_eq!(c.sentences[1].tokens[0].begin, 0);
        assert_eq!(c.schema.entity_types(), &["ORG", "PER"]);
    }

    #[test]
    fn iob1_import_and_invalid_iob2() {
        let c = ConllReader::new(ColumnSpec::TSV2)
            .scheme(Scheme::Iob1)
            .parse("a\tI-X\nb\tB-X\nc\tO\n")
            .unwrap();
        assert_eq!(c.sentences[0].tags().unwrap(), vec!["B-X", "B-X", "O"]);
        assert!(matches!(
            parse_conll("x\tO\na\tO\nb\tI-X\n", ColumnSpec::TSV2),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn writes_iob1() {
        let c = parse_conll("a\tB-X\nb\tB-X\n", ColumnSpec::TSV2).unwrap();
        let out = write_conll(&c, ColumnSpec::TSV2, Scheme::Iob1).unwrap();
        assert_eq!(out, "a\tI-X\nb\tB-X\n\n");
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<Vec<(String, usize)>>> {
        prop::collection::vec(
            prop::collection::vec(("[a-zA-Z0-9,.]{1,6}", 0usize..5), 1..8),
            0..6,
        )
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(raw in arb_corpus(), four in any::<bool>()) {
            // tag choice k: 0 = O, 1/2 = B-/I-A, 3/4 = B-/I-B; repair illegal I- into B-
            let names = ["A", "B"];
            let mut sents = Vec::new();
            for (si, s) in raw.iter().enumerate() {
                let mut pairs = Vec::new();
                let mut prev: Option<usize> = None;
                for (w, k) in s {
                    let tag = if *k == 0 {
                        prev = None;
                        "O".to_string()
                    } else {
                        let ty = (k - 1) / 2;
                        let inside = (k - 1) % 2 == 1 && prev == Some(ty);
                        prev = Some(ty);
                        format!("{}-{}", if inside { "I" } else { "B" }, names[ty])
                    };
                    pairs.push((w.clone(), tag));
                }
                let mut sent = Sentence::from_tagged(&pairs);
                sent.sent_index = si;
                sents.push(sent);
            }
            let schema = LabelSchema::new(&names, Scheme::Iob2).unwrap();
            let corpus = Corpus::new(sents, schema.clone());
            let spec = if four { ColumnSpec::CONLL4 } else { ColumnSpec::TSV2 };
            let text = write_conll(&corpus, spec, Scheme::Iob2).unwrap();
            let back = ConllReader::new(spec).schema(schema).parse(&text).unwrap();
            prop_assert_eq!(back.len(), corpus.len());
            for (a, b) in back.sentences.iter().zip(&corpus.sentences) {
                prop_assert_eq!(a.words(), b.words());
                prop_assert_eq!(a.tags(), b.tags());
            }
        }
    }
}
