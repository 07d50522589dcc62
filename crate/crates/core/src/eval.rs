//! Entity-level and tag-level scoring.
//!
//! Entities match only on exact type and token span. Precision, recall and
//! F1 are zero whenever their denominator is zero.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{spans, Scheme};
use crate::error::{Error, Result};

/// An entity occurrence identified by sentence and inclusive token span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mention {
    pub sentence: usize,
    pub first: usize,
    pub last: usize,
    pub entity_type: String,
}

impl Mention {
    pub fn new(sentence: usize, first: usize, last: usize, entity_type: impl Into<String>) -> Self {
        Mention {
            sentence,
            first,
            last,
            entity_type: entity_type.into(),
        }
    }
}

/// Mentions decoded from one tag sequence.
pub fn mentions_from_tags<S: AsRef<str>>(sentence: usize, tags: &[S], scheme: Scheme) -> Result<Vec<Mention>> {
    Ok(spans(tags, scheme)?
        .into_iter()
        .map(|s| Mention::new(sentence, s.first, s.last, s.entity_type))
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, computed from the counts
    /// directly as 2tp / (2tp + fp + fn) so rational fixtures stay exact.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    fn add(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-type true positives, false positives and false negatives.
///
/// Each gold mention can be claimed by at most one prediction, so duplicate
/// predictions count as false positives.
pub fn entity_match_counts(gold: &[Mention], pred: &[Mention]) -> BTreeMap<String, Counts> {
    let mut remaining: HashMap<&Mention, usize> = HashMap::new();
    for g in gold {
        *remaining.entry(g).or_default() += 1;
    }
    let mut out: BTreeMap<String, Counts> = BTreeMap::new();
    for p in pred {
        let c = out.entry(p.entity_type.clone()).or_default();
        match remaining.get_mut(p) {
            Some(n) if *n > 0 => {
                *n -= 1;
                c.tp += 1;
            }
            _ => c.fp += 1,
        }
    }
    for g in gold {
        if let Some(n) = remaining.get_mut(g) {
            if *n > 0 {
                *n -= 1;
                out.entry(g.entity_type.clone()).or_default().fn_ += 1;
            }
        }
    }
    out
}

/// F1 of the pooled counts.
pub fn micro_f1(counts: &BTreeMap<String, Counts>) -> f64 {
    let mut total = Counts::default();
    for c in counts.values() {
        total.add(c);
    }
    total.f1()
}

/// Mean of per-type F1 over types with any gold or predicted mention.
pub fn macro_f1(counts: &BTreeMap<String, Counts>) -> f64 {
    let scored: Vec<f64> = counts.values().filter(|c| !c.is_empty()).map(Counts::f1).collect();
    if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    }
}

fn check_aligned<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Validation(format!(
            "sequence lengths differ: gold {} vs predicted {}",
            gold.len(),
            pred.len()
        )));
    }
    Ok(())
}

/// Token-level counts per tag, treating each tag as its own class. `O` is
/// skipped unless `include_outside` is set.
pub fn tag_report<S: AsRef<str>>(gold: &[S], pred: &[S], include_outside: bool) -> Result<BTreeMap<String, Counts>> {
    check_aligned(gold, pred)?;
    let mut out: BTreeMap<String, Counts> = BTreeMap::new();
    let keep = |t: &str| include_outside || t != "O";
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g == p {
            if keep(g) {
                out.entry(g.to_string()).or_default().tp += 1;
            }
            continue;
        }
        if keep(p) {
            out.entry(p.to_string()).or_default().fp += 1;
        }
        if keep(g) {
            out.entry(g.to_string()).or_default().fn_ += 1;
        }
    }
    Ok(out)
}

/// Fraction of positions where the tags agree; 0 for empty input.
pub fn token_accuracy<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<f64> {
    check_aligned(gold, pred)?;
    let hits = gold.iter().zip(pred).filter(|(g, p)| g.as_ref() == p.as_ref()).count();
    Ok(ratio(hits, gold.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub label: String,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    fn new(label: &str, counts: Counts) -> Self {
        Score {
            label: label.to_string(),
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
        }
    }
}

/// Complete evaluation of a predicted corpus against gold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entities: Vec<Score>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub token_accuracy: f64,
    pub tags: Vec<Score>,
    pub token_micro_f1: f64,
    pub token_macro_f1: f64,
}

impl EvalReport {
    /// Scores aligned per-sentence tag sequences in the given scheme.
    pub fn from_sequences<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>], scheme: Scheme) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::Validation(format!(
                "sentence counts differ: gold {} vs predicted {}",
                gold.len(),
                pred.len()
            )));
        }
        let mut gold_m = Vec::new();
        let mut pred_m = Vec::new();
        let mut gold_flat = Vec::new();
        let mut pred_flat = Vec::new();
        for (k, (g, p)) in gold.iter().zip(pred).enumerate() {
            if g.len() != p.len() {
                return Err(Error::Validation(format!(
                    "sentence {k}: gold has {} tokens, prediction has {}",
                    g.len(),
                    p.len()
                )));
            }
            gold_m.extend(mentions_from_tags(k, g, scheme)?);
            pred_m.extend(mentions_from_tags(k, p, scheme)?);
            gold_flat.extend(g.iter().map(|t| t.as_ref()));
            pred_flat.extend(p.iter().map(|t| t.as_ref()));
        }
        let entity_counts = entity_match_counts(&gold_m, &pred_m);
        let tag_counts = tag_report(&gold_flat, &pred_flat, false)?;
        Ok(EvalReport {
            entities: entity_counts.iter().map(|(k, c)| Score::new(k, *c)).collect(),
            micro_f1: micro_f1(&entity_counts),
            macro_f1: macro_f1(&entity_counts),
            token_accuracy: token_accuracy(&gold_flat, &pred_flat)?,
            tags: tag_counts.iter().map(|(k, c)| Score::new(k, *c)).collect(),
            token_micro_f1: micro_f1(&tag_counts),
            token_macro_f1: macro_f1(&tag_counts),
        })
    }

    /// Aligned-column text: the per-tag table, then per-type entity scores
    /// and the aggregates.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let section = |out: &mut String, head: &str, rows: &[Score]| {
            let width = rows.iter().map(|r| r.label.len()).chain([head.len()]).max().unwrap_or(0);
            let _ = writeln!(out, "{head:<width$}  prec.  recall  F1-score  support");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>5.2}  {:>6.2}  {:>8.2}  {:>7}",
                    r.label,
                    r.precision,
                    r.recall,
                    r.f1,
                    r.counts.tp + r.counts.fn_
                );
            }
        };
        section(&mut out, "Entity tagging", &self.tags);
        out.push('\n');
        section(&mut out, "Entity type", &self.entities);
        out.push('\n');
        let _ = writeln!(out, "micro F1        {:.4}", self.micro_f1);
        let _ = writeln!(out, "macro F1        {:.4}", self.macro_f1);
        let _ = writeln!(out, "token accuracy  {:.4}", self.token_accuracy);
        let _ = writeln!(out, "token micro F1  {:.4}", self.token_micro_f1);
        let _ = writeln!(out, "token macro F1  {:.4}", self.token_macro_f1);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}
