//! Independent oracles shared by the integration tests.
//!
//! Everything here works by explicit enumeration and never calls into the
//! dynamic programs it is used to check.

#![allow(dead_code)]

use medner::nercore::Tensor;
use rand::Rng;

/// All tag paths of length `n` over `t` tags, in lexicographic order.
pub fn all_paths(n: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..t).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out
}

/// Path score summed term by term from the definition.
pub fn brute_score(emissions: &Tensor, transitions: &Tensor, path: &[usize]) -> f64 {
    let t = emissions.cols();
    let (start, stop) = (t, t + 1);
    let mut s = transitions.get(start, path[0]);
    for (i, &y) in path.iter().enumerate() {
        s += emissions.get(i, y);
        if i + 1 < path.len() {
            s += transitions.get(y, path[i + 1]);
        }
    }
    s + transitions.get(*path.last().unwrap(), stop)
}

/// `log Σ_paths exp(score)` by enumeration, shifted by the max for range.
pub fn brute_log_partition(emissions: &Tensor, transitions: &Tensor) -> f64 {
    let scores: Vec<f64> = all_paths(emissions.rows(), emissions.cols())
        .iter()
        .map(|p| brute_score(emissions, transitions, p))
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Highest-scoring path; among exact ties the lexicographically smallest.
pub fn brute_viterbi(emissions: &Tensor, transitions: &Tensor) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in all_paths(emissions.rows(), emissions.cols()) {
        let s = brute_score(emissions, transitions, &p);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((p, s));
        }
    }
    best.unwrap()
}

/// Per-position posterior marginals by summing path probabilities.
pub fn brute_marginals(emissions: &Tensor, transitions: &Tensor) -> Vec<Vec<f64>> {
    let (n, t) = (emissions.rows(), emissions.cols());
    let log_z = brute_log_partition(emissions, transitions);
    let mut m = vec![vec![0.0; t]; n];
    for p in all_paths(n, t) {
        let prob = (brute_score(emissions, transitions, &p) - log_z).exp();
        for (i, &y) in p.iter().enumerate() {
            m[i][y] += prob;
        }
    }
    m
}

pub fn random_tensor<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// A random CRF instance with `n` positions and `t` tags, scores ~ U(-2, 2).
pub fn random_instance<R: Rng>(n: usize, t: usize, rng: &mut R) -> (Tensor, Tensor) {
    let e = random_tensor(n, t, -2.0, 2.0, rng);
    let tr = random_tensor(t + 2, t + 2, -2.0, 2.0, rng);
    (e, tr)
}

/// Entity-level counts by exhaustive pairwise comparison.
///
/// Inputs are `(sentence, first, last, type)` tuples. Each gold span can be
/// claimed by at most one prediction.
pub fn brute_counts(
    gold: &[(usize, usize, usize, String)],
    pred: &[(usize, usize, usize, String)],
) -> std::collections::BTreeMap<String, (usize, usize, usize)> {
    let mut out: std::collections::BTreeMap<String, (usize, usize, usize)> = Default::default();
    let mut used = vec![false; gold.len()];
    for p in pred {
        let entry = out.entry(p.3.clone()).or_default();
        let mut hit = false;
        for (g, u) in gold.iter().zip(used.iter_mut()) {
            if !*u && g == p {
                *u = true;
                hit = true;
                break;
            }
        }
        if hit {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }
    for (g, u) in gold.iter().zip(&used) {
        if !*u {
            out.entry(g.3.clone()).or_default().2 += 1;
        }
    }
    out
}

/// F1 from raw counts with the zero-denominator convention.
pub fn f1_from(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

use medner::corpus::{Corpus, LabelSchema, Scheme, Sentence};
use medner::embeddings::{EmbeddingTable, OovPolicy};
use medner::nercore::{ModelConfig, NerModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FILLER: &[&str] = &[
    "the", "patient", "was", "given", "and", "after", "with", "daily", "for", "reported", "no", "pain", "on",
    "admission", "then", "started", "at", "night", "before", "meals", "mild", "nausea", "dose", "of", "a",
    "course", "continued", "stopped", "twice", "weekly",
];
const UNITS: &[&str] = &["mg", "ml", "units"];
const SUFFIXES: &[&str] = &["ine", "ol", "ide"];

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    const C: &[u8] = b"bcdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let syllables = rng.gen_range(1..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(C[rng.gen_range(0..C.len())] as char);
        w.push(V[rng.gen_range(0..V.len())] as char);
    }
    w
}

/// Lexically determined entities: digit-bearing tokens start a Dosage span
/// (an optional unit continues it) and words ending in a drug suffix are
/// Drug mentions. Half the draws are filler, which keeps O from dominating
/// the early updates.
pub fn synthetic_sentence<R: Rng>(rng: &mut R) -> Sentence {
    let n = rng.gen_range(4..=10);
    let mut pairs: Vec<(String, String)> = Vec::new();
    while pairs.len() < n {
        match rng.gen_range(0..4) {
            0 => {
                pairs.push((rng.gen_range(1..1000).to_string(), "B-Dosage".into()));
                if rng.gen_bool(0.5) {
                    pairs.push((UNITS[rng.gen_range(0..UNITS.len())].into(), "I-Dosage".into()));
                }
            }
            1 => {
                let w = pseudo_word(rng) + SUFFIXES[rng.gen_range(0..SUFFIXES.len())];
                pairs.push((w, "B-Drug".into()));
            }
            _ => pairs.push((FILLER[rng.gen_range(0..FILLER.len())].into(), "O".into())),
        }
    }
    Sentence::from_tagged(&pairs)
}

pub fn synthetic_schema() -> LabelSchema {
    LabelSchema::new(&["Dosage", "Drug"], Scheme::Iob2).unwrap()
}

pub fn synthetic_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = (0..n).map(|_| synthetic_sentence(&mut rng)).collect();
    Corpus::new(sentences, synthetic_schema())
}

/// Random vectors for the filler vocabulary and the units.
pub fn synthetic_embeddings(dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = FILLER
        .iter()
        .chain(UNITS)
        .map(|w| (w.to_string(), (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect::<Vec<(String, Vec<f64>)>>();
    EmbeddingTable::from_rows(dim, rows, OovPolicy::LowercaseThenUnk).unwrap()
}

/// Small architecture used by training tests.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        char_dim: 8,
        kernel_width: 3,
        num_filters: 12,
        lstm_state: 10,
        ..Default::default()
    }
}

/// The tiny gradient-check model: word dim 8, char dim 4, M = 3, K = 2,
/// S = 6, two entity types (five tags), sentences of at most four tokens.
pub fn gradcheck_setup(seed: u64) -> (NerModel, Vec<Sentence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = LabelSchema::new(&["A", "B"], Scheme::Iob2).unwrap();
    let words = ["ab", "c", "dab", "e", "fc", "bad"];
    let mut sentences = Vec::new();
    for _ in 0..4 {
        let n = rng.gen_range(1..=4);
        let types = ["A", "B"];
        let mut tags: Vec<String> = Vec::new();
        for i in 0..n {
            let r = rng.gen_range(0..3);
            let prev_entity = i > 0 && tags[i - 1] != "O";
            let t = match r {
                0 => "O".to_string(),
                1 if prev_entity => format!("I-{}", &tags[i - 1][2..]),
                _ => format!("B-{}", types[rng.gen_range(0..2)]),
            };
            tags.push(t);
        }
        let pairs: Vec<(&str, String)> = (0..n).map(|_| words[rng.gen_range(0..words.len())]).zip(tags).collect();
        sentences.push(Sentence::from_tagged(&pairs));
    }
    let corpus = Corpus::new(sentences.clone(), schema);
    corpus.validate().unwrap();
    let table = EmbeddingTable::from_rows(
        8,
        ["ab", "c", "e", "bad"]
            .iter()
            .map(|w| (w.to_string(), (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect::<Vec<(String, Vec<f64>)>>(),
        OovPolicy::UnkRow,
    )
    .unwrap();
    let config = ModelConfig {
        char_dim: 4,
        kernel_width: 2,
        num_filters: 3,
        lstm_state: 6,
        train_word_delta: true,
        ..Default::default()
    };
    let mut model = NerModel::for_corpus(config, &corpus, table, seed).unwrap();
    // spread the weights so tanh and sigmoid are away from their linear region
    model.params.for_each_mut(|name, t| {
        if name != "crf.transitions" {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    });
    (model, sentences)
}

/// Central finite differences against the analytic gradient on `samples`
/// parameters drawn evenly across all tensor groups. Masked transitions are
/// skipped. Returns the max relative error and the groups visited.
pub fn gradient_check(model: &NerModel, batch: &[Sentence], samples: usize, seed: u64) -> (f64, Vec<&'static str>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, grad) = model.model_backward(batch).unwrap();
    let names: Vec<&'static str> = model.params.named().iter().map(|(n, _)| *n).collect();
    let mask = model.mask().clone();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut visited = Vec::new();
    for k in 0..samples {
        let g = k % names.len();
        let name = names[g];
        let (rows, cols) = model.params.named()[g].1.shape();
        let (r, c) = loop {
            let (r, c) = (rng.gen_range(0..rows), rng.gen_range(0..cols));
            if name != "crf.transitions" || mask.allowed(r, c) {
                break (r, c);
            }
        };
        let loss_at = |delta: f64| {
            let mut m = model.clone();
            let t = m.params.named_mut().into_iter().nth(g).unwrap().1;
            t.add_at(r, c, delta);
            m.crf_nll(batch).unwrap()
        };
        let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        let analytic = grad.named()[g].1.get(r, c);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        let err = (analytic - numeric).abs() / denom;
        worst = worst.max(err);
        if !visited.contains(&name) {
            visited.push(name);
        }
    }
    (worst, visited)
}

/// Fraction of sentences whose predicted tags equal the gold tags.
pub fn exact_match(model: &NerModel, corpus: &Corpus) -> f64 {
    let hits = corpus
        .sentences
        .iter()
        .filter(|s| model.predict(s).tags.iter().map(String::as_str).eq(s.tags().unwrap()))
        .count();
    hits as f64 / corpus.len() as f64
}

use medner::deid::{Annotation, DeidMode, DeidPolicy};
use medner::nercore::{fit, TrainConfig};

/// A uniformly drawn valid IOB2 sequence: `I-T` only after `B-T` or `I-T`.
pub fn random_iob2<R: Rng>(rng: &mut R, n: usize, types: &[&str]) -> Vec<String> {
    let mut tags: Vec<String> = Vec::with_capacity(n);
    for i in 0..n {
        let prev_type = if i == 0 { None } else { tags[i - 1].get(2..) };
        let t = match (rng.gen_range(0..3), prev_type) {
            (0, _) => "O".to_string(),
            (1, Some(ty)) => format!("I-{ty}"),
            _ => format!("B-{}", types[rng.gen_range(0..types.len())]),
        };
        tags.push(t);
    }
    tags
}

/// Every valid IOB2 sequence of length `n` over `types`, by filtering the
/// full product of the tag alphabet.
pub fn all_valid_iob2(n: usize, types: &[&str]) -> Vec<Vec<String>> {
    let mut alphabet = vec!["O".to_string()];
    for t in types {
        alphabet.push(format!("B-{t}"));
        alphabet.push(format!("I-{t}"));
    }
    let valid = |seq: &[usize]| {
        seq.iter().enumerate().all(|(i, &k)| {
            let tag = &alphabet[k];
            !tag.starts_with("I-") || (i > 0 && alphabet[seq[i - 1]] != "O" && alphabet[seq[i - 1]][2..] == tag[2..])
        })
    };
    all_paths(n, alphabet.len())
        .into_iter()
        .filter(|p| valid(p))
        .map(|p| p.into_iter().map(|k| alphabet[k].clone()).collect())
        .collect()
}

/// `(first, last, type)` for every chunk, read straight off the B-/I- tags.
pub fn brute_spans(tags: &[String]) -> Vec<(usize, usize, String)> {
    let mut out: Vec<(usize, usize, String)> = Vec::new();
    for (i, t) in tags.iter().enumerate() {
        if let Some(ty) = t.strip_prefix("B-") {
            out.push((i, i, ty.to_string()));
        } else if t.starts_with("I-") {
            out.last_mut().unwrap().1 = i;
        }
    }
    out
}

/// Text, non-overlapping annotations and a policy for a de-identification
/// round trip. Texts mix ASCII with multi-byte characters.
pub fn random_deid_triple<R: Rng>(rng: &mut R) -> (String, Vec<Annotation>, DeidPolicy) {
    const CHARS: &[char] = &['a', 'b', 'k', 'z', 'A', 'Q', '0', '7', ' ', ' ', '-', '.', 'é', 'ß', '中', '<'];
    const TYPES: &[&str] = &["Name", "Date", "Age", "Symptom", "Hospital"];
    let len = rng.gen_range(0..60);
    let text: String = (0..len).map(|_| CHARS[rng.gen_range(0..CHARS.len())]).collect();
    let mut annotations = Vec::new();
    let mut pos = 0;
    while len > 0 && pos < len {
        pos += rng.gen_range(0..6);
        if pos >= len {
            break;
        }
        let end = (pos + rng.gen_range(0..5)).min(len - 1);
        annotations.push(Annotation {
            begin: pos,
            end,
            entity_type: TYPES[rng.gen_range(0..TYPES.len())].to_string(),
        });
        pos = end + 1;
    }
    let mut policy = DeidPolicy::empty(rng.gen());
    for t in TYPES {
        match rng.gen_range(0..3) {
            0 => {}
            1 => policy.set_mode(t, DeidMode::Mask).unwrap(),
            _ => {
                let dict: Vec<String> = (0..rng.gen_range(1..4)).map(|k| format!("{t}{k}")).collect();
                policy.set_mode(t, DeidMode::Substitute(dict)).unwrap();
            }
        }
    }
    (text, annotations, policy)
}

/// The overfit setup: ten sentences, train = val, lr 1e-3, batch 10, no
/// dropout. Returns the sentence exact-match rate and the epochs used.
pub fn overfit_run() -> (f64, usize) {
    let corpus = synthetic_corpus(10, 3);
    let config = ModelConfig {
        char_dim: 16,
        kernel_width: 2,
        num_filters: 25,
        lstm_state: 20,
        ..Default::default()
    };
    let model = NerModel::for_corpus(config, &corpus, synthetic_embeddings(16, 2), 42).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 10,
        max_epochs: 200,
        warmup_steps: 10,
        dropout: 0.0,
        patience: 200,
        ..Default::default()
    };
    let (model, history) = fit(model, &corpus, &corpus, &cfg).unwrap();
    (exact_match(&model, &corpus), history.epochs.len())
}

/// Trains on 500 synthetic sentences and returns entity micro-F1 on 100
/// held-out ones.
pub fn learnability_run(seed: u64) -> f64 {
    let train = synthetic_corpus(500, seed);
    let val = synthetic_corpus(100, seed + 1000);
    let test = synthetic_corpus(100, seed + 2000);
    let config = ModelConfig {
        char_dim: 16,
        kernel_width: 3,
        num_filters: 50,
        lstm_state: 25,
        ..Default::default()
    };
    let model = NerModel::for_corpus(config, &train, synthetic_embeddings(16, seed), seed).unwrap();
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        batch_size: 16,
        max_epochs: 30,
        warmup_steps: 30,
        dropout: 0.3,
        patience: 8,
        seed,
        ..Default::default()
    };
    let (model, _) = fit(model, &train, &val, &cfg).unwrap();
    let gold: Vec<Vec<String>> = test
        .sentences
        .iter()
        .map(|s| s.tags().unwrap().into_iter().map(str::to_string).collect())
        .collect();
    let pred: Vec<Vec<String>> = test.sentences.iter().map(|s| model.predict_tags(s)).collect();
    medner::eval::EvalReport::from_sequences(&gold, &pred, Scheme::Iob2).unwrap().micro_f1
}
