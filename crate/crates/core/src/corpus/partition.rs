//! Deterministic train/validation/test splits and stratified k-fold.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Corpus;
use crate::error::{Error, Result};

/// Shuffles with `seed` and cuts the corpus by `ratios`.
///
/// Each split first gets `floor(ratio * n)` sentences; the remainder goes one
/// sentence at a time to the splits with the largest fractional parts (ties
/// to the earlier split).
pub fn split_corpus(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut remainder = n - sizes.iter().sum::<usize>();
    let mut by_fraction: Vec<usize> = (0..3).collect();
    by_fraction.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &k in by_fraction.iter().cycle() {
        if remainder == 0 {
            break;
        }
        sizes[k] += 1;
        remainder -= 1;
    }

    let train = corpus.select(&order[..sizes[0]]);
    let val = corpus.select(&order[sizes[0]..sizes[0] + sizes[1]]);
    let test = corpus.select(&order[sizes[0] + sizes[1]..]);
    Ok((train, val, test))
}

/// Stratified k-fold cross-validation.
///
/// Sentences are bucketed by the set of entity types they contain. Buckets
/// are visited in key order, each bucket shuffled with `seed`, and members
/// dealt round-robin across folds with one counter that carries over between
/// buckets. Returns `(train, test)` pairs.
pub fn stratified_kfold(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<(Corpus, Corpus)>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds corpus size {}",
            corpus.len()
        )));
    }
    let mut buckets: BTreeMap<BTreeSet<String>, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        buckets.entry(s.entity_types()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut next = 0;
    for members in buckets.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next % k].push(i);
            next += 1;
        }
    }
    Ok(folds
        .iter()
        .enumerate()
        .map(|(f, test)| {
            let mut test = test.clone();
            test.sort_unstable();
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            (corpus.select(&train), corpus.select(&test))
        })
        .collect())
}
