mod common;

use common::*;
use medner::chunking::{chunk_embedding, chunks_to_tags, decode_chunks, ConfidenceRule};
use medner::corpus::Sentence;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sentence(n: usize) -> Sentence {
    let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    Sentence::from_words(&words)
}

#[test]
fn exhaustive_round_trip_up_to_length_six() {
    let types = ["A", "B", "C"];
    let mut checked = 0;
    for n in 0..=6 {
        let s = sentence(n);
        let ones = vec![1.0; n];
        for tags in all_valid_iob2(n, &types) {
            let chunks = decode_chunks(&s, &tags, &ones, ConfidenceRule::Min).unwrap();
            let spans: Vec<_> = chunks.iter().map(|c| (c.first, c.last, c.entity_type.clone())).collect();
            assert_eq!(spans, brute_spans(&tags));
            assert_eq!(chunks_to_tags(&chunks, n).unwrap(), tags);
            checked += 1;
        }
    }
    // T(n) = 4 T(n-1) + 3 e(n-1), e(n) = T(n-1) + e(n-1), where e counts
    // sequences ending inside a given type: 1 + 4 + 19 + 91 + 436 + 2089 + 10009
    assert_eq!(checked, 12649);
}

#[test]
fn invalid_tags_are_rejected() {
    let s = sentence(2);
    assert!(decode_chunks(&s, &["O", "I-A"], &[1.0, 1.0], ConfidenceRule::Min).is_err());
    assert!(decode_chunks(&s, &["O"], &[1.0], ConfidenceRule::Min).is_err());
}

fn tags_and_marginals() -> impl Strategy<Value = (Vec<String>, Vec<f64>, u64)> {
    (1usize..10, any::<u64>()).prop_flat_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tags = random_iob2(&mut rng, n, &["A", "B"]);
        (Just(tags), prop::collection::vec(0.0f64..=1.0, n), Just(seed))
    })
}

proptest! {
    #[test]
    fn confidence_is_monotone_in_marginals((tags, probs, seed) in tags_and_marginals(), bump in 0.0f64..1.0) {
        let s = sentence(tags.len());
        let k = (seed as usize) % tags.len();
        let mut raised = probs.clone();
        raised[k] = (raised[k] + bump).min(1.0);
        for rule in [ConfidenceRule::Min, ConfidenceRule::GeometricMean] {
            let before = decode_chunks(&s, &tags, &probs, rule).unwrap();
            let after = decode_chunks(&s, &tags, &raised, rule).unwrap();
            for (a, b) in before.iter().zip(&after) {
                prop_assert!((0.0..=1.0).contains(&a.confidence));
                prop_assert!(b.confidence >= a.confidence);
            }
        }
    }

    #[test]
    fn chunk_embedding_has_table_dimension((tags, _probs, seed) in tags_and_marginals()) {
        let table = synthetic_embeddings(5, seed);
        let words: Vec<&str> = ["the", "patient", "zzz", "mg", "was", "unknownword", "daily", "no", "pain"]
            .iter().cycle().take(tags.len()).copied().collect();
        let s = Sentence::from_words(&words);
        let ones = vec![1.0; tags.len()];
        for c in decode_chunks(&s, &tags, &ones, ConfidenceRule::Min).unwrap() {
            let v = chunk_embedding(&table, &s, &c).unwrap();
            prop_assert_eq!(v.len(), 5);
            prop_assert!(v.iter().all(|x| x.is_finite()));
        }
    }
}
