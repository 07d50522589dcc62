mod common;

use common::*;
use medner::nercore::{crf_log_partition, crf_marginals, crf_nll_with_grad, crf_score_sequence, crf_viterbi, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_enumeration_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..300 {
        let n = rng.gen_range(1..=5);
        let t = rng.gen_range(1..=4);
        let (e, tr) = random_instance(n, t, &mut rng);
        let z = crf_log_partition(&e, &tr);
        assert!((z - brute_log_partition(&e, &tr)).abs() <= 1e-9);
        let (path, score) = crf_viterbi(&e, &tr);
        let (bpath, bscore) = brute_viterbi(&e, &tr);
        assert_eq!(path, bpath);
        assert!((score - bscore).abs() <= 1e-9);
        assert!((crf_score_sequence(&e, &tr, &path) - brute_score(&e, &tr, &path)).abs() <= 1e-12);
        let m = crf_marginals(&e, &tr);
        let bm = brute_marginals(&e, &tr);
        for i in 0..n {
            let sum: f64 = m.row(i).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            for j in 0..t {
                assert!((m.get(i, j) - bm[i][j]).abs() <= 1e-9);
                assert!((0.0..=1.0).contains(&m.get(i, j)));
            }
        }
    }
}

#[test]
fn viterbi_tie_break_on_integer_scores() {
    // small integer scores make exact ties common
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ties = 0;
    for _ in 0..300 {
        let n = rng.gen_range(1..=5);
        let t = rng.gen_range(1..=4);
        let int = |rng: &mut ChaCha8Rng, r, c| {
            Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1..=1) as f64).collect())
        };
        let e = int(&mut rng, n, t);
        let tr = int(&mut rng, t + 2, t + 2);
        let (path, score) = crf_viterbi(&e, &tr);
        let (bpath, bscore) = brute_viterbi(&e, &tr);
        assert_eq!((path, score), (bpath, bscore));
        let best = all_paths(n, t).iter().filter(|p| brute_score(&e, &tr, p) == bscore).count();
        if best > 1 {
            ties += 1;
        }
    }
    assert!(ties > 50, "fixture should exercise ties, saw {ties}");
}

#[test]
fn nll_gradient_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let n = rng.gen_range(1..=4);
        let t = rng.gen_range(1..=3);
        let (e, tr) = random_instance(n, t, &mut rng);
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..t)).collect();
        let (loss, de, dt) = crf_nll_with_grad(&e, &tr, &gold);
        let brute = |e: &Tensor, tr: &Tensor| brute_log_partition(e, tr) - brute_score(e, tr, &gold);
        assert!((loss - brute(&e, &tr)).abs() <= 1e-9);
        let h = 1e-6;
        for i in 0..n {
            for j in 0..t {
                let (mut a, mut b) = (e.clone(), e.clone());
                a.add_at(i, j, h);
                b.add_at(i, j, -h);
                let num = (brute(&a, &tr) - brute(&b, &tr)) / (2.0 * h);
                assert!((num - de.get(i, j)).abs() < 1e-7);
            }
        }
        for i in 0..t + 2 {
            for j in 0..t + 2 {
                let (mut a, mut b) = (tr.clone(), tr.clone());
                a.add_at(i, j, h);
                b.add_at(i, j, -h);
                let num = (brute(&e, &a) - brute(&e, &b)) / (2.0 * h);
                assert!((num - dt.get(i, j)).abs() < 1e-7);
            }
        }
    }
}

proptest! {
    #[test]
    fn gold_probability_is_a_probability(
        n in 1usize..=5,
        t in 1usize..=4,
        seed in any::<u64>(),
        spread in 0.1f64..20.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_tensor(n, t, -spread, spread, &mut rng);
        let tr = random_tensor(t + 2, t + 2, -spread, spread, &mut rng);
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..t)).collect();
        let (loss, _, _) = crf_nll_with_grad(&e, &tr, &gold);
        prop_assert!(loss >= 0.0);
        let p = (-loss).exp();
        let direct = crf_score_sequence(&e, &tr, &gold) - crf_log_partition(&e, &tr);
        prop_assert!((direct + loss).abs() <= 1e-9 * (1.0 + loss));
        prop_assert!(p > 0.0 && p <= 1.0);
        let m = crf_marginals(&e, &tr);
        for i in 0..n {
            let s: f64 = m.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }
}
