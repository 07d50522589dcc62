//! Linear-chain CRF inference over emission and transition scores.
//!
//! Emissions are `N × T`. Transitions are `(T + 2) × (T + 2)`; index `T` is
//! the virtual START state and `T + 1` is STOP. Rows are the source tag and
//! columns the destination. All recursions run in log space.

use super::tensor::{log_sum_exp, Tensor};

fn check_shapes(emissions: &Tensor, transitions: &Tensor) -> usize {
    let t = emissions.cols();
    assert!(emissions.rows() > 0, "CRF needs at least one position");
    assert_eq!(
        transitions.shape(),
        (t + 2, t + 2),
        "transitions must be (T + 2) x (T + 2)"
    );
    t
}

/// `T[START, y₁] + Σ E[i, yᵢ] + Σ T[yᵢ, yᵢ₊₁] + T[y_N, STOP]`
pub fn crf_score_sequence(emissions: &Tensor, transitions: &Tensor, path: &[usize]) -> f64 {
    let t = check_shapes(emissions, transitions);
    assert_eq!(path.len(), emissions.rows(), "path length must equal N");
    let mut score = transitions.get(t, path[0]);
    let mut prev = path[0];
    score += emissions.get(0, prev);
    for (i, &y) in path.iter().enumerate().skip(1) {
        score += transitions.get(prev, y) + emissions.get(i, y);
        prev = y;
    }
    score + transitions.get(prev, t + 1)
}

/// Forward (alpha) and backward (beta) log-space tables.
struct Lattice {
    alpha: Tensor,
    beta: Tensor,
    log_z: f64,
}

fn forward(emissions: &Tensor, transitions: &Tensor) -> (Tensor, f64) {
    let t = check_shapes(emissions, transitions);
    let n = emissions.rows();
    let mut alpha = Tensor::zeros(n, t);
    for j in 0..t {
        alpha.set(0, j, transitions.get(t, j) + emissions.get(0, j));
    }
    let mut buf = vec![0.0; t];
    for i in 1..n {
        for j in 0..t {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = alpha.get(i - 1, k) + transitions.get(k, j);
            }
            alpha.set(i, j, log_sum_exp(&buf) + emissions.get(i, j));
        }
    }
    for (k, b) in buf.iter_mut().enumerate() {
        *b = alpha.get(n - 1, k) + transitions.get(k, t + 1);
    }
    (alpha, log_sum_exp(&buf))
}

fn lattice(emissions: &Tensor, transitions: &Tensor) -> Lattice {
    let (alpha, log_z) = forward(emissions, transitions);
    let t = emissions.cols();
    let n = emissions.rows();
    let mut beta = Tensor::zeros(n, t);
    for j in 0..t {
        beta.set(n - 1, j, transitions.get(j, t + 1));
    }
    let mut buf = vec![0.0; t];
    for i in (0..n - 1).rev() {
        for j in 0..t {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = transitions.get(j, k) + emissions.get(i + 1, k) + beta.get(i + 1, k);
            }
            beta.set(i, j, log_sum_exp(&buf));
        }
    }
    Lattice { alpha, beta, log_z }
}

/// Log of the sum over all tag paths of `exp(score)`.
pub fn crf_log_partition(emissions: &Tensor, transitions: &Tensor) -> f64 {
    forward(emissions, transitions).1
}

/// Best path and its score.
///
/// Among equally scored paths the lexicographically smallest wins: best
/// suffix scores are computed right to left, then tags are chosen left to
/// right taking the lowest index that attains the maximum.
pub fn crf_viterbi(emissions: &Tensor, transitions: &Tensor) -> (Vec<usize>, f64) {
    let t = check_shapes(emissions, transitions);
    let n = emissions.rows();
    // suffix[i][j]: best score of positions i..N given y_i = j, including
    // the emission at i and the transition into STOP.
    let mut suffix = Tensor::zeros(n, t);
    for j in 0..t {
        suffix.set(n - 1, j, emissions.get(n - 1, j) + transitions.get(j, t + 1));
    }
    for i in (0..n - 1).rev() {
        for j in 0..t {
            let mut best = f64::NEG_INFINITY;
            for k in 0..t {
                best = best.max(transitions.get(j, k) + suffix.get(i + 1, k));
            }
            suffix.set(i, j, emissions.get(i, j) + best);
        }
    }
    let mut path = Vec::with_capacity(n);
    let pick = |scores: &mut dyn Iterator<Item = f64>| -> (usize, f64) {
        let mut arg = 0;
        let mut best = f64::NEG_INFINITY;
        for (k, s) in scores.enumerate() {
            if s > best {
                best = s;
                arg = k;
            }
        }
        (arg, best)
    };
    let (first, best_score) = pick(&mut (0..t).map(|j| transitions.get(t, j) + suffix.get(0, j)));
    path.push(first);
    for i in 1..n {
        let prev = path[i - 1];
        let (k, _) = pick(&mut (0..t).map(|k| transitions.get(prev, k) + suffix.get(i, k)));
        path.push(k);
    }
    (path, best_score)
}

/// Posterior marginals `p(yᵢ = t)`; each row sums to one.
pub fn crf_marginals(emissions: &Tensor, transitions: &Tensor) -> Tensor {
    let lat = lattice(emissions, transitions);
    marginals_from(&lat)
}

fn marginals_from(lat: &Lattice) -> Tensor {
    let (n, t) = lat.alpha.shape();
    let mut m = Tensor::zeros(n, t);
    for i in 0..n {
        for j in 0..t {
            m.set(i, j, (lat.alpha.get(i, j) + lat.beta.get(i, j) - lat.log_z).exp().min(1.0));
        }
    }
    m
}

/// Negative log-likelihood of `gold` with gradients.
///
/// Returns `(logZ − score(gold), ∂/∂emissions, ∂/∂transitions)`. Emission
/// gradients are marginals minus the gold indicator; transition gradients
/// are expected bigram counts minus gold bigram counts.
pub fn crf_nll_with_grad(emissions: &Tensor, transitions: &Tensor, gold: &[usize]) -> (f64, Tensor, Tensor) {
    let t = check_shapes(emissions, transitions);
    let n = emissions.rows();
    let lat = lattice(emissions, transitions);
    let gold_score = crf_score_sequence(emissions, transitions, gold);
    // rounding can push a certain path slightly below zero
    let loss = (lat.log_z - gold_score).max(0.0);

    let mut d_emit = marginals_from(&lat);
    let mut d_trans = Tensor::zeros(t + 2, t + 2);
    for j in 0..t {
        d_trans.add_at(t, j, d_emit.get(0, j));
        d_trans.add_at(j, t + 1, d_emit.get(n - 1, j));
    }
    for i in 0..n - 1 {
        for j in 0..t {
            let a = lat.alpha.get(i, j) - lat.log_z;
            for k in 0..t {
                let p = (a + transitions.get(j, k) + emissions.get(i + 1, k) + lat.beta.get(i + 1, k)).exp();
                d_trans.add_at(j, k, p);
            }
        }
    }
    d_trans.add_at(t, gold[0], -1.0);
    for (i, &y) in gold.iter().enumerate() {
        d_emit.add_at(i, y, -1.0);
        if i + 1 < n {
            d_trans.add_at(y, gold[i + 1], -1.0);
        }
    }
    d_trans.add_at(gold[n - 1], t + 1, -1.0);
    (loss, d_emit, d_trans)
}
