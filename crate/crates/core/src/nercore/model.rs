use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::crf::{crf_log_partition, crf_marginals, crf_nll_with_grad, crf_score_sequence, crf_viterbi};
use super::layers::{
    bilstm_backward, bilstm_forward, char_cnn_backward, char_cnn_forward, emission_backward, emission_scores,
    BiLstmCache, CharCnnCache, CharCnnParams, LstmParams,
};
use super::tensor::Tensor;
use super::ModelConfig;
use crate::corpus::{LabelSchema, Scheme, Sentence, TransitionMask, Vocabulary};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

/// Score given to illegal transitions during training.
pub const MASK_SCORE: f64 = -1e4;

/// Every trainable tensor of the tagger.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub char_cnn: Option<CharCnnParams>,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    /// `|tags| × 2S`
    pub emit_w: Tensor,
    /// `1 × |tags|`
    pub emit_b: Tensor,
    /// `(|tags| + 2)²`, START and STOP last
    pub transitions: Tensor,
    /// `|words| × word_dim`, added to the frozen vectors when present
    pub word_delta: Option<Tensor>,
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let scale = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::uniform(rows, cols, scale, rng)
}

fn lstm_init<R: Rng>(input: usize, state: usize, rng: &mut R) -> LstmParams {
    let mut bias = Tensor::zeros(1, 4 * state);
    for j in state..2 * state {
        bias.set(0, j, 1.0);
    }
    LstmParams {
        w_ih: glorot(4 * state, input, rng),
        w_hh: glorot(4 * state, state, rng),
        bias,
    }
}

impl ModelParams {
    pub fn init<R: Rng>(
        config: &ModelConfig,
        word_dim: usize,
        num_words: usize,
        num_chars: usize,
        num_tags: usize,
        rng: &mut R,
    ) -> Self {
        let char_cnn = config.use_char_cnn.then(|| CharCnnParams {
            embedding: Tensor::uniform(num_chars, config.char_dim, (3.0 / config.char_dim as f64).sqrt(), rng),
            filters: glorot(config.num_filters, config.kernel_width * config.char_dim, rng),
            bias: Tensor::zeros(1, config.num_filters),
            kernel_width: config.kernel_width,
        });
        let input = word_dim + if config.use_char_cnn { config.num_filters } else { 0 };
        let s = config.lstm_state;
        let lstm_fwd = lstm_init(input, s, rng);
        let lstm_bwd = lstm_init(input, s, rng);
        let emit_w = glorot(num_tags, 2 * s, rng);
        let transitions = Tensor::uniform(num_tags + 2, num_tags + 2, 0.1, rng);
        ModelParams {
            char_cnn,
            lstm_fwd,
            lstm_bwd,
            emit_w,
            emit_b: Tensor::zeros(1, num_tags),
            transitions,
            word_delta: config.train_word_delta.then(|| Tensor::zeros(num_words, word_dim)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.fill(0.0));
        z
    }

    /// Tensors in a fixed order with stable names.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = Vec::new();
        if let Some(c) = &self.char_cnn {
            out.push(("char.embedding", &c.embedding));
            out.push(("char.filters", &c.filters));
            out.push(("char.bias", &c.bias));
        }
        out.extend([
            ("lstm.fwd.w_ih", &self.lstm_fwd.w_ih),
            ("lstm.fwd.w_hh", &self.lstm_fwd.w_hh),
            ("lstm.fwd.bias", &self.lstm_fwd.bias),
            ("lstm.bwd.w_ih", &self.lstm_bwd.w_ih),
            ("lstm.bwd.w_hh", &self.lstm_bwd.w_hh),
            ("lstm.bwd.bias", &self.lstm_bwd.bias),
            ("emit.w", &self.emit_w),
            ("emit.b", &self.emit_b),
            ("crf.transitions", &self.transitions),
        ]);
        if let Some(d) = &self.word_delta {
            out.push(("word.delta", d));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = Vec::new();
        if let Some(c) = &mut self.char_cnn {
            out.push(("char.embedding", &mut c.embedding));
            out.push(("char.filters", &mut c.filters));
            out.push(("char.bias", &mut c.bias));
        }
        out.extend([
            ("lstm.fwd.w_ih", &mut self.lstm_fwd.w_ih),
            ("lstm.fwd.w_hh", &mut self.lstm_fwd.w_hh),
            ("lstm.fwd.bias", &mut self.lstm_fwd.bias),
            ("lstm.bwd.w_ih", &mut self.lstm_bwd.w_ih),
            ("lstm.bwd.w_hh", &mut self.lstm_bwd.w_hh),
            ("lstm.bwd.bias", &mut self.lstm_bwd.bias),
            ("emit.w", &mut self.emit_w),
            ("emit.b", &mut self.emit_b),
            ("crf.transitions", &mut self.transitions),
        ]);
        if let Some(d) = &mut self.word_delta {
            out.push(("word.delta", d));
        }
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&'static str, &mut Tensor)) {
        for (name, t) in self.named_mut() {
            f(name, t);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.named().iter().map(|(_, t)| t.squared_norm()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.for_each_mut(|_, t| t.scale(s));
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}

/// Keys the deterministic dropout stream for one sentence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutPlan {
    pub rate: f64,
    pub seed: u64,
    pub step: u64,
    pub sentence: u64,
}

impl DropoutPlan {
    /// Inverted-dropout multipliers for `n` vectors of length `dim`.
    fn masks(&self, layer: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
        let mut key = [0u8; 32];
        for (chunk, v) in key.chunks_exact_mut(8).zip([self.seed, self.step, self.sentence, layer]) {
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        let keep = 1.0 / (1.0 - self.rate);
        (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { keep })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    Train(DropoutPlan),
}

/// Intermediates kept by [`NerModel::forward`] for the backward pass.
pub struct ForwardCache {
    word_ids: Vec<usize>,
    chars: Vec<Option<CharCnnCache>>,
    input_masks: Option<Vec<Vec<f64>>>,
    lstm: BiLstmCache,
    hidden_masks: Option<Vec<Vec<f64>>>,
    hidden: Vec<Vec<f64>>,
}

/// Decoded tags for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tag_ids: Vec<usize>,
    pub tags: Vec<String>,
    /// Posterior marginal of the chosen tag at each position.
    pub confidences: Vec<f64>,
    /// Full `N × |tags|` posterior table.
    pub marginals: Tensor,
}

/// A tagger together with everything needed to featurise raw tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct NerModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    schema: LabelSchema,
    vocab: Vocabulary,
    embeddings: EmbeddingTable,
    mask: TransitionMask,
}

fn apply_masks(vectors: &mut [Vec<f64>], masks: &Option<Vec<Vec<f64>>>) {
    if let Some(masks) = masks {
        for (v, m) in vectors.iter_mut().zip(masks) {
            for (x, k) in v.iter_mut().zip(m) {
                *x *= k;
            }
        }
    }
}

impl NerModel {
    pub fn new(
        config: ModelConfig,
        schema: LabelSchema,
        vocab: Vocabulary,
        embeddings: EmbeddingTable,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(
            &config,
            embeddings.dimension(),
            vocab.num_words(),
            vocab.num_chars(),
            schema.num_tags(),
            &mut rng,
        );
        Self::from_parts(config, schema, vocab, embeddings, params)
    }

    /// Builds the vocabulary from `corpus` and initialises fresh weights.
    pub fn for_corpus(
        config: ModelConfig,
        corpus: &crate::corpus::Corpus,
        embeddings: EmbeddingTable,
        seed: u64,
    ) -> Result<Self> {
        let vocab = Vocabulary::build(corpus, config.min_count);
        Self::new(config, corpus.schema.clone(), vocab, embeddings, seed)
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        schema: LabelSchema,
        vocab: Vocabulary,
        embeddings: EmbeddingTable,
        mut params: ModelParams,
    ) -> Result<Self> {
        let mask = schema.transition_mask_for(Scheme::Iob2);
        let t = mask.size();
        if params.transitions.shape() != (t, t) {
            return Err(Error::ShapeMismatch {
                name: "crf.transitions".into(),
                expected: format!("{t}x{t}"),
                found: format!("{}x{}", params.transitions.rows(), params.transitions.cols()),
            });
        }
        for i in 0..t {
            for j in 0..t {
                if !mask.allowed(i, j) {
                    params.transitions.set(i, j, MASK_SCORE);
                }
            }
        }
        Ok(NerModel {
            config,
            params,
            schema,
            vocab,
            embeddings,
            mask,
        })
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn mask(&self) -> &TransitionMask {
        &self.mask
    }

    pub fn num_tags(&self) -> usize {
        self.schema.num_tags()
    }

    /// Transitions with illegal entries pinned to [`MASK_SCORE`].
    pub fn scoring_transitions(&self) -> Tensor {
        self.masked_transitions(MASK_SCORE)
    }

    fn masked_transitions(&self, value: f64) -> Tensor {
        let mut tr = self.params.transitions.clone();
        let t = self.mask.size();
        for i in 0..t {
            for j in 0..t {
                if !self.mask.allowed(i, j) {
                    tr.set(i, j, value);
                }
            }
        }
        tr
    }

    fn word_vector(&self, word: &str, id: usize) -> Vec<f64> {
        let mut v = self.embeddings.lookup(word).to_vec();
        if let Some(delta) = &self.params.word_delta {
            for (x, d) in v.iter_mut().zip(delta.row(id)) {
                *x += d;
            }
        }
        v
    }

    /// Emission scores (`N × |tags|`) and the cache for [`Self::backward_sentence`].
    pub fn forward(&self, words: &[&str], mode: Mode) -> (Tensor, ForwardCache) {
        let word_ids: Vec<usize> = words.iter().map(|w| self.vocab.word_id(w)).collect();
        let mut chars = Vec::with_capacity(words.len());
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(words.len());
        for (w, &id) in words.iter().zip(&word_ids) {
            let mut x = self.word_vector(w, id);
            match &self.params.char_cnn {
                Some(cnn) => {
                    let ids: Vec<usize> = w.chars().map(|c| self.vocab.char_id(c)).collect();
                    let (feat, cache) = char_cnn_forward(cnn, &ids);
                    x.extend(feat);
                    chars.push(Some(cache));
                }
                None => chars.push(None),
            }
            inputs.push(x);
        }
        let plan = match mode {
            Mode::Train(p) if p.rate > 0.0 => Some(p),
            _ => None,
        };
        let input_masks = plan.map(|p| p.masks(0, inputs.len(), inputs.first().map_or(0, Vec::len)));
        apply_masks(&mut inputs, &input_masks);
        let (mut hidden, lstm) = bilstm_forward(&self.params.lstm_fwd, &self.params.lstm_bwd, &inputs);
        let hidden_masks = plan.map(|p| p.masks(1, hidden.len(), 2 * self.config.lstm_state));
        apply_masks(&mut hidden, &hidden_masks);
        let emissions = emission_scores(&self.params.emit_w, &self.params.emit_b, &hidden);
        let cache = ForwardCache {
            word_ids,
            chars,
            input_masks,
            lstm,
            hidden_masks,
            hidden,
        };
        (emissions, cache)
    }

    /// Emission scores in evaluation mode.
    pub fn emissions(&self, words: &[&str]) -> Tensor {
        self.forward(words, Mode::Eval).0
    }

    fn gold_path(&self, sentence: &Sentence, label: &str) -> Result<Vec<usize>> {
        let tags = sentence
            .tags()
            .ok_or_else(|| Error::Validation(format!("sentence {label} is not tagged")))?;
        let path = tags
            .iter()
            .map(|t| {
                self.schema.tag_index(t).ok_or_else(|| {
                    Error::Validation(format!("sentence {label} has tag `{t}` outside the schema"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if !self.mask.accepts(&path) {
            return Err(Error::Validation(format!(
                "sentence {label} has a tag sequence forbidden by the transition mask"
            )));
        }
        Ok(path)
    }

    /// Summed negative log-likelihood of the gold paths (evaluation mode).
    pub fn crf_nll(&self, batch: &[Sentence]) -> Result<f64> {
        let trans = self.scoring_transitions();
        let mut total = 0.0;
        for (k, s) in batch.iter().enumerate() {
            if s.is_empty() {
                continue;
            }
            let gold = self.gold_path(s, &sentence_label(s, k))?;
            let emissions = self.emissions(&s.words());
            total += (crf_log_partition(&emissions, &trans) - crf_score_sequence(&emissions, &trans, &gold)).max(0.0);
        }
        Ok(total)
    }

    /// Loss and exact gradients for a batch in evaluation mode.
    pub fn model_backward(&self, batch: &[Sentence]) -> Result<(f64, ModelParams)> {
        let refs: Vec<&Sentence> = batch.iter().collect();
        self.backward_with(&refs, |_| Mode::Eval)
    }

    /// Loss and gradients with a caller-chosen mode per batch position.
    pub fn backward_with(&self, batch: &[&Sentence], mode_for: impl Fn(usize) -> Mode) -> Result<(f64, ModelParams)> {
        let trans = self.scoring_transitions();
        let mut grad = self.params.zeros_like();
        let mut total = 0.0;
        for (k, s) in batch.iter().enumerate() {
            if s.is_empty() {
                continue;
            }
            let gold = self.gold_path(s, &sentence_label(s, k))?;
            total += self.backward_sentence(&s.words(), &gold, &trans, mode_for(k), &mut grad);
        }
        Ok((total, grad))
    }

    fn backward_sentence(
        &self,
        words: &[&str],
        gold: &[usize],
        trans: &Tensor,
        mode: Mode,
        grad: &mut ModelParams,
    ) -> f64 {
        let p = &self.params;
        let (emissions, cache) = self.forward(words, mode);
        let (loss, d_emit, mut d_trans) = crf_nll_with_grad(&emissions, trans, gold);
        let t = self.mask.size();
        for i in 0..t {
            for j in 0..t {
                if !self.mask.allowed(i, j) {
                    d_trans.set(i, j, 0.0);
                }
            }
        }
        grad.transitions.add_assign(&d_trans);
        let mut dh = emission_backward(
            &p.emit_w,
            &emissions,
            &cache.hidden,
            &d_emit,
            &mut grad.emit_w,
            &mut grad.emit_b,
        );
        apply_masks(&mut dh, &cache.hidden_masks);
        let mut dx = bilstm_backward(
            &p.lstm_fwd,
            &p.lstm_bwd,
            &cache.lstm,
            &dh,
            &mut grad.lstm_fwd,
            &mut grad.lstm_bwd,
        );
        apply_masks(&mut dx, &cache.input_masks);
        let word_dim = self.embeddings.dimension();
        for (i, d) in dx.iter().enumerate() {
            if let Some(delta) = &mut grad.word_delta {
                for (g, v) in delta.row_mut(cache.word_ids[i]).iter_mut().zip(&d[..word_dim]) {
                    *g += v;
                }
            }
            if let (Some(cnn), Some(c), Some(g)) = (&p.char_cnn, &cache.chars[i], &mut grad.char_cnn) {
                char_cnn_backward(cnn, c, &d[word_dim..], g);
            }
        }
        loss
    }

    /// Viterbi tags under the hard transition mask, plus marginals.
    pub fn predict(&self, sentence: &Sentence) -> Prediction {
        self.predict_words(&sentence.words())
    }

    pub fn predict_words(&self, words: &[&str]) -> Prediction {
        let t = self.num_tags();
        if words.is_empty() {
            return Prediction {
                tag_ids: Vec::new(),
                tags: Vec::new(),
                confidences: Vec::new(),
                marginals: Tensor::zeros(0, t),
            };
        }
        let emissions = self.emissions(words);
        let trans = self.masked_transitions(f64::NEG_INFINITY);
        let (tag_ids, _) = crf_viterbi(&emissions, &trans);
        let marginals = crf_marginals(&emissions, &trans);
        let confidences = tag_ids.iter().enumerate().map(|(i, &y)| marginals.get(i, y)).collect();
        let tags = tag_ids.iter().map(|&y| self.schema.tag_name(y).to_string()).collect();
        Prediction {
            tag_ids,
            tags,
            confidences,
            marginals,
        }
    }

    /// Predicted tag strings only.
    pub fn predict_tags(&self, sentence: &Sentence) -> Vec<String> {
        self.predict(sentence).tags
    }
}

fn sentence_label(s: &Sentence, k: usize) -> String {
    format!("#{k} ({}:{})", s.doc_id, s.sent_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, LabelSchema};
    use crate::embeddings::OovPolicy;

    fn tiny() -> (NerModel, Vec<Sentence>) {
        let schema = LabelSchema::new(&["X", "Y"], Scheme::Iob2).unwrap();
        let sentences = vec![
            Sentence::from_tagged(&[("aa", "B-X"), ("b", "I-X"), ("c", "O")]),
            Sentence::from_tagged(&[("dd", "O"), ("aa", "B-Y")]),
        ];
        let corpus = Corpus::new(sentences.clone(), schema);
        let table = EmbeddingTable::from_rows(
            3,
            vec![
                ("aa".to_string(), vec![0.1, -0.2, 0.3]),
                ("c".to_string(), vec![0.5, 0.0, -0.4]),
            ],
            OovPolicy::UnkRow,
        )
        .unwrap();
        let config = ModelConfig {
            char_dim: 2,
            num_filters: 3,
            lstm_state: 4,
            train_word_delta: true,
            ..Default::default()
        };
        (NerModel::for_corpus(config, &corpus, table, 7).unwrap(), sentences)
    }

    #[test]
    fn eval_mode_is_deterministic_and_shaped() {
        let (m, s) = tiny();
        let a = m.emissions(&s[0].words());
        let b = m.emissions(&s[0].words());
        assert_eq!(a, b);
        assert_eq!(a.shape(), (3, 5));
        assert!(a.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn zero_dropout_matches_eval() {
        let (m, s) = tiny();
        let plan = DropoutPlan {
            rate: 0.0,
            seed: 1,
            step: 3,
            sentence: 0,
        };
        let words = s[0].words();
        assert_eq!(m.forward(&words, Mode::Train(plan)).0, m.emissions(&words));
        let noisy = DropoutPlan { rate: 0.5, ..plan };
        assert_ne!(m.forward(&words, Mode::Train(noisy)).0, m.emissions(&words));
        assert_eq!(
            m.forward(&words, Mode::Train(noisy)).0,
            m.forward(&words, Mode::Train(noisy)).0
        );
    }

    #[test]
    fn unused_character_has_zero_gradient() {
        let (m, s) = tiny();
        let (_, g) = m.model_backward(&s[..1]).unwrap();
        let d = m.vocab().char_id('d');
        let emb = &g.char_cnn.as_ref().unwrap().embedding;
        assert!(emb.row(d).iter().all(|v| *v == 0.0));
        let a = m.vocab().char_id('a');
        assert!(emb.row(a).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn duplicated_batch_doubles_gradients() {
        let (m, s) = tiny();
        let (l1, mut g1) = m.model_backward(&s).unwrap();
        let doubled: Vec<Sentence> = s.iter().chain(s.iter()).cloned().collect();
        let (l2, g2) = m.model_backward(&doubled).unwrap();
        assert!((2.0 * l1 - l2).abs() < 1e-12);
        g1.scale(2.0);
        for ((_, a), (_, b)) in g1.named().into_iter().zip(g2.named()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn nll_is_non_negative_and_matches_backward() {
        let (m, s) = tiny();
        let nll = m.crf_nll(&s).unwrap();
        assert!(nll >= 0.0);
        assert!((m.model_backward(&s).unwrap().0 - nll).abs() < 1e-12);
    }

    #[test]
    fn forbidden_gold_names_the_sentence() {
        let (m, _) = tiny();
        let bad = vec![Sentence::from_tagged(&[("aa", "O"), ("b", "I-X")])];
        let err = m.crf_nll(&bad).unwrap_err().to_string();
        assert!(err.contains("#0"), "{err}");
    }

    #[test]
    fn predictions_respect_the_mask() {
        let (m, s) = tiny();
        for sent in &s {
            let p = m.predict(sent);
            assert_eq!(p.tags.len(), sent.len());
            assert!(m.mask().accepts(&p.tag_ids));
            for (i, c) in p.confidences.iter().enumerate() {
                assert!((0.0..=1.0).contains(c));
                let row: f64 = p.marginals.row(i).iter().sum();
                assert!((row - 1.0).abs() < 1e-12);
            }
        }
        assert!(m.predict_words(&[]).tags.is_empty());
    }
}
