use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{DropoutPlan, Mode, ModelParams, NerModel};
use super::{ModelConfig, TrainConfig};
use crate::corpus::{Corpus, Scheme};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{entity_match_counts, mentions_from_tags, micro_f1};

/// Adam with bias correction. Moments are shaped like the parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: u64,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, params: &mut ModelParams, grad: &ModelParams, lr: f64, config: &TrainConfig) {
        self.t += 1;
        let (b1, b2, eps) = (config.beta1, config.beta2, config.epsilon);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let groups = params
            .named_mut()
            .into_iter()
            .zip(grad.named())
            .zip(self.m.named_mut())
            .zip(self.v.named_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in groups {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut());
            for (((p, g), m), v) in iter {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// Optimizer state carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub optimizer: Adam,
    pub step: u64,
    pub best_metric: f64,
    pub epochs_since_improvement: usize,
    pub loss_history: Vec<f64>,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val_micro_f1: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serialises") + "\n")
            .collect()
    }
}

/// Entity micro-F1 of the model's predictions on `corpus`.
pub(crate) fn validation_f1(model: &NerModel, corpus: &Corpus) -> Result<f64> {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for (k, s) in corpus.sentences.iter().enumerate() {
        let tags = s
            .tags()
            .ok_or_else(|| Error::Validation(format!("validation sentence {k} is not tagged")))?;
        gold.extend(mentions_from_tags(k, &tags, Scheme::Iob2)?);
        pred.extend(mentions_from_tags(k, &model.predict(s).tags, Scheme::Iob2)?);
    }
    Ok(micro_f1(&entity_match_counts(&gold, &pred)))
}

/// Mini-batch Adam training with warmup, clipping and early stopping on
/// validation micro-F1. Returns the parameters of the best epoch.
pub fn fit(model: NerModel, train: &Corpus, val: &Corpus, config: &TrainConfig) -> Result<(NerModel, TrainHistory)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    let mut model = model;
    let mut best = model.params.clone();
    let mut history = TrainHistory::default();
    if config.max_epochs == 0 {
        history.best_val_micro_f1 = validation_f1(&model, val)?;
        return Ok((model, history));
    }
    let mut state = TrainState {
        optimizer: Adam::new(&model.params),
        step: 0,
        best_metric: f64::NEG_INFINITY,
        epochs_since_improvement: 0,
        loss_history: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(config.batch_size) {
            state.step += 1;
            let step = state.step;
            let sentences: Vec<_> = batch.iter().map(|&i| &train.sentences[i]).collect();
            let (loss, mut grad) = model.backward_with(&sentences, |k| {
                Mode::Train(DropoutPlan {
                    rate: config.dropout,
                    seed: config.seed,
                    step,
                    sentence: batch[k] as u64,
                })
            })?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {loss} at step {step} (epoch {epoch})")));
            }
            let norm = grad.global_norm();
            if !norm.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient norm at step {step} (epoch {epoch})")));
            }
            if norm > config.grad_clip_norm {
                grad.scale(config.grad_clip_norm / norm);
            }
            lr = config.lr_at(step);
            state.optimizer.update(&mut model.params, &grad, lr, config);
            epoch_loss += loss;
        }
        if !model.params.is_finite() {
            return Err(Error::Numeric(format!("parameters became non-finite in epoch {epoch}")));
        }
        state.loss_history.push(epoch_loss);
        let f1 = validation_f1(&model, val)?;
        log::info!("epoch {epoch} step {} loss {epoch_loss:.6} val micro-F1 {f1:.4}", state.step);
        history.epochs.push(EpochRecord {
            epoch,
            step: state.step,
            lr,
            train_loss: epoch_loss,
            val_micro_f1: f1,
        });
        if epoch == 1 || f1 > state.best_metric {
            state.best_metric = f1;
            state.epochs_since_improvement = 0;
            history.best_epoch = epoch;
            history.best_val_micro_f1 = f1;
            best = model.params.clone();
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= config.patience {
                history.stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    model.params = best;
    Ok((model, history))
}

/// One configuration in a hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridPoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub struct GridResult {
    pub best: usize,
    /// Best validation micro-F1 per grid point, in grid order.
    pub scores: Vec<f64>,
    pub model: NerModel,
    pub history: TrainHistory,
}

/// Trains one model per grid point and keeps the best by validation
/// micro-F1; ties go to the lower learning rate, then the smaller model.
pub fn grid_search(grid: &[GridPoint], train: &Corpus, val: &Corpus, embeddings: &EmbeddingTable) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("hyperparameter grid is empty".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, usize, NerModel, TrainHistory)> = None;
    for (k, point) in grid.iter().enumerate() {
        let model = NerModel::for_corpus(point.model.clone(), train, embeddings.clone(), point.train.seed)?;
        let size = model.params.num_parameters();
        let (model, history) = fit(model, train, val, &point.train)?;
        let score = history.best_val_micro_f1;
        log::info!("grid point {k}: val micro-F1 {score:.4}");
        scores.push(score);
        let better = match &best {
            None => true,
            Some((b, b_size, _, _)) => {
                let (bs, blr) = (scores[*b], grid[*b].train.learning_rate);
                let lr = point.train.learning_rate;
                score > bs || (score == bs && (lr < blr || (lr == blr && size < *b_size)))
            }
        };
        if better {
            best = Some((k, size, model, history));
        }
    }
    let (best, _, model, history) = best.expect("grid is non-empty");
    Ok(GridResult {
        best,
        scores,
        model,
        history,
    })
}

/// Expands `key = v1, v2, ...` lines into the cartesian product over
/// `base`. Later keys vary fastest. `#` starts a comment.
pub fn parse_grid(text: &str, base: &GridPoint) -> Result<Vec<GridPoint>> {
    let mut points = vec![base.clone()];
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, values) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(k + 1, "expected `key = value, ...`"))?;
        let key = key.trim();
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::parse(k + 1, format!("no values for `{key}`")));
        }
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in &values {
                let mut q = p.clone();
                let known = q.model.set(key, v).map_err(|e| Error::parse(k + 1, e.to_string()))?
                    || q.train.set(key, v).map_err(|e| Error::parse(k + 1, e.to_string()))?;
                if !known {
                    return Err(Error::parse(k + 1, format!("unknown hyperparameter `{key}`")));
                }
                next.push(q);
            }
        }
        points = next;
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        // with bias correction the first update is lr * g / (|g| + eps)
        let cfg = TrainConfig::default();
        let base = ModelParams {
            char_cnn: None,
            lstm_fwd: crate::nercore::LstmParams {
                w_ih: crate::nercore::Tensor::zeros(4, 1),
                w_hh: crate::nercore::Tensor::zeros(4, 1),
                bias: crate::nercore::Tensor::zeros(1, 4),
            },
            lstm_bwd: crate::nercore::LstmParams {
                w_ih: crate::nercore::Tensor::zeros(4, 1),
                w_hh: crate::nercore::Tensor::zeros(4, 1),
                bias: crate::nercore::Tensor::zeros(1, 4),
            },
            emit_w: crate::nercore::Tensor::zeros(1, 2),
            emit_b: crate::nercore::Tensor::zeros(1, 1),
            transitions: crate::nercore::Tensor::zeros(3, 3),
            word_delta: None,
        };
        let mut p = base.clone();
        let mut g = base.zeros_like();
        g.emit_b.set(0, 0, 0.5);
        g.emit_w.set(0, 1, -3.0);
        let mut adam = Adam::new(&p);
        adam.update(&mut p, &g, 0.1, &cfg);
        assert!((p.emit_b.get(0, 0) + 0.1 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
        assert!((p.emit_w.get(0, 1) - 0.1 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(p.emit_w.get(0, 0), 0.0);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn grid_expansion() {
        let pts = parse_grid("lr = 0.1, 0.01\n# c\nkernel_width = 2,3,4\n", &GridPoint::default()).unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1].model.kernel_width, 3);
        assert_eq!(pts[3].train.learning_rate, 0.01);
        assert!(parse_grid("bogus = 1", &GridPoint::default()).is_err());
        assert!(parse_grid("lr = x", &GridPoint::default()).is_err());
        assert_eq!(parse_grid("", &GridPoint::default()).unwrap().len(), 1);
    }
}
