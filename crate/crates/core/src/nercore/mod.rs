//! BiLSTM-CNN-CRF tagger: layers, CRF inference, gradients, training and
//! model files.

mod crf;
mod io;
mod layers;
mod model;
mod tensor;
mod train;

pub use crf::{crf_log_partition, crf_marginals, crf_nll_with_grad, crf_score_sequence, crf_viterbi};
pub use io::{load_model, save_model, FORMAT_VERSION};
pub use layers::{
    bilstm_backward, bilstm_forward, char_cnn_backward, char_cnn_forward, emission_backward, emission_scores,
    lstm_backward, lstm_forward, BiLstmCache, CharCnnCache, CharCnnParams, LstmCache, LstmParams,
};
pub use model::{DropoutPlan, ForwardCache, Mode, ModelParams, NerModel, Prediction, MASK_SCORE};
pub use tensor::{log_sum_exp, sigmoid, Tensor};
pub use train::{
    fit, grid_search, parse_grid, Adam, EpochRecord, GridPoint, GridResult, TrainHistory, TrainState,
};

use crate::error::{Error, Result};

/// Architecture hyperparameters. The word dimension is taken from the
/// embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub char_dim: usize,
    pub kernel_width: usize,
    pub num_filters: usize,
    pub lstm_state: usize,
    pub use_char_cnn: bool,
    /// Learn an additive correction on top of the frozen word vectors.
    pub train_word_delta: bool,
    pub max_seq_length: usize,
    pub min_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            char_dim: 128,
            kernel_width: 2,
            num_filters: 25,
            lstm_state: 200,
            use_char_cnn: true,
            train_word_delta: false,
            max_seq_length: crate::corpus::MAX_SEQ_LENGTH,
            min_count: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("char_dim", self.char_dim),
            ("kernel_width", self.kernel_width),
            ("num_filters", self.num_filters),
            ("lstm_state", self.lstm_state),
            ("max_seq_length", self.max_seq_length),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Sets a field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "char_dim" => self.char_dim = parse_value(key, value)?,
            "kernel_width" => self.kernel_width = parse_value(key, value)?,
            "num_filters" => self.num_filters = parse_value(key, value)?,
            "lstm_state" => self.lstm_state = parse_value(key, value)?,
            "use_char_cnn" => self.use_char_cnn = parse_value(key, value)?,
            "train_word_delta" => self.train_word_delta = parse_value(key, value)?,
            "max_seq_length" => self.max_seq_length = parse_value(key, value)?,
            "min_count" => self.min_count = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub(crate) fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("char_dim", self.char_dim.to_string()),
            ("kernel_width", self.kernel_width.to_string()),
            ("num_filters", self.num_filters.to_string()),
            ("lstm_state", self.lstm_state.to_string()),
            ("use_char_cnn", self.use_char_cnn.to_string()),
            ("train_word_delta", self.train_word_delta.to_string()),
            ("max_seq_length", self.max_seq_length.to_string()),
            ("min_count", self.min_count.to_string()),
        ]
    }
}

/// Optimisation hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Zero is allowed and returns the initial model after one validation pass.
    pub max_epochs: usize,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Zero disables warmup.
    pub warmup_steps: usize,
    pub patience: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 30,
            dropout: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            warmup_steps: 3000,
            patience: 5,
            grad_clip_norm: 5.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }

    /// Learning rate at optimizer step `step` (1-based) under linear warmup.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * (step as f64 / self.warmup_steps as f64).min(1.0)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "learning_rate" | "lr" => self.learning_rate = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_epochs" | "epochs" => self.max_epochs = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "grad_clip_norm" => self.grad_clip_norm = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value `{value}` for `{key}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_hyperparameter_table() {
        let t = TrainConfig::default();
        assert_eq!(t.learning_rate, 1e-3);
        assert_eq!(t.batch_size, 64);
        assert_eq!(t.max_epochs, 30);
        assert_eq!(t.dropout, 0.5);
        assert_eq!(t.warmup_steps, 3000);
        assert_eq!((t.beta1, t.beta2, t.epsilon), (0.9, 0.999, 1e-8));
        let m = ModelConfig::default();
        assert_eq!((m.char_dim, m.kernel_width, m.lstm_state, m.max_seq_length), (128, 2, 200, 512));
    }

    #[test]
    fn warmup_schedule() {
        let mut t = TrainConfig {
            learning_rate: 0.1,
            warmup_steps: 4,
            ..Default::default()
        };
        assert!((t.lr_at(1) - 0.025).abs() < 1e-15);
        assert_eq!(t.lr_at(4), 0.1);
        assert_eq!(t.lr_at(100), 0.1);
        t.warmup_steps = 0;
        assert_eq!(t.lr_at(1), 0.1);
    }

    #[test]
    fn settings_by_key() {
        let mut t = TrainConfig::default();
        assert!(t.set("lr", "0.01").unwrap());
        assert!(!t.set("nope", "1").unwrap());
        assert!(t.set("batch_size", "x").is_err());
        assert_eq!(t.learning_rate, 0.01);
        t.dropout = 1.0;
        assert!(t.validate().is_err());
        let mut m = ModelConfig::default();
        assert!(m.set("use_char_cnn", "false").unwrap());
        assert!(!m.use_char_cnn);
    }
}
