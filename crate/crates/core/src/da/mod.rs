//! Decomposable attention classifier over sentence pairs.

mod io;
mod model;
mod train;
pub mod vocab;

use serde::{Deserialize, Serialize};

pub use io::{
    explain, load_checkpoint, load_embeddings, predict, save_checkpoint, Alignment, Prediction, TrainedModel,
};
pub use model::{Attention, DaGrads, DaModel, EncodedPair, PairCache};
pub use train::{evaluate_model, fit, train, LogRecord, TrainOutcome};
pub use vocab::Vocab;

use crate::nn::OptimizerKind;

/// Hyperparameters of the classifier and its training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaConfig {
    pub max_len: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    /// Hidden layers per network; each network also has an output layer.
    pub hidden_layers: usize,
    pub dropout_f: f64,
    pub dropout_g: f64,
    pub dropout_h: f64,
    pub layer_norm: bool,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub steps: usize,
    /// Dev evaluation interval in steps (0 disables periodic evaluation).
    pub eval_every: usize,
    /// Training-loss logging interval in steps.
    pub log_every: usize,
    pub min_freq: usize,
    pub seed: u64,
}

impl Default for DaConfig {
    fn default() -> Self {
        Self {
            max_len: 50,
            embedding_dim: 100,
            hidden_dim: 200,
            hidden_layers: 1,
            dropout_f: 0.68,
            dropout_g: 0.14,
            dropout_h: 0.44,
            layer_norm: true,
            learning_rate: 0.0018,
            optimizer: OptimizerKind::Adam,
            batch_size: 64,
            steps: 300_000,
            eval_every: 1000,
            log_every: 100,
            min_freq: 2,
            seed: 0,
        }
    }
}

impl DaConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: String| Err(crate::Error::InvalidConfig(m));
        if self.max_len == 0 || self.embedding_dim == 0 || self.hidden_dim == 0 || self.batch_size == 0 {
            return bad("max_len, embedding_dim, hidden_dim and batch_size must be positive".into());
        }
        for (name, p) in [
            ("dropout_f", self.dropout_f),
            ("dropout_g", self.dropout_g),
            ("dropout_h", self.dropout_h),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1)"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate = {}", self.learning_rate));
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        Ok(())
    }
}
