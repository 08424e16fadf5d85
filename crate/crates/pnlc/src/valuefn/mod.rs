//! Goal-conditioned Q and V networks, the expectile objective, and the
//! offline training loop.
//!
//! Q consumes `[state || thought || goal]` (3d), V consumes `[state || goal]`
//! (2d); both are 2-hidden-layer ReLU MLPs with a raw linear head. The output
//! is clamped to [0, 1] only by the critic layer, never here.

mod checkpoint;
mod data;
mod net;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, MetricsTail, ValueCheckpoint, CHECKPOINT_VERSION};
pub use data::{EmbeddedDataset, EmbeddedSample};
pub use net::{
    adamw_update, expectile_loss, expectile_loss_grad, expectile_regression_loss_grads, polyak,
    squared_error_loss_grads, AdamState, AdamW, DenseLayer, LayerGrads, Mlp, MlpGrads,
};
pub use train::{train_gciql, write_metrics_csv, EpochShuffler, IterationMetrics, TrainOutput};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::Embedding;

#[derive(Debug, Error)]
pub enum ValueFnError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter shape mismatch")]
    ShapeMismatch,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least {needed} samples for one batch, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("embedding fingerprint {got:?} does not match checkpoint fingerprint {expected:?}")]
    FingerprintMismatch { expected: String, got: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Training configuration; presets below mirror the published tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNetConfig {
    /// Embedding dimension.
    pub d: usize,
    /// Widths of the two hidden layers.
    pub hidden: (usize, usize),
    /// Expectile in [0.5, 1).
    pub tau: f64,
    /// Discount in (0, 1).
    pub gamma: f64,
    pub lr: f64,
    pub batch: usize,
    /// Target blend rate in (0, 1).
    pub polyak_alpha: f64,
    pub updates_per_iter: usize,
    pub iterations: usize,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    pub seed: u64,
    /// Goal-less ablation: the goal slot is fed a fixed constant vector.
    #[serde(default)]
    pub scalar_goal: bool,
}

impl ValueNetConfig {
    pub fn validate(&self) -> Result<(), ValueFnError> {
        let fail = |msg: &str| Err(ValueFnError::InvalidConfig(msg.into()));
        if self.d == 0 || self.hidden.0 == 0 || self.hidden.1 == 0 {
            return fail("dimensions must be positive");
        }
        if !(0.5..1.0).contains(&self.tau) {
            return fail("tau must be in [0.5, 1)");
        }
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return fail("gamma must be in (0, 1)");
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return fail("lr must be positive");
        }
        if self.batch == 0 {
            return fail("batch must be positive");
        }
        if !(0.0 < self.polyak_alpha && self.polyak_alpha < 1.0) {
            return fail("polyak_alpha must be in (0, 1)");
        }
        if self.updates_per_iter == 0 || self.iterations == 0 {
            return fail("updates_per_iter and iterations must be positive");
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be >= 0");
        }
        Ok(())
    }

    /// Published preset: hidden 64x64, alpha 0.005, lr 4e-4.
    pub fn webshop(d: usize) -> Self {
        Self::preset(d, (64, 64), 0.005, 4e-4)
    }

    /// Published preset: hidden 128x128, alpha 0.01, lr 8e-4.
    pub fn avalon(d: usize) -> Self {
        Self::preset(d, (128, 128), 0.01, 8e-4)
    }

    /// Published preset: hidden 128x128, alpha 0.005, lr 1e-4.
    pub fn persuasion(d: usize) -> Self {
        Self::preset(d, (128, 128), 0.005, 1e-4)
    }

    /// Synthetic-environment preset: the published 64x64 / tau 0.8 /
    /// gamma 0.99 / batch 32 / 50x100 schedule, with the blend rate and
    /// learning rate tuned for the small hash-embedded state spaces.
    pub fn keydoor(d: usize) -> Self {
        Self::preset(d, (64, 64), 0.02, 2e-3)
    }

    /// Same tuning as [`ValueNetConfig::keydoor`].
    pub fn donation(d: usize) -> Self {
        Self::preset(d, (64, 64), 0.02, 2e-3)
    }

    fn preset(d: usize, hidden: (usize, usize), polyak_alpha: f64, lr: f64) -> Self {
        Self {
            d,
            hidden,
            tau: 0.8,
            gamma: 0.99,
            lr,
            batch: 32,
            polyak_alpha,
            updates_per_iter: 50,
            iterations: 100,
            weight_decay: 0.01,
            seed: 0,
            scalar_goal: false,
        }
    }

    pub fn by_name(name: &str, d: usize) -> Option<Self> {
        match name {
            "webshop" => Some(Self::webshop(d)),
            "avalon" => Some(Self::avalon(d)),
            "persuasion" => Some(Self::persuasion(d)),
            "keydoor" => Some(Self::keydoor(d)),
            "donation" => Some(Self::donation(d)),
            _ => None,
        }
    }
}

/// Raw (unclamped) Q on a pre-assembled `[state || thought || goal]` input.
pub fn q_value_raw(ckpt: &ValueCheckpoint, input: &[f64]) -> Result<f64, ValueFnError> {
    ckpt.q.forward(input)
}

/// Raw Q for embedded state, thought, and goal. Fingerprints must match the
/// checkpoint's embedder fingerprint.
pub fn q_value(
    ckpt: &ValueCheckpoint,
    state: &Embedding,
    thought: &Embedding,
    goal: &Embedding,
) -> Result<f64, ValueFnError> {
    for e in [state, thought, goal] {
        if e.fingerprint != ckpt.embedder_fingerprint {
            return Err(ValueFnError::FingerprintMismatch {
                expected: ckpt.embedder_fingerprint.clone(),
                got: e.fingerprint.clone(),
            });
        }
    }
    let mut input = Vec::with_capacity(3 * ckpt.config.d);
    input.extend_from_slice(&state.values);
    input.extend_from_slice(&thought.values);
    input.extend_from_slice(&goal.values);
    ckpt.q.forward(&input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::hash_embed;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn quick_checkpoint(d: usize) -> ValueCheckpoint {
        let embeddings: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                e
            })
            .collect();
        let samples: Vec<EmbeddedSample> = (0..8)
            .map(|i| EmbeddedSample {
                state: i % 2,
                thought: 2,
                next_state: 3,
                goal: 3,
                reach_reward: 1.0,
                terminal: true,
            })
            .collect();
        let data = EmbeddedDataset::from_parts(d, &crate::embed::hash_fingerprint(d), embeddings, samples);
        let config = ValueNetConfig {
            d,
            hidden: (8, 8),
            tau: 0.8,
            gamma: 0.99,
            lr: 1e-3,
            batch: 8,
            polyak_alpha: 0.05,
            updates_per_iter: 2,
            iterations: 2,
            weight_decay: 0.0,
            seed: 5,
            scalar_goal: false,
        };
        train_gciql(&data, &config).unwrap().checkpoint
    }

    #[test]
    fn q_value_is_deterministic_and_checks_fingerprints() {
        let d = 16;
        let ckpt = quick_checkpoint(d);
        let s = hash_embed("state one", d);
        let t = hash_embed("do the thing", d);
        let g = hash_embed("the goal", d);
        let a = q_value(&ckpt, &s, &t, &g).unwrap();
        let b = q_value(&ckpt, &s, &t, &g).unwrap();
        assert_eq!(a, b);

        let wrong = hash_embed("state one", 2 * d);
        assert!(matches!(
            q_value(&ckpt, &wrong, &t, &g),
            Err(ValueFnError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn q_value_finite_on_random_unit_inputs() {
        let d = 16;
        let ckpt = quick_checkpoint(d);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let mk = |rng: &mut ChaCha20Rng| {
                let mut v: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
                Embedding {
                    values: v,
                    fingerprint: ckpt.embedder_fingerprint.clone(),
                }
            };
            let (s, t, g) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            assert!(q_value(&ckpt, &s, &t, &g).unwrap().is_finite());
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut c = ValueNetConfig::webshop(256);
        c.validate().unwrap();
        c.tau = 1.0;
        assert!(c.validate().is_err());
        c.tau = 0.3;
        assert!(c.validate().is_err());
        let mut c = ValueNetConfig::webshop(256);
        c.polyak_alpha = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn presets_match_published_tables() {
        let w = ValueNetConfig::webshop(256);
        assert_eq!(w.hidden, (64, 64));
        assert_eq!(w.polyak_alpha, 0.005);
        assert_eq!(w.lr, 4e-4);
        let a = ValueNetConfig::avalon(256);
        assert_eq!(a.hidden, (128, 128));
        assert_eq!(a.polyak_alpha, 0.01);
        assert_eq!(a.lr, 8e-4);
        let p = ValueNetConfig::persuasion(256);
        assert_eq!(p.hidden, (128, 128));
        assert_eq!(p.polyak_alpha, 0.005);
        assert_eq!(p.lr, 1e-4);
        for c in [&w, &a, &p] {
            assert_eq!(c.tau, 0.8);
            assert_eq!(c.gamma, 0.99);
            assert_eq!(c.batch, 32);
            assert_eq!(c.updates_per_iter, 50);
            assert_eq!(c.iterations, 100);
        }
    }
}
