//! The offline training loop: fitted Q with a bootstrapped squared-error
//! target and V fitted to the tau-expectile of the target Q, both updated by
//! AdamW with slowly blended target copies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::checkpoint::{MetricsTail, ValueCheckpoint, CHECKPOINT_VERSION};
use super::data::EmbeddedDataset;
use super::net::{
    adamw_update, expectile_regression_loss_grads, polyak, squared_error_loss_grads, AdamState,
    AdamW, Mlp,
};
use super::{ValueFnError, ValueNetConfig};

/// Epoch-shuffled minibatch schedule without replacement. When fewer than a
/// full batch remains in the epoch, the schedule reshuffles and starts a new
/// one, so every batch has exactly `batch` distinct indices.
pub struct EpochShuffler {
    indices: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha20Rng,
}

impl EpochShuffler {
    /// Seeded from stream 1 of the training seed, independent of the
    /// parameter-initialization stream.
    pub fn for_seed(n: usize, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self::new(n, batch, rng)
    }

    pub fn new(n: usize, batch: usize, rng: ChaCha20Rng) -> Self {
        assert!(batch >= 1 && batch <= n, "batch must be in 1..=n");
        let mut s = Self {
            indices: (0..n).collect(),
            pos: 0,
            batch,
            rng,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.indices.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos + self.batch > self.indices.len() {
            self.reshuffle();
        }
        let batch = &self.indices[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        batch
    }
}

/// Mean losses for one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub loss_q: f64,
    pub loss_v: f64,
}

/// A trained checkpoint plus the per-iteration loss curve.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: ValueCheckpoint,
    pub metrics: Vec<IterationMetrics>,
}

/// Train the goal-conditioned Q/V pair on an embedded dataset.
///
/// Fully deterministic given the config seed: parameters initialize from RNG
/// stream 0 (Q first, then V), the batch schedule comes from stream 1, and all
/// arithmetic is sequential f64. The bootstrap term uses the target copies and
/// receives no gradient; targets blend only after both optimizer updates.
pub fn train_gciql(
    data: &EmbeddedDataset,
    config: &ValueNetConfig,
) -> Result<TrainOutput, ValueFnError> {
    config.validate()?;
    if data.samples.is_empty() {
        return Err(ValueFnError::EmptyDataset);
    }
    if data.samples.len() < config.batch {
        return Err(ValueFnError::NotEnoughSamples {
            needed: config.batch,
            got: data.samples.len(),
        });
    }
    if data.d != config.d {
        return Err(ValueFnError::DimensionMismatch {
            expected: config.d,
            got: data.d,
        });
    }

    let mut init_rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut q = Mlp::init(3 * config.d, config.hidden, &mut init_rng);
    let mut v = Mlp::init(2 * config.d, config.hidden, &mut init_rng);
    let mut q_target = q.clone();
    let mut v_target = v.clone();

    let mut opt_q = AdamState::zeros_like(&q);
    let mut opt_v = AdamState::zeros_like(&v);
    let adamw = AdamW::new(config.lr, config.weight_decay);

    let mut shuffler = EpochShuffler::for_seed(data.samples.len(), config.batch, config.seed);
    let mut metrics = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let mut sum_q = 0.0;
        let mut sum_v = 0.0;
        for _ in 0..config.updates_per_iter {
            let batch: Vec<usize> = shuffler.next_batch().to_vec();

            let mut xs_q = Vec::with_capacity(batch.len());
            let mut xs_v = Vec::with_capacity(batch.len());
            let mut y_q = Vec::with_capacity(batch.len());
            let mut q_hat = Vec::with_capacity(batch.len());
            for &i in &batch {
                let s = &data.samples[i];
                let xq = data.q_input(s);
                let bootstrap = if s.terminal {
                    0.0
                } else {
                    v_target.forward(&data.v_next_input(s))?
                };
                y_q.push(s.reach_reward + config.gamma * bootstrap);
                q_hat.push(q_target.forward(&xq)?);
                xs_q.push(xq);
                xs_v.push(data.v_input(s));
            }

            let (loss_q, grads_q) = squared_error_loss_grads(&q, &xs_q, &y_q)?;
            let (loss_v, grads_v) =
                expectile_regression_loss_grads(&v, &xs_v, &q_hat, config.tau)?;
            if !loss_q.is_finite() || !loss_v.is_finite() {
                return Err(ValueFnError::NonFiniteLoss { iteration });
            }
            sum_q += loss_q;
            sum_v += loss_v;

            adamw_update(&mut q, &grads_q, &mut opt_q, &adamw);
            adamw_update(&mut v, &grads_v, &mut opt_v, &adamw);
            polyak(&mut q_target, &q, config.polyak_alpha)?;
            polyak(&mut v_target, &v, config.polyak_alpha)?;
        }
        metrics.push(IterationMetrics {
            iteration,
            loss_q: sum_q / config.updates_per_iter as f64,
            loss_v: sum_v / config.updates_per_iter as f64,
        });
    }

    let tail = metrics.last().expect("iterations >= 1");
    Ok(TrainOutput {
        checkpoint: ValueCheckpoint {
            format_version: CHECKPOINT_VERSION,
            config: config.clone(),
            embedder_fingerprint: data.fingerprint.clone(),
            q,
            v,
            q_target,
            v_target,
            opt_q,
            opt_v,
            metrics_tail: MetricsTail {
                loss_q: tail.loss_q,
                loss_v: tail.loss_v,
            },
        },
        metrics,
    })
}

/// Write the per-iteration loss curve as `iteration,loss_q,loss_v`.
pub fn write_metrics_csv<W: std::io::Write>(
    w: &mut W,
    metrics: &[IterationMetrics],
) -> std::io::Result<()> {
    writeln!(w, "iteration,loss_q,loss_v")?;
    for m in metrics {
        writeln!(w, "{},{},{}", m.iteration, m.loss_q, m.loss_v)?;
    }
    Ok(())
}
