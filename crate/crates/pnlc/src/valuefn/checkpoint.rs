//! Versioned checkpoint persistence. The on-disk form is a single
//! self-describing JSON record with explicit layer shapes and row-major f64
//! arrays; finite f64 values round-trip bitwise through it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{AdamState, Mlp};
use super::{ValueFnError, ValueNetConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Final-iteration mean losses, kept for quick inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTail {
    pub loss_q: f64,
    pub loss_v: f64,
}

/// Everything needed to resume or serve a trained value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCheckpoint {
    pub format_version: u32,
    pub config: ValueNetConfig,
    pub embedder_fingerprint: String,
    pub q: Mlp,
    pub v: Mlp,
    pub q_target: Mlp,
    pub v_target: Mlp,
    pub opt_q: AdamState,
    pub opt_v: AdamState,
    pub metrics_tail: MetricsTail,
}

impl ValueCheckpoint {
    /// Shape and finiteness invariants: Q eats `3d`, V eats `2d`, both have
    /// the configured hidden sizes and a scalar head.
    pub fn validate(&self) -> Result<(), ValueFnError> {
        let check_net = |net: &Mlp, input: usize, name: &str| -> Result<(), ValueFnError> {
            let shapes_ok = net.layers.len() == 3
                && net.layers[0].inputs == input
                && net.layers[0].outputs == self.config.hidden.0
                && net.layers[1].inputs == self.config.hidden.0
                && net.layers[1].outputs == self.config.hidden.1
                && net.layers[2].inputs == self.config.hidden.1
                && net.layers[2].outputs == 1;
            if !shapes_ok {
                return Err(ValueFnError::CorruptCheckpoint(format!(
                    "{name} network shape does not match config"
                )));
            }
            if !net.all_finite() {
                return Err(ValueFnError::CorruptCheckpoint(format!(
                    "{name} network has non-finite parameters"
                )));
            }
            Ok(())
        };
        check_net(&self.q, 3 * self.config.d, "q")?;
        check_net(&self.q_target, 3 * self.config.d, "q_target")?;
        check_net(&self.v, 2 * self.config.d, "v")?;
        check_net(&self.v_target, 2 * self.config.d, "v_target")?;
        if !self.opt_q.all_finite() || !self.opt_v.all_finite() {
            return Err(ValueFnError::CorruptCheckpoint(
                "optimizer state has non-finite entries".into(),
            ));
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &ValueCheckpoint, path: &Path) -> Result<(), ValueFnError> {
    ckpt.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, ckpt)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ValueCheckpoint, ValueFnError> {
    let r = BufReader::new(File::open(path)?);
    // probe the version first so an old format gets a versioned error rather
    // than a generic parse failure
    #[derive(Deserialize)]
    struct VersionProbe {
        format_version: u32,
    }
    let raw = std::io::read_to_string(r)?;
    let probe: VersionProbe = serde_json::from_str(&raw)
        .map_err(|e| ValueFnError::CorruptCheckpoint(e.to_string()))?;
    if probe.format_version != CHECKPOINT_VERSION {
        return Err(ValueFnError::VersionMismatch {
            found: probe.format_version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let ckpt: ValueCheckpoint =
        serde_json::from_str(&raw).map_err(|e| ValueFnError::CorruptCheckpoint(e.to_string()))?;
    ckpt.validate()?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuefn::data::{EmbeddedDataset, EmbeddedSample};
    use crate::valuefn::train::train_gciql;

    fn small_checkpoint() -> ValueCheckpoint {
        let d = 8;
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
        let data = EmbeddedDataset::from_parts(d, "test", embeddings, samples);
        let config = ValueNetConfig {
            d,
            hidden: (6, 6),
            tau: 0.8,
            gamma: 0.99,
            lr: 1e-3,
            batch: 4,
            polyak_alpha: 0.05,
            updates_per_iter: 3,
            iterations: 2,
            weight_decay: 0.01,
            seed: 3,
            scalar_goal: false,
        };
        train_gciql(&data, &config).unwrap().checkpoint
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let ckpt = small_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);
    }

    #[test]
    fn version_mismatch_is_a_versioned_error() {
        let ckpt = small_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&ckpt, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replacen("\"format_version\":1", "\"format_version\":999", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ValueFnError::VersionMismatch { found: 999, .. })
        ));
    }

    #[test]
    fn truncated_file_is_an_integrity_error() {
        let ckpt = small_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_checkpoint(&ckpt, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ValueFnError::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn wrong_shapes_fail_validation() {
        let mut ckpt = small_checkpoint();
        ckpt.q.layers[0].weights.pop();
        ckpt.q.layers[0].inputs -= 1;
        assert!(ckpt.validate().is_err());
    }
}
