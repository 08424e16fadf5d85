//! Embedded training data: text tuples become index tuples over a deduplicated
//! embedding table, so a dataset with thousands of samples over a few dozen
//! distinct texts stays small.

use std::collections::HashMap;

use crate::embed::{embed_batch, EmbedCache, EmbedError, TextEmbedder};
use crate::trajdata::TransitionSample;

/// One training tuple with texts replaced by embedding-table indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSample {
    pub state: usize,
    pub thought: usize,
    pub next_state: usize,
    pub goal: usize,
    pub reach_reward: f64,
    pub terminal: bool,
}

/// Deduplicated embeddings plus index tuples.
#[derive(Debug, Clone)]
pub struct EmbeddedDataset {
    pub d: usize,
    pub fingerprint: String,
    pub embeddings: Vec<Vec<f64>>,
    pub samples: Vec<EmbeddedSample>,
}

impl EmbeddedDataset {
    /// Embed every distinct text once (through the cache) and convert the
    /// samples to index form. Deterministic: table order is first appearance.
    pub fn from_samples(
        samples: &[TransitionSample],
        embedder: &dyn TextEmbedder,
        cache: &EmbedCache,
    ) -> Result<Self, EmbedError> {
        let mut texts: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let intern = |t: &str, texts: &mut Vec<String>, index: &mut HashMap<String, usize>| {
            if let Some(&i) = index.get(t) {
                i
            } else {
                let i = texts.len();
                index.insert(t.to_string(), i);
                texts.push(t.to_string());
                i
            }
        };

        let mut indexed = Vec::with_capacity(samples.len());
        for s in samples {
            indexed.push(EmbeddedSample {
                state: intern(&s.state_text, &mut texts, &mut index),
                thought: intern(&s.thought_text, &mut texts, &mut index),
                next_state: intern(&s.next_state_text, &mut texts, &mut index),
                goal: intern(&s.goal_text, &mut texts, &mut index),
                reach_reward: s.reach_reward,
                terminal: s.terminal,
            });
        }

        let embeddings = embed_batch(&texts, embedder, cache)?;
        Ok(Self {
            d: embedder.dimension(),
            fingerprint: embedder.fingerprint().to_string(),
            embeddings: embeddings.into_iter().map(|e| e.values).collect(),
            samples: indexed,
        })
    }

    /// Build directly from vectors (tests and synthetic constructions).
    pub fn from_parts(
        d: usize,
        fingerprint: &str,
        embeddings: Vec<Vec<f64>>,
        samples: Vec<EmbeddedSample>,
    ) -> Self {
        assert!(embeddings.iter().all(|e| e.len() == d));
        Self {
            d,
            fingerprint: fingerprint.to_string(),
            embeddings,
            samples,
        }
    }

    /// Q input `[state || thought || goal]` for one sample.
    pub fn q_input(&self, s: &EmbeddedSample) -> Vec<f64> {
        let mut x = Vec::with_capacity(3 * self.d);
        x.extend_from_slice(&self.embeddings[s.state]);
        x.extend_from_slice(&self.embeddings[s.thought]);
        x.extend_from_slice(&self.embeddings[s.goal]);
        x
    }

    /// V input `[state || goal]` for one sample.
    pub fn v_input(&self, s: &EmbeddedSample) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.d);
        x.extend_from_slice(&self.embeddings[s.state]);
        x.extend_from_slice(&self.embeddings[s.goal]);
        x
    }

    /// V input `[next_state || goal]` for the bootstrap term.
    pub fn v_next_input(&self, s: &EmbeddedSample) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.d);
        x.extend_from_slice(&self.embeddings[s.next_state]);
        x.extend_from_slice(&self.embeddings[s.goal]);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::trajdata::SampleSource;

    fn sample(s: &str, tht: &str, s2: &str, g: &str, reach: bool) -> TransitionSample {
        TransitionSample {
            state_text: s.into(),
            thought_text: tht.into(),
            next_state_text: s2.into(),
            goal_text: g.into(),
            reach_reward: if reach { 1.0 } else { 0.0 },
            terminal: reach,
            source: SampleSource {
                trajectory_id: "t".into(),
                step: 0,
                goal_step: 1,
            },
        }
    }

    #[test]
    fn interning_deduplicates_texts() {
        let samples = vec![
            sample("a", "think", "b", "b", true),
            sample("b", "think", "c", "c", true),
        ];
        let embedder = HashEmbedder::new(32);
        let cache = EmbedCache::in_memory();
        let ds = EmbeddedDataset::from_samples(&samples, &embedder, &cache).unwrap();
        // distinct texts: a, think, b, c
        assert_eq!(ds.embeddings.len(), 4);
        assert_eq!(ds.samples[0].next_state, ds.samples[0].goal);
        assert_eq!(ds.samples[0].thought, ds.samples[1].thought);
        assert_eq!(ds.q_input(&ds.samples[0]).len(), 96);
        assert_eq!(ds.v_input(&ds.samples[0]).len(), 64);
    }
}
