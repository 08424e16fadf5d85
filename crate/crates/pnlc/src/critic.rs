//! The natural language critic: proposes hypothetical positive and negative
//! future goals for a proposed thought, scores each with the trained value
//! function, and renders the result as deterministic feedback text.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{embed_batch, EmbedCache, EmbedError, TextEmbedder};
use crate::embed::Embedding;
use crate::provider::{ProviderError, TextProvider};
use crate::valuefn::{q_value, q_value_raw, ValueCheckpoint, ValueFnError};

#[derive(Debug, Error)]
pub enum CriticError {
    #[error("goal proposal call failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("could not parse {needed} {polarity} goals after a re-prompt; raw response: {raw:?}")]
    UnparseableProposals {
        polarity: Polarity,
        needed: usize,
        raw: String,
    },
    #[error("embedding failed for goal {index}: {source}")]
    Embedding {
        index: usize,
        #[source]
        source: EmbedError,
    },
    #[error("value function error: {0}")]
    Value(#[from] ValueFnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Polarity::Positive => write!(f, "positive"),
            Polarity::Negative => write!(f, "negative"),
        }
    }
}

/// One hypothetical future outcome with its scored reach likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalProposal {
    pub text: String,
    pub polarity: Polarity,
    pub embedding: Embedding,
    /// Clamped to [0, 1].
    pub likelihood: f64,
}

/// Scored proposals (positives first, each block by descending likelihood)
/// plus their canonical text rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalLanguageValue {
    pub proposals: Vec<GoalProposal>,
    pub rendered: String,
}

/// Everything the inference loop needs to score thoughts.
pub struct CriticBundle<'a> {
    pub checkpoint: &'a ValueCheckpoint,
    pub embedder: &'a dyn TextEmbedder,
    pub cache: &'a EmbedCache,
}

/// Ask the provider for `n/2` positive and `n/2` negative goals, one call per
/// polarity (plus at most one re-prompt each). The template must contain
/// `{state}`, `{thought}`, `{polarity}`, and `{n_goals}` placeholders.
pub fn propose_goals(
    state_summary: &str,
    thought: &str,
    provider: &dyn TextProvider,
    n: usize,
    template: &str,
) -> Result<Vec<(String, Polarity)>, CriticError> {
    assert!(n >= 2 && n % 2 == 0, "n must be an even integer >= 2");
    let per_polarity = n / 2;
    let mut out = Vec::with_capacity(n);
    for polarity in [Polarity::Positive, Polarity::Negative] {
        let prompt = template
            .replace("{state}", state_summary)
            .replace("{thought}", thought)
            .replace("{polarity}", &polarity.to_string())
            .replace("{n_goals}", &per_polarity.to_string());
        let mut response = provider.send(&prompt)?;
        let mut goals = parse_numbered_goals(&response);
        if goals.len() < per_polarity {
            response = provider.send(&prompt)?;
            goals = parse_numbered_goals(&response);
        }
        if goals.len() < per_polarity {
            return Err(CriticError::UnparseableProposals {
                polarity,
                needed: per_polarity,
                raw: response,
            });
        }
        out.extend(goals.into_iter().take(per_polarity).map(|g| (g, polarity)));
    }
    Ok(out)
}

/// Extract `1. ...` / `2) ...` items in order; surrounding chatter is dropped.
fn parse_numbered_goals(response: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in response.lines() {
        let line = line.trim();
        let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits == 0 {
            continue;
        }
        let rest = &line[digits..];
        let rest = match rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            Some(r) => r.trim(),
            None => continue,
        };
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
    }
    out
}

/// Score each goal with the value function and render the feedback. Makes no
/// provider calls; embeddings go through the cache.
pub fn evaluate(
    critic: &CriticBundle,
    state_summary: &str,
    thought: &str,
    goals: &[(String, Polarity)],
) -> Result<NaturalLanguageValue, CriticError> {
    let mut texts: Vec<String> = vec![state_summary.to_string(), thought.to_string()];
    texts.extend(goals.iter().map(|(g, _)| g.clone()));
    let embedded = embed_batch(&texts, critic.embedder, critic.cache)
        .map_err(|source| CriticError::Embedding { index: 0, source })?;
    let (state_emb, thought_emb) = (&embedded[0], &embedded[1]);

    let mut proposals = Vec::with_capacity(goals.len());
    for (i, (text, polarity)) in goals.iter().enumerate() {
        let goal_emb = &embedded[2 + i];
        let raw = q_value(critic.checkpoint, state_emb, thought_emb, goal_emb)?;
        proposals.push(GoalProposal {
            text: text.clone(),
            polarity: *polarity,
            embedding: goal_emb.clone(),
            likelihood: raw.clamp(0.0, 1.0),
        });
    }
    sort_proposals(&mut proposals);
    let rendered = render(&proposals);
    Ok(NaturalLanguageValue {
        proposals,
        rendered,
    })
}

/// Goal-less ablation: the goal slot is a fixed zero vector and the feedback
/// is a single clamped number.
pub fn evaluate_scalar(
    critic: &CriticBundle,
    state_summary: &str,
    thought: &str,
) -> Result<(f64, String), CriticError> {
    let texts = vec![state_summary.to_string(), thought.to_string()];
    let embedded = embed_batch(&texts, critic.embedder, critic.cache)
        .map_err(|source| CriticError::Embedding { index: 0, source })?;
    let d = critic.checkpoint.config.d;
    let mut input = Vec::with_capacity(3 * d);
    input.extend_from_slice(&embedded[0].values);
    input.extend_from_slice(&embedded[1].values);
    input.extend(std::iter::repeat(0.0).take(d));
    let value = q_value_raw(critic.checkpoint, &input)?.clamp(0.0, 1.0);
    Ok((value, format_likelihood(value)))
}

fn sort_proposals(proposals: &mut [GoalProposal]) {
    proposals.sort_by(|a, b| {
        let block = polarity_rank(a.polarity).cmp(&polarity_rank(b.polarity));
        block
            .then(b.likelihood.partial_cmp(&a.likelihood).expect("clamped likelihoods are ordered"))
            .then_with(|| a.text.cmp(&b.text))
    });
}

fn polarity_rank(p: Polarity) -> u8 {
    match p {
        Polarity::Positive => 0,
        Polarity::Negative => 1,
    }
}

/// Likelihood rounded half-up to two decimals.
fn format_likelihood(x: f64) -> String {
    let cents = (x.clamp(0.0, 1.0) * 100.0).round() as i64;
    format!("{}.{:02}", cents / 100, cents % 100)
}

/// One line per proposal: polarity marker, two-decimal likelihood, an em-dash,
/// then the goal text. Positives block first.
pub fn render(proposals: &[GoalProposal]) -> String {
    let mut lines = Vec::with_capacity(proposals.len());
    for p in proposals {
        let marker = match p.polarity {
            Polarity::Positive => "[+]",
            Polarity::Negative => "[-]",
        };
        lines.push(format!(
            "{marker} {} \u{2014} {}",
            format_likelihood(p.likelihood),
            p.text
        ));
    }
    lines.join("\n")
}

/// `polarity,likelihood,text` CSV rows for the inspection CLI.
pub fn write_proposals_csv<W: std::io::Write>(
    w: &mut W,
    proposals: &[GoalProposal],
) -> std::io::Result<()> {
    writeln!(w, "polarity,likelihood,text")?;
    for p in proposals {
        writeln!(w, "{},{},{:?}", p.polarity, format_likelihood(p.likelihood), p.text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{hash_embed, hash_fingerprint, EmbedCache, HashEmbedder};
    use crate::provider::MockProvider;
    use crate::valuefn::{train_gciql, EmbeddedDataset, EmbeddedSample, ValueNetConfig};

    fn zero_bias_checkpoint(d: usize, bias: f64) -> ValueCheckpoint {
        let embeddings: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                e
            })
            .collect();
        let samples: Vec<EmbeddedSample> = (0..4)
            .map(|_| EmbeddedSample {
                state: 0,
                thought: 1,
                next_state: 2,
                goal: 2,
                reach_reward: 1.0,
                terminal: true,
            })
            .collect();
        let data =
            EmbeddedDataset::from_parts(d, &hash_fingerprint(d), embeddings, samples);
        let config = ValueNetConfig {
            d,
            hidden: (4, 4),
            tau: 0.8,
            gamma: 0.99,
            lr: 1e-3,
            batch: 4,
            polyak_alpha: 0.5,
            updates_per_iter: 1,
            iterations: 1,
            weight_decay: 0.0,
            seed: 1,
            scalar_goal: false,
        };
        let mut ckpt = train_gciql(&data, &config).unwrap().checkpoint;
        // zero the whole Q net except the output bias: every likelihood
        // becomes clamp(bias)
        for l in &mut ckpt.q.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        ckpt.q.layers[2].bias[0] = bias;
        ckpt
    }

    #[test]
    fn propose_goals_mock_passthrough() {
        let provider = MockProvider::new().with_rule("outcome goals", "1. G1\n2. G2");
        let template = "{polarity} outcome goals\nState: {state}\nThought: {thought}\nn={n_goals}";
        let goals = propose_goals("s", "t", &provider, 4, template).unwrap();
        assert_eq!(
            goals,
            vec![
                ("G1".to_string(), Polarity::Positive),
                ("G2".to_string(), Polarity::Positive),
                ("G1".to_string(), Polarity::Negative),
                ("G2".to_string(), Polarity::Negative),
            ]
        );
        assert_eq!(provider.calls(), 2);
    }

    #[test]
    fn propose_goals_n2_is_one_per_polarity() {
        let provider = MockProvider::new()
            .with_rule("positive outcome", "1. good end")
            .with_rule("negative outcome", "1. bad end");
        let template = "{polarity} outcome goals {state} {thought} {n_goals}";
        let goals = propose_goals("s", "t", &provider, 2, template).unwrap();
        assert_eq!(goals.len(), 2);
        assert_eq!(goals[0], ("good end".to_string(), Polarity::Positive));
        assert_eq!(goals[1], ("bad end".to_string(), Polarity::Negative));
    }

    #[test]
    fn chatter_around_numbered_goals_is_dropped() {
        // fixture written before the parser
        let raw = "Sure! Here are my ideas:\n1. the agent secures the key early\nsome aside that is not a goal\n2. the door swings open\nHope this helps!";
        assert_eq!(
            parse_numbered_goals(raw),
            vec![
                "the agent secures the key early".to_string(),
                "the door swings open".to_string()
            ]
        );
    }

    #[test]
    fn reprompt_once_then_error_with_raw_attached() {
        let provider =
            MockProvider::new().with_sequence("outcome goals", &["no list here", "still none"]);
        let template = "{polarity} outcome goals {state} {thought} {n_goals}";
        let err = propose_goals("s", "t", &provider, 2, template).unwrap_err();
        assert!(matches!(err, CriticError::UnparseableProposals { .. }));
        assert!(err.to_string().contains("still none"));
        assert_eq!(provider.calls(), 2);
    }

    #[test]
    fn zero_weight_checkpoint_gives_uniform_clamped_likelihoods() {
        let d = 16;
        let ckpt = zero_bias_checkpoint(d, 0.4);
        let embedder = HashEmbedder::new(d);
        let cache = EmbedCache::in_memory();
        let critic = CriticBundle {
            checkpoint: &ckpt,
            embedder: &embedder,
            cache: &cache,
        };
        let goals = vec![
            ("good future".to_string(), Polarity::Positive),
            ("bad future".to_string(), Polarity::Negative),
        ];
        let nlv = evaluate(&critic, "state", "thought", &goals).unwrap();
        assert!(nlv.proposals.iter().all(|p| (p.likelihood - 0.4).abs() < 1e-12));
        assert_eq!(nlv.rendered, "[+] 0.40 \u{2014} good future\n[-] 0.40 \u{2014} bad future");
    }

    #[test]
    fn evaluate_is_order_invariant_and_makes_no_provider_calls() {
        let d = 16;
        let ckpt = zero_bias_checkpoint(d, 0.25);
        let embedder = HashEmbedder::new(d);
        let cache = EmbedCache::in_memory();
        let critic = CriticBundle {
            checkpoint: &ckpt,
            embedder: &embedder,
            cache: &cache,
        };
        let goals = vec![
            ("alpha".to_string(), Polarity::Positive),
            ("beta".to_string(), Polarity::Negative),
            ("gamma".to_string(), Polarity::Positive),
            ("delta".to_string(), Polarity::Negative),
        ];
        let mut permuted = goals.clone();
        permuted.reverse();
        let a = evaluate(&critic, "s", "t", &goals).unwrap();
        let b = evaluate(&critic, "s", "t", &permuted).unwrap();
        assert_eq!(a.rendered, b.rendered);
    }

    #[test]
    fn likelihoods_clamp_before_rounding() {
        let d = 16;
        let over = zero_bias_checkpoint(d, 1.0000001);
        let embedder = HashEmbedder::new(d);
        let cache = EmbedCache::in_memory();
        let critic = CriticBundle {
            checkpoint: &over,
            embedder: &embedder,
            cache: &cache,
        };
        let goals = vec![("done".to_string(), Polarity::Positive)];
        let nlv = evaluate(&critic, "s", "t", &goals).unwrap();
        assert_eq!(nlv.rendered, "[+] 1.00 \u{2014} done");
        assert_eq!(nlv.proposals[0].likelihood, 1.0);

        let under = zero_bias_checkpoint(d, -3.0);
        let critic = CriticBundle {
            checkpoint: &under,
            embedder: &embedder,
            cache: &cache,
        };
        let nlv = evaluate(&critic, "s", "t", &goals).unwrap();
        assert_eq!(nlv.proposals[0].likelihood, 0.0);
        assert_eq!(nlv.rendered, "[+] 0.00 \u{2014} done");
    }

    #[test]
    fn render_blocks_and_ordering() {
        let mk = |text: &str, polarity, likelihood| GoalProposal {
            text: text.to_string(),
            polarity,
            embedding: hash_embed(text, 16),
            likelihood,
        };
        let mut proposals = vec![
            mk("n-low", Polarity::Negative, 0.1),
            mk("p-low", Polarity::Positive, 0.2),
            mk("n-high", Polarity::Negative, 0.9),
            mk("p-high", Polarity::Positive, 0.8),
        ];
        sort_proposals(&mut proposals);
        let text = render(&proposals);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "[+] 0.80 \u{2014} p-high");
        assert_eq!(lines[1], "[+] 0.20 \u{2014} p-low");
        assert_eq!(lines[2], "[-] 0.90 \u{2014} n-high");
        assert_eq!(lines[3], "[-] 0.10 \u{2014} n-low");
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(format_likelihood(0.405), "0.41");
        assert_eq!(format_likelihood(0.125), "0.13");
        assert_eq!(format_likelihood(0.994999), "0.99");
        assert_eq!(format_likelihood(0.995), "1.00");
    }

    #[test]
    fn scalar_mode_renders_a_single_number() {
        let d = 16;
        let ckpt = zero_bias_checkpoint(d, 0.87);
        let embedder = HashEmbedder::new(d);
        let cache = EmbedCache::in_memory();
        let critic = CriticBundle {
            checkpoint: &ckpt,
            embedder: &embedder,
            cache: &cache,
        };
        let (value, rendered) = evaluate_scalar(&critic, "s", "t").unwrap();
        assert!((value - 0.87).abs() < 1e-12);
        assert_eq!(rendered, "0.87");
    }
}
