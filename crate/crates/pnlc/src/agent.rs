//! The inference-time orchestrator: thought generation, critic-guided
//! refinement for up to `m` iterations, and environment-action emission, all
//! through a pluggable text provider.
//!
//! Refinement parsing is fail-safe: a response without a structured marker
//! keeps the original thought (with a warning recorded) rather than crashing,
//! so a flaky provider degrades to plain thought-then-act behavior.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::{evaluate, evaluate_scalar, propose_goals, CriticBundle, CriticError, NaturalLanguageValue};
use crate::provider::TextProvider;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("thought generation returned an empty response after a retry")]
    EmptyThought,
    #[error("action generation returned an empty response after a retry")]
    EmptyAction,
    #[error("provider failure: {0}")]
    Provider(#[from] crate::provider::ProviderError),
    #[error("critic failure: {0}")]
    Critic(#[from] CriticError),
    #[error("template file {path}: {source}")]
    TemplateIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Marker phrases baked into the default templates; deterministic mock
/// providers dispatch on them.
pub mod markers {
    pub const THOUGHT: &str = "Propose the next thought";
    pub const PROPOSE_POSITIVE: &str = "hypothetical positive outcome goals";
    pub const PROPOSE_NEGATIVE: &str = "hypothetical negative outcome goals";
    pub const REFINE: &str = "either KEEP, or REVISE:";
    pub const ACT: &str = "exact environment action";
    pub const SELECT: &str = "number of the best thought";
    pub const SUMMARIZE: &str = "Summarize the history";
}

/// The prompt template set. Each template has a context / instruction /
/// few-shot structure with `{...}` placeholders; defaults are compiled in and
/// any file in an override directory replaces its default.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub context: String,
    pub examples: String,
    pub thought: String,
    pub propose_goals: String,
    pub refine: String,
    pub act: String,
    pub select: String,
    pub summarize: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            context: String::new(),
            examples: String::new(),
            thought: include_str!("../templates/thought.txt").to_string(),
            propose_goals: include_str!("../templates/propose_goals.txt").to_string(),
            refine: include_str!("../templates/refine.txt").to_string(),
            act: include_str!("../templates/act.txt").to_string(),
            select: include_str!("../templates/select.txt").to_string(),
            summarize: include_str!("../templates/summarize.txt").to_string(),
        }
    }
}

/// Built-in per-environment context paragraphs.
pub fn builtin_context(env: &str) -> Option<&'static str> {
    match env {
        "keydoor" => Some(include_str!("../templates/keydoor.ctx.txt")),
        "donation" => Some(include_str!("../templates/donation.ctx.txt")),
        _ => None,
    }
}

impl PromptTemplates {
    /// Defaults with the named environment's context paragraph.
    pub fn for_env(env: &str) -> Self {
        Self {
            context: builtin_context(env).unwrap_or_default().trim().to_string(),
            ..Self::default()
        }
    }

    /// Load overrides from a directory; missing files keep their defaults.
    pub fn load_overrides(mut self, dir: &Path) -> Result<Self, AgentError> {
        let mut read = |name: &str, slot: &mut String| -> Result<(), AgentError> {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(&path).map_err(|source| AgentError::TemplateIo {
                    path: path.display().to_string(),
                    source,
                })?;
            }
            Ok(())
        };
        let mut thought = self.thought.clone();
        read("thought.txt", &mut thought)?;
        self.thought = thought;
        let mut propose = self.propose_goals.clone();
        read("propose_goals.txt", &mut propose)?;
        self.propose_goals = propose;
        let mut refine = self.refine.clone();
        read("refine.txt", &mut refine)?;
        self.refine = refine;
        let mut act = self.act.clone();
        read("act.txt", &mut act)?;
        self.act = act;
        let mut select = self.select.clone();
        read("select.txt", &mut select)?;
        self.select = select;
        let mut summarize = self.summarize.clone();
        read("summarize.txt", &mut summarize)?;
        self.summarize = summarize;
        Ok(self)
    }

    fn base_fill(&self, template: &str) -> String {
        template
            .replace("{context}", &self.context)
            .replace("{examples}", &self.examples)
    }

    pub fn fill_thought(&self, state: &str) -> String {
        self.base_fill(&self.thought).replace("{state}", state)
    }

    pub fn fill_propose(&self) -> String {
        // polarity/state/thought/n_goals stay as placeholders for propose_goals
        self.base_fill(&self.propose_goals)
    }

    pub fn fill_refine(&self, state: &str, thought: &str, value: &str) -> String {
        self.base_fill(&self.refine)
            .replace("{state}", state)
            .replace("{thought}", thought)
            .replace("{value}", value)
    }

    pub fn fill_act(&self, state: &str, thought: &str) -> String {
        self.base_fill(&self.act)
            .replace("{state}", state)
            .replace("{thought}", thought)
    }

    pub fn fill_select(&self, state: &str, candidates: &str) -> String {
        self.base_fill(&self.select)
            .replace("{state}", state)
            .replace("{candidates}", candidates)
    }

    pub fn fill_summarize_template(&self) -> String {
        // {history} stays for trajdata::summarize_trajectory
        self.base_fill(&self.summarize)
    }
}

/// One provider call; the trimmed response is the thought. An empty response
/// is retried once.
pub fn generate_thought(
    state_summary: &str,
    provider: &dyn TextProvider,
    templates: &PromptTemplates,
) -> Result<String, AgentError> {
    let prompt = templates.fill_thought(state_summary);
    for _ in 0..2 {
        let response = provider.send(&prompt)?;
        let thought = response.trim();
        if !thought.is_empty() {
            return Ok(thought.to_string());
        }
    }
    Err(AgentError::EmptyThought)
}

/// One provider call with state and final thought filled; returns the action
/// text. An empty response is retried once.
pub fn act(
    state_summary: &str,
    final_thought: &str,
    provider: &dyn TextProvider,
    templates: &PromptTemplates,
) -> Result<String, AgentError> {
    let prompt = templates.fill_act(state_summary, final_thought);
    for _ in 0..2 {
        let response = provider.send(&prompt)?;
        let action = response.trim();
        if !action.is_empty() {
            return Ok(action.to_string());
        }
    }
    Err(AgentError::EmptyAction)
}

/// Outcome of parsing one refinement reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefinementDecision {
    Keep,
    Revise(String),
}

/// Parse a refinement reply by its first structured marker: the token `KEEP`
/// or `REVISE:` followed by the new thought. Anything unparseable is a Keep
/// with the warning flag set, so the original thought is never lost.
pub fn parse_refinement(response: &str) -> (RefinementDecision, bool) {
    let keep_at = find_token(response, "KEEP");
    let revise_at = response.find("REVISE:");
    match (keep_at, revise_at) {
        (Some(k), Some(r)) if k < r => (RefinementDecision::Keep, false),
        (Some(_), None) => (RefinementDecision::Keep, false),
        (_, Some(r)) => {
            let rest = response[r + "REVISE:".len()..].trim();
            if rest.is_empty() {
                (RefinementDecision::Keep, true)
            } else {
                (RefinementDecision::Revise(rest.to_string()), false)
            }
        }
        (None, None) => (RefinementDecision::Keep, true),
    }
}

/// Find `token` at a word boundary.
fn find_token(text: &str, token: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(rel) = text[from..].find(token) {
        let start = from + rel;
        let end = start + token.len();
        let left_ok = start == 0 || !(bytes[start - 1] as char).is_alphanumeric();
        let right_ok = end == bytes.len() || !(bytes[end] as char).is_alphanumeric();
        if left_ok && right_ok {
            return Some(start);
        }
        from = end;
    }
    None
}

/// Verdict recorded for one refinement iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Kept,
    Revised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementIteration {
    pub thought: String,
    pub value: NaturalLanguageValue,
    pub verdict: Verdict,
    /// Set when the refinement reply had no parseable marker (fail-safe Keep)
    /// or the provider call failed.
    pub parse_warning: bool,
}

/// The full refinement record for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTranscript {
    pub iterations: Vec<RefinementIteration>,
    pub final_thought: String,
}

impl RefinementTranscript {
    pub fn thoughts(&self) -> Vec<String> {
        self.iterations.iter().map(|i| i.thought.clone()).collect()
    }
}

/// Critic-guided refinement: each iteration proposes and scores `n` goals for
/// the current thought, then asks the provider to keep or revise it. A Keep
/// (or the iteration cap `m`) terminates; a Revise replaces the thought. At
/// most `m` critic evaluations and `m` refinement calls are made; a revision
/// emitted at the cap becomes the final thought without another evaluation.
pub fn refine_loop(
    state_summary: &str,
    initial_thought: &str,
    critic: &CriticBundle,
    provider: &dyn TextProvider,
    m: usize,
    n: usize,
    templates: &PromptTemplates,
) -> Result<RefinementTranscript, AgentError> {
    assert!(m >= 1, "m must be >= 1");
    let mut thought = initial_thought.to_string();
    let mut iterations = Vec::new();
    for _ in 0..m {
        let goals = propose_goals(
            state_summary,
            &thought,
            provider,
            n,
            &templates.fill_propose(),
        )?;
        let value = evaluate(critic, state_summary, &thought, &goals)?;
        let prompt = templates.fill_refine(state_summary, &thought, &value.rendered);
        // a failed refinement call degrades to Keep rather than aborting
        let (decision, warned) = match provider.send(&prompt) {
            Ok(response) => parse_refinement(&response),
            Err(_) => (RefinementDecision::Keep, true),
        };
        match decision {
            RefinementDecision::Keep => {
                iterations.push(RefinementIteration {
                    thought: thought.clone(),
                    value,
                    verdict: Verdict::Kept,
                    parse_warning: warned,
                });
                return Ok(RefinementTranscript {
                    iterations,
                    final_thought: thought,
                });
            }
            RefinementDecision::Revise(next) => {
                iterations.push(RefinementIteration {
                    thought: thought.clone(),
                    value,
                    verdict: Verdict::Revised,
                    parse_warning: warned,
                });
                thought = next;
            }
        }
    }
    Ok(RefinementTranscript {
        iterations,
        final_thought: thought,
    })
}

/// Goal-less variant of [`refine_loop`]: the feedback is a single scalar
/// success likelihood.
pub fn refine_loop_scalar(
    state_summary: &str,
    initial_thought: &str,
    critic: &CriticBundle,
    provider: &dyn TextProvider,
    m: usize,
    templates: &PromptTemplates,
) -> Result<RefinementTranscript, AgentError> {
    assert!(m >= 1, "m must be >= 1");
    let mut thought = initial_thought.to_string();
    let mut iterations = Vec::new();
    for _ in 0..m {
        let (_, rendered) = evaluate_scalar(critic, state_summary, &thought)?;
        let value = NaturalLanguageValue {
            proposals: Vec::new(),
            rendered: rendered.clone(),
        };
        let prompt = templates.fill_refine(state_summary, &thought, &rendered);
        let (decision, warned) = match provider.send(&prompt) {
            Ok(response) => parse_refinement(&response),
            Err(_) => (RefinementDecision::Keep, true),
        };
        match decision {
            RefinementDecision::Keep => {
                iterations.push(RefinementIteration {
                    thought: thought.clone(),
                    value,
                    verdict: Verdict::Kept,
                    parse_warning: warned,
                });
                return Ok(RefinementTranscript {
                    iterations,
                    final_thought: thought,
                });
            }
            RefinementDecision::Revise(next) => {
                iterations.push(RefinementIteration {
                    thought: thought.clone(),
                    value,
                    verdict: Verdict::Revised,
                    parse_warning: warned,
                });
                thought = next;
            }
        }
    }
    Ok(RefinementTranscript {
        iterations,
        final_thought: thought,
    })
}

/// Result of best-of-n selection.
#[derive(Debug, Clone)]
pub struct Selection {
    pub thought: String,
    pub candidates: Vec<(String, NaturalLanguageValue)>,
    /// Set when the selection reply had no usable index (fell back to the
    /// first candidate).
    pub parse_warning: bool,
}

/// Traditional best-of-n: generate `n_thoughts` thoughts, score each with the
/// critic, and let the provider pick one by number. No revision happens.
pub fn best_of_n(
    state_summary: &str,
    provider: &dyn TextProvider,
    critic: &CriticBundle,
    n_thoughts: usize,
    n_goals: usize,
    templates: &PromptTemplates,
) -> Result<Selection, AgentError> {
    assert!(n_thoughts >= 2, "n_thoughts must be >= 2");
    let mut thoughts: Vec<String> = Vec::new();
    for _ in 0..n_thoughts {
        let t = generate_thought(state_summary, provider, templates)?;
        if !thoughts.contains(&t) {
            thoughts.push(t);
        }
    }

    let mut candidates = Vec::with_capacity(thoughts.len());
    let mut listing = String::new();
    for (i, t) in thoughts.iter().enumerate() {
        let goals = propose_goals(state_summary, t, provider, n_goals, &templates.fill_propose())?;
        let value = evaluate(critic, state_summary, t, &goals)?;
        listing.push_str(&format!("{}. {}\n{}\n", i + 1, t, value.rendered));
        candidates.push((t.clone(), value));
    }

    let prompt = templates.fill_select(state_summary, listing.trim_end());
    let (index, warned) = match provider.send(&prompt) {
        Ok(response) => match parse_selection_index(&response, candidates.len()) {
            Some(i) => (i, false),
            None => (0, true),
        },
        Err(_) => (0, true),
    };
    Ok(Selection {
        thought: candidates[index].0.clone(),
        candidates,
        parse_warning: warned,
    })
}

/// First integer in the reply, interpreted 1-based; out-of-range yields None.
fn parse_selection_index(response: &str, len: usize) -> Option<usize> {
    let digits: String = response
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    let value: usize = digits.parse().ok()?;
    if (1..=len).contains(&value) {
        Some(value - 1)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{hash_fingerprint, EmbedCache, HashEmbedder};
    use crate::provider::MockProvider;
    use crate::valuefn::{train_gciql, EmbeddedDataset, EmbeddedSample, ValueNetConfig};

    fn test_checkpoint(d: usize) -> crate::valuefn::ValueCheckpoint {
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
        let data = EmbeddedDataset::from_parts(d, &hash_fingerprint(d), embeddings, samples);
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
        train_gciql(&data, &config).unwrap().checkpoint
    }

    fn goal_rule() -> (&'static str, &'static str) {
        ("outcome goals", "1. end A\n2. end B")
    }

    #[test]
    fn generate_thought_passes_through_and_trims() {
        let templates = PromptTemplates::default();
        let provider = MockProvider::new().with_rule(markers::THOUGHT, "get the key");
        assert_eq!(
            generate_thought("s", &provider, &templates).unwrap(),
            "get the key"
        );
        let provider = MockProvider::new().with_rule(markers::THOUGHT, "  plan X \n");
        assert_eq!(generate_thought("s", &provider, &templates).unwrap(), "plan X");
    }

    #[test]
    fn thought_prompt_contains_the_state() {
        let templates = PromptTemplates::for_env("keydoor");
        let provider = MockProvider::new().with_rule(markers::THOUGHT, "t");
        generate_thought("MARKER-STATE-42", &provider, &templates).unwrap();
        let captured = provider.captured.lock().unwrap();
        assert!(captured[0].contains("MARKER-STATE-42"));
        assert!(captured[0].contains("corridor"));
    }

    #[test]
    fn empty_thought_retries_once_then_errors() {
        let templates = PromptTemplates::default();
        let provider = MockProvider::new().with_sequence(markers::THOUGHT, &["", "  "]);
        let err = generate_thought("s", &provider, &templates).unwrap_err();
        assert!(matches!(err, AgentError::EmptyThought));
        assert_eq!(provider.calls(), 2);
    }

    #[test]
    fn parse_refinement_markers() {
        assert_eq!(parse_refinement("KEEP"), (RefinementDecision::Keep, false));
        assert_eq!(
            parse_refinement("REVISE: appeal to credibility"),
            (
                RefinementDecision::Revise("appeal to credibility".into()),
                false
            )
        );
        assert_eq!(
            parse_refinement("I think we should try something"),
            (RefinementDecision::Keep, true)
        );
        // first marker wins
        assert_eq!(
            parse_refinement("KEEP (do not REVISE: anything)"),
            (RefinementDecision::Keep, false)
        );
        assert_eq!(
            parse_refinement("do not KEEP; REVISE: push on"),
            (RefinementDecision::Keep, false)
        );
        // KEEP inside a word is not a marker
        assert_eq!(parse_refinement("UPKEEP matters"), (RefinementDecision::Keep, true));
        // empty revision is unparseable
        assert_eq!(parse_refinement("REVISE:   "), (RefinementDecision::Keep, true));
    }

    #[test]
    fn refine_loop_keep_terminates_after_one_iteration() {
        let d = 16;
        let ckpt = test_checkpoint(d);
        let embedder = HashEmbedder::new(d);
        let cache = EmbedCache::in_memory();
        let critic = CriticBundle {
            checkpoint: &ckpt,
            embedder: &embedder,
            cache: &cache,
        };
        let (gm, gr) = goal_rule();
        let provider = MockProvider::new()
            .with_rule(gm, gr)
            .with_rule(markers::REFINE, "KEEP");
        let templates = PromptTemplates::default();
        let t = refine_loop("s", "initial", &critic, &provider, 2, 4, &templates).unwrap();
        assert_eq!(t.iterations.len(), 1);
        assert_eq!(t.final_thought, "initial");
        assert_eq!(t.iterations[0].verdict, Verdict::Kept);
    }

    #[test]
    fn refine_loop_revise_then_keep() {
        let d = 16;
        let ckpt = test_checkpoint(d);
        let embedder = HashEmbedder::new(d);
        let cache = EmbedCache::in_memory();
        let critic = CriticBundle {
            checkpoint: &ckpt,
            embedder: &embedder,
            cache: &cache,
        };
        let (gm, gr) = goal_rule();
        let provider = MockProvider::new()
            .with_rule(gm, gr)
            .with_sequence(markers::REFINE, &["REVISE: B", "KEEP"]);
        let templates = PromptTemplates::default();
        let t = refine_loop("s", "A", &critic, &provider, 2, 4, &templates).unwrap();
        assert_eq!(t.iterations.len(), 2);
        assert_eq!(t.final_thought, "B");
        assert_eq!(t.iterations[0].verdict, Verdict::Revised);
        assert_eq!(t.iterations[1].verdict, Verdict::Kept);
    }

    #[test]
    fn refine_loop_stops_at_the_cap() {
        let d = 16;
        let ckpt = test_checkpoint(d);
        let embedder = HashEmbedder::new(d);
        let cache = EmbedCache::in_memory();
        let critic = CriticBundle {
            checkpoint: &ckpt,
            embedder: &embedder,
            cache: &cache,
        };
        let (gm, gr) = goal_rule();
        let provider = MockProvider::new()
            .with_rule(gm, gr)
            .with_sequence(markers::REFINE, &["REVISE: B", "REVISE: C", "REVISE: D"]);
        let templates = PromptTemplates::default();
        let t = refine_loop("s", "A", &critic, &provider, 2, 4, &templates).unwrap();
        assert_eq!(t.iterations.len(), 2);
        assert_eq!(t.final_thought, "C", "the cap-hit revision becomes final");
        assert_eq!(t.thoughts(), vec!["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn call_budget_per_step_is_bounded() {
        // thought (1) + 2 iterations x (2 proposals + 1 refinement) + act (1) = 8
        let d = 16;
        let ckpt = test_checkpoint(d);
        let embedder = HashEmbedder::new(d);
        let cache = EmbedCache::in_memory();
        let critic = CriticBundle {
            checkpoint: &ckpt,
            embedder: &embedder,
            cache: &cache,
        };
        let (gm, gr) = goal_rule();
        let provider = MockProvider::new()
            .with_rule(markers::THOUGHT, "go")
            .with_rule(gm, gr)
            .with_sequence(markers::REFINE, &["REVISE: push", "KEEP"])
            .with_rule(markers::ACT, "right");
        let templates = PromptTemplates::default();
        let thought = generate_thought("s", &provider, &templates).unwrap();
        let transcript = refine_loop("s", &thought, &critic, &provider, 2, 4, &templates).unwrap();
        let action = act("s", &transcript.final_thought, &provider, &templates).unwrap();
        assert_eq!(action, "right");
        assert!(provider.calls() <= 8, "calls = {}", provider.calls());
    }

    #[test]
    fn act_fills_both_placeholders() {
        let templates = PromptTemplates::default();
        let provider = MockProvider::new().with_rule(markers::ACT, "interact");
        let action = act("STATE-77", "THOUGHT-99", &provider, &templates).unwrap();
        assert_eq!(action, "interact");
        let captured = provider.captured.lock().unwrap();
        assert!(captured[0].contains("STATE-77") && captured[0].contains("THOUGHT-99"));
    }

    #[test]
    fn best_of_n_selects_by_number_and_dedupes() {
        let d = 16;
        let ckpt = test_checkpoint(d);
        let embedder = HashEmbedder::new(d);
        let cache = EmbedCache::in_memory();
        let critic = CriticBundle {
            checkpoint: &ckpt,
            embedder: &embedder,
            cache: &cache,
        };
        let (gm, gr) = goal_rule();
        let provider = MockProvider::new()
            .with_sequence(markers::THOUGHT, &["alpha", "alpha", "beta"])
            .with_rule(gm, gr)
            .with_rule(markers::SELECT, "the best is option 2.");
        let templates = PromptTemplates::default();
        let sel = best_of_n("s", &provider, &critic, 3, 2, &templates).unwrap();
        assert_eq!(sel.candidates.len(), 2, "duplicates deduplicated");
        assert_eq!(sel.thought, "beta");
        assert!(!sel.parse_warning);
    }

    #[test]
    fn best_of_n_unparseable_index_falls_back_to_first() {
        let d = 16;
        let ckpt = test_checkpoint(d);
        let embedder = HashEmbedder::new(d);
        let cache = EmbedCache::in_memory();
        let critic = CriticBundle {
            checkpoint: &ckpt,
            embedder: &embedder,
            cache: &cache,
        };
        let (gm, gr) = goal_rule();
        let provider = MockProvider::new()
            .with_sequence(markers::THOUGHT, &["alpha", "beta"])
            .with_rule(gm, gr)
            .with_rule(markers::SELECT, "hard to say");
        let templates = PromptTemplates::default();
        let sel = best_of_n("s", &provider, &critic, 2, 2, &templates).unwrap();
        assert_eq!(sel.thought, "alpha");
        assert!(sel.parse_warning);
    }

    #[test]
    fn selection_index_parsing() {
        assert_eq!(parse_selection_index("2", 3), Some(1));
        assert_eq!(parse_selection_index("the best is option 2.", 3), Some(1));
        assert_eq!(parse_selection_index("0", 3), None);
        assert_eq!(parse_selection_index("7", 3), None);
        assert_eq!(parse_selection_index("none", 3), None);
    }

    #[test]
    fn template_overrides_load_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("thought.txt"), "OVERRIDE {state}").unwrap();
        let templates = PromptTemplates::for_env("keydoor")
            .load_overrides(dir.path())
            .unwrap();
        assert_eq!(templates.fill_thought("X"), "OVERRIDE X");
        // untouched templates keep their defaults
        assert!(templates.refine.contains(markers::REFINE));
    }
}
