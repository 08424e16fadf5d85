//! A deterministic rule-based provider for evaluating the pipeline on
//! synthetic environments without any real model: thoughts come from a seeded
//! mixture of the on-plan and off-plan routines, goal proposals are the
//! canonical candidate futures, and the refinement rule revises whenever the
//! top negative likelihood exceeds the top positive.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::SyntheticEnv;
use crate::agent::markers;
use crate::provider::{ProviderError, TextProvider};

pub struct EnvMockProvider {
    env: Arc<dyn SyntheticEnv>,
    /// Probability that a generated thought follows the off-plan routine.
    p_offplan: f64,
    rng: Mutex<ChaCha20Rng>,
    calls: AtomicU64,
}

impl EnvMockProvider {
    pub fn new(env: Arc<dyn SyntheticEnv>, seed: u64, p_offplan: f64) -> Self {
        Self {
            env,
            p_offplan,
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
            calls: AtomicU64::new(0),
        }
    }

    fn parse_state(&self, prompt: &str) -> Result<usize, ProviderError> {
        let rendering = field(prompt, "State: ").ok_or_else(|| ProviderError::NoRuleMatches {
            preview: "no State line".into(),
        })?;
        self.env
            .state_by_rendering(rendering.trim())
            .ok_or(ProviderError::NoRuleMatches {
                preview: format!("unknown state rendering {rendering:?}"),
            })
    }

    fn good_thought(&self, state: usize) -> String {
        self.env.thought_for(state, self.env.optimal_action(state))
    }

    fn respond(&self, prompt: &str) -> Result<String, ProviderError> {
        if prompt.contains(markers::PROPOSE_POSITIVE) || prompt.contains(markers::PROPOSE_NEGATIVE)
        {
            let state = self.parse_state(prompt)?;
            let positive = prompt.contains(markers::PROPOSE_POSITIVE);
            let goals = self.env.mock_goals(state, positive);
            return Ok(format!("1. {}\n2. {}", goals[0], goals[1]));
        }
        if prompt.contains(markers::THOUGHT) {
            let state = self.parse_state(prompt)?;
            let offplan = self.rng.lock().unwrap().gen::<f64>() < self.p_offplan;
            let action = if offplan {
                self.env.offplan_action(state)
            } else {
                self.env.optimal_action(state)
            };
            return Ok(self.env.thought_for(state, action));
        }
        if prompt.contains(markers::REFINE) {
            let state = self.parse_state(prompt)?;
            return Ok(match parse_assessment(prompt) {
                Assessment::Goals { top_pos, top_neg } if top_neg > top_pos => {
                    format!("REVISE: {}", self.good_thought(state))
                }
                Assessment::Scalar(v) if v < 0.5 => {
                    format!("REVISE: {}", self.good_thought(state))
                }
                _ => "KEEP".to_string(),
            });
        }
        if prompt.contains(markers::ACT) {
            let state = self.parse_state(prompt)?;
            let thought = field(prompt, "Thought: ").unwrap_or_default();
            let action = self.env.action_for_thought(state, thought.trim());
            return Ok(self.env.action_text(state, action));
        }
        if prompt.contains(markers::SELECT) {
            return Ok(format!("{}", best_candidate(prompt) + 1));
        }
        if prompt.contains(markers::SUMMARIZE) {
            // synthetic summaries are the renderings; echo the state line
            let state = self.parse_state(prompt)?;
            return Ok(self.env.render(state));
        }
        Err(ProviderError::NoRuleMatches {
            preview: prompt.chars().take(80).collect(),
        })
    }
}

impl TextProvider for EnvMockProvider {
    fn send(&self, prompt: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.respond(prompt)
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

/// First line starting with `prefix`, without the prefix.
fn field<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|l| l.trim_start().strip_prefix(prefix))
}

enum Assessment {
    Goals { top_pos: f64, top_neg: f64 },
    Scalar(f64),
}

/// Read the critic feedback embedded in a refinement prompt: the first `[+]`
/// and `[-]` lines (blocks are sorted by descending likelihood), or a bare
/// number for the goal-less critic.
fn parse_assessment(prompt: &str) -> Assessment {
    let mut top_pos: Option<f64> = None;
    let mut top_neg: Option<f64> = None;
    for line in prompt.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("[+] ") {
            if top_pos.is_none() {
                top_pos = leading_float(rest);
            }
        } else if let Some(rest) = line.strip_prefix("[-] ") {
            if top_neg.is_none() {
                top_neg = leading_float(rest);
            }
        }
    }
    if top_pos.is_some() || top_neg.is_some() {
        return Assessment::Goals {
            top_pos: top_pos.unwrap_or(0.0),
            top_neg: top_neg.unwrap_or(0.0),
        };
    }
    // goal-less mode: the rendered value is a single bare number line
    for line in prompt.lines() {
        if let Ok(v) = line.trim().parse::<f64>() {
            return Assessment::Scalar(v);
        }
    }
    Assessment::Scalar(1.0)
}

fn leading_float(text: &str) -> Option<f64> {
    text.split_whitespace().next()?.parse().ok()
}

/// Pick the candidate with the best (top positive - top negative) spread from
/// a best-of-n selection prompt.
fn best_candidate(prompt: &str) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut current: Option<usize> = None;
    let mut pos: Option<f64> = None;
    let mut neg: Option<f64> = None;
    let mut finish = |idx: Option<usize>, pos: &mut Option<f64>, neg: &mut Option<f64>,
                      best: &mut (usize, f64)| {
        if let Some(i) = idx {
            let spread = pos.unwrap_or(0.0) - neg.unwrap_or(0.0);
            if spread > best.1 {
                *best = (i, spread);
            }
        }
        *pos = None;
        *neg = None;
    };
    for line in prompt.lines() {
        let line = line.trim();
        let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits > 0 && line[digits..].starts_with(". ") {
            finish(current, &mut pos, &mut neg, &mut best);
            current = line[..digits].parse::<usize>().ok().map(|i| i - 1);
        } else if let Some(rest) = line.strip_prefix("[+] ") {
            if pos.is_none() {
                pos = leading_float(rest);
            }
        } else if let Some(rest) = line.strip_prefix("[-] ") {
            if neg.is_none() {
                neg = leading_float(rest);
            }
        }
    }
    finish(current, &mut pos, &mut neg, &mut best);
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envworld::KeyDoorEnv;

    fn provider(p_offplan: f64) -> EnvMockProvider {
        EnvMockProvider::new(Arc::new(KeyDoorEnv::default()), 9, p_offplan)
    }

    #[test]
    fn proposals_are_numbered_canonical_renderings() {
        let p = provider(0.0);
        let prompt = format!(
            "State: pos=1 key=0 door=0\nThought: rush the door\nPropose 2 {} now",
            markers::PROPOSE_NEGATIVE
        );
        let out = p.send(&prompt).unwrap();
        assert_eq!(out, "1. pos=2 key=0 door=0\n2. pos=4 key=0 door=0");
    }

    #[test]
    fn refinement_rule_follows_the_top_likelihoods() {
        let p = provider(0.0);
        let revise_prompt = format!(
            "State: pos=1 key=0 door=0\n[+] 0.60 \u{2014} a\n[-] 0.90 \u{2014} b\n{}",
            markers::REFINE
        );
        assert_eq!(p.send(&revise_prompt).unwrap(), "REVISE: grab the key first");
        let keep_prompt = format!(
            "State: pos=1 key=0 door=0\n[+] 0.95 \u{2014} a\n[-] 0.20 \u{2014} b\n{}",
            markers::REFINE
        );
        assert_eq!(p.send(&keep_prompt).unwrap(), "KEEP");
    }

    #[test]
    fn scalar_assessments_use_the_half_threshold() {
        let p = provider(0.0);
        let low = format!("State: pos=1 key=0 door=0\n0.31\n{}", markers::REFINE);
        assert!(p.send(&low).unwrap().starts_with("REVISE:"));
        let high = format!("State: pos=1 key=0 door=0\n0.74\n{}", markers::REFINE);
        assert_eq!(p.send(&high).unwrap(), "KEEP");
    }

    #[test]
    fn actions_follow_the_thought() {
        let p = provider(0.0);
        let prompt = format!(
            "State: pos=1 key=0 door=0\nThought: rush the door\ngive the {}",
            markers::ACT
        );
        assert_eq!(p.send(&prompt).unwrap(), "right");
        let prompt = format!(
            "State: pos=1 key=0 door=0\nThought: grab the key first\ngive the {}",
            markers::ACT
        );
        assert_eq!(p.send(&prompt).unwrap(), "interact");
    }

    #[test]
    fn thoughts_are_seeded_and_deterministic() {
        let prompt = format!("State: pos=2 key=0 door=0\n{}", markers::THOUGHT);
        let a: Vec<String> = {
            let p = provider(0.5);
            (0..8).map(|_| p.send(&prompt).unwrap()).collect()
        };
        let b: Vec<String> = {
            let p = provider(0.5);
            (0..8).map(|_| p.send(&prompt).unwrap()).collect()
        };
        assert_eq!(a, b);
        assert!(a.contains(&"grab the key first".to_string()));
        assert!(a.contains(&"rush the door".to_string()));
    }

    #[test]
    fn selection_picks_the_best_spread() {
        let p = provider(0.0);
        let prompt = format!(
            "State: pos=2 key=0 door=0\n1. rush the door\n[+] 0.50 \u{2014} a\n[-] 0.90 \u{2014} b\n2. grab the key first\n[+] 0.90 \u{2014} a\n[-] 0.10 \u{2014} b\npick the {}",
            markers::SELECT
        );
        assert_eq!(p.send(&prompt).unwrap(), "2");
    }
}
