//! Offline trajectory ingestion, validation, summarization, and hindsight
//! relabeling into goal-reaching training tuples.
//!
//! The dataset format is line-delimited JSON, one trajectory per line. A
//! trajectory's last step is the terminal record: it carries the final state
//! but no thought or action. Hindsight goals are always states actually
//! reached later in the same trajectory; goal identity is the step index, not
//! the text.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::io::BufRead;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::TextProvider;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("line {line}: invalid record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: step {step} missing {field}")]
    MissingField {
        line: usize,
        step: usize,
        field: &'static str,
    },
    #[error("line {line}: duplicate trajectory id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("step {step}: summary missing")]
    MissingSummary { step: usize },
    #[error("step {step}: summarization failed: {reason}")]
    SummarizeFailed { step: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One step of an episode. The terminal record omits `thought`/`env_action`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    /// Full interaction-history rendering at this point.
    pub raw_state: String,
    /// Compact description of `raw_state`; filled by summarization.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub summary: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub thought: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub env_action: Option<String>,
    pub observation: String,
    pub env_reward: f64,
}

/// One recorded episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub id: String,
    pub task_meta: BTreeMap<String, String>,
    pub steps: Vec<Step>,
    pub final_return: f64,
}

impl Trajectory {
    /// Number of state indices (one per step; the last step is terminal).
    pub fn state_count(&self) -> usize {
        self.steps.len()
    }

    /// Discounted return recomputed from per-step rewards.
    pub fn recompute_return(&self, gamma: f64) -> f64 {
        self.steps
            .iter()
            .enumerate()
            .map(|(t, s)| gamma.powi(t as i32) * s.env_reward)
            .sum()
    }
}

/// Where a training sample came from: (trajectory id, step t, goal step u).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSource {
    pub trajectory_id: String,
    pub step: usize,
    pub goal_step: usize,
}

/// One hindsight-relabeled training tuple, still in text form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub state_text: String,
    pub thought_text: String,
    pub next_state_text: String,
    pub goal_text: String,
    /// 1.0 iff the next state is the goal (u = t+1).
    pub reach_reward: f64,
    /// True exactly when `reach_reward` is 1: no bootstrap past the goal.
    pub terminal: bool,
    pub source: SampleSource,
}

/// Parse a line-delimited dataset. Blank lines are skipped; any other
/// malformed line is an error naming the line and offending field.
pub fn parse_trajectories<R: BufRead>(raw: R) -> Result<Vec<Trajectory>, TrajError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let traj = parse_line(&line, line_no)?;
        if !seen.insert(traj.id.clone()) {
            return Err(TrajError::DuplicateId {
                line: line_no,
                id: traj.id,
            });
        }
        out.push(traj);
    }
    Ok(out)
}

fn parse_line(line: &str, line_no: usize) -> Result<Trajectory, TrajError> {
    let traj: Trajectory = serde_json::from_str(line).map_err(|e| TrajError::Malformed {
        line: line_no,
        reason: e.to_string(),
    })?;
    validate(&traj, line_no)?;
    Ok(traj)
}

fn validate(traj: &Trajectory, line: usize) -> Result<(), TrajError> {
    if traj.id.is_empty() {
        return Err(TrajError::Invalid {
            line,
            reason: "empty trajectory id".into(),
        });
    }
    if traj.steps.is_empty() {
        return Err(TrajError::Invalid {
            line,
            reason: "trajectory has no steps".into(),
        });
    }
    let last = traj.steps.len() - 1;
    for (i, step) in traj.steps.iter().enumerate() {
        if step.raw_state.is_empty() {
            return Err(TrajError::MissingField {
                line,
                step: i,
                field: "raw_state",
            });
        }
        if i < last {
            if step.thought.as_deref().map_or(true, str::is_empty) {
                return Err(TrajError::MissingField {
                    line,
                    step: i,
                    field: "thought",
                });
            }
            if step.env_action.as_deref().map_or(true, str::is_empty) {
                return Err(TrajError::MissingField {
                    line,
                    step: i,
                    field: "env_action",
                });
            }
        }
        if !step.env_reward.is_finite() {
            return Err(TrajError::Invalid {
                line,
                reason: format!("step {i}: non-finite env_reward"),
            });
        }
    }
    if !traj.final_return.is_finite() {
        return Err(TrajError::Invalid {
            line,
            reason: "non-finite final_return".into(),
        });
    }
    Ok(())
}

/// Check that the stored return matches the rewards under `gamma`.
pub fn check_final_return(traj: &Trajectory, gamma: f64, tol: f64) -> Result<(), TrajError> {
    let recomputed = traj.recompute_return(gamma);
    if (recomputed - traj.final_return).abs() > tol {
        return Err(TrajError::Invalid {
            line: 0,
            reason: format!(
                "trajectory {}: final_return {} != recomputed {}",
                traj.id, traj.final_return, recomputed
            ),
        });
    }
    Ok(())
}

/// Canonical single-line serialization of one trajectory.
pub fn trajectory_to_line(traj: &Trajectory) -> String {
    serde_json::to_string(traj).expect("trajectory serialization cannot fail")
}

/// Write a dataset in canonical line-delimited form.
pub fn write_trajectories<W: std::io::Write>(
    w: &mut W,
    trajs: &[Trajectory],
) -> Result<(), TrajError> {
    for t in trajs {
        writeln!(w, "{}", trajectory_to_line(t))?;
    }
    Ok(())
}

/// Fill every missing step summary with one provider call per step.
///
/// The prompt for step `t` sees the history prefix of steps `0..=t`, so
/// summaries are cumulative. Steps that already carry a summary are left
/// untouched; with `skip_summarize` the whole call is the identity (synthetic
/// environments emit canonical summaries directly).
pub fn summarize_trajectory(
    mut traj: Trajectory,
    provider: &dyn TextProvider,
    template: &str,
    skip_summarize: bool,
) -> Result<Trajectory, TrajError> {
    if skip_summarize {
        return Ok(traj);
    }
    for t in 0..traj.steps.len() {
        if traj.steps[t].summary.is_some() {
            continue;
        }
        let history = render_history(&traj.steps[..=t]);
        let prompt = template.replace("{history}", &history);
        let response = provider
            .send(&prompt)
            .or_else(|_| provider.send(&prompt))
            .map_err(|e| TrajError::SummarizeFailed {
                step: t,
                reason: e.to_string(),
            })?;
        let summary = response.trim().to_string();
        if summary.is_empty() {
            return Err(TrajError::SummarizeFailed {
                step: t,
                reason: "provider output empty".into(),
            });
        }
        traj.steps[t].summary = Some(summary);
    }
    Ok(traj)
}

fn render_history(steps: &[Step]) -> String {
    let mut out = String::new();
    for (i, s) in steps.iter().enumerate() {
        out.push_str(&format!("[{i}] state: {}\n", s.raw_state));
        if let Some(t) = &s.thought {
            out.push_str(&format!("    thought: {t}\n"));
        }
        if let Some(a) = &s.env_action {
            out.push_str(&format!("    action: {a}\n"));
        }
        if !s.observation.is_empty() {
            out.push_str(&format!("    observation: {}\n", s.observation));
        }
    }
    out
}

/// Hindsight-relabel one trajectory into training tuples.
///
/// For each non-terminal step `t`, draws `min(goals_per_step, remaining)`
/// distinct goal indices uniformly without replacement from the strict
/// future `{t+1, .., last}`. Deterministic given the RNG state.
pub fn build_transitions<R: Rng>(
    traj: &Trajectory,
    goals_per_step: usize,
    rng: &mut R,
) -> Result<Vec<TransitionSample>, TrajError> {
    assert!(goals_per_step >= 1, "goals_per_step must be >= 1");
    let summaries: Vec<&str> = traj
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.summary
                .as_deref()
                .ok_or(TrajError::MissingSummary { step: i })
        })
        .collect::<Result<_, _>>()?;

    let last = traj.steps.len() - 1;
    let mut out = Vec::new();
    for t in 0..last {
        let mut futures: Vec<usize> = (t + 1..=last).collect();
        let k = goals_per_step.min(futures.len());
        // partial Fisher-Yates: the first k slots end up a uniform
        // without-replacement draw
        for i in 0..k {
            let j = rng.gen_range(i..futures.len());
            futures.swap(i, j);
        }
        for &u in &futures[..k] {
            let reach = u == t + 1;
            out.push(TransitionSample {
                state_text: summaries[t].to_string(),
                thought_text: traj.steps[t]
                    .thought
                    .clone()
                    .expect("validated non-terminal step has a thought"),
                next_state_text: summaries[t + 1].to_string(),
                goal_text: summaries[u].to_string(),
                reach_reward: if reach { 1.0 } else { 0.0 },
                terminal: reach,
                source: SampleSource {
                    trajectory_id: traj.id.clone(),
                    step: t,
                    goal_step: u,
                },
            });
        }
    }
    Ok(out)
}

/// Goal-less ablation tuples: the goal slot is the empty text (a fixed
/// constant embedding) and the reward marks task success at the next step.
/// One sample per non-terminal step; the episode end is the bootstrap cut.
pub fn build_scalar_transitions(
    traj: &Trajectory,
    success_reward: f64,
) -> Result<Vec<TransitionSample>, TrajError> {
    let summaries: Vec<&str> = traj
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.summary
                .as_deref()
                .ok_or(TrajError::MissingSummary { step: i })
        })
        .collect::<Result<_, _>>()?;
    let last = traj.steps.len() - 1;
    Ok((0..last)
        .map(|t| TransitionSample {
            state_text: summaries[t].to_string(),
            thought_text: traj.steps[t]
                .thought
                .clone()
                .expect("validated non-terminal step has a thought"),
            next_state_text: summaries[t + 1].to_string(),
            goal_text: String::new(),
            reach_reward: if traj.steps[t].env_reward >= success_reward {
                1.0
            } else {
                0.0
            },
            terminal: t + 1 == last,
            source: SampleSource {
                trajectory_id: traj.id.clone(),
                step: t,
                goal_step: last,
            },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::MockProvider;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const VALID: &str = include_str!("../tests/fixtures/valid_episode.jsonl");
    const MISSING_THOUGHT: &str = include_str!("../tests/fixtures/missing_thought.jsonl");

    fn toy_trajectory(n_steps: usize) -> Trajectory {
        let steps = (0..n_steps)
            .map(|i| Step {
                raw_state: format!("state {i}"),
                summary: Some(format!("sum {i}")),
                thought: (i + 1 < n_steps).then(|| format!("tht {i}")),
                env_action: (i + 1 < n_steps).then(|| format!("act {i}")),
                observation: String::new(),
                env_reward: 0.0,
            })
            .collect();
        Trajectory {
            id: "toy".into(),
            task_meta: BTreeMap::new(),
            steps,
            final_return: 0.0,
        }
    }

    #[test]
    fn parses_valid_episode_round_trip() {
        let trajs = parse_trajectories(VALID.as_bytes()).unwrap();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].steps.len(), 3);
        let line = trajectory_to_line(&trajs[0]);
        assert_eq!(line, VALID.trim_end());
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(parse_trajectories("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn missing_thought_names_line_and_step() {
        let err = parse_trajectories(MISSING_THOUGHT.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "line 1: step 0 missing thought");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let line = VALID.trim_end().replace("\"final_return\"", "\"bogus\":1,\"final_return\"");
        let err = parse_trajectories(line.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let two = format!("{}{}", VALID, VALID);
        let err = parse_trajectories(two.as_bytes()).unwrap_err();
        assert!(matches!(err, TrajError::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn summarize_is_identity_when_summaries_present() {
        let traj = toy_trajectory(3);
        let provider = MockProvider::new(); // would error if called
        let out = summarize_trajectory(traj.clone(), &provider, "{history}", false).unwrap();
        assert_eq!(out, traj);
        assert_eq!(provider.calls(), 0);
    }

    #[test]
    fn summarize_fills_with_mock_passthrough() {
        let mut traj = toy_trajectory(3);
        for s in &mut traj.steps {
            s.summary = None;
        }
        let provider =
            MockProvider::new().with_sequence("history", &["SUM:0", "SUM:1", "SUM:2"]);
        let out = summarize_trajectory(traj, &provider, "history\n{history}", false).unwrap();
        for (k, s) in out.steps.iter().enumerate() {
            assert_eq!(s.summary.as_deref(), Some(format!("SUM:{k}").as_str()));
        }
        assert_eq!(provider.calls(), 3);
    }

    #[test]
    fn summarize_prefix_is_cumulative() {
        let mut traj = toy_trajectory(3);
        for s in &mut traj.steps {
            s.summary = None;
        }
        let provider = MockProvider::new().with_rule("state", "S");
        summarize_trajectory(traj, &provider, "{history}", false).unwrap();
        let captured = provider.captured.lock().unwrap();
        assert!(captured[0].contains("state 0") && !captured[0].contains("state 1"));
        assert!(captured[2].contains("state 0") && captured[2].contains("state 2"));
    }

    #[test]
    fn skip_summarize_is_identity() {
        let mut traj = toy_trajectory(2);
        traj.steps[0].summary = None;
        let provider = MockProvider::new();
        let out = summarize_trajectory(traj.clone(), &provider, "{history}", true).unwrap();
        assert_eq!(out, traj);
    }

    #[test]
    fn two_step_trajectory_yields_single_terminal_sample() {
        let traj = toy_trajectory(2);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let samples = build_transitions(&traj, 1, &mut rng).unwrap();
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert_eq!(s.source.goal_step, 1);
        assert_eq!(s.reach_reward, 1.0);
        assert!(s.terminal);
        assert_eq!(s.goal_text, "sum 1");
    }

    #[test]
    fn goals_capped_without_replacement() {
        let traj = toy_trajectory(5);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let samples = build_transitions(&traj, 10, &mut rng).unwrap();
        let step0: Vec<_> = samples.iter().filter(|s| s.source.step == 0).collect();
        assert_eq!(step0.len(), 4);
        let mut goals: Vec<usize> = step0.iter().map(|s| s.source.goal_step).collect();
        goals.sort_unstable();
        assert_eq!(goals, vec![1, 2, 3, 4]);
    }

    #[test]
    fn build_transitions_is_deterministic() {
        let traj = toy_trajectory(6);
        let a = build_transitions(&traj, 3, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        let b = build_transitions(&traj, 3, &mut ChaCha20Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_summary_names_step() {
        let mut traj = toy_trajectory(3);
        traj.steps[1].summary = None;
        let err = build_transitions(&traj, 1, &mut ChaCha20Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(err.to_string(), "step 1: summary missing");
    }

    #[test]
    fn reach_semantics_exhaustive_on_small_trajectories() {
        for len in 2..=6 {
            let traj = toy_trajectory(len);
            let mut rng = ChaCha20Rng::seed_from_u64(len as u64);
            for s in build_transitions(&traj, 10, &mut rng).unwrap() {
                assert!(s.source.goal_step > s.source.step);
                assert!(s.source.goal_step < len);
                let arrives = s.source.goal_step == s.source.step + 1;
                assert_eq!(s.reach_reward == 1.0, arrives);
                assert_eq!(s.terminal, arrives);
            }
        }
    }

    #[test]
    fn goal_draw_is_uniform_over_future_indices() {
        // 10-step trajectory: step 0 has 9 future indices, each 1/9.
        let traj = toy_trajectory(10);
        let mut counts = [0usize; 10];
        for seed in 0..100_000u64 {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let samples = build_transitions(&traj, 1, &mut rng).unwrap();
            let u = samples
                .iter()
                .find(|s| s.source.step == 0)
                .unwrap()
                .source
                .goal_step;
            counts[u] += 1;
        }
        assert_eq!(counts[0], 0);
        for u in 1..10 {
            let freq = counts[u] as f64 / 100_000.0;
            assert!(
                (freq - 1.0 / 9.0).abs() < 0.02,
                "u={u} freq={freq}"
            );
        }
    }

    #[test]
    fn scalar_transitions_mark_success_and_episode_end() {
        let mut traj = toy_trajectory(4);
        traj.steps[2].env_reward = 1.0; // success on the last action step
        let samples = build_scalar_transitions(&traj, 1.0).unwrap();
        assert_eq!(samples.len(), 3);
        assert!(samples.iter().all(|s| s.goal_text.is_empty()));
        assert_eq!(samples[0].reach_reward, 0.0);
        assert!(!samples[0].terminal);
        assert_eq!(samples[2].reach_reward, 1.0);
        assert!(samples[2].terminal);
    }

    #[test]
    fn final_return_check() {
        let mut traj = toy_trajectory(3);
        traj.steps[1].env_reward = 1.0;
        traj.final_return = 0.99;
        check_final_return(&traj, 0.99, 1e-9).unwrap();
        traj.final_return = 0.5;
        assert!(check_final_return(&traj, 0.99, 1e-9).is_err());
    }
}
