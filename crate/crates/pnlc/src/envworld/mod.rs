//! Synthetic, fully enumerable text environments with scripted data-collection
//! policies, rollout recording, and agent evaluation. These stand in for
//! full-scale interactive benchmarks at desk scale: every environment exports
//! its exact tabular form for the dynamic-programming reference.

mod donation;
mod keydoor;
mod mock_agent;

pub use donation::DonationEnv;
pub use keydoor::KeyDoorEnv;
pub use mock_agent::EnvMockProvider;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    act, best_of_n, generate_thought, refine_loop, refine_loop_scalar, AgentError,
    PromptTemplates, Verdict,
};
use crate::critic::CriticBundle;
use crate::oracle::{BehaviorPolicy, TabularMdp};
use crate::provider::TextProvider;
use crate::trajdata::{Step, Trajectory};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("illegal action {action:?}; legal actions: {legal:?}")]
    IllegalAction { action: String, legal: Vec<String> },
    #[error("agent failure: {0}")]
    Agent(#[from] AgentError),
    #[error("unknown environment {0:?}")]
    UnknownEnv(String),
}

/// An enumerable deterministic text environment. States and actions are dense
/// indices; renderings are canonical and injective.
pub trait SyntheticEnv: Send + Sync {
    fn name(&self) -> &'static str;
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn horizon(&self) -> usize;
    fn initial_state(&self) -> usize;

    /// Canonical state rendering; doubles as the state summary.
    fn render(&self, state: usize) -> String;
    /// Canonical identifier of an action (also its legal action string).
    fn action_name(&self, action: usize) -> String;
    /// Parse an agent-emitted action string.
    fn parse_action(&self, text: &str) -> Result<usize, EnvError>;
    /// The action text a scripted agent emits for this choice.
    fn action_text(&self, state: usize, action: usize) -> String;

    /// Deterministic transition: (next state, reward, episode done). Total
    /// over all (state, action) pairs; terminal states absorb.
    fn step(&self, state: usize, action: usize) -> (usize, f64, bool);

    /// Reward granted if the episode is cut at the horizon in `state`.
    fn truncation_reward(&self, _state: usize) -> f64 {
        0.0
    }
    /// Final-step reward at or above this counts as task success.
    fn success_reward(&self) -> f64;

    /// The task-optimal routine.
    fn optimal_action(&self, state: usize) -> usize;
    /// The engineered suboptimal routine mock agents fall into.
    fn offplan_action(&self, state: usize) -> usize;
    /// Canonical thought text for taking `action` in `state`.
    fn thought_for(&self, state: usize, action: usize) -> String;
    /// Inverse of [`SyntheticEnv::thought_for`]; unknown thoughts default to
    /// the optimal action.
    fn action_for_thought(&self, state: usize, thought: &str) -> usize {
        for a in 0..self.num_actions() {
            if self.thought_for(state, a) == thought {
                return a;
            }
        }
        self.optimal_action(state)
    }

    /// Rendering of the canonical success state.
    fn success_anchor(&self) -> String;
    /// Rendering of the canonical commitment-failure state.
    fn failure_anchor(&self) -> String;

    /// Reverse rendering lookup.
    fn state_by_rendering(&self, rendering: &str) -> Option<usize> {
        (0..self.num_states()).find(|&s| self.render(s) == rendering)
    }

    /// Two canonical goal renderings per polarity for the mock proposer: the
    /// immediate consequences of the on-plan and off-plan routines plus the
    /// global anchors.
    fn mock_goals(&self, state: usize, positive: bool) -> [String; 2] {
        if positive {
            let (next, _, _) = self.step(state, self.optimal_action(state));
            [self.render(next), self.success_anchor()]
        } else {
            let (next, _, _) = self.step(state, self.offplan_action(state));
            [self.render(next), self.failure_anchor()]
        }
    }
}

/// Build an environment by name.
pub fn env_by_name(name: &str) -> Result<Arc<dyn SyntheticEnv>, EnvError> {
    match name {
        "keydoor" => Ok(Arc::new(KeyDoorEnv::default())),
        "donation" => Ok(Arc::new(DonationEnv::default())),
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}

/// Execute one action given as text: returns the next state, the observation
/// (the canonical rendering of the next state), the reward, and done.
pub fn env_step(
    env: &dyn SyntheticEnv,
    state: usize,
    action_text: &str,
) -> Result<(usize, String, f64, bool), EnvError> {
    let action = env.parse_action(action_text)?;
    let (next, reward, done) = env.step(state, action);
    Ok((next, env.render(next), reward, done))
}

/// Exact tabular form of the environment.
pub fn to_tabular(env: &dyn SyntheticEnv) -> TabularMdp {
    let n = env.num_states();
    let na = env.num_actions();
    let mut transition = vec![vec![vec![0.0; n]; na]; n];
    for s in 0..n {
        for a in 0..na {
            let (next, _, _) = env.step(s, a);
            transition[s][a][next] = 1.0;
        }
    }
    let mut initial = vec![0.0; n];
    initial[env.initial_state()] = 1.0;
    TabularMdp {
        states: (0..n).map(|s| env.render(s)).collect(),
        actions: (0..na)
            .map(|a| env.thought_for(env.initial_state(), a))
            .collect(),
        transition,
        initial,
        horizon: env.horizon(),
    }
}

/// The epsilon-mixture data-collection policy: with probability `epsilon` a
/// uniform random action, otherwise the optimal routine.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedPolicy {
    pub epsilon: f64,
}

/// Exact action distribution of the scripted policy, per state.
pub fn behavior_policy(env: &dyn SyntheticEnv, epsilon: f64) -> BehaviorPolicy {
    let na = env.num_actions();
    let probs = (0..env.num_states())
        .map(|s| {
            let mut row = vec![epsilon / na as f64; na];
            row[env.optimal_action(s)] += 1.0 - epsilon;
            row
        })
        .collect();
    BehaviorPolicy { probs }
}

/// Play one scripted episode and record it as a trajectory. The last step is
/// the terminal record (final state, no thought or action). Deterministic
/// per seed.
pub fn rollout(
    env: &dyn SyntheticEnv,
    policy: &ScriptedPolicy,
    seed: u64,
    gamma: f64,
    id: &str,
) -> Trajectory {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut state = env.initial_state();
    let mut steps: Vec<Step> = Vec::new();
    let mut done = false;
    for _ in 0..env.horizon() {
        let action = if rng.gen::<f64>() < policy.epsilon {
            rng.gen_range(0..env.num_actions())
        } else {
            env.optimal_action(state)
        };
        let (next, reward, finished) = env.step(state, action);
        steps.push(Step {
            raw_state: env.render(state),
            summary: Some(env.render(state)),
            thought: Some(env.thought_for(state, action)),
            env_action: Some(env.action_text(state, action)),
            observation: env.render(next),
            env_reward: reward,
        });
        state = next;
        if finished {
            done = true;
            break;
        }
    }
    if !done {
        if let Some(last) = steps.last_mut() {
            last.env_reward += env.truncation_reward(state);
        }
    }
    steps.push(Step {
        raw_state: env.render(state),
        summary: Some(env.render(state)),
        thought: None,
        env_action: None,
        observation: String::new(),
        env_reward: 0.0,
    });
    let mut traj = Trajectory {
        id: id.to_string(),
        task_meta: BTreeMap::from([("env".to_string(), env.name().to_string())]),
        steps,
        final_return: 0.0,
    };
    traj.final_return = traj.recompute_return(gamma);
    traj
}

/// Collect a dataset of scripted episodes with per-episode seeds derived from
/// the master seed.
pub fn collect_dataset(
    env: &dyn SyntheticEnv,
    policy: &ScriptedPolicy,
    episodes: usize,
    seed: u64,
    gamma: f64,
) -> Vec<Trajectory> {
    let mut master = ChaCha20Rng::seed_from_u64(seed);
    (0..episodes)
        .map(|i| {
            let episode_seed = master.gen::<u64>();
            rollout(env, policy, episode_seed, gamma, &format!("ep-{i:06}"))
        })
        .collect()
}

/// How the evaluated agent turns thoughts into actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentMode {
    /// Thought then action; no critic.
    React,
    /// Critic-guided refinement of up to `m` thoughts.
    Pnlc,
    /// Goal-less scalar critic feedback.
    Scalar,
    /// Best-of-n selection over generated thoughts; no revision.
    BestOfN,
}

/// Evaluation protocol settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: AgentMode,
    /// Refinement budget: total thoughts considered per step.
    pub m: usize,
    /// Goals proposed per critic evaluation (even).
    pub n: usize,
    /// Candidate count for best-of-n mode.
    pub n_thoughts: usize,
    pub episodes: usize,
    pub seed: u64,
}

/// One evaluated step, as written to transcripts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub thoughts: Vec<String>,
    pub values: Vec<String>,
    pub verdicts: Vec<String>,
    pub action: String,
    pub observation: String,
    pub reward: f64,
}

/// One evaluated episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub final_reward: f64,
    pub success: bool,
    pub provider_calls: u64,
}

/// Aggregate evaluation metrics; the per-episode records travel alongside.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: String,
    pub mode: AgentMode,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_final_reward: f64,
    pub mean_steps: f64,
    pub mean_provider_calls_per_step: f64,
}

/// Run evaluation episodes with fresh per-episode providers.
///
/// `critic` is required for every mode except [`AgentMode::React`]. Reported
/// aggregates are recomputable from the returned records.
pub fn evaluate_agent<F>(
    env: &dyn SyntheticEnv,
    config: &EvalConfig,
    critic: Option<&CriticBundle>,
    provider_factory: F,
    templates: &PromptTemplates,
) -> Result<(EvalReport, Vec<EpisodeRecord>), EnvError>
where
    F: Fn(u64) -> Box<dyn TextProvider>,
{
    assert!(config.episodes >= 1, "episodes must be >= 1");
    let mut master = ChaCha20Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.episodes);
    for episode in 0..config.episodes {
        let episode_seed = master.gen::<u64>();
        let provider = provider_factory(episode_seed);
        let record = run_episode(env, config, critic, provider.as_ref(), templates, episode, episode_seed)?;
        records.push(record);
    }

    let n = records.len() as f64;
    let total_steps: usize = records.iter().map(|r| r.steps.len()).sum();
    let total_calls: u64 = records.iter().map(|r| r.provider_calls).sum();
    let report = EvalReport {
        env: env.name().to_string(),
        mode: config.mode,
        episodes: records.len(),
        success_rate: records.iter().filter(|r| r.success).count() as f64 / n,
        mean_final_reward: records.iter().map(|r| r.final_reward).sum::<f64>() / n,
        mean_steps: total_steps as f64 / n,
        mean_provider_calls_per_step: total_calls as f64 / total_steps.max(1) as f64,
    };
    Ok((report, records))
}

fn run_episode(
    env: &dyn SyntheticEnv,
    config: &EvalConfig,
    critic: Option<&CriticBundle>,
    provider: &dyn TextProvider,
    templates: &PromptTemplates,
    episode: usize,
    seed: u64,
) -> Result<EpisodeRecord, EnvError> {
    let mut state = env.initial_state();
    let mut steps = Vec::new();
    let mut final_reward = 0.0;
    let mut done = false;

    for step_idx in 0..env.horizon() {
        let summary = env.render(state);
        let (thoughts, values, verdicts, final_thought) = match config.mode {
            AgentMode::React => {
                let t = generate_thought(&summary, provider, templates)?;
                (vec![t.clone()], vec![], vec![], t)
            }
            AgentMode::Pnlc => {
                let critic = critic.expect("pnlc mode requires a critic");
                let t = generate_thought(&summary, provider, templates)?;
                let transcript =
                    refine_loop(&summary, &t, critic, provider, config.m, config.n, templates)?;
                transcript_columns(&transcript)
            }
            AgentMode::Scalar => {
                let critic = critic.expect("scalar mode requires a critic");
                let t = generate_thought(&summary, provider, templates)?;
                let transcript =
                    refine_loop_scalar(&summary, &t, critic, provider, config.m, templates)?;
                transcript_columns(&transcript)
            }
            AgentMode::BestOfN => {
                let critic = critic.expect("best-of-n mode requires a critic");
                let selection = best_of_n(
                    &summary,
                    provider,
                    critic,
                    config.n_thoughts,
                    config.n,
                    templates,
                )?;
                let thoughts: Vec<String> =
                    selection.candidates.iter().map(|(t, _)| t.clone()).collect();
                let values: Vec<String> = selection
                    .candidates
                    .iter()
                    .map(|(_, v)| v.rendered.clone())
                    .collect();
                (thoughts, values, vec![], selection.thought)
            }
        };

        let action_text = act(&summary, &final_thought, provider, templates)?;
        let (next, observation, reward, finished) = env_step(env, state, &action_text)?;
        steps.push(StepRecord {
            step: step_idx,
            thoughts,
            values,
            verdicts,
            action: action_text,
            observation,
            reward,
        });
        state = next;
        final_reward = reward;
        if finished {
            done = true;
            break;
        }
    }
    if !done {
        let bonus = env.truncation_reward(state);
        if let Some(last) = steps.last_mut() {
            last.reward += bonus;
            final_reward = last.reward;
        }
    }

    Ok(EpisodeRecord {
        episode,
        seed,
        success: final_reward >= env.success_reward(),
        final_reward,
        steps,
        provider_calls: provider.calls(),
    })
}

fn transcript_columns(
    transcript: &crate::agent::RefinementTranscript,
) -> (Vec<String>, Vec<String>, Vec<String>, String) {
    let mut thoughts = transcript.thoughts();
    if thoughts.last() != Some(&transcript.final_thought) {
        thoughts.push(transcript.final_thought.clone());
    }
    let values = transcript
        .iterations
        .iter()
        .map(|i| i.value.rendered.clone())
        .collect();
    let verdicts = transcript
        .iterations
        .iter()
        .map(|i| {
            match i.verdict {
                Verdict::Kept => "kept",
                Verdict::Revised => "revised",
            }
            .to_string()
        })
        .collect();
    (thoughts, values, verdicts, transcript.final_thought.clone())
}
