//! Exact brute-force references for goal-conditioned values on enumerable
//! MDPs: the tau-expectile Bellman fixed point under a known behavior policy,
//! first-arrival reach likelihoods by linear solve, and the finite-sample
//! empirical fixed point of a concrete dataset.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::trajdata::TransitionSample;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("expectile of an empty value set")]
    EmptyValues,
    #[error("expectile weights must have positive sum")]
    ZeroWeights,
    #[error("value iteration did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("invalid MDP: {0}")]
    BadMdp(String),
    #[error("linear solve failed for goal {goal}")]
    SingularSystem { goal: usize },
}

/// Enumerable synthetic MDP with canonical text renderings.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    /// Canonical state renderings; injective over states.
    pub states: Vec<String>,
    /// Canonical thought-text renderings, one per action.
    pub actions: Vec<String>,
    /// `transition[s][a][s']`, each row a distribution.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// Initial state distribution.
    pub initial: Vec<f64>,
    /// Episode truncation horizon used in simulation (the fixed point itself
    /// is infinite-horizon).
    pub horizon: usize,
}

impl TabularMdp {
    pub fn validate(&self) -> Result<(), OracleError> {
        let n = self.states.len();
        let a = self.actions.len();
        if n == 0 || a == 0 {
            return Err(OracleError::BadMdp("empty state or action set".into()));
        }
        let mut seen = HashMap::new();
        for (i, r) in self.states.iter().enumerate() {
            if let Some(j) = seen.insert(r.clone(), i) {
                return Err(OracleError::BadMdp(format!(
                    "states {j} and {i} share the rendering {r:?}"
                )));
            }
        }
        if self.transition.len() != n {
            return Err(OracleError::BadMdp("transition table has wrong size".into()));
        }
        for (s, per_action) in self.transition.iter().enumerate() {
            if per_action.len() != a {
                return Err(OracleError::BadMdp(format!("state {s}: wrong action count")));
            }
            for (ai, row) in per_action.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.len() != n || (sum - 1.0).abs() > 1e-12 {
                    return Err(OracleError::BadMdp(format!(
                        "transition row ({s},{ai}) sums to {sum}"
                    )));
                }
            }
        }
        let init_sum: f64 = self.initial.iter().sum();
        if self.initial.len() != n || (init_sum - 1.0).abs() > 1e-12 {
            return Err(OracleError::BadMdp("initial distribution must sum to 1".into()));
        }
        Ok(())
    }
}

/// Action distribution per state.
#[derive(Debug, Clone)]
pub struct BehaviorPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl BehaviorPolicy {
    pub fn uniform(states: usize, actions: usize) -> Self {
        Self {
            probs: vec![vec![1.0 / actions as f64; actions]; states],
        }
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<(), OracleError> {
        if self.probs.len() != mdp.states.len() {
            return Err(OracleError::BadMdp("policy has wrong state count".into()));
        }
        for (s, row) in self.probs.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != mdp.actions.len() || (sum - 1.0).abs() > 1e-12 {
                return Err(OracleError::BadMdp(format!("policy row {s} sums to {sum}")));
            }
            if row.iter().all(|p| *p <= 0.0) {
                return Err(OracleError::BadMdp(format!("policy row {s} has empty support")));
            }
        }
        Ok(())
    }
}

/// The tau-expectile of a weighted discrete distribution: the unique `e` with
/// `tau * sum w_i (x_i - e)_+ = (1 - tau) * sum w_i (e - x_i)_+`, found by
/// bisection to an absolute tolerance of 1e-12.
pub fn discrete_expectile(values: &[f64], weights: &[f64], tau: f64) -> Result<f64, OracleError> {
    if values.is_empty() {
        return Err(OracleError::EmptyValues);
    }
    assert_eq!(values.len(), weights.len());
    assert!((0.5..1.0).contains(&tau), "tau must be in [0.5, 1)");
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(OracleError::ZeroWeights);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo < 1e-15 {
        return Ok(lo);
    }
    // balance(e) is strictly decreasing in e
    let balance = |e: f64| {
        let mut acc = 0.0;
        for (&x, &w) in values.iter().zip(weights) {
            let u = x - e;
            acc += if u >= 0.0 { tau * w * u } else { (1.0 - tau) * w * u };
        }
        acc
    };
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if balance(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Exact goal-conditioned tables: `q[s][a][g]` and `v[s][g]`.
#[derive(Debug, Clone)]
pub struct GoalTables {
    pub q: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<f64>>,
}

/// Tau-expectile Bellman fixed point with arrival rewards and a terminal cut:
/// `Q(s,a,g) = E_{s'}[ 1[s'=g] + gamma * (1 - 1[s'=g]) * V(s',g) ]` and
/// `V(s,g)` the tau-expectile of `Q(s,.,g)` weighted by the behavior policy.
/// Value iteration from zero until the sup-norm change drops below 1e-10.
pub fn dp_fixed_point(
    mdp: &TabularMdp,
    beta: &BehaviorPolicy,
    tau: f64,
    gamma: f64,
) -> Result<GoalTables, OracleError> {
    mdp.validate()?;
    beta.validate(mdp)?;
    assert!(gamma > 0.0 && gamma < 1.0, "gamma must be in (0, 1)");
    let n = mdp.states.len();
    let na = mdp.actions.len();
    let mut q = vec![vec![vec![0.0; n]; na]; n];
    let mut v = vec![vec![0.0; n]; n];

    const MAX_SWEEPS: usize = 1_000_000;
    for _sweep in 0..MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        for g in 0..n {
            for s in 0..n {
                for a in 0..na {
                    let mut acc = 0.0;
                    for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        acc += if s2 == g {
                            p
                        } else {
                            p * gamma * v[s2][g]
                        };
                    }
                    delta = delta.max((acc - q[s][a][g]).abs());
                    q[s][a][g] = acc;
                }
                let qs: Vec<f64> = (0..na).map(|a| q[s][a][g]).collect();
                let new_v = discrete_expectile(&qs, &beta.probs[s], tau)?;
                delta = delta.max((new_v - v[s][g]).abs());
                v[s][g] = new_v;
            }
        }
        if delta < 1e-10 {
            for g in 0..n {
                for s in 0..n {
                    for a in 0..na {
                        debug_assert!((0.0..=1.0 + 1e-9).contains(&q[s][a][g]));
                    }
                }
            }
            return Ok(GoalTables { q, v });
        }
    }
    Err(OracleError::NoConvergence { sweeps: MAX_SWEEPS })
}

/// Per-state first-arrival reach likelihoods `E[gamma^(k-1)]` toward `goal`
/// under `policy`, by an absorbing-chain linear solve.
pub fn reach_values_under_policy(
    mdp: &TabularMdp,
    policy: &BehaviorPolicy,
    goal: usize,
    gamma: f64,
) -> Result<Vec<f64>, OracleError> {
    mdp.validate()?;
    policy.validate(mdp)?;
    let n = mdp.states.len();
    // w(s) = b(s) + gamma * sum_{s' != g} P_pi(s -> s') w(s'),
    // b(s) = P_pi(s -> g); solve (I - gamma * P_tilde) w = b.
    let mut mat = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        for (a, &pa) in policy.probs[s].iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                if s2 == goal {
                    b[s] += pa * p;
                } else {
                    mat[(s, s2)] -= gamma * pa * p;
                }
            }
        }
    }
    let solved = mat
        .lu()
        .solve(&b)
        .ok_or(OracleError::SingularSystem { goal })?;
    Ok(solved.iter().copied().collect())
}

/// Reach likelihood after taking `action` in `state` and then following
/// `policy`: arrival counts immediately, otherwise one discount is paid.
pub fn reach_value(
    mdp: &TabularMdp,
    policy: &BehaviorPolicy,
    state: usize,
    action: usize,
    goal: usize,
    gamma: f64,
) -> Result<f64, OracleError> {
    let w = reach_values_under_policy(mdp, policy, goal, gamma)?;
    let mut acc = 0.0;
    for (s2, &p) in mdp.transition[state][action].iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        acc += if s2 == goal { p } else { p * gamma * w[s2] };
    }
    Ok(acc)
}

/// Export exact tables as `state,action,goal,q` CSV rows.
pub fn write_q_csv<W: std::io::Write>(
    w: &mut W,
    mdp: &TabularMdp,
    tables: &GoalTables,
) -> std::io::Result<()> {
    writeln!(w, "state,action,goal,q")?;
    for (s, srend) in mdp.states.iter().enumerate() {
        for (a, arend) in mdp.actions.iter().enumerate() {
            for (g, grend) in mdp.states.iter().enumerate() {
                writeln!(w, "{srend:?},{arend:?},{grend:?},{}", tables.q[s][a][g])?;
            }
        }
    }
    Ok(())
}

/// One entry of the empirical fixed point.
#[derive(Debug, Clone)]
pub struct EmpiricalTriple {
    pub state: String,
    pub thought: String,
    pub goal: String,
    /// Number of dataset samples behind this entry.
    pub count: usize,
    pub q: f64,
}

/// The finite-sample fixed point of training on a concrete dataset: Q entries
/// averaged over each (state, thought, goal) text triple's observed targets,
/// V entries the tau-expectile over thoughts weighted by dataset frequency.
#[derive(Debug, Clone)]
pub struct EmpiricalTables {
    pub triples: Vec<EmpiricalTriple>,
    index: HashMap<(String, String, String), usize>,
}

impl EmpiricalTables {
    pub fn q(&self, state: &str, thought: &str, goal: &str) -> Option<f64> {
        self.index
            .get(&(state.to_string(), thought.to_string(), goal.to_string()))
            .map(|&i| self.triples[i].q)
    }
}

/// Compute the empirical fixed point of a dataset.
///
/// This is the quantity fitted-Q training converges to on the data itself:
/// rewards, bootstrap transitions, and expectile weights are all taken from
/// the samples (including index-based reach labels where a revisited state
/// appears both as an immediate arrival and as a later goal). Pairs that
/// appear only in bootstraps, never as training inputs, are held at zero.
pub fn empirical_fixed_point(
    samples: &[TransitionSample],
    tau: f64,
    gamma: f64,
) -> Result<EmpiricalTables, OracleError> {
    if samples.is_empty() {
        return Err(OracleError::EmptyValues);
    }

    // intern texts; ids follow first appearance so everything is deterministic
    let mut texts: Vec<String> = Vec::new();
    let mut text_ids: HashMap<String, usize> = HashMap::new();
    let intern = |t: &str, texts: &mut Vec<String>, ids: &mut HashMap<String, usize>| {
        *ids.entry(t.to_string()).or_insert_with(|| {
            texts.push(t.to_string());
            texts.len() - 1
        })
    };

    struct TripleAgg {
        state: usize,
        thought: usize,
        goal: usize,
        count: usize,
        reward_sum: f64,
        // bootstrap pair (next_state, goal) occurrence counts
        boots: HashMap<usize, usize>,
    }

    let mut triples: Vec<TripleAgg> = Vec::new();
    let mut triple_ids: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut pair_ids: HashMap<(usize, usize), usize> = HashMap::new();
    let pair_of = |s: usize,
                       g: usize,
                       pairs: &mut Vec<(usize, usize)>,
                       ids: &mut HashMap<(usize, usize), usize>| {
        *ids.entry((s, g)).or_insert_with(|| {
            pairs.push((s, g));
            pairs.len() - 1
        })
    };

    for sample in samples {
        let s = intern(&sample.state_text, &mut texts, &mut text_ids);
        let a = intern(&sample.thought_text, &mut texts, &mut text_ids);
        let g = intern(&sample.goal_text, &mut texts, &mut text_ids);
        let key = (s, a, g);
        let ti = *triple_ids.entry(key).or_insert_with(|| {
            triples.push(TripleAgg {
                state: s,
                thought: a,
                goal: g,
                count: 0,
                reward_sum: 0.0,
                boots: HashMap::new(),
            });
            triples.len() - 1
        });
        triples[ti].count += 1;
        triples[ti].reward_sum += sample.reach_reward;
        pair_of(s, g, &mut pairs, &mut pair_ids);
        if !sample.terminal {
            let s2 = intern(&sample.next_state_text, &mut texts, &mut text_ids);
            let pid = pair_of(s2, g, &mut pairs, &mut pair_ids);
            *triples[ti].boots.entry(pid).or_insert(0) += 1;
        }
    }

    // per-pair list of triples (for the expectile over thoughts)
    let mut pair_triples: Vec<Vec<usize>> = vec![Vec::new(); pairs.len()];
    for (ti, t) in triples.iter().enumerate() {
        let pid = pair_ids[&(t.state, t.goal)];
        pair_triples[pid].push(ti);
    }
    // deterministic bootstrap iteration order
    let boot_lists: Vec<Vec<(usize, usize)>> = triples
        .iter()
        .map(|t| {
            let mut b: Vec<(usize, usize)> = t.boots.iter().map(|(&p, &c)| (p, c)).collect();
            b.sort_unstable();
            b
        })
        .collect();

    let mut q = vec![0.0f64; triples.len()];
    let mut v = vec![0.0f64; pairs.len()];

    const MAX_SWEEPS: usize = 1_000_000;
    for _ in 0..MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        for (ti, t) in triples.iter().enumerate() {
            let mut acc = t.reward_sum;
            for &(pid, c) in &boot_lists[ti] {
                acc += gamma * c as f64 * v[pid];
            }
            let new_q = acc / t.count as f64;
            delta = delta.max((new_q - q[ti]).abs());
            q[ti] = new_q;
        }
        for (pid, tlist) in pair_triples.iter().enumerate() {
            if tlist.is_empty() {
                continue; // bootstrap-only pair: no training inputs, stays 0
            }
            let values: Vec<f64> = tlist.iter().map(|&ti| q[ti]).collect();
            let weights: Vec<f64> = tlist.iter().map(|&ti| triples[ti].count as f64).collect();
            let new_v = discrete_expectile(&values, &weights, tau)?;
            delta = delta.max((new_v - v[pid]).abs());
            v[pid] = new_v;
        }
        if delta < 1e-10 {
            let out: Vec<EmpiricalTriple> = triples
                .iter()
                .enumerate()
                .map(|(ti, t)| EmpiricalTriple {
                    state: texts[t.state].clone(),
                    thought: texts[t.thought].clone(),
                    goal: texts[t.goal].clone(),
                    count: t.count,
                    q: q[ti],
                })
                .collect();
            let index = out
                .iter()
                .enumerate()
                .map(|(i, t)| ((t.state.clone(), t.thought.clone(), t.goal.clone()), i))
                .collect();
            return Ok(EmpiricalTables {
                triples: out,
                index,
            });
        }
    }
    Err(OracleError::NoConvergence { sweeps: MAX_SWEEPS })
}
