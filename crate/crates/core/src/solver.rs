//! Exact finite-horizon solving over augmented states.
//!
//! An augmented state pairs a POMDP state with the flag vector,
//! `index = (s << n_flags) | flags`. Flag dynamics and expected rule rewards
//! are folded into a tabular MDP, which is solved by backward induction.
//! Policies are indexed by (time step, augmented state), so a policy solved
//! on one instance can be evaluated on any other instance of the same spec.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EpisodeState, Policy};
use crate::instance::TaskInstance;

pub const DEFAULT_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Largest accepted `n_states * 2^n_flags`.
    pub max_augmented_states: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_augmented_states: DEFAULT_CAP }
    }
}

impl SolverConfig {
    /// Number of augmented states, or the size error if it exceeds the cap.
    pub fn check_size(&self, n_states: usize, n_flags: usize) -> Result<usize, SolverError> {
        let count = (n_states as u128) << n_flags.min(100);
        if count > self.max_augmented_states as u128 {
            return Err(SolverError::TooLarge { augmented_states: count, cap: self.max_augmented_states });
        }
        Ok(count as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolverError {
    #[error("{augmented_states} augmented states exceed the solver cap of {cap}")]
    TooLarge { augmented_states: u128, cap: usize },
    #[error("policy does not transfer: {0}")]
    Transfer(String),
}

/// One branch of a (state, action) pair: land in `next` with probability
/// `prob`, collecting `reward` in expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct AugmentedMdp {
    pub n_states: usize,
    pub n_flags: usize,
    pub n_actions: usize,
    pub horizon: usize,
    branches: Vec<Vec<Branch>>,
}

impl AugmentedMdp {
    pub fn build(instance: &TaskInstance, cfg: &SolverConfig) -> Result<Self, SolverError> {
        let n_aug = cfg.check_size(instance.n_states, instance.n_flags)?;
        let n_flags = instance.n_flags;
        let mut branches = Vec::with_capacity(n_aug * instance.n_actions);
        for aug in 0..n_aug {
            let (s, flags) = (aug >> n_flags, (aug & ((1 << n_flags) - 1)) as u64);
            for a in 0..instance.n_actions {
                let list = instance.transition[s][a]
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(s_next, &prob)| {
                        let res = instance.resolve(s, a, s_next, flags);
                        let reward = res.fired.map_or(0.0, |i| instance.reward_rules[i].expected_reward());
                        Branch { next: (s_next << n_flags) | res.next_flags as usize, prob, reward }
                    })
                    .collect();
                branches.push(list);
            }
        }
        Ok(Self { n_states: instance.n_states, n_flags, n_actions: instance.n_actions, horizon: instance.horizon, branches })
    }

    pub fn n_augmented(&self) -> usize {
        self.n_states << self.n_flags
    }

    /// Augmented state of (state 0, all flags clear).
    pub fn start(&self) -> usize {
        0
    }

    pub fn index(&self, s: usize, flags: u64) -> usize {
        (s << self.n_flags) | flags as usize
    }

    pub fn branches(&self, aug: usize, a: usize) -> &[Branch] {
        &self.branches[aug * self.n_actions + a]
    }

    /// `sum_b prob_b * (reward_b + next_values[next_b])`, summed in branch
    /// order.
    pub fn q_value(&self, aug: usize, a: usize, next_values: &[f64]) -> f64 {
        self.branches(aug, a).iter().map(|b| b.prob * (b.reward + next_values[b.next])).sum()
    }
}

/// A deterministic non-stationary policy: `actions[t][aug]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub n_states: usize,
    pub n_flags: usize,
    pub n_actions: usize,
    pub actions: Vec<Vec<usize>>,
}

impl TabularPolicy {
    pub fn constant(mdp: &AugmentedMdp, action: usize) -> Self {
        Self {
            n_states: mdp.n_states,
            n_flags: mdp.n_flags,
            n_actions: mdp.n_actions,
            actions: vec![vec![action; mdp.n_augmented()]; mdp.horizon],
        }
    }

    /// Independent uniformly random action per (t, augmented state).
    pub fn random(mdp: &AugmentedMdp, rng: &mut impl Rng) -> Self {
        let actions = (0..mdp.horizon)
            .map(|_| (0..mdp.n_augmented()).map(|_| rng.gen_range(0..mdp.n_actions)).collect())
            .collect();
        Self { n_states: mdp.n_states, n_flags: mdp.n_flags, n_actions: mdp.n_actions, actions }
    }

    pub fn action(&self, t: usize, s: usize, flags: u64) -> usize {
        self.actions[t][(s << self.n_flags) | flags as usize]
    }

    /// The t = 0 slice, i.e. the greedy choice with the full horizon ahead,
    /// used as a stationary summary.
    pub fn stationary_projection(&self) -> Vec<usize> {
        self.actions.first().cloned().unwrap_or_default()
    }

    fn check_transfer(&self, mdp: &AugmentedMdp) -> Result<(), SolverError> {
        if self.n_states != mdp.n_states || self.n_flags != mdp.n_flags || self.n_actions != mdp.n_actions {
            return Err(SolverError::Transfer(format!(
                "policy shape {}x2^{}x{} vs task {}x2^{}x{}",
                self.n_states, self.n_flags, self.n_actions, mdp.n_states, mdp.n_flags, mdp.n_actions
            )));
        }
        if self.actions.len() < mdp.horizon {
            return Err(SolverError::Transfer(format!(
                "policy covers {} steps, task horizon is {}",
                self.actions.len(),
                mdp.horizon
            )));
        }
        Ok(())
    }
}

/// Follows a solved policy using the true episode state.
impl Policy for TabularPolicy {
    fn act(&mut self, _observations: &[Vec<f64>], state: &EpisodeState) -> usize {
        self.action(state.t, state.s, state.flags)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub policy: TabularPolicy,
    /// Optimal expected return from (state 0, no flags).
    pub value: f64,
    /// Optimal values at t = 0 for every augmented state.
    pub initial_values: Vec<f64>,
}

/// Backward induction; ties go to the lowest action index.
pub fn solve_mdp(mdp: &AugmentedMdp) -> Solution {
    let n_aug = mdp.n_augmented();
    let mut next_values = vec![0.0; n_aug];
    let mut actions = vec![Vec::new(); mdp.horizon];
    for t in (0..mdp.horizon).rev() {
        let mut values = vec![0.0; n_aug];
        let mut chosen = vec![0; n_aug];
        for aug in 0..n_aug {
            let mut best = f64::NEG_INFINITY;
            for a in 0..mdp.n_actions {
                let q = mdp.q_value(aug, a, &next_values);
                if q > best {
                    best = q;
                    chosen[aug] = a;
                }
            }
            values[aug] = best;
        }
        actions[t] = chosen;
        next_values = values;
    }
    Solution {
        policy: TabularPolicy { n_states: mdp.n_states, n_flags: mdp.n_flags, n_actions: mdp.n_actions, actions },
        value: next_values[mdp.start()],
        initial_values: next_values,
    }
}

pub fn solve_exact(instance: &TaskInstance, cfg: &SolverConfig) -> Result<Solution, SolverError> {
    Ok(solve_mdp(&AugmentedMdp::build(instance, cfg)?))
}

/// Forward propagation of the augmented-state occupancy; `choose(t, aug)`
/// returns `(action, weight)` pairs.
fn forward<F, I>(mdp: &AugmentedMdp, mut choose: F) -> f64
where
    F: FnMut(usize, usize) -> I,
    I: IntoIterator<Item = (usize, f64)>,
{
    let n_aug = mdp.n_augmented();
    let mut occupancy = vec![0.0; n_aug];
    occupancy[mdp.start()] = 1.0;
    let mut total = 0.0;
    for t in 0..mdp.horizon {
        let mut next = vec![0.0; n_aug];
        for (aug, &mass) in occupancy.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (a, weight) in choose(t, aug) {
                for b in mdp.branches(aug, a) {
                    let m = mass * weight * b.prob;
                    total += m * b.reward;
                    next[b.next] += m;
                }
            }
        }
        occupancy = next;
    }
    total
}

pub fn evaluate_on_mdp(mdp: &AugmentedMdp, policy: &TabularPolicy) -> Result<f64, SolverError> {
    policy.check_transfer(mdp)?;
    Ok(forward(mdp, |t, aug| [(policy.actions[t][aug], 1.0)]))
}

/// Exact expected return of `policy` on `instance`.
pub fn evaluate_policy(instance: &TaskInstance, policy: &TabularPolicy, cfg: &SolverConfig) -> Result<f64, SolverError> {
    evaluate_on_mdp(&AugmentedMdp::build(instance, cfg)?, policy)
}

/// Exact expected return of the uniformly random policy.
pub fn evaluate_uniform_random(instance: &TaskInstance, cfg: &SolverConfig) -> Result<f64, SolverError> {
    let mdp = AugmentedMdp::build(instance, cfg)?;
    let w = 1.0 / mdp.n_actions as f64;
    Ok(forward(&mdp, |_, _| (0..mdp.n_actions).map(move |a| (a, w))))
}
