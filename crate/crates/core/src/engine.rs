//! Running episodes of a task instance.
//!
//! One step: draw the next state, apply every matching flag rule, fire the
//! last matching reward rule (its flag condition sees the updated flags)
//! with a Bernoulli draw, clear the flags when entering state 0 if the task
//! asks for it, then advance the clock. Episodes end after exactly
//! `horizon` steps.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::TaskInstance;
use crate::rng::{seeded, Rng as SeededRng};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("episode finished after {horizon} steps")]
    EpisodeFinished { horizon: usize },
    #[error("action {action} out of range (task has {n_actions} actions)")]
    ActionOutOfRange { action: usize, n_actions: usize },
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub t: usize,
    pub s: usize,
    pub flags: u64,
    rng: SeededRng,
}

impl EpisodeState {
    pub fn flag(&self, k: usize) -> bool {
        (self.flags >> k) & 1 == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub t: usize,
}

pub fn reset(instance: &TaskInstance, seed: u64) -> (EpisodeState, StepResult) {
    let state = EpisodeState { t: 0, s: 0, flags: 0, rng: seeded(seed) };
    let result = StepResult { obs: instance.observation(0), reward: 0.0, done: false, t: 0 };
    (state, result)
}

pub fn step(instance: &TaskInstance, state: &mut EpisodeState, action: usize) -> Result<StepResult, EngineError> {
    if state.t >= instance.horizon {
        return Err(EngineError::EpisodeFinished { horizon: instance.horizon });
    }
    if action >= instance.n_actions {
        return Err(EngineError::ActionOutOfRange { action, n_actions: instance.n_actions });
    }

    let row = &instance.transition[state.s][action];
    let u: f64 = state.rng.gen();
    let mut acc = 0.0;
    let mut next = None;
    for (i, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        next = Some(i);
        if u < acc {
            break;
        }
    }
    let s_next = next.expect("validated rows carry probability mass");

    let res = instance.resolve(state.s, action, s_next, state.flags);
    let reward = match res.fired {
        Some(i) => {
            let rule = &instance.reward_rules[i];
            let draw: f64 = state.rng.gen();
            if draw < rule.prob {
                rule.reward
            } else {
                0.0
            }
        }
        None => 0.0,
    };

    state.s = s_next;
    state.flags = res.next_flags;
    state.t += 1;
    Ok(StepResult { obs: instance.observation(s_next), reward, done: state.t == instance.horizon, t: state.t })
}

/// Chooses actions during [`run_episode`].
///
/// Ordinary agents should only look at `observations` (everything seen so
/// far, the current one last). `state` is exposed for privileged oracle
/// policies.
pub trait Policy {
    fn act(&mut self, observations: &[Vec<f64>], state: &EpisodeState) -> usize;
}

impl<F: FnMut(&[Vec<f64>]) -> usize> Policy for F {
    fn act(&mut self, observations: &[Vec<f64>], _state: &EpisodeState) -> usize {
        self(observations)
    }
}

/// Uniformly random actions from its own seeded stream.
pub struct RandomPolicy {
    n_actions: usize,
    rng: SeededRng,
}

impl RandomPolicy {
    pub fn new(n_actions: usize, seed: u64) -> Self {
        Self { n_actions, rng: seeded(seed) }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _observations: &[Vec<f64>], _state: &EpisodeState) -> usize {
        self.rng.gen_range(0..self.n_actions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub total_return: f64,
}

pub fn run_episode(instance: &TaskInstance, policy: &mut impl Policy, seed: u64) -> Result<Trajectory, EngineError> {
    let (mut state, first) = reset(instance, seed);
    let mut observations = vec![first.obs];
    let mut steps = Vec::with_capacity(instance.horizon);
    let mut total_return = 0.0;
    loop {
        let action = policy.act(&observations, &state);
        let result = step(instance, &mut state, action)?;
        total_return += result.reward;
        steps.push(TrajectoryStep { obs: observations.last().cloned().unwrap_or_default(), action, reward: result.reward });
        observations.push(result.obs);
        if result.done {
            break;
        }
    }
    Ok(Trajectory { steps, total_return })
}
