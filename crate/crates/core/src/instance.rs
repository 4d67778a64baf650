//! Concrete task instances and the rule-resolution routine shared by the
//! episode engine and the exact solver.

use serde::{Deserialize, Serialize};

use crate::codec::digest_json;
use crate::model::{FlagCondition, Topology};

/// The values drawn for every variable of a spec. Together with its spec it
/// determines the instance completely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub state_vars: Vec<usize>,
    pub prob_vars: Vec<f64>,
    pub stim_vars: Vec<Vec<f64>>,
    pub stimulus_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRewardRule {
    pub s: Option<usize>,
    pub a: Option<usize>,
    pub s_next: Option<usize>,
    pub reward: f64,
    pub prob: f64,
    pub flag_cond: Option<FlagCondition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedFlagRule {
    pub s: Option<usize>,
    pub a: Option<usize>,
    pub s_next: Option<usize>,
    pub flag: usize,
    pub value: bool,
}

fn field_matches(field: Option<usize>, value: usize) -> bool {
    field.is_none_or(|f| f == value)
}

fn flag_is(flags: u64, flag: usize) -> bool {
    (flags >> flag) & 1 == 1
}

impl ResolvedRewardRule {
    pub fn matches(&self, s: usize, a: usize, s_next: usize, flags: u64) -> bool {
        field_matches(self.s, s)
            && field_matches(self.a, a)
            && field_matches(self.s_next, s_next)
            && self.flag_cond.is_none_or(|c| flag_is(flags, c.flag) == c.value)
    }

    pub fn expected_reward(&self) -> f64 {
        self.prob * self.reward
    }
}

impl ResolvedFlagRule {
    pub fn matches(&self, s: usize, a: usize, s_next: usize) -> bool {
        field_matches(self.s, s) && field_matches(self.a, a) && field_matches(self.s_next, s_next)
    }
}

/// What happens to the flags and which reward rule fires on one transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    /// Index of the reward rule that fires, tested against the flags after
    /// this step's flag rules ran.
    pub fired: Option<usize>,
    /// Flags the next step starts with (flag rules applied, then the reset
    /// on entering state 0 if enabled).
    pub next_flags: u64,
}

/// A fully resolved POMDP: no variables remain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub spec_hash: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward_rules: Vec<ResolvedRewardRule>,
    pub flag_rules: Vec<ResolvedFlagRule>,
    /// Per state: the rendered stimulus, or `None` for no stimulus.
    pub stimulus_map: Vec<Option<Vec<f64>>>,
    pub stimulus_dim: usize,
    pub n_flags: usize,
    pub reset_flags_on_initial: bool,
    pub topology: Option<Topology>,
    pub assignment: Assignment,
}

impl TaskInstance {
    /// Flags after every matching flag rule has been applied, in order.
    pub fn apply_flag_rules(&self, s: usize, a: usize, s_next: usize, mut flags: u64) -> u64 {
        for rule in self.flag_rules.iter().filter(|r| r.matches(s, a, s_next)) {
            if rule.value {
                flags |= 1 << rule.flag;
            } else {
                flags &= !(1 << rule.flag);
            }
        }
        flags
    }

    /// Index of the last reward rule matching the transition.
    pub fn fired_reward_rule(&self, s: usize, a: usize, s_next: usize, flags: u64) -> Option<usize> {
        self.reward_rules.iter().rposition(|r| r.matches(s, a, s_next, flags))
    }

    pub fn resolve(&self, s: usize, a: usize, s_next: usize, flags: u64) -> Resolution {
        let updated = self.apply_flag_rules(s, a, s_next, flags);
        let fired = self.fired_reward_rule(s, a, s_next, updated);
        let next_flags = if self.reset_flags_on_initial && s_next == 0 { 0 } else { updated };
        Resolution { fired, next_flags }
    }

    pub fn observation_dim(&self) -> usize {
        self.stimulus_dim + if self.coord_obs() { 2 } else { 0 }
    }

    fn coord_obs(&self) -> bool {
        self.topology.is_some_and(|t| t.coord_obs)
    }

    /// What the agent sees in state `s`: the stimulus (zeros when there is
    /// none), followed by the grid coordinates when the topology exposes them.
    pub fn observation(&self, s: usize) -> Vec<f64> {
        let mut obs = match &self.stimulus_map[s] {
            Some(v) => v.clone(),
            None => vec![0.0; self.stimulus_dim],
        };
        if let Some(topo) = self.topology.filter(|t| t.coord_obs) {
            let (x, y) = topo.coords(s);
            obs.push(x as f64);
            obs.push(y as f64);
        }
        obs
    }

    /// Digest of the resolved content, ignoring the assignment record. Two
    /// instances with equal digests behave identically.
    pub fn resolved_digest(&self) -> u64 {
        #[derive(Serialize)]
        struct View<'a> {
            transition: &'a [Vec<Vec<f64>>],
            reward_rules: &'a [ResolvedRewardRule],
            flag_rules: &'a [ResolvedFlagRule],
            stimulus_map: &'a [Option<Vec<f64>>],
            horizon: usize,
            n_actions: usize,
            n_flags: usize,
            reset_flags_on_initial: bool,
            topology: Option<Topology>,
        }
        let view = View {
            transition: &self.transition,
            reward_rules: &self.reward_rules,
            flag_rules: &self.flag_rules,
            stimulus_map: &self.stimulus_map,
            horizon: self.horizon,
            n_actions: self.n_actions,
            n_flags: self.n_flags,
            reset_flags_on_initial: self.reset_flags_on_initial,
            topology: self.topology,
        };
        digest_json(&view)
    }

    pub fn to_canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("instance serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(s: Option<usize>, a: Option<usize>, reward: f64) -> ResolvedRewardRule {
        ResolvedRewardRule { s, a, s_next: None, reward, prob: 1.0, flag_cond: None }
    }

    fn instance(reward_rules: Vec<ResolvedRewardRule>, flag_rules: Vec<ResolvedFlagRule>) -> TaskInstance {
        TaskInstance {
            spec_hash: 0,
            n_states: 3,
            n_actions: 2,
            horizon: 5,
            transition: vec![vec![vec![1.0, 0.0, 0.0]; 2]; 3],
            reward_rules,
            flag_rules,
            stimulus_map: vec![None; 3],
            stimulus_dim: 2,
            n_flags: 1,
            reset_flags_on_initial: true,
            topology: None,
            assignment: Assignment { state_vars: vec![], prob_vars: vec![], stim_vars: vec![], stimulus_dim: 2 },
        }
    }

    #[test]
    fn last_matching_rule_fires() {
        let inst = instance(vec![rule(Some(2), None, 1.0), rule(Some(2), Some(0), 2.0)], vec![]);
        assert_eq!(inst.fired_reward_rule(2, 1, 0, 0), Some(0));
        assert_eq!(inst.fired_reward_rule(2, 0, 0, 0), Some(1));
        assert_eq!(inst.fired_reward_rule(1, 0, 0, 0), None);
    }

    #[test]
    fn flags_update_before_reward_and_reset_after() {
        let mut gated = rule(Some(2), None, 1.0);
        gated.flag_cond = Some(FlagCondition { flag: 0, value: true });
        let set = ResolvedFlagRule { s: Some(2), a: None, s_next: None, flag: 0, value: true };
        let inst = instance(vec![gated], vec![set]);
        let res = inst.resolve(2, 0, 1, 0);
        assert_eq!(res, Resolution { fired: Some(0), next_flags: 1 });
        // entering state 0 clears the flag only after the reward was decided
        let res = inst.resolve(2, 0, 0, 0);
        assert_eq!(res, Resolution { fired: Some(0), next_flags: 0 });
    }

    #[test]
    fn null_stimulus_is_zero_vector_and_coords_append() {
        let mut inst = instance(vec![], vec![]);
        assert_eq!(inst.observation(1), vec![0.0, 0.0]);
        inst.n_states = 3;
        inst.topology = Some(Topology { width: 3, height: 1, coord_obs: true });
        assert_eq!(inst.observation(2), vec![0.0, 0.0, 2.0, 0.0]);
        assert_eq!(inst.observation_dim(), 4);
    }
}
