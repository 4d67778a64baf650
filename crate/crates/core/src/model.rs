//! Meta-task specifications and their building blocks.
//!
//! A [`MetaTaskSpec`] is a POMDP template in which some quantities are
//! variables: special states, reward probabilities and stimuli. Sampling a
//! spec (see [`crate::sampler`]) resolves every variable and yields a
//! concrete [`crate::instance::TaskInstance`].

use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

/// Tolerance used for every "row sums to one" check.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// A state field of a rule: a concrete state, a special-state variable, or
/// don't-care.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateRef {
    Any,
    State(usize),
    Var(usize),
}

/// An action field of a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionRef {
    Any,
    Action(usize),
}

/// A probability that is either fixed or a per-instance variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prob {
    Fixed(f64),
    Var(usize),
}

/// What a state shows to the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stimulus {
    Null,
    Fixed(u32),
    Var(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagCondition {
    pub flag: usize,
    pub value: bool,
}

/// "From `s`, taking `a`, landing in `s_next`: receive `reward` with
/// probability `prob`", optionally gated on a flag value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardRule {
    pub s: StateRef,
    pub a: ActionRef,
    pub s_next: StateRef,
    pub reward: f64,
    pub prob: Prob,
    #[serde(default)]
    pub flag_cond: Option<FlagCondition>,
}

impl RewardRule {
    /// Reward 1 with probability 1 whenever the agent acts from `s`.
    pub fn on_state(s: StateRef) -> Self {
        Self {
            s,
            a: ActionRef::Any,
            s_next: StateRef::Any,
            reward: 1.0,
            prob: Prob::Fixed(1.0),
            flag_cond: None,
        }
    }

    pub fn with_action(mut self, a: usize) -> Self {
        self.a = ActionRef::Action(a);
        self
    }

    pub fn with_prob(mut self, prob: Prob) -> Self {
        self.prob = prob;
        self
    }

    pub fn with_reward(mut self, reward: f64) -> Self {
        self.reward = reward;
        self
    }

    pub fn with_flag(mut self, flag: usize, value: bool) -> Self {
        self.flag_cond = Some(FlagCondition { flag, value });
        self
    }

    pub fn is_fully_unspecified(&self) -> bool {
        self.s == StateRef::Any && self.a == ActionRef::Any && self.s_next == StateRef::Any
    }
}

/// Sets flag `flag` to `value` whenever its condition triple matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagRule {
    pub s: StateRef,
    pub a: ActionRef,
    pub s_next: StateRef,
    pub flag: usize,
    pub value: bool,
}

/// Closed-open bounds of a probability variable's sampling domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Interval {
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }
}

impl Interval {
    pub fn contains_closed(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// 2D grid arrangement of the states. State `s` sits at
/// `(s % width, s / width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub width: usize,
    pub height: usize,
    pub coord_obs: bool,
}

impl Topology {
    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s % self.width, s / self.width)
    }

    pub fn state_at(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

/// A meta-task: a POMDP with variable quantities.
///
/// State 0 is the start state of every episode and episodes last exactly
/// `horizon` steps. Reward rules are ordered; when several match a
/// transition the last one in the list fires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTaskSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    /// `transition[s][a][s']`.
    pub transition: Vec<Vec<Vec<Prob>>>,
    pub stimuli: Vec<Stimulus>,
    pub state_var_ranges: Vec<Vec<usize>>,
    pub prob_var_domains: Vec<Interval>,
    pub n_stim_vars: usize,
    pub n_flags: usize,
    pub flag_rules: Vec<FlagRule>,
    pub reward_rules: Vec<RewardRule>,
    pub reset_flags_on_initial: bool,
    pub topology: Option<Topology>,
}

pub const DEFAULT_HORIZON: usize = 100;

impl MetaTaskSpec {
    /// An empty spec with every transition a self-loop and null stimuli.
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        let transition = (0..n_states)
            .map(|s| {
                (0..n_actions)
                    .map(|_| {
                        let mut row = vec![Prob::Fixed(0.0); n_states];
                        row[s] = Prob::Fixed(1.0);
                        row
                    })
                    .collect()
            })
            .collect();
        Self {
            n_states,
            n_actions,
            horizon: DEFAULT_HORIZON,
            transition,
            stimuli: vec![Stimulus::Null; n_states],
            state_var_ranges: Vec::new(),
            prob_var_domains: Vec::new(),
            n_stim_vars: 0,
            n_flags: 0,
            flag_rules: Vec::new(),
            reward_rules: Vec::new(),
            reset_flags_on_initial: false,
            topology: None,
        }
    }

    /// Replace the row `transition[s][a]` with a distribution over
    /// `(next, prob)` pairs.
    pub fn set_row(&mut self, s: usize, a: usize, entries: &[(usize, f64)]) {
        let row = &mut self.transition[s][a];
        row.iter_mut().for_each(|p| *p = Prob::Fixed(0.0));
        for &(next, p) in entries {
            row[next] = Prob::Fixed(p);
        }
    }

    /// Uniform distribution over `support` for every action from `s`.
    pub fn set_uniform_all(&mut self, s: usize, support: &[usize]) {
        for a in 0..self.n_actions {
            self.set_uniform(s, a, support);
        }
    }

    pub fn set_uniform(&mut self, s: usize, a: usize, support: &[usize]) {
        let p = 1.0 / support.len() as f64;
        let entries: Vec<_> = support.iter().map(|&n| (n, p)).collect();
        self.set_row(s, a, &entries);
    }

    pub fn n_state_vars(&self) -> usize {
        self.state_var_ranges.len()
    }

    pub fn n_prob_vars(&self) -> usize {
        self.prob_var_domains.len()
    }

    /// True when no quantity varies between instances.
    pub fn has_variables(&self) -> bool {
        self.n_state_vars() > 0 || self.n_prob_vars() > 0 || self.n_stim_vars > 0
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    EmptySpace,
    ZeroHorizon,
    DimensionMismatch,
    RowSum,
    ProbOutOfRange,
    StateOutOfRange,
    ActionOutOfRange,
    UnboundStateVar,
    UnboundProbVar,
    UnboundStimVar,
    RuleFullyUnspecified,
    FlagOutOfRange,
    TooManyFlags,
    EmptyRange,
    DuplicateRangeEntry,
    BadDomain,
    NonFiniteReward,
    TopologyMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

/// Flags are stored in a 64-bit mask.
pub const MAX_FLAGS: usize = 64;

/// Every invariant violation of `spec`; an empty list means valid.
pub fn validate_spec(spec: &MetaTaskSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, message: String| out.push(Violation { code, message });

    if spec.n_states == 0 || spec.n_actions == 0 {
        push(
            ViolationCode::EmptySpace,
            format!("need at least one state and one action, got {}x{}", spec.n_states, spec.n_actions),
        );
    }
    if spec.horizon == 0 {
        push(ViolationCode::ZeroHorizon, "horizon must be at least 1".into());
    }
    if spec.n_flags > MAX_FLAGS {
        push(ViolationCode::TooManyFlags, format!("{} flags exceeds the limit of {MAX_FLAGS}", spec.n_flags));
    }

    // transition tensor
    if spec.transition.len() != spec.n_states {
        push(
            ViolationCode::DimensionMismatch,
            format!("transition has {} state rows, expected {}", spec.transition.len(), spec.n_states),
        );
    }
    for (s, per_action) in spec.transition.iter().enumerate() {
        if per_action.len() != spec.n_actions {
            push(
                ViolationCode::DimensionMismatch,
                format!("transition[{s}] has {} actions, expected {}", per_action.len(), spec.n_actions),
            );
        }
        for (a, row) in per_action.iter().enumerate() {
            if row.len() != spec.n_states {
                push(
                    ViolationCode::DimensionMismatch,
                    format!("transition[{s}][{a}] has {} entries, expected {}", row.len(), spec.n_states),
                );
                continue;
            }
            let mut literal_sum = 0.0;
            let mut has_var = false;
            for (next, p) in row.iter().enumerate() {
                match *p {
                    Prob::Fixed(v) => {
                        if !(0.0..=1.0).contains(&v) {
                            push(
                                ViolationCode::ProbOutOfRange,
                                format!("transition[{s}][{a}][{next}] = {v} is not a probability"),
                            );
                        }
                        literal_sum += v;
                    }
                    Prob::Var(k) => {
                        has_var = true;
                        if k >= spec.n_prob_vars() {
                            push(
                                ViolationCode::UnboundProbVar,
                                format!("transition[{s}][{a}][{next}] uses probability variable {k}"),
                            );
                        }
                    }
                }
            }
            let bad = if has_var {
                literal_sum > 1.0 + ROW_SUM_TOLERANCE
            } else {
                (literal_sum - 1.0).abs() > ROW_SUM_TOLERANCE
            };
            if bad {
                push(ViolationCode::RowSum, format!("transition[{s}][{a}] sums to {literal_sum}"));
            }
        }
    }

    // stimuli
    if spec.stimuli.len() != spec.n_states {
        push(
            ViolationCode::DimensionMismatch,
            format!("{} stimuli for {} states", spec.stimuli.len(), spec.n_states),
        );
    }
    for (s, stim) in spec.stimuli.iter().enumerate() {
        if let Stimulus::Var(k) = *stim {
            if k >= spec.n_stim_vars {
                push(ViolationCode::UnboundStimVar, format!("state {s} uses stimulus variable {k}"));
            }
        }
    }

    // variable domains
    for (k, range) in spec.state_var_ranges.iter().enumerate() {
        if range.is_empty() {
            push(ViolationCode::EmptyRange, format!("state variable {k} has an empty range"));
        }
        for (i, &s) in range.iter().enumerate() {
            if s >= spec.n_states {
                push(ViolationCode::StateOutOfRange, format!("state variable {k} ranges over state {s}"));
            }
            if range[..i].contains(&s) {
                push(ViolationCode::DuplicateRangeEntry, format!("state variable {k} lists state {s} twice"));
            }
        }
    }
    for (k, d) in spec.prob_var_domains.iter().enumerate() {
        if !(d.lo.is_finite() && d.hi.is_finite() && 0.0 <= d.lo && d.lo < d.hi && d.hi <= 1.0) {
            push(
                ViolationCode::BadDomain,
                format!("probability variable {k} has domain ({}, {})", d.lo, d.hi),
            );
        }
    }

    // rules
    let check_state = |out: &mut Vec<Violation>, what: &str, r: StateRef| match r {
        StateRef::State(s) if s >= spec.n_states => out.push(Violation {
            code: ViolationCode::StateOutOfRange,
            message: format!("{what} references state {s}"),
        }),
        StateRef::Var(k) if k >= spec.n_state_vars() => out.push(Violation {
            code: ViolationCode::UnboundStateVar,
            message: format!("{what} references state variable {k}"),
        }),
        _ => {}
    };
    let check_action = |out: &mut Vec<Violation>, what: &str, a: ActionRef| {
        if let ActionRef::Action(a) = a {
            if a >= spec.n_actions {
                out.push(Violation {
                    code: ViolationCode::ActionOutOfRange,
                    message: format!("{what} references action {a}"),
                });
            }
        }
    };
    for (i, rule) in spec.flag_rules.iter().enumerate() {
        let what = format!("flag rule {i}");
        check_state(&mut out, &what, rule.s);
        check_state(&mut out, &what, rule.s_next);
        check_action(&mut out, &what, rule.a);
        if rule.flag >= spec.n_flags {
            out.push(Violation {
                code: ViolationCode::FlagOutOfRange,
                message: format!("{what} sets flag {} of {}", rule.flag, spec.n_flags),
            });
        }
    }
    for (i, rule) in spec.reward_rules.iter().enumerate() {
        let what = format!("reward rule {i}");
        if rule.is_fully_unspecified() {
            out.push(Violation {
                code: ViolationCode::RuleFullyUnspecified,
                message: format!("{what}: rule fully unspecified, at least one of s, a, s' is required"),
            });
        }
        check_state(&mut out, &what, rule.s);
        check_state(&mut out, &what, rule.s_next);
        check_action(&mut out, &what, rule.a);
        if !rule.reward.is_finite() {
            out.push(Violation {
                code: ViolationCode::NonFiniteReward,
                message: format!("{what} has reward {}", rule.reward),
            });
        }
        match rule.prob {
            Prob::Fixed(p) if !(0.0..=1.0).contains(&p) => out.push(Violation {
                code: ViolationCode::ProbOutOfRange,
                message: format!("{what} has probability {p}"),
            }),
            Prob::Var(k) if k >= spec.n_prob_vars() => out.push(Violation {
                code: ViolationCode::UnboundProbVar,
                message: format!("{what} references probability variable {k}"),
            }),
            _ => {}
        }
        if let Some(cond) = rule.flag_cond {
            if cond.flag >= spec.n_flags {
                out.push(Violation {
                    code: ViolationCode::FlagOutOfRange,
                    message: format!("{what} tests flag {} of {}", cond.flag, spec.n_flags),
                });
            }
        }
    }

    if let Some(topo) = spec.topology {
        if topo.width * topo.height != spec.n_states {
            out.push(Violation {
                code: ViolationCode::TopologyMismatch,
                message: format!("{}x{} grid for {} states", topo.width, topo.height, spec.n_states),
            });
        }
        if spec.n_actions < 4 {
            out.push(Violation {
                code: ViolationCode::TopologyMismatch,
                message: format!("grid topology needs at least 4 actions, got {}", spec.n_actions),
            });
        }
    }

    out
}

// ---------------------------------------------------------------------------
// Serialized forms
//
// Don't-care is -1, concrete indices are plain integers, variables are
// `{"var": k}` objects.
// ---------------------------------------------------------------------------

fn serialize_var<S: Serializer>(serializer: S, k: usize) -> Result<S::Ok, S::Error> {
    let mut map = serializer.serialize_map(Some(1))?;
    map.serialize_entry("var", &k)?;
    map.end()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VarRepr {
    var: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IndexRepr {
    Int(i64),
    Var(VarRepr),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NumberRepr {
    Num(f64),
    Var(VarRepr),
}

impl Serialize for StateRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match *self {
            StateRef::Any => serializer.serialize_i64(-1),
            StateRef::State(s) => serializer.serialize_u64(s as u64),
            StateRef::Var(k) => serialize_var(serializer, k),
        }
    }
}

impl<'de> Deserialize<'de> for StateRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match IndexRepr::deserialize(deserializer)? {
            IndexRepr::Int(-1) => Ok(StateRef::Any),
            IndexRepr::Int(i) if i >= 0 => Ok(StateRef::State(i as usize)),
            IndexRepr::Int(i) => Err(de::Error::custom(format!("invalid state index {i}"))),
            IndexRepr::Var(v) => Ok(StateRef::Var(v.var)),
        }
    }
}

impl Serialize for ActionRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match *self {
            ActionRef::Any => serializer.serialize_i64(-1),
            ActionRef::Action(a) => serializer.serialize_u64(a as u64),
        }
    }
}

impl<'de> Deserialize<'de> for ActionRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match i64::deserialize(deserializer)? {
            -1 => Ok(ActionRef::Any),
            i if i >= 0 => Ok(ActionRef::Action(i as usize)),
            i => Err(de::Error::custom(format!("invalid action index {i}"))),
        }
    }
}

impl Serialize for Prob {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match *self {
            Prob::Fixed(p) => serializer.serialize_f64(p),
            Prob::Var(k) => serialize_var(serializer, k),
        }
    }
}

impl<'de> Deserialize<'de> for Prob {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(match NumberRepr::deserialize(deserializer)? {
            NumberRepr::Num(p) => Prob::Fixed(p),
            NumberRepr::Var(v) => Prob::Var(v.var),
        })
    }
}

impl Serialize for Stimulus {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match *self {
            Stimulus::Null => serializer.serialize_none(),
            Stimulus::Fixed(id) => serializer.serialize_u32(id),
            Stimulus::Var(k) => serialize_var(serializer, k),
        }
    }
}

impl<'de> Deserialize<'de> for Stimulus {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match Option::<IndexRepr>::deserialize(deserializer)? {
            None => Ok(Stimulus::Null),
            Some(IndexRepr::Int(i)) => u32::try_from(i)
                .map(Stimulus::Fixed)
                .map_err(|_| de::Error::custom(format!("invalid stimulus id {i}"))),
            Some(IndexRepr::Var(v)) => Ok(Stimulus::Var(v.var)),
        }
    }
}
