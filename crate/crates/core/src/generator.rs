//! Random generation of meta-task specs.
//!
//! Generic mode draws a random transition structure, random rules and
//! random variable declarations from a [`GeneratorConfig`]; the sizes in the
//! config are the knobs that control how complex the generated tasks are.
//! Grid mode produces the Dark Room family: a grid world whose rewarded cell
//! is a special state over all cells.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_spec, ActionRef, FlagCondition, FlagRule, Interval, MetaTaskSpec, Prob, RewardRule, StateRef,
    Stimulus,
};
use crate::presets::{dark_room, grid_skeleton};
use crate::rng::{derive_seed, seeded, Rng as SeededRng};

/// Inclusive `[min, max]` range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange(pub usize, pub usize);

impl CountRange {
    pub fn exactly(n: usize) -> Self {
        Self(n, n)
    }

    fn draw(&self, rng: &mut SeededRng) -> usize {
        rng.gen_range(self.0..=self.1)
    }
}

/// Probability that each rule field is left as don't-care.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DontCare {
    pub s: f64,
    pub a: f64,
    pub s_next: f64,
}

impl Default for DontCare {
    fn default() -> Self {
        Self { s: 0.2, a: 0.5, s_next: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorMode {
    #[default]
    Generic,
    Grid {
        width: usize,
        height: usize,
        #[serde(default = "yes")]
        coord_obs: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub mode: GeneratorMode,
    pub n_states: CountRange,
    pub n_actions: usize,
    pub horizon: usize,
    /// Largest successor support of a (state, action) pair.
    pub branching: usize,
    pub n_reward_rules: CountRange,
    pub dont_care: DontCare,
    /// Chance that a specified state field refers to a state variable.
    pub state_var_field_prob: f64,
    pub n_state_vars: CountRange,
    /// Let state variables range over state 0 too.
    pub state_vars_include_initial: bool,
    pub n_prob_vars: CountRange,
    /// Chance that a reward rule's probability is a variable.
    pub prob_var_rule_prob: f64,
    pub n_stim_vars: CountRange,
    /// Fixed stimuli use ids `0..n_fixed_stimuli`.
    pub n_fixed_stimuli: u32,
    pub null_stimulus_prob: f64,
    pub n_flags: CountRange,
    pub n_flag_rules: CountRange,
    /// Chance that a reward rule is gated on a flag.
    pub flag_cond_prob: f64,
    pub reset_flags_prob: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: GeneratorMode::Generic,
            n_states: CountRange(3, 6),
            n_actions: 2,
            horizon: 100,
            branching: 3,
            n_reward_rules: CountRange(1, 3),
            dont_care: DontCare::default(),
            state_var_field_prob: 0.5,
            n_state_vars: CountRange(0, 1),
            state_vars_include_initial: false,
            n_prob_vars: CountRange(0, 2),
            prob_var_rule_prob: 0.5,
            n_stim_vars: CountRange(0, 2),
            n_fixed_stimuli: 4,
            null_stimulus_prob: 0.3,
            n_flags: CountRange(0, 1),
            n_flag_rules: CountRange(0, 1),
            flag_cond_prob: 0.5,
            reset_flags_prob: 0.5,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("generator config is infeasible: {0}")]
    Infeasible(String),
}

impl GeneratorConfig {
    pub fn check(&self) -> Result<(), GenerateError> {
        let bad = |m: String| Err(GenerateError::Config(m));
        if let GeneratorMode::Grid { width, height, .. } = self.mode {
            if width == 0 || height == 0 {
                return bad(format!("grid {width}x{height} is empty"));
            }
            if self.horizon == 0 {
                return bad("horizon must be at least 1".into());
            }
            return Ok(());
        }
        let ranges = [
            ("n_states", self.n_states),
            ("n_reward_rules", self.n_reward_rules),
            ("n_state_vars", self.n_state_vars),
            ("n_prob_vars", self.n_prob_vars),
            ("n_stim_vars", self.n_stim_vars),
            ("n_flags", self.n_flags),
            ("n_flag_rules", self.n_flag_rules),
        ];
        for (name, r) in ranges {
            if r.0 > r.1 {
                return bad(format!("{name} range [{}, {}] is empty", r.0, r.1));
            }
        }
        if self.n_states.0 == 0 || self.n_actions == 0 || self.horizon == 0 || self.branching == 0 {
            return bad("n_states, n_actions, horizon and branching must be at least 1".into());
        }
        let probs = [
            ("dont_care.s", self.dont_care.s),
            ("dont_care.a", self.dont_care.a),
            ("dont_care.s_next", self.dont_care.s_next),
            ("state_var_field_prob", self.state_var_field_prob),
            ("prob_var_rule_prob", self.prob_var_rule_prob),
            ("null_stimulus_prob", self.null_stimulus_prob),
            ("flag_cond_prob", self.flag_cond_prob),
            ("reset_flags_prob", self.reset_flags_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.n_flags.1 > 16 {
            return bad(format!("at most 16 flags, asked for up to {}", self.n_flags.1));
        }
        let candidates = self.n_states.0 - usize::from(!self.state_vars_include_initial);
        if self.n_state_vars.1 > candidates {
            return Err(GenerateError::Infeasible(format!(
                "up to {} distinct state variables but only {candidates} candidate states with {} states",
                self.n_state_vars.1, self.n_states.0
            )));
        }
        if self.n_stim_vars.1 > self.n_states.0 {
            return Err(GenerateError::Infeasible(format!(
                "up to {} stimulus variables but only {} states to show them",
                self.n_stim_vars.1, self.n_states.0
            )));
        }
        Ok(())
    }
}

/// Generate one spec; identical configs give identical specs.
pub fn generate(cfg: &GeneratorConfig) -> Result<MetaTaskSpec, GenerateError> {
    cfg.check()?;
    let mut rng = seeded(cfg.seed);
    let spec = match cfg.mode {
        GeneratorMode::Grid { width, height, coord_obs } => {
            let room = dark_room(width, height);
            let mut spec = grid_skeleton(width, height, cfg.n_actions, coord_obs);
            spec.state_var_ranges = room.state_var_ranges;
            spec.reward_rules = room.reward_rules;
            spec.horizon = cfg.horizon;
            spec
        }
        GeneratorMode::Generic => generic(cfg, &mut rng),
    };
    let violations = validate_spec(&spec);
    assert!(violations.is_empty(), "generator produced an invalid spec: {violations:?}");
    Ok(spec)
}

fn generic(cfg: &GeneratorConfig, rng: &mut SeededRng) -> MetaTaskSpec {
    let n_states = cfg.n_states.draw(rng);
    let mut spec = MetaTaskSpec::new(n_states, cfg.n_actions);
    spec.horizon = cfg.horizon;

    for s in 0..n_states {
        for a in 0..cfg.n_actions {
            let k = rng.gen_range(1..=cfg.branching.min(n_states));
            let mut support = sample(rng, n_states, k).into_vec();
            support.sort_unstable();
            spec.set_uniform(s, a, &support);
        }
    }

    let candidates: Vec<usize> = (usize::from(!cfg.state_vars_include_initial)..n_states).collect();
    let n_state_vars = cfg.n_state_vars.draw(rng);
    for _ in 0..n_state_vars {
        // every range holds at least n_state_vars states, so sequential
        // distinct assignment never dead-ends
        let size = rng.gen_range(n_state_vars.max(1)..=candidates.len());
        let mut range: Vec<usize> = sample(rng, candidates.len(), size).into_iter().map(|i| candidates[i]).collect();
        range.sort_unstable();
        spec.state_var_ranges.push(range);
    }

    spec.prob_var_domains = vec![Interval::default(); cfg.n_prob_vars.draw(rng)];

    let n_stim_vars = cfg.n_stim_vars.draw(rng);
    spec.n_stim_vars = n_stim_vars;
    for s in 0..n_states {
        spec.stimuli[s] = if cfg.n_fixed_stimuli == 0 || rng.gen_bool(cfg.null_stimulus_prob) {
            Stimulus::Null
        } else {
            Stimulus::Fixed(rng.gen_range(0..cfg.n_fixed_stimuli))
        };
    }
    for (k, s) in sample(rng, n_states, n_stim_vars).into_iter().enumerate() {
        spec.stimuli[s] = Stimulus::Var(k);
    }

    spec.n_flags = cfg.n_flags.draw(rng);
    if spec.n_flags > 0 {
        for _ in 0..cfg.n_flag_rules.draw(rng) {
            let (s, a, s_next) = condition(cfg, &spec, rng);
            let flag = rng.gen_range(0..spec.n_flags);
            spec.flag_rules.push(FlagRule { s, a, s_next, flag, value: true });
        }
        spec.reset_flags_on_initial = rng.gen_bool(cfg.reset_flags_prob);
    }

    for _ in 0..cfg.n_reward_rules.draw(rng) {
        let (s, a, s_next) = condition(cfg, &spec, rng);
        let prob = if spec.n_prob_vars() > 0 && rng.gen_bool(cfg.prob_var_rule_prob) {
            Prob::Var(rng.gen_range(0..spec.n_prob_vars()))
        } else {
            Prob::Fixed(1.0)
        };
        let flag_cond = (spec.n_flags > 0 && rng.gen_bool(cfg.flag_cond_prob))
            .then(|| FlagCondition { flag: rng.gen_range(0..spec.n_flags), value: rng.gen_bool(0.5) });
        spec.reward_rules.push(RewardRule { s, a, s_next, reward: 1.0, prob, flag_cond });
    }
    spec
}

/// A random (s, a, s') condition with at least one field specified.
fn condition(cfg: &GeneratorConfig, spec: &MetaTaskSpec, rng: &mut SeededRng) -> (StateRef, ActionRef, StateRef) {
    let state_field = |rng: &mut SeededRng| {
        if spec.n_state_vars() > 0 && rng.gen_bool(cfg.state_var_field_prob) {
            StateRef::Var(rng.gen_range(0..spec.n_state_vars()))
        } else {
            StateRef::State(rng.gen_range(0..spec.n_states))
        }
    };
    let mut s = if rng.gen_bool(cfg.dont_care.s) { StateRef::Any } else { state_field(rng) };
    let mut a = if rng.gen_bool(cfg.dont_care.a) {
        ActionRef::Any
    } else {
        ActionRef::Action(rng.gen_range(0..spec.n_actions))
    };
    let mut s_next = if rng.gen_bool(cfg.dont_care.s_next) { StateRef::Any } else { state_field(rng) };
    if s == StateRef::Any && a == ActionRef::Any && s_next == StateRef::Any {
        match rng.gen_range(0..3) {
            0 => s = state_field(rng),
            1 => a = ActionRef::Action(rng.gen_range(0..spec.n_actions)),
            _ => s_next = state_field(rng),
        }
    }
    (s, a, s_next)
}

/// `count` specs from independent seeds `derive_seed(cfg.seed, i)`.
/// Duplicates are kept.
pub fn generate_batch(cfg: &GeneratorConfig, count: usize) -> Result<Vec<(MetaTaskSpec, u64)>, GenerateError> {
    cfg.check()?;
    (0..count as u64)
        .map(|i| {
            let seed = derive_seed(cfg.seed, i);
            generate(&GeneratorConfig { seed, ..cfg.clone() }).map(|spec| (spec, seed))
        })
        .collect()
}
