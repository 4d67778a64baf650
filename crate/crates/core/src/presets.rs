//! Ready-made meta-tasks: classic meta-RL benchmarks and a few tasks found
//! by random generation, written out as specs.
//!
//! Unless stated otherwise actions are 0 and 1, rewards are 1 with
//! probability 1 and the horizon is 100.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ActionRef, FlagRule, Interval, MetaTaskSpec, Prob, RewardRule, StateRef, Stimulus, Topology,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PresetInfo {
    pub name: &'static str,
    pub description: &'static str,
    /// Where the task comes from.
    pub origin: &'static str,
}

pub const CATALOG: &[PresetInfo] = &[
    PresetInfo {
        name: "bandit",
        description: "Two-arm bandit: one state, each arm pays with its own per-instance probability.",
        origin: "classic two-arm bandit",
    },
    PresetInfo {
        name: "harlow",
        description: "Sequential Harlow task: two novel objects shown in random order; select the rewarded one (action 0), ignore the other (action 1).",
        origin: "Harlow learning-set task, sequential presentation",
    },
    PresetInfo {
        name: "daw_two_step",
        description: "Two-step task: each first-stage action favours one second-stage state; which second-stage state pays well changes per instance.",
        origin: "Daw two-step task",
    },
    PresetInfo {
        name: "t_maze",
        description: "T-maze: a left or right cue, a corridor (0 = stay, 1 = forward), then a junction where 0 = left and 1 = right; the right cue sets flag 0.",
        origin: "cued T-maze",
    },
    PresetInfo {
        name: "dark_room",
        description: "Dark Room: find the rewarded cell of a grid; the only observation is the (x, y) position.",
        origin: "Dark Room find-the-spot task",
    },
    PresetInfo {
        name: "key_door_random",
        description: "Randomly generated 4-state task that happens to be a key-door task: the key is a special state, the door is state 2.",
        origin: "random generation (third example task)",
    },
    PresetInfo {
        name: "stay_switch",
        description: "Stay/switch bandit: three stimuli with their own reward probabilities; 1 = stay on the current one, 0 = switch to a random one.",
        origin: "novel task",
    },
    PresetInfo {
        name: "familiarity",
        description: "Familiarity detection: two cue stimuli, then repeated probes; answer 1 if the probe was a cue, 0 otherwise.",
        origin: "novel task",
    },
    PresetInfo {
        name: "random_task_1",
        description: "Randomly generated 3-state task amounting to a bandit over the two actions of state 1.",
        origin: "random generation (first example task)",
    },
    PresetInfo {
        name: "random_task_2",
        description: "Randomly generated 3-state task: state 1 always pays, state 0 pays when it is the special state; probabilities vary.",
        origin: "random generation (second example task)",
    },
];

#[derive(Debug, Error, PartialEq)]
pub enum PresetError {
    #[error("unknown preset {0:?}")]
    Unknown(String),
    #[error("bad parameter for {preset}: {message}")]
    BadParam { preset: &'static str, message: String },
}

/// Optional overrides; unset fields keep each preset's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetParams {
    pub horizon: Option<usize>,
    /// Dark Room grid width.
    pub width: Option<usize>,
    /// Dark Room grid height.
    pub height: Option<usize>,
    /// Number of T-maze corridor states.
    pub corridor: Option<usize>,
    /// Two-step: probability of the common transition.
    pub common: Option<f64>,
    /// Two-step: reward probability of the better state.
    pub high: Option<f64>,
    /// Two-step: reward probability of the other state.
    pub low: Option<f64>,
    /// First random task: probability that action 0 in state 1 leads to
    /// state 2 (action 1 mirrors it).
    pub bias: Option<f64>,
}

impl PresetParams {
    /// Set a field from a `key=value` string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let int = || value.parse::<usize>().map_err(|e| format!("{key}: {e}"));
        let real = || value.parse::<f64>().map_err(|e| format!("{key}: {e}"));
        match key {
            "horizon" => self.horizon = Some(int()?),
            "width" => self.width = Some(int()?),
            "height" => self.height = Some(int()?),
            "corridor" => self.corridor = Some(int()?),
            "common" => self.common = Some(real()?),
            "high" => self.high = Some(real()?),
            "low" => self.low = Some(real()?),
            "bias" => self.bias = Some(real()?),
            _ => return Err(format!("unknown parameter {key:?}")),
        }
        Ok(())
    }
}

pub fn names() -> impl Iterator<Item = &'static str> {
    CATALOG.iter().map(|p| p.name)
}

pub fn info(name: &str) -> Option<&'static PresetInfo> {
    CATALOG.iter().find(|p| p.name == name)
}

pub fn build(name: &str, params: &PresetParams) -> Result<MetaTaskSpec, PresetError> {
    let mut spec = match name {
        "bandit" => bandit(),
        "harlow" => harlow(),
        "daw_two_step" => daw_two_step(
            probability("daw_two_step", "common", params.common.unwrap_or(0.8))?,
            probability("daw_two_step", "high", params.high.unwrap_or(0.9))?,
            probability("daw_two_step", "low", params.low.unwrap_or(0.1))?,
        ),
        "t_maze" => t_maze(positive("t_maze", "corridor", params.corridor.unwrap_or(3))?),
        "dark_room" => dark_room(
            positive("dark_room", "width", params.width.unwrap_or(5))?,
            positive("dark_room", "height", params.height.unwrap_or(5))?,
        ),
        "key_door_random" => key_door_random(),
        "stay_switch" => stay_switch(),
        "familiarity" => familiarity(),
        "random_task_1" => random_task_1(probability("random_task_1", "bias", params.bias.unwrap_or(0.75))?),
        "random_task_2" => random_task_2(),
        other => return Err(PresetError::Unknown(other.to_string())),
    };
    if let Some(h) = params.horizon {
        spec.horizon = positive(info(name).map_or("?", |p| p.name), "horizon", h)?;
    }
    Ok(spec)
}

fn probability(preset: &'static str, key: &str, p: f64) -> Result<f64, PresetError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(PresetError::BadParam { preset, message: format!("{key} = {p} is not a probability") })
    }
}

fn positive(preset: &'static str, key: &str, n: usize) -> Result<usize, PresetError> {
    if n > 0 {
        Ok(n)
    } else {
        Err(PresetError::BadParam { preset, message: format!("{key} must be positive") })
    }
}

pub fn bandit() -> MetaTaskSpec {
    let mut spec = MetaTaskSpec::new(1, 2);
    spec.prob_var_domains = vec![Interval::default(); 2];
    spec.reward_rules = vec![
        RewardRule::on_state(StateRef::Any).with_action(0).with_prob(Prob::Var(0)),
        RewardRule::on_state(StateRef::Any).with_action(1).with_prob(Prob::Var(1)),
    ];
    spec
}

/// State 0 is a blank inter-trial state leading to state 1 (rewarded
/// object) or state 2 (unrewarded object) with equal odds.
pub fn harlow() -> MetaTaskSpec {
    let mut spec = MetaTaskSpec::new(3, 2);
    spec.set_uniform_all(0, &[1, 2]);
    spec.set_uniform_all(1, &[0]);
    spec.set_uniform_all(2, &[0]);
    spec.n_stim_vars = 2;
    spec.stimuli = vec![Stimulus::Null, Stimulus::Var(0), Stimulus::Var(1)];
    spec.reward_rules = vec![
        RewardRule::on_state(StateRef::State(1)).with_action(0),
        RewardRule::on_state(StateRef::State(2)).with_action(1),
    ];
    spec
}

/// Action 0 in state 0 leads to state 1 with probability `common`, action 1
/// to state 2. Both second-stage states pay with probability `low`, except
/// the special state, which pays with `high`.
pub fn daw_two_step(common: f64, high: f64, low: f64) -> MetaTaskSpec {
    let rare = 1.0 - common;
    let mut spec = MetaTaskSpec::new(3, 2);
    spec.set_row(0, 0, &[(1, common), (2, rare)]);
    spec.set_row(0, 1, &[(1, rare), (2, common)]);
    spec.set_uniform_all(1, &[0]);
    spec.set_uniform_all(2, &[0]);
    spec.stimuli = vec![Stimulus::Fixed(0), Stimulus::Fixed(1), Stimulus::Fixed(2)];
    spec.state_var_ranges = vec![vec![1, 2]];
    spec.reward_rules = vec![
        RewardRule::on_state(StateRef::State(1)).with_prob(Prob::Fixed(low)),
        RewardRule::on_state(StateRef::State(2)).with_prob(Prob::Fixed(low)),
        RewardRule::on_state(StateRef::Var(0)).with_prob(Prob::Fixed(high)),
    ];
    spec
}

/// States: 0 = left cue, 1 = right cue, `2..2+corridor` = corridor,
/// last = junction. A trial starts on a cue, walks the corridor and ends at
/// the junction, which sends the agent to either cue with equal odds. Acting
/// on the right cue sets flag 0; entering state 0 clears it.
pub fn t_maze(corridor: usize) -> MetaTaskSpec {
    let junction = 2 + corridor;
    let mut spec = MetaTaskSpec::new(junction + 1, 2);
    spec.set_uniform_all(0, &[2]);
    spec.set_uniform_all(1, &[2]);
    for c in 2..junction {
        spec.set_row(c, 0, &[(c, 1.0)]);
        spec.set_row(c, 1, &[(c + 1, 1.0)]);
    }
    spec.set_uniform_all(junction, &[0, 1]);
    spec.n_stim_vars = 2;
    spec.stimuli[0] = Stimulus::Var(0);
    spec.stimuli[1] = Stimulus::Var(1);
    spec.n_flags = 1;
    spec.flag_rules = vec![FlagRule { s: StateRef::State(1), a: ActionRef::Any, s_next: StateRef::Any, flag: 0, value: true }];
    spec.reward_rules = vec![
        RewardRule::on_state(StateRef::State(junction)).with_action(0).with_flag(0, false),
        RewardRule::on_state(StateRef::State(junction)).with_action(1).with_flag(0, true),
    ];
    spec.reset_flags_on_initial = true;
    spec
}

pub const GRID_UP: usize = 0;
pub const GRID_DOWN: usize = 1;
pub const GRID_LEFT: usize = 2;
pub const GRID_RIGHT: usize = 3;

/// A `width` x `height` grid with actions up (y - 1), down (y + 1), left
/// (x - 1) and right (x + 1); moving into a wall stays put. Actions beyond
/// the fourth are no-ops. Every state is blank; the coordinates are the
/// observation when `coord_obs` is set.
pub fn grid_skeleton(width: usize, height: usize, n_actions: usize, coord_obs: bool) -> MetaTaskSpec {
    let mut spec = MetaTaskSpec::new(width * height, n_actions.max(4));
    let topo = Topology { width, height, coord_obs };
    for s in 0..spec.n_states {
        let (x, y) = topo.coords(s);
        let moves = [
            (GRID_UP, x, y.saturating_sub(1)),
            (GRID_DOWN, x, (y + 1).min(height - 1)),
            (GRID_LEFT, x.saturating_sub(1), y),
            (GRID_RIGHT, (x + 1).min(width - 1), y),
        ];
        for (a, nx, ny) in moves {
            spec.set_row(s, a, &[(topo.state_at(nx, ny), 1.0)]);
        }
    }
    spec.topology = Some(topo);
    spec
}

/// Grid world whose rewarded cell is a special state ranging over every
/// cell. State 0 is the top-left corner.
pub fn dark_room(width: usize, height: usize) -> MetaTaskSpec {
    let mut spec = grid_skeleton(width, height, 4, true);
    spec.state_var_ranges = vec![(0..spec.n_states).collect()];
    spec.reward_rules = vec![RewardRule::on_state(StateRef::Var(0))];
    spec
}

pub fn key_door_random() -> MetaTaskSpec {
    let third = 1.0 / 3.0;
    let mut spec = MetaTaskSpec::new(4, 2);
    spec.set_row(0, 0, &[(1, 0.5), (2, 0.5)]);
    spec.set_row(0, 1, &[(2, 1.0)]);
    spec.set_row(1, 0, &[(1, 0.5), (2, 0.5)]);
    spec.set_row(1, 1, &[(3, 1.0)]);
    spec.set_row(2, 0, &[(0, third), (1, third), (3, third)]);
    spec.set_row(2, 1, &[(0, third), (1, third), (3, third)]);
    spec.set_uniform_all(3, &[1]);
    spec.state_var_ranges = vec![vec![1, 3, 2]];
    spec.n_flags = 1;
    spec.flag_rules = vec![FlagRule { s: StateRef::Var(0), a: ActionRef::Any, s_next: StateRef::Any, flag: 0, value: true }];
    spec.reward_rules = vec![RewardRule::on_state(StateRef::State(2)).with_flag(0, true)];
    spec.n_stim_vars = 2;
    spec.stimuli = vec![Stimulus::Var(0), Stimulus::Null, Stimulus::Var(1), Stimulus::Fixed(1)];
    spec
}

pub fn stay_switch() -> MetaTaskSpec {
    let mut spec = MetaTaskSpec::new(3, 2);
    for s in 0..3 {
        spec.set_uniform(s, 0, &[0, 1, 2]);
        spec.set_row(s, 1, &[(s, 1.0)]);
    }
    spec.prob_var_domains = vec![Interval::default(); 3];
    spec.n_stim_vars = 3;
    spec.stimuli = (0..3).map(Stimulus::Var).collect();
    spec.reward_rules = (0..3).map(|s| RewardRule::on_state(StateRef::State(s)).with_prob(Prob::Var(s))).collect();
    spec
}

/// States 0 and 1 show cues A and B; states 2, 3 and 4 are probes showing
/// A, B and a novel stimulus C, drawn uniformly after the cues and after
/// every probe.
pub fn familiarity() -> MetaTaskSpec {
    let mut spec = MetaTaskSpec::new(5, 2);
    spec.set_uniform_all(0, &[1]);
    for s in 1..5 {
        spec.set_uniform_all(s, &[2, 3, 4]);
    }
    spec.n_stim_vars = 3;
    spec.stimuli = vec![Stimulus::Var(0), Stimulus::Var(1), Stimulus::Var(0), Stimulus::Var(1), Stimulus::Var(2)];
    spec.reward_rules = vec![
        RewardRule::on_state(StateRef::State(2)).with_action(1),
        RewardRule::on_state(StateRef::State(3)).with_action(1),
        RewardRule::on_state(StateRef::State(4)).with_action(0),
    ];
    spec
}

/// State 1 always pays and so does the special state (0 or 2). From state
/// 1, action 0 reaches state 2 with probability `bias` and action 1 reaches
/// state 0 with the same probability. The last rule repeats the second one
/// for action 1 only and changes nothing.
pub fn random_task_1(bias: f64) -> MetaTaskSpec {
    let mut spec = MetaTaskSpec::new(3, 2);
    spec.set_row(0, 0, &[(1, 1.0)]);
    spec.set_uniform(0, 1, &[0, 1, 2]);
    spec.set_row(1, 0, &[(0, 1.0 - bias), (2, bias)]);
    spec.set_row(1, 1, &[(0, bias), (2, 1.0 - bias)]);
    spec.set_uniform_all(2, &[1]);
    spec.stimuli = vec![Stimulus::Fixed(0), Stimulus::Fixed(1), Stimulus::Null];
    spec.state_var_ranges = vec![vec![0, 2]];
    spec.reward_rules = vec![
        RewardRule::on_state(StateRef::State(1)),
        RewardRule::on_state(StateRef::Var(0)),
        RewardRule::on_state(StateRef::Var(0)).with_action(1),
    ];
    spec
}

/// State 0 stays put on action 0, state 1 on action 1; the other action
/// moves on at random. State 1 pays with probability p0; the special state
/// (0 or 1) pays with p1, overriding state 1's rule when it is state 1.
pub fn random_task_2() -> MetaTaskSpec {
    let mut spec = MetaTaskSpec::new(3, 2);
    spec.set_row(0, 0, &[(0, 1.0)]);
    spec.set_uniform(0, 1, &[1, 2]);
    spec.set_uniform(1, 0, &[0, 2]);
    spec.set_row(1, 1, &[(1, 1.0)]);
    spec.set_uniform_all(2, &[0, 1]);
    spec.stimuli = vec![Stimulus::Fixed(0), Stimulus::Fixed(1), Stimulus::Null];
    spec.state_var_ranges = vec![vec![0, 1]];
    spec.prob_var_domains = vec![Interval::default(); 2];
    spec.reward_rules = vec![
        RewardRule::on_state(StateRef::State(1)).with_prob(Prob::Var(0)),
        RewardRule::on_state(StateRef::Var(0)).with_prob(Prob::Var(1)),
    ];
    spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_spec;

    #[test]
    fn every_preset_is_valid() {
        for name in names() {
            let spec = build(name, &PresetParams::default()).unwrap();
            assert!(validate_spec(&spec).is_empty(), "{name}: {:?}", validate_spec(&spec));
        }
    }

    #[test]
    fn unknown_name() {
        assert_eq!(build("nope", &PresetParams::default()), Err(PresetError::Unknown("nope".into())));
    }

    #[test]
    fn bandit_shape() {
        let spec = build("bandit", &PresetParams::default()).unwrap();
        assert_eq!((spec.n_states, spec.n_actions), (1, 2));
        assert_eq!(spec.reward_rules.len(), 2);
        assert_eq!(spec.reward_rules[0].prob, Prob::Var(0));
        assert_eq!(spec.reward_rules[1].prob, Prob::Var(1));
        assert_eq!(spec.stimuli, vec![Stimulus::Null]);
    }

    #[test]
    fn daw_rules_in_override_order() {
        let spec = build("daw_two_step", &PresetParams::default()).unwrap();
        assert_eq!(spec.n_states, 3);
        assert_eq!(spec.state_var_ranges, vec![vec![1, 2]]);
        let states: Vec<_> = spec.reward_rules.iter().map(|r| r.s).collect();
        assert_eq!(states, vec![StateRef::State(1), StateRef::State(2), StateRef::Var(0)]);
        assert_eq!(spec.reward_rules[2].prob, Prob::Fixed(0.9));
        assert_eq!(spec.transition[0][0][1], Prob::Fixed(0.8));
    }

    #[test]
    fn dark_room_shape() {
        let params = PresetParams { width: Some(5), height: Some(5), ..PresetParams::default() };
        let spec = build("dark_room", &params).unwrap();
        assert_eq!((spec.n_states, spec.n_actions), (25, 4));
        assert_eq!(spec.topology, Some(Topology { width: 5, height: 5, coord_obs: true }));
        assert_eq!(spec.state_var_ranges[0].len(), 25);
    }

    #[test]
    fn t_maze_shape() {
        let spec = build("t_maze", &PresetParams { corridor: Some(3), ..PresetParams::default() }).unwrap();
        assert_eq!(spec.n_states, 6);
        assert!(spec.reset_flags_on_initial);
        assert_eq!(spec.flag_rules.len(), 1);
        assert!(spec.reward_rules.iter().all(|r| r.flag_cond.is_some() && r.a != ActionRef::Any));
    }

    #[test]
    fn params_parse_and_validate() {
        let mut p = PresetParams::default();
        p.set("common", "0.7").unwrap();
        p.set("width", "3").unwrap();
        assert!(p.set("colour", "red").is_err());
        assert!(p.set("width", "x").is_err());
        let bad = PresetParams { common: Some(1.5), ..PresetParams::default() };
        assert!(matches!(build("daw_two_step", &bad), Err(PresetError::BadParam { .. })));
    }
}
