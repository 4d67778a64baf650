//! Resolving a meta-task spec into a concrete task instance.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::spec_digest;
use crate::instance::{Assignment, ResolvedFlagRule, ResolvedRewardRule, TaskInstance};
use crate::model::{validate_spec, ActionRef, MetaTaskSpec, Prob, StateRef, Stimulus, Violation};
use crate::rng::{seeded, Rng as SeededRng};

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    Binary,
    #[default]
    UnitReal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub seed: u64,
    pub stimulus_dim: usize,
    pub stimulus_kind: StimulusKind,
    /// Minimum L2 distance between any two distinct stimuli of an instance.
    /// `None` means `0.1 * sqrt(stimulus_dim)`.
    pub min_pairwise_distance: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { seed: 0, stimulus_dim: 8, stimulus_kind: StimulusKind::UnitReal, min_pairwise_distance: None }
    }
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn min_distance(&self) -> f64 {
        self.min_pairwise_distance.unwrap_or(0.1 * (self.stimulus_dim as f64).sqrt())
    }
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("spec is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidSpec(Vec<Violation>),
    #[error("sampling infeasible: {0}")]
    Infeasible(String),
    #[error("sampler configuration error: {0}")]
    Config(String),
    #[error("assignment does not match spec: {0}")]
    AssignmentMismatch(String),
}

/// Draw every variable of `spec` and build the instance.
///
/// State variables are assigned in declaration order, each uniformly over
/// its range minus the states already taken; a dead end restarts the whole
/// assignment. Probability variables are uniform on their open domain.
/// Stimulus variables are fresh random vectors kept at least
/// `min_distance()` away from every other stimulus of the instance.
pub fn sample_instance(spec: &MetaTaskSpec, cfg: &SamplerConfig) -> Result<TaskInstance, SampleError> {
    check_spec(spec)?;
    sample_checked(spec, cfg, spec_digest(spec))
}

/// [`sample_instance`] for a spec already known to be valid, with its digest
/// precomputed.
pub(crate) fn sample_checked(spec: &MetaTaskSpec, cfg: &SamplerConfig, digest: u64) -> Result<TaskInstance, SampleError> {
    check_fixed_stimuli(spec, cfg.stimulus_dim)?;
    let mut rng = seeded(cfg.seed);

    let state_vars = sample_state_vars(&spec.state_var_ranges, &mut rng)?;

    let prob_vars = spec
        .prob_var_domains
        .iter()
        .map(|d| loop {
            let x = rng.gen_range(d.lo..d.hi);
            if x > d.lo {
                break x;
            }
        })
        .collect();

    let mut taken: Vec<Vec<f64>> = Vec::new();
    for stim in &spec.stimuli {
        let v = match *stim {
            Stimulus::Null => vec![0.0; cfg.stimulus_dim],
            Stimulus::Fixed(id) => one_hot(id, cfg.stimulus_dim),
            Stimulus::Var(_) => continue,
        };
        if !taken.contains(&v) {
            taken.push(v);
        }
    }
    let min_d = cfg.min_distance();
    let mut stim_vars = Vec::with_capacity(spec.n_stim_vars);
    for k in 0..spec.n_stim_vars {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let candidate: Vec<f64> = (0..cfg.stimulus_dim)
                .map(|_| match cfg.stimulus_kind {
                    StimulusKind::Binary => f64::from(u8::from(rng.gen::<bool>())),
                    StimulusKind::UnitReal => rng.gen::<f64>(),
                })
                .collect();
            if taken.iter().all(|t| l2(t, &candidate) >= min_d) {
                accepted = Some(candidate);
                break;
            }
        }
        let v = accepted.ok_or_else(|| {
            SampleError::Infeasible(format!(
                "no stimulus for variable {k} at distance >= {min_d} from the {} others in dimension {}",
                taken.len(),
                cfg.stimulus_dim
            ))
        })?;
        taken.push(v.clone());
        stim_vars.push(v);
    }

    let assignment = Assignment { state_vars, prob_vars, stim_vars, stimulus_dim: cfg.stimulus_dim };
    resolve(spec, assignment, digest)
}

/// Rebuild the instance described by `assignment`.
pub fn replay_instance(spec: &MetaTaskSpec, assignment: &Assignment) -> Result<TaskInstance, SampleError> {
    check_spec(spec)?;
    let mismatch = |msg: String| Err(SampleError::AssignmentMismatch(msg));
    if assignment.state_vars.len() != spec.n_state_vars() {
        return mismatch(format!(
            "{} state variables assigned, spec declares {}",
            assignment.state_vars.len(),
            spec.n_state_vars()
        ));
    }
    if assignment.prob_vars.len() != spec.n_prob_vars() {
        return mismatch(format!(
            "{} probability variables assigned, spec declares {}",
            assignment.prob_vars.len(),
            spec.n_prob_vars()
        ));
    }
    if assignment.stim_vars.len() != spec.n_stim_vars {
        return mismatch(format!(
            "{} stimulus variables assigned, spec declares {}",
            assignment.stim_vars.len(),
            spec.n_stim_vars
        ));
    }
    for (k, (&s, range)) in assignment.state_vars.iter().zip(&spec.state_var_ranges).enumerate() {
        if !range.contains(&s) {
            return mismatch(format!("state variable {k} = {s} is outside its range {range:?}"));
        }
        if assignment.state_vars[..k].contains(&s) {
            return mismatch(format!("state variable {k} = {s} repeats an earlier variable"));
        }
    }
    for (k, (&p, d)) in assignment.prob_vars.iter().zip(&spec.prob_var_domains).enumerate() {
        if !d.contains_closed(p) {
            return mismatch(format!("probability variable {k} = {p} is outside [{}, {}]", d.lo, d.hi));
        }
    }
    for (k, v) in assignment.stim_vars.iter().enumerate() {
        if v.len() != assignment.stimulus_dim || v.iter().any(|x| !x.is_finite()) {
            return mismatch(format!("stimulus variable {k} is not a finite vector of length {}", assignment.stimulus_dim));
        }
    }
    check_fixed_stimuli(spec, assignment.stimulus_dim)?;
    resolve(spec, assignment.clone(), spec_digest(spec))
}

pub(crate) fn check_spec(spec: &MetaTaskSpec) -> Result<(), SampleError> {
    let violations = validate_spec(spec);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(SampleError::InvalidSpec(violations))
    }
}

fn check_fixed_stimuli(spec: &MetaTaskSpec, dim: usize) -> Result<(), SampleError> {
    if dim == 0 {
        return Err(SampleError::Config("stimulus dimension must be at least 1".into()));
    }
    if let Some(id) = spec
        .stimuli
        .iter()
        .filter_map(|s| match s {
            Stimulus::Fixed(id) => Some(*id),
            _ => None,
        })
        .find(|&id| id as usize >= dim)
    {
        return Err(SampleError::Config(format!(
            "fixed stimulus id {id} needs a one-hot dimension above {dim}"
        )));
    }
    Ok(())
}

fn one_hot(id: u32, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[id as usize] = 1.0;
    v
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Whether distinct representatives exist for all ranges.
fn has_distinct_assignment(ranges: &[Vec<usize>], used: &mut Vec<usize>) -> bool {
    let Some((first, rest)) = ranges.split_first() else {
        return true;
    };
    for &s in first {
        if !used.contains(&s) {
            used.push(s);
            let ok = has_distinct_assignment(rest, used);
            used.pop();
            if ok {
                return true;
            }
        }
    }
    false
}

fn sample_state_vars(ranges: &[Vec<usize>], rng: &mut SeededRng) -> Result<Vec<usize>, SampleError> {
    if !has_distinct_assignment(ranges, &mut Vec::new()) {
        return Err(SampleError::Infeasible(format!(
            "state variable ranges {ranges:?} admit no assignment of distinct states"
        )));
    }
    'attempt: for _ in 0..MAX_ATTEMPTS {
        let mut chosen: Vec<usize> = Vec::with_capacity(ranges.len());
        for range in ranges {
            let free: Vec<usize> = range.iter().copied().filter(|s| !chosen.contains(s)).collect();
            if free.is_empty() {
                continue 'attempt;
            }
            chosen.push(free[rng.gen_range(0..free.len())]);
        }
        return Ok(chosen);
    }
    Err(SampleError::Infeasible("distinct state assignment kept dead-ending".into()))
}

fn resolve(spec: &MetaTaskSpec, assignment: Assignment, digest: u64) -> Result<TaskInstance, SampleError> {
    let state = |r: StateRef| match r {
        StateRef::Any => None,
        StateRef::State(s) => Some(s),
        StateRef::Var(k) => Some(assignment.state_vars[k]),
    };
    let action = |a: ActionRef| match a {
        ActionRef::Any => None,
        ActionRef::Action(a) => Some(a),
    };
    let prob = |p: Prob| match p {
        Prob::Fixed(v) => v,
        Prob::Var(k) => assignment.prob_vars[k],
    };

    let mut transition = Vec::with_capacity(spec.n_states);
    for (s, per_action) in spec.transition.iter().enumerate() {
        let mut rows = Vec::with_capacity(spec.n_actions);
        for (a, row) in per_action.iter().enumerate() {
            let mut resolved: Vec<f64> = row.iter().map(|&p| prob(p)).collect();
            if row.iter().any(|p| matches!(p, Prob::Var(_))) {
                let sum: f64 = resolved.iter().sum();
                if sum <= 0.0 {
                    return Err(SampleError::Infeasible(format!("transition[{s}][{a}] resolved to zero mass")));
                }
                resolved.iter_mut().for_each(|p| *p /= sum);
            }
            rows.push(resolved);
        }
        transition.push(rows);
    }

    let reward_rules = spec
        .reward_rules
        .iter()
        .map(|r| ResolvedRewardRule {
            s: state(r.s),
            a: action(r.a),
            s_next: state(r.s_next),
            reward: r.reward,
            prob: prob(r.prob),
            flag_cond: r.flag_cond,
        })
        .collect();
    let flag_rules = spec
        .flag_rules
        .iter()
        .map(|r| ResolvedFlagRule {
            s: state(r.s),
            a: action(r.a),
            s_next: state(r.s_next),
            flag: r.flag,
            value: r.value,
        })
        .collect();
    let stimulus_map = spec
        .stimuli
        .iter()
        .map(|stim| match *stim {
            Stimulus::Null => None,
            Stimulus::Fixed(id) => Some(one_hot(id, assignment.stimulus_dim)),
            Stimulus::Var(k) => Some(assignment.stim_vars[k].clone()),
        })
        .collect();

    Ok(TaskInstance {
        spec_hash: digest,
        n_states: spec.n_states,
        n_actions: spec.n_actions,
        horizon: spec.horizon,
        transition,
        reward_rules,
        flag_rules,
        stimulus_map,
        stimulus_dim: assignment.stimulus_dim,
        n_flags: spec.n_flags,
        reset_flags_on_initial: spec.reset_flags_on_initial,
        topology: spec.topology,
        assignment,
    })
}
