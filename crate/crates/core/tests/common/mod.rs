//! Reference implementations used as oracles by the integration tests.
//!
//! Everything here re-derives task semantics from the raw fields of a
//! `TaskInstance`; nothing calls the crate's own matching or solving code.
#![allow(dead_code)]

use std::collections::BTreeSet;

use metaforge::instance::TaskInstance;
use metaforge::model::{ActionRef, FlagCondition, FlagRule, MetaTaskSpec, Prob, RewardRule, StateRef};
use rand::Rng;

/// One possible outcome of taking an action: probability, successor,
/// expected reward, flags afterwards.
#[derive(Debug, Clone, Copy)]
pub struct Outcome {
    pub prob: f64,
    pub next: usize,
    pub reward: f64,
    pub flags: u64,
}

fn wild(field: Option<usize>, v: usize) -> bool {
    field.is_none() || field == Some(v)
}

/// Index of the reward rule that fires, by scanning from the end.
pub fn last_match(inst: &TaskInstance, s: usize, a: usize, sn: usize, flags: u64) -> Option<usize> {
    (0..inst.reward_rules.len()).rev().find(|&i| {
        let r = &inst.reward_rules[i];
        wild(r.s, s)
            && wild(r.a, a)
            && wild(r.s_next, sn)
            && r.flag_cond.is_none_or(|c| ((flags >> c.flag) & 1 == 1) == c.value)
    })
}

pub fn outcomes(inst: &TaskInstance, s: usize, a: usize, flags: u64) -> Vec<Outcome> {
    let mut out = Vec::new();
    for (sn, &p) in inst.transition[s][a].iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mut f = flags;
        for r in &inst.flag_rules {
            if wild(r.s, s) && wild(r.a, a) && wild(r.s_next, sn) {
                if r.value {
                    f |= 1 << r.flag;
                } else {
                    f &= !(1 << r.flag);
                }
            }
        }
        let reward = last_match(inst, s, a, sn, f).map_or(0.0, |i| inst.reward_rules[i].reward * inst.reward_rules[i].prob);
        if inst.reset_flags_on_initial && sn == 0 {
            f = 0;
        }
        out.push(Outcome { prob: p, next: sn, reward, flags: f });
    }
    out
}

/// Best expected return over all history-dependent policies, by expanding
/// the full decision tree.
pub fn expectimax(inst: &TaskInstance, t: usize, s: usize, flags: u64) -> f64 {
    if t == inst.horizon {
        return 0.0;
    }
    (0..inst.n_actions)
        .map(|a| {
            outcomes(inst, s, a, flags)
                .iter()
                .map(|o| o.prob * (o.reward + expectimax(inst, t + 1, o.next, o.flags)))
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Every (t, state, flags) the agent can face under some policy.
pub fn decision_points(inst: &TaskInstance) -> Vec<(usize, usize, u64)> {
    let mut points = Vec::new();
    let mut frontier: BTreeSet<(usize, u64)> = BTreeSet::from([(0, 0)]);
    for t in 0..inst.horizon {
        let mut next = BTreeSet::new();
        for &(s, f) in &frontier {
            points.push((t, s, f));
            for a in 0..inst.n_actions {
                next.extend(outcomes(inst, s, a, f).iter().map(|o| (o.next, o.flags)));
            }
        }
        frontier = next;
    }
    points
}

/// Expected return of a Markov policy given as one action per decision
/// point, by straightforward recursion.
pub fn policy_return(inst: &TaskInstance, points: &[(usize, usize, u64)], choice: &[usize]) -> f64 {
    fn go(inst: &TaskInstance, points: &[(usize, usize, u64)], choice: &[usize], t: usize, s: usize, f: u64) -> f64 {
        if t == inst.horizon {
            return 0.0;
        }
        let i = points.iter().position(|&p| p == (t, s, f)).expect("reachable point");
        outcomes(inst, s, choice[i], f)
            .iter()
            .map(|o| o.prob * (o.reward + go(inst, points, choice, t + 1, o.next, o.flags)))
            .sum()
    }
    go(inst, points, choice, 0, 0, 0)
}

/// Maximum over every deterministic non-stationary policy, enumerated one by
/// one. `None` if there are more than `limit` policies.
pub fn enumerate_best(inst: &TaskInstance, limit: u64) -> Option<f64> {
    let points = decision_points(inst);
    let count = (inst.n_actions as u64).checked_pow(points.len() as u32)?;
    if count > limit {
        return None;
    }
    let mut best = f64::NEG_INFINITY;
    let mut choice = vec![0; points.len()];
    for mut code in 0..count {
        for c in choice.iter_mut() {
            *c = (code % inst.n_actions as u64) as usize;
            code /= inst.n_actions as u64;
        }
        best = best.max(policy_return(inst, &points, &choice));
    }
    Some(best)
}

/// A small spec with no variables whose probabilities are all multiples of
/// 1/8, so every expected return is exact in binary floating point.
pub fn dyadic_spec(rng: &mut impl Rng, max_states: usize, max_horizon: usize) -> MetaTaskSpec {
    let n = rng.gen_range(1..=max_states);
    let n_actions = rng.gen_range(1..=2);
    let mut spec = MetaTaskSpec::new(n, n_actions);
    spec.horizon = rng.gen_range(1..=max_horizon);
    for s in 0..n {
        for a in 0..n_actions {
            let mut quarters = vec![0u32; n];
            for _ in 0..4 {
                quarters[rng.gen_range(0..n)] += 1;
            }
            let entries: Vec<(usize, f64)> =
                quarters.iter().enumerate().filter(|(_, &q)| q > 0).map(|(j, &q)| (j, q as f64 / 4.0)).collect();
            spec.set_row(s, a, &entries);
        }
    }
    let state = |rng: &mut dyn rand::RngCore| {
        if rng.gen_bool(0.4) {
            StateRef::Any
        } else {
            StateRef::State(rng.gen_range(0..n))
        }
    };
    let with_flags = rng.gen_bool(0.5);
    if with_flags {
        spec.n_flags = 1;
        spec.reset_flags_on_initial = rng.gen_bool(0.5);
        for _ in 0..rng.gen_range(1..=2) {
            spec.flag_rules.push(FlagRule {
                s: state(rng),
                a: if rng.gen_bool(0.5) { ActionRef::Any } else { ActionRef::Action(rng.gen_range(0..n_actions)) },
                s_next: state(rng),
                flag: 0,
                value: rng.gen_bool(0.7),
            });
        }
    }
    for _ in 0..rng.gen_range(0..=4) {
        let mut rule = RewardRule {
            s: state(rng),
            a: if rng.gen_bool(0.5) { ActionRef::Any } else { ActionRef::Action(rng.gen_range(0..n_actions)) },
            s_next: state(rng),
            reward: rng.gen_range(-2..=3) as f64,
            prob: Prob::Fixed(rng.gen_range(1..=8) as f64 / 8.0),
            flag_cond: None,
        };
        if with_flags && rng.gen_bool(0.4) {
            rule.flag_cond = Some(FlagCondition { flag: 0, value: rng.gen_bool(0.5) });
        }
        if rule.is_fully_unspecified() {
            rule.s = StateRef::State(rng.gen_range(0..n));
        }
        spec.reward_rules.push(rule);
    }
    spec
}
