//! Triage of meta-task specs: are the sampled instances all the same task,
//! do they share one optimal policy, or does each need its own?
//!
//! `N` instances are sampled and solved exactly. Entry `R[k][j]` of the
//! return matrix is the exact return of instance `j`'s optimal policy on
//! instance `k`. The meta-task is
//!
//! * `equivalent` when all instances resolve to the same task and `K`
//!   random probe policies earn the same return (within ε) on all of them;
//! * `single_optimum` when `R[k][j] >= R[k][k] - ε` for every `k, j`;
//! * `meta` otherwise.
//!
//! Policies are indexed by augmented state (state, flags), not by
//! observation history. Variation that only changes what the agent sees
//! (stimulus variables) is therefore invisible to the triage, and a
//! stimulus-only meta-task comes out as `single_optimum`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::Assignment;
use crate::model::MetaTaskSpec;
use crate::rng::{derive_seed, seeded};
use crate::codec::spec_digest;
use crate::sampler::{check_spec, sample_checked, SampleError, SamplerConfig};
use crate::solver::{evaluate_on_mdp, solve_mdp, AugmentedMdp, SolverConfig, SolverError, TabularPolicy};

const PROBE_SALT: u64 = 0x7072_6f62_6573_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub probes: usize,
    pub sampler: SamplerConfig,
    pub solver: SolverConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            samples: 8,
            seed: 0,
            tolerance: 1e-9,
            probes: 16,
            sampler: SamplerConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Equivalent,
    SingleOptimum,
    Meta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub classification: Classification,
    pub samples: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub instance_seeds: Vec<u64>,
    pub assignments: Vec<Assignment>,
    /// Optimal return of each instance from backward induction.
    pub optimal_returns: Vec<f64>,
    /// `return_matrix[k][j]`: return of policy `j` on instance `k`.
    pub return_matrix: Vec<Vec<f64>>,
    /// All instances resolve to identical tasks.
    pub instances_identical: bool,
    pub probes: usize,
    /// Largest |R_k(probe) - R_0(probe)| over probes and instances.
    pub probe_max_deviation: f64,
    pub probes_agree: bool,
    /// Largest shortfall of policy 0 against each instance's optimum.
    pub witness_max_regret: f64,
    pub witness_within_tolerance: bool,
    /// Per instance, the t = 0 slice of its optimal non-stationary policy
    /// (a stationary summary, not the policy that was evaluated).
    pub stationary_projections: Vec<Vec<usize>>,
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub fn filter_meta_task(spec: &MetaTaskSpec, cfg: &FilterConfig) -> Result<FilterReport, FilterError> {
    let n = cfg.samples;
    if n < 2 {
        return Err(FilterError::TooFewSamples(n));
    }
    let eps = cfg.tolerance;

    cfg.solver.check_size(spec.n_states, spec.n_flags)?;
    check_spec(spec)?;
    let digest = spec_digest(spec);

    // Dense instances are dropped as soon as their sparse MDP exists.
    let instance_seeds: Vec<u64> = (0..n as u64).map(|i| derive_seed(cfg.seed, i)).collect();
    let mut assignments = Vec::with_capacity(n);
    let mut resolved_digests = Vec::with_capacity(n);
    let mut mdps = Vec::with_capacity(n);
    for &seed in &instance_seeds {
        let sampler = SamplerConfig { seed, ..cfg.sampler.clone() };
        let inst = sample_checked(spec, &sampler, digest)?;
        mdps.push(AugmentedMdp::build(&inst, &cfg.solver)?);
        resolved_digests.push(inst.resolved_digest());
        assignments.push(inst.assignment);
    }
    let solutions: Vec<_> = mdps.iter().map(solve_mdp).collect();

    let mut return_matrix = vec![vec![0.0; n]; n];
    for (k, mdp) in mdps.iter().enumerate() {
        for (j, sol) in solutions.iter().enumerate() {
            return_matrix[k][j] = evaluate_on_mdp(mdp, &sol.policy)?;
        }
    }

    let instances_identical = resolved_digests.iter().all(|&d| d == resolved_digests[0]);

    let mut probe_rng = seeded(derive_seed(cfg.seed ^ PROBE_SALT, 0));
    let mut probe_max_deviation: f64 = 0.0;
    for _ in 0..cfg.probes {
        let probe = TabularPolicy::random(&mdps[0], &mut probe_rng);
        let base = evaluate_on_mdp(&mdps[0], &probe)?;
        for mdp in &mdps[1..] {
            probe_max_deviation = probe_max_deviation.max((evaluate_on_mdp(mdp, &probe)? - base).abs());
        }
    }
    let probes_agree = probe_max_deviation <= eps;

    let single_optimum = (0..n).all(|k| (0..n).all(|j| return_matrix[k][j] >= return_matrix[k][k] - eps));
    let classification = if instances_identical && probes_agree {
        Classification::Equivalent
    } else if single_optimum {
        Classification::SingleOptimum
    } else {
        Classification::Meta
    };

    let optimal_returns: Vec<f64> = solutions.iter().map(|s| s.value).collect();
    let witness_max_regret = (0..n)
        .map(|k| optimal_returns[k] - return_matrix[k][0])
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(FilterReport {
        classification,
        samples: n,
        tolerance: eps,
        seed: cfg.seed,
        instance_seeds,
        assignments,
        optimal_returns,
        return_matrix,
        instances_identical,
        probes: cfg.probes,
        probe_max_deviation,
        probes_agree,
        witness_max_regret,
        witness_within_tolerance: witness_max_regret <= eps,
        stationary_projections: solutions.iter().map(|s| s.policy.stationary_projection()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Interval, Prob, RewardRule, StateRef};

    fn two_arm(shared: bool) -> MetaTaskSpec {
        let mut spec = MetaTaskSpec::new(1, 2);
        spec.prob_var_domains = vec![Interval::default(); if shared { 1 } else { 2 }];
        let second = if shared { 0 } else { 1 };
        spec.reward_rules = vec![
            RewardRule::on_state(StateRef::Any).with_action(0).with_prob(Prob::Var(0)),
            RewardRule::on_state(StateRef::Any).with_action(1).with_prob(Prob::Var(second)),
        ];
        spec
    }

    #[test]
    fn no_variables_is_equivalent() {
        let mut spec = MetaTaskSpec::new(2, 2);
        spec.set_uniform_all(0, &[0, 1]);
        spec.reward_rules.push(RewardRule::on_state(StateRef::State(1)).with_action(1));
        let report = filter_meta_task(&spec, &FilterConfig::default()).unwrap();
        assert_eq!(report.classification, Classification::Equivalent);
        assert!(report.instances_identical && report.probes_agree);
    }

    #[test]
    fn shared_probability_is_not_meta() {
        let report = filter_meta_task(&two_arm(true), &FilterConfig::default()).unwrap();
        assert_eq!(report.classification, Classification::SingleOptimum);
        assert!(report.witness_within_tolerance);
        assert!(!report.instances_identical);
    }

    #[test]
    fn independent_arms_are_meta() {
        let report = filter_meta_task(&two_arm(false), &FilterConfig::default()).unwrap();
        let first_arm_better: Vec<bool> = report.assignments.iter().map(|a| a.prob_vars[0] > a.prob_vars[1]).collect();
        assert!(first_arm_better.contains(&true) && first_arm_better.contains(&false));
        assert_eq!(report.classification, Classification::Meta);
        assert_eq!(report.return_matrix.len(), 8);
        assert!(report.return_matrix.iter().all(|row| row.len() == 8));
    }

    #[test]
    fn needs_two_samples() {
        let cfg = FilterConfig { samples: 1, ..FilterConfig::default() };
        assert!(matches!(filter_meta_task(&two_arm(false), &cfg), Err(FilterError::TooFewSamples(1))));
    }
}
