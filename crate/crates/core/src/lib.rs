//! Generation, simulation and triage of simple meta-reinforcement-learning
//! tasks.
//!
//! A meta-task is a small POMDP in which some quantities (special states,
//! reward probabilities, stimuli) are variables. Sampling a
//! [`MetaTaskSpec`] resolves them into a [`TaskInstance`], which the
//! [`engine`] runs episode by episode. [`generator`] draws new specs at
//! random, [`presets`] holds well-known ones, and [`filter`] uses the exact
//! [`solver`] to flag specs whose instances do not actually require
//! learning to learn.

pub mod codec;
pub mod engine;
pub mod filter;
pub mod generator;
pub mod instance;
pub mod model;
pub mod presets;
pub mod rng;
pub mod sampler;
pub mod server;
pub mod solver;

pub use codec::{emit_canonical, emit_positional_json, parse_any, parse_canonical, parse_positional_json, spec_digest, CodecError};
pub use engine::{reset, run_episode, step, EngineError, EpisodeState, Policy, StepResult, Trajectory};
pub use filter::{filter_meta_task, Classification, FilterConfig, FilterError, FilterReport};
pub use generator::{generate, generate_batch, GenerateError, GeneratorConfig, GeneratorMode};
pub use instance::{Assignment, TaskInstance};
pub use model::{validate_spec, MetaTaskSpec, Violation, ViolationCode};
pub use sampler::{replay_instance, sample_instance, SampleError, SamplerConfig};
pub use solver::{evaluate_policy, solve_exact, Solution, SolverConfig, SolverError, TabularPolicy};
