use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use metaforge::codec::{
    digest_hex, emit_canonical, emit_positional_json, parse_any, spec_digest, CodecError, CANONICAL_EXTENSION,
};
use metaforge::engine::{run_episode, RandomPolicy};
use metaforge::filter::{filter_meta_task, Classification, FilterConfig};
use metaforge::generator::{generate_batch, GeneratorConfig};
use metaforge::model::{validate_spec, MetaTaskSpec};
use metaforge::presets::{self, PresetParams};
use metaforge::rng::derive_seed;
use metaforge::sampler::{sample_instance, SamplerConfig, StimulusKind};
use metaforge::server::{serve, Session};
use metaforge::solver::{solve_exact, SolverConfig, DEFAULT_CAP};

const CAP_ENV: &str = "METAFORGE_SOLVER_CAP";

const EXIT_META: u8 = 0;
const EXIT_EQUIVALENT: u8 = 10;
const EXIT_SINGLE_OPTIMUM: u8 = 11;
const EXIT_FILTER_ERROR: u8 = 12;

#[derive(Parser)]
#[command(name = "metaforge", version, about = "Generate, run and triage simple meta-RL tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a batch of randomly generated specs plus a manifest.
    Generate {
        /// Generator config (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Master seed, overriding the config's.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample one instance and print it as JSON.
    Sample {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Check a spec and list every violation.
    Validate {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Roll out episodes of one sampled instance.
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, value_enum, default_value_t = PolicyKind::Random)]
        policy: PolicyKind,
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Master seed for episodes (and the random policy).
        #[arg(long, default_value_t = 0)]
        episode_seed: u64,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Classify a spec as meta, equivalent or single_optimum.
    ///
    /// Exit status: 0 meta, 10 equivalent, 11 single_optimum, 12 error.
    Filter {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        epsilon: f64,
        #[arg(long, default_value_t = 16)]
        probes: usize,
    },
    /// List presets, or export one.
    Presets {
        /// Preset to export; lists the catalog when absent.
        name: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Canonical)]
        format: Format,
        /// Preset parameter override, `key=value`.
        #[arg(short = 'p', long = "param")]
        params: Vec<String>,
    },
    /// Serve the newline-delimited JSON protocol on stdin/stdout.
    Serve {
        #[arg(long, default_value_t = 8)]
        stimulus_dim: usize,
    },
    /// Convert a spec between the positional and canonical formats.
    Convert {
        input: PathBuf,
        #[arg(long, value_enum)]
        to: Format,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SpecArgs {
    /// Spec file (either format) or `preset:NAME`.
    spec: String,
    /// Preset parameter override, `key=value`.
    #[arg(short = 'p', long = "param")]
    params: Vec<String>,
}

#[derive(Args)]
struct SamplerArgs {
    /// Instance seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    stimulus_dim: usize,
    /// Render variable stimuli as binary vectors.
    #[arg(long)]
    binary: bool,
}

impl SamplerArgs {
    fn config(&self) -> SamplerConfig {
        SamplerConfig {
            seed: self.seed,
            stimulus_dim: self.stimulus_dim,
            stimulus_kind: if self.binary { StimulusKind::Binary } else { StimulusKind::UnitReal },
            min_pairwise_distance: None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Random,
    GreedyOracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Positional,
    Canonical,
}

fn preset_params(pairs: &[String]) -> Result<PresetParams> {
    let mut params = PresetParams::default();
    for pair in pairs {
        let (key, value) = pair.split_once('=').with_context(|| format!("expected key=value, got {pair:?}"))?;
        params.set(key, value).map_err(anyhow::Error::msg)?;
    }
    Ok(params)
}

fn load_spec(args: &SpecArgs) -> Result<MetaTaskSpec> {
    if let Some(name) = args.spec.strip_prefix("preset:") {
        return Ok(presets::build(name, &preset_params(&args.params)?)?);
    }
    if !args.params.is_empty() {
        bail!("--param only applies to preset:NAME specs");
    }
    let bytes = fs::read(&args.spec).with_context(|| format!("reading {}", args.spec))?;
    parse_any(&bytes).with_context(|| format!("parsing {}", args.spec))
}

fn solver_config() -> Result<SolverConfig> {
    let max_augmented_states = match std::env::var(CAP_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{CAP_ENV}={v:?} is not a count"))?,
        Err(_) => DEFAULT_CAP,
    };
    Ok(SolverConfig { max_augmented_states })
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn emit(spec: &MetaTaskSpec, format: Format) -> Result<Vec<u8>> {
    Ok(match format {
        Format::Canonical => emit_canonical(spec),
        Format::Positional => emit_positional_json(spec)?,
    })
}

#[derive(Serialize)]
struct ManifestItem {
    file: String,
    seed: u64,
    digest: String,
}

#[derive(Serialize)]
struct Manifest {
    master_seed: u64,
    count: usize,
    config: GeneratorConfig,
    items: Vec<ManifestItem>,
}

fn cmd_generate(config: Option<&Path>, count: usize, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: GeneratorConfig = match config {
        Some(path) => serde_json::from_slice(&fs::read(path).with_context(|| format!("reading {}", path.display()))?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => GeneratorConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let batch = generate_batch(&cfg, count)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut items = Vec::with_capacity(count);
    for (i, (spec, item_seed)) in batch.iter().enumerate() {
        let file = format!("spec-{i:04}.{CANONICAL_EXTENSION}");
        fs::write(out.join(&file), emit_canonical(spec)).with_context(|| format!("writing {file}"))?;
        items.push(ManifestItem { file, seed: *item_seed, digest: digest_hex(spec_digest(spec)) });
    }
    let manifest = Manifest { master_seed: cfg.seed, count, config: cfg, items };
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    fs::write(out.join("manifest.json"), text).context("writing manifest.json")?;
    eprintln!("wrote {count} specs to {}", out.display());
    Ok(())
}

fn cmd_validate(args: &SpecArgs) -> Result<ExitCode> {
    let violations = match load_spec(args) {
        Ok(spec) => validate_spec(&spec),
        Err(e) => match e.downcast_ref::<CodecError>() {
            Some(CodecError::Invalid(violations)) => violations.clone(),
            _ => return Err(e),
        },
    };
    print_json(&serde_json::json!({ "valid": violations.is_empty(), "violations": violations }))?;
    Ok(if violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

#[derive(Serialize)]
struct RunReport {
    policy: &'static str,
    instance_seed: u64,
    episode_seed: u64,
    episode_returns: Vec<f64>,
    mean_return: Option<f64>,
    expected_optimal_return: Option<f64>,
}

fn cmd_run(args: &SpecArgs, policy: PolicyKind, sampler: &SamplerArgs, episode_seed: u64, episodes: usize) -> Result<()> {
    let spec = load_spec(args)?;
    let inst = sample_instance(&spec, &sampler.config())?;
    let mut returns = Vec::with_capacity(episodes);
    let mut optimum = None;
    match policy {
        PolicyKind::Random => {
            let mut agent = RandomPolicy::new(inst.n_actions, episode_seed);
            for i in 0..episodes as u64 {
                returns.push(run_episode(&inst, &mut agent, derive_seed(episode_seed, i))?.total_return);
            }
        }
        PolicyKind::GreedyOracle => {
            let solution = solve_exact(&inst, &solver_config()?)?;
            optimum = Some(solution.value);
            let mut agent = solution.policy;
            for i in 0..episodes as u64 {
                returns.push(run_episode(&inst, &mut agent, derive_seed(episode_seed, i))?.total_return);
            }
        }
    }
    let mean_return = (!returns.is_empty()).then(|| returns.iter().sum::<f64>() / returns.len() as f64);
    print_json(&RunReport {
        policy: match policy {
            PolicyKind::Random => "random",
            PolicyKind::GreedyOracle => "greedy-oracle",
        },
        instance_seed: sampler.seed,
        episode_seed,
        episode_returns: returns,
        mean_return,
        expected_optimal_return: optimum,
    })
}

fn cmd_filter(args: &SpecArgs, samples: usize, seed: u64, epsilon: f64, probes: usize) -> ExitCode {
    let run = || -> Result<Classification> {
        let spec = load_spec(args)?;
        let cfg = FilterConfig { samples, seed, tolerance: epsilon, probes, solver: solver_config()?, ..FilterConfig::default() };
        let report = filter_meta_task(&spec, &cfg)?;
        print_json(&report)?;
        Ok(report.classification)
    };
    match run() {
        Ok(Classification::Meta) => ExitCode::from(EXIT_META),
        Ok(Classification::Equivalent) => ExitCode::from(EXIT_EQUIVALENT),
        Ok(Classification::SingleOptimum) => ExitCode::from(EXIT_SINGLE_OPTIMUM),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FILTER_ERROR)
        }
    }
}

fn cmd_presets(name: Option<&str>, format: Format, params: &[String]) -> Result<()> {
    let Some(name) = name else {
        let catalog: Vec<_> = presets::CATALOG.iter().collect();
        return print_json(&catalog);
    };
    let spec = presets::build(name, &preset_params(params)?)?;
    io::stdout().write_all(&emit(&spec, format)?)?;
    Ok(())
}

fn cmd_convert(input: &Path, to: Format, output: Option<&Path>) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let spec = parse_any(&bytes).with_context(|| format!("parsing {}", input.display()))?;
    let converted = emit(&spec, to)?;
    match output {
        Some(path) => fs::write(path, converted).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(&converted)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { config, count, out, seed } => cmd_generate(config.as_deref(), count, &out, seed)?,
        Command::Sample { spec, sampler } => {
            let inst = sample_instance(&load_spec(&spec)?, &sampler.config())?;
            io::stdout().write_all(&inst.to_canonical_json())?;
        }
        Command::Validate { spec } => return cmd_validate(&spec),
        Command::Run { spec, policy, sampler, episode_seed, episodes } => {
            cmd_run(&spec, policy, &sampler, episode_seed, episodes)?
        }
        Command::Filter { spec, samples, seed, epsilon, probes } => {
            return Ok(cmd_filter(&spec, samples, seed, epsilon, probes))
        }
        Command::Presets { name, format, params } => cmd_presets(name.as_deref(), format, &params)?,
        Command::Serve { stimulus_dim } => {
            let mut session = Session::with_sampler(SamplerConfig { stimulus_dim, ..SamplerConfig::default() });
            serve(io::stdin().lock(), io::stdout().lock(), &mut session)?;
        }
        Command::Convert { input, to, output } => cmd_convert(&input, to, output.as_deref())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|cause| {
        cause.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
            || cause.downcast_ref::<serde_json::Error>().is_some_and(|js| js.io_error_kind() == Some(io::ErrorKind::BrokenPipe))
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
