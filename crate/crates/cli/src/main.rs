//! `iscc` command-line front end. Exit status 0 on success, 2 on usage or
//! configuration errors, 3 when training diverges.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iscc::baselines::SearchCaps;
use iscc::commands::{self, Allocator, Outputs};
use iscc::graph::Role;
use iscc::scenario::{GenSpec, Scenario};

#[derive(Parser)]
#[command(name = "iscc", version, about = "Information-resource market simulator and policy trainer")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed of the command; defaults to the scenario's or config's own.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. `gen-scenario` prints to stdout without it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `key=value` override of a scenario field (dotted path, e.g.
    /// `process.p_aws=0.8`). For `train`, keys address the training config
    /// unless prefixed with `scenario.`.
    #[arg(long = "params", global = true, value_name = "KEY=VALUE")]
    params: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AllocatorKind {
    Random,
    Greedy,
    Oracle,
    Policy,
}

#[derive(Args)]
struct Checkpoints {
    #[arg(long)]
    distributor: Option<PathBuf>,
    #[arg(long)]
    purchaser: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random scenario.
    GenScenario {
        #[arg(long)]
        cavs: usize,
        #[arg(long)]
        rsus: usize,
        #[arg(long)]
        ncts: usize,
    },
    /// Play one market round with an allocator.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        allocator: AllocatorKind,
        #[command(flatten)]
        checkpoints: Checkpoints,
    },
    /// Train both policies.
    Train {
        /// Training config JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required = true)]
        scenario: Vec<PathBuf>,
        /// Replay a recorded merge log instead of scheduling.
        #[arg(long)]
        merge_log: Option<PathBuf>,
    },
    /// Argmax evaluation of trained checkpoints.
    Eval {
        #[command(flatten)]
        checkpoints: Checkpoints,
        #[arg(long)]
        scenario: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
    },
    /// Exhaustive optimum of one scenario.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = SearchCaps::default().max_targets)]
        max_targets: usize,
        #[arg(long, default_value_t = SearchCaps::default().max_templates)]
        max_templates: usize,
    },
}

type Overrides = Vec<(String, String)>;

fn policies(c: &Checkpoints) -> iscc::Result<(iscc::neural::PolicyParams, iscc::neural::PolicyParams)> {
    let need = |p: &Option<PathBuf>, role| {
        p.as_deref()
            .ok_or_else(|| iscc::Error::Config(format!("--{role} checkpoint is required")))
            .and_then(|p| commands::read_checkpoint(p, role))
    };
    Ok((need(&c.distributor, Role::Distributor)?, need(&c.purchaser, Role::Purchaser)?))
}

fn scenarios(paths: &[PathBuf], overrides: &Overrides) -> iscc::Result<Vec<Scenario>> {
    paths.iter().map(|p| commands::read_scenario(p, overrides)).collect()
}

fn emit(out: &Option<PathBuf>, outputs: &Outputs) -> iscc::Result<()> {
    let dir = out.as_deref().unwrap_or(Path::new("iscc-out"));
    commands::write_outputs(dir, outputs)?;
    for (name, _) in &outputs.files {
        println!("wrote {}", dir.join(name).display());
    }
    Ok(())
}

fn execute(cli: Cli) -> iscc::Result<()> {
    let g = cli.global;
    let overrides: Overrides = g.params.iter().map(|p| commands::parse_override(p)).collect::<iscc::Result<_>>()?;
    match cli.command {
        Command::GenScenario { cavs, rsus, ncts } => {
            let text = commands::gen_scenario(GenSpec { cavs, rsus, ncts, seed: g.seed.unwrap_or(0) }, &overrides)?;
            if g.out.is_some() {
                emit(&g.out, &Outputs { files: vec![("scenario.json".into(), text.into_bytes())] })?;
            } else {
                print!("{text}");
            }
        }
        Command::Run { scenario, allocator, checkpoints } => {
            let s = commands::read_scenario(&scenario, &overrides)?;
            let allocator = match allocator {
                AllocatorKind::Random => Allocator::Random,
                AllocatorKind::Greedy => Allocator::Greedy,
                AllocatorKind::Oracle => Allocator::Oracle,
                AllocatorKind::Policy => {
                    let (distributor, purchaser) = policies(&checkpoints)?;
                    Allocator::Policy { distributor, purchaser }
                }
            };
            let seed = g.seed.unwrap_or(s.rng_seed);
            emit(&g.out, &commands::run(&s, &allocator, seed)?)?;
        }
        Command::Train { config, scenario, merge_log } => {
            let (scenario_keys, config_keys): (Overrides, Overrides) =
                overrides.into_iter().partition(|(k, _)| k.starts_with("scenario."));
            let scenario_keys: Overrides =
                scenario_keys.into_iter().map(|(k, v)| (k["scenario.".len()..].to_string(), v)).collect();
            let mut cfg = commands::read_train_config(config.as_deref(), &config_keys)?;
            if let Some(seed) = g.seed {
                cfg.seed = seed;
            }
            let set = scenarios(&scenario, &scenario_keys)?;
            let log = merge_log.as_deref().map(commands::read_merge_log).transpose()?;
            emit(&g.out, &commands::train(&cfg, &set, log.as_deref())?)?;
        }
        Command::Eval { checkpoints, scenario, episodes } => {
            let (d, p) = policies(&checkpoints)?;
            let set = scenarios(&scenario, &overrides)?;
            emit(&g.out, &commands::eval(&d, &p, &set, episodes, g.seed.unwrap_or(0))?)?;
        }
        Command::Oracle { scenario, max_targets, max_templates } => {
            let mut s = commands::read_scenario(&scenario, &overrides)?;
            if let Some(seed) = g.seed {
                s.rng_seed = seed;
            }
            emit(&g.out, &commands::oracle(&s, SearchCaps { max_targets, max_templates })?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
