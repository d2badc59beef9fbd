use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use attractor_rl::commands::{self, Figure};
use attractor_rl::config::{Profile, RunConfig};
use attractor_rl::env::Direction;
use attractor_rl::sweep::Algorithm;

/// Attractor selection in the forced Duffing oscillator with CEM and DDPG.
#[derive(Parser)]
#[command(name = "attractor-rl", version)]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (overrides the config file).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Preset applied before the config file: default, paper or ci.
    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<Profile>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discover the two attractors and save the catalog.
    Catalog,
    /// Label the state grid with the oracle and train the basin classifier.
    Boa,
    /// Train a policy from scratch.
    Train {
        #[arg(value_parser = parse_algorithm)]
        algorithm: Algorithm,
        #[arg(value_parser = parse_direction)]
        direction: Direction,
        /// Action bound; defaults to the algorithm's configured bound.
        #[arg(long)]
        bound: Option<f64>,
    },
    /// Evaluate a saved policy with noise-free rollouts.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(value_parser = parse_direction)]
        direction: Direction,
        #[arg(long, default_value_t = 4.0)]
        bound: f64,
        /// Number of rollouts; defaults to `eval.rollouts`.
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Emit the data behind a figure: fig3 (CEM rollouts), fig4 (DDPG
    /// rollouts) or fig5 (learning curves).
    Reproduce {
        #[arg(value_parser = parse_figure)]
        figure: Figure,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: attractor_rl::Error| e.to_string())
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: attractor_rl::Error| e.to_string())
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse()
}

fn parse_figure(s: &str) -> Result<Figure, String> {
    s.parse().map_err(|e: attractor_rl::Error| e.to_string())
}

fn load_config(cli: &Cli) -> attractor_rl::Result<RunConfig> {
    let profile = cli.profile.unwrap_or_default();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path, profile)?,
        None => RunConfig::for_profile(profile),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> attractor_rl::Result<()> {
    match &cli.command {
        Command::Catalog => {
            let catalog = commands::cmd_catalog(cfg)?;
            print!("{}", commands::describe_catalog(&catalog));
            println!("catalog: {}", cfg.layout().catalog().display());
        }
        Command::Boa => {
            let fit = commands::cmd_boa(cfg)?;
            println!(
                "grid {}^3: {} train / {} held out",
                cfg.boa.resolution, fit.train_len, fit.test_len
            );
            println!("C = {}, gamma = {}", fit.model.c, fit.model.gamma);
            println!("held-out accuracy: {:.4}", fit.holdout_accuracy);
            println!("model: {}", cfg.layout().boa_model().display());
        }
        Command::Train {
            algorithm,
            direction,
            bound,
        } => {
            let s = commands::cmd_train(cfg, *algorithm, *direction, *bound)?;
            println!("episodes: {}", s.episodes_run);
            if let Some(r) = &s.last_eval {
                print!("{}", r.summary());
            }
            println!("policy: {}", s.policy_path.display());
            println!("curve: {}", s.curve_path.display());
        }
        Command::Eval {
            policy,
            direction,
            bound,
            rollouts,
        } => {
            let s = commands::cmd_eval(cfg, policy, *direction, *bound, *rollouts)?;
            print!("{}", s.report.summary());
            println!("oracle audit: {}/{} agree", s.audit.agreed, s.audit.checked);
            println!("report: {}", s.report_path.display());
        }
        Command::Reproduce { figure } => {
            let out = commands::cmd_reproduce(cfg, *figure)?;
            for (direction, bound, r) in &out.rollouts {
                println!(
                    "{} F={bound}: success {}, {} control steps, settled amplitude {:.3}",
                    direction.tag(),
                    r.success,
                    r.control_steps,
                    r.settle_amplitude
                );
            }
            for f in &out.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(w) = cfg.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
        {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let attractor_rl::Error::ClusterCount { .. } = e {
                eprintln!(
                    "hint: the parameters do not give a bistable system; check duffing.omega, duffing.gamma_f and duffing.beta"
                );
            }
            ExitCode::from(2)
        }
    }
}
