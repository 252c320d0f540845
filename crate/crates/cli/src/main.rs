use std::path::PathBuf;
use std::process::ExitCode;

use abstention_cli::commands::{cmd_evaluate, cmd_generate, cmd_reproduce, cmd_train};
use abstention_cli::config::{ExperimentConfig, ExperimentKind};
use abstention_cli::error::CliError;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "abstention",
    version,
    about = "Train regression networks that learn when to say \"I don't know\""
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigOpts {
    /// Experiment config file (TOML). Defaults come from --experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment name: oned, enso_pid, enso_const, corrupt.
    #[arg(long)]
    experiment: Option<String>,
    /// Override both the data and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: experiments/<experiment>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/val/test dataset files.
    Generate(ConfigOpts),
    /// Train the configured model ensembles on generated datasets.
    Train {
        #[command(flatten)]
        opts: ConfigOpts,
        /// Worker threads for ensemble members (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate run directories into tables and SVG figures.
    Evaluate {
        /// Output directory (default: <runs parent>/evaluate).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run directories produced by `train`.
        run_dirs: Vec<PathBuf>,
    },
    /// Generate + train + evaluate one experiment with its defaults.
    Reproduce {
        /// Experiment name: oned, enso_pid, enso_const, corrupt.
        experiment: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Print summary statistics of dataset files.
    Describe { files: Vec<PathBuf> },
}

fn resolve_config(opts: &ConfigOpts) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match (&opts.config, &opts.experiment) {
        (Some(path), _) => ExperimentConfig::from_toml_file(path)?,
        (None, Some(name)) => ExperimentConfig::defaults(ExperimentKind::parse(name)?),
        (None, None) => {
            return Err(CliError::usage("pass --config FILE or --experiment NAME"))
        }
    };
    if let Some(seed) = opts.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn out_dir(opts_out: &Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    opts_out
        .clone()
        .unwrap_or_else(|| PathBuf::from("experiments").join(cfg.experiment.as_str()))
}

fn default_jobs(jobs: Option<usize>) -> usize {
    jobs.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(opts) => {
            let cfg = resolve_config(&opts)?;
            let out = out_dir(&opts.out, &cfg);
            let generated = cmd_generate(&cfg, &out, opts.force)?;
            for file in generated.files {
                println!("{}", file.display());
            }
            Ok(())
        }
        Command::Train { opts, jobs } => {
            let cfg = resolve_config(&opts)?;
            let out = out_dir(&opts.out, &cfg);
            let trained = cmd_train(&cfg, &out, default_jobs(jobs), opts.force)?;
            for dir in &trained.run_dirs {
                println!("{}", dir.display());
            }
            if let Some((name, err)) = trained.failures.into_iter().next() {
                return Err(CliError::new(
                    err.kind,
                    format!("run {name} failed: {}", err.message),
                ));
            }
            Ok(())
        }
        Command::Evaluate { out, run_dirs } => {
            if run_dirs.is_empty() {
                return Err(CliError::usage("evaluate needs at least one run directory"));
            }
            let out = out.unwrap_or_else(|| {
                run_dirs[0]
                    .parent()
                    .and_then(std::path::Path::parent)
                    .map(|p| p.join("evaluate"))
                    .unwrap_or_else(|| PathBuf::from("evaluate"))
            });
            cmd_evaluate(&run_dirs, &out)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Reproduce {
            experiment,
            config,
            seed,
            out,
            jobs,
            force,
        } => {
            let opts = ConfigOpts {
                config,
                experiment: Some(experiment),
                seed,
                out,
                force,
            };
            let cfg = resolve_config(&opts)?;
            let out = out_dir(&opts.out, &cfg);
            let trained = cmd_reproduce(&cfg, &out, default_jobs(jobs), opts.force)?;
            println!("{}", out.display());
            if let Some((name, err)) = trained.failures.into_iter().next() {
                return Err(CliError::new(
                    err.kind,
                    format!("run {name} failed: {}", err.message),
                ));
            }
            Ok(())
        }
        Command::Describe { files } => {
            if files.is_empty() {
                return Err(CliError::usage("describe needs at least one dataset file"));
            }
            for file in files {
                print!("{}", abstention_cli::dataio::describe(&file)?);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::FAILURE
        }
    }
}
