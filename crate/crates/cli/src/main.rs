use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use itemlab::config::RunConfig;
use itemlab::data::{NoiseKind, NoiseSpec};
use itemlab_cli::commands;
use itemlab_cli::manifest::ExperimentManifest;
use itemlab_cli::CliError;

#[derive(Parser)]
#[command(name = "itemlab", version, about = "Debiased sample selection under label noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (TOML with dotted keys).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate clean blob training and test CSVs.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Config file, as an alternative to --config.
        path: Option<PathBuf>,
    },
    /// Corrupt the labels of a dataset CSV.
    InjectNoise {
        #[command(flatten)]
        common: Common,
        /// Input dataset CSV.
        input: PathBuf,
        /// symmetric, pair or instance; overrides the config.
        #[arg(long)]
        kind: Option<NoiseKind>,
        /// Noise ratio; overrides the config.
        #[arg(long)]
        ratio: Option<f64>,
        /// Class count; inferred from labels when absent.
        #[arg(long)]
        class_count: Option<usize>,
    },
    /// Train one run.
    Train {
        #[command(flatten)]
        common: Common,
        /// Config file, as an alternative to --config.
        path: Option<PathBuf>,
    },
    /// Run every arm of a manifest for every seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Manifest file, as an alternative to --config.
        path: Option<PathBuf>,
        /// Parallel runs; overrides the manifest.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Merge metrics CSVs into one long-format series.
    Report {
        #[command(flatten)]
        common: Common,
        /// Metrics CSV files.
        inputs: Vec<PathBuf>,
    },
}

fn pick(flag: &Option<PathBuf>, positional: &Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
    match (flag, positional) {
        (Some(_), Some(_)) => Err(CliError::config("give the config either with --config or as a path, not both")),
        (Some(p), None) | (None, Some(p)) => Ok(Some(p.clone())),
        (None, None) => Ok(None),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { common, path } => {
            let cfg = load_config(pick(&common.config, &path)?.as_deref(), common.seed)?;
            commands::gen_data(&cfg, &common.out)?;
        }
        Command::InjectNoise {
            common,
            input,
            kind,
            ratio,
            class_count,
        } => {
            let cfg = load_config(common.config.as_deref(), common.seed)?;
            let base = cfg.noise_spec();
            let spec = NoiseSpec {
                kind: kind.unwrap_or(base.kind),
                ratio: ratio.unwrap_or(base.ratio),
                seed: base.seed,
            };
            let path = commands::inject_noise(&input, class_count, &spec, &common.out)?;
            println!("{}", path.display());
        }
        Command::Train { common, path } => {
            let cfg = load_config(pick(&common.config, &path)?.as_deref(), common.seed)?;
            let out = commands::train(&cfg, &common.out)?;
            println!(
                "final accuracy {:.4}, best {:.4}, macro selection F {:.4}",
                out.summary.final_test_accuracy, out.summary.best_test_accuracy, out.summary.final_macro_fscore
            );
        }
        Command::Ablate { common, path, jobs } => {
            let path = pick(&common.config, &path)?.ok_or_else(|| CliError::config("ablate needs a manifest"))?;
            let mut manifest = ExperimentManifest::load(&path)?;
            if let Some(s) = common.seed {
                manifest.seeds = vec![s];
            }
            if let Some(j) = jobs {
                manifest.jobs = j;
            }
            let table = commands::ablate(&manifest, &common.out)?;
            print!("{}", table.to_csv());
        }
        Command::Report { common, inputs } => {
            if common.config.is_some() || common.seed.is_some() {
                log::info!("report ignores --config and --seed");
            }
            let path = commands::report(&inputs, &common.out)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let level = match itemlab_cli::log_level(std::env::var("ITEM_LOG_LEVEL").ok().as_deref()) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
