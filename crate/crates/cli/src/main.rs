//! Command-line harness for the restoration pipeline. One flat config file
//! drives every stage; individual keys can be overridden with `--set`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure,
//! 4 training divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use satres_core::config::{validate_config, RunConfig};
use satres_core::degradations::synthetic_aerial;
use satres_core::error::Error;
use satres_core::image::save_image;
use satres_core::pipeline;

#[derive(Parser)]
#[command(
    name = "satres",
    about = "Restore a distorted satellite image from a single clean reference",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single config key, e.g. --set seed=9 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects KEY=VALUE, got `{kv}`"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        validate_config(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic (reference, distorted, ground-truth) triple.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Generate a procedural aerial-style clean image of this size
        /// instead of reading the `clean` config key.
        #[arg(long, value_name = "SIZE")]
        generate: Option<usize>,
        /// Degradation spec, e.g. "cast:0.8,1.1,0.8;blur:1.5;haze:0.7,0.9".
        #[arg(long)]
        degrade: Option<String>,
    },
    /// Step 1: train the distortion disentanglement networks.
    TrainDdn {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Step 1 -> 2: build the graded-distortion supervised dataset.
    Transfer {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Step 2: distill the restoration decoder over the dataset.
    TrainRestore {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Step 3: restore the distorted image with the distilled network.
    Restore {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare the restored output against the ground truth.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run all steps end-to-end (plus evaluation when a gt is configured).
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth {
            config,
            generate,
            degrade,
        } => {
            let mut cfg = config.load()?;
            if let Some(spec) = degrade {
                cfg.degrade = Some(spec);
            }
            if let Some(size) = generate {
                let out = cfg.out_dir();
                std::fs::create_dir_all(&out)?;
                let path = out.join("clean.png");
                save_image(&synthetic_aerial(size, size, cfg.seed), &path)?;
                println!("generated clean image: {}", path.display());
                cfg.clean = Some(path);
            }
            pipeline::stage_synth(&cfg)?;
            let paths = pipeline::StagePaths::new(&cfg);
            println!("synth outputs in {}", paths.synth_dir.display());
            Ok(())
        }
        Command::TrainDdn { config } => {
            let cfg = config.load()?;
            pipeline::stage_train_ddn(&cfg)?;
            let paths = pipeline::StagePaths::new(&cfg);
            println!("ddn checkpoint: {}", paths.ddn_final.display());
            Ok(())
        }
        Command::Transfer { config } => {
            let cfg = config.load()?;
            pipeline::stage_transfer(&cfg)?;
            let paths = pipeline::StagePaths::new(&cfg);
            println!("dataset: {}", paths.dataset_dir.display());
            Ok(())
        }
        Command::TrainRestore { config } => {
            let cfg = config.load()?;
            pipeline::stage_train_restore(&cfg)?;
            let paths = pipeline::StagePaths::new(&cfg);
            println!("restoration checkpoint: {}", paths.restore_final.display());
            Ok(())
        }
        Command::Restore { config } => {
            let cfg = config.load()?;
            let path = pipeline::stage_restore(&cfg)?;
            println!("restored image: {}", path.display());
            Ok(())
        }
        Command::Evaluate { config } => {
            let cfg = config.load()?;
            let report = pipeline::stage_evaluate(&cfg)?;
            print!("{}", report.to_csv());
            Ok(())
        }
        Command::Run { config } => {
            let cfg = config.load()?;
            let summary = pipeline::run(&cfg)?;
            println!("restored image: {}", summary.restored_png.display());
            if let Some(report) = summary.report {
                print!("{}", report.to_csv());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
