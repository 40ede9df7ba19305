use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use speckle_harness::{experiments, Experiment, ExperimentConfig, Result};

#[derive(Debug, Parser)]
#[command(name = "speckle", version, about = "Multilook speckle reconstruction experiments")]
struct Cli {
    /// `key = value` configuration file applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one setting; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Start from full-size defaults (128×128, 128 channels). Slow.
    #[arg(long, global = true)]
    paper_scale: bool,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a sensing matrix and looks of a scene.
    Simulate,
    /// Run projected gradient descent on simulated or saved looks.
    Reconstruct,
    /// Tracked, exact and frozen inverse updates inside the solver.
    NsCompare,
    /// Success rate of inverse refinement after a pixel jump.
    ThresholdStudy,
    /// PSNR over sampling ratios and look counts.
    ScalingStudy,
    /// Decoder fits to clean and noisy images.
    OverfitStudy,
    /// MSE, PSNR and SSIM between two images.
    Metrics {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
}

impl Command {
    fn experiment(&self) -> Experiment {
        match self {
            Self::Simulate => Experiment::Simulate,
            Self::Reconstruct => Experiment::Reconstruct,
            Self::NsCompare => Experiment::NsCompare,
            Self::ThresholdStudy => Experiment::ThresholdStudy,
            Self::ScalingStudy => Experiment::ScalingStudy,
            Self::OverfitStudy => Experiment::OverfitStudy,
            Self::Metrics { .. } => Experiment::Metrics,
        }
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let experiment = cli.command.experiment();
    let mut cfg = if cli.paper_scale {
        log::warn!("paper-scale defaults: runs may take hours");
        ExperimentConfig::paper_defaults(experiment)
    } else {
        ExperimentConfig::defaults(experiment)
    };
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Command::Metrics { estimate, reference } = &cli.command {
        cfg.estimate = Some(estimate.clone());
        cfg.reference = Some(reference.clone());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    match build_config(&cli).and_then(|cfg| experiments::run(&cfg)) {
        Ok(results) => {
            println!("{}", serde_json::to_string_pretty(&results).unwrap_or_else(|_| results.to_string()));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
