use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metricunet::pipeline::{ExperimentConfig, Profile, SweepParam, Workspace};

#[derive(Parser)]
#[command(name = "metricunet", version, about = "Two-stage segmentation with voxel-wise metric learning")]
struct Cli {
    /// JSON overrides merged over the profile defaults. Without it, a
    /// config.json left in the output directory by an earlier command is reused.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seeds data generation, splitting and both training stages.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_profile)]
    profile: Option<Profile>,
    /// Accepted for compatibility; every run is already deterministic.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true, default_value = "runs/default")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset and its manifest.
    GenData,
    /// Train the localization detector and report region containment.
    TrainStage1,
    /// Train the segmentation network on stage-2 regions.
    TrainStage2,
    /// Segment one volume; the mask is written on the resampled grid.
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score the trained model on the test split.
    Eval,
    /// Train and score every loss variant.
    Ablate,
    /// Vary one hyper-parameter at a time around the default experiment.
    Sweep {
        /// lambda, sigma or k; repeatable. All three when omitted.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<SweepParam>,
    },
    /// Markdown summary and contour overlays of the evaluated cases.
    Report,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_param(s: &str) -> Result<SweepParam, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn config(cli: &Cli) -> metricunet::Result<ExperimentConfig> {
    let saved = cli.out_dir.join("config.json");
    let cfg = match (&cli.config, saved.exists()) {
        (Some(path), _) => ExperimentConfig::load(path, cli.profile)?,
        (None, true) if cli.profile.is_none() => ExperimentConfig::load(&saved, None)?,
        _ => ExperimentConfig::for_profile(cli.profile.unwrap_or(Profile::Desk)),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> metricunet::Result<()> {
    let ws = Workspace::new(config(&cli)?, &cli.out_dir)?;
    match cli.command {
        Command::GenData => println!("manifest: {}", ws.gen_data()?.display()),
        Command::TrainStage1 => {
            let s = ws.train_stage1()?;
            println!("detector: {}", s.checkpoint.display());
            println!("ce {:.4} -> {:.4}, test containment {:.1}%", s.first_ce, s.last_ce, 100.0 * s.containment);
        }
        Command::TrainStage2 => {
            let s = ws.train_stage2()?;
            println!("model: {} (iteration {})", s.checkpoint.display(), s.selected_iter);
            println!("ce {:.4} -> {:.4}, {:.3} s/iter", s.first_ce, s.last_ce, s.mean_iter_seconds);
        }
        Command::Infer { input, output } => {
            let mask = ws.infer(&input, &output)?;
            println!("{}: {} foreground voxels -> {}", input.display(), mask.count(), output.display());
        }
        Command::Eval => {
            let s = ws.eval()?;
            println!("{} cases, mean DSC {:.4} -> {}", s.cases, s.mean_dsc, s.csv.display());
        }
        Command::Ablate => println!("{}", ws.ablate()?.display()),
        Command::Sweep { params } => {
            let params = if params.is_empty() { SweepParam::ALL.to_vec() } else { params };
            println!("{}", ws.sweep(&params)?.display());
        }
        Command::Report => println!("{}", ws.report()?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
