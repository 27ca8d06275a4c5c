use std::path::PathBuf;
use std::process::ExitCode;

use attire_sentinel::commands::{self, EvalInputs};
use attire_sentinel::config::EngineConfig;
use attire_sentinel::error::Result;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

/// Attire anomaly surveillance over recorded detector output.
#[derive(Debug, Parser)]
#[command(name = "attire-sentinel", version)]
struct Cli {
    /// TOML configuration; omitted keys take the defaults listed below.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for every random draw (overrides `seed` in the config).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory (overrides `paths.out`).
    #[arg(long, global = true, value_name = "DIR", env = "ATTIRE_SENTINEL_OUT")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Process a frame stream and write alerts, per-frame records and
    /// annotated frames.
    Run(RunArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Train the toy detection head and write its loss curve.
    TrainToy(TrainArgs),
    /// Write color-jittered copies of PPM images.
    Augment(AugmentArgs),
    /// Print the default configuration as TOML.
    EmitDefaults,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Directory of YGT1 tensors: `<frame>.ygt` for people, `<frame>_<person>.ygt` for attire.
    #[arg(long, value_name = "DIR")]
    tensors: Option<PathBuf>,
    /// Directory holding `manifest.csv` and optional `<frame>.ppm` images.
    #[arg(long, value_name = "DIR")]
    frames: Option<PathBuf>,
    /// Scripted detections (`frame_id,class,cx,cy,w,h,score`) used instead of tensors.
    #[arg(long, value_name = "FILE")]
    annotations: Option<PathBuf>,
    /// Zone policy file (`zone_id: class,class`); replaces `[zones]`.
    #[arg(long, value_name = "FILE")]
    policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    predictions: PathBuf,
    #[arg(long, value_name = "FILE")]
    ground_truth: PathBuf,
    /// Another predictions file to report as its own row, as NAME=FILE.
    #[arg(long, value_name = "NAME=FILE", value_parser = parse_named)]
    baseline: Vec<(String, PathBuf)>,
    /// Alert log from `run`, for the false alarm rate.
    #[arg(long, value_name = "FILE", requires = "anomaly_frames")]
    alerts: Option<PathBuf>,
    /// Frame ids that truly contain an anomaly, one per line.
    #[arg(long, value_name = "FILE", requires = "alerts")]
    anomaly_frames: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    #[arg(long, value_name = "LR")]
    learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Directory of input PPM images.
    #[arg(long, value_name = "DIR")]
    frames: PathBuf,
    /// Variants per image (overrides `augment.count`).
    #[arg(long, value_name = "N")]
    count: Option<usize>,
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected NAME=FILE")?;
    if name.is_empty() || path.is_empty() {
        return Err("expected NAME=FILE".into());
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn execute(cli: Cli) -> Result<()> {
    if let Command::EmitDefaults = cli.command {
        print!("{}", EngineConfig::default().to_toml());
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(path) => EngineConfig::load(path)?,
        None => EngineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.paths.out = Some(out);
    }

    match cli.command {
        Command::Run(args) => {
            cfg.paths.tensors = args.tensors.or(cfg.paths.tensors);
            cfg.paths.frames = args.frames.or(cfg.paths.frames);
            cfg.paths.annotations = args.annotations.or(cfg.paths.annotations);
            cfg.paths.policy = args.policy.or(cfg.paths.policy);
            let summary = commands::cmd_run(&cfg)?;
            println!(
                "processed {} frames, {} alerts, {} annotated frames",
                summary.frames, summary.alerts, summary.annotated
            );
        }
        Command::Eval(args) => {
            let inputs = EvalInputs {
                predictions: args.predictions,
                ground_truth: args.ground_truth,
                baselines: args.baseline,
                alerts: args.alerts,
                anomaly_frames: args.anomaly_frames,
            };
            print!("{}", commands::cmd_eval(&cfg, &inputs)?.table);
        }
        Command::TrainToy(args) => {
            if let Some(e) = args.epochs {
                cfg.train.epochs = e;
            }
            if let Some(lr) = args.learning_rate {
                cfg.train.learning_rate = lr;
            }
            cfg.validate()?;
            let curve = commands::cmd_train_toy(&cfg)?;
            println!(
                "epochs {}: loss {:.6e} -> {:.6e}, ratio {:.6}",
                cfg.train.epochs,
                curve.initial(),
                curve.last(),
                curve.ratio()
            );
        }
        Command::Augment(args) => {
            let out = cfg.paths.out.clone().ok_or_else(|| {
                attire_sentinel::error::Error::InvariantViolation("augment needs an output directory".into())
            })?;
            let count = args.count.unwrap_or(cfg.augment.count);
            let log = commands::cmd_augment(&args.frames, &out, count, cfg.seed)?;
            println!("wrote {} images", log.len());
        }
        Command::EmitDefaults => unreachable!("handled before the config is read"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let defaults = format!(
        "Defaults (`emit-defaults` prints the same):\n\n{}",
        EngineConfig::default().to_toml()
    );
    let matches = Cli::command().after_long_help(defaults).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
