use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use camsim::cli::{load_config, run, CliError, Command, Inputs, PipelineConfig};

#[derive(Parser)]
#[command(name = "camsim", version, about = "Automotive camera simulation pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `master_seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Items processed concurrently within a stage [default: all cores].
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample scenes and write recipes plus a manifest.
    Assemble,
    /// Render recipes (default: those in <out>/recipes/manifest.json).
    Render { recipes: Vec<PathBuf> },
    /// Simulate sensors on spectral images (default: <out>/render/*.spim).
    Sensor {
        images: Vec<PathBuf>,
        /// Sensor spec file or builtin:<name>; repeatable.
        #[arg(long = "spec")]
        specs: Vec<String>,
    },
    /// Score detections against ground truth by distance.
    Evaluate {
        /// Detection file as NAME=PATH; repeatable.
        #[arg(long = "detections", value_parser = parse_named)]
        detections: Vec<(String, PathBuf)>,
        /// Ground-truth file (default: extracted from rendered metadata).
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Spectral images to extract ground truth from.
        images: Vec<PathBuf>,
    },
    /// Run every enabled stage in order.
    All,
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => Ok((PathBuf::from(s).file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), PathBuf::from(s))),
    }
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    let mut cfg = match &cli.global.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = cli.global.out {
        cfg.output_dir = o;
    }
    let jobs = cli
        .global
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }

    let mut inputs = Inputs::default();
    let command = match cli.command {
        Cmd::Assemble => Command::Assemble,
        Cmd::Render { recipes } => {
            inputs.recipes = recipes;
            Command::Render
        }
        Cmd::Sensor { images, specs } => {
            inputs.images = images;
            inputs.specs = specs;
            Command::Sensor
        }
        Cmd::Evaluate {
            detections,
            ground_truth,
            images,
        } => {
            inputs.detections = detections.into_iter().collect::<BTreeMap<_, _>>();
            inputs.ground_truth = ground_truth;
            inputs.images = images;
            Command::Evaluate
        }
        Cmd::All => Command::All,
    };

    let reports = run(command, &cfg, &inputs, jobs)?;
    let mut ok = true;
    for r in &reports {
        for line in &r.log {
            eprintln!("{line}");
        }
        print!("{}", r.summary);
        eprintln!("{}: {} outputs, {} failed", r.stage, r.outputs.len(), r.failures.len());
        for (item, msg) in &r.failures {
            eprintln!("  {item}: {msg}");
        }
        ok &= r.ok();
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("camsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
