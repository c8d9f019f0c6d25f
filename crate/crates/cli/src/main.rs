//! `cmb`: command-line front end for the microbleed pipeline.

mod commands;
mod config;
mod error;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use config::{Overrides, RunConfig};
use error::CliError;
use record::{Artifacts, RunRecord};

/// Environment variable holding the default worker count.
const JOBS_ENV: &str = "CMB_JOBS";

#[derive(Parser, Debug)]
#[command(
    name = "cmb",
    version,
    about = "Cerebral microbleed segmentation, detection and group statistics"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Scan manifest (JSON lines).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Root of every artifact the command writes.
    #[arg(long, short = 'o', global = true)]
    output: Option<PathBuf>,
    /// Directory of ground-truth masks named <scan_id>.nii.gz.
    #[arg(long, global = true)]
    mask_dir: Option<PathBuf>,
    /// Seed for every seeded stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fusion threshold τ.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Minimum CMB volume in mm³ for detection and group statistics.
    #[arg(long, global = true)]
    min_volume: Option<f64>,
    /// Segmenter kind for all three views: oracle, reference or external.
    #[arg(long, global = true)]
    segmenter: Option<String>,
    /// Config override KEY=VALUE with a dotted key, e.g. detect.connectivity="6".
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads [default: $CMB_JOBS, else all cores].
    #[arg(long, short = 'j', global = true)]
    jobs: Option<usize>,
    /// Log progress to stderr.
    #[arg(long, short = 'v', global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Generate synthetic phantoms with ground-truth masks and a manifest.
    Phantom,
    /// Grow volumetric masks from the manifest's point annotations.
    MaskSynth,
    /// Apply seeded augmentation to images and masks.
    Augment,
    /// Run the per-view slice segmenters.
    Segment,
    /// Fuse the three view probabilities and threshold at τ.
    Fuse,
    /// Label connected components of the predicted masks.
    Detect,
    /// Score predictions against ground truth and print the metrics table.
    Eval,
    /// Paired Wilcoxon and Fisher tests between case and control groups.
    CompareGroups,
    /// Fisher test across a sweep of size thresholds.
    Sweep,
    /// Split subjects into train, validation and test sets.
    Partition,
    /// Re-run a command from its run-record and check the output hashes.
    Replay {
        /// A run-record written under <output>/runs/.
        record: PathBuf,
    },
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Phantom => "phantom",
            Command::MaskSynth => "mask-synth",
            Command::Augment => "augment",
            Command::Segment => "segment",
            Command::Fuse => "fuse",
            Command::Detect => "detect",
            Command::Eval => "eval",
            Command::CompareGroups => "compare-groups",
            Command::Sweep => "sweep",
            Command::Partition => "partition",
            Command::Replay { .. } => "replay",
            Command::ShowConfig => "show-config",
        }
    }

    fn from_name(name: &str) -> Option<Command> {
        [
            Command::Phantom,
            Command::MaskSynth,
            Command::Augment,
            Command::Segment,
            Command::Fuse,
            Command::Detect,
            Command::Eval,
            Command::CompareGroups,
            Command::Sweep,
            Command::Partition,
        ]
        .into_iter()
        .find(|c| c.name() == name)
    }
}

fn resolve_jobs(flag: Option<usize>) -> Result<usize, CliError> {
    let jobs = match flag {
        Some(j) => j,
        None => match std::env::var(JOBS_ENV) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{JOBS_ENV}={s:?} is not a worker count")))?,
            Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        },
    };
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    Ok(jobs)
}

/// Runs a pipeline command and returns its artifacts and any text for stdout.
fn execute(command: &Command, cfg: &RunConfig) -> Result<(Artifacts, Option<String>), CliError> {
    Ok(match command {
        Command::Phantom => (commands::phantom(cfg)?, None),
        Command::MaskSynth => (commands::mask_synth(cfg)?, None),
        Command::Augment => (commands::augment(cfg)?, None),
        Command::Segment => (commands::segment(cfg)?, None),
        Command::Fuse => (commands::fuse(cfg)?, None),
        Command::Detect => (commands::detect(cfg)?, None),
        Command::Eval => {
            let (a, t) = commands::eval(cfg)?;
            (a, Some(t))
        }
        Command::CompareGroups => {
            let (a, t) = commands::compare(cfg)?;
            (a, Some(t))
        }
        Command::Sweep => {
            let (a, t) = commands::sweep(cfg)?;
            (a, Some(t))
        }
        Command::Partition => (commands::partition(cfg)?, None),
        Command::Replay { .. } | Command::ShowConfig => {
            return Err(CliError::Internal("not a pipeline command".into()));
        }
    })
}

fn run_recorded(command: &Command, cfg: &RunConfig, jobs: usize) -> Result<RunRecord, CliError> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| error::io_error(&cfg.output_dir, e))?;
    let (art, text) = execute(command, cfg)?;
    if let Some(t) = text {
        print!("{t}");
    }
    let rec = RunRecord::build(command.name(), cfg, jobs, &art)?;
    let path = rec.write()?;
    info!("run-record written to {}", path.display());
    Ok(rec)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    let jobs = resolve_jobs(c.jobs)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    match &cli.command {
        Command::Replay { record } => {
            let old = RunRecord::read(record)?;
            let command = Command::from_name(&old.command)
                .ok_or_else(|| CliError::Config(format!("record names unknown command {:?}", old.command)))?;
            old.config.validate()?;
            let new = run_recorded(&command, &old.config, jobs)?;
            let diff = old.differences(&new);
            if !diff.is_empty() {
                return Err(CliError::Internal(format!(
                    "replay of {} diverged: {}",
                    old.command,
                    diff.join(", ")
                )));
            }
            println!("replay of {} reproduced {} outputs", old.command, new.outputs.len());
            Ok(())
        }
        command => {
            let ov = Overrides {
                manifest: c.manifest.clone(),
                output_dir: c.output.clone(),
                mask_dir: c.mask_dir.clone(),
                seed: c.seed,
                tau: c.tau,
                min_volume_mm3: c.min_volume,
                segmenter: c.segmenter.clone(),
                set: c.set.clone(),
            };
            let cfg = RunConfig::load(c.config.as_deref(), &ov)?;
            cfg.validate()?;
            if let Command::ShowConfig = command {
                print!(
                    "{}",
                    toml::to_string(&cfg).map_err(|e| CliError::Internal(e.to_string()))?
                );
                return Ok(());
            }
            run_recorded(command, &cfg, jobs).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match std::panic::catch_unwind(move || run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("error: internal invariant violated");
            ExitCode::from(3)
        }
    }
}
