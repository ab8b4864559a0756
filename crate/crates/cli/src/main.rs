use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use pedrisk_core::pipeline::{
    run_all, run_analyze, run_extract, run_report, run_segment, run_synth, run_track, CorpusKind,
    PipelineConfig, PipelineError,
};

/// Pedestrian risk analytics over roadside camera detections.
#[derive(Parser, Debug)]
#[command(name = "pedrisk", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON pipeline configuration; flags below override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Restrict to these spot ids (repeatable)
    #[arg(long = "spot", global = true)]
    spots: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 = all cores
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Distance before the crosswalk where approach speed is measured, meters
    #[arg(long, global = true)]
    baseline_m: Option<f64>,
    /// Acceleration dead-band, km/h per step
    #[arg(long, global = true)]
    epsilon_kmh: Option<f64>,
    /// Speed low-pass factor in (0, 1]
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    input_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct SynthArgs {
    #[arg(long, value_enum)]
    corpus: Option<Corpus>,
    /// Encounter multiplier for the study corpus
    #[arg(long)]
    scale: Option<f64>,
    /// Gaussian pixel noise sigma
    #[arg(long)]
    noise_px: Option<f64>,
    /// Per-detection drop probability
    #[arg(long)]
    drop_prob: Option<f64>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Corpus {
    Standard,
    Study,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus into the input directory
    Synth(SynthArgs),
    /// Motion-gate detections into segment files
    Segment,
    /// Track objects and split scenes
    Track,
    /// Compute per-scene features
    Extract,
    /// Aggregate features across spots
    Analyze,
    /// Write CSV tables and plot data
    Report,
    /// Run segment through report
    All {
        /// Generate the synthetic corpus first
        #[arg(long)]
        synth: bool,
        #[command(flatten)]
        synth_args: SynthArgs,
    },
}

fn build_config(global: &GlobalArgs, synth: Option<&SynthArgs>) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &global.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if !global.spots.is_empty() {
        cfg.spots = global.spots.clone();
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = global.workers {
        cfg.workers = workers;
    }
    if let Some(b) = global.baseline_m {
        cfg.analytics.baseline_m = b;
    }
    if let Some(e) = global.epsilon_kmh {
        cfg.features.epsilon_kmh = e;
    }
    if let Some(a) = global.alpha {
        cfg.features.alpha = a;
    }
    if let Some(dir) = &global.input_dir {
        cfg.input_dir = dir.clone();
    }
    if let Some(dir) = &global.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(s) = synth {
        if let Some(corpus) = s.corpus {
            cfg.synth.corpus = match corpus {
                Corpus::Standard => CorpusKind::Standard,
                Corpus::Study => CorpusKind::Study,
            };
        }
        if let Some(scale) = s.scale {
            cfg.synth.scale = scale;
        }
        if let Some(sigma) = s.noise_px {
            cfg.synth.noise_sigma_px = sigma;
        }
        if let Some(p) = s.drop_prob {
            cfg.synth.drop_prob = p;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let synth = match &cli.command {
        Command::Synth(args) => Some(args),
        Command::All { synth_args, .. } => Some(synth_args),
        _ => None,
    };
    let cfg = build_config(&cli.global, synth)?;
    match &cli.command {
        Command::Synth(_) => {
            run_synth(&cfg)?;
        }
        Command::Segment => {
            run_segment(&cfg)?;
        }
        Command::Track => {
            run_track(&cfg)?;
        }
        Command::Extract => {
            run_extract(&cfg)?;
        }
        Command::Analyze => {
            run_analyze(&cfg)?;
        }
        Command::Report => {
            run_report(&cfg)?;
        }
        Command::All { synth, .. } => {
            if *synth {
                run_synth(&cfg)?;
            }
            let files = run_all(&cfg)?;
            info!("wrote {} report files", files.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let diagnostic = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{diagnostic}");
            match e {
                PipelineError::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
