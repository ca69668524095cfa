//! `idsx`: staged command-line driver for the intrusion-detection pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use idsx_core::config::{ClassSelector, FeatureSource, PipelineConfig};
use idsx_core::pipeline::{Pipeline, Stage};
use idsx_core::synth::{small_config, write_schema, write_table_csv, SyntheticSpec};
use idsx_core::{Error, ErrorKind};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

/// Output directory used when neither `--out` nor the config names one.
const DEFAULT_OUT: &str = "idsx-out";

#[derive(Parser, Debug)]
#[command(name = "idsx", version, about = "VAE + distillation + break-down attribution pipeline for tabular IDS data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load CSVs, split, and fit the preprocessor on the training rows.
    Preprocess(Common),
    /// Train the VAE on preprocessed training rows.
    TrainVae(Common),
    /// Train the teacher classifier.
    TrainTeacher(Common),
    /// Distill the student from the teacher.
    Distill(Common),
    /// Score teacher and student on the test split.
    Evaluate(Common),
    /// Break-down attributions for selected test rows.
    Explain(Common),
    /// CSV tables, parameter counts and inference timing.
    Report(Common),
    /// All stages in order.
    Run(Common),
    /// Write a seeded synthetic dataset with its schema and config.
    Synth(SynthArgs),
}

/// Flags shared by every pipeline stage. Flags override config values,
/// which override built-in defaults.
#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Class to explain, by name or index.
    #[arg(long)]
    target_class: Option<String>,
    /// Classifiers consume VAE latent codes.
    #[arg(long, conflicts_with = "raw")]
    latent: bool,
    /// Classifiers consume preprocessed raw features.
    #[arg(long)]
    raw: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    rows: usize,
    #[arg(long, default_value_t = 8)]
    features: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Comma-separated class names.
    #[arg(long, default_value = "normal,attack", value_delimiter = ',')]
    classes: Vec<String>,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => EXIT_USAGE,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Divergence => EXIT_DIVERGENCE,
    }
}

fn load_config(args: &Common) -> Result<(PipelineConfig, PathBuf), Error> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(f) = args.train_fraction {
        cfg.train_fraction = f;
    }
    if let Some(t) = &args.target_class {
        cfg.explain.target_class = Some(ClassSelector::parse(t));
    }
    if args.latent {
        cfg.feature_source = FeatureSource::Latent;
    }
    if args.raw {
        cfg.feature_source = FeatureSource::Raw;
    }
    let out = args.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    cfg.output_dir = Some(out.clone());
    Ok((cfg, out))
}

fn run_stages(args: &Common, stages: &[Stage]) -> Result<(), Error> {
    let (cfg, out) = load_config(args)?;
    let pipeline = Pipeline::new(cfg, out)?;
    for &stage in stages {
        pipeline.run_stage(stage)?;
        eprintln!("{stage}: ok");
    }
    eprintln!("artifacts in {}", pipeline.output_dir().display());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), Error> {
    let spec = SyntheticSpec {
        rows: args.rows,
        numeric_features: args.features,
        class_names: args.classes.clone(),
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    let table = spec.generate()?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_table_csv(&table, &args.out.join("data.csv"))?;
    write_schema(&table.schema, &args.out.join("schema.json"))?;
    let cfg = small_config(PathBuf::from("data.csv"), PathBuf::from("schema.json"));
    let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
    let path = args.out.join("config.json");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    eprintln!("wrote {} rows to {}", table.len(), args.out.display());
    Ok(())
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("LENS_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("LENS_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("cannot size thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Preprocess(a) => run_stages(a, &[Stage::Preprocess]),
        Command::TrainVae(a) => run_stages(a, &[Stage::TrainVae]),
        Command::TrainTeacher(a) => run_stages(a, &[Stage::TrainTeacher]),
        Command::Distill(a) => run_stages(a, &[Stage::Distill]),
        Command::Evaluate(a) => run_stages(a, &[Stage::Evaluate]),
        Command::Explain(a) => run_stages(a, &[Stage::Explain]),
        Command::Report(a) => run_stages(a, &[Stage::Report]),
        Command::Run(a) => run_stages(a, &Stage::ALL),
        Command::Synth(a) => synth(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
