//! `msvl` — one binary for the whole pipeline: calibrate, validate,
//! reconstruct, graph, synth, train, evaluate, plot-roc, cube.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! fault. With `--json` each invocation prints exactly one JSON document on
//! stdout; otherwise a short human summary.

mod commands;
mod pipeline;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msvl::Error;

#[derive(Parser)]
#[command(
    name = "msvl",
    about = "Multispectral-view learning pipeline",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    /// Emit a single machine-readable JSON document instead of a summary.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads (also honored from MSVL_THREADS; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the Wiener-estimation transformation matrix from a patch CSV.
    Calibrate(CalibrateArgs),
    /// Score a fitted matrix against a holdout patch CSV.
    Validate(ValidateArgs),
    /// Reconstruct a 24-band cube from a PNG or PPM image.
    Reconstruct(ReconstructArgs),
    /// Build a cross-spectral graph, or inspect one with `graph info`.
    Graph(GraphArgs),
    /// Generate synthetic patch sets or fundus-like phantom datasets.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Train a classifier on a phantom dataset.
    Train(TrainArgs),
    /// Score a trained model on a dataset split and write the report.
    Evaluate(EvaluateArgs),
    /// Render ROC curves from one or more evaluation reports as SVG.
    PlotRoc(PlotRocArgs),
    /// Inspect spectral cube files.
    #[command(subcommand)]
    Cube(CubeCommand),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Training patch CSV (id,r,g,b,R450..R680).
    #[arg(long)]
    patches: PathBuf,
    /// Output matrix JSON.
    #[arg(long)]
    out: PathBuf,
    /// Ridge weight; defaults to 1e-6 * trace(R_cc) / cols.
    #[arg(long)]
    lambda: Option<f64>,
    /// Fit a 3+1 -> 24 map with a bias column.
    #[arg(long)]
    bias: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Holdout patch CSV.
    #[arg(long)]
    patches: PathBuf,
    /// Per-patch RMSE report CSV.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Input image (.png or .ppm).
    #[arg(long)]
    input: PathBuf,
    /// Output cube (.msc); metadata lands next to it as <out>.meta.json.
    #[arg(long)]
    out: PathBuf,
    /// Treat the 8-bit input as already linear instead of sRGB-encoded.
    #[arg(long)]
    no_srgb_decode: bool,
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
struct GraphArgs {
    #[command(subcommand)]
    action: Option<GraphAction>,
    /// ring, full, or jumper.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Chord step N (jumper only).
    #[arg(long)]
    step: Option<usize>,
    /// Keep the ring edges underneath the jumper chords.
    #[arg(long)]
    include_ring: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GraphAction {
    /// Print structural statistics of a topology file as JSON.
    Info { file: PathBuf },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Color-checker-style patch sets through the synthetic camera.
    Patches(SynthArgs),
    /// Two-class fundus-like phantom images plus a manifest.
    Fundus(SynthFundusArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Generator config JSON; omit for defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthFundusArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write ground-truth .msc cubes next to the images.
    #[arg(long)]
    emit_cubes: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory holding manifest.jsonl and images.
    #[arg(long)]
    data: PathBuf,
    /// rgb_baseline, single_band, or gnn_msvl.
    #[arg(long)]
    arch: String,
    /// View index for single_band.
    #[arg(long)]
    band: Option<usize>,
    /// Topology JSON for gnn_msvl.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Transformation matrix (needed to reconstruct cubes for spectral
    /// architectures).
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Training config JSON; omit for defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output weights file.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Split to score (train, val, or test).
    #[arg(long, default_value = "test")]
    split: String,
    /// Report JSON output path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Split the operating cutoff is derived from (Youden).
    #[arg(long, default_value = "val")]
    cutoff_from: String,
    /// Scores CSV of another model for a DeLong comparison.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Bootstrap resamples for the AUROC confidence interval.
    #[arg(long, default_value_t = 2000)]
    bootstrap: usize,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write this model's scores as CSV (id,score,label,group).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Write the ROC points as CSV.
    #[arg(long)]
    roc: Option<PathBuf>,
}

#[derive(Args)]
struct PlotRocArgs {
    /// Evaluation report JSON (repeatable).
    #[arg(long, required = true)]
    report: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum CubeCommand {
    /// Print cube dimensions and value statistics as JSON.
    Info { file: PathBuf },
}

/// A command's result: a human summary plus a machine document.
pub(crate) struct CommandOutput {
    pub summary: String,
    pub json: serde_json::Value,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NumericFault(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with exit 0.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let threads = cli.threads.or_else(|| {
        std::env::var("MSVL_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        // A failure here means a pool already exists, which only happens in
        // tests driving main() twice; the run stays correct either way.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let result = match cli.command {
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Validate(args) => commands::validate(args),
        Command::Reconstruct(args) => commands::reconstruct(args),
        Command::Graph(args) => commands::graph(args),
        Command::Synth(SynthCommand::Patches(args)) => commands::synth_patches(args),
        Command::Synth(SynthCommand::Fundus(args)) => commands::synth_fundus(args),
        Command::Train(args) => commands::train(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::PlotRoc(args) => commands::plot_roc(args),
        Command::Cube(CubeCommand::Info { file }) => commands::cube_info(file),
    };

    match result {
        Ok(output) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&output.json).expect("valid JSON"));
            } else {
                println!("{}", output.summary);
            }
            ExitCode::SUCCESS
        }
        Err(CliFailure::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliFailure::Run(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Distinguishes flag-level mistakes (exit 1) from data errors (exit 2/3).
pub(crate) enum CliFailure {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliFailure {
    fn from(err: Error) -> Self {
        CliFailure::Run(err)
    }
}

pub(crate) type CliResult = Result<CommandOutput, CliFailure>;
