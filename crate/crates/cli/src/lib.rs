//! `swiftface` command-line front end.
//!
//! Every subcommand is reachable through [`run`], which takes the argument
//! vector and output streams explicitly so the commands can be driven
//! in-process from tests.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

mod commands;
mod input;

pub use commands::{
    align_to_annotations, draw_detections, load_model, load_spec, run_images, DetectionRun, ImageResult, Model,
};
pub use input::{resolve_inputs, InputImage};

/// Exit status for a clean run.
pub const EXIT_OK: u8 = 0;
/// Bad flags or flag combinations.
pub const EXIT_USAGE: u8 = 1;
/// Unreadable or malformed inputs, or an invalid model.
pub const EXIT_DATA: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<swiftface::Error> for CliError {
    fn from(e: swiftface::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "swiftface",
    version,
    about = "Single-class face detector: detect, benchmark, evaluate"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run detection and write the detections JSON.
    Detect(DetectArgs),
    /// Time the full pipeline over a set of images and report FPS.
    Bench(RunArgs),
    /// Score a detections JSON against WIDER FACE style annotations.
    Eval(EvalArgs),
    /// Print the per-layer shape table.
    Shapes(ShapesArgs),
    /// Write a seeded random weights file.
    InitWeights(InitWeightsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Model config file, or `builtin`.
    #[arg(long, default_value = "builtin")]
    pub model: String,
    /// Weights file.
    #[arg(long, conflicts_with = "seed", required_unless_present = "seed")]
    pub weights: Option<PathBuf>,
    /// Use seeded random weights instead of a weights file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Image, directory of PPM/PGM files, or list file (one path per line).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = swiftface::detect::DEFAULT_CONF_THRESHOLD, value_parser = unit_interval)]
    pub conf: f32,
    #[arg(long, default_value_t = swiftface::detect::DEFAULT_NMS_THRESHOLD, value_parser = unit_interval)]
    pub nms: f32,
    /// Worker threads (default: all cores).
    #[arg(long, value_parser = positive)]
    pub threads: Option<usize>,
    /// Detections JSON output file (default: stdout for detect, none for bench).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Machine-readable report (bench only; detect always emits JSON).
    #[arg(long)]
    pub json: bool,
    /// Letterbox instead of stretching to the network input.
    #[arg(long)]
    pub letterbox: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Also write `<stem>_det.ppm` with red box outlines next to --out.
    #[arg(long, requires = "out")]
    pub draw: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Detections JSON as written by `detect`.
    #[arg(long)]
    pub input: PathBuf,
    /// Ground truth in the `wider_face_*_bbx_gt.txt` layout.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ShapesArgs {
    #[arg(long, default_value = "builtin")]
    pub model: String,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InitWeightsArgs {
    #[arg(long, default_value = "builtin")]
    pub model: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn unit_interval(s: &str) -> Result<f32, String> {
    let v: f32 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1)"))
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("`{s}` is not a positive integer")),
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Detect(args) => commands::detect(&args, stdout, stderr),
        Command::Bench(args) => commands::bench(&args, stdout, stderr),
        Command::Eval(args) => commands::eval(&args, stdout),
        Command::Shapes(args) => commands::shapes(&args, stdout),
        Command::InitWeights(args) => commands::init_weights(&args, stdout),
    }
}
