//! `viewloom` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use viewloom_core::camera::TrajectoryKind;
use viewloom_core::pipeline::RemovalMode;
use viewloom_core::raster::CorpusName;
use viewloom_core::{CompletionError, Error};

#[derive(Parser, Debug)]
#[command(name = "viewloom", version, about = "Progressive novel-view synthesis and garment reconstruction")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Output directory (created if absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON reconstruction config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render RGBA + depth for one orbit view, a trajectory file, or the
    /// 12-view evaluation protocol.
    Render(RenderArgs),
    /// Write a camera schedule to traj.json.
    Trajectory(TrajectoryArgs),
    /// Reconstruct a colored point cloud and mesh from one anchor image.
    Reconstruct(ReconstructArgs),
    /// Remove and regenerate a masked region of an existing run.
    Edit(EditArgs),
    /// Compare a reconstruction against a ground-truth mesh.
    Eval(EvalArgs),
    /// Serve the completion wire protocol backed by a mesh oracle.
    ServeOracle(ServeArgs),
    /// Write a synthetic mesh, its anchor render and a default config.
    Demo(DemoArgs),
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Trajectory or camera list JSON.
    #[arg(long, conflicts_with_all = ["azimuth", "elevation", "protocol"])]
    pub views: Option<PathBuf>,
    /// The 12 evaluation cameras.
    #[arg(long)]
    pub protocol: bool,
    #[arg(long, allow_negative_numbers = true)]
    pub azimuth: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub elevation: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub res: Option<usize>,
    #[arg(long)]
    pub fov: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrajectoryArgs {
    #[arg(long)]
    pub kind: Option<TrajectoryKind>,
    #[arg(long)]
    pub degree: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub res: Option<usize>,
    #[arg(long)]
    pub inpaint: Option<usize>,
    #[arg(long)]
    pub start_negative: bool,
}

#[derive(Args, Debug, Clone)]
pub struct BackendArgs {
    /// `oracle`, `remote` (uses VIEWLOOM_BACKEND_URL) or `remote:URL`.
    #[arg(long)]
    pub backend: Option<String>,
    /// Ground-truth mesh for the oracle backend.
    #[arg(long)]
    pub gt_mesh: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// RGBA PNG; alpha is the foreground mask.
    #[arg(long)]
    pub anchor: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub traj: Option<PathBuf>,
    #[arg(long)]
    pub kind: Option<TrajectoryKind>,
    #[arg(long)]
    pub degree: Option<f64>,
    #[arg(long)]
    pub inpaint: Option<usize>,
    #[arg(long)]
    pub no_holes: bool,
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long)]
    pub no_outliers: bool,
    /// Skip writing mesh.ply.
    #[arg(long)]
    pub no_mesh: bool,
}

#[derive(Args, Debug)]
pub struct EditArgs {
    /// Run directory from `reconstruct`.
    #[arg(long)]
    pub run: PathBuf,
    /// Edited anchor image (RGBA PNG).
    #[arg(long)]
    pub edit_image: PathBuf,
    /// Region to regenerate (PNG, nonzero = inside).
    #[arg(long)]
    pub edit_mask: PathBuf,
    #[arg(long, default_value = "part")]
    pub mode: RemovalMode,
    /// Removal depth band; defaults to 3% of the cloud's bbox diagonal.
    #[arg(long)]
    pub thickness: Option<f64>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub no_mesh: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    /// Mesh PLY; a PLY without faces is compared as a point set.
    #[arg(long)]
    pub recon: PathBuf,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub res: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub gt_mesh: PathBuf,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[arg(long)]
    pub name: CorpusName,
    #[arg(long)]
    pub res: Option<usize>,
}

/// Failure carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(Error::Completion(c)) => match c {
                CompletionError::ContractViolation { .. }
                | CompletionError::ForegroundShrank { .. }
                | CompletionError::InvalidDepth { .. } => 4,
                CompletionError::InvalidRequest(_) => 2,
                _ => 3,
            },
            CliError::Core(_) => 2,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.global.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        })
        .parse_env("VIEWLOOM_LOG")
        .init();
    let g = &cli.global;
    let result = match &cli.command {
        Command::Render(a) => commands::render(g, a),
        Command::Trajectory(a) => commands::trajectory(g, a),
        Command::Reconstruct(a) => commands::reconstruct(g, a),
        Command::Edit(a) => commands::edit(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::ServeOracle(a) => commands::serve_oracle(g, a),
        Command::Demo(a) => commands::demo(g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
