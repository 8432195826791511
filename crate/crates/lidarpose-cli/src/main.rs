//! Command-line front end for the probe-pose-initialization pipeline.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 degenerate
//! geometry, 4 registration failure, 5 internal solver error.

mod config;
mod manifest;
mod reproduce;
mod stages;

use clap::{Parser, Subcommand};
use config::PipelineConfig;
use lidarpose::registration::SexVariant;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lidarpose", version, about = "2D-LiDAR chest reconstruction and probe pose initialization")]
struct Cli {
    /// Pipeline configuration JSON; unset fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config (and scenario) seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap; default uses all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory receiving intermediate artifacts for inspection.
    #[arg(long, global = true)]
    debug_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic calibration + sweep dataset from a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate scanner-to-TCP extrinsics from a calibration dataset.
    Calibrate {
        /// Dataset directory (poses.csv, scans_pose_XX.csv, session.json).
        #[arg(long)]
        dataset: PathBuf,
        /// Output calibration report JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble sweep recordings into a base-frame cloud.
    Reconstruct {
        /// Sweeps directory (sweep_<i>/trajectory.csv + scans.csv).
        #[arg(long)]
        dataset: PathBuf,
        /// Calibration report JSON from `calibrate`.
        #[arg(long)]
        calibration: PathBuf,
        /// Output PLY cloud.
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean a raw cloud and resample it onto a fitted surface.
    Preprocess {
        /// Input PLY cloud.
        #[arg(long)]
        input: PathBuf,
        /// Output PLY cloud with normals.
        #[arg(long)]
        out: PathBuf,
        /// Sensor viewpoint "x,y,z" for normal orientation; defaults to the
        /// `<input>.viewpoint.json` sidecar, then above the centroid.
        #[arg(long)]
        viewpoint: Option<String>,
    },
    /// Match a chest template against a cleaned cloud, producing a probe pose.
    Match {
        /// Cleaned PLY cloud from `preprocess`.
        #[arg(long)]
        input: PathBuf,
        /// Directory with template.ply + template.json.
        #[arg(long, conflicts_with = "template")]
        template_dir: Option<PathBuf>,
        /// Built-in template variant.
        #[arg(long, value_enum)]
        template: Option<TemplateVariant>,
        #[arg(long)]
        viewpoint: Option<String>,
        /// Output probe pose JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a cloud against a reference and, optionally, a probe pose
    /// against the recorded ideal point.
    Eval {
        /// Cloud under evaluation (PLY).
        #[arg(long)]
        cloud: PathBuf,
        /// Reference surface cloud (PLY).
        #[arg(long)]
        reference: PathBuf,
        /// Probe pose JSON from `match`.
        #[arg(long)]
        probe: Option<PathBuf>,
        /// truth.json from `simulate`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Output evaluation JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full simulator study bundle (calibration sweep, surface
    /// accuracy, repeatability) and emit CSV + markdown reports.
    Reproduce {
        /// Output bundle directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, clap::ValueEnum)]
enum TemplateVariant {
    Male,
    Female,
}

impl From<TemplateVariant> for SexVariant {
    fn from(v: TemplateVariant) -> Self {
        match v {
            TemplateVariant::Male => SexVariant::Male,
            TemplateVariant::Female => SexVariant::Female,
        }
    }
}

fn exit_class(e: &lidarpose::Error) -> u8 {
    use lidarpose::Error::*;
    match e {
        RejectedInput(_) | FrameMismatch { .. } | NotEnoughData(_) | OutOfRange(_)
        | EmptyReconstruction | MissingNormals | Io(_) | Csv(_) | Parse(_) => 2,
        Degeneracy(_) | DegenerateScan(_) => 3,
        RegistrationFailure(_) | NoMatch => 4,
        Divergence(_) | SolverFailure(_) => 5,
    }
}

fn run(cli: Cli) -> lidarpose::Result<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref(), cli.seed)?;
    let debug_dir = cli.debug_dir.as_deref();
    match cli.command {
        Command::Simulate { scenario, out } => {
            stages::cmd_simulate(&scenario, &out, &cfg, cli.seed)
        }
        Command::Calibrate { dataset, out } => stages::cmd_calibrate(&dataset, &out, &cfg),
        Command::Reconstruct {
            dataset,
            calibration,
            out,
        } => stages::cmd_reconstruct(&dataset, &calibration, &out, &cfg),
        Command::Preprocess {
            input,
            out,
            viewpoint,
        } => stages::cmd_preprocess(&input, &out, viewpoint.as_deref(), &cfg, debug_dir),
        Command::Match {
            input,
            template_dir,
            template,
            viewpoint,
            out,
        } => stages::cmd_match(
            &stages::MatchArgs {
                input: &input,
                template_dir: template_dir.as_deref(),
                builtin: template.map(Into::into),
                viewpoint_flag: viewpoint.as_deref(),
                out: &out,
            },
            &cfg,
            debug_dir,
        ),
        Command::Eval {
            cloud,
            reference,
            probe,
            truth,
            out,
        } => stages::cmd_eval(
            &stages::EvalArgs {
                cloud: &cloud,
                reference: &reference,
                probe: probe.as_deref(),
                truth: truth.as_deref(),
                out: &out,
            },
            &cfg,
        ),
        Command::Reproduce { out } => reproduce::cmd_reproduce(&out, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // ignore "already built": tests may call run() repeatedly
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_class(&e))
        }
    }
}
