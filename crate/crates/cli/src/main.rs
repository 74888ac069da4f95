use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use motion_atlas::field::GridGeometry;
use motion_atlas::phantom::CohortSpec;
use motion_atlas_cli::config::RunConfig;
use motion_atlas_cli::manifest::Cohort;
use motion_atlas_cli::pipeline::{Run, Stage};
use motion_atlas_cli::{phantom_gen, report, CliError, Result};

#[derive(Parser)]
#[command(name = "motion-atlas", version, about = "Cohort motion atlases from tagged and cine volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic cohorts.
    Phantom {
        #[command(subcommand)]
        command: PhantomCommand,
    },
    /// Harmonic phase extraction from tagged volumes.
    Harp {
        #[command(subcommand)]
        command: HarpCommand,
    },
    /// Incompressible phase-based motion tracking.
    Pvira {
        #[command(subcommand)]
        command: PviraCommand,
    },
    /// Unbiased groupwise atlas from frame-0 cine volumes.
    Atlas {
        #[command(subcommand)]
        command: AtlasCommand,
    },
    /// Carry subject motion into atlas coordinates.
    Transport {
        #[command(subcommand)]
        command: TransportCommand,
    },
    /// Lagrangian strain and region statistics.
    Strain {
        #[command(subcommand)]
        command: StrainCommand,
    },
    /// Principal component models per frame label.
    Pca {
        #[command(subcommand)]
        command: PcaCommand,
    },
    /// All stages in order, with caching and a provenance record.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
    /// Tables and figures from a finished run directory.
    Report {
        /// Run directory.
        run: PathBuf,
    },
}

#[derive(Subcommand)]
enum PhantomCommand {
    Gen(GenArgs),
}

#[derive(Subcommand)]
enum HarpCommand {
    Extract(RunArgs),
}

#[derive(Subcommand)]
enum PviraCommand {
    Track(RunArgs),
}

#[derive(Subcommand)]
enum AtlasCommand {
    Build(RunArgs),
}

#[derive(Subcommand)]
enum TransportCommand {
    Apply(RunArgs),
}

#[derive(Subcommand)]
enum StrainCommand {
    Compute(RunArgs),
}

#[derive(Subcommand)]
enum PcaCommand {
    Fit(RunArgs),
}

#[derive(Subcommand)]
enum PipelineCommand {
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Cohort manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; overrides the manifest's `output`.
    #[arg(long)]
    run: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for volumes, `cohort.json` and `manifest.json`.
    #[arg(long)]
    out: PathBuf,
    /// Cohort description (JSON) to start from.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Run configuration whose seed drives the cohort.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    /// Grid size per axis (voxels).
    #[arg(long)]
    size: Option<usize>,
    /// Isotropic voxel spacing (mm).
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    /// Gaussian noise standard deviation relative to tag amplitude.
    #[arg(long)]
    noise: Option<f64>,
    /// Tag amplitude factor per frame.
    #[arg(long)]
    fade: Option<f64>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn cohort_spec(args: &GenArgs) -> Result<CohortSpec> {
    let mut c = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::validation(format!("cannot read cohort spec {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::validation(format!("cohort spec {}: {e}", p.display())))?
        }
        None => CohortSpec::default(),
    };
    let config = RunConfig::load_or_default(args.config.as_deref())?;
    c.phantom.seed = args.seed.unwrap_or(config.seed);
    if args.size.is_some() || args.spacing.is_some() {
        let n = args.size.unwrap_or(c.phantom.geometry.dims[0]);
        let h = args.spacing.unwrap_or(c.phantom.geometry.spacing[0]);
        c.phantom.geometry = GridGeometry::cube(n, h).map_err(|e| CliError::validation(format!("grid: {e}")))?;
    }
    if let Some(n) = args.subjects {
        c.subjects = n;
    }
    if let Some(t) = args.frames {
        c.phantom.frames = t;
    }
    if let Some(s) = args.noise {
        c.phantom.noise_sigma = s;
    }
    if let Some(f) = args.fade {
        c.phantom.fade = f;
    }
    Ok(c)
}

fn open(args: &RunArgs) -> Result<Run> {
    let cohort = Cohort::load(&args.manifest)?;
    let config = RunConfig::load_or_default(args.config.as_deref())?;
    Run::new(cohort, config, args.run.clone())
}

fn stage(args: &RunArgs, stage: Stage) -> Result<()> {
    let run = open(args)?;
    let outcome = run.execute(stage)?;
    println!("{}: {}", stage.name(), if outcome.cached { "cached" } else { "done" });
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { command: PhantomCommand::Gen(args) } => {
            let manifest = phantom_gen::generate(&args.out, &cohort_spec(&args)?)?;
            println!("{}", manifest.display());
            Ok(())
        }
        Command::Harp { command: HarpCommand::Extract(a) } => stage(&a, Stage::Harp),
        Command::Pvira { command: PviraCommand::Track(a) } => stage(&a, Stage::Pvira),
        Command::Atlas { command: AtlasCommand::Build(a) } => stage(&a, Stage::Atlas),
        Command::Transport { command: TransportCommand::Apply(a) } => stage(&a, Stage::Transport),
        Command::Strain { command: StrainCommand::Compute(a) } => stage(&a, Stage::Strain),
        Command::Pca { command: PcaCommand::Fit(a) } => stage(&a, Stage::Pca),
        Command::Pipeline { command: PipelineCommand::Run(a) } => {
            let run = open(&a)?;
            for o in run.run_all()? {
                println!("{}: {}", o.stage.name(), if o.cached { "cached" } else { "done" });
            }
            println!("{}", run.dir.display());
            Ok(())
        }
        Command::Report { run } => {
            if !run.is_dir() {
                return Err(CliError::validation(format!("run directory {} does not exist", run.display())));
            }
            for p in report::generate(&run)? {
                println!("{}", run.join(p).display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
