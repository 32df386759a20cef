//! Command-line front end. Each subcommand runs one pipeline stage (plus
//! any stale prerequisites); `evaluate` runs them all.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{validate_config, PipelineConfig};
use crate::cubical::{compute_persistence, filter_low_persistence, read_diagram_csv, save_diagram, write_diagram_csv};
use crate::error::{Error, ErrorCode, Result};
use crate::eval::write_summary_csv;
use crate::pimage::{diagram_image, save_image};
use crate::pipeline::Pipeline;
use crate::synth::{generate_cohort, PhantomSpec};
use crate::volume::{load_volume, patch_linear_index};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "localglobal", version, about = "Local-global 3D image classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Pipeline configuration (JSON); defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Overrides `cv.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the work directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report stage progress on stderr.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom cohort.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Normalise, smooth, downsample and crop every image.
    Preprocess(Common),
    /// Tile preprocessed images into patches.
    Patches(Common),
    /// Persistence diagrams for the cohort, or for one volume with `--in`.
    Ph {
        #[command(flatten)]
        common: Common,
        /// Single RVOL volume; writes its diagram CSV to `--out` or stdout.
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Persistence images for the cohort, or for one diagram CSV with `--in`.
    Pi {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Train patch models for every fold and run.
    TrainPatch {
        #[command(flatten)]
        common: Common,
        /// Linear index, or `i,j,k` block coordinates.
        #[arg(long, conflicts_with = "all")]
        patch_index: Option<String>,
        #[arg(long)]
        all: bool,
    },
    /// Train the persistence-image model for every fold and run.
    TrainPi(Common),
    /// Logistic regression over all patch models.
    EnsembleLr(Common),
    /// Sparse fusion of the P* and persistence-image encoders.
    EnsembleFusion(Common),
    /// Run the whole pipeline and write the metrics report.
    Evaluate(Common),
    /// Random hyperparameter search for the patch model.
    Search(Common),
}

fn exit_code(e: &Error) -> i32 {
    match e.code() {
        ErrorCode::Io => EXIT_INTERNAL,
        _ => EXIT_DATA,
    }
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(path) => validate_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.cv.seed = s;
    }
    if let Some(out) = &c.out {
        cfg.paths.work_dir = out.clone();
    }
    Ok(cfg)
}

fn pipeline(c: &Common) -> Result<Pipeline> {
    Ok(Pipeline::new(load_config(c)?, c.jobs)?.with_log(c.verbose))
}

fn parse_patch_index(text: &str, cfg: &PipelineConfig) -> Result<usize> {
    let bad = || Error::config("patch-index", format!("expected N or i,j,k, got {text:?}"));
    let parts: Vec<usize> = text.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
    let n = cfg.n_patches();
    let blocks = cfg.blocks();
    let p = match parts.as_slice() {
        [p] => *p,
        [i, j, k] if *i < blocks[0] && *j < blocks[1] && *k < blocks[2] => patch_linear_index(blocks, [*i, *j, *k]),
        _ => return Err(bad()),
    };
    if p >= n {
        return Err(Error::config("patch-index", format!("{p} outside 0..{n}")));
    }
    Ok(p)
}

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}")?;
    Ok(())
}

fn run(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Synth { spec, out: dir, jobs } => {
            if !spec.exists() {
                return Err(Error::MissingFile(spec));
            }
            let s: PhantomSpec = serde_json::from_str(&std::fs::read_to_string(&spec)?)
                .map_err(|e| Error::Parse(format!("{}: {e}", spec.display())))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| Error::param(e.to_string()))?;
            let recs = pool.install(|| generate_cohort(&s, &dir))?;
            let images: usize = recs.iter().map(|r| r.images.len()).sum();
            emit(out, &format!("wrote {} subjects, {images} images to {}", recs.len(), dir.display()))
        }
        Command::Preprocess(c) => pipeline(&c)?.preprocess().map(drop),
        Command::Patches(c) => pipeline(&c)?.patches().map(drop),
        Command::Ph { common, input: Some(input) } => {
            let cfg = load_config(&common)?;
            let v = load_volume(&input)?;
            let d = compute_persistence(&v, cfg.ph.mode, &cfg.ph.dims)?;
            match &common.out {
                Some(path) => save_diagram(&d, path),
                None => write_diagram_csv(&d, out),
            }
        }
        Command::Ph { common, input: None } => pipeline(&common)?.ph().map(drop),
        Command::Pi { common, input: Some(input) } => {
            let cfg = load_config(&common)?;
            let path = common
                .out
                .clone()
                .ok_or_else(|| Error::config("out", "pi --in needs --out for the image file"))?;
            if !input.exists() {
                return Err(Error::MissingFile(input));
            }
            let f = std::io::BufReader::new(std::fs::File::open(&input)?);
            let d = read_diagram_csv(f, cfg.ph.mode, [0, 0, 0])?;
            let d = filter_low_persistence(&d, cfg.ph.low_persistence_eps)?;
            save_image(&diagram_image(&d, cfg.ph.image_dim, &cfg.pi)?, path)
        }
        Command::Pi { common, input: None } => pipeline(&common)?.pi().map(drop),
        Command::TrainPatch { common, patch_index, all } => {
            let p = pipeline(&common)?;
            match (patch_index, all) {
                (Some(text), _) => p.train_patch(parse_patch_index(&text, p.config())?).map(drop),
                (None, true) => p.train_all_patches().map(drop),
                (None, false) => Err(Error::config("patch-index", "pass --patch-index or --all")),
            }
        }
        Command::TrainPi(c) => pipeline(&c)?.train_pi().map(drop),
        Command::EnsembleLr(c) => pipeline(&c)?.ensemble_lr().map(drop),
        Command::EnsembleFusion(c) => pipeline(&c)?.ensemble_fusion().map(drop),
        Command::Evaluate(c) => {
            let r = pipeline(&c)?.evaluate()?;
            write_summary_csv(&r.models, &mut *out)?;
            emit(out, &format!("p_star,{}", r.p_star.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")))
        }
        Command::Search(c) => {
            let r = pipeline(&c)?.search()?;
            emit(out, &format!("best_score,{}", r.best_score))?;
            for (k, v) in &r.best {
                emit(out, &format!("{k},{v}"))?;
            }
            Ok(())
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit code. Normal output goes to `out`, diagnostics to stderr.
pub fn run_command_with<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if informational { EXIT_OK } else { EXIT_USAGE };
        }
    };
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli.command, out)));
    match result {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(_) => EXIT_INTERNAL,
    }
}

pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_command_with(argv, &mut std::io::stdout().lock())
}
