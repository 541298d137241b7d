//! `eyeshift`: command suite for the sim-to-real eye-segmentation
//! pipeline. Stages read and write artifacts under the output root
//! (override with `EYESHIFT_OUTPUT_ROOT`) and record a run manifest each.
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 divergence.

use clap::{Args, Parser, Subcommand};
use eyeshift_core::pipeline::{
    run_pipeline, run_stage, PipelineConfig, PipelineError, Stage,
};
use eyeshift_core::segkit::SegMode;
use eyeshift_core::translate::TranslateMode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "eyeshift",
    version,
    about = "Sim-to-real domain adaptation pipeline: image translation, dataset filtering, and adversarial segmentation training"
)]
struct Cli {
    /// TOML config file with per-stage sections; flags override file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output root for all artifacts (also settable via EYESHIFT_OUTPUT_ROOT)
    #[arg(long, global = true)]
    output_root: Option<PathBuf>,

    /// Global seed propagated to every stage
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Re-run a stage even if its run manifest already exists
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Default)]
struct DataDirs {
    /// Synthetic (source-domain) dataset directory
    #[arg(long)]
    source: Option<PathBuf>,
    /// Real (target-domain) dataset directory
    #[arg(long)]
    target: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the procedural two-domain toy datasets
    Generate {
        /// Number of synthetic images
        #[arg(long)]
        source_count: Option<usize>,
        /// Number of real-domain images
        #[arg(long)]
        target_count: Option<usize>,
    },
    /// Train the unpaired image translator (CycleGAN or the
    /// structure-retaining variant)
    TrainTranslate {
        /// Translation objective: cgan or srcgan
        #[arg(long)]
        mode: Option<TranslateMode>,
        #[command(flatten)]
        dirs: DataDirs,
        /// Training epochs
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Translate a source dataset with a trained generator checkpoint
    Translate {
        /// Generator checkpoint file
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Source dataset directory
        #[arg(long)]
        source: Option<PathBuf>,
        /// Output dataset directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the Siamese domain-distance encoder with contrastive loss
    TrainSiamese {
        #[command(flatten)]
        dirs: DataDirs,
        /// Training epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// Sampled pairs per epoch
        #[arg(long)]
        pairs_per_epoch: Option<usize>,
    },
    /// Filter the translated dataset by embedding distance to the real
    /// centroid
    Filter {
        /// Siamese encoder checkpoint
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Dataset to filter (defaults to the translated set)
        #[arg(long)]
        input: Option<PathBuf>,
        /// Real dataset defining the centroid
        #[arg(long)]
        target: Option<PathBuf>,
        /// Keep samples with squared distance strictly below this value
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train the segmenter (plain or domain-adversarial) with k-fold
    /// validation on the real set
    TrainSeg {
        /// Training mode: ritnet or dann
        #[arg(long)]
        mode: Option<SegMode>,
        #[command(flatten)]
        dirs: DataDirs,
        /// Real images mixed into training batches
        #[arg(long)]
        n_real: Option<usize>,
        /// Cross-validation folds on the real set
        #[arg(long)]
        folds: Option<usize>,
        /// Training epochs (0 = published schedule)
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Compute distance and segmentation metrics into eval/metrics.json
    Evaluate {},
    /// Emit CSV tables, the mIoU plot, and the PCA domain scatter
    Report {},
    /// Run a range of stages in order
    Pipeline {
        /// First stage to run
        #[arg(long, default_value = "generate")]
        from: String,
        /// Last stage to run
        #[arg(long, default_value = "report")]
        to: String,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(root) = &cli.output_root {
        cfg.global.output_root = root.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.global.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<(), PipelineError> {
    let mut cfg = load_config(cli)?;
    let force = cli.force;
    match &cli.cmd {
        Cmd::Generate {
            source_count,
            target_count,
        } => {
            if let Some(n) = source_count {
                cfg.generate.source_count = *n;
            }
            if let Some(n) = target_count {
                cfg.generate.target_count = *n;
            }
            run_stage(&cfg, Stage::Generate, force)
        }
        Cmd::TrainTranslate { mode, dirs, epochs } => {
            if let Some(m) = mode {
                cfg.train_translate.mode = *m;
            }
            if let Some(e) = epochs {
                cfg.train_translate.epochs = *e;
            }
            apply_dirs(&mut cfg, dirs);
            run_stage(&cfg, Stage::TrainTranslate, force)
        }
        Cmd::Translate { ckpt, source, out } => {
            if let Some(p) = ckpt {
                cfg.paths.generator_ckpt = Some(p.clone());
            }
            if let Some(p) = source {
                cfg.paths.source = Some(p.clone());
            }
            if let Some(p) = out {
                cfg.paths.translated = Some(p.clone());
            }
            run_stage(&cfg, Stage::Translate, force)
        }
        Cmd::TrainSiamese {
            dirs,
            epochs,
            pairs_per_epoch,
        } => {
            if let Some(e) = epochs {
                cfg.train_siamese.epochs = *e;
            }
            if let Some(p) = pairs_per_epoch {
                cfg.train_siamese.pairs_per_epoch = *p;
            }
            apply_dirs(&mut cfg, dirs);
            run_stage(&cfg, Stage::TrainSiamese, force)
        }
        Cmd::Filter {
            ckpt,
            input,
            target,
            threshold,
        } => {
            if let Some(p) = ckpt {
                cfg.paths.siamese_ckpt = Some(p.clone());
            }
            if let Some(p) = input {
                cfg.paths.translated = Some(p.clone());
            }
            if let Some(p) = target {
                cfg.paths.target = Some(p.clone());
            }
            if let Some(t) = threshold {
                cfg.filter.threshold = *t;
            }
            run_stage(&cfg, Stage::Filter, force)
        }
        Cmd::TrainSeg {
            mode,
            dirs,
            n_real,
            folds,
            epochs,
        } => {
            if let Some(m) = mode {
                cfg.train_seg.mode = *m;
            }
            if let Some(n) = n_real {
                cfg.train_seg.n_real = *n;
            }
            if let Some(f) = folds {
                cfg.train_seg.folds = *f;
            }
            if let Some(e) = epochs {
                cfg.train_seg.epochs = *e;
            }
            // --source here means the synthetic training set, i.e. the
            // filtered-dataset slot
            if let Some(p) = &dirs.source {
                cfg.paths.filtered = Some(p.clone());
            }
            if let Some(p) = &dirs.target {
                cfg.paths.target = Some(p.clone());
            }
            run_stage(&cfg, Stage::TrainSeg, force)
        }
        Cmd::Evaluate {} => run_stage(&cfg, Stage::Evaluate, force),
        Cmd::Report {} => run_stage(&cfg, Stage::Report, force),
        Cmd::Pipeline { from, to } => {
            let from: Stage = from.parse()?;
            let to: Stage = to.parse()?;
            run_pipeline(&cfg, from, to, force)
        }
    }
}

fn apply_dirs(cfg: &mut PipelineConfig, dirs: &DataDirs) {
    if let Some(p) = &dirs.source {
        cfg.paths.source = Some(p.clone());
    }
    if let Some(p) = &dirs.target {
        cfg.paths.target = Some(p.clone());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
