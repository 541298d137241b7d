//! End-to-end orchestration: a single TOML config drives the stage chain
//! generate -> train-translate -> translate -> train-siamese -> filter ->
//! train-seg -> evaluate -> report, with per-stage run manifests recording
//! config, seed, and content hashes of inputs and outputs.

use crate::datakit::{generate_dataset, load_dataset, save_dataset, DataError, Style};
use crate::evalkit::{emit_pca, emit_report, pca_project, EvalError, MetricsReport, MiouCell};
use crate::filterkit::{
    compute_centroid, embed_sample, filter_dataset, load_encoder, mean_distance,
    train_siamese, FilterError, SiameseTrainConfig,
};
use crate::losses::LossWeights;
use crate::nn::{
    DiscriminatorSpec, DomainClassifierSpec, GeneratorSpec, SegmenterSpec, SiameseEncoderSpec,
};
use crate::segkit::{train_segmenter, SegError, SegMode, SegTrainConfig};
use crate::translate::{
    train_translator, translate_dataset, TranslateConfig, TranslateError, TranslateMode,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("divergence: {0}")]
    Divergence(String),
}

impl PipelineError {
    /// Process exit code: 2 config error, 3 data error, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::Divergence(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Data(_) => "data",
            PipelineError::Divergence(_) => "divergence",
        }
    }

    /// Machine-readable error record for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

impl From<DataError> for PipelineError {
    fn from(e: DataError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<TranslateError> for PipelineError {
    fn from(e: TranslateError) -> Self {
        match e {
            TranslateError::Config(_) => PipelineError::Config(e.to_string()),
            TranslateError::Divergence { .. } => PipelineError::Divergence(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<FilterError> for PipelineError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Config(_) => PipelineError::Config(e.to_string()),
            FilterError::Divergence { .. } => PipelineError::Divergence(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<SegError> for PipelineError {
    fn from(e: SegError) -> Self {
        match e {
            SegError::Config(_) => PipelineError::Config(e.to_string()),
            SegError::Divergence { .. } => PipelineError::Divergence(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Data(format!("I/O error at {}: {e}", path.display()))
}

/// The fixed stage order of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Generate,
    TrainTranslate,
    Translate,
    TrainSiamese,
    Filter,
    TrainSeg,
    Evaluate,
    Report,
}

pub const STAGES: [Stage; 8] = [
    Stage::Generate,
    Stage::TrainTranslate,
    Stage::Translate,
    Stage::TrainSiamese,
    Stage::Filter,
    Stage::TrainSeg,
    Stage::Evaluate,
    Stage::Report,
];

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::TrainTranslate => "train-translate",
            Stage::Translate => "translate",
            Stage::TrainSiamese => "train-siamese",
            Stage::Filter => "filter",
            Stage::TrainSeg => "train-seg",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        STAGES
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                PipelineError::Config(format!(
                    "unknown stage '{s}'; expected one of {}",
                    STAGES.map(|s| s.name()).join(", ")
                ))
            })
    }
}

// ---------------------------------------------------------------------------
// Config sections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalSection {
    pub seed: u64,
    pub output_root: PathBuf,
    pub determinism: bool,
}

impl Default for GlobalSection {
    fn default() -> Self {
        GlobalSection {
            seed: 0,
            output_root: PathBuf::from("out"),
            determinism: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub source_count: usize,
    pub target_count: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            source_count: 8,
            target_count: 8,
            height: 64,
            width: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainTranslateSection {
    pub mode: TranslateMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub generator_width: usize,
    pub residual_blocks: usize,
    pub discriminator_width: usize,
    pub gamma_cyc: f64,
    pub gamma_id: f64,
    pub gamma_edge: f64,
    pub gamma_mean: f64,
    pub gamma_var: f64,
}

impl Default for TrainTranslateSection {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainTranslateSection {
            mode: TranslateMode::Srcgan,
            epochs: 1,
            batch_size: 2,
            learning_rate: 2e-4,
            generator_width: 8,
            residual_blocks: 2,
            discriminator_width: 8,
            gamma_cyc: w.gamma_cyc,
            gamma_id: w.gamma_id,
            gamma_edge: w.gamma_edge,
            gamma_mean: w.gamma_mean,
            gamma_var: w.gamma_var,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSiameseSection {
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub encoder_width: usize,
    pub latent_dim: usize,
}

impl Default for TrainSiameseSection {
    fn default() -> Self {
        TrainSiameseSection {
            epochs: 5,
            pairs_per_epoch: 500,
            margin: 1.0,
            learning_rate: 1e-3,
            encoder_width: 8,
            latent_dim: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub threshold: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection { threshold: 0.005 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSegSection {
    pub mode: SegMode,
    /// Synthetic training-set size; truncates the filtered set if smaller.
    pub m: usize,
    pub n_real: usize,
    /// `0` means "use the published schedule".
    pub epochs: usize,
    pub epoch_multiplier: f64,
    pub batch_size: usize,
    pub folds: usize,
    pub learning_rate: f64,
    pub segmenter_width: usize,
    pub grl_scale: f64,
    /// Ramp the reversal scale linearly from 0 to `grl_scale` over training.
    pub grl_ramp: bool,
    /// Fall back to the unfiltered translated set when filtering removed
    /// every sample.
    pub fallback_to_translated: bool,
}

impl Default for TrainSegSection {
    fn default() -> Self {
        TrainSegSection {
            mode: SegMode::Ritnet,
            m: 8,
            n_real: 0,
            epochs: 1,
            epoch_multiplier: 1.0,
            batch_size: 2,
            folds: 3,
            learning_rate: 1e-3,
            segmenter_width: 4,
            grl_scale: 1.0,
            grl_ramp: false,
            fallback_to_translated: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Fit the PCA scatter on both domains jointly (config option: target
    /// only).
    pub pca_joint: bool,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { pca_joint: true }
    }
}

/// Optional explicit artifact locations; each one overrides the default
/// layout under the output root (command-line flags land here too).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub translated: Option<PathBuf>,
    pub filtered: Option<PathBuf>,
    pub generator_ckpt: Option<PathBuf>,
    pub siamese_ckpt: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub global: GlobalSection,
    pub paths: PathsSection,
    pub generate: GenerateSection,
    pub train_translate: TrainTranslateSection,
    pub train_siamese: TrainSiameseSection,
    pub filter: FilterSection,
    pub train_seg: TrainSegSection,
    pub evaluate: EvaluateSection,
    pub report: ReportSection,
}

impl PipelineConfig {
    /// Parse from a TOML string; unknown keys are validation errors.
    pub fn from_toml(body: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            toml::from_str(body).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let body = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&body)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.generate.source_count == 0 || self.generate.target_count == 0 {
            return Err(PipelineError::Config(
                "generate.source_count and generate.target_count must be >= 1".into(),
            ));
        }
        if self.generate.height % 32 != 0 || self.generate.width % 32 != 0 {
            return Err(PipelineError::Config(
                "generate.height and generate.width must be divisible by 32".into(),
            ));
        }
        if !(self.filter.threshold > 0.0) {
            return Err(PipelineError::Config("filter.threshold must be > 0".into()));
        }
        if self.train_seg.folds < 2 {
            return Err(PipelineError::Config("train_seg.folds must be >= 2".into()));
        }
        Ok(())
    }

    /// Output root, with the environment override applied.
    pub fn root(&self) -> PathBuf {
        match std::env::var_os("EYESHIFT_OUTPUT_ROOT") {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.global.output_root.clone(),
        }
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            gamma_cyc: self.train_translate.gamma_cyc,
            gamma_id: self.train_translate.gamma_id,
            gamma_edge: self.train_translate.gamma_edge,
            gamma_mean: self.train_translate.gamma_mean,
            gamma_var: self.train_translate.gamma_var,
            grl_scale: self.train_seg.grl_scale,
            ..LossWeights::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Artifact layout and run manifests
// ---------------------------------------------------------------------------

/// Canonical artifact paths under the output root, with per-path
/// overrides from the `[paths]` config section.
pub struct Layout {
    pub root: PathBuf,
    paths: PathsSection,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
            paths: PathsSection::default(),
        }
    }
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Layout {
            root: cfg.root(),
            paths: cfg.paths.clone(),
        }
    }
    fn at(&self, over: &Option<PathBuf>, default: &str) -> PathBuf {
        over.clone().unwrap_or_else(|| self.root.join(default))
    }
    pub fn source(&self) -> PathBuf {
        self.at(&self.paths.source, "data/source")
    }
    pub fn target(&self) -> PathBuf {
        self.at(&self.paths.target, "data/target")
    }
    pub fn translated(&self) -> PathBuf {
        self.at(&self.paths.translated, "data/translated")
    }
    pub fn filtered(&self) -> PathBuf {
        self.at(&self.paths.filtered, "data/filtered")
    }
    pub fn translate_dir(&self) -> PathBuf {
        self.root.join("translate")
    }
    pub fn generator_ckpt(&self) -> PathBuf {
        self.at(&self.paths.generator_ckpt, "translate/g_sr.ckpt")
    }
    pub fn siamese_ckpt(&self) -> PathBuf {
        self.at(&self.paths.siamese_ckpt, "siamese/siamese.ckpt")
    }
    pub fn filter_report(&self) -> PathBuf {
        self.filtered().join("filter_report.json")
    }
    pub fn seg_dir(&self) -> PathBuf {
        self.root.join("seg")
    }
    pub fn seg_metrics(&self) -> PathBuf {
        self.root.join("seg/metrics.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("eval/metrics.json")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn manifest(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("runs/{}.json", stage.name()))
    }
}

/// Record of one completed stage run: config echo, seed, content hashes of
/// declared inputs and outputs, and wall time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_secs: f64,
}

fn hash_file(path: &Path, hasher: &mut Sha256) -> Result<(), PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    hasher.update(&bytes);
    Ok(())
}

/// SHA-256 over a file, or over the sorted (relative path, content) stream
/// of a directory.
pub fn content_hash(path: &Path) -> Result<String, PipelineError> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            hasher.update(rel.as_bytes());
            hash_file(&path.join(&rel), &mut hasher)?;
        }
    } else {
        hash_file(path, &mut hasher)?;
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn collect_files(base: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), PipelineError> {
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let p = entry.path();
        if p.is_dir() {
            collect_files(base, &p, out)?;
        } else {
            out.push(
                p.strip_prefix(base)
                    .unwrap()
                    .to_string_lossy()
                    .replace('\\', "/"),
            );
        }
    }
    Ok(())
}

fn hash_map(paths: &[PathBuf]) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    for p in paths {
        out.insert(p.to_string_lossy().into_owned(), content_hash(p)?);
    }
    Ok(out)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Data(format!("serialization: {e}")))?;
    std::fs::write(path, body.as_bytes()).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Stage execution
// ---------------------------------------------------------------------------

/// Inputs each stage consumes, used both for dangling-artifact checks and
/// for manifest hashing.
fn stage_inputs(layout: &Layout, stage: Stage) -> Vec<PathBuf> {
    match stage {
        Stage::Generate => vec![],
        Stage::TrainTranslate => vec![layout.source(), layout.target()],
        Stage::Translate => vec![layout.generator_ckpt(), layout.source()],
        Stage::TrainSiamese => vec![layout.source(), layout.target()],
        Stage::Filter => vec![
            layout.siamese_ckpt(),
            layout.translated(),
            layout.target(),
        ],
        Stage::TrainSeg => vec![layout.filtered(), layout.target()],
        Stage::Evaluate => vec![
            layout.seg_metrics(),
            layout.siamese_ckpt(),
            layout.source(),
            layout.translated(),
            layout.filtered(),
            layout.target(),
        ],
        Stage::Report => vec![layout.metrics(), layout.siamese_ckpt()],
    }
}

fn stage_outputs(layout: &Layout, stage: Stage) -> Vec<PathBuf> {
    match stage {
        Stage::Generate => vec![layout.source(), layout.target()],
        Stage::TrainTranslate => vec![layout.translate_dir()],
        Stage::Translate => vec![layout.translated()],
        Stage::TrainSiamese => vec![layout.siamese_ckpt()],
        Stage::Filter => vec![layout.filtered()],
        Stage::TrainSeg => vec![layout.seg_dir()],
        Stage::Evaluate => vec![layout.metrics()],
        Stage::Report => vec![layout.report_dir()],
    }
}

fn stage_config_echo(cfg: &PipelineConfig, stage: Stage) -> serde_json::Value {
    fn v<T: Serialize>(s: &T) -> serde_json::Value {
        serde_json::to_value(s).unwrap_or(serde_json::Value::Null)
    }
    match stage {
        Stage::Generate => v(&cfg.generate),
        Stage::TrainTranslate => v(&cfg.train_translate),
        Stage::Translate => v(&cfg.train_translate),
        Stage::TrainSiamese => v(&cfg.train_siamese),
        Stage::Filter => v(&cfg.filter),
        Stage::TrainSeg => v(&cfg.train_seg),
        Stage::Evaluate => v(&cfg.evaluate),
        Stage::Report => v(&cfg.report),
    }
}

/// Summary metrics of one full run; serialized as the final
/// `eval/metrics.json`. Contains no paths or timings so that identical
/// seeds give byte-identical files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PipelineMetrics {
    pub seed: u64,
    pub mu_d_raw: f64,
    pub mu_d_translated: f64,
    pub mu_d_filtered: Option<f64>,
    pub filter_kept: usize,
    pub filter_total: usize,
    pub seg_fold_miou: Vec<f64>,
    pub seg_miou_mean: f64,
    pub seg_miou_std: f64,
}

fn run_generate(cfg: &PipelineConfig, layout: &Layout) -> Result<(), PipelineError> {
    let dims = (cfg.generate.height, cfg.generate.width);
    generate_dataset(
        &layout.source(),
        cfg.generate.source_count,
        Style::SyntheticLike,
        cfg.global.seed,
        dims,
    )?;
    generate_dataset(
        &layout.target(),
        cfg.generate.target_count,
        Style::RealLike,
        cfg.global.seed.wrapping_add(1),
        dims,
    )?;
    Ok(())
}

fn translate_config(cfg: &PipelineConfig) -> TranslateConfig {
    let t = &cfg.train_translate;
    TranslateConfig {
        mode: t.mode,
        weights: cfg.weights(),
        learning_rate: t.learning_rate,
        betas: (0.5, 0.999),
        batch_size: t.batch_size,
        epochs: t.epochs,
        seed: cfg.global.seed,
        checkpoint_every: 0,
        generator: GeneratorSpec {
            width: t.generator_width,
            residual_blocks: t.residual_blocks,
            ..GeneratorSpec::default()
        },
        discriminator: DiscriminatorSpec {
            width: t.discriminator_width,
            input_hw: (cfg.generate.height, cfg.generate.width),
            ..DiscriminatorSpec::default()
        },
    }
}

fn run_train_translate(cfg: &PipelineConfig, layout: &Layout) -> Result<(), PipelineError> {
    let source = load_dataset(&layout.source())?;
    let target = load_dataset(&layout.target())?;
    train_translator(&source, &target, &translate_config(cfg), &layout.translate_dir())?;
    Ok(())
}

fn run_translate(cfg: &PipelineConfig, layout: &Layout) -> Result<(), PipelineError> {
    let _ = cfg;
    let source = load_dataset(&layout.source())?;
    translate_dataset(&layout.generator_ckpt(), &source, &layout.translated())?;
    Ok(())
}

fn siamese_config(cfg: &PipelineConfig) -> SiameseTrainConfig {
    let s = &cfg.train_siamese;
    SiameseTrainConfig {
        encoder: SiameseEncoderSpec {
            width: s.encoder_width,
            latent_dim: s.latent_dim,
            ..SiameseEncoderSpec::default()
        },
        epochs: s.epochs,
        pairs_per_epoch: s.pairs_per_epoch,
        margin: s.margin,
        learning_rate: s.learning_rate,
        seed: cfg.global.seed,
    }
}

fn run_train_siamese(cfg: &PipelineConfig, layout: &Layout) -> Result<(), PipelineError> {
    let source = load_dataset(&layout.source())?;
    let target = load_dataset(&layout.target())?;
    let dir = layout.siamese_ckpt();
    let dir = dir.parent().unwrap();
    train_siamese(&source, &target, &siamese_config(cfg), dir)?;
    Ok(())
}

fn run_filter(cfg: &PipelineConfig, layout: &Layout) -> Result<(), PipelineError> {
    let (encoder, _) = load_encoder(&layout.siamese_ckpt())?;
    let target = load_dataset(&layout.target())?;
    let translated = load_dataset(&layout.translated())?;
    let centroid = compute_centroid(
        &encoder,
        &target,
        &layout.siamese_ckpt().to_string_lossy(),
    )?;
    let (filtered, report) =
        filter_dataset(&encoder, &translated, &centroid, cfg.filter.threshold)?;
    if filtered.is_empty() {
        // keep the stage alive for downstream fallback: emit the report
        // but no dataset
        std::fs::create_dir_all(layout.filtered())
            .map_err(|e| io_err(&layout.filtered(), e))?;
    } else {
        save_dataset(
            &layout.filtered(),
            &filtered.samples,
            filtered.manifest.domain,
        )?;
    }
    write_json(&layout.filter_report(), &report)?;
    Ok(())
}

/// Pick the synthetic training set for segmentation: the filtered set, or
/// the unfiltered translated set when filtering kept nothing and fallback
/// is enabled.
fn seg_source(cfg: &PipelineConfig, layout: &Layout) -> Result<crate::datakit::Dataset, PipelineError> {
    match load_dataset(&layout.filtered()) {
        Ok(d) if !d.is_empty() => Ok(d),
        _ if cfg.train_seg.fallback_to_translated => Ok(load_dataset(&layout.translated())?),
        Ok(_) => Err(PipelineError::Data(
            "filtered dataset is empty and fallback_to_translated is off".into(),
        )),
        Err(e) => Err(e.into()),
    }
}

fn seg_config(cfg: &PipelineConfig) -> SegTrainConfig {
    let s = &cfg.train_seg;
    SegTrainConfig {
        mode: s.mode,
        m: s.m,
        n_real: s.n_real,
        epochs: if s.epochs == 0 { None } else { Some(s.epochs) },
        epoch_multiplier: s.epoch_multiplier,
        batch_size: s.batch_size,
        weights: cfg.weights(),
        grl_ramp: s.grl_ramp,
        folds: s.folds,
        seed: cfg.global.seed,
        learning_rate: s.learning_rate,
        bal_beta: 10.0,
        segmenter: SegmenterSpec {
            width: s.segmenter_width,
            ..SegmenterSpec::default()
        },
        domain_head: DomainClassifierSpec {
            input_dim: (s.segmenter_width << 4)
                * (cfg.generate.height / 32)
                * (cfg.generate.width / 32),
            hidden: [16, 16, 8, 8],
        },
    }
}

fn run_train_seg(cfg: &PipelineConfig, layout: &Layout) -> Result<(), PipelineError> {
    let source = seg_source(cfg, layout)?;
    let target = load_dataset(&layout.target())?;
    let outcome = train_segmenter(&source, &target, &seg_config(cfg), &layout.seg_dir())?;
    write_json(&layout.seg_metrics(), &outcome)?;
    Ok(())
}

fn run_evaluate(cfg: &PipelineConfig, layout: &Layout) -> Result<(), PipelineError> {
    let (encoder, _) = load_encoder(&layout.siamese_ckpt())?;
    let target = load_dataset(&layout.target())?;
    let source = load_dataset(&layout.source())?;
    let translated = load_dataset(&layout.translated())?;
    let centroid = compute_centroid(
        &encoder,
        &target,
        &layout.siamese_ckpt().to_string_lossy(),
    )?;
    let mu_d_raw = mean_distance(&encoder, &source, &centroid)?;
    let mu_d_translated = mean_distance(&encoder, &translated, &centroid)?;
    let mu_d_filtered = match load_dataset(&layout.filtered()) {
        Ok(d) if !d.is_empty() => Some(mean_distance(&encoder, &d, &centroid)?),
        _ => None,
    };
    let seg_body = std::fs::read_to_string(layout.seg_metrics())
        .map_err(|e| io_err(&layout.seg_metrics(), e))?;
    let seg: crate::segkit::SegOutcome = serde_json::from_str(&seg_body)
        .map_err(|e| PipelineError::Data(format!("cannot parse seg metrics: {e}")))?;
    let filter_body = std::fs::read_to_string(layout.filter_report()).unwrap_or_default();
    let filter: crate::filterkit::FilterReport = serde_json::from_str(&filter_body)
        .unwrap_or(crate::filterkit::FilterReport {
            kept: 0,
            total: 0,
            threshold: cfg.filter.threshold,
            empty_warning: false,
        });
    let metrics = PipelineMetrics {
        seed: cfg.global.seed,
        mu_d_raw,
        mu_d_translated,
        mu_d_filtered,
        filter_kept: filter.kept,
        filter_total: filter.total,
        seg_fold_miou: seg.fold_metrics.iter().map(|f| f.val_miou).collect(),
        seg_miou_mean: seg.miou_mean,
        seg_miou_std: seg.miou_std,
    };
    write_json(&layout.metrics(), &metrics)?;
    Ok(())
}

fn run_report(cfg: &PipelineConfig, layout: &Layout) -> Result<(), PipelineError> {
    let body = std::fs::read_to_string(layout.metrics())
        .map_err(|e| io_err(&layout.metrics(), e))?;
    let metrics: PipelineMetrics = serde_json::from_str(&body)
        .map_err(|e| PipelineError::Data(format!("cannot parse metrics: {e}")))?;
    let m = cfg.train_seg.m;
    let n = cfg.train_seg.n_real;
    let report = MetricsReport {
        dataset: "pipeline".into(),
        cells: vec![MiouCell {
            m,
            n,
            mean: metrics.seg_miou_mean,
            std: metrics.seg_miou_std,
        }],
        mmiou_mean: Some(metrics.seg_miou_mean),
        mmiou_std: Some(metrics.seg_miou_std),
        mu_d: Some(metrics.mu_d_translated),
        folds: metrics.seg_fold_miou.len(),
    };
    emit_report(&[report], &layout.report_dir())?;

    // PCA scatter of source vs target embeddings
    let (encoder, _) = load_encoder(&layout.siamese_ckpt())?;
    let target = load_dataset(&layout.target())?;
    let source = load_dataset(&layout.source())?;
    let mut embeddings = Vec::new();
    let mut domains = Vec::new();
    if cfg.report.pca_joint {
        for s in &source.samples {
            embeddings.push(embed_sample(&encoder, s)?);
            domains.push("source".to_string());
        }
    }
    for s in &target.samples {
        embeddings.push(embed_sample(&encoder, s)?);
        domains.push("target".to_string());
    }
    match pca_project(&embeddings, 2) {
        Ok((coords, _)) => emit_pca("domains", &coords, &domains, &layout.report_dir())?,
        // a degenerate scatter (e.g. identical embeddings) is not an error
        // for reporting; skip the plot
        Err(EvalError::InvalidInput(_)) => {}
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

/// Run one stage: dangling-input check, execution, run-manifest write.
/// Refuses to re-run a stage whose manifest exists unless `force`.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage, force: bool) -> Result<(), PipelineError> {
    cfg.validate()?;
    let layout = Layout::from_config(cfg);
    let manifest_path = layout.manifest(stage);
    if manifest_path.exists() && !force {
        return Err(PipelineError::Config(format!(
            "stage '{stage}' already ran; run manifest exists at {}; pass --force to re-run",
            manifest_path.display()
        )));
    }
    let inputs = stage_inputs(&layout, stage);
    for p in &inputs {
        if !p.exists() {
            return Err(PipelineError::Data(format!(
                "dangling artifact: stage '{stage}' requires {} which does not exist; \
                 run the earlier pipeline stages first",
                p.display()
            )));
        }
    }
    let input_hashes = hash_map(&inputs)?;
    let start = std::time::Instant::now();
    match stage {
        Stage::Generate => run_generate(cfg, &layout)?,
        Stage::TrainTranslate => run_train_translate(cfg, &layout)?,
        Stage::Translate => run_translate(cfg, &layout)?,
        Stage::TrainSiamese => run_train_siamese(cfg, &layout)?,
        Stage::Filter => run_filter(cfg, &layout)?,
        Stage::TrainSeg => run_train_seg(cfg, &layout)?,
        Stage::Evaluate => run_evaluate(cfg, &layout)?,
        Stage::Report => run_report(cfg, &layout)?,
    }
    let wall = start.elapsed().as_secs_f64();
    let outputs = hash_map(&stage_outputs(&layout, stage))?;
    let manifest = RunManifest {
        stage: stage.name().to_string(),
        seed: cfg.global.seed,
        config: stage_config_echo(cfg, stage),
        inputs: input_hashes,
        outputs,
        wall_time_secs: wall,
    };
    write_json(&manifest_path, &manifest)
}

/// Run the stage chain from `from` to `to` inclusive, stopping at the
/// first failure.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    from: Stage,
    to: Stage,
    force: bool,
) -> Result<(), PipelineError> {
    if from > to {
        return Err(PipelineError::Config(format!(
            "from-stage '{from}' comes after to-stage '{to}' in the pipeline order"
        )));
    }
    for stage in STAGES.iter().copied().filter(|s| *s >= from && *s <= to) {
        run_stage(cfg, stage, force)?;
    }
    Ok(())
}
