//! Dataset model and on-disk format, the procedural two-domain eye
//! generator, and the augmentation pipeline.
//!
//! Directory layout: `<root>/images/<id>.png`, `<root>/masks/<id>.png`,
//! `<root>/manifest.json`. Images are 8-bit grayscale PNG; masks are 8-bit
//! PNG of class ids. All pixel values are quantized to the 8-bit grid at
//! creation time so that save/load is an exact round trip.

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Number of segmentation classes: background, sclera, iris, pupil.
pub const NUM_CLASSES: usize = 4;

pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_SCLERA: u8 = 1;
pub const CLASS_IRIS: u8 = 2;
pub const CLASS_PUPIL: u8 = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in entry `{id}`: {message}")]
    Format { id: String, message: String },
    #[error("dataset is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Style {
    SyntheticLike,
    RealLike,
}

impl Style {
    pub fn domain(self) -> Domain {
        match self {
            Style::SyntheticLike => Domain::Source,
            Style::RealLike => Domain::Target,
        }
    }
}

/// Split assignment, serialized as `train`, `val`, or `fold-k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Fold(u32),
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Fold(k) => write!(f, "fold-{k}"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => s
                .strip_prefix("fold-")
                .and_then(|k| k.parse().ok())
                .map(Split::Fold)
                .ok_or_else(|| format!("unknown split `{s}`")),
        }
    }
}

impl Serialize for Split {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Split {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One grayscale image with its per-pixel class mask and domain tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub image: Array2<f32>,
    pub mask: Array2<u8>,
    pub domain: Domain,
}

impl ImageSample {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.image.dim() != self.mask.dim() {
            return Err(DataError::Format {
                id: self.id.clone(),
                message: format!(
                    "image dims {:?} != mask dims {:?}",
                    self.image.dim(),
                    self.mask.dim()
                ),
            });
        }
        if let Some(&bad) = self.mask.iter().find(|&&m| m as usize >= NUM_CLASSES) {
            return Err(DataError::Format {
                id: self.id.clone(),
                message: format!("mask value {bad} outside {{0..{}}} (K={NUM_CLASSES})", NUM_CLASSES - 1),
            });
        }
        if self.image.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(DataError::Format {
                id: self.id.clone(),
                message: "image intensity outside [0,1]".into(),
            });
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dim()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub mask: String,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub domain: Domain,
    pub entries: Vec<ManifestEntry>,
    /// Free-form origin note (e.g. which generator checkpoint produced a
    /// translated set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Split labels must partition the entry set (every entry has exactly
    /// one; guaranteed structurally) and ids must be unique.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.id) {
                return Err(DataError::Format {
                    id: e.id.clone(),
                    message: "duplicate id in manifest".into(),
                });
            }
        }
        Ok(())
    }
}

/// In-memory dataset: manifest plus decoded samples, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<ImageSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Procedural eye rendering

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Ellipse {
    /// Center in normalized [0,1] coordinates (x across width, y down height).
    pub cx: f64,
    pub cy: f64,
    /// Semi-axes in normalized units.
    pub rx: f64,
    pub ry: f64,
    /// Rotation in radians.
    pub rot: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (c, s) = (self.rot.cos(), self.rot.sin());
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EyeParams {
    pub pupil: Ellipse,
    pub iris: Ellipse,
    /// Eyelid openness in [0,1]; 0 is a fully closed eye.
    pub aperture: f64,
    /// Half-width of the eye opening, normalized.
    pub opening_halfwidth: f64,
    /// Half-height of the opening at full aperture, normalized.
    pub opening_halfheight: f64,
    pub texture_seed: u64,
    pub style: Style,
}

impl EyeParams {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.aperture) {
            return Err(DataError::InvalidGeometry(format!(
                "aperture {} outside [0,1]",
                self.aperture
            )));
        }
        // Pupil containment: sample the pupil boundary and require every
        // point inside the iris.
        for i in 0..64 {
            let t = i as f64 / 64.0 * std::f64::consts::TAU;
            let (c, s) = (self.pupil.rot.cos(), self.pupil.rot.sin());
            let (u, v) = (self.pupil.rx * t.cos(), self.pupil.ry * t.sin());
            let x = self.pupil.cx + c * u - s * v;
            let y = self.pupil.cy + s * u + c * v;
            if !self.iris.contains(x, y) {
                return Err(DataError::InvalidGeometry(
                    "pupil ellipse exceeds iris ellipse".into(),
                ));
            }
        }
        Ok(())
    }
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Smoothed per-pixel noise field in [-1,1], used for the real-like style.
fn correlated_noise(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let mut field = Array2::from_shape_simple_fn((h, w), || rng.gen_range(-1.0_f32..1.0));
    // Two box-blur passes give a cheap, smooth correlation structure.
    for _ in 0..2 {
        let src = field.clone();
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut cnt = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = y as i64 + dy;
                        let xx = x as i64 + dx;
                        if yy >= 0 && yy < h as i64 && xx >= 0 && xx < w as i64 {
                            acc += src[[yy as usize, xx as usize]];
                            cnt += 1.0;
                        }
                    }
                }
                field[[y, x]] = acc / cnt;
            }
        }
    }
    field
}

/// Per-class base intensities. The two styles are deliberately offset so
/// that the domains have a measurable gap in both per-class means and
/// (via noise) per-class variances.
fn base_intensity(style: Style, class: u8) -> f32 {
    match (style, class) {
        (Style::SyntheticLike, CLASS_BACKGROUND) => 0.80,
        (Style::SyntheticLike, CLASS_SCLERA) => 0.95,
        (Style::SyntheticLike, CLASS_IRIS) => 0.35,
        (Style::SyntheticLike, CLASS_PUPIL) => 0.05,
        // note the swapped background/sclera brightness order relative to
        // the synthetic style: appearance transfer requires a class-aware
        // remapping, not just a global tone shift
        (Style::RealLike, CLASS_BACKGROUND) => 0.70,
        (Style::RealLike, CLASS_SCLERA) => 0.45,
        (Style::RealLike, CLASS_IRIS) => 0.30,
        (Style::RealLike, CLASS_PUPIL) => 0.10,
        _ => unreachable!("class id out of range"),
    }
}

/// Render an eye image plus pixel-perfect mask.
pub fn render_eye(params: &EyeParams, dims: (usize, usize)) -> Result<ImageSample, DataError> {
    let (h, w) = dims;
    if h < 16 || w < 16 {
        return Err(DataError::Precondition(format!(
            "dims {h}x{w} below minimum 16x16"
        )));
    }
    params.validate()?;

    let mut mask = Array2::<u8>::zeros((h, w));
    let mut image = Array2::<f32>::zeros((h, w));
    let mut rng = ChaCha8Rng::seed_from_u64(params.texture_seed);

    let real = params.style == Style::RealLike;
    let noise = if real {
        Some(correlated_noise(h, w, &mut rng))
    } else {
        None
    };
    let bias: f32 = if real { rng.gen_range(-0.15..0.15) } else { 0.0 };

    let open_h = params.aperture * params.opening_halfheight;
    let cx = params.iris.cx;
    let cy = params.iris.cy;
    for y in 0..h {
        for x in 0..w {
            // Pixel-center coordinates, normalized by each dimension.
            let px = (x as f64 + 0.5) / w as f64;
            let py = (y as f64 + 0.5) / h as f64;
            // Eye opening: lens-shaped region between two parabolic lids.
            let u = (px - cx) / params.opening_halfwidth;
            let lid = open_h * (1.0 - u * u);
            let visible = params.aperture > 0.0 && u.abs() <= 1.0 && (py - cy).abs() <= lid;
            let class = if !visible {
                CLASS_BACKGROUND
            } else if params.pupil.contains(px, py) {
                CLASS_PUPIL
            } else if params.iris.contains(px, py) {
                CLASS_IRIS
            } else {
                CLASS_SCLERA
            };
            mask[[y, x]] = class;

            let mut v = base_intensity(params.style, class);
            if real {
                v += bias + 0.22 * noise.as_ref().unwrap()[[y, x]];
                // Soft shading toward the lid boundary.
                if visible && lid > 0.0 {
                    let edge = ((py - cy).abs() / lid) as f32;
                    v -= 0.10 * edge * edge;
                }
            }
            image[[y, x]] = quantize(v);
        }
    }

    Ok(ImageSample {
        id: String::new(),
        image,
        mask,
        domain: params.style.domain(),
    })
}

/// Randomized eye parameters for dataset generation.
pub fn random_eye_params(style: Style, rng: &mut ChaCha8Rng) -> EyeParams {
    let cx = rng.gen_range(0.45..0.55);
    let cy = rng.gen_range(0.45..0.55);
    let iris_rx = rng.gen_range(0.24..0.32);
    let iris_ry = rng.gen_range(0.20..0.26);
    let pupil_r = rng.gen_range(0.07..0.12);
    let pupil_dx = rng.gen_range(-0.05..0.05);
    let pupil_dy = rng.gen_range(-0.04..0.04);
    EyeParams {
        iris: Ellipse {
            cx,
            cy,
            rx: iris_rx,
            ry: iris_ry,
            rot: 0.0,
        },
        pupil: Ellipse {
            cx: cx + pupil_dx,
            cy: cy + pupil_dy,
            rx: pupil_r,
            ry: pupil_r * rng.gen_range(0.85..1.0),
            rot: rng.gen_range(-0.3..0.3),
        },
        aperture: rng.gen_range(0.85..1.0),
        opening_halfwidth: rng.gen_range(0.40..0.46),
        opening_halfheight: rng.gen_range(0.30..0.36),
        texture_seed: rng.next_u64(),
        style,
    }
}

/// Generate `n` samples with randomized parameters, deterministic in `seed`.
pub fn generate_samples(
    n: usize,
    style: Style,
    seed: u64,
    dims: (usize, usize),
) -> Result<Vec<ImageSample>, DataError> {
    if n == 0 {
        return Err(DataError::Precondition("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = match style {
        Style::SyntheticLike => "syn",
        Style::RealLike => "real",
    };
    (0..n)
        .map(|i| {
            let params = random_eye_params(style, &mut rng);
            let mut sample = render_eye(&params, dims)?;
            sample.id = format!("{tag}-{seed:08x}-{i:05}");
            Ok(sample)
        })
        .collect()
}

/// Stack samples into a `[N,1,H,W]` image array and `[N,H,W]` mask array.
pub fn batch_arrays<T: crate::scalar::Scalar>(
    samples: &[&ImageSample],
) -> Result<(ndarray::ArrayD<T>, Array3<u8>), DataError> {
    if samples.is_empty() {
        return Err(DataError::Empty);
    }
    let (h, w) = samples[0].dims();
    let n = samples.len();
    let mut images = ndarray::ArrayD::<T>::zeros(ndarray::IxDyn(&[n, 1, h, w]));
    let mut masks = Array3::<u8>::zeros((n, h, w));
    for (i, s) in samples.iter().enumerate() {
        if s.dims() != (h, w) {
            return Err(DataError::Format {
                id: s.id.clone(),
                message: format!("dims {:?} differ from batch dims {:?}", s.dims(), (h, w)),
            });
        }
        for y in 0..h {
            for x in 0..w {
                images[[i, 0, y, x]] = T::c(s.image[[y, x]] as f64);
                masks[[i, y, x]] = s.mask[[y, x]];
            }
        }
    }
    Ok((images, masks))
}

use ndarray::Array3;

// ---------------------------------------------------------------------------
// Augmentation

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AugmentConfig {
    /// Per-augmentation selection probability.
    pub probability: f64,
    pub blur_kernel: usize,
    pub blur_sigma: (f64, f64),
    pub translate_range: (i64, i64),
    pub line_count: (usize, usize),
    pub starburst: bool,
    pub reflection: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            probability: 0.2,
            blur_kernel: 7,
            blur_sigma: (2.0, 7.0),
            translate_range: (0, 20),
            line_count: (2, 9),
            starburst: true,
            reflection: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(DataError::Precondition("probability outside [0,1]".into()));
        }
        if self.blur_sigma.0 > self.blur_sigma.1 || self.blur_sigma.0 <= 0.0 {
            return Err(DataError::Precondition("empty blur sigma range".into()));
        }
        if self.translate_range.0 < 0 || self.translate_range.0 > self.translate_range.1 {
            return Err(DataError::Precondition("bad translation range".into()));
        }
        if self.line_count.0 > self.line_count.1 {
            return Err(DataError::Precondition("bad line count range".into()));
        }
        Ok(())
    }
}

fn gaussian_blur(image: &Array2<f32>, kernel: usize, sigma: f64) -> Array2<f32> {
    let half = (kernel / 2) as i64;
    let weights: Vec<f32> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let norm: f32 = weights.iter().sum();
    let (h, w) = image.dim();
    let clampi = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    // Separable passes with replicate borders.
    let mut tmp = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in weights.iter().enumerate() {
                let xx = clampi(x as i64 + k as i64 - half, w);
                acc += wt * image[[y, xx]];
            }
            tmp[[y, x]] = acc / norm;
        }
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in weights.iter().enumerate() {
                let yy = clampi(y as i64 + k as i64 - half, h);
                acc += wt * tmp[[yy, x]];
            }
            out[[y, x]] = acc / norm;
        }
    }
    out
}

fn translate_pair(
    image: &Array2<f32>,
    mask: &Array2<u8>,
    dx: i64,
    dy: i64,
) -> (Array2<f32>, Array2<u8>) {
    let (h, w) = image.dim();
    let mut img = Array2::<f32>::zeros((h, w));
    let mut msk = Array2::<u8>::from_elem((h, w), CLASS_BACKGROUND);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (sy, sx) = (y - dy, x - dx);
            if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                img[[y as usize, x as usize]] = image[[sy as usize, sx as usize]];
                msk[[y as usize, x as usize]] = mask[[sy as usize, sx as usize]];
            }
        }
    }
    (img, msk)
}

fn stamp_starburst(image: &mut Array2<f32>, cy: usize, cx: usize) {
    let (h, w) = image.dim();
    let len = (h.min(w) / 4) as i64;
    // Fixed 12-ray radial stamp.
    for ray in 0..12 {
        let angle = ray as f64 / 12.0 * std::f64::consts::TAU;
        let (dy, dx) = (angle.sin(), angle.cos());
        for r in 0..len {
            let y = cy as i64 + (dy * r as f64).round() as i64;
            let x = cx as i64 + (dx * r as f64).round() as i64;
            if y >= 0 && y < h as i64 && x >= 0 && x < w as i64 {
                let v = &mut image[[y as usize, x as usize]];
                *v = (*v + 0.6 * (1.0 - r as f32 / len as f32)).min(1.0);
            }
        }
    }
}

/// Apply the augmentation recipe. Selection draws happen in a fixed order
/// (reflection, blur, translation, lines, starburst), one gate draw per
/// augmentation, so streams are replayable for a given RNG state.
pub fn augment(
    sample: &ImageSample,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ImageSample, DataError> {
    cfg.validate()?;
    sample.validate()?;
    let (h, w) = sample.dims();
    let mut image = sample.image.clone();
    let mut mask = sample.mask.clone();

    let gate = |rng: &mut ChaCha8Rng| rng.gen_range(0.0..1.0) < cfg.probability;

    if cfg.reflection && gate(rng) {
        image = flip_columns(&image);
        mask = flip_columns(&mask);
    }
    if gate(rng) {
        let sigma = rng.gen_range(cfg.blur_sigma.0..=cfg.blur_sigma.1);
        image = gaussian_blur(&image, cfg.blur_kernel, sigma);
    }
    if gate(rng) {
        let (lo, hi) = cfg.translate_range;
        let dx = rng.gen_range(lo..=hi) * if rng.gen_bool(0.5) { 1 } else { -1 };
        let dy = rng.gen_range(lo..=hi) * if rng.gen_bool(0.5) { 1 } else { -1 };
        let (i2, m2) = translate_pair(&image, &mask, dx, dy);
        image = i2;
        mask = m2;
    }
    if gate(rng) {
        // Thin 1-px lines at intensity extremes.
        let n = rng.gen_range(cfg.line_count.0..=cfg.line_count.1);
        for _ in 0..n {
            let intensity = if rng.gen_bool(0.5) { 0.0 } else { 1.0 };
            if rng.gen_bool(0.5) {
                let y = rng.gen_range(0..h);
                image.row_mut(y).fill(intensity);
            } else {
                let x = rng.gen_range(0..w);
                image.column_mut(x).fill(intensity);
            }
        }
    }
    if cfg.starburst && gate(rng) {
        let cy = rng.gen_range(0..h);
        let cx = rng.gen_range(0..w);
        stamp_starburst(&mut image, cy, cx);
    }

    image.mapv_inplace(quantize);
    Ok(ImageSample {
        id: sample.id.clone(),
        image,
        mask,
        domain: sample.domain,
    })
}

fn flip_columns<A: Clone>(a: &Array2<A>) -> Array2<A> {
    let mut out = a.clone();
    out.invert_axis(ndarray::Axis(1));
    out
}

// ---------------------------------------------------------------------------
// On-disk format

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_sample(root: &Path, sample: &ImageSample) -> Result<(), DataError> {
    sample.validate()?;
    let (h, w) = sample.dims();
    for sub in ["images", "masks"] {
        std::fs::create_dir_all(root.join(sub)).map_err(io_err(root))?;
    }
    let img_path = root.join("images").join(format!("{}.png", sample.id));
    let mask_path = root.join("masks").join(format!("{}.png", sample.id));

    let img_bytes: Vec<u8> = sample
        .image
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    image::GrayImage::from_raw(w as u32, h as u32, img_bytes)
        .expect("image buffer size")
        .save(&img_path)
        .map_err(|e| DataError::Format {
            id: sample.id.clone(),
            message: format!("PNG encode: {e}"),
        })?;
    let mask_bytes: Vec<u8> = sample.mask.iter().copied().collect();
    image::GrayImage::from_raw(w as u32, h as u32, mask_bytes)
        .expect("mask buffer size")
        .save(&mask_path)
        .map_err(|e| DataError::Format {
            id: sample.id.clone(),
            message: format!("PNG encode: {e}"),
        })?;
    Ok(())
}

pub fn load_sample(root: &Path, entry: &ManifestEntry, domain: Domain) -> Result<ImageSample, DataError> {
    let img_path = root.join(&entry.image);
    let mask_path = root.join(&entry.mask);
    let img = image::open(&img_path)
        .map_err(|e| DataError::Format {
            id: entry.id.clone(),
            message: format!("missing or undecodable image {}: {e}", img_path.display()),
        })?
        .into_luma8();
    let msk = image::open(&mask_path)
        .map_err(|e| DataError::Format {
            id: entry.id.clone(),
            message: format!("missing or undecodable mask {}: {e}", mask_path.display()),
        })?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let image = Array2::from_shape_vec(
        (h, w),
        img.into_raw().iter().map(|&b| b as f32 / 255.0).collect(),
    )
    .unwrap();
    let mask = Array2::from_shape_vec((msk.height() as usize, msk.width() as usize), msk.into_raw()).unwrap();
    let sample = ImageSample {
        id: entry.id.clone(),
        image,
        mask,
        domain,
    };
    sample.validate()?;
    Ok(sample)
}

pub fn save_manifest(root: &Path, manifest: &DatasetManifest) -> Result<(), DataError> {
    manifest.validate()?;
    std::fs::create_dir_all(root).map_err(io_err(root))?;
    let path = root.join("manifest.json");
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), manifest).map_err(|e| {
        DataError::Format {
            id: "manifest".into(),
            message: e.to_string(),
        }
    })
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest, DataError> {
    let path = root.join("manifest.json");
    let file = std::fs::File::open(&path).map_err(io_err(&path))?;
    let manifest: DatasetManifest =
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| DataError::Format {
            id: "manifest".into(),
            message: e.to_string(),
        })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Write samples and manifest under `root`, all entries split `train`.
pub fn save_dataset(root: &Path, samples: &[ImageSample], domain: Domain) -> Result<DatasetManifest, DataError> {
    if samples.is_empty() {
        return Err(DataError::Empty);
    }
    let entries = samples
        .iter()
        .map(|s| ManifestEntry {
            id: s.id.clone(),
            image: format!("images/{}.png", s.id),
            mask: format!("masks/{}.png", s.id),
            split: Split::Train,
        })
        .collect();
    let manifest = DatasetManifest {
        version: 1,
        domain,
        entries,
        provenance: None,
    };
    for s in samples {
        save_sample(root, s)?;
    }
    save_manifest(root, &manifest)?;
    Ok(manifest)
}

/// Load manifest and all referenced samples, validating every entry.
pub fn load_dataset(root: &Path) -> Result<Dataset, DataError> {
    let manifest = load_manifest(root)?;
    let samples = manifest
        .entries
        .iter()
        .map(|e| load_sample(root, e, manifest.domain))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { manifest, samples })
}

/// Generate and persist a dataset in one call.
pub fn generate_dataset(
    root: &Path,
    n: usize,
    style: Style,
    seed: u64,
    dims: (usize, usize),
) -> Result<DatasetManifest, DataError> {
    let samples = generate_samples(n, style, seed, dims)?;
    save_dataset(root, &samples, style.domain())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered_params(style: Style) -> EyeParams {
        EyeParams {
            iris: Ellipse {
                cx: 0.5,
                cy: 0.5,
                rx: 0.3,
                ry: 0.24,
                rot: 0.0,
            },
            pupil: Ellipse {
                cx: 0.5,
                cy: 0.5,
                rx: 0.1,
                ry: 0.1,
                rot: 0.0,
            },
            aperture: 1.0,
            opening_halfwidth: 0.44,
            opening_halfheight: 0.34,
            texture_seed: 9,
            style,
        }
    }

    #[test]
    fn closed_eye_is_all_background() {
        let mut p = centered_params(Style::SyntheticLike);
        p.aperture = 0.0;
        let s = render_eye(&p, (32, 32)).unwrap();
        assert!(s.mask.iter().all(|&m| m == CLASS_BACKGROUND));
    }

    #[test]
    fn pupil_pixel_count_matches_area() {
        // Circular pupil of radius 0.1*w, centered, full aperture.
        let mut p = centered_params(Style::SyntheticLike);
        let w = 100usize;
        p.pupil = Ellipse {
            cx: 0.5,
            cy: 0.5,
            rx: 0.1,
            ry: 0.1,
            rot: 0.0,
        };
        let s = render_eye(&p, (w, w)).unwrap();
        let count = s.mask.iter().filter(|&&m| m == CLASS_PUPIL).count() as f64;
        let expected = std::f64::consts::PI * (0.1 * w as f64).powi(2);
        assert!(
            (count - expected).abs() / expected < 0.05,
            "count {count} expected {expected}"
        );
    }

    #[test]
    fn render_is_deterministic() {
        let p = centered_params(Style::RealLike);
        let a = render_eye(&p, (48, 48)).unwrap();
        let b = render_eye(&p, (48, 48)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pupil_outside_iris_rejected() {
        let mut p = centered_params(Style::SyntheticLike);
        p.pupil.rx = 0.5;
        assert!(matches!(
            render_eye(&p, (32, 32)),
            Err(DataError::InvalidGeometry(_))
        ));
    }

    #[test]
    fn tiny_dims_rejected() {
        let p = centered_params(Style::SyntheticLike);
        assert!(render_eye(&p, (8, 8)).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_rejects_zero() {
        let a = generate_samples(10, Style::SyntheticLike, 7, (32, 32)).unwrap();
        let b = generate_samples(10, Style::SyntheticLike, 7, (32, 32)).unwrap();
        assert_eq!(a, b);
        assert!(generate_samples(0, Style::SyntheticLike, 7, (32, 32)).is_err());
    }

    #[test]
    fn generated_masks_have_all_classes() {
        let samples = generate_samples(100, Style::SyntheticLike, 3, (64, 64)).unwrap();
        let with_all = samples
            .iter()
            .filter(|s| (0..NUM_CLASSES as u8).all(|k| s.mask.iter().any(|&m| m == k)))
            .count();
        assert!(with_all >= 95, "only {with_all}/100 masks have all classes");
    }

    #[test]
    fn style_gap_is_measurable() {
        // Earth-mover distance between mean-intensity distributions.
        let syn = generate_samples(200, Style::SyntheticLike, 11, (32, 32)).unwrap();
        let real = generate_samples(200, Style::RealLike, 12, (32, 32)).unwrap();
        let mean = |s: &ImageSample| s.image.mean().unwrap() as f64;
        let mut a: Vec<f64> = syn.iter().map(mean).collect();
        let mut b: Vec<f64> = real.iter().map(mean).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let emd: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
        assert!(emd > 0.0, "no measurable domain gap");
    }

    #[test]
    fn augment_noop_with_zero_probability() {
        let s = render_eye(&centered_params(Style::SyntheticLike), (32, 32)).unwrap();
        let cfg = AugmentConfig {
            probability: 0.0,
            ..AugmentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&s, &cfg, &mut rng).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn reflection_preserves_class_histogram() {
        let s = render_eye(&centered_params(Style::SyntheticLike), (32, 32)).unwrap();
        let cfg = AugmentConfig {
            probability: 1.0,
            blur_sigma: (2.0, 7.0),
            translate_range: (0, 0),
            line_count: (0, 0),
            starburst: false,
            ..AugmentConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&s, &cfg, &mut rng).unwrap();
        let hist = |m: &Array2<u8>| {
            let mut h = [0usize; NUM_CLASSES];
            m.iter().for_each(|&c| h[c as usize] += 1);
            h
        };
        assert_eq!(hist(&s.mask), hist(&out.mask));
        assert_eq!(out.dims(), s.dims());
        assert!(out.mask.iter().all(|&m| (m as usize) < NUM_CLASSES));
    }

    #[test]
    fn translation_shifts_mask_exactly() {
        let s = render_eye(&centered_params(Style::SyntheticLike), (32, 32)).unwrap();
        let (img, msk) = translate_pair(&s.image, &s.mask, 5, 5);
        for y in 0..32usize {
            for x in 0..32usize {
                if y >= 5 && x >= 5 {
                    assert_eq!(msk[[y, x]], s.mask[[y - 5, x - 5]]);
                    assert_eq!(img[[y, x]], s.image[[y - 5, x - 5]]);
                } else {
                    assert_eq!(msk[[y, x]], CLASS_BACKGROUND);
                }
            }
        }
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_samples(4, Style::RealLike, 5, (32, 32)).unwrap();
        let manifest = save_dataset(dir.path(), &samples, Domain::Target).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.manifest, manifest);
        assert_eq!(loaded.samples, samples);
    }

    #[test]
    fn bad_mask_value_names_class_bound() {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = generate_samples(1, Style::SyntheticLike, 5, (32, 32)).unwrap();
        let manifest = save_dataset(dir.path(), &samples, Domain::Source).unwrap();
        // Overwrite the mask PNG with an out-of-range class id.
        samples[0].mask.fill(0);
        let bad = image::GrayImage::from_pixel(32, 32, image::Luma([4u8]));
        bad.save(dir.path().join(&manifest.entries[0].mask)).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("K=4"), "error should name the class bound: {msg}");
    }

    #[test]
    fn missing_image_names_entry_id() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_samples(1, Style::SyntheticLike, 6, (32, 32)).unwrap();
        let manifest = save_dataset(dir.path(), &samples, Domain::Source).unwrap();
        std::fs::remove_file(dir.path().join(&manifest.entries[0].image)).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains(&manifest.entries[0].id));
    }

    #[test]
    fn split_string_roundtrip() {
        for s in [Split::Train, Split::Val, Split::Fold(2)] {
            let txt = s.to_string();
            assert_eq!(txt.parse::<Split>().unwrap(), s);
        }
        assert!("fold-x".parse::<Split>().is_err());
    }
}
