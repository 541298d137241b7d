//! Training orchestration for unpaired image translation (plain
//! cycle-consistent baseline vs. the structure-retaining variant) and
//! application of a trained generator to a whole dataset.

use crate::datakit::{
    batch_arrays, save_manifest, save_sample, DataError, Dataset, DatasetManifest, ImageSample,
    ManifestEntry, Split, NUM_CLASSES,
};
use crate::losses::{
    adversarial_loss, color_mean_loss, color_var_loss, cycle_loss, edge_retaining_loss,
    identity_loss, total_srcgan_loss, LossBreakdown, LossError, LossWeights, SrcganParts,
};
use crate::nn::{
    load_checkpoint, save_checkpoint, Adam, DiscriminatorNet, DiscriminatorSpec, GeneratorNet,
    GeneratorSpec, NnError,
};
use crate::tensor::Tensor;
use ndarray::{Array3, ArrayD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training diverged at step {step}: {term} became non-finite")]
    Divergence { step: usize, term: String },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslateMode {
    Cgan,
    Srcgan,
}

impl std::str::FromStr for TranslateMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cgan" => Ok(TranslateMode::Cgan),
            "srcgan" => Ok(TranslateMode::Srcgan),
            other => Err(format!("unknown translate mode '{other}'; expected cgan or srcgan")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TranslateConfig {
    pub mode: TranslateMode,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Save checkpoints every this many epochs (and always at the end).
    pub checkpoint_every: usize,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl Default for TranslateConfig {
    fn default() -> Self {
        TranslateConfig {
            mode: TranslateMode::Srcgan,
            weights: LossWeights::default(),
            learning_rate: 2e-4,
            betas: (0.5, 0.999),
            batch_size: 2,
            epochs: 1,
            seed: 0,
            checkpoint_every: 0,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
        }
    }
}

impl TranslateConfig {
    /// Effective loss weights: the baseline mode runs with the structure
    /// and color terms forced to zero.
    pub fn effective_weights(&self) -> LossWeights {
        match self.mode {
            TranslateMode::Srcgan => self.weights,
            TranslateMode::Cgan => LossWeights {
                gamma_edge: 0.0,
                gamma_mean: 0.0,
                gamma_var: 0.0,
                ..self.weights
            },
        }
    }

    pub fn validate(&self) -> Result<(), TranslateError> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(TranslateError::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(TranslateError::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TranslateError::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Mean generator-side loss breakdown plus discriminator loss, per epoch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    pub breakdown: LossBreakdown,
    pub loss_d: f64,
}

pub struct TranslateOutcome {
    pub history: Vec<EpochLosses>,
    pub g_sr_path: PathBuf,
    pub g_rs_path: PathBuf,
}

pub struct TranslatorModels<T: crate::scalar::Scalar> {
    pub g_sr: GeneratorNet<T>,
    pub g_rs: GeneratorNet<T>,
    pub d_s: DiscriminatorNet<T>,
    pub d_r: DiscriminatorNet<T>,
}

impl<T: crate::scalar::Scalar> TranslatorModels<T> {
    pub fn build(cfg: &TranslateConfig) -> Result<Self, NnError> {
        Ok(TranslatorModels {
            g_sr: GeneratorNet::build(&cfg.generator, cfg.seed.wrapping_add(1))?,
            g_rs: GeneratorNet::build(&cfg.generator, cfg.seed.wrapping_add(2))?,
            d_s: DiscriminatorNet::build(&cfg.discriminator, cfg.seed.wrapping_add(3))?,
            d_r: DiscriminatorNet::build(&cfg.discriminator, cfg.seed.wrapping_add(4))?,
        })
    }
}

fn write_history_csv(path: &Path, history: &[EpochLosses]) -> Result<(), TranslateError> {
    let mut f = std::fs::File::create(path).map_err(|source| TranslateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut body = String::from("epoch,term,value\n");
    for h in history {
        let rows: [(&str, f64); 9] = [
            ("adv_sr", h.breakdown.adv_sr),
            ("adv_rs", h.breakdown.adv_rs),
            ("cyc", h.breakdown.cyc),
            ("id", h.breakdown.id),
            ("edge", h.breakdown.edge),
            ("mean", h.breakdown.mean),
            ("var", h.breakdown.var),
            ("total_g", h.breakdown.total),
            ("loss_d", h.loss_d),
        ];
        for (term, value) in rows {
            body.push_str(&format!("{},{term},{value}\n", h.epoch));
        }
    }
    f.write_all(body.as_bytes()).map_err(|source| TranslateError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One generator-phase forward pass: all loss parts for one batch.
#[allow(clippy::too_many_arguments)]
fn generator_parts<T: crate::scalar::Scalar>(
    models: &TranslatorModels<T>,
    s: &Tensor<T>,
    mask_s: &Array3<u8>,
    r: &Tensor<T>,
    mask_r: &Array3<u8>,
    weights: &LossWeights,
) -> Result<SrcganParts<T>, TranslateError> {
    let t_sr = models.g_sr.forward(s);
    let t_rs = models.g_rs.forward(r);
    let rec_s = models.g_rs.forward(&t_sr);
    let rec_r = models.g_sr.forward(&t_rs);

    let (_, adv_sr) = adversarial_loss(&models.d_r.forward(r), &models.d_r.forward(&t_sr));
    let (_, adv_rs) = adversarial_loss(&models.d_s.forward(s), &models.d_s.forward(&t_rs));
    let cyc = cycle_loss(s, &rec_s, r, &rec_r)?;
    let id = identity_loss(s, &models.g_rs.forward(s), r, &models.g_sr.forward(r))?;
    let zero = || Tensor::scalar_constant(T::zero());
    let edge = if weights.gamma_edge > 0.0 {
        edge_retaining_loss(s, &t_sr, &rec_s, r, &t_rs, &rec_r)?
    } else {
        zero()
    };
    let mean = if weights.gamma_mean > 0.0 {
        color_mean_loss(&t_sr, mask_s, r, mask_r, &t_rs, s, NUM_CLASSES)?
    } else {
        zero()
    };
    let var = if weights.gamma_var > 0.0 {
        color_var_loss(&t_sr, mask_s, r, mask_r, &t_rs, s, NUM_CLASSES)?
    } else {
        zero()
    };
    Ok(SrcganParts {
        adv_sr,
        adv_rs,
        cyc,
        id,
        edge,
        mean,
        var,
    })
}

/// Alternating discriminator/generator training over unpaired batches.
/// Deterministic for a fixed seed on a single thread.
pub fn train_translator(
    source: &Dataset,
    target: &Dataset,
    cfg: &TranslateConfig,
    out_dir: &Path,
) -> Result<TranslateOutcome, TranslateError> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(DataError::Empty.into());
    }
    if source.manifest.domain == target.manifest.domain {
        return Err(TranslateError::Config(
            "source and target manifests must carry distinct domains".into(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| TranslateError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let weights = cfg.effective_weights();

    let models = TranslatorModels::<f32>::build(cfg)?;
    let g_params: Vec<_> = models
        .g_sr
        .params()
        .into_iter()
        .chain(models.g_rs.params())
        .map(|(_, t)| t)
        .collect();
    let d_params: Vec<_> = models
        .d_s
        .params()
        .into_iter()
        .chain(models.d_r.params())
        .map(|(_, t)| t)
        .collect();
    let mut opt_g = Adam::new(g_params, cfg.learning_rate, cfg.betas.0, cfg.betas.1);
    let mut opt_d = Adam::new(d_params, cfg.learning_rate, cfg.betas.0, cfg.betas.1);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1000 + epoch as u64));
        let mut src_idx: Vec<usize> = (0..source.len()).collect();
        let mut tgt_idx: Vec<usize> = (0..target.len()).collect();
        src_idx.shuffle(&mut rng);
        tgt_idx.shuffle(&mut rng);

        let batches = src_idx.len().div_ceil(cfg.batch_size);
        let mut acc = LossBreakdown {
            adv_sr: 0.0,
            adv_rs: 0.0,
            cyc: 0.0,
            id: 0.0,
            edge: 0.0,
            mean: 0.0,
            var: 0.0,
            total: 0.0,
        };
        let mut acc_d = 0.0;
        for b in 0..batches {
            let s_ids = &src_idx[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(src_idx.len())];
            // Target batch cycles through its own shuffled order.
            let t_ids: Vec<usize> = (0..s_ids.len())
                .map(|i| tgt_idx[(b * cfg.batch_size + i) % tgt_idx.len()])
                .collect();
            let s_samples: Vec<&ImageSample> = s_ids.iter().map(|&i| &source.samples[i]).collect();
            let t_samples: Vec<&ImageSample> = t_ids.iter().map(|&i| &target.samples[i]).collect();
            let (s_arr, mask_s) = batch_arrays::<f32>(&s_samples)?;
            let (r_arr, mask_r) = batch_arrays::<f32>(&t_samples)?;
            let s = Tensor::constant(s_arr);
            let r = Tensor::constant(r_arr);

            // --- discriminator phase (generator outputs detached) ---
            let t_sr = models.g_sr.forward(&s).detach();
            let t_rs = models.g_rs.forward(&r).detach();
            let (loss_d_r, _) = adversarial_loss(&models.d_r.forward(&r), &models.d_r.forward(&t_sr));
            let (loss_d_s, _) = adversarial_loss(&models.d_s.forward(&s), &models.d_s.forward(&t_rs));
            let loss_d = loss_d_r.add(&loss_d_s);
            let loss_d_val = loss_d.item() as f64;
            if !loss_d_val.is_finite() {
                return Err(TranslateError::Divergence {
                    step,
                    term: "loss_d".into(),
                });
            }
            opt_d.zero_grad();
            opt_g.zero_grad();
            loss_d.backward();
            opt_d.step();

            // --- generator phase ---
            let parts = generator_parts(&models, &s, &mask_s, &r, &mask_r, &weights)?;
            let (total, bd) = total_srcgan_loss(&parts, &weights)?;
            if !bd.total.is_finite() {
                return Err(TranslateError::Divergence {
                    step,
                    term: "total_g".into(),
                });
            }
            opt_d.zero_grad();
            opt_g.zero_grad();
            total.backward();
            opt_g.step();

            acc.adv_sr += bd.adv_sr;
            acc.adv_rs += bd.adv_rs;
            acc.cyc += bd.cyc;
            acc.id += bd.id;
            acc.edge += bd.edge;
            acc.mean += bd.mean;
            acc.var += bd.var;
            acc.total += bd.total;
            acc_d += loss_d_val;
            step += 1;
        }
        let inv = 1.0 / batches as f64;
        let breakdown = LossBreakdown {
            adv_sr: acc.adv_sr * inv,
            adv_rs: acc.adv_rs * inv,
            cyc: acc.cyc * inv,
            id: acc.id * inv,
            edge: acc.edge * inv,
            mean: acc.mean * inv,
            var: acc.var * inv,
            total: acc.total * inv,
        };
        history.push(EpochLosses {
            epoch,
            breakdown,
            loss_d: acc_d * inv,
        });

        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs
        {
            save_models(out_dir, &models, cfg, step, Some(epoch))?;
        }
    }

    let (g_sr_path, g_rs_path) = save_models(out_dir, &models, cfg, step, None)?;
    write_history_csv(&out_dir.join("history.csv"), &history)?;
    Ok(TranslateOutcome {
        history,
        g_sr_path,
        g_rs_path,
    })
}

fn save_models(
    out_dir: &Path,
    models: &TranslatorModels<f32>,
    cfg: &TranslateConfig,
    step: usize,
    epoch: Option<usize>,
) -> Result<(PathBuf, PathBuf), TranslateError> {
    let step = step as u64;
    let suffix = epoch.map(|e| format!(".epoch{e}")).unwrap_or_default();
    let g_sr_path = out_dir.join(format!("g_sr{suffix}.ckpt"));
    let g_rs_path = out_dir.join(format!("g_rs{suffix}.ckpt"));
    save_checkpoint(&g_sr_path, "generator", &cfg.generator, cfg.seed, step, &models.g_sr.params())?;
    save_checkpoint(&g_rs_path, "generator", &cfg.generator, cfg.seed, step, &models.g_rs.params())?;
    save_checkpoint(
        &out_dir.join(format!("d_s{suffix}.ckpt")),
        "discriminator",
        &cfg.discriminator,
        cfg.seed,
        step,
        &models.d_s.params(),
    )?;
    save_checkpoint(
        &out_dir.join(format!("d_r{suffix}.ckpt")),
        "discriminator",
        &cfg.discriminator,
        cfg.seed,
        step,
        &models.d_r.params(),
    )?;
    Ok((g_sr_path, g_rs_path))
}

/// Load a generator checkpoint into a ready-to-run model.
pub fn load_generator(path: &Path) -> Result<(GeneratorNet<f32>, GeneratorSpec), TranslateError> {
    let ckpt = load_checkpoint(path, "generator")?;
    let spec: GeneratorSpec = ckpt.spec_as()?;
    let net = GeneratorNet::<f32>::build(&spec, 0)?;
    ckpt.apply(&net.params())?;
    Ok((net, spec))
}

/// Run a trained source-to-target generator over a whole dataset. Output
/// images are the translated, re-quantized renders; masks are carried over
/// byte-for-byte from the source (the structure-retention premise).
pub fn translate_dataset(
    generator_ckpt: &Path,
    source: &Dataset,
    out_root: &Path,
) -> Result<DatasetManifest, TranslateError> {
    if source.is_empty() {
        return Err(DataError::Empty.into());
    }
    let (net, _spec) = load_generator(generator_ckpt)?;
    let (h, w) = source.samples[0].dims();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(TranslateError::Config(format!(
            "generator requires dims divisible by 4, dataset is {h}x{w}"
        )));
    }

    let mut entries = Vec::with_capacity(source.len());
    for sample in &source.samples {
        let (arr, _) = batch_arrays::<f32>(&[sample])?;
        let out: ArrayD<f32> = net.forward(&Tensor::constant(arr)).to_array();
        let mut image = ndarray::Array2::<f32>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                image[[y, x]] = (out[[0, 0, y, x]].clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
        let translated = ImageSample {
            id: sample.id.clone(),
            image,
            mask: sample.mask.clone(),
            domain: source.manifest.domain,
        };
        save_sample(out_root, &translated)?;
        entries.push(ManifestEntry {
            id: translated.id.clone(),
            image: format!("images/{}.png", translated.id),
            mask: format!("masks/{}.png", translated.id),
            split: Split::Train,
        });
    }
    let manifest = DatasetManifest {
        version: 1,
        domain: source.manifest.domain,
        entries,
        provenance: Some(format!(
            "translated with generator checkpoint {}",
            generator_ckpt.display()
        )),
    };
    save_manifest(out_root, &manifest)?;
    Ok(manifest)
}
