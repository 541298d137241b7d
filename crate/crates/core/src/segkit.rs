//! Segmentation training: plain multi-loss training and the
//! domain-adversarial variant with a gradient-reversed domain classifier,
//! over mixed synthetic/real batches with k-fold cross-validation on the
//! real set.

use crate::datakit::{batch_arrays, DataError, Dataset, ImageSample, NUM_CLASSES};
use crate::evalkit::{miou, mmiou, EvalError};
use crate::losses::{
    boundary_aware_loss, domain_bce_loss, generalized_dice_loss, surface_loss, LossError,
    LossWeights,
};
use crate::nn::{
    save_checkpoint, softmax_channels, Adam, DomainClassifierNet, DomainClassifierSpec, NnError,
    SegmenterNet, SegmenterSpec,
};
use crate::tensor::Tensor;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
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
pub enum SegMode {
    Ritnet,
    Dann,
}

impl std::str::FromStr for SegMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ritnet" => Ok(SegMode::Ritnet),
            "dann" => Ok(SegMode::Dann),
            other => Err(format!("unknown seg mode '{other}'; expected ritnet or dann")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegTrainConfig {
    pub mode: SegMode,
    /// Source images used for training (truncates the dataset if smaller).
    pub m: usize,
    /// Real images drawn into training batches (per fold).
    pub n_real: usize,
    /// Explicit epoch count; `None` falls back to the published schedule
    /// scaled by `epoch_multiplier`.
    pub epochs: Option<usize>,
    pub epoch_multiplier: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    /// Linear ramp of the reversal scale from 0 to `weights.grl_scale`
    /// over training (off by default).
    pub grl_ramp: bool,
    pub folds: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub bal_beta: f64,
    pub segmenter: SegmenterSpec,
    pub domain_head: DomainClassifierSpec,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            mode: SegMode::Ritnet,
            m: 64,
            n_real: 0,
            epochs: Some(4),
            epoch_multiplier: 1.0,
            batch_size: 4,
            weights: LossWeights::default(),
            grl_ramp: false,
            folds: 3,
            seed: 0,
            learning_rate: 1e-3,
            bal_beta: 10.0,
            segmenter: SegmenterSpec::default(),
            domain_head: DomainClassifierSpec::default(),
        }
    }
}

/// Published epoch schedule over (M source images, N real images), with
/// nearest-cell fallback for off-grid sizes.
pub fn epoch_schedule(m: usize, n: usize) -> usize {
    const MS: [usize; 5] = [64, 256, 1024, 2048, 4096];
    const NS: [usize; 3] = [0, 64, 8192];
    const TABLE: [[usize; 5]; 3] = [
        [1600, 800, 200, 100, 70],
        [400, 150, 120, 100, 70],
        [120, 100, 80, 70, 60],
    ];
    let nearest = |grid: &[usize], v: usize| -> usize {
        grid.iter()
            .enumerate()
            .min_by_key(|(_, &g)| g.abs_diff(v))
            .map(|(i, _)| i)
            .unwrap()
    };
    TABLE[nearest(&NS, n)][nearest(&MS, m)]
}

impl SegTrainConfig {
    pub fn effective_epochs(&self) -> usize {
        match self.epochs {
            Some(e) => e,
            None => ((epoch_schedule(self.m, self.n_real) as f64 * self.epoch_multiplier)
                .round() as usize)
                .max(1),
        }
    }

    pub fn validate(&self, target_len: usize) -> Result<(), SegError> {
        self.weights.validate()?;
        if self.m == 0 {
            return Err(SegError::Config("m must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(SegError::Config("batch_size must be >= 1".into()));
        }
        if self.folds < 2 {
            return Err(SegError::Config("folds must be >= 2".into()));
        }
        if target_len < self.folds {
            return Err(SegError::Config(format!(
                "target set of {target_len} images cannot form {} folds",
                self.folds
            )));
        }
        if self.mode == SegMode::Dann && self.n_real == 0 {
            return Err(SegError::Config(
                "domain-adversarial mode requires n_real >= 1 (with 0 real images the \
                 domain classifier has a single-class problem; use ritnet mode)"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// One element of a mixed batch: index plus domain label (0 source, 1 real).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchRef {
    pub target_side: bool,
    pub index: usize,
}

/// Shuffle the M source refs and the fixed N target refs together and chunk
/// into batches. One epoch visits each chosen sample exactly once.
pub fn mix_batches(
    m_source: usize,
    target_subset: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<BatchRef>> {
    let mut refs: Vec<BatchRef> = (0..m_source)
        .map(|i| BatchRef {
            target_side: false,
            index: i,
        })
        .chain(target_subset.iter().map(|&i| BatchRef {
            target_side: true,
            index: i,
        }))
        .collect();
    refs.shuffle(rng);
    refs.chunks(batch_size).map(|c| c.to_vec()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    pub val_miou: f64,
    /// Mean domain-classifier loss per epoch (empty in ritnet mode).
    pub domain_loss_history: Vec<f64>,
    pub seg_loss_history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegOutcome {
    pub fold_metrics: Vec<FoldMetrics>,
    pub miou_mean: f64,
    pub miou_std: f64,
    pub checkpoints: Vec<PathBuf>,
}

/// Argmax class prediction for one sample.
pub fn predict_mask(net: &SegmenterNet<f32>, sample: &ImageSample) -> Result<Array2<u8>, SegError> {
    let (arr, _) = batch_arrays::<f32>(&[sample])?;
    let probs = net.probabilities(&Tensor::constant(arr));
    let v = probs.to_array();
    let (h, w) = sample.dims();
    let k = v.shape()[1];
    let mut out = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            for c in 1..k {
                if v[[0, c, y, x]] > v[[0, best, y, x]] {
                    best = c;
                }
            }
            out[[y, x]] = best as u8;
        }
    }
    Ok(out)
}

/// Mean mIoU of a model over a slice of samples.
pub fn evaluate_miou(net: &SegmenterNet<f32>, samples: &[&ImageSample]) -> Result<f64, SegError> {
    if samples.is_empty() {
        return Err(DataError::Empty.into());
    }
    let mut acc = 0.0;
    for s in samples {
        let pred = predict_mask(net, s)?;
        acc += miou(&pred, &s.mask, NUM_CLASSES)?;
    }
    Ok(acc / samples.len() as f64)
}

/// Contiguous k-fold split of indices `0..len`.
pub fn fold_indices(len: usize, folds: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); folds];
    for i in 0..len {
        out[i * folds / len.max(1)].push(i);
    }
    out
}

/// K-fold training over the real set. Each fold trains a fresh model on M
/// source images plus N real images drawn from the training folds, then
/// records validation mIoU on the held-out fold.
pub fn train_segmenter(
    source: &Dataset,
    target: &Dataset,
    cfg: &SegTrainConfig,
    out_dir: &Path,
) -> Result<SegOutcome, SegError> {
    cfg.validate(target.len())?;
    if source.is_empty() {
        return Err(DataError::Empty.into());
    }
    std::fs::create_dir_all(out_dir).map_err(|source| SegError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let m = cfg.m.min(source.len());
    let epochs = cfg.effective_epochs();
    let folds = fold_indices(target.len(), cfg.folds);

    let mut fold_metrics = Vec::with_capacity(cfg.folds);
    let mut checkpoints = Vec::with_capacity(cfg.folds);
    for (fold, holdout) in folds.iter().enumerate() {
        let train_pool: Vec<usize> = (0..target.len()).filter(|i| !holdout.contains(i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(fold as u64 * 7919));
        // fixed real subset for the whole fold run
        let mut pool = train_pool.clone();
        pool.shuffle(&mut rng);
        let n_real = cfg.n_real.min(pool.len());
        let target_subset: Vec<usize> = pool.into_iter().take(n_real).collect();

        let net = SegmenterNet::<f32>::build(&cfg.segmenter, cfg.seed.wrapping_add(31 + fold as u64))?;
        let domain_head = if cfg.mode == SegMode::Dann {
            Some(DomainClassifierNet::<f32>::build(
                &cfg.domain_head,
                cfg.seed.wrapping_add(67 + fold as u64),
            )?)
        } else {
            None
        };
        let mut params: Vec<Tensor<f32>> = net.params().into_iter().map(|(_, t)| t).collect();
        if let Some(head) = &domain_head {
            params.extend(head.params().into_iter().map(|(_, t)| t));
        }
        let mut opt = Adam::new(params, cfg.learning_rate, 0.9, 0.999);

        let mut seg_history = Vec::with_capacity(epochs);
        let mut domain_history = Vec::new();
        let total_steps = epochs
            * (m + target_subset.len()).div_ceil(cfg.batch_size).max(1);
        let mut step = 0usize;
        for epoch in 0..epochs {
            let mut erng =
                ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(fold as u64 * 7919 + 1 + epoch as u64));
            let batches = mix_batches(m, &target_subset, cfg.batch_size, &mut erng);
            let mut seg_acc = 0.0;
            let mut dom_acc = 0.0;
            let mut dom_batches = 0usize;
            for batch in &batches {
                let samples: Vec<&ImageSample> = batch
                    .iter()
                    .map(|r| {
                        if r.target_side {
                            &target.samples[r.index]
                        } else {
                            &source.samples[r.index]
                        }
                    })
                    .collect();
                let labels: Vec<f64> = batch
                    .iter()
                    .map(|r| if r.target_side { 1.0 } else { 0.0 })
                    .collect();
                let (arr, masks) = batch_arrays::<f32>(&samples)?;
                let images = Tensor::constant(arr);

                let (logits, bottleneck) = net.forward_full(&images);
                let probs = softmax_channels(&logits);
                let gdl = generalized_dice_loss(&probs, &masks, NUM_CLASSES)?;
                let bal = boundary_aware_loss(&logits, &masks, cfg.bal_beta)?;
                let surf = surface_loss(&probs, &masks, NUM_CLASSES)?;
                let mut total = gdl
                    .mul_scalar(cfg.weights.w_gdl as f32)
                    .add(&bal.mul_scalar(cfg.weights.w_bal as f32))
                    .add(&surf.mul_scalar(cfg.weights.w_surf as f32));
                let seg_val = total.item() as f64;

                // domain confusion is only meaningful on batches that
                // contain both domains
                let mixed = labels.iter().any(|&l| l == 0.0) && labels.iter().any(|&l| l == 1.0);
                let mut dom_val = 0.0;
                if let (Some(head), true) = (&domain_head, mixed) {
                    let scale = if cfg.grl_ramp {
                        cfg.weights.grl_scale * (step as f64 / total_steps.max(1) as f64)
                    } else {
                        cfg.weights.grl_scale
                    };
                    let latent = bottleneck.flatten_batch().gradient_reversal(scale as f32);
                    let pred = head.forward(&latent);
                    let dom = domain_bce_loss(&pred, &labels)?;
                    dom_val = dom.item() as f64;
                    dom_batches += 1;
                    total = total.add(&dom);
                }
                let total_val = total.item() as f64;
                if !total_val.is_finite() {
                    return Err(SegError::Divergence {
                        step,
                        term: "total".into(),
                    });
                }
                opt.zero_grad();
                total.backward();
                opt.step();
                seg_acc += seg_val;
                dom_acc += dom_val;
                step += 1;
            }
            seg_history.push(seg_acc / batches.len() as f64);
            if domain_head.is_some() {
                domain_history.push(dom_acc / dom_batches.max(1) as f64);
            }
        }

        let val_samples: Vec<&ImageSample> = holdout.iter().map(|&i| &target.samples[i]).collect();
        let val_miou = evaluate_miou(&net, &val_samples)?;
        let ckpt = out_dir.join(format!("seg_fold{fold}.ckpt"));
        save_checkpoint(
            &ckpt,
            "segmenter",
            &cfg.segmenter,
            cfg.seed,
            step as u64,
            &net.params(),
        )?;
        checkpoints.push(ckpt);
        fold_metrics.push(FoldMetrics {
            fold,
            val_miou,
            domain_loss_history: domain_history,
            seg_loss_history: seg_history,
        });
    }

    let vals: Vec<f64> = fold_metrics.iter().map(|f| f.val_miou).collect();
    let (miou_mean, miou_std) = mmiou(&vals)?;
    Ok(SegOutcome {
        fold_metrics,
        miou_mean,
        miou_std,
        checkpoints,
    })
}
