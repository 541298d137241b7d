//! Metric-learned dataset filtering: pair sampling, contrastive encoder
//! training, real-centroid computation, and distance-threshold filtering.

use crate::datakit::{batch_arrays, DataError, Dataset, DatasetManifest, ImageSample};
use crate::losses::{contrastive_pair_loss, LossError};
use crate::nn::{
    load_checkpoint, save_checkpoint, Adam, NnError, SiameseEncoderNet, SiameseEncoderSpec,
};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training diverged at pair {pair}: loss became non-finite")]
    Divergence { pair: usize },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Latent vector of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEmbedding {
    pub id: String,
    pub vector: Vec<f64>,
}

/// Mean embedding of the real (target) set plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidModel {
    pub centroid: Vec<f64>,
    pub encoder_checkpoint: String,
    pub dim: usize,
}

/// Which side of the domain gap a pair element comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// One training pair, by index into its dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub a: (Side, usize),
    pub b: (Side, usize),
    pub same_domain: bool,
}

/// Emit `count` pairs in a fixed cycle of kinds — same-source, same-target,
/// cross, cross (1:1:2) — with no pair ever containing one sample twice.
pub fn sample_pairs(
    source: &Dataset,
    target: &Dataset,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Pair>, FilterError> {
    if source.len() < 2 || target.len() < 2 {
        return Err(FilterError::Config(
            "pair sampling needs at least 2 samples per domain".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(count);
    let distinct = |n: usize, rng: &mut ChaCha8Rng| {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        (i, j)
    };
    for k in 0..count {
        let pair = match k % 4 {
            0 => {
                let (i, j) = distinct(source.len(), rng);
                Pair {
                    a: (Side::Source, i),
                    b: (Side::Source, j),
                    same_domain: true,
                }
            }
            1 => {
                let (i, j) = distinct(target.len(), rng);
                Pair {
                    a: (Side::Target, i),
                    b: (Side::Target, j),
                    same_domain: true,
                }
            }
            _ => Pair {
                a: (Side::Source, rng.gen_range(0..source.len())),
                b: (Side::Target, rng.gen_range(0..target.len())),
                same_domain: false,
            },
        };
        pairs.push(pair);
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SiameseTrainConfig {
    pub encoder: SiameseEncoderSpec,
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SiameseTrainConfig {
    fn default() -> Self {
        SiameseTrainConfig {
            encoder: SiameseEncoderSpec::default(),
            epochs: 5,
            pairs_per_epoch: 500,
            margin: 1.0,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

pub struct SiameseOutcome {
    pub checkpoint: PathBuf,
    /// Mean contrastive loss per epoch.
    pub history: Vec<f64>,
}

/// Contrastive training of the embedding encoder on mixed pair kinds.
pub fn train_siamese(
    source: &Dataset,
    target: &Dataset,
    cfg: &SiameseTrainConfig,
    out_dir: &Path,
) -> Result<SiameseOutcome, FilterError> {
    if cfg.epochs == 0 || cfg.pairs_per_epoch == 0 {
        return Err(FilterError::Config("epochs and pairs_per_epoch must be >= 1".into()));
    }
    if source.is_empty() || target.is_empty() {
        return Err(DataError::Empty.into());
    }
    std::fs::create_dir_all(out_dir).map_err(|source| FilterError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let net = SiameseEncoderNet::<f32>::build(&cfg.encoder, cfg.seed.wrapping_add(1))?;
    let mut opt = Adam::new(
        net.params().into_iter().map(|(_, t)| t).collect(),
        cfg.learning_rate,
        0.9,
        0.999,
    );

    let sample_of = |p: (Side, usize)| -> &ImageSample {
        match p.0 {
            Side::Source => &source.samples[p.1],
            Side::Target => &target.samples[p.1],
        }
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut pair_idx = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2000 + epoch as u64));
        let pairs = sample_pairs(source, target, cfg.pairs_per_epoch, &mut rng)?;
        let mut acc = 0.0f64;
        for p in &pairs {
            let (a_arr, _) = batch_arrays::<f32>(&[sample_of(p.a)])?;
            let (b_arr, _) = batch_arrays::<f32>(&[sample_of(p.b)])?;
            let ea = net.embed(&Tensor::constant(a_arr));
            let eb = net.embed(&Tensor::constant(b_arr));
            let loss = contrastive_pair_loss(&ea, &eb, p.same_domain, cfg.margin)?;
            let v = loss.item() as f64;
            if !v.is_finite() {
                return Err(FilterError::Divergence { pair: pair_idx });
            }
            opt.zero_grad();
            loss.backward();
            opt.step();
            acc += v;
            pair_idx += 1;
        }
        history.push(acc / pairs.len() as f64);
    }

    let checkpoint = out_dir.join("siamese.ckpt");
    save_checkpoint(
        &checkpoint,
        "siamese",
        &cfg.encoder,
        cfg.seed,
        pair_idx as u64,
        &net.params(),
    )?;
    Ok(SiameseOutcome { checkpoint, history })
}

/// Load a trained encoder checkpoint.
pub fn load_encoder(path: &Path) -> Result<(SiameseEncoderNet<f32>, SiameseEncoderSpec), FilterError> {
    let ckpt = load_checkpoint(path, "siamese")?;
    let spec: SiameseEncoderSpec = ckpt.spec_as()?;
    let net = SiameseEncoderNet::<f32>::build(&spec, 0)?;
    ckpt.apply(&net.params())?;
    Ok((net, spec))
}

/// Embed one sample to its latent vector.
pub fn embed_sample(
    encoder: &SiameseEncoderNet<f32>,
    sample: &ImageSample,
) -> Result<Vec<f64>, FilterError> {
    let (arr, _) = batch_arrays::<f32>(&[sample])?;
    let e = encoder.embed(&Tensor::constant(arr));
    let out = e.value().iter().map(|&v| v as f64).collect();
    Ok(out)
}

/// Exact arithmetic-mean centroid of all real embeddings.
pub fn compute_centroid(
    encoder: &SiameseEncoderNet<f32>,
    real: &Dataset,
    encoder_checkpoint: &str,
) -> Result<CentroidModel, FilterError> {
    if real.is_empty() {
        return Err(DataError::Empty.into());
    }
    let mut sum: Option<Vec<f64>> = None;
    for s in &real.samples {
        let e = embed_sample(encoder, s)?;
        match &mut sum {
            None => sum = Some(e),
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(e.iter()) {
                    *a += v;
                }
            }
        }
    }
    let mut centroid = sum.unwrap();
    let n = real.len() as f64;
    for c in centroid.iter_mut() {
        *c /= n;
    }
    let dim = centroid.len();
    Ok(CentroidModel {
        centroid,
        encoder_checkpoint: encoder_checkpoint.to_string(),
        dim,
    })
}

/// Squared L2 distance between two vectors.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared L2 distance from a sample's embedding to the real centroid.
pub fn distance_to_centroid(
    encoder: &SiameseEncoderNet<f32>,
    sample: &ImageSample,
    centroid: &CentroidModel,
) -> Result<f64, FilterError> {
    let e = embed_sample(encoder, sample)?;
    if e.len() != centroid.dim {
        return Err(FilterError::Config(format!(
            "embedding dim {} != centroid dim {}",
            e.len(),
            centroid.dim
        )));
    }
    Ok(squared_distance(&e, &centroid.centroid))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FilterReport {
    pub kept: usize,
    pub total: usize,
    pub threshold: f64,
    pub empty_warning: bool,
}

/// Keep exactly the samples with distance-to-centroid strictly below the
/// threshold; input order preserved.
pub fn filter_dataset(
    encoder: &SiameseEncoderNet<f32>,
    dataset: &Dataset,
    centroid: &CentroidModel,
    threshold: f64,
) -> Result<(Dataset, FilterReport), FilterError> {
    if !(threshold > 0.0) {
        return Err(FilterError::Config("threshold must be > 0".into()));
    }
    let mut samples = Vec::new();
    let mut entries = Vec::new();
    for (sample, entry) in dataset.samples.iter().zip(dataset.manifest.entries.iter()) {
        let d = distance_to_centroid(encoder, sample, centroid)?;
        if d < threshold {
            samples.push(sample.clone());
            entries.push(entry.clone());
        }
    }
    let report = FilterReport {
        kept: samples.len(),
        total: dataset.len(),
        threshold,
        empty_warning: samples.is_empty(),
    };
    if report.empty_warning {
        eprintln!(
            "warning: filter threshold {threshold} removed all {} samples",
            report.total
        );
    }
    let manifest = DatasetManifest {
        version: 1,
        domain: dataset.manifest.domain,
        entries,
        provenance: Some(format!(
            "filtered at threshold {threshold} with encoder {}",
            centroid.encoder_checkpoint
        )),
    };
    Ok((Dataset { manifest, samples }, report))
}

/// Mean distance-to-real-centroid over a dataset.
pub fn mean_distance(
    encoder: &SiameseEncoderNet<f32>,
    dataset: &Dataset,
    centroid: &CentroidModel,
) -> Result<f64, FilterError> {
    if dataset.is_empty() {
        return Err(DataError::Empty.into());
    }
    let mut acc = 0.0;
    for s in &dataset.samples {
        acc += distance_to_centroid(encoder, s, centroid)?;
    }
    Ok(acc / dataset.len() as f64)
}

/// CSV export: one row per sample with embedding components and distance.
pub fn export_embeddings_csv(
    encoder: &SiameseEncoderNet<f32>,
    dataset: &Dataset,
    centroid: &CentroidModel,
    path: &Path,
) -> Result<(), FilterError> {
    let mut body = String::from("id");
    for i in 0..centroid.dim {
        body.push_str(&format!(",e{i}"));
    }
    body.push_str(",distance\n");
    for s in &dataset.samples {
        let e = embed_sample(encoder, s)?;
        let d = squared_distance(&e, &centroid.centroid);
        body.push_str(&s.id);
        for v in &e {
            body.push_str(&format!(",{v}"));
        }
        body.push_str(&format!(",{d}\n"));
    }
    let mut f = std::fs::File::create(path).map_err(|source| FilterError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(body.as_bytes()).map_err(|source| FilterError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{generate_samples, ManifestEntry, Split, Style};
    use approx::assert_abs_diff_eq;

    fn toy_dataset(style: Style, n: usize, seed: u64) -> Dataset {
        let samples = generate_samples(n, style, seed, (32, 32)).unwrap();
        let entries = samples
            .iter()
            .map(|s| ManifestEntry {
                id: s.id.clone(),
                image: format!("images/{}.png", s.id),
                mask: format!("masks/{}.png", s.id),
                split: Split::Train,
            })
            .collect();
        Dataset {
            manifest: DatasetManifest {
                version: 1,
                domain: style.domain(),
                entries,
                provenance: None,
            },
            samples,
        }
    }

    fn tiny_encoder() -> SiameseEncoderSpec {
        SiameseEncoderSpec {
            width: 4,
            latent_dim: 2,
            ..SiameseEncoderSpec::default()
        }
    }

    fn fresh_encoder(seed: u64) -> SiameseEncoderNet<f32> {
        SiameseEncoderNet::build(&tiny_encoder(), seed).unwrap()
    }

    #[test]
    fn pair_proportions_and_distinct_ids() {
        let src = toy_dataset(Style::SyntheticLike, 2, 1);
        let tgt = toy_dataset(Style::RealLike, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = sample_pairs(&src, &tgt, 4, &mut rng).unwrap();
        let ss = pairs.iter().filter(|p| p.same_domain && p.a.0 == Side::Source).count();
        let st = pairs.iter().filter(|p| p.same_domain && p.a.0 == Side::Target).count();
        let cross = pairs.iter().filter(|p| !p.same_domain).count();
        assert_eq!((ss, st, cross), (1, 1, 2));
        for p in &pairs {
            assert!(p.a != p.b, "pair uses the same sample twice: {p:?}");
        }
        // determinism
        let mut rng2 = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(pairs, sample_pairs(&src, &tgt, 4, &mut rng2).unwrap());
        // too-small dataset rejected
        let one = toy_dataset(Style::SyntheticLike, 1, 3);
        assert!(sample_pairs(&one, &tgt, 4, &mut rng).is_err());
    }

    #[test]
    fn centroid_mean_and_order_independence() {
        let real = toy_dataset(Style::RealLike, 4, 5);
        let enc = fresh_encoder(0);
        let c = compute_centroid(&enc, &real, "test").unwrap();
        // oracle: mean of individual embeddings
        let embs: Vec<Vec<f64>> = real
            .samples
            .iter()
            .map(|s| embed_sample(&enc, s).unwrap())
            .collect();
        for i in 0..c.dim {
            let mean = embs.iter().map(|e| e[i]).sum::<f64>() / embs.len() as f64;
            assert_abs_diff_eq!(c.centroid[i], mean, epsilon = 1e-9);
        }
        // reversed order
        let mut rev = real.clone();
        rev.samples.reverse();
        rev.manifest.entries.reverse();
        let c2 = compute_centroid(&enc, &rev, "test").unwrap();
        for (a, b) in c.centroid.iter().zip(c2.centroid.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        // singleton dataset: centroid is the embedding itself
        let single = toy_dataset(Style::RealLike, 1, 6);
        let c1 = compute_centroid(&enc, &single, "test").unwrap();
        assert_eq!(c1.centroid, embed_sample(&enc, &single.samples[0]).unwrap());
    }

    #[test]
    fn squared_distance_closed_form() {
        assert_abs_diff_eq!(squared_distance(&[3.0, 4.0], &[0.0, 0.0]), 25.0);
        assert_abs_diff_eq!(squared_distance(&[1.0, 1.0], &[1.0, 1.0]), 0.0);
        // componentwise oracle on a random-ish vector
        let a = [0.3f64, -1.2, 2.0];
        let b = [-0.5f64, 0.5, 0.25];
        let oracle: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
        assert_abs_diff_eq!(squared_distance(&a, &b), oracle, epsilon = 1e-12);
    }

    #[test]
    fn filter_matches_bruteforce_scan() {
        let src = toy_dataset(Style::SyntheticLike, 6, 7);
        let real = toy_dataset(Style::RealLike, 4, 8);
        let enc = fresh_encoder(1);
        let c = compute_centroid(&enc, &real, "test").unwrap();

        // identity filter
        let (all, rep) = filter_dataset(&enc, &src, &c, f64::INFINITY).unwrap();
        assert_eq!(all.len(), src.len());
        assert_eq!(rep.kept, 6);

        // brute-force scan at the median distance
        let mut ds: Vec<f64> = src
            .samples
            .iter()
            .map(|s| distance_to_centroid(&enc, s, &c).unwrap())
            .collect();
        let mut sorted = ds.clone();
        sorted.sort_by(f64::total_cmp);
        let thr = sorted[3];
        let (kept, rep) = filter_dataset(&enc, &src, &c, thr).unwrap();
        let expect: Vec<&ImageSample> = src
            .samples
            .iter()
            .zip(ds.iter())
            .filter(|(_, &d)| d < thr)
            .map(|(s, _)| s)
            .collect();
        assert_eq!(kept.len(), expect.len());
        for (a, b) in kept.samples.iter().zip(expect.iter()) {
            assert_eq!(a.id, b.id); // order preserved
        }
        assert_eq!(rep.total, 6);

        // below-min threshold -> empty with warning
        ds.sort_by(f64::total_cmp);
        let (empty, rep) = filter_dataset(&enc, &src, &c, (ds[0] / 2.0).max(1e-30)).unwrap();
        assert!(empty.is_empty() && rep.empty_warning);

        // mu_d drops when a strict subset is kept
        if kept.len() > 0 && kept.len() < src.len() {
            let mu_all = mean_distance(&enc, &src, &c).unwrap();
            let mu_kept = mean_distance(&enc, &kept, &c).unwrap();
            assert!(mu_kept < mu_all);
        }
    }

    #[test]
    fn mean_distance_singleton_and_empty() {
        let src = toy_dataset(Style::SyntheticLike, 1, 7);
        let real = toy_dataset(Style::RealLike, 2, 8);
        let enc = fresh_encoder(2);
        let c = compute_centroid(&enc, &real, "test").unwrap();
        let d = distance_to_centroid(&enc, &src.samples[0], &c).unwrap();
        assert_abs_diff_eq!(mean_distance(&enc, &src, &c).unwrap(), d, epsilon = 1e-12);
        let empty = Dataset {
            manifest: DatasetManifest {
                version: 1,
                domain: src.manifest.domain,
                entries: vec![],
                provenance: None,
            },
            samples: vec![],
        };
        assert!(mean_distance(&enc, &empty, &c).is_err());
    }

    #[test]
    fn training_separates_domains() {
        let src = toy_dataset(Style::SyntheticLike, 12, 10);
        let tgt = toy_dataset(Style::RealLike, 12, 11);
        let dir = tempfile::tempdir().unwrap();
        let cfg = SiameseTrainConfig {
            encoder: tiny_encoder(),
            epochs: 2,
            pairs_per_epoch: 120,
            seed: 3,
            ..SiameseTrainConfig::default()
        };
        let out = train_siamese(&src, &tgt, &cfg, dir.path()).unwrap();
        assert!(out.history.iter().all(|v| v.is_finite()));
        let (enc, _) = load_encoder(&out.checkpoint).unwrap();

        // held-out pairs: mean cross-domain distance exceeds same-domain
        let src_h = toy_dataset(Style::SyntheticLike, 6, 20);
        let tgt_h = toy_dataset(Style::RealLike, 6, 21);
        let emb = |ds: &Dataset| -> Vec<Vec<f64>> {
            ds.samples.iter().map(|s| embed_sample(&enc, s).unwrap()).collect()
        };
        let (es, et) = (emb(&src_h), emb(&tgt_h));
        let mut same = vec![];
        let mut cross = vec![];
        for i in 0..es.len() {
            for j in 0..es.len() {
                if i < j {
                    same.push(squared_distance(&es[i], &es[j]).sqrt());
                    same.push(squared_distance(&et[i], &et[j]).sqrt());
                }
                cross.push(squared_distance(&es[i], &et[j]).sqrt());
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&cross) > mean(&same),
            "cross {} <= same {}",
            mean(&cross),
            mean(&same)
        );

        // deterministic post-training embedding
        let e1 = embed_sample(&enc, &src_h.samples[0]).unwrap();
        let e2 = embed_sample(&enc, &src_h.samples[0]).unwrap();
        assert_eq!(e1, e2);
    }
}
