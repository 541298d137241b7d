//! Every differentiable training objective as a pure function of model
//! outputs, masks, and constants.
//!
//! Image tensors are `[N, C, H, W]`; masks are `ndarray` `[N, H, W]` of
//! class ids in `0..K`. All losses are scalar (0-dim) tensors on the
//! autodiff graph unless noted otherwise.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Coefficients of the full translation objective plus segmentation and
/// metric-learning weights.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub gamma_cyc: f64,
    pub gamma_id: f64,
    pub gamma_edge: f64,
    pub gamma_mean: f64,
    pub gamma_var: f64,
    pub w_gdl: f64,
    pub w_bal: f64,
    pub w_surf: f64,
    pub grl_scale: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma_cyc: 10.0,
            gamma_id: 10.0,
            gamma_edge: 0.1,
            gamma_mean: 0.0,
            gamma_var: 60.0,
            w_gdl: 1.0,
            w_bal: 1.0,
            w_surf: 0.5,
            grl_scale: 1.0,
            margin: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [
            self.gamma_cyc,
            self.gamma_id,
            self.gamma_edge,
            self.gamma_mean,
            self.gamma_var,
            self.w_gdl,
            self.w_bal,
            self.w_surf,
            self.grl_scale,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(LossError::InvalidWeights(
                "all weights must be finite and >= 0".into(),
            ));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(LossError::InvalidWeights("margin must be > 0".into()));
        }
        Ok(())
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, ctx: &str) -> Result<(), LossError> {
    if a.shape() != b.shape() {
        return Err(LossError::ShapeMismatch(format!(
            "{ctx}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Adversarial / cycle / identity

/// Standard GAN objective on raw logits, in numerically stable softplus
/// form, with the non-saturating generator loss. Returns `(loss_D, loss_G)`.
pub fn adversarial_loss<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    // -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
    let loss_d = d_real.neg().softplus().mean_all().add(&d_fake.softplus().mean_all());
    let loss_g = d_fake.neg().softplus().mean_all();
    (loss_d, loss_g)
}

fn l1_mean<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    a.sub(b).abs().mean_all()
}

/// Cycle-consistency loss: per-pixel L1 between originals and round-trip
/// reconstructions, one term per direction.
pub fn cycle_loss<T: Scalar>(
    s: &Tensor<T>,
    recovered_s: &Tensor<T>,
    r: &Tensor<T>,
    recovered_r: &Tensor<T>,
) -> Result<Tensor<T>, LossError> {
    same_shape(s, recovered_s, "cycle s")?;
    same_shape(r, recovered_r, "cycle r")?;
    Ok(l1_mean(recovered_s, s).add(&l1_mean(recovered_r, r)))
}

/// Identity loss: each generator applied to an image already in its output
/// domain should act as the identity.
pub fn identity_loss<T: Scalar>(
    s: &Tensor<T>,
    g_rs_of_s: &Tensor<T>,
    r: &Tensor<T>,
    g_sr_of_r: &Tensor<T>,
) -> Result<Tensor<T>, LossError> {
    same_shape(s, g_rs_of_s, "identity s")?;
    same_shape(r, g_sr_of_r, "identity r")?;
    Ok(l1_mean(g_rs_of_s, s).add(&l1_mean(g_sr_of_r, r)))
}

// ---------------------------------------------------------------------------
// Edge retaining

/// 3x3 Sobel horizontal/vertical response with replicate padding.
/// Input `[N,1,H,W]`, output `[N,2,H,W]` with channels `(g_x, g_y)`.
pub fn sobel_edges<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>, LossError> {
    let shape = image.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(LossError::ShapeMismatch(format!(
            "sobel expects [N,1,H,W], got {shape:?}"
        )));
    }
    let gx = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    let gy = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let mut w = ArrayD::<T>::zeros(IxDyn(&[2, 1, 3, 3]));
    for i in 0..9 {
        w[[0, 0, i / 3, i % 3]] = T::c(gx[i]);
        w[[1, 0, i / 3, i % 3]] = T::c(gy[i]);
    }
    let kernel = Tensor::constant(w);
    Ok(image.replicate_pad(1).conv2d(&kernel, None, 1, 0))
}

/// Structure loss: the edge response must agree across original,
/// translated, and recovered images in both translation directions.
pub fn edge_retaining_loss<T: Scalar>(
    s: &Tensor<T>,
    t_sr: &Tensor<T>,
    rec_s: &Tensor<T>,
    r: &Tensor<T>,
    t_rs: &Tensor<T>,
    rec_r: &Tensor<T>,
) -> Result<Tensor<T>, LossError> {
    same_shape(s, t_sr, "edge s/t_sr")?;
    same_shape(s, rec_s, "edge s/rec_s")?;
    same_shape(r, t_rs, "edge r/t_rs")?;
    same_shape(r, rec_r, "edge r/rec_r")?;
    let (es, et_sr, erec_s) = (sobel_edges(s)?, sobel_edges(t_sr)?, sobel_edges(rec_s)?);
    let (er, et_rs, erec_r) = (sobel_edges(r)?, sobel_edges(t_rs)?, sobel_edges(rec_r)?);
    Ok(l1_mean(&et_sr, &es)
        .add(&l1_mean(&et_sr, &erec_s))
        .add(&l1_mean(&et_rs, &er))
        .add(&l1_mean(&et_rs, &erec_r)))
}

// ---------------------------------------------------------------------------
// Per-class color statistics

/// Plain (non-differentiable) per-class statistics of one image batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: Vec<usize>,
    /// `false` marks classes with zero pixels; their mean/var are invalid.
    pub present: Vec<bool>,
}

/// Per-class mean and population variance of `image` pixels under `mask`.
pub fn class_stats(image: &Array2<f32>, mask: &Array2<u8>, k: usize) -> Result<ClassStats, LossError> {
    if image.dim() != mask.dim() {
        return Err(LossError::ShapeMismatch(format!(
            "class_stats {:?} vs {:?}",
            image.dim(),
            mask.dim()
        )));
    }
    if let Some(&bad) = mask.iter().find(|&&m| m as usize >= k) {
        return Err(LossError::InvalidInput(format!("mask value {bad} >= K={k}")));
    }
    let mut sum = vec![0.0f64; k];
    let mut count = vec![0usize; k];
    for (&v, &m) in image.iter().zip(mask.iter()) {
        sum[m as usize] += v as f64;
        count[m as usize] += 1;
    }
    let mean: Vec<f64> = (0..k)
        .map(|c| if count[c] > 0 { sum[c] / count[c] as f64 } else { 0.0 })
        .collect();
    let mut sq = vec![0.0f64; k];
    for (&v, &m) in image.iter().zip(mask.iter()) {
        let d = v as f64 - mean[m as usize];
        sq[m as usize] += d * d;
    }
    let var: Vec<f64> = (0..k)
        .map(|c| if count[c] > 0 { sq[c] / count[c] as f64 } else { 0.0 })
        .collect();
    Ok(ClassStats {
        mean,
        var,
        count: count.clone(),
        present: count.iter().map(|&c| c > 0).collect(),
    })
}

/// Differentiable per-class (mean, variance) of a `[N,1,H,W]` batch pooled
/// over all pixels belonging to each class; `None` for absent classes.
pub fn masked_class_stats<T: Scalar>(
    image: &Tensor<T>,
    mask: &Array3<u8>,
    k: usize,
) -> Result<Vec<Option<(Tensor<T>, Tensor<T>)>>, LossError> {
    let shape = image.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(LossError::ShapeMismatch(format!(
            "expected [N,1,H,W], got {shape:?}"
        )));
    }
    let (n, h, w) = mask.dim();
    if [n, h, w] != [shape[0], shape[2], shape[3]] {
        return Err(LossError::ShapeMismatch(format!(
            "mask {:?} vs image {shape:?}",
            mask.dim()
        )));
    }
    let mut out = Vec::with_capacity(k);
    for class in 0..k {
        let mut ind = ArrayD::<T>::zeros(IxDyn(&[n, 1, h, w]));
        let mut count = 0usize;
        for i in 0..n {
            for y in 0..h {
                for x in 0..w {
                    if mask[[i, y, x]] as usize == class {
                        ind[[i, 0, y, x]] = T::one();
                        count += 1;
                    }
                }
            }
        }
        if count == 0 {
            out.push(None);
            continue;
        }
        let ind = Tensor::constant(ind);
        let inv = T::one() / T::cu(count);
        let mean = image.mul(&ind).sum_all().mul_scalar(inv);
        let centered = image
            .sub(&mean.broadcast_as(&image.shape()))
            .square()
            .mul(&ind)
            .sum_all()
            .mul_scalar(inv);
        out.push(Some((mean, centered)));
    }
    Ok(out)
}

fn color_stat_loss<T: Scalar>(
    t_sr: &Tensor<T>,
    mask_s: &Array3<u8>,
    r: &Tensor<T>,
    mask_r: &Array3<u8>,
    t_rs: &Tensor<T>,
    s: &Tensor<T>,
    k: usize,
    variance: bool,
) -> Result<Tensor<T>, LossError> {
    let pick = |pair: (Tensor<T>, Tensor<T>)| if variance { pair.1 } else { pair.0 };
    let stats_t_sr = masked_class_stats(t_sr, mask_s, k)?;
    let stats_r = masked_class_stats(r, mask_r, k)?;
    let stats_t_rs = masked_class_stats(t_rs, mask_r, k)?;
    let stats_s = masked_class_stats(s, mask_s, k)?;
    let mut total = Tensor::scalar_constant(T::zero());
    for c in 0..k {
        // Classes absent in either operand are skipped.
        if let (Some(a), Some(b)) = (stats_t_sr[c].clone(), stats_r[c].clone()) {
            total = total.add(&pick(a).sub(&pick(b)).abs());
        }
        if let (Some(a), Some(b)) = (stats_t_rs[c].clone(), stats_s[c].clone()) {
            total = total.add(&pick(a).sub(&pick(b)).abs());
        }
    }
    Ok(total)
}

/// Per-class mean retention: translated images keep the target domain's
/// per-class mean intensities (the source mask stays valid because the
/// translation retains structure).
pub fn color_mean_loss<T: Scalar>(
    t_sr: &Tensor<T>,
    mask_s: &Array3<u8>,
    r: &Tensor<T>,
    mask_r: &Array3<u8>,
    t_rs: &Tensor<T>,
    s: &Tensor<T>,
    k: usize,
) -> Result<Tensor<T>, LossError> {
    color_stat_loss(t_sr, mask_s, r, mask_r, t_rs, s, k, false)
}

/// Per-class variance retention, same pairing as [`color_mean_loss`].
pub fn color_var_loss<T: Scalar>(
    t_sr: &Tensor<T>,
    mask_s: &Array3<u8>,
    r: &Tensor<T>,
    mask_r: &Array3<u8>,
    t_rs: &Tensor<T>,
    s: &Tensor<T>,
    k: usize,
) -> Result<Tensor<T>, LossError> {
    color_stat_loss(t_sr, mask_s, r, mask_r, t_rs, s, k, true)
}

// ---------------------------------------------------------------------------
// Full translation objective

/// The individual generator-side loss terms of the translation objective.
#[derive(Clone)]
pub struct SrcganParts<T: Scalar> {
    pub adv_sr: Tensor<T>,
    pub adv_rs: Tensor<T>,
    pub cyc: Tensor<T>,
    pub id: Tensor<T>,
    pub edge: Tensor<T>,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Per-term weighted contributions, for logging; they sum to the total.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossBreakdown {
    pub adv_sr: f64,
    pub adv_rs: f64,
    pub cyc: f64,
    pub id: f64,
    pub edge: f64,
    pub mean: f64,
    pub var: f64,
    pub total: f64,
}

/// Weighted sum of all translation loss terms plus a per-term breakdown.
pub fn total_srcgan_loss<T: Scalar>(
    parts: &SrcganParts<T>,
    weights: &LossWeights,
) -> Result<(Tensor<T>, LossBreakdown), LossError> {
    weights.validate()?;
    let total = parts
        .adv_sr
        .add(&parts.adv_rs)
        .add(&parts.cyc.mul_scalar(T::c(weights.gamma_cyc)))
        .add(&parts.id.mul_scalar(T::c(weights.gamma_id)))
        .add(&parts.edge.mul_scalar(T::c(weights.gamma_edge)))
        .add(&parts.mean.mul_scalar(T::c(weights.gamma_mean)))
        .add(&parts.var.mul_scalar(T::c(weights.gamma_var)));
    let breakdown = LossBreakdown {
        adv_sr: parts.adv_sr.item().into_f64(),
        adv_rs: parts.adv_rs.item().into_f64(),
        cyc: weights.gamma_cyc * parts.cyc.item().into_f64(),
        id: weights.gamma_id * parts.id.item().into_f64(),
        edge: weights.gamma_edge * parts.edge.item().into_f64(),
        mean: weights.gamma_mean * parts.mean.item().into_f64(),
        var: weights.gamma_var * parts.var.item().into_f64(),
        total: total.item().into_f64(),
    };
    Ok((total, breakdown))
}

// ---------------------------------------------------------------------------
// Segmentation losses

fn one_hot<T: Scalar>(mask: &Array3<u8>, k: usize) -> ArrayD<T> {
    let (n, h, w) = mask.dim();
    let mut g = ArrayD::<T>::zeros(IxDyn(&[n, k, h, w]));
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                g[[i, mask[[i, y, x]] as usize, y, x]] = T::one();
            }
        }
    }
    g
}

fn check_seg_inputs<T: Scalar>(
    probs: &Tensor<T>,
    mask: &Array3<u8>,
    k: usize,
) -> Result<(), LossError> {
    let shape = probs.shape();
    if shape.len() != 4 || shape[1] != k {
        return Err(LossError::ShapeMismatch(format!(
            "expected [N,{k},H,W], got {shape:?}"
        )));
    }
    let (n, h, w) = mask.dim();
    if [n, h, w] != [shape[0], shape[2], shape[3]] {
        return Err(LossError::ShapeMismatch(format!(
            "mask {:?} vs predictions {shape:?}",
            mask.dim()
        )));
    }
    if let Some(&bad) = mask.iter().find(|&&m| m as usize >= k) {
        return Err(LossError::InvalidInput(format!("mask value {bad} >= K={k}")));
    }
    Ok(())
}

/// Generalized dice loss with inverse-squared class-volume weights.
/// `probs` must be softmax-normalized `[N,K,H,W]`.
pub fn generalized_dice_loss<T: Scalar>(
    probs: &Tensor<T>,
    mask: &Array3<u8>,
    k: usize,
) -> Result<Tensor<T>, LossError> {
    check_seg_inputs(probs, mask, k)?;
    let g = one_hot::<T>(mask, k);
    let (n, h, w) = mask.dim();
    let mut num = Tensor::scalar_constant(T::zero());
    let mut den = Tensor::scalar_constant(T::zero());
    let mut any = false;
    for class in 0..k {
        let volume = mask.iter().filter(|&&m| m as usize == class).count();
        if volume == 0 {
            continue; // absent classes are dropped from both sums
        }
        any = true;
        let wk = T::one() / (T::cu(volume) * T::cu(volume));
        // g restricted to channel `class` (zero elsewhere), and a channel
        // selector, both as [N,K,H,W] constants.
        let mut gk = ArrayD::<T>::zeros(IxDyn(&[n, k, h, w]));
        let mut ck = ArrayD::<T>::zeros(IxDyn(&[n, k, h, w]));
        for i in 0..n {
            for y in 0..h {
                for x in 0..w {
                    gk[[i, class, y, x]] = g[[i, class, y, x]];
                    ck[[i, class, y, x]] = T::one();
                }
            }
        }
        let inter = probs.mul(&Tensor::constant(gk)).sum_all();
        let pk_sum = probs.mul(&Tensor::constant(ck)).sum_all();
        num = num.add(&inter.mul_scalar(wk));
        den = den.add(&pk_sum.add_scalar(T::cu(volume)).mul_scalar(wk));
    }
    if !any {
        return Err(LossError::InvalidInput("all classes absent from mask".into()));
    }
    let dice = num.mul_scalar(T::c(2.0)).div(&den);
    Ok(dice.rsub_scalar(T::one()))
}

/// Boundary weight map: pixels whose 4-neighborhood contains a different
/// class, dilated twice by a 3x3 structuring element; weight `1 + beta`
/// on boundary pixels, `1` elsewhere. Exposed for oracle testing.
pub fn boundary_weight_map(mask: &Array2<u8>, beta: f64) -> Array2<f64> {
    let (h, w) = mask.dim();
    let mut boundary = Array2::<bool>::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let c = mask[[y, x]];
            let neighbors = [
                (y.wrapping_sub(1), x),
                (y + 1, x),
                (y, x.wrapping_sub(1)),
                (y, x + 1),
            ];
            for (ny, nx) in neighbors {
                if ny < h && nx < w && mask[[ny, nx]] != c {
                    boundary[[y, x]] = true;
                }
            }
        }
    }
    for _ in 0..2 {
        let prev = boundary.clone();
        for y in 0..h {
            for x in 0..w {
                'scan: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny >= 0 && ny < h as i64 && nx >= 0 && nx < w as i64
                            && prev[[ny as usize, nx as usize]]
                        {
                            boundary[[y, x]] = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
    }
    boundary.mapv(|b| if b { 1.0 + beta } else { 1.0 })
}

fn log_softmax_channels<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let shape = logits.shape();
    let max = {
        let v = logits.value();
        v.map_axis(ndarray::Axis(1), |lane| {
            lane.iter().copied().fold(T::neg_infinity(), T::max)
        })
        .insert_axis(ndarray::Axis(1))
    };
    let shifted = logits.sub(&Tensor::constant(max).broadcast_as(&shape));
    let logsum = shifted.exp().sum_axes(&[1]).ln();
    shifted.sub(&logsum.broadcast_as(&shape))
}

/// Cross entropy weighted by the class-transition boundary map.
pub fn boundary_aware_loss<T: Scalar>(
    logits: &Tensor<T>,
    mask: &Array3<u8>,
    beta: f64,
) -> Result<Tensor<T>, LossError> {
    let k = logits.shape().get(1).copied().unwrap_or(0);
    check_seg_inputs(logits, mask, k)?;
    let (n, h, w) = mask.dim();
    let log_probs = log_softmax_channels(logits);
    let g = Tensor::constant(one_hot::<T>(mask, k));
    // [N,1,H,W] negative log-likelihood of the true class per pixel.
    let nll = log_probs.mul(&g).sum_axes(&[1]).neg();
    let mut weights = ArrayD::<T>::zeros(IxDyn(&[n, 1, h, w]));
    for i in 0..n {
        let wm = boundary_weight_map(&mask.index_axis(ndarray::Axis(0), i).to_owned(), beta);
        for y in 0..h {
            for x in 0..w {
                weights[[i, 0, y, x]] = T::c(wm[[y, x]]);
            }
        }
    }
    Ok(nll.mul(&Tensor::constant(weights)).mean_all())
}

/// Exact Euclidean distance transform (Felzenszwalb-Huttenlocher two-pass
/// 1-D lower envelope) of the complement of `inside`; 0 on `inside` pixels.
pub fn distance_transform(inside: &Array2<bool>) -> Array2<f64> {
    fn dt_1d(f: &[f64]) -> Vec<f64> {
        let n = f.len();
        let mut d = vec![0.0; n];
        let mut v = vec![0usize; n];
        let mut z = vec![0.0f64; n + 1];
        let mut k = 0usize;
        v[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for q in 1..n {
            let mut s;
            loop {
                let p = v[k];
                s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                    / (2.0 * (q as f64 - p as f64));
                // s is finite and z[0] = -inf, so k never underflows.
                if s <= z[k] {
                    k -= 1;
                } else {
                    break;
                }
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
        }
        let mut k = 0usize;
        for q in 0..n {
            while z[k + 1] < q as f64 {
                k += 1;
            }
            let p = v[k];
            let dq = q as f64 - p as f64;
            d[q] = dq * dq + f[p];
        }
        d
    }

    let (h, w) = inside.dim();
    let inf = 1e18f64;
    let mut sq = Array2::<f64>::from_elem((h, w), inf);
    for y in 0..h {
        for x in 0..w {
            if inside[[y, x]] {
                sq[[y, x]] = 0.0;
            }
        }
    }
    // Columns then rows.
    for x in 0..w {
        let col: Vec<f64> = (0..h).map(|y| sq[[y, x]]).collect();
        let d = dt_1d(&col);
        for y in 0..h {
            sq[[y, x]] = d[y];
        }
    }
    for y in 0..h {
        let row: Vec<f64> = (0..w).map(|x| sq[[y, x]]).collect();
        let d = dt_1d(&row);
        for x in 0..w {
            sq[[y, x]] = d[x];
        }
    }
    sq.mapv(f64::sqrt)
}

/// Surface loss: probability mass placed far from its class region is
/// penalized by the Euclidean distance to that region, normalized by the
/// image diagonal. Absent classes are dropped.
pub fn surface_loss<T: Scalar>(
    probs: &Tensor<T>,
    mask: &Array3<u8>,
    k: usize,
) -> Result<Tensor<T>, LossError> {
    check_seg_inputs(probs, mask, k)?;
    let (n, h, w) = mask.dim();
    let diag = ((h * h + w * w) as f64).sqrt();
    let mut heat = ArrayD::<T>::zeros(IxDyn(&[n, k, h, w]));
    let mut class_present = vec![false; k];
    for i in 0..n {
        let m = mask.index_axis(ndarray::Axis(0), i);
        for class in 0..k {
            let inside = Array2::from_shape_fn((h, w), |(y, x)| m[[y, x]] as usize == class);
            if !inside.iter().any(|&b| b) {
                continue;
            }
            class_present[class] = true;
            let dist = distance_transform(&inside);
            for y in 0..h {
                for x in 0..w {
                    heat[[i, class, y, x]] = T::c(dist[[y, x]] / diag);
                }
            }
        }
    }
    let present = class_present.iter().filter(|&&p| p).count();
    if present == 0 {
        return Err(LossError::InvalidInput("all classes absent from mask".into()));
    }
    // Mean over present classes and pixels.
    let scale = T::one() / (T::cu(present) * T::cu(n * h * w));
    Ok(probs.mul(&Tensor::constant(heat)).sum_all().mul_scalar(scale))
}

// ---------------------------------------------------------------------------
// Contrastive / domain losses

/// Margin-based contrastive loss on a precomputed distance (scalar form).
pub fn contrastive_loss(dist: f64, same_domain: bool, margin: f64) -> Result<f64, LossError> {
    if dist < 0.0 || !dist.is_finite() {
        return Err(LossError::InvalidInput(format!("distance {dist} must be >= 0")));
    }
    if margin <= 0.0 {
        return Err(LossError::InvalidWeights("margin must be > 0".into()));
    }
    Ok(if same_domain {
        dist * dist
    } else {
        (margin - dist).max(0.0).powi(2)
    })
}

/// Differentiable contrastive loss on a pair of embedding rows `[1,D]`.
pub fn contrastive_pair_loss<T: Scalar>(
    e1: &Tensor<T>,
    e2: &Tensor<T>,
    same_domain: bool,
    margin: f64,
) -> Result<Tensor<T>, LossError> {
    same_shape(e1, e2, "contrastive embeddings")?;
    if margin <= 0.0 {
        return Err(LossError::InvalidWeights("margin must be > 0".into()));
    }
    let sq = e1.sub(e2).square().sum_all();
    Ok(if same_domain {
        sq
    } else {
        let d = sq.add_scalar(T::c(1e-12)).sqrt();
        d.rsub_scalar(T::c(margin)).relu().square()
    })
}

/// Binary cross entropy on domain-classifier probabilities, mean over the
/// batch, with predictions clamped to `[1e-7, 1-1e-7]`.
pub fn domain_bce_loss<T: Scalar>(pred: &Tensor<T>, labels: &[f64]) -> Result<Tensor<T>, LossError> {
    let n: usize = pred.shape().iter().product();
    if n != labels.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{n} predictions vs {} labels",
            labels.len()
        )));
    }
    let eps = T::c(1e-7);
    let p = pred.clamp(eps, T::one() - eps);
    let mut l = ArrayD::<T>::zeros(IxDyn(&pred.shape()));
    for (slot, &lab) in l.iter_mut().zip(labels.iter()) {
        *slot = T::c(lab);
    }
    let l = Tensor::constant(l);
    let pos = l.mul(&p.ln());
    let neg = l.rsub_scalar(T::one()).mul(&p.rsub_scalar(T::one()).ln());
    Ok(pos.add(&neg).mean_all().neg())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::grad_check;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type T64 = crate::tensor::Tensor<f64>;

    fn rand_array(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
        ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-1.0..1.0))
    }

    fn rand_mask(n: usize, h: usize, w: usize, k: usize, rng: &mut ChaCha8Rng) -> Array3<u8> {
        Array3::from_shape_simple_fn((n, h, w), || rng.gen_range(0..k as u8))
    }

    #[test]
    fn adversarial_midpoint_and_perfect() {
        // logits 0 -> p = 0.5 -> loss_D = 2 ln 2
        let zeros = T64::constant(ArrayD::zeros(IxDyn(&[4, 1])));
        let (ld, _) = adversarial_loss(&zeros, &zeros);
        assert_abs_diff_eq!(ld.item(), 2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
        // near-perfect discriminator -> loss_D near 0
        let big = T64::constant(ArrayD::from_elem(IxDyn(&[4, 1]), 50.0));
        let neg = T64::constant(ArrayD::from_elem(IxDyn(&[4, 1]), -50.0));
        let (ld, _) = adversarial_loss(&big, &neg);
        assert!(ld.item() < 1e-8);
        // generator loss decreases as D(G(s)) increases
        let mut prev = f64::INFINITY;
        for logit in [-2.0, 0.0, 2.0, 5.0] {
            let t = T64::constant(ArrayD::from_elem(IxDyn(&[1]), logit));
            let (_, lg) = adversarial_loss(&t, &t);
            assert!(lg.item() < prev);
            prev = lg.item();
        }
    }

    #[test]
    fn cycle_and_identity_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = T64::constant(rand_array(&[1, 1, 4, 4], &mut rng));
        let r = T64::constant(rand_array(&[1, 1, 4, 4], &mut rng));
        assert_abs_diff_eq!(cycle_loss(&s, &s, &r, &r).unwrap().item(), 0.0);
        let s_off = s.add_scalar(0.1);
        let r_off = r.add_scalar(0.1);
        assert_abs_diff_eq!(
            cycle_loss(&s, &s_off, &r, &r_off).unwrap().item(),
            0.2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            identity_loss(&s, &s.add_scalar(0.05), &r, &r).unwrap().item(),
            0.05,
            epsilon = 1e-12
        );
        assert!(identity_loss(&s, &s_off, &r, &r_off).unwrap().item() >= 0.0);
        // shape mismatch rejected
        let bad = T64::constant(rand_array(&[1, 1, 3, 4], &mut rng));
        assert!(cycle_loss(&s, &bad, &r, &r).is_err());
    }

    #[test]
    fn sobel_constant_step_and_linearity() {
        let c = T64::constant(ArrayD::from_elem(IxDyn(&[1, 1, 6, 6]), 0.7));
        let e = sobel_edges(&c).unwrap();
        assert!(e.value().iter().all(|&v| v.abs() < 1e-12));

        // vertical step 0 -> 1 at column 3 of a 6x6 image
        let mut img = Array4::<f64>::zeros((1, 1, 6, 6));
        for y in 0..6 {
            for x in 3..6 {
                img[[0, 0, y, x]] = 1.0;
            }
        }
        let t = T64::constant(img.into_dyn());
        let e = sobel_edges(&t).unwrap();
        let v = e.value();
        // interior rows: g_x = 4 at columns 2 and 3
        assert_abs_diff_eq!(v[[0, 0, 2, 2]], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[[0, 0, 2, 3]], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[[0, 1, 2, 2]], 0.0, epsilon = 1e-12);

        // linearity
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_array(&[1, 1, 5, 5], &mut rng);
        let a = sobel_edges(&T64::constant(x.mapv(|v| 3.0 * v))).unwrap();
        let b = sobel_edges(&T64::constant(x)).unwrap();
        for (p, q) in a.value().iter().zip(b.value().iter()) {
            assert_abs_diff_eq!(*p, 3.0 * q, epsilon = 1e-12);
        }
    }

    #[test]
    fn sobel_matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_array(&[1, 1, 8, 8], &mut rng);
        let e = sobel_edges(&T64::constant(x.clone())).unwrap();
        let gx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let gy = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
        let clampi = |v: i64| v.clamp(0, 7) as usize;
        for y in 0..8i64 {
            for x_ in 0..8i64 {
                let (mut ax, mut ay) = (0.0, 0.0);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let v = x[[0, 0, clampi(y + dy), clampi(x_ + dx)]];
                        ax += gx[(dy + 1) as usize][(dx + 1) as usize] * v;
                        ay += gy[(dy + 1) as usize][(dx + 1) as usize] * v;
                    }
                }
                assert_abs_diff_eq!(e.value()[[0, 0, y as usize, x_ as usize]], ax, epsilon = 1e-10);
                assert_abs_diff_eq!(e.value()[[0, 1, y as usize, x_ as usize]], ay, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn edge_loss_identity_and_constant_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = T64::constant(rand_array(&[1, 1, 6, 6], &mut rng));
        let r = T64::constant(rand_array(&[1, 1, 6, 6], &mut rng));
        let zero = edge_retaining_loss(&s, &s, &s, &r, &r, &r).unwrap();
        assert_abs_diff_eq!(zero.item(), 0.0, epsilon = 1e-12);
        // constant intensity shift leaves edges untouched
        let shifted = edge_retaining_loss(&s, &s.add_scalar(0.3), &s, &r, &r.add_scalar(-0.2), &r).unwrap();
        assert_abs_diff_eq!(shifted.item(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn class_stats_closed_forms_and_oracle() {
        // two-pixel class with values {0,1}: mean 0.5, population var 0.25
        let image = Array2::from_shape_vec((1, 4), vec![0.0f32, 1.0, 0.5, 0.5]).unwrap();
        let mask = Array2::from_shape_vec((1, 4), vec![0u8, 0, 1, 1]).unwrap();
        let st = class_stats(&image, &mask, 4).unwrap();
        assert_abs_diff_eq!(st.mean[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(st.var[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(st.mean[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(st.var[1], 0.0, epsilon = 1e-12);
        assert!(!st.present[2] && !st.present[3]);

        // random instance vs direct per-pixel accumulation
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Array2::from_shape_simple_fn((8, 8), || rng.gen_range(0.0f32..1.0));
        let msk = Array2::from_shape_simple_fn((8, 8), || rng.gen_range(0..4u8));
        let st = class_stats(&img, &msk, 4).unwrap();
        for k in 0..4 {
            let vals: Vec<f64> = img
                .iter()
                .zip(msk.iter())
                .filter(|(_, &m)| m as usize == k)
                .map(|(&v, _)| v as f64)
                .collect();
            if vals.is_empty() {
                assert!(!st.present[k]);
                continue;
            }
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / vals.len() as f64;
            assert_abs_diff_eq!(st.mean[k], mu, epsilon = 1e-10);
            assert_abs_diff_eq!(st.var[k], var, epsilon = 1e-10);
        }
    }

    #[test]
    fn color_losses_matched_and_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mask = rand_mask(1, 4, 4, 2, &mut rng);
        let img = rand_array(&[1, 1, 4, 4], &mut rng);
        let t = T64::constant(img.clone());
        // identical statistics on both sides -> 0
        let l = color_mean_loss(&t, &mask, &t, &mask, &t, &t, 2).unwrap();
        assert_abs_diff_eq!(l.item(), 0.0, epsilon = 1e-12);
        let lv = color_var_loss(&t, &mask, &t, &mask, &t, &t, 2).unwrap();
        assert_abs_diff_eq!(lv.item(), 0.0, epsilon = 1e-12);

        // shifting all pixels of the translated image by 0.2 moves every
        // present class mean by 0.2 in the SR direction only.
        let t_off = t.add_scalar(0.2);
        let l = color_mean_loss(&t_off, &mask, &t, &mask, &t, &t, 2).unwrap();
        assert_abs_diff_eq!(l.item(), 0.4, epsilon = 1e-10); // 2 classes x 0.2
        // variance is shift-invariant
        let lv = color_var_loss(&t_off, &mask, &t, &mask, &t, &t, 2).unwrap();
        assert_abs_diff_eq!(lv.item(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn total_loss_defaults_and_linearity() {
        let unit = || T64::scalar_constant(1.0);
        let parts = SrcganParts {
            adv_sr: unit(),
            adv_rs: unit(),
            cyc: unit(),
            id: unit(),
            edge: unit(),
            mean: unit(),
            var: unit(),
        };
        let w = LossWeights::default();
        let (total, bd) = total_srcgan_loss(&parts, &w).unwrap();
        assert_abs_diff_eq!(total.item(), 2.0 + 10.0 + 10.0 + 0.1 + 0.0 + 60.0, epsilon = 1e-9);
        let sum = bd.adv_sr + bd.adv_rs + bd.cyc + bd.id + bd.edge + bd.mean + bd.var;
        assert_abs_diff_eq!(sum, bd.total, epsilon = 1e-9);

        // all gammas zero -> adversarial only
        let zero = LossWeights {
            gamma_cyc: 0.0,
            gamma_id: 0.0,
            gamma_edge: 0.0,
            gamma_mean: 0.0,
            gamma_var: 0.0,
            ..w
        };
        let (t0, _) = total_srcgan_loss(&parts, &zero).unwrap();
        assert_abs_diff_eq!(t0.item(), 2.0, epsilon = 1e-12);

        // linearity in gamma_var
        let w1 = LossWeights { gamma_var: 1.0, ..zero };
        let w2 = LossWeights { gamma_var: 2.0, ..zero };
        let (t1, _) = total_srcgan_loss(&parts, &w1).unwrap();
        let (t2, _) = total_srcgan_loss(&parts, &w2).unwrap();
        assert_abs_diff_eq!(t2.item() - t1.item(), t1.item() - t0.item(), epsilon = 1e-12);

        // negative weight rejected
        assert!(total_srcgan_loss(&parts, &LossWeights { gamma_cyc: -1.0, ..w }).is_err());
    }

    fn softmax_probs(raw: &ArrayD<f64>) -> T64 {
        let t = T64::param(raw.clone());
        crate::nn::softmax_channels(&t)
    }

    #[test]
    fn gdl_one_hot_zero_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mask = rand_mask(1, 6, 6, 3, &mut rng);
        // exact one-hot predictions
        let probs = T64::constant(one_hot::<f64>(&mask, 3));
        let l = generalized_dice_loss(&probs, &mask, 3).unwrap();
        assert_abs_diff_eq!(l.item(), 0.0, epsilon = 1e-12);

        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = rand_array(&[1, 3, 6, 6], &mut rng);
            let mask = rand_mask(1, 6, 6, 3, &mut rng);
            let p = softmax_probs(&raw);
            let l = generalized_dice_loss(&p, &mask, 3).unwrap().item();
            assert!((0.0..=1.0 + 1e-9).contains(&l), "gdl {l} out of range");
        }
    }

    #[test]
    fn gdl_uniform_vs_oracle() {
        // uniform probabilities 1/K on a balanced 2-class mask
        let mask = Array3::from_shape_fn((1, 4, 4), |(_, _, x)| (x % 2) as u8);
        let probs = T64::constant(ArrayD::from_elem(IxDyn(&[1, 2, 4, 4]), 0.5));
        let l = generalized_dice_loss(&probs, &mask, 2).unwrap().item();
        // oracle: direct summation
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..2u8 {
            let vol = mask.iter().filter(|&&m| m == k).count() as f64;
            let w = 1.0 / (vol * vol);
            let inter: f64 = mask.iter().map(|&m| if m == k { 0.5 } else { 0.0 }).sum();
            let union: f64 = mask
                .iter()
                .map(|&m| (if m == k { 1.0 } else { 0.0 }) + 0.5)
                .sum();
            num += w * inter;
            den += w * union;
        }
        assert_abs_diff_eq!(l, 1.0 - 2.0 * num / den, epsilon = 1e-10);
    }

    #[test]
    fn bal_single_class_is_plain_ce_and_beta_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw = rand_array(&[1, 3, 5, 5], &mut rng);
        let logits = T64::constant(raw.clone());
        let flat_mask = Array3::<u8>::zeros((1, 5, 5));
        let bal = boundary_aware_loss(&logits, &flat_mask, 10.0).unwrap().item();
        // plain CE oracle
        let mut ce = 0.0;
        for y in 0..5 {
            for x in 0..5 {
                let vals: Vec<f64> = (0..3).map(|c| raw[[0, c, y, x]]).collect();
                let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let logsum = vals.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
                ce += logsum - raw[[0, 0, y, x]];
            }
        }
        ce /= 25.0;
        assert_abs_diff_eq!(bal, ce, epsilon = 1e-10);

        // beta = 0 equals plain CE for any mask
        let mask = rand_mask(1, 5, 5, 3, &mut rng);
        let b0 = boundary_aware_loss(&logits, &mask, 0.0).unwrap().item();
        let mut ce = 0.0;
        for y in 0..5 {
            for x in 0..5 {
                let vals: Vec<f64> = (0..3).map(|c| raw[[0, c, y, x]]).collect();
                let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let logsum = vals.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
                ce += logsum - raw[[0, mask[[0, y, x]] as usize, y, x]];
            }
        }
        assert_abs_diff_eq!(b0, ce / 25.0, epsilon = 1e-10);
    }

    #[test]
    fn boundary_map_vs_neighborhood_oracle() {
        // two-region 8x8 mask, split at column 4
        let mask = Array2::from_shape_fn((8, 8), |(_, x)| if x < 4 { 0u8 } else { 1 });
        let wm = boundary_weight_map(&mask, 10.0);
        // oracle: direct scan + two dilations
        let mut edge = Array2::<bool>::from_elem((8, 8), false);
        for y in 0..8i64 {
            for x in 0..8i64 {
                for (dy, dx) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (ny, nx) = (y + dy, x + dx);
                    if (0..8).contains(&ny)
                        && (0..8).contains(&nx)
                        && mask[[ny as usize, nx as usize]] != mask[[y as usize, x as usize]]
                    {
                        edge[[y as usize, x as usize]] = true;
                    }
                }
            }
        }
        for _ in 0..2 {
            let prev = edge.clone();
            for y in 0..8i64 {
                for x in 0..8i64 {
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            let (ny, nx) = (y + dy, x + dx);
                            if (0..8).contains(&ny)
                                && (0..8).contains(&nx)
                                && prev[[ny as usize, nx as usize]]
                            {
                                edge[[y as usize, x as usize]] = true;
                            }
                        }
                    }
                }
            }
        }
        for y in 0..8 {
            for x in 0..8 {
                let expect = if edge[[y, x]] { 11.0 } else { 1.0 };
                assert_abs_diff_eq!(wm[[y, x]], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn distance_transform_vs_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let inside = Array2::from_shape_simple_fn((7, 9), || rng.gen_bool(0.3));
            if !inside.iter().any(|&b| b) {
                continue;
            }
            let dt = distance_transform(&inside);
            for y in 0..7 {
                for x in 0..9 {
                    let mut best = f64::INFINITY;
                    for sy in 0..7 {
                        for sx in 0..9 {
                            if inside[[sy, sx]] {
                                let d = ((y as f64 - sy as f64).powi(2)
                                    + (x as f64 - sx as f64).powi(2))
                                .sqrt();
                                best = best.min(d);
                            }
                        }
                    }
                    assert_abs_diff_eq!(dt[[y, x]], best, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn surface_loss_one_hot_and_single_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mask = rand_mask(1, 6, 6, 2, &mut rng);
        let probs = T64::constant(one_hot::<f64>(&mask, 2));
        let l = surface_loss(&probs, &mask, 2).unwrap();
        assert_abs_diff_eq!(l.item(), 0.0, epsilon = 1e-12);

        // all class-1 mass on one pixel at known distance
        let mut mask = Array3::<u8>::zeros((1, 8, 8));
        mask[[0, 0, 0]] = 1; // class 1 lives at (0,0)
        let mut p = ArrayD::<f64>::zeros(IxDyn(&[1, 2, 8, 8]));
        p[[0, 1, 3, 4]] = 1.0; // mass at distance 5 from (0,0)
        let l = surface_loss(&T64::constant(p), &mask, 2).unwrap().item();
        let diag = (128.0f64).sqrt();
        // mean over 2 classes and 64 pixels of the class-1 contribution
        assert_abs_diff_eq!(l, (5.0 / diag) / (2.0 * 64.0), epsilon = 1e-12);
        assert!(l >= 0.0);
    }

    #[test]
    fn contrastive_closed_forms() {
        assert_abs_diff_eq!(contrastive_loss(0.0, true, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(contrastive_loss(1.0, false, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(contrastive_loss(0.4, false, 1.0).unwrap(), 0.36, epsilon = 1e-12);
        assert_abs_diff_eq!(contrastive_loss(0.3, true, 1.0).unwrap(), 0.09, epsilon = 1e-12);
        assert!(contrastive_loss(-0.1, true, 1.0).is_err());

        // tensor form agrees with the scalar form
        let e1 = T64::constant(Array1::from(vec![0.3, 0.0]).into_dyn());
        let e2 = T64::constant(Array1::from(vec![0.0, 0.4]).into_dyn());
        let d = 0.5; // sqrt(0.09 + 0.16)
        let same = contrastive_pair_loss(&e1, &e2, true, 1.0).unwrap().item();
        assert_abs_diff_eq!(same, d * d, epsilon = 1e-9);
        let diff = contrastive_pair_loss(&e1, &e2, false, 1.0).unwrap().item();
        assert_abs_diff_eq!(diff, (1.0 - d) * (1.0 - d), epsilon = 1e-6);
    }

    #[test]
    fn domain_bce_closed_forms() {
        let half = T64::constant(ArrayD::from_elem(IxDyn(&[2, 1]), 0.5));
        assert_abs_diff_eq!(
            domain_bce_loss(&half, &[0.0, 1.0]).unwrap().item(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        let p9 = T64::constant(ArrayD::from_elem(IxDyn(&[1, 1]), 0.9));
        assert_abs_diff_eq!(
            domain_bce_loss(&p9, &[0.0]).unwrap().item(),
            -(0.1f64).ln(),
            epsilon = 1e-9
        );
        // pred -> label gives ~0 even at the clamp boundary
        let p1 = T64::constant(ArrayD::from_elem(IxDyn(&[1, 1]), 1.0));
        assert!(domain_bce_loss(&p1, &[1.0]).unwrap().item() < 1e-6);
    }

    // -- gradient checks (light versions; the full 20-trial sweep lives in
    //    the acceptance suite) --

    #[test]
    fn gradcheck_translation_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let shape = [1usize, 1, 8, 8];
        let base = rand_array(&shape, &mut rng);
        let other = rand_array(&shape, &mut rng);
        let aux1 = rand_array(&shape, &mut rng);
        let aux2 = rand_array(&shape, &mut rng);
        let mask_s = rand_mask(1, 8, 8, 3, &mut rng);
        let mask_r = rand_mask(1, 8, 8, 3, &mut rng);

        let checks: Vec<(&str, Box<dyn Fn(&T64) -> T64>)> = vec![
            ("cycle", {
                let (o, a, b) = (other.clone(), aux1.clone(), aux2.clone());
                Box::new(move |x: &T64| {
                    cycle_loss(&T64::constant(o.clone()), x, &T64::constant(a.clone()), &T64::constant(b.clone())).unwrap()
                })
            }),
            ("edge", {
                let (o, a, b) = (other.clone(), aux1.clone(), aux2.clone());
                Box::new(move |x: &T64| {
                    let o = T64::constant(o.clone());
                    let a = T64::constant(a.clone());
                    let b = T64::constant(b.clone());
                    edge_retaining_loss(&o, x, &a, &b, &o, &a).unwrap()
                })
            }),
            ("color_var", {
                let (o, ms, mr) = (other.clone(), mask_s.clone(), mask_r.clone());
                Box::new(move |x: &T64| {
                    let o = T64::constant(o.clone());
                    color_var_loss(x, &ms, &o, &mr, &o, &o, 3).unwrap()
                })
            }),
            ("adversarial_d", {
                let o = other.clone();
                Box::new(move |x: &T64| adversarial_loss(x, &T64::constant(o.clone())).0)
            }),
        ];
        for (name, f) in checks {
            let err = grad_check(&f, &base, 1e-4);
            assert!(err < 1e-3, "{name} gradcheck rel err {err}");
        }
    }

    #[test]
    fn gradcheck_segmentation_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw = rand_array(&[1, 3, 8, 8], &mut rng);
        let mask = rand_mask(1, 8, 8, 3, &mut rng);

        let m1 = mask.clone();
        let gdl = move |x: &T64| {
            generalized_dice_loss(&crate::nn::softmax_channels(x), &m1, 3).unwrap()
        };
        assert!(grad_check(&gdl, &raw, 1e-4) < 1e-3, "gdl gradcheck");

        let m2 = mask.clone();
        let bal = move |x: &T64| boundary_aware_loss(x, &m2, 10.0).unwrap();
        assert!(grad_check(&bal, &raw, 1e-4) < 1e-3, "bal gradcheck");

        let m3 = mask.clone();
        let surf = move |x: &T64| surface_loss(&crate::nn::softmax_channels(x), &m3, 3).unwrap();
        assert!(grad_check(&surf, &raw, 1e-4) < 1e-3, "surface gradcheck");
    }
}
