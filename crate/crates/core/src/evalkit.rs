//! Metrics (mIoU, grouped means, distance summaries), PCA projection of
//! latent vectors, and CSV/plot report emission.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Mean intersection-over-union between two class masks.
///
/// Classes absent from BOTH masks are excluded from the mean; a class
/// present in exactly one mask contributes 0.
pub fn miou(pred: &Array2<u8>, gt: &Array2<u8>, k: usize) -> Result<f64, EvalError> {
    if pred.dim() != gt.dim() {
        return Err(EvalError::DimMismatch(format!(
            "{:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    if let Some(&bad) = pred.iter().chain(gt.iter()).find(|&&m| m as usize >= k) {
        return Err(EvalError::InvalidInput(format!("mask value {bad} >= K={k}")));
    }
    let mut inter = vec![0usize; k];
    let mut pred_count = vec![0usize; k];
    let mut gt_count = vec![0usize; k];
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        pred_count[p as usize] += 1;
        gt_count[g as usize] += 1;
        if p == g {
            inter[p as usize] += 1;
        }
    }
    let mut sum = 0.0;
    let mut classes = 0usize;
    for c in 0..k {
        let union = pred_count[c] + gt_count[c] - inter[c];
        if union == 0 {
            continue; // absent in both: excluded
        }
        classes += 1;
        sum += inter[c] as f64 / union as f64;
    }
    if classes == 0 {
        return Err(EvalError::InvalidInput("all classes absent".into()));
    }
    Ok(sum / classes as f64)
}

/// Arithmetic mean and Bessel-corrected (n-1) standard deviation of a set
/// of per-instance mIoU values. A single run reports std 0.
pub fn mmiou(runs: &[f64]) -> Result<(f64, f64), EvalError> {
    if runs.is_empty() {
        return Err(EvalError::InvalidInput("mmiou needs at least one run".into()));
    }
    let n = runs.len() as f64;
    let mean = runs.iter().sum::<f64>() / n;
    let std = if runs.len() < 2 {
        0.0
    } else {
        (runs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok((mean, std))
}

/// PCA of pooled latent vectors: per-sample coordinates in the top
/// `dims` principal directions plus explained-variance ratios.
pub fn pca_project(
    embeddings: &[Vec<f64>],
    dims: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), EvalError> {
    if embeddings.len() < 2 {
        return Err(EvalError::InvalidInput("PCA needs at least 2 embeddings".into()));
    }
    let d = embeddings[0].len();
    if d == 0 || embeddings.iter().any(|e| e.len() != d) {
        return Err(EvalError::InvalidInput("inconsistent embedding dims".into()));
    }
    if dims == 0 || dims > d {
        return Err(EvalError::InvalidInput(format!("dims {dims} outside 1..={d}")));
    }
    let n = embeddings.len();
    let mut mean = vec![0.0; d];
    for e in embeddings {
        for (m, v) in mean.iter_mut().zip(e.iter()) {
            *m += v / n as f64;
        }
    }
    let centered = nalgebra::DMatrix::from_fn(n, d, |i, j| embeddings[i][j] - mean[j]);
    let total_var: f64 = centered.iter().map(|v| v * v).sum();
    if total_var <= 1e-24 {
        return Err(EvalError::InvalidInput("degenerate zero-variance input".into()));
    }
    let svd = centered.clone().svd(true, true);
    let v_t = svd.v_t.as_ref().expect("svd requested V^T");
    let coords = &centered * v_t.rows(0, dims).transpose();
    let out: Vec<Vec<f64>> = (0..n).map(|i| (0..dims).map(|j| coords[(i, j)]).collect()).collect();
    let sq: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
    let ratios: Vec<f64> = sq.iter().take(dims).map(|s| s / total_var).collect();
    Ok((out, ratios))
}

/// One (M source images, N real images) grid cell of segmentation scores.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MiouCell {
    pub m: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub cells: Vec<MiouCell>,
    pub mmiou_mean: Option<f64>,
    pub mmiou_std: Option<f64>,
    pub mu_d: Option<f64>,
    pub folds: usize,
}

fn write_file(path: &Path, body: &str) -> Result<(), EvalError> {
    let mut f = std::fs::File::create(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(body.as_bytes()).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write `comparison.csv` (dataset rows x (M,N) grid, missing cells empty),
/// `mu_d.csv`, and an mIoU-vs-N plot.
pub fn emit_report(reports: &[MetricsReport], out_dir: &Path) -> Result<(), EvalError> {
    if reports.is_empty() {
        return Err(EvalError::InvalidInput("no reports to emit".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| EvalError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    // union of (m, n) columns in sorted order
    let keys: BTreeSet<(usize, usize)> = reports
        .iter()
        .flat_map(|r| r.cells.iter().map(|c| (c.m, c.n)))
        .collect();
    let mut body = String::from("dataset");
    for (m, n) in &keys {
        body.push_str(&format!(",m{m}_n{n}_mean,m{m}_n{n}_std"));
    }
    body.push_str(",mmiou_mean,mmiou_std,folds\n");
    for r in reports {
        body.push_str(&r.dataset);
        for key in &keys {
            match r.cells.iter().find(|c| (c.m, c.n) == *key) {
                Some(c) => body.push_str(&format!(",{},{}", c.mean, c.std)),
                None => body.push_str(",,"),
            }
        }
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        body.push_str(&format!(
            ",{},{},{}\n",
            fmt(r.mmiou_mean),
            fmt(r.mmiou_std),
            r.folds
        ));
    }
    write_file(&out_dir.join("comparison.csv"), &body)?;

    let mut mu = String::from("dataset,mu_d\n");
    for r in reports {
        if let Some(d) = r.mu_d {
            mu.push_str(&format!("{},{d}\n", r.dataset));
        }
    }
    write_file(&out_dir.join("mu_d.csv"), &mu)?;

    plot_miou_vs_n(reports, &out_dir.join("miou_vs_n.png"))?;
    Ok(())
}

/// Parse `comparison.csv` back into reports (numeric fields only); used to
/// verify the CSV round trip and by downstream tooling.
pub fn parse_comparison_csv(path: &Path) -> Result<Vec<MetricsReport>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| EvalError::InvalidInput("empty csv".into()))?
        .split(',')
        .collect();
    let mut out = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != header.len() {
            return Err(EvalError::InvalidInput("ragged csv row".into()));
        }
        let mut report = MetricsReport {
            dataset: cols[0].to_string(),
            cells: vec![],
            mmiou_mean: None,
            mmiou_std: None,
            mu_d: None,
            folds: 0,
        };
        for (h, v) in header.iter().zip(cols.iter()).skip(1) {
            if v.is_empty() {
                continue;
            }
            if let Some(rest) = h.strip_prefix('m') {
                if let Some((m_part, tail)) = rest.split_once("_n") {
                    if let Some((n_part, field)) = tail.split_once('_') {
                        let (m, n) = (
                            m_part.parse().map_err(|_| EvalError::InvalidInput(format!("bad column {h}")))?,
                            n_part.parse().map_err(|_| EvalError::InvalidInput(format!("bad column {h}")))?,
                        );
                        let val: f64 = v.parse().map_err(|_| EvalError::InvalidInput(format!("bad value {v}")))?;
                        let cell = report.cells.iter_mut().find(|c| c.m == m && c.n == n);
                        match (cell, field) {
                            (Some(c), "mean") => c.mean = val,
                            (Some(c), "std") => c.std = val,
                            (None, "mean") => report.cells.push(MiouCell { m, n, mean: val, std: 0.0 }),
                            (None, "std") => report.cells.push(MiouCell { m, n, mean: 0.0, std: val }),
                            _ => {}
                        }
                        continue;
                    }
                }
            }
            match *h {
                "mmiou_mean" => report.mmiou_mean = v.parse().ok(),
                "mmiou_std" => report.mmiou_std = v.parse().ok(),
                "folds" => report.folds = v.parse().unwrap_or(0),
                _ => {}
            }
        }
        out.push(report);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Minimal PNG plotting

/// RGB raster with a handful of drawing primitives.
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Canvas {
            width,
            height,
            data: vec![255u8; width * height * 3],
        }
    }

    pub fn set(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let i = (y as usize * self.width + x as usize) * 3;
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    pub fn line(&mut self, mut x0: i64, mut y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x0, y0, rgb);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn dot(&mut self, x: i64, y: i64, r: i64, rgb: [u8; 3]) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.set(x + dx, y + dy, rgb);
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("canvas buffer size")
            .save(path)
            .map_err(|e| EvalError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e),
            })
    }
}

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

fn plot_miou_vs_n(reports: &[MetricsReport], path: &Path) -> Result<(), EvalError> {
    let (w, h) = (640usize, 480usize);
    let mut canvas = Canvas::new(w, h);
    let margin = 40i64;
    // axes
    canvas.line(margin, h as i64 - margin, w as i64 - margin, h as i64 - margin, [0, 0, 0]);
    canvas.line(margin, margin, margin, h as i64 - margin, [0, 0, 0]);

    let ns: BTreeSet<usize> = reports
        .iter()
        .flat_map(|r| r.cells.iter().map(|c| c.n))
        .collect();
    if ns.is_empty() {
        return canvas.save(path);
    }
    let ns: Vec<usize> = ns.into_iter().collect();
    let x_of = |n: usize| -> i64 {
        let idx = ns.iter().position(|&v| v == n).unwrap_or(0);
        let span = (w as i64 - 2 * margin).max(1);
        margin + span * idx as i64 / (ns.len().max(2) - 1) as i64
    };
    let y_of = |v: f64| -> i64 {
        let v = v.clamp(0.0, 1.0);
        (h as f64 - margin as f64 - v * (h as f64 - 2.0 * margin as f64)) as i64
    };
    for (ri, r) in reports.iter().enumerate() {
        let color = PALETTE[ri % PALETTE.len()];
        let mut cells: Vec<&MiouCell> = r.cells.iter().collect();
        cells.sort_by_key(|c| c.n);
        let mut prev: Option<(i64, i64)> = None;
        for c in cells {
            let (x, y) = (x_of(c.n), y_of(c.mean));
            // +-1 sigma band as a vertical whisker
            canvas.line(x, y_of(c.mean - c.std), x, y_of(c.mean + c.std), color);
            canvas.dot(x, y, 3, color);
            if let Some((px, py)) = prev {
                canvas.line(px, py, x, y, color);
            }
            prev = Some((x, y));
        }
    }
    canvas.save(path)
}

/// Write a PCA scatter CSV (`pca_<name>.csv`) and PNG with domain colors.
pub fn emit_pca(
    name: &str,
    coords: &[Vec<f64>],
    domains: &[String],
    out_dir: &Path,
) -> Result<(), EvalError> {
    if coords.len() != domains.len() {
        return Err(EvalError::DimMismatch(format!(
            "{} coords vs {} domain tags",
            coords.len(),
            domains.len()
        )));
    }
    let mut body = String::from("domain,pc1,pc2\n");
    for (c, d) in coords.iter().zip(domains.iter()) {
        body.push_str(&format!("{d},{},{}\n", c[0], c.get(1).copied().unwrap_or(0.0)));
    }
    write_file(&out_dir.join(format!("pca_{name}.csv")), &body)?;

    let (w, h) = (480usize, 480usize);
    let mut canvas = Canvas::new(w, h);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in coords {
        for a in 0..2 {
            let v = c.get(a).copied().unwrap_or(0.0);
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let tags: Vec<&String> = {
        let mut t: Vec<&String> = domains.iter().collect();
        t.sort();
        t.dedup();
        t
    };
    for (c, d) in coords.iter().zip(domains.iter()) {
        let color = PALETTE[tags.iter().position(|t| *t == d).unwrap_or(0) % PALETTE.len()];
        let sx = |a: usize, v: f64| -> i64 {
            let range = (hi[a] - lo[a]).max(1e-12);
            (20.0 + (v - lo[a]) / range * (w as f64 - 40.0)) as i64
        };
        let x = sx(0, c[0]);
        let y = h as i64 - sx(1, c.get(1).copied().unwrap_or(0.0));
        canvas.dot(x, y, 2, color);
    }
    canvas.save(&out_dir.join(format!("pca_{name}.png")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn miou_trivial_cases() {
        let a = Array2::from_shape_fn((4, 4), |(y, _)| (y % 2) as u8);
        assert_abs_diff_eq!(miou(&a, &a, 4).unwrap(), 1.0);
        // disjoint single-class masks
        let zeros = Array2::<u8>::zeros((4, 4));
        let ones = Array2::<u8>::from_elem((4, 4), 1);
        assert_abs_diff_eq!(miou(&zeros, &ones, 4).unwrap(), 0.0);
        // symmetry
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Array2::from_shape_simple_fn((6, 6), || rng.gen_range(0..3u8));
        let g = Array2::from_shape_simple_fn((6, 6), || rng.gen_range(0..3u8));
        assert_abs_diff_eq!(miou(&p, &g, 3).unwrap(), miou(&g, &p, 3).unwrap(), epsilon = 1e-12);
        // relabeling both masks identically leaves mIoU unchanged
        let relabel = |m: &Array2<u8>| m.mapv(|v| (v + 1) % 3);
        assert_abs_diff_eq!(
            miou(&p, &g, 3).unwrap(),
            miou(&relabel(&p), &relabel(&g), 3).unwrap(),
            epsilon = 1e-12
        );
        // dim mismatch
        let small = Array2::<u8>::zeros((3, 4));
        assert!(miou(&small, &zeros, 4).is_err());
    }

    #[test]
    fn miou_hand_case_shifted_region() {
        // gt: rows 0-1 class 1, rows 2-3 class 0 (8 px each)
        // pred: class-1 region shifted down by one row
        let gt = Array2::from_shape_fn((4, 4), |(y, _)| u8::from(y < 2));
        let pred = Array2::from_shape_fn((4, 4), |(y, _)| u8::from((1..3).contains(&y)));
        // oracle by direct pixel counting
        let mut inter = [0usize; 2];
        let mut uni = [0usize; 2];
        for c in 0..2u8 {
            let mut i = 0;
            let mut p = 0;
            let mut g = 0;
            for (a, b) in pred.iter().zip(gt.iter()) {
                if *a == c {
                    p += 1;
                }
                if *b == c {
                    g += 1;
                }
                if *a == c && *b == c {
                    i += 1;
                }
            }
            inter[c as usize] = i;
            uni[c as usize] = p + g - i;
        }
        let oracle = (inter[0] as f64 / uni[0] as f64 + inter[1] as f64 / uni[1] as f64) / 2.0;
        assert_abs_diff_eq!(oracle, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(miou(&pred, &gt, 2).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn miou_absent_class_policy() {
        // class 2 in neither mask -> excluded; class 1 only in gt -> 0
        let gt = Array2::from_shape_fn((2, 2), |(y, _)| y as u8);
        let pred = Array2::<u8>::zeros((2, 2));
        // class 0: inter 2, union 4 -> 0.5; class 1: 0; class 2: excluded
        assert_abs_diff_eq!(miou(&pred, &gt, 3).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn mmiou_closed_forms() {
        let (m, s) = mmiou(&[0.5, 0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(m, 0.5);
        assert_abs_diff_eq!(s, 0.0);
        let (m, s) = mmiou(&[0.4, 0.6]).unwrap();
        assert_abs_diff_eq!(m, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 0.1414213562, epsilon = 1e-9);
        assert!(mmiou(&[]).is_err());
        let (_, s1) = mmiou(&[0.7]).unwrap();
        assert_abs_diff_eq!(s1, 0.0);
    }

    #[test]
    fn pca_identity_subspace_and_collinear() {
        // axis-aligned 2-D points: projection preserves pairwise distances
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 2.0],
            vec![3.0, 1.0],
        ];
        let (coords, ratios) = pca_project(&pts, 2).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let orig = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                let proj = ((coords[i][0] - coords[j][0]).powi(2)
                    + (coords[i][1] - coords[j][1]).powi(2))
                .sqrt();
                assert_abs_diff_eq!(orig, proj, epsilon = 1e-9);
            }
        }
        assert_abs_diff_eq!(ratios.iter().sum::<f64>(), 1.0, epsilon = 1e-9);

        // collinear 3-D points: second component explains nothing
        let line = vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 2.0, 3.0],
            vec![2.0, 4.0, 6.0],
        ];
        let (_, ratios) = pca_project(&line, 2).unwrap();
        assert_abs_diff_eq!(ratios[1], 0.0, epsilon = 1e-9);

        // degenerate input
        let same = vec![vec![1.0, 1.0]; 3];
        assert!(pca_project(&same, 2).is_err());
    }

    #[test]
    fn pca_full_reconstruction_vs_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (coords, ratios) = pca_project(&data, 5).unwrap();
        // Reconstruction with all 5 components preserves pairwise distances
        // of the centered data exactly (orthogonal change of basis).
        for i in 0..10 {
            for j in 0..10 {
                let orig: f64 = (0..5).map(|a| (data[i][a] - data[j][a]).powi(2)).sum::<f64>().sqrt();
                let proj: f64 = (0..5)
                    .map(|a| (coords[i][a] - coords[j][a]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert_abs_diff_eq!(orig, proj, epsilon = 1e-9);
            }
        }
        // explained-variance ratios match the eigenvalues of the scatter
        // matrix computed by nalgebra's symmetric eigendecomposition.
        let n = 10usize;
        let mut mean = [0.0f64; 5];
        for row in &data {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let centered = nalgebra::DMatrix::from_fn(n, 5, |i, j| data[i][j] - mean[j]);
        let scatter = centered.transpose() * &centered;
        let total = scatter.trace();
        let mut eig: Vec<f64> = scatter.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (r, e) in ratios.iter().zip(eig.iter()) {
            assert_abs_diff_eq!(*r, e / total, epsilon = 1e-9);
        }
    }

    #[test]
    fn report_roundtrip_and_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![
            MetricsReport {
                dataset: "alpha".into(),
                cells: vec![
                    MiouCell { m: 64, n: 0, mean: 0.52, std: 0.03 },
                    MiouCell { m: 64, n: 8, mean: 0.61, std: 0.02 },
                ],
                mmiou_mean: Some(0.56),
                mmiou_std: Some(0.04),
                mu_d: Some(0.012),
                folds: 3,
            },
            MetricsReport {
                dataset: "beta".into(),
                cells: vec![MiouCell { m: 64, n: 0, mean: 0.44, std: 0.05 }],
                mmiou_mean: None,
                mmiou_std: None,
                mu_d: None,
                folds: 3,
            },
        ];
        emit_report(&reports, dir.path()).unwrap();
        assert!(dir.path().join("comparison.csv").exists());
        assert!(dir.path().join("mu_d.csv").exists());
        assert!(dir.path().join("miou_vs_n.png").exists());

        let parsed = parse_comparison_csv(&dir.path().join("comparison.csv")).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].cells.len(), 2);
        // beta's (64, 8) cell was missing and must stay missing
        assert_eq!(parsed[1].cells.len(), 1);
        for (a, b) in parsed.iter().zip(reports.iter()) {
            assert_eq!(a.dataset, b.dataset);
            for (ca, cb) in a.cells.iter().zip(b.cells.iter()) {
                assert_abs_diff_eq!(ca.mean, cb.mean, epsilon = 1e-12);
                assert_abs_diff_eq!(ca.std, cb.std, epsilon = 1e-12);
            }
            assert_eq!(a.mmiou_mean, b.mmiou_mean);
        }
    }

    #[test]
    fn pca_emission_writes_csv_and_png() {
        let dir = tempfile::tempdir().unwrap();
        let coords = vec![vec![0.0, 1.0], vec![1.0, -1.0], vec![-0.5, 0.2]];
        let domains = vec!["source".to_string(), "target".to_string(), "source".to_string()];
        emit_pca("toy", &coords, &domains, dir.path()).unwrap();
        assert!(dir.path().join("pca_toy.csv").exists());
        assert!(dir.path().join("pca_toy.png").exists());
    }
}
