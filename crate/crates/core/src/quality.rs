//! Baseline image-quality and distribution metrics: SSIM, PSNR, Inception
//! Score, FID, and the ME/MD/MX/MN score aggregates.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{EmbeddingSet, FeatureRecord};

/// SSIM window edge, in pixels. Windows tile the image without overlap;
/// the trailing partial windows on the right and bottom edges are kept.
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
pub const PSNR_CAP_DB: f64 = 99.0;

const ROW_SUM_TOL: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;

/// 8-bit image, interleaved channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageArray {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl ImageArray {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation("image dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Validation(format!(
                "unsupported channel count {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{} pixels for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        f64::from(self.pixels[(y * self.width + x) * self.channels + c])
    }
}

/// Loads a PNG or binary PPM (P6) image. Grayscale sources stay single
/// channel; everything else is converted to RGB.
pub fn load_image(path: &Path) -> Result<ImageArray> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img.color().channel_count() {
        1 | 2 => ImageArray::new(w, h, 1, img.into_luma8().into_raw()),
        _ => ImageArray::new(w, h, 3, img.into_rgb8().into_raw()),
    }
}

fn same_shape(a: &ImageArray, b: &ImageArray) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "image shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn window_ssim(a: &ImageArray, b: &ImageArray, c: usize, x0: usize, y0: usize) -> f64 {
    let x1 = (x0 + SSIM_WINDOW).min(a.width);
    let y1 = (y0 + SSIM_WINDOW).min(a.height);
    let n = ((x1 - x0) * (y1 - y0)) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            sa += a.at(x, y, c);
            sb += b.at(x, y, c);
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let da = a.at(x, y, c) - ma;
            let db = b.at(x, y, c) - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
    }
    va /= n;
    vb /= n;
    cov /= n;
    ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
}

/// Mean SSIM over non-overlapping 8x8 windows, averaged over channels.
pub fn ssim(a: &ImageArray, b: &ImageArray) -> Result<f64> {
    same_shape(a, b)?;
    let mut per_channel = 0.0;
    for c in 0..a.channels {
        let (mut sum, mut windows) = (0.0, 0usize);
        for y0 in (0..a.height).step_by(SSIM_WINDOW) {
            for x0 in (0..a.width).step_by(SSIM_WINDOW) {
                sum += window_ssim(a, b, c, x0, y0);
                windows += 1;
            }
        }
        per_channel += sum / windows as f64;
    }
    Ok(per_channel / a.channels as f64)
}

pub fn mse(a: &ImageArray, b: &ImageArray) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.pixels.len() as f64)
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`] for identical images.
pub fn psnr(a: &ImageArray, b: &ImageArray) -> Result<f64> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Row-stochastic matrix of conditional class probabilities p(y|x).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    rows: Vec<Vec<f64>>,
}

impl ProbMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || cols == 0 {
            return Err(Error::Validation("probability matrix is empty".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::Validation(format!("row {i} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Validation(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn num_classes(&self) -> usize {
        self.rows[0].len()
    }

    pub fn marginal(&self) -> Vec<f64> {
        marginal(&self.rows)
    }
}

fn marginal(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for row in rows {
        for (acc, p) in m.iter_mut().zip(row) {
            *acc += p;
        }
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// KL divergence with the 0 ln 0 = 0 convention. `q` must be positive
/// wherever `p` is.
fn kl_unsmoothed(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

/// Inception Score: mean over `splits` contiguous chunks of
/// `exp(mean_x KL(p(y|x) || p(y)))`, with the marginal taken per chunk.
pub fn inception_score(p: &ProbMatrix, splits: usize) -> Result<f64> {
    let n = p.rows.len();
    if splits == 0 || splits > n {
        return Err(Error::Validation(format!(
            "splits must be in 1..={n}, got {splits}"
        )));
    }
    let mut total = 0.0;
    let mut start = 0;
    for s in 0..splits {
        // first n % splits chunks get one extra row
        let len = n / splits + usize::from(s < n % splits);
        let chunk = &p.rows[start..start + len];
        start += len;
        let m = marginal(chunk);
        let mean_kl = chunk.iter().map(|row| kl_unsmoothed(row, &m)).sum::<f64>() / len as f64;
        total += mean_kl.exp();
    }
    Ok(total / splits as f64)
}

/// Per-image IS contribution `KL(p(y|x) || p(y))` against the full-set marginal.
pub fn inception_contributions(p: &ProbMatrix) -> Vec<f64> {
    let m = p.marginal();
    p.rows.iter().map(|row| kl_unsmoothed(row, &m)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let stats = Self { mean, covariance };
        stats.validate()?;
        Ok(stats)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if self.covariance.nrows() != d || self.covariance.ncols() != d {
            return Err(Error::Dimension(format!(
                "mean has dimension {d}, covariance is {}x{}",
                self.covariance.nrows(),
                self.covariance.ncols()
            )));
        }
        let asym = (&self.covariance - self.covariance.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::Validation(format!(
                "covariance asymmetric by {asym:e}"
            )));
        }
        let min_eig = SymmetricEigen::new(self.covariance.clone())
            .eigenvalues
            .min();
        if min_eig < -PSD_TOL {
            return Err(Error::Validation(format!(
                "covariance not PSD (eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }
}

/// Sample mean and unbiased sample covariance.
pub fn fit_gaussian<V: AsRef<[f64]>>(vectors: &[V]) -> Result<GaussianStats> {
    if vectors.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let d = vectors[0].as_ref().len();
    if vectors.iter().any(|v| v.as_ref().len() != d) {
        return Err(Error::Dimension("vectors differ in dimension".into()));
    }
    let n = vectors.len() as f64;
    let mut mean = DVector::zeros(d);
    for v in vectors {
        mean += DVector::from_column_slice(v.as_ref());
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for v in vectors {
        let dv = DVector::from_column_slice(v.as_ref()) - &mean;
        cov += &dv * dv.transpose();
    }
    cov /= n - 1.0;
    // exact symmetry; accumulated outer products can differ in the last bit
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats {
        mean,
        covariance: cov,
    })
}

pub fn fit_gaussian_set(set: &EmbeddingSet) -> Result<GaussianStats> {
    let vectors: Vec<Vec<f64>> = set.records.iter().map(FeatureRecord::vector_f64).collect();
    fit_gaussian(&vectors)
}

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// Frechet distance between two Gaussians.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "gaussian dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    a.validate()?;
    b.validate()?;
    Ok(fid_unchecked(a, b))
}

fn fid_unchecked(a: &GaussianStats, b: &GaussianStats) -> f64 {
    let diff = &a.mean - &b.mean;
    let sqrt_a = sym_sqrt(&a.covariance);
    let inner = &sqrt_a * &b.covariance * &sqrt_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let value = diff.norm_squared() + a.covariance.trace() + b.covariance.trace() - 2.0 * tr_sqrt;
    value.max(0.0)
}

/// Per-image FID score: `FID(S \ {i}, R) - FID(S, R)`, positive when
/// including the image pulls the synthetic set toward the real one.
pub fn fid_deltas<V: AsRef<[f64]> + Sync>(real: &GaussianStats, syn: &[V]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    if syn.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "per-image FID needs at least 3 synthetic vectors, got {}",
            syn.len()
        )));
    }
    let full = fid(real, &fit_gaussian(syn)?)?;
    (0..syn.len())
        .into_par_iter()
        .map(|i| {
            let rest: Vec<&[f64]> = syn
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, v)| v.as_ref())
                .collect();
            Ok(fid_unchecked(real, &fit_gaussian(&rest)?) - full)
        })
        .collect()
}

/// The real record of the same class nearest (Euclidean) to `syn`; ties
/// go to the earlier record.
pub fn nearest_real<'a>(syn: &FeatureRecord, real: &'a EmbeddingSet) -> Result<&'a FeatureRecord> {
    let mut best: Option<(&FeatureRecord, f64)> = None;
    for r in real.class_records(syn.class_id) {
        if r.vector.len() != syn.vector.len() {
            return Err(Error::Dimension("real and synthetic dimensions differ".into()));
        }
        let d: f64 = r
            .vector
            .iter()
            .zip(&syn.vector)
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
            .sum();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((r, d));
        }
    }
    best.map(|(r, _)| r).ok_or(Error::MissingClass(syn.class_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregateKind {
    #[serde(rename = "ME")]
    Mean,
    #[serde(rename = "MD")]
    Median,
    #[serde(rename = "MX")]
    Max,
    #[serde(rename = "MN")]
    Min,
}

impl FromStr for AggregateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ME" => Ok(Self::Mean),
            "MD" => Ok(Self::Median),
            "MX" => Ok(Self::Max),
            "MN" => Ok(Self::Min),
            other => Err(Error::Validation(format!("unknown aggregate {other}"))),
        }
    }
}

/// Min-max normalization to [0, 1]; a constant vector maps to all 0.5.
pub fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

/// Per-image aggregate of per-metric min-max normalized scores.
pub fn aggregate_scores(per_metric: &BTreeMap<String, Vec<f64>>, kind: AggregateKind) -> Result<Vec<f64>> {
    let mut iter = per_metric.values();
    let n = iter
        .next()
        .ok_or_else(|| Error::Validation("no metrics to aggregate".into()))?
        .len();
    if iter.any(|v| v.len() != n) {
        return Err(Error::Dimension("metric score vectors differ in length".into()));
    }
    if per_metric.values().flatten().any(|s| !s.is_finite()) {
        return Err(Error::Validation("non-finite metric score".into()));
    }
    let normalized: Vec<Vec<f64>> = per_metric.values().map(|v| min_max_normalize(v)).collect();
    let out = (0..n)
        .map(|i| {
            let mut col: Vec<f64> = normalized.iter().map(|v| v[i]).collect();
            match kind {
                AggregateKind::Mean => col.iter().sum::<f64>() / col.len() as f64,
                AggregateKind::Max => col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                AggregateKind::Min => col.iter().copied().fold(f64::INFINITY, f64::min),
                AggregateKind::Median => {
                    col.sort_by(f64::total_cmp);
                    let k = col.len();
                    if k % 2 == 1 {
                        col[k / 2]
                    } else {
                        0.5 * (col[k / 2 - 1] + col[k / 2])
                    }
                }
            }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn psnr_cap_and_extremes() {
        let a = ImageArray::constant(4, 4, 3, 17).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let black = ImageArray::new(1, 1, 1, vec![0]).unwrap();
        let white = ImageArray::new(1, 1, 1, vec![255]).unwrap();
        assert_abs_diff_eq!(psnr(&black, &white).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let a = ImageArray::constant(4, 4, 1, 0).unwrap();
        let b = ImageArray::constant(4, 5, 1, 0).unwrap();
        assert!(matches!(ssim(&a, &b), Err(Error::Dimension(_))));
        assert!(matches!(psnr(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let a = ImageArray::constant(8, 8, 1, 100).unwrap();
        let b = ImageArray::constant(8, 8, 1, 120).unwrap();
        // zero variances: only the luminance term survives
        let expected = (2.0 * 100.0 * 120.0 + SSIM_C1) / (100.0f64.powi(2) + 120.0f64.powi(2) + SSIM_C1);
        assert_abs_diff_eq!(ssim(&a, &b).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn ssim_partial_windows() {
        let a = ImageArray::new(10, 3, 1, (0..30).map(|v| v as u8 * 7).collect()).unwrap();
        assert_abs_diff_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inception_score_closed_forms() {
        let uniform = ProbMatrix::new(vec![vec![0.25; 4]; 6]).unwrap();
        assert_abs_diff_eq!(inception_score(&uniform, 1).unwrap(), 1.0, epsilon = 1e-12);
        let one_hot: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..3).map(|c| if c == i % 3 { 1.0 } else { 0.0 }).collect())
            .collect();
        let p = ProbMatrix::new(one_hot).unwrap();
        assert_abs_diff_eq!(inception_score(&p, 1).unwrap(), 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(inception_score(&p, 2).unwrap(), 3.0, epsilon = 1e-9);
    }

    #[test]
    fn prob_matrix_validation() {
        assert!(matches!(
            ProbMatrix::new(vec![vec![0.5, 0.6]]),
            Err(Error::Validation(_))
        ));
        let p = ProbMatrix::new(vec![vec![0.5, 0.5]]).unwrap();
        assert!(inception_score(&p, 2).is_err());
    }

    #[test]
    fn fid_one_dimensional() {
        let a = GaussianStats::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let b = GaussianStats::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_abs_diff_eq!(fid(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
        let c = GaussianStats::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 4.0)).unwrap();
        // (sigma_a - sigma_b)^2 = (1 - 2)^2
        assert_abs_diff_eq!(fid(&a, &c).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fid_rejects_bad_covariance() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(GaussianStats::new(DVector::zeros(2), m).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(GaussianStats::new(DVector::zeros(2), neg).is_err());
        let a = GaussianStats::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let b = GaussianStats::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(fid(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn fit_gaussian_hand_values() {
        let g = fit_gaussian(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(g.mean[0], 1.0);
        assert_eq!(g.covariance[(0, 0)], 2.0);
        let same = fit_gaussian(&vec![vec![1.0, 2.0]; 5]).unwrap();
        assert_eq!(same.covariance.amax(), 0.0);
        assert!(matches!(
            fit_gaussian(&[vec![1.0]]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn aggregate_examples() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![1.0, 3.0, 2.0]);
        assert_eq!(
            aggregate_scores(&m, AggregateKind::Mean).unwrap(),
            vec![0.0, 1.0, 0.5]
        );
        let mut two = BTreeMap::new();
        two.insert("x".to_string(), vec![0.0, 0.2, 1.0]);
        two.insert("y".to_string(), vec![0.0, 0.8, 1.0]);
        assert_abs_diff_eq!(aggregate_scores(&two, AggregateKind::Max).unwrap()[1], 0.8);
        assert_abs_diff_eq!(aggregate_scores(&two, AggregateKind::Min).unwrap()[1], 0.2);
        let mut constant = BTreeMap::new();
        constant.insert("c".to_string(), vec![4.0; 3]);
        assert_eq!(
            aggregate_scores(&constant, AggregateKind::Median).unwrap(),
            vec![0.5; 3]
        );
        two.insert("z".to_string(), vec![1.0]);
        assert!(matches!(
            aggregate_scores(&two, AggregateKind::Mean),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn fid_deltas_favor_central_images() {
        let real = fit_gaussian(&[vec![0.0], vec![1.0], vec![-1.0], vec![0.5], vec![-0.5]]).unwrap();
        let syn = vec![vec![0.0], vec![0.6], vec![-0.6], vec![8.0]];
        let deltas = fid_deltas(&real, &syn).unwrap();
        let worst = deltas
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(worst, 3);
    }
}
