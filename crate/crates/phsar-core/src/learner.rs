//! Training: harvest (cheap-upscaled, high-resolution) pixel pairs, cluster
//! their features into a codebook, accumulate per-bucket normal equations,
//! and solve one filter per bucket.
//!
//! Training pairs live on the *base* image (the low-resolution input
//! bicubically enlarged back to target size), so a learned filter maps a base
//! patch directly to the corresponding high-resolution pixel and inference
//! geometry is trivial. Low-resolution inputs are manufactured from the
//! high-resolution originals by antialiased bicubic downscaling.
//!
//! Training is two passes: pass 1 harvests feature vectors and fits the
//! k-means codebook, pass 2 re-harvests and accumulates Gram/cross sufficient
//! statistics per bucket, which bounds memory at O(buckets · d²) regardless
//! of corpus size.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{kmeans_fit, Codebook};
use crate::error::{Error, Result};
use crate::features::{assemble_unchecked, gradient_features, FeatureVector, FeatureWeights};
use crate::image::{
    extract_patch, fill_patch_values, image_dimensions, load_image, resize_bicubic, GrayImage,
    Patch,
};
use crate::linalg::Cholesky;
use crate::model::{delta_filter, Model};
use crate::pst::{apply_pst, build_kernel, pst_feature, PhaseImage};

/// Phase stretch transform parameters carried in the training config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PstParams {
    pub strength: f64,
    pub warp: f64,
    pub lp_sigma: f64,
}

impl Default for PstParams {
    fn default() -> Self {
        PstParams {
            strength: crate::pst::DEFAULT_STRENGTH,
            warp: crate::pst::DEFAULT_WARP,
            lp_sigma: crate::pst::DEFAULT_LP_SIGMA,
        }
    }
}

/// All training hyperparameters, echoed into the model file and evaluation
/// reports so a result can always be traced to the exact settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Integer upscale factor, 2..=4.
    pub scale: usize,
    /// Odd patch side length.
    pub patch_size: usize,
    /// Number of k-means anchors.
    pub clusters: usize,
    /// Tikhonov weight, scaled by trace(gram)/d at solve time.
    pub ridge_lambda: f64,
    /// Buckets with fewer samples fall back to the delta filter.
    pub min_samples: usize,
    pub pst: PstParams,
    pub feature_weights: FeatureWeights,
    pub seed: u64,
    /// Split each cluster into scale² sub-buckets by output pixel phase.
    pub phase_stratify: bool,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    /// Cap on the number of feature vectors fed to k-means.
    pub feature_cap: usize,
}

pub const DEFAULT_PATCH_SIZE: usize = 11;
pub const DEFAULT_CLUSTERS: usize = 64;
pub const DEFAULT_RIDGE: f64 = 1e-6;

pub fn default_min_samples(patch_size: usize) -> usize {
    4 * patch_size * patch_size
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scale: 2,
            patch_size: DEFAULT_PATCH_SIZE,
            clusters: DEFAULT_CLUSTERS,
            ridge_lambda: DEFAULT_RIDGE,
            min_samples: default_min_samples(DEFAULT_PATCH_SIZE),
            pst: PstParams::default(),
            feature_weights: FeatureWeights::default(),
            seed: 0,
            phase_stratify: true,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-6,
            feature_cap: 2_000_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(Error::Argument(format!(
                "scale must be 2, 3 or 4, got {}",
                self.scale
            )));
        }
        if self.patch_size < 3 || self.patch_size > 255 || self.patch_size % 2 == 0 {
            return Err(Error::Argument(format!(
                "patch size must be an odd integer in 3..=255, got {}",
                self.patch_size
            )));
        }
        if self.clusters == 0 || self.clusters > 1_000_000 {
            return Err(Error::Argument(format!(
                "cluster count must be in 1..=1000000, got {}",
                self.clusters
            )));
        }
        if !self.ridge_lambda.is_finite() || self.ridge_lambda < 0.0 {
            return Err(Error::Argument(format!(
                "ridge lambda must be finite and >= 0, got {}",
                self.ridge_lambda
            )));
        }
        if !(self.pst.strength >= 0.0) || !self.pst.strength.is_finite() {
            return Err(Error::Argument(format!(
                "pst strength must be >= 0, got {}",
                self.pst.strength
            )));
        }
        if !(self.pst.warp > 0.0) || !self.pst.warp.is_finite() {
            return Err(Error::Argument(format!(
                "pst warp must be > 0, got {}",
                self.pst.warp
            )));
        }
        if !(self.pst.lp_sigma > 0.0) || !self.pst.lp_sigma.is_finite() {
            return Err(Error::Argument(format!(
                "pst lp-sigma must be > 0, got {}",
                self.pst.lp_sigma
            )));
        }
        self.feature_weights.validate()?;
        if self.kmeans_max_iter == 0 {
            return Err(Error::Argument("k-means max iterations must be >= 1".into()));
        }
        if !(self.kmeans_tol >= 0.0) {
            return Err(Error::Argument(format!(
                "k-means tolerance must be >= 0, got {}",
                self.kmeans_tol
            )));
        }
        if self.feature_cap == 0 {
            return Err(Error::Argument("feature cap must be >= 1".into()));
        }
        Ok(())
    }

    /// Patch dimensionality d = patch_size².
    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Total bucket count: clusters · scale² when phase-stratified.
    pub fn bucket_count(&self) -> usize {
        if self.phase_stratify {
            self.clusters * self.scale * self.scale
        } else {
            self.clusters
        }
    }

    /// Sub-bucket count per cluster.
    pub fn phases(&self) -> usize {
        if self.phase_stratify {
            self.scale * self.scale
        } else {
            1
        }
    }
}

/// Sub-pixel position of (x, y) relative to the upscaling lattice.
#[inline]
pub fn phase_class(x: usize, y: usize, scale: usize) -> usize {
    (y % scale) * scale + (x % scale)
}

/// The degradation + cheap-upscale pipeline shared by both harvest passes.
struct Prepared {
    hr: GrayImage,
    base: GrayImage,
    phase: Option<PhaseImage>,
}

/// Returns `None` when the image is smaller than one patch at LR scale and
/// should be skipped.
fn prepare(hr: &GrayImage, cfg: &TrainConfig) -> Result<Option<Prepared>> {
    let s = cfg.scale;
    if hr.width() < cfg.patch_size * s || hr.height() < cfg.patch_size * s {
        return Ok(None);
    }
    let hr = hr.trim_to_multiple(s)?;
    let (w, h) = (hr.width(), hr.height());
    let lr = resize_bicubic(&hr, w / s, h / s, true)?;
    let base = resize_bicubic(&lr, w, h, false)?;
    let phase = if cfg.feature_weights.pst > 0.0 {
        let kernel = build_kernel(w, h, cfg.pst.strength, cfg.pst.warp, cfg.pst.lp_sigma)?;
        Some(apply_pst(&base, &kernel)?)
    } else {
        None
    };
    Ok(Some(Prepared { hr, base, phase }))
}

/// Walks every valid patch center, handing each (x, y, feature) to `visit`.
fn walk_features(
    prep: &Prepared,
    cfg: &TrainConfig,
    mut visit: impl FnMut(usize, usize, &Patch, FeatureVector),
) {
    let margin = cfg.patch_size / 2;
    let (w, h) = (prep.base.width(), prep.base.height());
    let mut patch = extract_patch(&prep.base, margin, margin, cfg.patch_size)
        .expect("validated dimensions");
    let mut pst_buf: Vec<f64> = Vec::with_capacity(cfg.dim());
    for y in margin..h - margin {
        for x in margin..w - margin {
            patch.refill_from(&prep.base, x, y);
            let g = gradient_features(&patch);
            let pst_value = match &prep.phase {
                Some(ph) => {
                    fill_patch_values(
                        ph.samples(),
                        w,
                        h,
                        x,
                        y,
                        cfg.patch_size,
                        &mut pst_buf,
                    );
                    pst_feature(&pst_buf).expect("non-empty patch")
                }
                None => 0.0,
            };
            let fv = assemble_unchecked(&g, pst_value, &cfg.feature_weights);
            visit(x, y, &patch, fv);
        }
    }
}

/// Pass-1 harvest: the feature vector of every valid patch center of one
/// image. Returns an empty vector (the caller warns and skips) when the
/// image is smaller than one patch at LR scale.
pub fn harvest_features(hr: &GrayImage, cfg: &TrainConfig) -> Result<Vec<FeatureVector>> {
    cfg.validate()?;
    let Some(prep) = prepare(hr, cfg)? else {
        return Ok(Vec::new());
    };
    let margin = cfg.patch_size / 2;
    let per_axis = |n: usize| n - 2 * margin;
    let mut out = Vec::with_capacity(per_axis(prep.base.width()) * per_axis(prep.base.height()));
    walk_features(&prep, cfg, |_, _, _, fv| out.push(fv));
    Ok(out)
}

/// Number of patch centers one image contributes, from its dimensions alone.
fn center_count(width: usize, height: usize, cfg: &TrainConfig) -> u64 {
    let s = cfg.scale;
    if width < cfg.patch_size * s || height < cfg.patch_size * s {
        return 0;
    }
    let (w, h) = (width - width % s, height - height % s);
    let margin = cfg.patch_size / 2;
    ((w - 2 * margin) * (h - 2 * margin)) as u64
}

/// Strided variant for the training pass: keeps the features whose global
/// stream index (starting at `start`) is a multiple of `stride`, which makes
/// the collected set identical to striding the concatenated per-image
/// streams while the memory stays bounded by the cap.
fn harvest_features_strided(
    hr: &GrayImage,
    cfg: &TrainConfig,
    start: u64,
    stride: u64,
) -> Result<Vec<FeatureVector>> {
    if stride <= 1 {
        return harvest_features(hr, cfg);
    }
    let Some(prep) = prepare(hr, cfg)? else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    let mut index = start;
    walk_features(&prep, cfg, |_, _, _, fv| {
        if index % stride == 0 {
            out.push(fv);
        }
        index += 1;
    });
    Ok(out)
}

/// Pass-2 harvest: streams (bucket, base patch, hr pixel) training pairs into
/// `sink`. Returns the pair count; 0 means the image was skipped as too
/// small.
pub fn harvest_pairs(
    hr: &GrayImage,
    cfg: &TrainConfig,
    cb: &Codebook,
    mut sink: impl FnMut(usize, &Patch, f64),
) -> Result<u64> {
    cfg.validate()?;
    if cb.k() != cfg.clusters {
        return Err(Error::Argument(format!(
            "codebook has {} centroids, config wants {}",
            cb.k(),
            cfg.clusters
        )));
    }
    let Some(prep) = prepare(hr, cfg)? else {
        return Ok(0);
    };
    let phases = cfg.phases();
    let mut count = 0u64;
    let hr_img = &prep.hr;
    walk_features(&prep, cfg, |x, y, patch, fv| {
        let cluster = cb.nearest_centroid(&fv);
        let bucket = if cfg.phase_stratify {
            cluster * phases + phase_class(x, y, cfg.scale)
        } else {
            cluster
        };
        sink(bucket, patch, hr_img.get(x, y));
        count += 1;
    });
    Ok(count)
}

/// Per-bucket normal-equation sufficient statistics: the Gram matrix
/// Σ aᵀa (upper triangle, packed), the cross vector Σ a·b, and the sample
/// count. Merging accumulators is component-wise addition.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainAccumulator {
    dim: usize,
    gram: Vec<f64>,  // bucket-major, packed upper triangles
    cross: Vec<f64>, // bucket-major
    counts: Vec<u64>,
}

impl TrainAccumulator {
    pub fn new(bucket_count: usize, dim: usize) -> TrainAccumulator {
        let packed = dim * (dim + 1) / 2;
        TrainAccumulator {
            dim,
            gram: vec![0.0; bucket_count * packed],
            cross: vec![0.0; bucket_count * dim],
            counts: vec![0; bucket_count],
        }
    }

    pub fn bucket_count(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self, bucket: usize) -> u64 {
        self.counts[bucket]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    fn packed_len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    /// Adds one training pair. A bucket out of range is a logic error and
    /// panics.
    pub fn accumulate(&mut self, bucket: usize, patch: &Patch, target: f64) {
        self.accumulate_raw(bucket, patch.values(), target);
    }

    /// Raw-slice form of [`accumulate`](Self::accumulate) for callers whose
    /// sample vectors are not image patches.
    pub fn accumulate_raw(&mut self, bucket: usize, a: &[f64], target: f64) {
        let d = self.dim;
        assert!(bucket < self.counts.len(), "bucket {bucket} out of range");
        assert_eq!(a.len(), d, "patch does not match dim {d}");
        let packed = self.packed_len();
        let gram = &mut self.gram[bucket * packed..][..packed];
        let cross = &mut self.cross[bucket * d..][..d];
        let mut pos = 0;
        for i in 0..d {
            let ai = a[i];
            cross[i] += ai * target;
            for &aj in &a[i..] {
                gram[pos] += ai * aj;
                pos += 1;
            }
        }
        self.counts[bucket] += 1;
    }

    /// Component-wise sum; associative and commutative (up to floating-point
    /// rounding, exactly for the counts).
    pub fn merge(&mut self, other: &TrainAccumulator) {
        assert_eq!(self.dim, other.dim, "accumulator dim mismatch");
        assert_eq!(
            self.counts.len(),
            other.counts.len(),
            "accumulator bucket count mismatch"
        );
        for (a, b) in self.gram.iter_mut().zip(&other.gram) {
            *a += b;
        }
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Expands one bucket's Gram matrix to full symmetric row-major form.
    pub fn gram_full(&self, bucket: usize) -> Vec<f64> {
        let d = self.dim;
        let packed = &self.gram[bucket * self.packed_len()..][..self.packed_len()];
        let mut full = vec![0.0; d * d];
        let mut pos = 0;
        for i in 0..d {
            for j in i..d {
                full[i * d + j] = packed[pos];
                full[j * d + i] = packed[pos];
                pos += 1;
            }
        }
        full
    }

    pub fn cross(&self, bucket: usize) -> &[f64] {
        &self.cross[bucket * self.dim..][..self.dim]
    }
}

/// Relative pivot floor below which a bucket's normal equations are declared
/// singular and the bucket falls back to the delta filter.
const PIVOT_REL_TOL: f64 = 1e-12;

/// Solves the regularized normal equations of every bucket.
///
/// Buckets with fewer than `min_samples` pairs, and buckets whose solve hits
/// a tiny pivot, get the exact delta filter and a raised fallback flag. The
/// ridge is scaled by trace/d so `ridge_lambda` is dimensionless with
/// respect to patch energy.
pub fn solve_filters(acc: &TrainAccumulator, cfg: &TrainConfig) -> (Vec<Vec<f64>>, Vec<bool>) {
    let d = acc.dim();
    let results: Vec<(Vec<f64>, bool)> = (0..acc.bucket_count())
        .into_par_iter()
        .map(|bucket| {
            if acc.count(bucket) < cfg.min_samples as u64 {
                return (delta_filter(d), true);
            }
            let mut a = acc.gram_full(bucket);
            let trace: f64 = (0..d).map(|i| a[i * d + i]).sum();
            let ridge = cfg.ridge_lambda * trace / d as f64;
            let mut max_diag: f64 = 0.0;
            for i in 0..d {
                a[i * d + i] += ridge;
                max_diag = max_diag.max(a[i * d + i]);
            }
            let Some(factor) = Cholesky::factor(a.clone(), d, PIVOT_REL_TOL * max_diag) else {
                return (delta_filter(d), true);
            };
            let b = acc.cross(bucket);
            let mut h = factor.solve(b);
            // One step of iterative refinement against the regularized system.
            let mut residual = vec![0.0; d];
            for i in 0..d {
                let mut r = b[i];
                for j in 0..d {
                    r -= a[i * d + j] * h[j];
                }
                residual[i] = r;
            }
            let correction = factor.solve(&residual);
            for i in 0..d {
                h[i] += correction[i];
            }
            if h.iter().any(|v| !v.is_finite()) {
                return (delta_filter(d), true);
            }
            (h, false)
        })
        .collect();
    results.into_iter().unzip()
}

/// Fixed batch width for pass-2 accumulation: images inside a batch run in
/// parallel with private accumulators, batches merge in path order, so the
/// result is independent of thread count while memory stays bounded.
const ACCUMULATE_BATCH: usize = 4;

/// Full training run over a list of high-resolution images.
///
/// Pass 1 harvests features from every image and fits the codebook; pass 2
/// re-harvests, accumulates per-bucket statistics (parallel per image,
/// merged in path order) and solves the filters.
pub fn train(hr_paths: &[PathBuf], cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    if hr_paths.is_empty() {
        return Err(Error::Argument("no training images given".into()));
    }

    // Pass 1: features for the codebook. The per-image center counts are
    // known from the dimensions alone, so the subsampling stride can be
    // fixed up front and memory stays bounded by the cap.
    let mut starts = Vec::with_capacity(hr_paths.len());
    let mut center_counts = Vec::with_capacity(hr_paths.len());
    let mut total: u64 = 0;
    for path in hr_paths {
        let (w, h) = image_dimensions(path)?;
        let n = center_count(w, h, cfg);
        starts.push(total);
        center_counts.push(n);
        total += n;
        if n == 0 {
            eprintln!(
                "warning: {} is smaller than one {}x{} patch at 1/{} scale, skipped",
                path.display(),
                cfg.patch_size,
                cfg.patch_size,
                cfg.scale
            );
        }
    }
    let stride = total.div_ceil(cfg.feature_cap as u64).max(1);

    let per_image: Vec<Result<Vec<FeatureVector>>> = hr_paths
        .par_iter()
        .zip(&starts)
        .map(|(p, &start)| harvest_features_strided(&load_image(p)?, cfg, start, stride))
        .collect();
    let mut features = Vec::new();
    for harvested in per_image {
        features.extend(harvested?);
    }
    if features.is_empty() {
        return Err(Error::Training(
            "no usable training pairs in any input image".into(),
        ));
    }
    let clusters = cfg.clusters.min(features.len());
    if clusters < cfg.clusters {
        eprintln!(
            "warning: only {} features harvested, reducing clusters from {} to {}",
            features.len(),
            cfg.clusters,
            clusters
        );
    }
    let mut cb_cfg = cfg.clone();
    cb_cfg.clusters = clusters;
    let codebook = kmeans_fit(
        &features,
        clusters,
        cfg.seed,
        cfg.kmeans_max_iter,
        cfg.kmeans_tol,
    )?;
    drop(features);

    // Pass 2: per-bucket sufficient statistics.
    let mut acc = TrainAccumulator::new(cb_cfg.bucket_count(), cb_cfg.dim());
    let mut total_pairs = 0u64;
    for batch in hr_paths.chunks(ACCUMULATE_BATCH) {
        let partials: Vec<Result<(TrainAccumulator, u64)>> = batch
            .par_iter()
            .map(|p| {
                let img = load_image(p)?;
                let mut local = TrainAccumulator::new(cb_cfg.bucket_count(), cb_cfg.dim());
                let n = harvest_pairs(&img, &cb_cfg, &codebook, |bucket, patch, target| {
                    local.accumulate(bucket, patch, target);
                })?;
                Ok((local, n))
            })
            .collect();
        for partial in partials {
            let (local, n) = partial?;
            acc.merge(&local);
            total_pairs += n;
        }
    }
    if total_pairs == 0 {
        return Err(Error::Training(
            "no usable training pairs in any input image".into(),
        ));
    }

    let (filters, fallback) = solve_filters(&acc, &cb_cfg);
    Model::assemble(cb_cfg, codebook, filters, acc.counts().to_vec(), fallback)
}
