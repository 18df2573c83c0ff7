//! Feature-space codebook: seeded k-means++ clustering and nearest-anchor
//! lookup.
//!
//! Determinism is a hard requirement here: the same (features, k, seed)
//! must produce a bit-identical codebook on every run and at every thread
//! count. The assignment step is parallelized per point (each point's result
//! depends only on its own data) while every floating-point reduction runs
//! sequentially in index order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_DIM};
use crate::rng::XorShift64Star;

/// K anchor points over feature space plus the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<FeatureVector>,
    seed: u64,
}

impl Codebook {
    pub fn from_parts(centroids: Vec<FeatureVector>, seed: u64) -> Result<Codebook> {
        if centroids.is_empty() {
            return Err(Error::Argument("codebook needs at least one centroid".into()));
        }
        if centroids.iter().any(|c| c.0.iter().any(|v| !v.is_finite())) {
            return Err(Error::Argument("non-finite centroid".into()));
        }
        Ok(Codebook { centroids, seed })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centroids(&self) -> &[FeatureVector] {
        &self.centroids
    }

    /// Index of the nearest centroid by squared Euclidean distance, ties
    /// broken toward the lowest index. This linear scan is the hot inference
    /// path; at the K used here (tens to hundreds) it beats any index
    /// structure, but it is the place to revisit for much larger codebooks.
    #[inline]
    pub fn nearest_centroid(&self, f: &FeatureVector) -> usize {
        let mut best = 0;
        let mut best_d = f.dist_sq(&self.centroids[0]);
        for (i, c) in self.centroids.iter().enumerate().skip(1) {
            let d = f.dist_sq(c);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

/// Deterministic stride subsampling down to at most `cap` items, used to
/// bound k-means memory and time on large harvests.
pub fn stride_subsample(features: &[FeatureVector], cap: usize) -> Vec<FeatureVector> {
    if cap == 0 || features.len() <= cap {
        return features.to_vec();
    }
    let stride = features.len().div_ceil(cap);
    features.iter().step_by(stride).copied().collect()
}

/// Fixed chunk size for the parallel assignment pass. Results are reduced in
/// chunk order, so the value changes performance, never output.
const ASSIGN_CHUNK: usize = 8192;

/// Assigns every feature to its nearest centroid; also records the squared
/// distance. Pure per point, so parallelism cannot affect the result.
fn assign(
    features: &[FeatureVector],
    centroids: &[FeatureVector],
    out_idx: &mut [u32],
    out_d2: &mut [f64],
) {
    out_idx
        .par_chunks_mut(ASSIGN_CHUNK)
        .zip(out_d2.par_chunks_mut(ASSIGN_CHUNK))
        .zip(features.par_chunks(ASSIGN_CHUNK))
        .for_each(|((idx, d2), feats)| {
            for i in 0..feats.len() {
                let mut best = 0u32;
                let mut best_d = feats[i].dist_sq(&centroids[0]);
                for (c, cen) in centroids.iter().enumerate().skip(1) {
                    let d = feats[i].dist_sq(cen);
                    if d < best_d {
                        best = c as u32;
                        best_d = d;
                    }
                }
                idx[i] = best;
                d2[i] = best_d;
            }
        });
}

/// Seeded k-means++ initialization.
fn init_plus_plus(
    features: &[FeatureVector],
    k: usize,
    rng: &mut XorShift64Star,
) -> Vec<FeatureVector> {
    let n = features.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(features[rng.next_index(n)]);

    // Running min squared distance to the chosen set.
    let mut d2 = vec![f64::INFINITY; n];
    while centroids.len() < k {
        let latest = *centroids.last().unwrap();
        d2.par_chunks_mut(ASSIGN_CHUNK)
            .zip(features.par_chunks(ASSIGN_CHUNK))
            .for_each(|(d2s, feats)| {
                for i in 0..feats.len() {
                    let d = feats[i].dist_sq(&latest);
                    if d < d2s[i] {
                        d2s[i] = d;
                    }
                }
            });
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            let mut last_positive = 0;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    last_positive = i;
                }
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or(last_positive)
        } else {
            // All points coincide with chosen centroids; any pick is as good.
            rng.next_index(n)
        };
        centroids.push(features[next]);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Ties in assignment go to the lowest centroid index; clusters that empty
/// out are reseeded to the point farthest from its assigned centroid;
/// iteration stops when the largest centroid movement drops to `tol` or
/// after `max_iter` rounds. Within-cluster SSE is checked to be
/// non-increasing across iterations (debug builds).
pub fn kmeans_fit(
    features: &[FeatureVector],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<Codebook> {
    if features.is_empty() {
        return Err(Error::Argument("k-means over an empty feature set".into()));
    }
    if k == 0 || k > features.len() {
        return Err(Error::Argument(format!(
            "cluster count {k} must be in 1..={}",
            features.len()
        )));
    }
    if max_iter == 0 {
        return Err(Error::Argument("max_iter must be >= 1".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::Argument(format!("tolerance must be >= 0, got {tol}")));
    }

    let n = features.len();
    let mut rng = XorShift64Star::new(seed);
    let mut centroids = init_plus_plus(features, k, &mut rng);

    let mut idx = vec![0u32; n];
    let mut d2 = vec![0.0f64; n];
    let mut prev_sse = f64::INFINITY;

    for _iter in 0..max_iter {
        assign(features, &centroids, &mut idx, &mut d2);

        let sse: f64 = d2.iter().sum();
        debug_assert!(
            sse <= prev_sse * (1.0 + 1e-12) + 1e-300,
            "SSE increased: {prev_sse} -> {sse}"
        );
        prev_sse = sse;

        let mut sums = vec![[0.0f64; FEATURE_DIM]; k];
        let mut counts = vec![0u64; k];
        for (i, &c) in idx.iter().enumerate() {
            let c = c as usize;
            for j in 0..FEATURE_DIM {
                sums[c][j] += features[i].0[j];
            }
            counts[c] += 1;
        }

        let mut next: Vec<FeatureVector> = (0..k)
            .map(|c| {
                if counts[c] > 0 {
                    let mut m = [0.0; FEATURE_DIM];
                    for j in 0..FEATURE_DIM {
                        m[j] = sums[c][j] / counts[c] as f64;
                    }
                    FeatureVector(m)
                } else {
                    centroids[c] // reseeded below
                }
            })
            .collect();

        // Reseed empty clusters, lowest index first, each taking the point
        // currently farthest from its assigned centroid.
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far = None;
            let mut far_d = -1.0;
            for i in 0..n {
                if !taken[i] && d2[i] > far_d {
                    far_d = d2[i];
                    far = Some(i);
                }
            }
            if let Some(i) = far {
                taken[i] = true;
                next[c] = features[i];
            }
        }

        let movement = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| a.dist_sq(b).sqrt())
            .fold(0.0f64, f64::max);
        centroids = next;
        if movement <= tol {
            break;
        }
    }

    Codebook::from_parts(centroids, seed)
}
