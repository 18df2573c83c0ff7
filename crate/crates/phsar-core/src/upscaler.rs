//! Inference: cheap-upscale the input, route every output pixel's patch to a
//! bucket, and apply that bucket's filter as a dot product.
//!
//! The output is a pure function of (input, model). Rows are computed in
//! parallel over disjoint output slices, so thread count cannot change the
//! result. Clamping to [0, 1] happens once, at the very end; intermediate
//! dot products may leave the range.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{assemble_unchecked, gradient_features, FeatureWeights};
use crate::image::{extract_patch, fill_patch_values, resize_bicubic, GrayImage};
use crate::learner::phase_class;
use crate::model::Model;
use crate::pst::{apply_pst, build_kernel, pst_feature, PhaseImage};

/// Inference output plus the bucket every output pixel was routed to.
pub struct UpscaleTrace {
    pub image: GrayImage,
    pub buckets: Vec<u32>,
}

fn check_input(lr: &GrayImage, model: &Model) -> Result<()> {
    let p = model.config().patch_size;
    if lr.width() < p || lr.height() < p {
        return Err(Error::Argument(format!(
            "input {}x{} too small: this model needs at least {p}x{p}",
            lr.width(),
            lr.height()
        )));
    }
    Ok(())
}

/// Routing mode for one inference pass.
enum Routing<'a> {
    /// Compute features and pick buckets; `weights` already has the PST
    /// component zeroed when the transform is skipped.
    Features {
        weights: FeatureWeights,
        phase: Option<PhaseImage>,
    },
    /// Replay a recorded bucket per output pixel.
    Frozen(&'a [u32]),
}

fn run(base: &GrayImage, model: &Model, routing: Routing) -> Result<UpscaleTrace> {
    let cfg = model.config();
    let s = cfg.scale;
    let (ow, oh) = (base.width(), base.height());
    let patch_size = cfg.patch_size;
    let phases = cfg.phases();

    let mut out = vec![0.0f64; ow * oh];
    let mut buckets = vec![0u32; ow * oh];

    out.par_chunks_mut(ow)
        .zip(buckets.par_chunks_mut(ow))
        .enumerate()
        .for_each(|(y, (out_row, bucket_row))| {
            let mut patch = extract_patch(base, 0, 0, patch_size).expect("validated size");
            let mut pst_buf: Vec<f64> = Vec::with_capacity(patch_size * patch_size);
            for x in 0..ow {
                patch.refill_from(base, x, y);
                let bucket = match &routing {
                    Routing::Frozen(b) => b[y * ow + x] as usize,
                    Routing::Features { weights, phase } => {
                        let g = gradient_features(&patch);
                        let pst_value = match phase {
                            Some(ph) => {
                                fill_patch_values(
                                    ph.samples(),
                                    ow,
                                    oh,
                                    x,
                                    y,
                                    patch_size,
                                    &mut pst_buf,
                                );
                                pst_feature(&pst_buf).expect("non-empty patch")
                            }
                            None => 0.0,
                        };
                        let fv = assemble_unchecked(&g, pst_value, weights);
                        let cluster = model.codebook().nearest_centroid(&fv);
                        if cfg.phase_stratify {
                            cluster * phases + phase_class(x, y, s)
                        } else {
                            cluster
                        }
                    }
                };
                let h = model.filter(bucket);
                let mut acc = 0.0;
                for (a, w) in patch.values().iter().zip(h) {
                    acc += a * w;
                }
                out_row[x] = acc.clamp(0.0, 1.0);
                bucket_row[x] = bucket as u32;
            }
        });

    Ok(UpscaleTrace {
        image: GrayImage::from_vec(ow, oh, out)?,
        buckets,
    })
}

/// Upscales by the model's scale factor.
pub fn upscale(lr: &GrayImage, model: &Model) -> Result<GrayImage> {
    Ok(upscale_traced(lr, model)?.image)
}

/// Upscale while recording which bucket every output pixel used.
pub fn upscale_traced(lr: &GrayImage, model: &Model) -> Result<UpscaleTrace> {
    upscale_traced_inner(lr, model, false)
}

fn upscale_traced_inner(lr: &GrayImage, model: &Model, drop_pst: bool) -> Result<UpscaleTrace> {
    check_input(lr, model)?;
    let cfg = model.config();
    let (ow, oh) = (lr.width() * cfg.scale, lr.height() * cfg.scale);
    let base = resize_bicubic(lr, ow, oh, false)?;
    let mut weights = cfg.feature_weights;
    if drop_pst {
        weights.pst = 0.0;
    }
    let phase = if weights.pst > 0.0 {
        let kernel = build_kernel(ow, oh, cfg.pst.strength, cfg.pst.warp, cfg.pst.lp_sigma)?;
        Some(apply_pst(&base, &kernel)?)
    } else {
        None
    };
    run(&base, model, Routing::Features { weights, phase })
}

/// The RAISR-like ablation path: identical pipeline with the PST feature
/// weight forced to zero. Requires a model trained the same way
/// (`feature_weights.pst == 0`); mixing a PST-trained model with the ablated
/// path would route patches through a codebook built for a different
/// embedding, so it is rejected.
pub fn upscale_ablated(lr: &GrayImage, model: &Model, drop_pst: bool) -> Result<GrayImage> {
    if drop_pst && model.config().feature_weights.pst != 0.0 {
        return Err(Error::Argument(
            "ablated upscale requires a model trained with PST weight 0 (train with --no-pst)"
                .into(),
        ));
    }
    Ok(upscale_traced_inner(lr, model, drop_pst)?.image)
}

/// Replays a recorded bucket assignment. With buckets fixed, the output is
/// exactly linear in the base patches.
pub fn upscale_with_buckets(
    lr: &GrayImage,
    model: &Model,
    buckets: &[u32],
) -> Result<GrayImage> {
    check_input(lr, model)?;
    let cfg = model.config();
    let expected = lr.width() * cfg.scale * lr.height() * cfg.scale;
    if buckets.len() != expected {
        return Err(Error::Argument(format!(
            "bucket map has {} entries, expected {expected}",
            buckets.len()
        )));
    }
    if let Some(&bad) = buckets.iter().find(|&&b| b as usize >= model.bucket_count()) {
        return Err(Error::Argument(format!(
            "bucket {bad} out of range (model has {})",
            model.bucket_count()
        )));
    }
    let base = resize_bicubic(lr, lr.width() * cfg.scale, lr.height() * cfg.scale, false)?;
    Ok(run(&base, model, Routing::Frozen(buckets))?.image)
}
