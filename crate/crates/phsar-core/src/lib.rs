//! Single-image super-resolution with per-cluster anchored linear filters.
//!
//! The pipeline upscales a grayscale image by first enlarging it with plain
//! bicubic interpolation and then replacing every pixel with a learned linear
//! combination of its surrounding patch. Patches are routed to filters by
//! local gradient statistics (orientation, strength, coherence) plus a phase
//! stretch transform response; the routing codebook is built with k-means over
//! training patches and one least-squares filter is fitted per bucket.
//! Because every output pixel is a fixed linear function of a small input
//! neighborhood, the method cannot invent structure that is not present in
//! the input, which is the property that matters for medical images.
//!
//! Module map: [`image`] holds the grayscale container, PNG/PGM I/O,
//! bicubic resampling and patches; [`pst`] the phase stretch transform
//! kernel and its 2-D frequency-domain application; [`features`] the
//! structure-tensor gradient features and the 5-component embedding;
//! [`codebook`] deterministic k-means anchors and nearest-centroid lookup;
//! [`learner`] the training-pair harvest, normal-equation accumulation and
//! solves; [`model`] the serialized filter bank (`.phsar` files);
//! [`upscaler`] inference; [`mod@bench`] PSNR and evaluation reports; and
//! [`synth`] deterministic synthetic corpus generation for tests and demos.

pub mod bench;
pub mod codebook;
pub mod error;
pub mod features;
pub mod image;
pub mod learner;
pub mod model;
pub mod pst;
pub mod rng;
pub mod synth;
pub mod upscaler;

mod linalg;

pub use error::{Error, Result};
pub use image::{extract_patch, load_image, resize_bicubic, save_image, GrayImage, Patch};
pub use model::Model;
pub use upscaler::{upscale, upscale_ablated};
