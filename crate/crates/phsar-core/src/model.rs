//! The trained filter bank and its on-disk format.
//!
//! A `.phsar` file is little-endian binary: the magic `PHSAR\0`, a u32 format
//! version, a u32-length-prefixed UTF-8 JSON header (training config, bucket
//! geometry, per-bucket counts and fallback flags), then the codebook
//! centroids and the filters as raw IEEE-754 f64. Writing a loaded model
//! reproduces the input byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_DIM};
use crate::learner::TrainConfig;

pub const MODEL_MAGIC: &[u8; 6] = b"PHSAR\0";
pub const FORMAT_VERSION: u32 = 1;

/// The discrete delta: 1 at the patch center, 0 elsewhere. Applying it
/// reproduces the cheap-upscaled image exactly.
pub fn delta_filter(dim: usize) -> Vec<f64> {
    let mut f = vec![0.0; dim];
    f[(dim - 1) / 2] = 1.0;
    f
}

/// Every bucket flagged as fallback must hold the exact delta filter.
fn check_fallbacks_are_deltas(
    filters: &[f64],
    fallback: &[bool],
    dim: usize,
) -> std::result::Result<(), String> {
    let delta = delta_filter(dim);
    for (b, &flagged) in fallback.iter().enumerate() {
        if flagged && filters[b * dim..(b + 1) * dim] != delta[..] {
            return Err(format!("fallback bucket {b} does not hold the delta filter"));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: TrainConfig,
    k: usize,
    bucket_count: usize,
    dim: usize,
    seed: u64,
    counts: Vec<u64>,
    fallback: Vec<bool>,
}

/// A trained model: config echo, codebook, one filter per bucket, plus
/// per-bucket sample counts and delta-fallback flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: TrainConfig,
    codebook: Codebook,
    filters: Vec<f64>, // bucket-major, bucket_count x dim
    counts: Vec<u64>,
    fallback: Vec<bool>,
}

impl Model {
    /// Validates shapes and applies the flat-region guard: every bucket the
    /// all-zero feature vector can select must preserve constants, i.e. its
    /// filter coefficients must sum to 1 within 1e-3; offenders are replaced
    /// by the delta filter and flagged.
    pub fn assemble(
        config: TrainConfig,
        codebook: Codebook,
        filters: Vec<Vec<f64>>,
        counts: Vec<u64>,
        mut fallback: Vec<bool>,
    ) -> Result<Model> {
        config.validate()?;
        let bucket_count = config.bucket_count();
        let dim = config.dim();
        if codebook.k() != config.clusters {
            return Err(Error::Argument(format!(
                "codebook k {} does not match config clusters {}",
                codebook.k(),
                config.clusters
            )));
        }
        if filters.len() != bucket_count
            || counts.len() != bucket_count
            || fallback.len() != bucket_count
        {
            return Err(Error::Argument(format!(
                "expected {bucket_count} buckets, got {} filters / {} counts / {} flags",
                filters.len(),
                counts.len(),
                fallback.len()
            )));
        }
        let mut flat = Vec::with_capacity(bucket_count * dim);
        for f in &filters {
            if f.len() != dim {
                return Err(Error::Argument(format!(
                    "filter length {} does not match patch dim {dim}",
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument("non-finite filter coefficient".into()));
            }
            flat.extend_from_slice(f);
        }

        let zero_cluster = codebook.nearest_centroid(&FeatureVector::ZERO);
        let phases = config.phases();
        for p in 0..phases {
            let b = zero_cluster * phases + p;
            let sum: f64 = flat[b * dim..(b + 1) * dim].iter().sum();
            if (sum - 1.0).abs() > 1e-3 {
                flat[b * dim..(b + 1) * dim].copy_from_slice(&delta_filter(dim));
                fallback[b] = true;
            }
        }

        check_fallbacks_are_deltas(&flat, &fallback, dim)
            .map_err(Error::Argument)?;

        Ok(Model {
            config,
            codebook,
            filters: flat,
            counts,
            fallback,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn bucket_count(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    #[inline]
    pub fn filter(&self, bucket: usize) -> &[f64] {
        &self.filters[bucket * self.dim()..(bucket + 1) * self.dim()]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn fallback_flags(&self) -> &[bool] {
        &self.fallback
    }

    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|&&b| b).count()
    }

    /// True when every bucket holds the exact delta filter.
    pub fn is_all_delta(&self) -> bool {
        let delta = delta_filter(self.dim());
        (0..self.bucket_count()).all(|b| self.filter(b) == delta.as_slice())
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = ModelHeader {
            config: self.config.clone(),
            k: self.codebook.k(),
            bucket_count: self.bucket_count(),
            dim: self.dim(),
            seed: self.codebook.seed(),
            counts: self.counts.clone(),
            fallback: self.fallback.clone(),
        };
        let header_bytes = serde_json::to_vec(&header).expect("header serialization");
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for c in self.codebook.centroids() {
            for v in &c.0 {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for v in &self.filters {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// The exact file bytes; used for hashing and determinism checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(mut r: impl Read) -> Result<Model> {
        fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
            r.read_exact(buf).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    Error::Model("unexpected end of file".into())
                } else {
                    Error::Model(format!("read failed: {e}"))
                }
            })
        }

        let mut magic = [0u8; 6];
        read_exact(&mut r, &mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Model("bad magic, not a .phsar model file".into()));
        }
        let mut u32buf = [0u8; 4];
        read_exact(&mut r, &mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        read_exact(&mut r, &mut u32buf)?;
        let header_len = u32::from_le_bytes(u32buf) as usize;
        if header_len > 64 << 20 {
            return Err(Error::Model(format!(
                "implausible header length {header_len}"
            )));
        }
        let mut header_bytes = vec![0u8; header_len];
        read_exact(&mut r, &mut header_bytes)?;
        let header: ModelHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Model(format!("header parse failed: {e}")))?;

        header
            .config
            .validate()
            .map_err(|e| Error::Model(format!("invalid config in header: {e}")))?;
        if header.k != header.config.clusters
            || header.bucket_count != header.config.bucket_count()
            || header.dim != header.config.dim()
            || header.counts.len() != header.bucket_count
            || header.fallback.len() != header.bucket_count
        {
            return Err(Error::Model("inconsistent header geometry".into()));
        }
        // Bound the coefficient payload before allocating for it.
        let coeffs = header.k * FEATURE_DIM + header.bucket_count * header.dim;
        if coeffs > 64 << 20 {
            return Err(Error::Model(format!(
                "implausible model size ({coeffs} coefficients)"
            )));
        }

        let mut f64buf = [0u8; 8];
        let mut read_f64s = |n: usize, r: &mut dyn Read| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut f64buf).map_err(|e| {
                    if e.kind() == std::io::ErrorKind::UnexpectedEof {
                        Error::Model("unexpected end of file".into())
                    } else {
                        Error::Model(format!("read failed: {e}"))
                    }
                })?;
                let v = f64::from_le_bytes(f64buf);
                if !v.is_finite() {
                    return Err(Error::Model("non-finite coefficient".into()));
                }
                out.push(v);
            }
            Ok(out)
        };

        let centroid_values = read_f64s(header.k * FEATURE_DIM, &mut r)?;
        let filters = read_f64s(header.bucket_count * header.dim, &mut r)?;

        let mut trailing = [0u8; 1];
        match r.read(&mut trailing) {
            Ok(0) => {}
            Ok(_) => return Err(Error::Model("trailing data after filters".into())),
            Err(e) => return Err(Error::Model(format!("read failed: {e}"))),
        }

        check_fallbacks_are_deltas(&filters, &header.fallback, header.dim)
            .map_err(Error::Model)?;

        let centroids: Vec<FeatureVector> = centroid_values
            .chunks_exact(FEATURE_DIM)
            .map(|c| FeatureVector([c[0], c[1], c[2], c[3], c[4]]))
            .collect();
        let codebook = Codebook::from_parts(centroids, header.seed)
            .map_err(|e| Error::Model(format!("invalid codebook: {e}")))?;

        Ok(Model {
            config: header.config,
            codebook,
            filters,
            counts: header.counts,
            fallback: header.fallback,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Model::read_from(BufReader::new(file))
    }
}

/// FNV-1a hash of the serialized model, hex-encoded; recorded in reports so
/// a result can be traced to the exact model that produced it.
pub fn model_fingerprint(model: &Model) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in model.to_bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
