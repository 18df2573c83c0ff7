//! Grayscale image container, file I/O, bicubic resampling and patch
//! extraction.
//!
//! All pixel math in this crate is done in f64 over the nominal range [0, 1];
//! quantization happens only at file boundaries. Resampling uses the
//! Catmull-Rom bicubic kernel (a = -0.5) with half-pixel center alignment and
//! clamp-to-edge source addressing, the same convention for the upscale
//! baseline and for training-pair generation so the two are comparable.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageEncoder, ImageReader};

use crate::error::{Error, Result};

/// Row-major grid of finite f64 intensities, nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Builds an image from row-major samples, checking shape and finiteness.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<GrayImage> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be >= 1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Argument(format!(
                "sample count {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite sample {bad}")));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    /// Constant-valued image.
    pub fn constant(width: usize, height: usize, value: f64) -> Result<GrayImage> {
        GrayImage::from_vec(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<GrayImage> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage::from_vec(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    /// Sample with clamp-to-edge (replicate) addressing.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    /// Top-left crop of the given size.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<GrayImage> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Argument(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    /// Crops the right and bottom edges so both dimensions are multiples of
    /// `factor`.
    pub fn trim_to_multiple(&self, factor: usize) -> Result<GrayImage> {
        if factor == 0 {
            return Err(Error::Argument("trim factor must be >= 1".into()));
        }
        let w = self.width - self.width % factor;
        let h = self.height - self.height % factor;
        if w == 0 || h == 0 {
            return Err(Error::Argument(format!(
                "image {}x{} smaller than one {factor}x{factor} block",
                self.width, self.height
            )));
        }
        self.crop(0, 0, w, h)
    }
}

/// A square patch of image samples centered on one pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    size: usize,
    values: Vec<f64>,
}

impl Patch {
    pub fn from_values(size: usize, values: Vec<f64>) -> Result<Patch> {
        check_patch_size(size)?;
        if values.len() != size * size {
            return Err(Error::Argument(format!(
                "patch value count {} does not match size {size}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite patch value".into()));
        }
        Ok(Patch { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The sample the patch is centered on.
    pub fn center(&self) -> f64 {
        self.values[(self.size * self.size - 1) / 2]
    }

    #[inline]
    pub(crate) fn value_at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.size + x]
    }

    /// Refills an existing patch in place, avoiding reallocation in hot loops.
    pub(crate) fn refill_from(&mut self, img: &GrayImage, cx: usize, cy: usize) {
        fill_patch_values(
            img.samples(),
            img.width(),
            img.height(),
            cx,
            cy,
            self.size,
            &mut self.values,
        );
    }
}

fn check_patch_size(size: usize) -> Result<()> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::Argument(format!(
            "patch size must be an odd integer >= 3, got {size}"
        )));
    }
    Ok(())
}

/// Reads a `size`x`size` window centered at (cx, cy) from a row-major grid
/// with replicate padding. Shared by image patches and phase-image patches.
pub(crate) fn fill_patch_values(
    samples: &[f64],
    width: usize,
    height: usize,
    cx: usize,
    cy: usize,
    size: usize,
    out: &mut Vec<f64>,
) {
    out.clear();
    let half = (size / 2) as isize;
    for dy in -half..=half {
        let y = (cy as isize + dy).clamp(0, height as isize - 1) as usize;
        let row = &samples[y * width..(y + 1) * width];
        for dx in -half..=half {
            let x = (cx as isize + dx).clamp(0, width as isize - 1) as usize;
            out.push(row[x]);
        }
    }
}

/// Extracts the patch centered at (cx, cy) with replicate padding for taps
/// that fall outside the image.
pub fn extract_patch(img: &GrayImage, cx: usize, cy: usize, patch_size: usize) -> Result<Patch> {
    check_patch_size(patch_size)?;
    if cx >= img.width() || cy >= img.height() {
        return Err(Error::Argument(format!(
            "patch center ({cx}, {cy}) outside {}x{}",
            img.width(),
            img.height()
        )));
    }
    let mut values = Vec::with_capacity(patch_size * patch_size);
    fill_patch_values(
        img.samples(),
        img.width(),
        img.height(),
        cx,
        cy,
        patch_size,
        &mut values,
    );
    Ok(Patch {
        size: patch_size,
        values,
    })
}

/// Catmull-Rom cubic kernel (the a = -0.5 member of the Keys family).
/// Support is |x| < 2 and the integer lattice interpolates exactly.
#[inline]
pub fn catmull_rom(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        ((1.5 * a - 2.5) * a) * a + 1.0
    } else if a < 2.0 {
        ((-0.5 * a + 2.5) * a - 4.0) * a + 2.0
    } else {
        0.0
    }
}

/// One output tap: first source index, normalized weights, and a reference
/// source index (the nearest pixel to the tap center).
struct TapSet {
    start: isize,
    weights: Vec<f64>,
    ref_idx: usize,
}

/// Precomputes the taps for one axis. `antialias` widens the kernel by the
/// inverse scale factor when the axis is shrinking (polyphase low-pass).
fn plan_taps(src_n: usize, dst_n: usize, antialias: bool) -> Vec<TapSet> {
    let scale = src_n as f64 / dst_n as f64;
    let sratio = if antialias && scale > 1.0 { scale } else { 1.0 };
    let support = 2.0 * sratio;
    (0..dst_n)
        .map(|dst| {
            let center = (dst as f64 + 0.5) * scale - 0.5;
            let start = (center - support).floor() as isize;
            let end = (center + support).ceil() as isize;
            let mut weights: Vec<f64> = (start..=end)
                .map(|i| catmull_rom((i as f64 - center) / sratio))
                .collect();
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }
            let ref_idx = (center.round() as isize).clamp(0, src_n as isize - 1) as usize;
            TapSet {
                start,
                weights,
                ref_idx,
            }
        })
        .collect()
}

/// Weighted sum accumulated as deviations from a reference sample, so a
/// constant input reproduces the constant bit for bit.
#[inline]
fn apply_taps(t: &TapSet, n: isize, sample: impl Fn(usize) -> f64) -> f64 {
    let reference = sample(t.ref_idx);
    let mut acc = 0.0;
    for (k, w) in t.weights.iter().enumerate() {
        let i = (t.start + k as isize).clamp(0, n - 1) as usize;
        acc += (sample(i) - reference) * w;
    }
    (reference + acc).clamp(0.0, 1.0)
}

/// Resamples along the width; height is unchanged. Output clamped to [0, 1].
fn resample_width(img: &GrayImage, out_w: usize, antialias: bool) -> GrayImage {
    let taps = plan_taps(img.width(), out_w, antialias);
    let n = img.width() as isize;
    let mut data = Vec::with_capacity(out_w * img.height());
    for y in 0..img.height() {
        let row = &img.samples()[y * img.width()..(y + 1) * img.width()];
        for t in &taps {
            data.push(apply_taps(t, n, |i| row[i]));
        }
    }
    GrayImage {
        width: out_w,
        height: img.height(),
        data,
    }
}

/// Resamples along the height; width is unchanged. Output clamped to [0, 1].
fn resample_height(img: &GrayImage, out_h: usize, antialias: bool) -> GrayImage {
    let taps = plan_taps(img.height(), out_h, antialias);
    let w = img.width();
    let n = img.height() as isize;
    let mut data = vec![0.0; w * out_h];
    for (dy, t) in taps.iter().enumerate() {
        for x in 0..w {
            data[dy * w + x] = apply_taps(t, n, |i| img.samples()[i * w + x]);
        }
    }
    GrayImage {
        width: w,
        height: out_h,
        data,
    }
}

/// Separable Catmull-Rom resampling to `out_w` x `out_h`.
///
/// Pixel centers are aligned by the half-pixel convention
/// `src = (dst + 0.5) * (src_n / out_n) - 0.5`; out-of-range taps replicate
/// the edge sample; weights are normalized to sum to one, so constants are
/// preserved exactly. With `antialias` set, shrinking directions widen the
/// kernel support by the inverse scale factor. The width pass runs first and
/// each pass clamps its output to [0, 1], so resizing width then height in
/// two calls reproduces the combined call bit for bit.
pub fn resize_bicubic(
    img: &GrayImage,
    out_w: usize,
    out_h: usize,
    antialias: bool,
) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Argument(format!(
            "output dimensions must be >= 1, got {out_w}x{out_h}"
        )));
    }
    let wide = resample_width(img, out_w, antialias);
    Ok(resample_height(&wide, out_h, antialias))
}

/// Rec.601 luma from 8-bit RGB, computed with integer weights so that
/// saturated inputs hit the range endpoints exactly:
/// `(299 R + 587 G + 114 B) / 255000`.
#[inline]
fn rec601_luma(r: u8, g: u8, b: u8) -> f64 {
    (299.0 * r as f64 + 587.0 * g as f64 + 114.0 * b as f64) / 255_000.0
}

/// Reads just the dimensions of an image file, without decoding the pixels.
pub fn image_dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let (w, h) = reader.into_dimensions().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    Ok((w as usize, h as usize))
}

/// Loads an 8/16-bit grayscale or 8-bit RGB image (PNG or binary PGM).
///
/// RGB is converted to luma with Rec.601 weights; integer samples are scaled
/// to [0, 1] by the type maximum.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f64> = match &decoded {
        DynamicImage::ImageLuma8(img) => img.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(img) => img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb8(img) => img
            .pixels()
            .map(|p| rec601_luma(p.0[0], p.0[1], p.0[2]))
            .collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported pixel format {:?} (expected 8/16-bit gray or 8-bit RGB)",
                path.display(),
                other.color()
            )))
        }
    };
    GrayImage::from_vec(w, h, data)
}

/// Quantizes to 8 bits: clamp to [0, 1], then round-half-up to 0..255.
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit grayscale PNG or binary PGM, chosen by file extension.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.samples().iter().map(|&v| quantize_u8(v)).collect();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let map_err = |e: image::ImageError| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let (w, h) = (img.width() as u32, img.height() as u32);
    match ext.as_str() {
        "png" => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            image::codecs::png::PngEncoder::new(BufWriter::new(file))
                .write_image(&bytes, w, h, image::ExtendedColorType::L8)
                .map_err(map_err)
        }
        "pgm" => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            PnmEncoder::new(BufWriter::new(file))
                .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
                .write_image(&bytes, w, h, image::ExtendedColorType::L8)
                .map_err(map_err)
        }
        other => Err(Error::Format(format!(
            "unsupported output extension \"{other}\" (use .png or .pgm)"
        ))),
    }
}
