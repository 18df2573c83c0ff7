//! Phase stretch transform.
//!
//! A nonlinear, frequency-dependent phase is applied to the image spectrum
//! and the output is the phase angle of the inverse transform. The radial
//! phase profile is the arctan/log family
//!
//! `g(r) = W·r·atan(W·r) − ½·ln(1 + (W·r)²)`
//!
//! normalized so the maximum applied phase equals the strength parameter `S`.
//! A Gaussian low-pass gain (width `lp_sigma`, as a fraction of the Nyquist
//! radius) localizes the response; a very large `lp_sigma` effectively
//! disables it. The transform responds strongly at edges, which is what makes
//! it useful as a patch feature.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::{fill_patch_values, GrayImage};

/// Default phase strength S.
pub const DEFAULT_STRENGTH: f64 = 0.5;
/// Default frequency warp W.
pub const DEFAULT_WARP: f64 = 12.5;
/// Default low-pass width as a fraction of the Nyquist radius.
pub const DEFAULT_LP_SIGMA: f64 = 0.3;

/// Precomputed phase and low-pass grids for one image size.
///
/// Grids are stored in standard unshifted FFT order: bin `k` on an axis of
/// length `n` carries frequency `k/n` for `2k < n` and `(k − n)/n` otherwise,
/// so frequencies span [-0.5, 0.5) cycles per pixel.
#[derive(Debug, Clone)]
pub struct PstKernel {
    grid_width: usize,
    grid_height: usize,
    strength: f64,
    warp: f64,
    lp_sigma: f64,
    phase: Vec<f64>,
    lp_gain: Vec<f64>,
}

impl PstKernel {
    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn warp(&self) -> f64 {
        self.warp
    }

    pub fn lp_sigma(&self) -> f64 {
        self.lp_sigma
    }

    /// Phase at frequency bin (u, v), radians.
    pub fn phase_at(&self, u: usize, v: usize) -> f64 {
        self.phase[v * self.grid_width + u]
    }

    /// Low-pass gain at frequency bin (u, v), in [0, 1].
    pub fn gain_at(&self, u: usize, v: usize) -> f64 {
        self.lp_gain[v * self.grid_width + u]
    }
}

/// Phase of the inverse transform, one value in [-π, π] per pixel.
#[derive(Debug, Clone)]
pub struct PhaseImage {
    width: usize,
    height: usize,
    phase: Vec<f64>,
}

impl PhaseImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.phase
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.phase[y * self.width + x]
    }

    /// Reads the patch-shaped window centered at (cx, cy) with replicate
    /// padding, for feeding [`pst_feature`].
    pub fn patch_values(&self, cx: usize, cy: usize, patch_size: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(patch_size * patch_size);
        fill_patch_values(
            &self.phase,
            self.width,
            self.height,
            cx,
            cy,
            patch_size,
            &mut out,
        );
        out
    }
}

/// Frequency of bin `k` on an axis of length `n`, cycles per pixel.
#[inline]
fn fft_freq(k: usize, n: usize) -> f64 {
    if 2 * k < n {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

/// Unnormalized radial phase profile.
#[inline]
fn warp_profile(r: f64, warp: f64) -> f64 {
    let wr = warp * r;
    wr * wr.atan() - 0.5 * (1.0 + wr * wr).ln()
}

/// Builds the phase and low-pass grids for a `grid_width` x `grid_height`
/// spectrum.
pub fn build_kernel(
    grid_width: usize,
    grid_height: usize,
    strength: f64,
    warp: f64,
    lp_sigma: f64,
) -> Result<PstKernel> {
    if grid_width == 0 || grid_height == 0 {
        return Err(Error::Argument(format!(
            "kernel grid must be >= 1x1, got {grid_width}x{grid_height}"
        )));
    }
    if !(strength >= 0.0) || !strength.is_finite() {
        return Err(Error::Argument(format!(
            "phase strength must be >= 0, got {strength}"
        )));
    }
    if !(warp > 0.0) || !warp.is_finite() {
        return Err(Error::Argument(format!(
            "frequency warp must be > 0, got {warp}"
        )));
    }
    if !(lp_sigma > 0.0) || !lp_sigma.is_finite() {
        return Err(Error::Argument(format!(
            "low-pass sigma must be > 0, got {lp_sigma}"
        )));
    }

    let mut r_max: f64 = 0.0;
    for v in 0..grid_height {
        let fv = fft_freq(v, grid_height);
        for u in 0..grid_width {
            let fu = fft_freq(u, grid_width);
            r_max = r_max.max((fu * fu + fv * fv).sqrt());
        }
    }

    // A 1x1 grid has only the DC bin: zero phase, unit gain.
    let g_max = warp_profile(r_max, warp);
    let phase_scale = if g_max > 0.0 { strength / g_max } else { 0.0 };
    let two_sigma_sq = 2.0 * (lp_sigma * r_max) * (lp_sigma * r_max);

    let mut phase = Vec::with_capacity(grid_width * grid_height);
    let mut lp_gain = Vec::with_capacity(grid_width * grid_height);
    for v in 0..grid_height {
        let fv = fft_freq(v, grid_height);
        for u in 0..grid_width {
            let fu = fft_freq(u, grid_width);
            let r2 = fu * fu + fv * fv;
            let r = r2.sqrt();
            phase.push(phase_scale * warp_profile(r, warp));
            lp_gain.push(if two_sigma_sq > 0.0 {
                (-r2 / two_sigma_sq).exp()
            } else {
                1.0
            });
        }
    }

    Ok(PstKernel {
        grid_width,
        grid_height,
        strength,
        warp,
        lp_sigma,
        phase,
        lp_gain,
    })
}

/// In-place 2-D FFT over a row-major complex buffer, rows then columns.
fn fft_2d(buf: &mut [Complex<f64>], width: usize, height: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(width)
    } else {
        planner.plan_fft_forward(width)
    };
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }

    let col_fft = if inverse {
        planner.plan_fft_inverse(height)
    } else {
        planner.plan_fft_forward(height)
    };
    let mut col = vec![Complex::default(); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = buf[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            buf[y * width + x] = col[y];
        }
    }
}

/// Applies the kernel in the frequency domain and returns the phase of the
/// inverse transform:
/// `phase(x, y) = arg( IFFT2( FFT2(img) · gain · e^{-jφ} ) )`.
pub fn apply_pst(img: &GrayImage, kernel: &PstKernel) -> Result<PhaseImage> {
    let (w, h) = (img.width(), img.height());
    if kernel.grid_width != w || kernel.grid_height != h {
        return Err(Error::Argument(format!(
            "kernel grid {}x{} does not match image {w}x{h}",
            kernel.grid_width, kernel.grid_height
        )));
    }

    let mut buf: Vec<Complex<f64>> = img
        .samples()
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .collect();
    fft_2d(&mut buf, w, h, false);

    for (i, c) in buf.iter_mut().enumerate() {
        let g = kernel.lp_gain[i];
        let p = kernel.phase[i];
        *c *= Complex::new(g * p.cos(), -g * p.sin());
    }

    fft_2d(&mut buf, w, h, true);

    // rustfft leaves the inverse unscaled; scaling does not change the
    // phase angle but keeps the intermediate magnitudes meaningful.
    let norm = 1.0 / (w * h) as f64;
    let phase: Vec<f64> = buf.iter().map(|c| (c.im * norm).atan2(c.re * norm)).collect();
    Ok(PhaseImage {
        width: w,
        height: h,
        phase,
    })
}

/// The scalar PST feature of a patch: the mean absolute phase, in [0, π].
pub fn pst_feature(phase_values: &[f64]) -> Result<f64> {
    if phase_values.is_empty() {
        return Err(Error::Argument("pst feature of an empty patch".into()));
    }
    Ok(phase_values.iter().map(|v| v.abs()).sum::<f64>() / phase_values.len() as f64)
}
