//! Deterministic synthetic grayscale images.
//!
//! Mixtures of smooth backgrounds, soft oriented edges, Gaussian blobs and
//! thin ridges: enough structure at every orientation to train and exercise
//! the filter bank without shipping image data. The same seed always
//! produces the same corpus, which the test suites rely on.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::image::{save_image, GrayImage};
use crate::rng::XorShift64Star;

struct Edge {
    nx: f64,
    ny: f64,
    offset: f64,
    contrast: f64,
    softness: f64,
}

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    amp: f64,
}

struct Ridge {
    nx: f64,
    ny: f64,
    offset: f64,
    sigma: f64,
    amp: f64,
}

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

/// Windowed oriented grating: texture whose gradient statistics resemble an
/// edge but whose frequency content differs.
struct Gabor {
    cx: f64,
    cy: f64,
    window: f64,
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

/// One synthetic image. Different seeds give independent content.
pub fn synth_image(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = XorShift64Star::new(seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
    let diag = ((width * width + height * height) as f64).sqrt();

    let waves: Vec<Wave> = (0..3)
        .map(|_| Wave {
            fx: (rng.next_f64() - 0.5) * 4.0 / width as f64,
            fy: (rng.next_f64() - 0.5) * 4.0 / height as f64,
            phase: rng.next_f64() * 2.0 * PI,
            amp: 0.04 + 0.05 * rng.next_f64(),
        })
        .collect();

    let edges: Vec<Edge> = (0..4 + rng.next_index(4))
        .map(|_| {
            let theta = rng.next_f64() * PI;
            Edge {
                nx: theta.cos(),
                ny: theta.sin(),
                offset: (rng.next_f64() - 0.5) * diag,
                contrast: (rng.next_f64() - 0.5) * 0.5,
                softness: 0.6 + 1.6 * rng.next_f64(),
            }
        })
        .collect();

    let blobs: Vec<Blob> = (0..3 + rng.next_index(3))
        .map(|_| Blob {
            cx: rng.next_f64() * width as f64,
            cy: rng.next_f64() * height as f64,
            sigma: 2.0 + 10.0 * rng.next_f64(),
            amp: (rng.next_f64() - 0.5) * 0.4,
        })
        .collect();

    let ridges: Vec<Ridge> = (0..2 + rng.next_index(2))
        .map(|_| {
            let theta = rng.next_f64() * PI;
            Ridge {
                nx: theta.cos(),
                ny: theta.sin(),
                offset: (rng.next_f64() - 0.5) * diag,
                sigma: 0.8 + 1.5 * rng.next_f64(),
                amp: (rng.next_f64() - 0.5) * 0.35,
            }
        })
        .collect();

    let gabors: Vec<Gabor> = (0..2 + rng.next_index(3))
        .map(|_| {
            let theta = rng.next_f64() * PI;
            let freq = 0.08 + 0.22 * rng.next_f64();
            Gabor {
                cx: rng.next_f64() * width as f64,
                cy: rng.next_f64() * height as f64,
                window: 5.0 + 12.0 * rng.next_f64(),
                fx: freq * theta.cos(),
                fy: freq * theta.sin(),
                phase: rng.next_f64() * 2.0 * PI,
                amp: 0.08 + 0.18 * rng.next_f64(),
            }
        })
        .collect();

    let cx0 = width as f64 / 2.0;
    let cy0 = height as f64 / 2.0;
    GrayImage::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let mut v = 0.5;
        for w in &waves {
            v += w.amp * (2.0 * PI * (w.fx * xf + w.fy * yf) + w.phase).sin();
        }
        for e in &edges {
            let d = (xf - cx0) * e.nx + (yf - cy0) * e.ny - e.offset;
            v += e.contrast * (d / e.softness).tanh();
        }
        for b in &blobs {
            let r2 = (xf - b.cx) * (xf - b.cx) + (yf - b.cy) * (yf - b.cy);
            v += b.amp * (-r2 / (2.0 * b.sigma * b.sigma)).exp();
        }
        for r in &ridges {
            let d = (xf - cx0) * r.nx + (yf - cy0) * r.ny - r.offset;
            v += r.amp * (-d * d / (2.0 * r.sigma * r.sigma)).exp();
        }
        for g in &gabors {
            let r2 = (xf - g.cx) * (xf - g.cx) + (yf - g.cy) * (yf - g.cy);
            let env = (-r2 / (2.0 * g.window * g.window)).exp();
            v += g.amp * env * (2.0 * PI * (g.fx * xf + g.fy * yf) + g.phase).sin();
        }
        v.clamp(0.02, 0.98)
    })
    .expect("finite by construction")
}

/// Writes `count` synthetic PNG images into `dir` (created if needed) and
/// returns their paths in name order.
pub fn write_corpus(
    dir: &Path,
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut rng = XorShift64Star::new(seed);
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = synth_image(width, height, rng.next_u64());
        let path = dir.join(format!("synth_{i:03}.png"));
        save_image(&img, &path)?;
        paths.push(path);
    }
    Ok(paths)
}
