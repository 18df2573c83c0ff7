//! PSNR and the evaluation harness: bicubic baseline vs. model (and
//! optionally the PST-ablated path) over a directory of ground-truth images,
//! with wall-clock timings and a JSON report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, resize_bicubic, GrayImage};
use crate::model::{model_fingerprint, Model};
use crate::upscaler::{upscale, upscale_ablated};

/// `10·log10(peak²/MSE)` in dB; identical images yield the infinity
/// sentinel (serialized as the string `"inf"`).
pub fn psnr(a: &GrayImage, b: &GrayImage, peak: f64) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Argument(format!(
            "psnr dimensions differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::Argument(format!("peak must be > 0, got {peak}")));
    }
    let n = a.samples().len() as f64;
    let mut sq = 0.0;
    for (x, y) in a.samples().iter().zip(b.samples()) {
        let d = x - y;
        sq += d * d;
    }
    let mse = sq / n;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (peak * peak / mse).log10())
    }
}

/// Serializes possibly-infinite dB values as JSON numbers, with the string
/// `"inf"` as the sentinel for a zero-MSE comparison.
mod db_serde {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    struct DbVisitor;

    impl Visitor<'_> for DbVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a dB number or the string \"inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                other => Err(E::custom(format!("unexpected dB string {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(DbVisitor)
    }
}

mod db_serde_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(serde::Serialize, serde::Deserialize)]
    struct Wrap(#[serde(with = "super::db_serde")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => serde::Serialize::serialize(&Wrap(*x), s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

/// One evaluated image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    #[serde(with = "db_serde")]
    pub psnr_bicubic: f64,
    #[serde(with = "db_serde")]
    pub psnr_model: f64,
    #[serde(
        with = "db_serde_opt",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub psnr_ablated: Option<f64>,
    pub upscale_millis: f64,
    pub bicubic_millis: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablated_millis: Option<f64>,
}

/// Column means over the rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalAggregate {
    #[serde(with = "db_serde")]
    pub psnr_bicubic: f64,
    #[serde(with = "db_serde")]
    pub psnr_model: f64,
    #[serde(
        with = "db_serde_opt",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub psnr_ablated: Option<f64>,
    pub upscale_millis: f64,
    pub bicubic_millis: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablated_millis: Option<f64>,
}

/// Everything needed to reproduce the numbers: model identity, protocol
/// constants, and the machine the timings came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfigEcho {
    pub scale: usize,
    pub patch_size: usize,
    pub clusters: usize,
    pub seed: u64,
    pub phase_stratify: bool,
    pub pst_weight: f64,
    pub model_hash: String,
    /// Pixels cropped from each side before PSNR (resampling edge effects).
    pub border_crop: usize,
    /// PSNR peak; 1.0 on normalized samples is numerically the same dB as
    /// peak 255 on 8-bit-scaled samples.
    pub peak: f64,
    pub timing_runs: usize,
    pub machine: String,
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfigEcho,
    pub rows: Vec<EvalRow>,
    pub aggregate: EvalAggregate,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Also run the PST-skipping ablated path (requires a model trained with
    /// PST weight 0).
    pub ablate: bool,
    /// Timings take the best of this many runs.
    pub timing_runs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ablate: false,
            timing_runs: 3,
        }
    }
}

/// Lists the evaluable images (PNG/PGM) in a directory, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png") | Some("pgm")) {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

fn best_of<T>(runs: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let mut best_ms = f64::INFINITY;
    let mut out = None;
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        let value = f()?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        if ms < best_ms {
            best_ms = ms;
        }
        out = Some(value);
    }
    Ok((out.unwrap(), best_ms))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

/// Evaluates a model against every image in `hr_dir`.
///
/// Per image: trim to a multiple of the scale, manufacture the LR input by
/// antialiased downscale, upscale with both the bicubic baseline and the
/// model (plus the ablated path when requested), and compare PSNR against
/// the ground truth with `scale` pixels cropped from each border. PSNR
/// columns are deterministic; timing columns are wall-clock best-of-N.
pub fn evaluate(model: &Model, hr_dir: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let cfg = model.config();
    if opts.ablate && cfg.feature_weights.pst != 0.0 {
        return Err(Error::Argument(
            "ablated evaluation requires a model trained with PST weight 0".into(),
        ));
    }
    let paths = list_images(hr_dir)?;
    if paths.is_empty() {
        return Err(Error::Argument(format!(
            "no PNG/PGM images in {}",
            hr_dir.display()
        )));
    }

    let s = cfg.scale;
    let mut rows = Vec::with_capacity(paths.len());
    for path in &paths {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let hr = load_image(path)?;
        if hr.width() < cfg.patch_size * s || hr.height() < cfg.patch_size * s {
            return Err(Error::Argument(format!(
                "{name}: {}x{} too small to evaluate at scale {s} with patch {}",
                hr.width(),
                hr.height(),
                cfg.patch_size
            )));
        }
        let hr = hr.trim_to_multiple(s)?;
        let (w, h) = (hr.width(), hr.height());
        let lr = resize_bicubic(&hr, w / s, h / s, true)?;

        let (bicubic, bicubic_ms) =
            best_of(opts.timing_runs, || resize_bicubic(&lr, w, h, false))?;
        let (model_out, model_ms) = best_of(opts.timing_runs, || upscale(&lr, model))?;
        let ablated = if opts.ablate {
            Some(best_of(opts.timing_runs, || {
                upscale_ablated(&lr, model, true)
            })?)
        } else {
            None
        };

        // Crop s pixels per side; resampling edge effects would otherwise
        // dominate desk-scale images.
        let crop = |img: &GrayImage| img.crop(s, s, w - 2 * s, h - 2 * s);
        let hr_c = crop(&hr)?;
        let row = EvalRow {
            name,
            psnr_bicubic: psnr(&hr_c, &crop(&bicubic)?, 1.0)?,
            psnr_model: psnr(&hr_c, &crop(&model_out)?, 1.0)?,
            psnr_ablated: match &ablated {
                Some((img, _)) => Some(psnr(&hr_c, &crop(img)?, 1.0)?),
                None => None,
            },
            upscale_millis: model_ms,
            bicubic_millis: bicubic_ms,
            ablated_millis: ablated.as_ref().map(|(_, ms)| *ms),
        };
        rows.push(row);
    }

    let aggregate = EvalAggregate {
        psnr_bicubic: mean(rows.iter().map(|r| r.psnr_bicubic)),
        psnr_model: mean(rows.iter().map(|r| r.psnr_model)),
        psnr_ablated: if opts.ablate {
            Some(mean(rows.iter().filter_map(|r| r.psnr_ablated)))
        } else {
            None
        },
        upscale_millis: mean(rows.iter().map(|r| r.upscale_millis)),
        bicubic_millis: mean(rows.iter().map(|r| r.bicubic_millis)),
        ablated_millis: if opts.ablate {
            Some(mean(rows.iter().filter_map(|r| r.ablated_millis)))
        } else {
            None
        },
    };

    Ok(EvalReport {
        config: EvalConfigEcho {
            scale: s,
            patch_size: cfg.patch_size,
            clusters: cfg.clusters,
            seed: cfg.seed,
            phase_stratify: cfg.phase_stratify,
            pst_weight: cfg.feature_weights.pst,
            model_hash: model_fingerprint(model),
            border_crop: s,
            peak: 1.0,
            timing_runs: opts.timing_runs,
            machine: format!("{} {}", std::env::consts::OS, std::env::consts::ARCH),
            threads: rayon::current_num_threads(),
        },
        rows,
        aggregate,
    })
}

fn db_cell(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

/// Fixed-width table for standard output.
pub fn render_table(report: &EvalReport) -> String {
    let has_ablated = report.rows.iter().any(|r| r.psnr_ablated.is_some());
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>12} {:>12} {}{:>12} {:>12}\n",
        "image",
        "bicubic dB",
        "model dB",
        if has_ablated {
            format!("{:>12} ", "ablated dB")
        } else {
            String::new()
        },
        "upscale ms",
        "bicubic ms",
    ));
    let mut line = |name: &str,
                    pb: f64,
                    pm: f64,
                    pa: Option<f64>,
                    um: f64,
                    bm: f64| {
        out.push_str(&format!(
            "{:<28} {:>12} {:>12} {}{:>12.2} {:>12.2}\n",
            name,
            db_cell(pb),
            db_cell(pm),
            match (has_ablated, pa) {
                (true, Some(v)) => format!("{:>12} ", db_cell(v)),
                (true, None) => format!("{:>12} ", "-"),
                (false, _) => String::new(),
            },
            um,
            bm,
        ));
    };
    for r in &report.rows {
        line(
            &r.name,
            r.psnr_bicubic,
            r.psnr_model,
            r.psnr_ablated,
            r.upscale_millis,
            r.bicubic_millis,
        );
    }
    let a = &report.aggregate;
    line(
        "mean",
        a.psnr_bicubic,
        a.psnr_model,
        a.psnr_ablated,
        a.upscale_millis,
        a.bicubic_millis,
    );
    out
}
