//! Score-map rendering: colour heatmaps and 16-bit grayscale exports, each
//! with a JSON sidecar recording the numeric scale.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{EbmError, Result};
use crate::scoring::ScoreMap;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    MinMax,
    Fixed { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    Jet,
    Hot,
    Gray,
}

impl Colormap {
    /// RGB for `t ∈ [0, 1]`.
    pub fn color(&self, t: f64) -> [u8; 3] {
        let t = t.clamp(0.0, 1.0);
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self {
            Colormap::Jet => [
                q(1.5 - (4.0 * t - 3.0).abs()),
                q(1.5 - (4.0 * t - 2.0).abs()),
                q(1.5 - (4.0 * t - 1.0).abs()),
            ],
            Colormap::Hot => [q(3.0 * t), q(3.0 * t - 1.0), q(3.0 * t - 2.0)],
            Colormap::Gray => [q(t); 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapRender {
    pub normalization: Normalization,
    pub colormap: Colormap,
    /// Heatmap opacity over the base image, in `[0, 1]`.
    pub alpha: f64,
}

impl Default for HeatmapRender {
    fn default() -> Self {
        Self {
            normalization: Normalization::MinMax,
            colormap: Colormap::Jet,
            alpha: 1.0,
        }
    }
}

/// Numeric scale of a rendered map: pixel level `0` is `min`, full scale is `max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSidecar {
    pub min: f64,
    pub max: f64,
    pub width: usize,
    pub height: usize,
    pub kind: String,
    pub r: u32,
    pub normalization: Normalization,
    pub colormap: Option<Colormap>,
    pub alpha: Option<f64>,
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

fn extrema(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn scale(norm: Normalization, values: &[f64]) -> (f64, f64) {
    match norm {
        Normalization::MinMax => extrema(values),
        Normalization::Fixed { low, high } => (low, high),
    }
}

fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| EbmError::io(parent, e))?;
        }
    }
    Ok(())
}

fn write_sidecar(png: &Path, sidecar: &ScaleSidecar) -> Result<()> {
    let path = sidecar_path(png);
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    std::fs::write(&path, json).map_err(|e| EbmError::io(&path, e))
}

fn image_error(path: &Path, e: image::ImageError) -> EbmError {
    EbmError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Colour-mapped PNG, alpha-blended over `base` (an `(h, w, c)` image in
/// `[0, 1]`) when given.
pub fn emit_heatmap(
    map: &ScoreMap,
    render: &HeatmapRender,
    base: Option<&Tensor>,
    path: &Path,
) -> Result<ScaleSidecar> {
    map.values.ensure_finite("heatmap score map")?;
    if !(0.0..=1.0).contains(&render.alpha) {
        return Err(EbmError::InvalidConfig(format!(
            "heatmap alpha {} outside [0, 1]",
            render.alpha
        )));
    }
    let (h, w) = map.dims();
    if let Some(b) = base {
        let (bh, bw, _) = b.image_dims()?;
        if (bh, bw) != (h, w) {
            return Err(EbmError::ShapeMismatch {
                context: "heatmap base image".into(),
                expected: vec![h, w],
                found: vec![bh, bw],
            });
        }
    }
    let (lo, hi) = scale(render.normalization, map.values.data());
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let heat = render
                .colormap
                .color(unit(map.values.data()[y * w + x], lo, hi));
            let px = match base {
                Some(b) => {
                    let c = b.shape()[2];
                    let at = |k: usize| b.data()[(y * w + x) * c + k.min(c - 1)];
                    let mut out = [0u8; 3];
                    for k in 0..3 {
                        let under = at(k).clamp(0.0, 1.0) * 255.0;
                        out[k] = (render.alpha * heat[k] as f64 + (1.0 - render.alpha) * under)
                            .round() as u8;
                    }
                    out
                }
                None => heat,
            };
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    ensure_parent(path)?;
    img.save(path).map_err(|e| image_error(path, e))?;
    let sidecar = ScaleSidecar {
        min: lo,
        max: hi,
        width: w,
        height: h,
        kind: map.kind.as_str().into(),
        r: map.r.into(),
        normalization: render.normalization,
        colormap: Some(render.colormap),
        alpha: Some(render.alpha),
    };
    write_sidecar(path, &sidecar)?;
    Ok(sidecar)
}

/// Min–max normalized 16-bit grayscale PNG. Level `v` maps back to
/// `min + v / 65535 · (max − min)`.
pub fn write_score_png16(map: &ScoreMap, path: &Path) -> Result<ScaleSidecar> {
    map.values.ensure_finite("score map")?;
    let (h, w) = map.dims();
    let (lo, hi) = extrema(map.values.data());
    let levels: Vec<u16> = map
        .values
        .data()
        .iter()
        .map(|&v| (unit(v, lo, hi) * 65535.0).round() as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, levels).expect("buffer matches size");
    ensure_parent(path)?;
    img.save(path).map_err(|e| image_error(path, e))?;
    let sidecar = ScaleSidecar {
        min: lo,
        max: hi,
        width: w,
        height: h,
        kind: map.kind.as_str().into(),
        r: map.r.into(),
        normalization: Normalization::MinMax,
        colormap: None,
        alpha: None,
    };
    write_sidecar(path, &sidecar)?;
    Ok(sidecar)
}
