//! PNG decoding, channel conversion and bilinear resizing to network input.

use std::path::Path;

use image::{ColorType, DynamicImage};
use serde::{Deserialize, Serialize};

use crate::error::{EbmError, Result};
use crate::eval::Mask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
#[derive(Default)]
pub enum ChannelMode {
    Gray,
    #[default]
    Rgb,
}

impl ChannelMode {
    pub fn channels(&self) -> usize {
        match self {
            ChannelMode::Gray => 1,
            ChannelMode::Rgb => 3,
        }
    }
}

impl TryFrom<u32> for ChannelMode {
    type Error = EbmError;

    fn try_from(c: u32) -> Result<Self> {
        match c {
            1 => Ok(ChannelMode::Gray),
            3 => Ok(ChannelMode::Rgb),
            other => Err(EbmError::InvalidConfig(format!(
                "channel mode must be 1 or 3, got {other}"
            ))),
        }
    }
}

impl From<ChannelMode> for u32 {
    fn from(c: ChannelMode) -> u32 {
        c.channels() as u32
    }
}

fn decode_8bit(path: &Path) -> Result<DynamicImage> {
    let img_err = |message: String| EbmError::Image {
        path: path.to_path_buf(),
        message,
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| EbmError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| EbmError::io(path, e))?
        .decode()
        .map_err(|e| img_err(format!("decode failed: {e}")))?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => Ok(img),
        other => Err(img_err(format!(
            "unsupported bit depth / color type {other:?}; 8-bit PNG required"
        ))),
    }
}

/// Decodes an 8-bit image into an `(h, w, c)` tensor scaled to `[0, 1]`.
pub fn decode_image(path: &Path, mode: ChannelMode) -> Result<Tensor> {
    let img = decode_8bit(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u8> = match mode {
        ChannelMode::Gray => img.to_luma8().into_raw(),
        ChannelMode::Rgb => img.to_rgb8().into_raw(),
    };
    Tensor::new(
        vec![h, w, mode.channels()],
        raw.into_iter().map(|v| v as f64 / 255.0).collect(),
    )
}

/// Decode, convert channels, resize to `size × size` (bilinear) and scale to `[0, 1]`.
pub fn preprocess(path: &Path, mode: ChannelMode, size: usize) -> Result<Tensor> {
    let t = decode_image(path, mode)?;
    Ok(resize_bilinear(&t, size, size))
}

/// Bilinear resampling of an `(h, w, c)` tensor with half-pixel centres and
/// edge clamping, no antialiasing filter. Same-size input is returned as is.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (h, w, c) = t.image_dims().expect("resize needs an (h, w, c) tensor");
    if (h, w) == (out_h, out_w) {
        return t.clone();
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let src = t.data();
    let mut out = vec![0.0; out_h * out_w * c];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for k in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + k];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(oy * out_w + ox) * c + k] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out).unwrap()
}

/// Nearest-neighbour resampling (used for masks).
pub fn resize_nearest(t: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (h, w, c) = t.image_dims().expect("resize needs an (h, w, c) tensor");
    let pick = |d: usize, out: usize, inp: usize| {
        (((d as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1)
    };
    let src = t.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for oy in 0..out_h {
        let y = pick(oy, out_h, h);
        for ox in 0..out_w {
            let x = pick(ox, out_w, w);
            out.extend_from_slice(&src[(y * w + x) * c..(y * w + x + 1) * c]);
        }
    }
    Tensor::new(vec![out_h, out_w, c], out).unwrap()
}

/// Loads a ground-truth mask, resizes it with nearest-neighbour sampling and
/// binarizes at 0.5.
pub fn load_mask(path: &Path, size: usize) -> Result<Mask> {
    let t = decode_image(path, ChannelMode::Gray)?;
    let r = resize_nearest(&t, size, size);
    Ok(Mask::new(
        size,
        size,
        r.data().iter().map(|&v| v >= 0.5).collect(),
    ))
}
