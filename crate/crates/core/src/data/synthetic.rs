//! Seeded synthetic texture dataset written in MVTec layout.
//!
//! All texture and defect arithmetic is on integers so that the generated
//! PNG bytes depend only on the seed.

use std::path::{Path, PathBuf};

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EbmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Stripes,
    Blobs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    Square,
    Scratch,
}

impl DefectKind {
    pub fn name(&self) -> &'static str {
        match self {
            DefectKind::Square => "square",
            DefectKind::Scratch => "scratch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub category: String,
    pub seed: u64,
    pub image_size: usize,
    pub train_count: usize,
    pub test_good_count: usize,
    pub test_defect_count: usize,
    pub texture: TextureKind,
    pub defect: DefectKind,
    /// Inclusive range of the defect side (square) or length (scratch).
    pub defect_size_min: usize,
    pub defect_size_max: usize,
    /// Minimum absolute intensity change inside the defect, in 8-bit levels.
    pub defect_delta: u8,
    /// Per-pixel uniform noise amplitude, in 8-bit levels.
    pub noise: u8,
    pub stripe_period: usize,
    /// Per-image random shift of the texture, in pixels.
    pub phase_jitter: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            category: "synthetic".into(),
            seed: 0,
            image_size: 32,
            train_count: 200,
            test_good_count: 50,
            test_defect_count: 50,
            texture: TextureKind::Stripes,
            defect: DefectKind::Square,
            defect_size_min: 5,
            defect_size_max: 10,
            defect_delta: 80,
            noise: 8,
            stripe_period: 8,
            phase_jitter: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EbmError::InvalidConfig(format!("synth: {m}")));
        if self.image_size < 4 {
            return bad(format!("image_size {} too small", self.image_size));
        }
        if self.defect_size_min == 0 || self.defect_size_min > self.defect_size_max {
            return bad("defect size range must satisfy 1 ≤ min ≤ max".into());
        }
        if self.defect_size_max >= self.image_size {
            return bad(format!(
                "defect size {} must be below image size {}",
                self.defect_size_max, self.image_size
            ));
        }
        if self.train_count == 0 || self.test_good_count == 0 || self.test_defect_count == 0 {
            return bad("every split needs at least one image".into());
        }
        if self.defect_delta == 0 || self.defect_delta > 127 {
            return bad("defect_delta must lie in 1..=127".into());
        }
        if self.stripe_period < 2 {
            return bad("stripe_period must be at least 2".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSet {
    Train,
    TestGood,
    TestDefect,
}

impl SampleSet {
    fn stream(&self, index: usize) -> u64 {
        let code: u64 = match self {
            SampleSet::Train => 1,
            SampleSet::TestGood => 2,
            SampleSet::TestDefect => 3,
        };
        (code << 40) | index as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub size: usize,
    /// Row-major 8-bit intensities.
    pub pixels: Vec<u8>,
    /// The same image before the defect was inserted.
    pub clean: Vec<u8>,
    pub mask: Option<Vec<bool>>,
}

struct Blob {
    cy: i64,
    cx: i64,
    r2: i64,
}

fn blobs(spec: &SyntheticSpec) -> Vec<Blob> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    let s = spec.image_size as i64;
    let r_lo = (s / 8).max(2);
    let r_hi = (s / 4).max(r_lo + 1);
    (0..6)
        .map(|_| {
            let r = rng.random_range(r_lo..=r_hi);
            Blob {
                cy: rng.random_range(0..s),
                cx: rng.random_range(0..s),
                r2: r * r,
            }
        })
        .collect()
}

fn texture_value(spec: &SyntheticSpec, blobs: &[Blob], y: i64, x: i64, shift: i64) -> i64 {
    match spec.texture {
        TextureKind::Stripes => {
            let p = spec.stripe_period as i64;
            let t = (x + y + shift).rem_euclid(p);
            let tri = t.min(p - t);
            60 + 120 * tri / (p / 2).max(1)
        }
        TextureKind::Blobs => {
            let mut v = 70;
            for b in blobs {
                let dy = y - b.cy;
                let dx = x - (b.cx + shift);
                let d2 = dy * dy + dx * dx;
                if d2 < b.r2 {
                    v += 100 * (b.r2 - d2) / b.r2;
                }
            }
            v.min(255)
        }
    }
}

/// Pixels of a scratch: a 1-pixel line of `length` steps via integer DDA.
fn scratch_pixels(size: usize, length: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let s = size as i64;
    let len = length as i64;
    loop {
        let y0 = rng.random_range(0..s);
        let x0 = rng.random_range(0..s);
        // Endpoint offset on the square ring of radius `len`.
        let (dy, dx) = match rng.random_range(0..4) {
            0 => (len, rng.random_range(-len..=len)),
            1 => (-len, rng.random_range(-len..=len)),
            2 => (rng.random_range(-len..=len), len),
            _ => (rng.random_range(-len..=len), -len),
        };
        let (y1, x1) = (y0 + dy, x0 + dx);
        if !(0..s).contains(&y1) || !(0..s).contains(&x1) {
            continue;
        }
        let steps = dy.abs().max(dx.abs());
        let mut out: Vec<(usize, usize)> = (0..=steps)
            .map(|i| {
                // Round-half-away division keeps the line symmetric.
                let div = |num: i64| (2 * num + steps * num.signum()) / (2 * steps);
                ((y0 + div(dy * i)) as usize, (x0 + div(dx * i)) as usize)
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        return out;
    }
}

/// Renders sample `index` of `set`; deterministic in `(spec, set, index)`.
pub fn synthesize(spec: &SyntheticSpec, set: SampleSet, index: usize) -> SyntheticSample {
    let size = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(set.stream(index));
    let blob_list = if spec.texture == TextureKind::Blobs {
        blobs(spec)
    } else {
        Vec::new()
    };
    let shift = if spec.phase_jitter > 0 {
        rng.random_range(0..=spec.phase_jitter as i64)
    } else {
        0
    };
    let noise = spec.noise as i64;
    let mut clean = Vec::with_capacity(size * size);
    for y in 0..size as i64 {
        for x in 0..size as i64 {
            let mut v = texture_value(spec, &blob_list, y, x, shift);
            if noise > 0 {
                v += rng.random_range(-noise..=noise);
            }
            clean.push(v.clamp(0, 255) as u8);
        }
    }
    if set != SampleSet::TestDefect {
        return SyntheticSample {
            size,
            pixels: clean.clone(),
            clean,
            mask: None,
        };
    }

    let extent = rng.random_range(spec.defect_size_min..=spec.defect_size_max);
    let region: Vec<(usize, usize)> = match spec.defect {
        DefectKind::Square => {
            let y0 = rng.random_range(0..=size - extent);
            let x0 = rng.random_range(0..=size - extent);
            (y0..y0 + extent)
                .flat_map(|y| (x0..x0 + extent).map(move |x| (y, x)))
                .collect()
        }
        DefectKind::Scratch => scratch_pixels(size, extent, &mut rng),
    };
    let delta = spec.defect_delta;
    let mut pixels = clean.clone();
    let mut mask = vec![false; size * size];
    for (y, x) in region {
        let i = y * size + x;
        let v = clean[i];
        pixels[i] = if v <= 127 { v + delta } else { v - delta };
        mask[i] = true;
    }
    SyntheticSample {
        size,
        pixels,
        clean,
        mask: Some(mask),
    }
}

fn save_gray(path: &Path, size: usize, pixels: Vec<u8>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| EbmError::io(parent, e))?;
    }
    let img = GrayImage::from_raw(size as u32, size as u32, pixels).expect("buffer matches size");
    img.save(path).map_err(|e| EbmError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes the dataset under `root/<category>/` and returns that directory.
pub fn generate_synthetic(spec: &SyntheticSpec, root: &Path) -> Result<PathBuf> {
    spec.validate()?;
    let base = root.join(&spec.category);
    let size = spec.image_size;
    for i in 0..spec.train_count {
        let s = synthesize(spec, SampleSet::Train, i);
        save_gray(&base.join(format!("train/good/{i:03}.png")), size, s.pixels)?;
    }
    for i in 0..spec.test_good_count {
        let s = synthesize(spec, SampleSet::TestGood, i);
        save_gray(&base.join(format!("test/good/{i:03}.png")), size, s.pixels)?;
    }
    let kind = spec.defect.name();
    for i in 0..spec.test_defect_count {
        let s = synthesize(spec, SampleSet::TestDefect, i);
        let mask: Vec<u8> = s
            .mask
            .unwrap()
            .iter()
            .map(|&m| if m { 255 } else { 0 })
            .collect();
        save_gray(
            &base.join(format!("test/{kind}/{i:03}.png")),
            size,
            s.pixels,
        )?;
        save_gray(
            &base.join(format!("ground_truth/{kind}/{i:03}_mask.png")),
            size,
            mask,
        )?;
    }
    Ok(base)
}
