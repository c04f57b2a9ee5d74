//! MVTec AD directory layout:
//!
//! ```text
//! <root>/<category>/train/good/*.png
//! <root>/<category>/test/<type>/*.png          (type "good" = normal)
//! <root>/<category>/ground_truth/<type>/<stem>_mask.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::preprocess::ChannelMode;
use crate::error::{EbmError, Result};

pub const GOOD: &str = "good";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Good,
    Defect(String),
}

impl Label {
    pub fn is_anomalous(&self) -> bool {
        matches!(self, Label::Defect(_))
    }

    pub fn name(&self) -> &str {
        match self {
            Label::Good => GOOD,
            Label::Defect(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub label: Label,
    /// Present for every defective entry; good entries are all-zero.
    pub mask: Option<PathBuf>,
}

impl ManifestEntry {
    /// `<type>/<stem>`, unique within a split.
    pub fn id(&self) -> String {
        let stem = self
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        format!("{}/{}", self.label.name(), stem)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub category: String,
    pub split: Split,
    pub channels: ChannelMode,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Image paths only, the sole view the trainer gets of a train split.
    pub fn image_paths(&self) -> Vec<&Path> {
        self.entries.iter().map(|e| e.image.as_path()).collect()
    }

    pub fn defect_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.label.is_anomalous())
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvtecCategory {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
}

fn pngs_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| EbmError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| EbmError::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<String>> {
    let rd = fs::read_dir(dir).map_err(|e| EbmError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| EbmError::io(dir, e))?;
        if entry.path().is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(EbmError::Dataset(format!(
            "missing directory {}",
            path.display()
        )))
    }
}

pub fn load_mvtec(root: &Path, category: &str, channels: ChannelMode) -> Result<MvtecCategory> {
    let base = root.join(category);
    require_dir(&base)?;
    let train_dir = base.join("train").join(GOOD);
    require_dir(&train_dir)?;
    let test_dir = base.join("test");
    require_dir(&test_dir)?;

    let train_entries: Vec<ManifestEntry> = pngs_in(&train_dir)?
        .into_iter()
        .map(|image| ManifestEntry {
            image,
            label: Label::Good,
            mask: None,
        })
        .collect();

    let mut test_entries = Vec::new();
    for kind in subdirs(&test_dir)? {
        let images = pngs_in(&test_dir.join(&kind))?;
        if kind == GOOD {
            test_entries.extend(images.into_iter().map(|image| ManifestEntry {
                image,
                label: Label::Good,
                mask: None,
            }));
            continue;
        }
        for image in images {
            let stem = image.file_stem().unwrap().to_string_lossy().into_owned();
            let mask = base
                .join("ground_truth")
                .join(&kind)
                .join(format!("{stem}_mask.png"));
            if !mask.is_file() {
                return Err(EbmError::Dataset(format!(
                    "defective image {} has no mask at {}",
                    image.display(),
                    mask.display()
                )));
            }
            test_entries.push(ManifestEntry {
                image,
                label: Label::Defect(kind.clone()),
                mask: Some(mask),
            });
        }
    }

    Ok(MvtecCategory {
        train: DatasetManifest {
            category: category.to_string(),
            split: Split::Train,
            channels,
            entries: train_entries,
        },
        test: DatasetManifest {
            category: category.to_string(),
            split: Split::Test,
            channels,
            entries: test_entries,
        },
    })
}
