//! The CLI commands as library functions: synth → train → fit-stats →
//! score → eval → report. Every command reads a [`RunConfig`] and writes
//! into one output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{
    emit_heatmap, generate_synthetic, load_mask, load_mvtec, preprocess, write_score_png16,
    ManifestEntry,
};
use crate::error::{EbmError, Result};
use crate::eval::{
    compare_raw_std, histogram_report, image_level_curves, pixel_labeled_scores, roc_curve,
    CategoryEval, EvalReport, HistogramSummary, Mask,
};
use crate::nn::{checkpoint, ModelParams};
use crate::scoring::{
    fit_pixel_stats_parallel, gradient_map, score_image, ImageScore, PixelStats, ScoreKind,
    ScoreMap,
};
use crate::tensor::Tensor;
use crate::trainer::{fit_observed, TrainRecord};

pub const MODEL_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const STATS_FILE: &str = "stats.bin";
pub const INDEX_FILE: &str = "index.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const EVAL_FILE: &str = "eval.json";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| EbmError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| EbmError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(
        path,
        &serde_json::to_string_pretty(value).expect("serializable"),
    )
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| EbmError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| EbmError::Format {
        what,
        message: format!("{}: {e}", path.display()),
    })
}

/// Decodes and resizes every entry, in parallel, preserving order.
pub fn load_images(entries: &[ManifestEntry], cfg: &RunConfig) -> Result<Vec<Tensor>> {
    entries
        .par_iter()
        .map(|e| preprocess(&e.image, cfg.data.channels, cfg.data.image_size))
        .collect()
}

/// The `(h, w, c)` input a checkpoint reduces to a scalar energy.
pub fn checkpoint_input_shape(params: &ModelParams) -> Result<Vec<usize>> {
    let t = params.topology();
    let size = t.minimal_input_size().ok_or_else(|| {
        EbmError::InvalidConfig("checkpoint topology admits no square input".into())
    })?;
    Ok(vec![size, size, t.input_channels()])
}

/// Checks the configured image shape against the checkpoint.
pub fn check_model_input(params: &ModelParams, cfg: &RunConfig) -> Result<()> {
    let expected = checkpoint_input_shape(params)?;
    let found = cfg.input_shape();
    if expected != found {
        return Err(EbmError::ShapeMismatch {
            context: "configured image shape vs checkpoint input shape".into(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Checks a stats file against the checkpoint it is used with.
pub fn check_stats_shape(params: &ModelParams, stats: &PixelStats) -> Result<()> {
    let expected = checkpoint_input_shape(params)?;
    if stats.shape() != expected.as_slice() {
        return Err(EbmError::ShapeMismatch {
            context: "stats shape vs checkpoint input shape".into(),
            expected,
            found: stats.shape().to_vec(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSummary {
    pub dataset: PathBuf,
    pub train: usize,
    pub test_good: usize,
    pub test_defect: usize,
}

/// Writes the synthetic dataset to `out_dir/<synth.category>`.
pub fn run_synth(cfg: &RunConfig, out_dir: &Path) -> Result<SynthSummary> {
    let dataset = generate_synthetic(&cfg.synth, out_dir)?;
    write_json(&dataset.join("synth.json"), &cfg.synth)?;
    Ok(SynthSummary {
        dataset,
        train: cfg.synth.train_count,
        test_good: cfg.synth.test_good_count,
        test_defect: cfg.synth.test_defect_count,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub history: PathBuf,
    pub iterations: usize,
    pub images: usize,
    pub final_pos_energy: f64,
    pub final_neg_energy: f64,
    pub seconds: f64,
}

/// Trains on the `train/good` split and writes `model.ckpt`, `history.csv`,
/// the resolved `config.toml` and periodic checkpoints.
pub fn run_train(
    cfg: &RunConfig,
    out_dir: &Path,
    observer: &mut dyn FnMut(&TrainRecord),
) -> Result<TrainSummary> {
    let category = load_mvtec(&cfg.data.root, &cfg.data.category, cfg.data.channels)?;
    // Only image tensors reach the trainer; labels and masks stay behind.
    let images = load_images(&category.train.entries, cfg)?;
    let topology = cfg.topology()?;
    let ckpt_dir = out_dir.join("checkpoints");
    let (params, history) = fit_observed(
        &images,
        &topology,
        &cfg.trainer,
        &cfg.sampler,
        Some(&ckpt_dir),
        observer,
    )?;
    let model = out_dir.join(MODEL_FILE);
    let history_path = out_dir.join(HISTORY_FILE);
    checkpoint::save(&params, &model)?;
    history.write_csv(&history_path)?;
    write_text(&out_dir.join("config.toml"), &cfg.to_toml())?;
    let last = history.records.last();
    Ok(TrainSummary {
        model,
        history: history_path,
        iterations: history.records.len(),
        images: images.len(),
        final_pos_energy: last.map_or(f64::NAN, |r| r.pos_energy),
        final_neg_energy: last.map_or(f64::NAN, |r| r.neg_energy),
        seconds: last.map_or(0.0, |r| r.seconds),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsSummary {
    pub stats: PathBuf,
    pub count: u64,
    pub shape: Vec<usize>,
    pub floored: usize,
}

/// Fits per-pixel gradient statistics on the training split.
pub fn run_fit_stats(cfg: &RunConfig, model: &Path, out_dir: &Path) -> Result<StatsSummary> {
    let params = checkpoint::load(model)?;
    check_model_input(&params, cfg)?;
    let category = load_mvtec(&cfg.data.root, &cfg.data.category, cfg.data.channels)?;
    let images = load_images(&category.train.entries, cfg)?;
    let maps = images
        .par_iter()
        .map(|x| gradient_map(&params, x))
        .collect::<Result<Vec<_>>>()?;
    let stats = fit_pixel_stats_parallel(&maps, cfg.scoring.sigma_floor, 16)?;
    let path = out_dir.join(STATS_FILE);
    stats.save(&path)?;
    Ok(StatsSummary {
        stats: path,
        count: stats.count,
        shape: stats.shape().to_vec(),
        floored: stats.floored().iter().filter(|&&f| f).count(),
    })
}

/// Per-image record of a score run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub id: String,
    pub image: PathBuf,
    /// `good` or the defect type.
    pub label: String,
    pub anomalous: bool,
    pub mask: Option<PathBuf>,
    pub energy: f64,
    pub raw: f64,
    pub standardized: f64,
    /// Paths relative to the score directory.
    pub raw_map: PathBuf,
    pub standardized_map: PathBuf,
}

impl ScoredImage {
    pub fn image_scores(&self, r: crate::scoring::NormOrder) -> Vec<ImageScore> {
        vec![
            ImageScore {
                value: self.energy,
                kind: ScoreKind::Energy,
                r: None,
            },
            ImageScore {
                value: self.raw,
                kind: ScoreKind::Raw,
                r: Some(r),
            },
            ImageScore {
                value: self.standardized,
                kind: ScoreKind::Standardized,
                r: Some(r),
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreIndex {
    pub category: String,
    pub image_size: usize,
    pub r: crate::scoring::NormOrder,
    pub images: Vec<ScoredImage>,
}

impl ScoreIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(INDEX_FILE), "score index")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(INDEX_FILE), self)
    }
}

fn file_stem_for(id: &str) -> String {
    id.replace(['/', '\\'], "_")
}

/// Scores every test image: score maps, heatmaps, 16-bit maps with
/// sidecars, `scores.csv` and `index.json`.
pub fn run_score(
    cfg: &RunConfig,
    model: &Path,
    stats: &Path,
    out_dir: &Path,
) -> Result<ScoreIndex> {
    let params = checkpoint::load(model)?;
    let stats = PixelStats::load(stats)?;
    check_stats_shape(&params, &stats)?;
    check_model_input(&params, cfg)?;
    let category = load_mvtec(&cfg.data.root, &cfg.data.category, cfg.data.channels)?;
    let r = cfg.scoring.r;
    let images = category
        .test
        .entries
        .par_iter()
        .map(|entry| -> Result<ScoredImage> {
            let x = preprocess(&entry.image, cfg.data.channels, cfg.data.image_size)?;
            let scores = score_image(&params, Some(&stats), &x, r)?;
            let id = entry.id();
            let stem = file_stem_for(&id);
            let std_map = scores.standardized_map.as_ref().expect("stats given");
            let raw_rel = PathBuf::from("maps").join(format!("{stem}.raw.smap"));
            let std_rel = PathBuf::from("maps").join(format!("{stem}.std.smap"));
            scores.raw_map.save(&out_dir.join(&raw_rel))?;
            std_map.save(&out_dir.join(&std_rel))?;
            emit_heatmap(
                std_map,
                &cfg.render,
                Some(&x),
                &out_dir.join(format!("heatmaps/{stem}.std.png")),
            )?;
            emit_heatmap(
                &scores.raw_map,
                &cfg.render,
                Some(&x),
                &out_dir.join(format!("heatmaps/{stem}.raw.png")),
            )?;
            write_score_png16(std_map, &out_dir.join(format!("png16/{stem}.std.png")))?;
            write_score_png16(
                &scores.raw_map,
                &out_dir.join(format!("png16/{stem}.raw.png")),
            )?;
            Ok(ScoredImage {
                id,
                image: entry.image.clone(),
                label: entry.label.name().to_string(),
                anomalous: entry.label.is_anomalous(),
                mask: entry.mask.clone(),
                energy: scores.energy.value,
                raw: scores.raw.value,
                standardized: scores.standardized.expect("stats given").value,
                raw_map: raw_rel,
                standardized_map: std_rel,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = String::from("id,label,energy,raw,standardized\n");
    for s in &images {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            s.id, s.label, s.energy, s.raw, s.standardized
        );
    }
    write_text(&out_dir.join(SCORES_FILE), &csv)?;
    let index = ScoreIndex {
        category: category.test.category.clone(),
        image_size: cfg.data.image_size,
        r,
        images,
    };
    index.save(out_dir)?;
    Ok(index)
}

fn mask_for(image: &ScoredImage, size: usize) -> Result<Mask> {
    match &image.mask {
        Some(path) => load_mask(path, size),
        None => Ok(Mask::empty(size, size)),
    }
}

fn summarize(
    level: &str,
    kind: ScoreKind,
    good: &[f64],
    defect: &[f64],
    bins: usize,
    dir: &Path,
) -> Result<HistogramSummary> {
    let hist = histogram_report(good, defect, bins)?;
    let stem = format!("hist_{level}_{kind}");
    write_text(&dir.join(format!("{stem}.csv")), &hist.to_csv())?;
    write_text(
        &dir.join(format!("{stem}.svg")),
        &hist.to_svg(&format!("{level} {kind} scores")),
    )?;
    Ok(HistogramSummary {
        level: level.into(),
        kind,
        good_mean: hist.good_mean,
        good_std: hist.good_std,
        threshold: hist.threshold,
        defect_above_threshold: hist.defect_above_threshold,
    })
}

/// Image- and pixel-level AUROC, ROC curves and histograms for one score
/// directory. Fails with `single_class` when the test split lacks good or
/// defective images.
pub fn run_eval(cfg: &RunConfig, scores_dir: &Path, out_dir: &Path) -> Result<CategoryEval> {
    let index = ScoreIndex::load(scores_dir)?;
    let labels: Vec<bool> = index.images.iter().map(|s| s.anomalous).collect();
    let per_image: Vec<Vec<ImageScore>> = index
        .images
        .iter()
        .map(|s| s.image_scores(index.r))
        .collect();
    let curves = image_level_curves(&per_image, &labels)?;

    let masks = index
        .images
        .par_iter()
        .map(|s| mask_for(s, index.image_size))
        .collect::<Result<Vec<_>>>()?;
    let mut result = CategoryEval {
        category: index.category.clone(),
        ..Default::default()
    };
    let mut auroc_csv = String::from("level,kind,auroc\n");
    for (kind, curve) in &curves {
        write_text(
            &out_dir.join(format!("roc_image_{kind}.csv")),
            &curve.to_csv(),
        )?;
        let _ = writeln!(auroc_csv, "image,{kind},{}", curve.auroc);
        result.detection.insert(*kind, curve.auroc);
        let good: Vec<f64> = per_image
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| !l)
            .map(|(s, _)| value_of(s, *kind))
            .collect();
        let bad: Vec<f64> = per_image
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l)
            .map(|(s, _)| value_of(s, *kind))
            .collect();
        result.histograms.push(summarize(
            "image",
            *kind,
            &good,
            &bad,
            cfg.eval.bins,
            out_dir,
        )?);
    }
    for kind in [ScoreKind::Raw, ScoreKind::Standardized] {
        let maps = index
            .images
            .par_iter()
            .map(|s| {
                let rel = if kind == ScoreKind::Raw {
                    &s.raw_map
                } else {
                    &s.standardized_map
                };
                ScoreMap::load(&scores_dir.join(rel))
            })
            .collect::<Result<Vec<_>>>()?;
        let pooled = pixel_labeled_scores(&maps, &masks)?;
        let curve = roc_curve(&pooled)?;
        write_text(
            &out_dir.join(format!("roc_pixel_{kind}.csv")),
            &curve.to_csv(),
        )?;
        let _ = writeln!(auroc_csv, "pixel,{kind},{}", curve.auroc);
        result.localization.insert(kind, curve.auroc);
        let mut good = Vec::new();
        let mut bad = Vec::new();
        for (&v, &l) in pooled.scores().iter().zip(pooled.labels()) {
            if l {
                bad.push(v)
            } else {
                good.push(v)
            }
        }
        result.histograms.push(summarize(
            "pixel",
            kind,
            &good,
            &bad,
            cfg.eval.bins,
            out_dir,
        )?);
    }
    write_text(&out_dir.join("auroc.csv"), &auroc_csv)?;
    write_json(&out_dir.join(EVAL_FILE), &result)?;
    Ok(result)
}

fn value_of(scores: &[ImageScore], kind: ScoreKind) -> f64 {
    scores
        .iter()
        .find(|s| s.kind == kind)
        .map(|s| s.value)
        .expect("every kind scored")
}

/// Raw-vs-standardized tables over one or more `eval.json` files (or
/// directories containing one).
pub fn run_report(evals: &[PathBuf], out_dir: &Path) -> Result<EvalReport> {
    if evals.is_empty() {
        return Err(EbmError::InvalidConfig(
            "report needs at least one eval output".into(),
        ));
    }
    let inputs = evals
        .iter()
        .map(|p| {
            let file = if p.is_dir() {
                p.join(EVAL_FILE)
            } else {
                p.clone()
            };
            read_json::<CategoryEval>(&file, "eval result")
        })
        .collect::<Result<Vec<_>>>()?;
    let report = compare_raw_std(&inputs)?;
    write_text(&out_dir.join("detection.csv"), &report.detection_csv())?;
    write_text(
        &out_dir.join("localization.csv"),
        &report.localization_csv(),
    )?;
    write_text(&out_dir.join("comparison.csv"), &report.long_csv())?;
    write_text(
        &out_dir.join("reference_detection.csv"),
        &EvalReport::reference_detection_csv(),
    )?;
    write_text(
        &out_dir.join("reference_localization.csv"),
        &EvalReport::reference_localization_csv(),
    )?;
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}
