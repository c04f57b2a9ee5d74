//! Dataset ingestion, preprocessing, synthetic generation and heatmaps.

pub mod heatmap;
pub mod mvtec;
pub mod preprocess;
pub mod synthetic;

pub use heatmap::{
    emit_heatmap, sidecar_path, write_score_png16, Colormap, HeatmapRender, Normalization,
    ScaleSidecar,
};
pub use mvtec::{load_mvtec, DatasetManifest, Label, ManifestEntry, MvtecCategory, Split};
pub use preprocess::{
    decode_image, load_mask, preprocess, resize_bilinear, resize_nearest, ChannelMode,
};
pub use synthetic::{
    generate_synthetic, synthesize, DefectKind, SampleSet, SyntheticSample, SyntheticSpec,
    TextureKind,
};
