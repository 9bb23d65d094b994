//! Video ingestion, preprocessing, label tables and the synthetic corpus.

mod augment;
mod clip;
mod labels;
mod preprocess;
mod synth;

pub use augment::{augment, draw_augmentations, translate_horizontal, Augmentation};
pub use clip::{
    decode_eaiv, encode_eaiv, load_raw_video, save_raw_video, VideoClip, EAIV_MAGIC, EAIV_VERSION,
};
pub use labels::{load_label_table, write_label_table, LabelRow, LabelTable, Split, LABEL_HEADER};
pub use preprocess::{
    denormalize_pixel, equally_spaced, fps_indices, loop_pad, normalize_pixels, resize_bilinear,
    sample_frames, sample_indices, standardize_fps, SamplingMode, SamplingSpec,
};
pub use synth::{
    assign_splits, generate_synthetic_clip, inside_ellipse, synthetic_corpus,
    write_synthetic_corpus, SyntheticHeartParams, SyntheticSample, BACKGROUND_LEVEL, CAVITY_LEVEL,
};
