use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;
use crate::video::{
    augment, load_label_table, load_raw_video, loop_pad, normalize_pixels, resize_bilinear,
    sample_frames, standardize_fps, LabelTable, SamplingMode, Split, SyntheticSample, VideoClip,
};

/// Name of the label table inside a data directory.
pub const LABELS_FILE: &str = "labels.csv";

/// SplitMix64 finalizer over two words; used to derive per-epoch,
/// per-iteration and per-clip seeds from the run seed.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub name: String,
    pub clip: VideoClip,
    pub ef: Option<f64>,
    pub split: Option<Split>,
}

/// In-memory clip collection with optional labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<ClipRecord>,
}

impl Dataset {
    pub fn from_synthetic(samples: Vec<SyntheticSample>) -> Self {
        Self {
            records: samples
                .into_iter()
                .map(|s| ClipRecord {
                    name: s.name,
                    clip: s.clip,
                    ef: Some(s.ef),
                    split: Some(s.split),
                })
                .collect(),
        }
    }

    /// Loads every `.eaiv` file in `dir` (sorted by name) and, when present,
    /// attaches rows of `labels.csv` by file name.
    ///
    /// With a label table, clips missing from it and rows without a file are
    /// both rejected.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut names: Vec<String> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".eaiv"))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no .eaiv clips in {}",
                dir.display()
            )));
        }
        let labels_path = dir.join(LABELS_FILE);
        let labels = if labels_path.exists() {
            Some(load_label_table(&labels_path)?)
        } else {
            None
        };
        let mut records = Vec::with_capacity(names.len());
        for name in names {
            let clip = load_raw_video(dir.join(&name))?;
            let row = labels.as_ref().and_then(|t| t.get(&name));
            records.push(ClipRecord {
                ef: row.map(|r| r.ef),
                split: row.map(|r| r.split),
                name,
                clip,
            });
        }
        let ds = Self { records };
        if let Some(table) = &labels {
            ds.check_against(table)?;
        }
        Ok(ds)
    }

    fn check_against(&self, table: &LabelTable) -> Result<()> {
        let unlabeled: Vec<&str> = self
            .records
            .iter()
            .filter(|r| r.ef.is_none())
            .map(|r| r.name.as_str())
            .collect();
        if !unlabeled.is_empty() {
            return Err(Error::Validation(format!(
                "clips without labels: {}",
                unlabeled.join(", ")
            )));
        }
        let present: HashSet<&str> = self.records.iter().map(|r| r.name.as_str()).collect();
        let orphans: Vec<&str> = table
            .rows
            .iter()
            .filter(|r| !present.contains(r.file_name.as_str()))
            .map(|r| r.file_name.as_str())
            .collect();
        if !orphans.is_empty() {
            return Err(Error::Validation(format!(
                "labels without clips: {}",
                orphans.join(", ")
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&ClipRecord> {
        self.records
            .iter()
            .filter(|r| r.split == Some(split))
            .collect()
    }
}

/// A clip after frame-rate standardization, resizing and loop padding:
/// ready for per-iteration frame sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedClip {
    pub name: String,
    pub frames: VideoClip,
    pub ef: Option<f64>,
}

/// Frames needed to draw one sample.
fn window_len(cfg: &ModelConfig) -> usize {
    cfg.sampling().window_len().unwrap_or(cfg.num_frames)
}

pub fn prepare_clip(
    name: &str,
    clip: &VideoClip,
    ef: Option<f64>,
    cfg: &ModelConfig,
) -> Result<PreparedClip> {
    let clip = standardize_fps(clip, cfg.target_fps)?;
    let clip = if clip.height() == cfg.image_size && clip.width() == cfg.image_size {
        clip
    } else {
        resize_bilinear(&clip, cfg.image_size, cfg.image_size)?
    };
    Ok(PreparedClip {
        name: name.to_string(),
        frames: loop_pad(&clip, window_len(cfg))?,
        ef,
    })
}

pub fn prepare_records(records: &[&ClipRecord], cfg: &ModelConfig) -> Result<Vec<PreparedClip>> {
    records
        .iter()
        .map(|r| prepare_clip(&r.name, &r.clip, r.ef, cfg))
        .collect()
}

/// Samples `num_frames` frames and returns the normalized `[F×H×W]` video.
///
/// With a seed, the window start is random (fixed-rate sampling) and the
/// clip is augmented at `augment_strength`; without one, sampling starts at
/// frame 0 and no augmentation is applied.
pub fn sample_video(
    clip: &PreparedClip,
    cfg: &ModelConfig,
    seed: Option<u64>,
    augment_strength: f64,
) -> Result<Tensor> {
    let frames = clip.frames.frames();
    let start = match (seed, cfg.sampling_mode) {
        (Some(s), SamplingMode::Rate(_)) => {
            let room = frames - window_len(cfg);
            ChaCha8Rng::seed_from_u64(mix_seed(s, 0x57A7)).random_range(0..=room)
        }
        _ => 0,
    };
    let mut sampled = sample_frames(&clip.frames, &cfg.sampling(), start)?;
    if let Some(s) = seed {
        if augment_strength > 0.0 {
            sampled = augment(&sampled, mix_seed(s, 0xA06), augment_strength)?;
        }
    }
    normalize_pixels(&sampled, cfg.pixel_mean, cfg.pixel_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::{synthetic_corpus, write_label_table, LabelRow};

    #[test]
    fn seeds_mix() {
        assert_ne!(mix_seed(1, 2), mix_seed(2, 1));
        assert_ne!(mix_seed(0, 0), mix_seed(0, 1));
        assert_eq!(mix_seed(7, 9), mix_seed(7, 9));
    }

    #[test]
    fn rate_sampling_uses_random_start_only_when_seeded() {
        let mut cfg = ModelConfig::toy();
        cfg.sampling_mode = SamplingMode::Rate(2);
        let px: Vec<u8> = (0..40).flat_map(|t| vec![t as u8 * 5; 32 * 32]).collect();
        let clip = VideoClip::new(40, 32, 32, 50.0, px).unwrap();
        let prep = prepare_clip("a", &clip, None, &cfg).unwrap();
        let first =
            |t: &Tensor| ((t.data()[0] * cfg.pixel_std + cfg.pixel_mean) * 255.0).round() as u8;
        let eval = sample_video(&prep, &cfg, None, 0.0).unwrap();
        assert_eq!(eval.shape(), &[8, 32, 32]);
        assert_eq!(first(&eval), 0);
        let starts: HashSet<u8> = (0..20)
            .map(|s| first(&sample_video(&prep, &cfg, Some(s), 0.0).unwrap()))
            .collect();
        assert!(starts.len() > 3);
    }

    #[test]
    fn short_clips_are_loop_padded() {
        let mut cfg = ModelConfig::toy();
        cfg.sampling_mode = SamplingMode::Rate(4);
        let clip = VideoClip::new(5, 32, 32, 50.0, vec![9; 5 * 1024]).unwrap();
        let prep = prepare_clip("short", &clip, None, &cfg).unwrap();
        assert_eq!(prep.frames.frames(), 29);
    }

    #[test]
    fn directory_labels_must_match_files() {
        let dir = tempfile::tempdir().unwrap();
        for s in synthetic_corpus(3, 4, 16, 50.0, 1).unwrap() {
            crate::video::save_raw_video(&s.clip, dir.path().join(&s.name)).unwrap();
        }
        assert!(Dataset::load_dir(dir.path())
            .unwrap()
            .records
            .iter()
            .all(|r| r.ef.is_none()));
        let rows = vec![
            LabelRow {
                file_name: "synth_0000.eaiv".into(),
                ef: 50.0,
                split: Split::Train,
            },
            LabelRow {
                file_name: "synth_0001.eaiv".into(),
                ef: 40.0,
                split: Split::Val,
            },
        ];
        write_label_table(
            &LabelTable::new(rows).unwrap(),
            dir.path().join(LABELS_FILE),
        )
        .unwrap();
        let err = Dataset::load_dir(dir.path()).unwrap_err().to_string();
        assert!(err.contains("synth_0002.eaiv"), "{err}");
    }
}
