//! Synthetic pulsating-ventricle clips with an analytic ejection fraction.
//!
//! A bright ellipse sits on a speckled background. Both semi-axes scale by
//! `s(τ) ∈ [c, 1]` following a raised cosine, so the enclosed area ranges
//! between `A_max` and `c²·A_max` and the ejection fraction is exactly
//! `100·(1 − c²)` regardless of resolution, frame rate or noise.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::clip::save_raw_video;
use super::labels::{write_label_table, LabelRow, LabelTable, Split};
use super::VideoClip;

pub const BACKGROUND_LEVEL: f64 = 40.0;
pub const CAVITY_LEVEL: f64 = 200.0;

// decorrelates the split shuffle from the parameter stream
const SPLIT_STREAM: u64 = 0x5EED_0000_0000_0017;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticHeartParams {
    /// Horizontal semi-axis at full dilation, as a fraction of frame width.
    pub rx: f64,
    /// Vertical semi-axis at full dilation, as a fraction of frame height.
    pub ry: f64,
    /// Axis scale at peak contraction.
    pub contraction: f64,
    pub beats: f64,
    /// Phase offset of the cardiac cycle in radians; 0 starts at full dilation.
    pub phase: f64,
    /// Half-width of the uniform speckle noise, in gray levels.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticHeartParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rx > 0.0 && self.rx <= 0.5) || !(self.ry > 0.0 && self.ry <= 0.5) {
            return Err(Error::param(
                "radius",
                format!(
                    "ellipse ({}, {}) does not fit inside the frame",
                    self.rx, self.ry
                ),
            ));
        }
        if !(self.contraction > 0.0 && self.contraction <= 1.0) {
            return Err(Error::param(
                "contraction",
                format!("must lie in (0, 1], got {}", self.contraction),
            ));
        }
        if !(self.beats > 0.0 && self.beats.is_finite()) {
            return Err(Error::param("beats", "must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param("noise", "must be non-negative"));
        }
        Ok(())
    }

    pub fn ejection_fraction(&self) -> f64 {
        100.0 * (1.0 - self.contraction * self.contraction)
    }

    /// Axis scale factor at frame `t` of `frames`.
    pub fn scale_at(&self, t: usize, frames: usize) -> f64 {
        let c = self.contraction;
        let angle = TAU * self.beats * t as f64 / frames as f64 + self.phase;
        c + (1.0 - c) * 0.5 * (1.0 + angle.cos())
    }

    /// Draws parameters from the ranges used for generated corpora.
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            rx: rng.random_range(0.25..0.4),
            ry: rng.random_range(0.25..0.4),
            contraction: rng.random_range(0.55..0.95),
            beats: 1.0,
            phase: rng.random_range(0.0..TAU),
            noise: rng.random_range(5.0..20.0),
            seed: rng.random(),
        }
    }
}

/// Whether pixel `(y, x)` lies inside the ellipse at axis scale `s`.
pub fn inside_ellipse(
    p: &SyntheticHeartParams,
    s: f64,
    y: usize,
    x: usize,
    h: usize,
    w: usize,
) -> bool {
    let a = p.rx * w as f64 * s;
    let b = p.ry * h as f64 * s;
    let dx = (x as f64 + 0.5 - w as f64 / 2.0) / a;
    let dy = (y as f64 + 0.5 - h as f64 / 2.0) / b;
    dx * dx + dy * dy <= 1.0
}

pub fn generate_synthetic_clip(
    params: &SyntheticHeartParams,
    frames: usize,
    height: usize,
    width: usize,
    fps: f64,
) -> Result<(VideoClip, f64)> {
    params.validate()?;
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::param(
            "size",
            "frames, height and width must be at least 1",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut pixels = Vec::with_capacity(frames * height * width);
    for t in 0..frames {
        let s = params.scale_at(t, frames);
        for y in 0..height {
            for x in 0..width {
                let base = if inside_ellipse(params, s, y, x, height, width) {
                    CAVITY_LEVEL
                } else {
                    BACKGROUND_LEVEL
                };
                let noise = if params.noise > 0.0 {
                    rng.random_range(-params.noise..=params.noise)
                } else {
                    0.0
                };
                pixels.push((base + noise).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let clip = VideoClip::new(frames, height, width, fps, pixels)?;
    Ok((clip, params.ejection_fraction()))
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub name: String,
    pub params: SyntheticHeartParams,
    pub clip: VideoClip,
    pub ef: f64,
    pub split: Split,
}

impl SyntheticSample {
    pub fn label(&self) -> LabelRow {
        LabelRow {
            file_name: self.name.clone(),
            ef: self.ef,
            split: self.split,
        }
    }
}

/// Seeded 70/15/15 TRAIN/VAL/TEST assignment over `count` items.
pub fn assign_splits(count: usize, seed: u64) -> Vec<Split> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM));
    let n_train = (count as f64 * 0.7).round() as usize;
    let n_val = (count as f64 * 0.15).round() as usize;
    let mut splits = vec![Split::Test; count];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// `count` clips with randomized parameters, named `synth_0000.eaiv`, ….
pub fn synthetic_corpus(
    count: usize,
    frames: usize,
    size: usize,
    fps: f64,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    if count == 0 {
        return Err(Error::param("count", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splits = assign_splits(count, seed);
    (0..count)
        .map(|i| {
            let params = SyntheticHeartParams::random(&mut rng);
            let (clip, ef) = generate_synthetic_clip(&params, frames, size, size, fps)?;
            Ok(SyntheticSample {
                name: format!("synth_{i:04}.eaiv"),
                params,
                clip,
                ef,
                split: splits[i],
            })
        })
        .collect()
}

/// Writes each sample as `dir/<name>` plus a `labels.csv` with every row.
pub fn write_synthetic_corpus(samples: &[SyntheticSample], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in samples {
        save_raw_video(&s.clip, dir.join(&s.name))?;
    }
    let table = LabelTable::new(samples.iter().map(SyntheticSample::label).collect())?;
    write_label_table(&table, dir.join("labels.csv"))
}
