//! Clip-consistent photometric and geometric augmentation.
//!
//! Two distinct transforms are drawn per call from a five-op pool and applied
//! with identical parameters to every frame, so motion is never distorted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::VideoClip;

const MAX_BRIGHTNESS: f64 = 40.0;
const MAX_CONTRAST: f64 = 0.5;
const MAX_LOG2_GAMMA: f64 = 0.6;
const MAX_SHIFT_FRAC: f64 = 0.1;
const MAX_ROTATION_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    /// Additive intensity offset in gray levels.
    Brightness(f64),
    /// Scale about the clip mean.
    Contrast(f64),
    Gamma(f64),
    /// Horizontal shift in pixels; vacated columns are zero.
    TranslateX(i64),
    /// Rotation about the frame center in degrees; uncovered pixels are zero.
    Rotate(f64),
}

impl Augmentation {
    /// Draws the transform of kind `kind` (0..5) at signed unit magnitude
    /// `u ∈ [-1, 1]` scaled by `strength`.
    fn from_kind(kind: usize, u: f64, strength: f64, width: usize) -> Self {
        let m = u * strength;
        match kind {
            0 => Augmentation::Brightness(MAX_BRIGHTNESS * m),
            1 => Augmentation::Contrast(1.0 + MAX_CONTRAST * m),
            2 => Augmentation::Gamma((MAX_LOG2_GAMMA * m).exp2()),
            3 => Augmentation::TranslateX((MAX_SHIFT_FRAC * width as f64 * m).round() as i64),
            _ => Augmentation::Rotate(MAX_ROTATION_DEG * m),
        }
    }

    pub fn apply(&self, clip: &VideoClip) -> VideoClip {
        let lut = |f: &dyn Fn(f64) -> f64| -> [u8; 256] {
            std::array::from_fn(|v| f(v as f64).round().clamp(0.0, 255.0) as u8)
        };
        match *self {
            Augmentation::Brightness(delta) => {
                let table = lut(&|v| v + delta);
                clip.map_frames(|f| f.iter().map(|&p| table[p as usize]).collect())
            }
            Augmentation::Contrast(factor) => {
                let mean = clip.pixels().iter().map(|&p| p as f64).sum::<f64>()
                    / clip.pixels().len() as f64;
                let table = lut(&|v| (v - mean) * factor + mean);
                clip.map_frames(|f| f.iter().map(|&p| table[p as usize]).collect())
            }
            Augmentation::Gamma(gamma) => {
                let table = lut(&|v| 255.0 * (v / 255.0).powf(gamma));
                clip.map_frames(|f| f.iter().map(|&p| table[p as usize]).collect())
            }
            Augmentation::TranslateX(dx) => translate_horizontal(clip, dx),
            Augmentation::Rotate(deg) => rotate(clip, deg),
        }
    }
}

/// The two transforms [`augment`] would apply for this seed and strength.
pub fn draw_augmentations(seed: u64, strength: f64, width: usize) -> [Augmentation; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..5);
    let mut second = rng.random_range(0..4);
    if second >= first {
        second += 1;
    }
    let u1 = rng.random_range(-1.0..=1.0);
    let u2 = rng.random_range(-1.0..=1.0);
    [
        Augmentation::from_kind(first, u1, strength, width),
        Augmentation::from_kind(second, u2, strength, width),
    ]
}

pub fn augment(clip: &VideoClip, seed: u64, strength: f64) -> Result<VideoClip> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::param(
            "augment_strength",
            format!("must lie in [0, 1], got {strength}"),
        ));
    }
    if strength == 0.0 {
        return Ok(clip.clone());
    }
    let ops = draw_augmentations(seed, strength, clip.width());
    Ok(ops.iter().fold(clip.clone(), |c, op| op.apply(&c)))
}

pub fn translate_horizontal(clip: &VideoClip, dx: i64) -> VideoClip {
    let (h, w) = (clip.height(), clip.width());
    clip.map_frames(|f| {
        let mut out = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let src = x as i64 - dx;
                if (0..w as i64).contains(&src) {
                    out[y * w + x] = f[y * w + src as usize];
                }
            }
        }
        out
    })
}

fn rotate(clip: &VideoClip, degrees: f64) -> VideoClip {
    let (h, w) = (clip.height(), clip.width());
    let (s, c) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    clip.map_frames(|f| {
        let mut out = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                // inverse rotation maps each output pixel to its source
                let sx = (c * dx + s * dy + cx).round();
                let sy = (-s * dx + c * dy + cy).round();
                if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                    out[y * w + x] = f[sy as usize * w + sx as usize];
                }
            }
        }
        out
    })
}
