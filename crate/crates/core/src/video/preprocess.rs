//! Resize, frame-rate standardization, frame sampling and normalization.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::VideoClip;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Every `stride`-th frame from a start index.
    Rate(usize),
    /// Indices spread evenly over the whole clip.
    EquallySpaced,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingSpec {
    pub num_frames: usize,
    pub mode: SamplingMode,
    pub target_fps: f64,
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames == 0 {
            return Err(Error::param("num_frames", "must be at least 1"));
        }
        if let SamplingMode::Rate(0) = self.mode {
            return Err(Error::param("sampling_rate", "must be at least 1"));
        }
        if !(self.target_fps.is_finite() && self.target_fps > 0.0) {
            return Err(Error::param("target_fps", "must be positive"));
        }
        Ok(())
    }

    /// Frames spanned by one rate-based window; the whole clip otherwise.
    pub fn window_len(&self) -> Option<usize> {
        match self.mode {
            SamplingMode::Rate(r) => Some((self.num_frames - 1) * r + 1),
            SamplingMode::EquallySpaced => None,
        }
    }
}

/// Bilinear resize with half-pixel centers, applied per frame.
pub fn resize_bilinear(clip: &VideoClip, out_h: usize, out_w: usize) -> Result<VideoClip> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::param("size", "output extents must be at least 1"));
    }
    let (in_h, in_w) = (clip.height(), clip.width());
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(clip.clone());
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = axis(in_h, out_h);
    let xs = axis(in_w, out_w);
    let pixels: Vec<u8> = (0..clip.frames())
        .flat_map(|t| {
            let f = clip.frame(t);
            let mut out = Vec::with_capacity(out_h * out_w);
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let p = |y: usize, x: usize| f[y * in_w + x] as f64;
                    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                    let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                    let v = top * (1.0 - fy) + bot * fy;
                    out.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
            out
        })
        .collect();
    VideoClip::with_fps_millis(clip.frames(), out_h, out_w, clip.fps_millis(), pixels)
}

/// Source frame index for each output frame when resampling to `target_fps`.
///
/// Output frame `t` shows the input frame on screen at time `t / target_fps`
/// (sample and hold), so halving the rate keeps every other frame and
/// doubling it repeats each frame.
pub fn fps_indices(frames: usize, fps: f64, target_fps: f64) -> Vec<usize> {
    let out_len = ((frames as f64 * target_fps / fps).round() as usize).max(1);
    (0..out_len)
        .map(|t| {
            let src = t as f64 * fps / target_fps;
            ((src + 1e-9).floor() as usize).min(frames - 1)
        })
        .collect()
}

pub fn standardize_fps(clip: &VideoClip, target_fps: f64) -> Result<VideoClip> {
    if !(target_fps.is_finite() && target_fps > 0.0) {
        return Err(Error::param("target_fps", "must be positive"));
    }
    let target_millis = (target_fps * 1000.0).round() as u32;
    if target_millis == clip.fps_millis() {
        return Ok(clip.clone());
    }
    let idx = fps_indices(clip.frames(), clip.fps(), target_millis as f64 / 1000.0);
    let out = clip.select_frames(&idx)?;
    VideoClip::with_fps_millis(
        out.frames(),
        out.height(),
        out.width(),
        target_millis,
        out.into_pixels(),
    )
}

/// Frame indices chosen by `spec` from a clip of `frames` frames.
pub fn sample_indices(frames: usize, spec: &SamplingSpec, start: usize) -> Result<Vec<usize>> {
    spec.validate()?;
    let n = spec.num_frames;
    match spec.mode {
        SamplingMode::Rate(rate) => {
            let last = start + (n - 1) * rate;
            if last >= frames {
                return Err(Error::InsufficientFrames {
                    needed: last + 1,
                    available: frames,
                });
            }
            Ok((0..n).map(|i| start + i * rate).collect())
        }
        SamplingMode::EquallySpaced => {
            if frames < n {
                return Err(Error::InsufficientFrames {
                    needed: n,
                    available: frames,
                });
            }
            Ok(equally_spaced(frames, n))
        }
    }
}

/// `round(i·(len−1)/(count−1))` for `i in 0..count`.
pub fn equally_spaced(len: usize, count: usize) -> Vec<usize> {
    if count == 1 {
        return vec![0];
    }
    (0..count)
        .map(|i| (i as f64 * (len - 1) as f64 / (count - 1) as f64).round() as usize)
        .collect()
}

pub fn sample_frames(clip: &VideoClip, spec: &SamplingSpec, start: usize) -> Result<VideoClip> {
    clip.select_frames(&sample_indices(clip.frames(), spec, start)?)
}

/// Repeats the clip from its first frame until it has at least `min_frames`.
pub fn loop_pad(clip: &VideoClip, min_frames: usize) -> Result<VideoClip> {
    if clip.frames() >= min_frames {
        return Ok(clip.clone());
    }
    let idx: Vec<usize> = (0..min_frames).map(|i| i % clip.frames()).collect();
    clip.select_frames(&idx)
}

/// `(pixel/255 − mean)/std` as a `[frames × h × w]` tensor.
pub fn normalize_pixels(clip: &VideoClip, mean: f32, std: f32) -> Result<Tensor> {
    if !(std > 0.0) {
        return Err(Error::param(
            "pixel_std",
            format!("must be positive, got {std}"),
        ));
    }
    let data = clip
        .pixels()
        .iter()
        .map(|&p| (p as f32 / 255.0 - mean) / std)
        .collect();
    Tensor::new(vec![clip.frames(), clip.height(), clip.width()], data)
}

/// Inverse of [`normalize_pixels`] for a single value, rounded and clamped.
pub fn denormalize_pixel(v: f32, mean: f32, std: f32) -> u8 {
    ((v * std + mean) * 255.0).round().clamp(0.0, 255.0) as u8
}
