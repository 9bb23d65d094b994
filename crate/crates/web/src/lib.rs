//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The exported methods wrap plain Rust functions (`frame_rgba`,
//! `masked_rgba`, `lr_points`) so the logic is testable on the host without
//! a JavaScript engine.

use echovit::mae::make_mask_plan;
use echovit::model::{patchify_indices, ArchSize, ModelConfig};
use echovit::train::{cosine_lr, ScheduleConfig};
use echovit::video::{generate_synthetic_clip, SyntheticHeartParams, VideoClip};
use wasm_bindgen::prelude::*;

/// Gray level painted over masked tubelets.
pub const MASK_LEVEL: u8 = 96;

fn js(e: echovit::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A generated beating-ellipse clip held on the Rust side.
#[wasm_bindgen]
pub struct DemoClip {
    clip: VideoClip,
    ef: f64,
}

impl DemoClip {
    pub fn generate(
        contraction: f64,
        noise: f64,
        frames: usize,
        size: usize,
        seed: u64,
    ) -> echovit::Result<Self> {
        let params = SyntheticHeartParams {
            rx: 0.32,
            ry: 0.38,
            contraction,
            beats: 1.0,
            phase: 0.0,
            noise,
            seed,
        };
        let (clip, ef) = generate_synthetic_clip(&params, frames, size, size, 50.0)?;
        Ok(Self { clip, ef })
    }

    pub fn clip(&self) -> &VideoClip {
        &self.clip
    }

    /// Frame `t` as RGBA bytes ready for `ImageData`.
    pub fn frame_rgba(&self, t: usize) -> Vec<u8> {
        gray_to_rgba(self.clip.frame(t % self.clip.frames()))
    }

    /// Frame `t` with every masked tubelet flattened to [`MASK_LEVEL`].
    pub fn masked_rgba(
        &self,
        t: usize,
        patch: usize,
        ratio: f64,
        seed: u64,
    ) -> echovit::Result<Vec<u8>> {
        let cfg = self.grid_config(patch, ratio)?;
        let n = cfg.token_grid()?.n_tokens();
        let plan = make_mask_plan(n, ratio, seed)?;
        let idx = patchify_indices(&cfg)?;
        let frame_len = self.clip.frame_len();
        let t = t % self.clip.frames();
        let mut gray = self.clip.frame(t).to_vec();
        let pd = cfg.patch_dim();
        for &tok in &plan.mask_ids {
            for &at in &idx[tok * pd..(tok + 1) * pd] {
                if at / frame_len == t {
                    gray[at % frame_len] = MASK_LEVEL;
                }
            }
        }
        Ok(gray_to_rgba(&gray))
    }

    fn grid_config(&self, patch: usize, ratio: f64) -> echovit::Result<ModelConfig> {
        let mut cfg = ModelConfig::new(ArchSize::Toy, self.clip.width(), self.clip.frames(), patch);
        cfg.mask_ratio = ratio;
        cfg.recon_frames = self.clip.frames();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[wasm_bindgen]
impl DemoClip {
    #[wasm_bindgen(constructor)]
    pub fn new(
        contraction: f64,
        noise: f64,
        frames: usize,
        size: usize,
        seed: u64,
    ) -> Result<DemoClip, JsError> {
        Self::generate(contraction, noise, frames, size, seed).map_err(js)
    }

    pub fn frames(&self) -> usize {
        self.clip.frames()
    }

    pub fn size(&self) -> usize {
        self.clip.width()
    }

    /// Analytic ejection fraction of the clip, in percent.
    pub fn ef(&self) -> f64 {
        self.ef
    }

    pub fn frame(&self, t: usize) -> Vec<u8> {
        self.frame_rgba(t)
    }

    pub fn masked(
        &self,
        t: usize,
        patch: usize,
        ratio: f64,
        seed: u64,
    ) -> Result<Vec<u8>, JsError> {
        self.masked_rgba(t, patch, ratio, seed).map_err(js)
    }

    /// Number of tokens left visible under the given patch size and ratio.
    pub fn visible_tokens(&self, patch: usize, ratio: f64) -> Result<usize, JsError> {
        let cfg = self.grid_config(patch, ratio).map_err(js)?;
        let n = cfg.token_grid().map_err(js)?.n_tokens();
        Ok(echovit::mae::visible_count(n, ratio))
    }
}

fn gray_to_rgba(gray: &[u8]) -> Vec<u8> {
    gray.iter().flat_map(|&g| [g, g, g, 255]).collect()
}

/// Learning rate at `points` evenly spaced iterations from 0 to `total`.
pub fn lr_points(base_lr: f64, total: usize, points: usize) -> Vec<f64> {
    let s = ScheduleConfig::new(base_lr, total);
    let last = points.saturating_sub(1).max(1);
    (0..points)
        .map(|i| cosine_lr(i * total / last, &s))
        .collect()
}

#[wasm_bindgen]
pub fn lr_curve(base_lr: f64, total: usize, points: usize) -> Vec<f64> {
    lr_points(base_lr, total, points)
}
