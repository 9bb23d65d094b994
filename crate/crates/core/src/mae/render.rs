use std::fmt;
use std::path::{Path, PathBuf};

use super::mask::{make_mask_plan, MaskPlan};
use super::recon::{
    build_recon_target, decoder_forward, encode_visible, reconstruction_loss, ReconTarget,
};
use crate::error::{Error, Result};
use crate::model::{patchify_indices, ModelConfig, ParamStore};
use crate::tensor::{Graph, Tensor};
use crate::video::{denormalize_pixel, normalize_pixels, sample_frames, VideoClip};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    /// Original with masked tubelets set to black.
    Masked,
    /// Decoder output everywhere.
    Recon,
    /// Decoder output at masked tubelets, original pixels elsewhere.
    ReconPlusVisible,
}

impl RenderMode {
    pub fn panel_name(self) -> &'static str {
        match self {
            RenderMode::Masked => "masked",
            RenderMode::Recon => "recon",
            RenderMode::ReconPlusVisible => "recon_visible",
        }
    }
}

impl fmt::Display for RenderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.panel_name())
    }
}

/// Scatters per-token pixels back into a clip.
///
/// `clip` is the preprocessed input (`num_frames × image_size²`), `pred` the
/// decoder output `[n_tokens × patch_dim]` in target space.
pub fn render_reconstruction(
    clip: &VideoClip,
    pred: &Tensor,
    target: &ReconTarget,
    plan: &MaskPlan,
    cfg: &ModelConfig,
    mode: RenderMode,
) -> Result<VideoClip> {
    let (f, s) = (cfg.num_frames, cfg.image_size);
    if (clip.frames(), clip.height(), clip.width()) != (f, s, s) {
        return Err(Error::dim(
            "render_reconstruction",
            &[clip.frames(), clip.height(), clip.width()],
            &[f, s, s],
        ));
    }
    let pd = cfg.patch_dim();
    let n = plan.n_tokens;
    if pred.shape() != [n, pd] || target.values.shape() != [n, pd] {
        return Err(Error::dim("render_reconstruction", pred.shape(), &[n, pd]));
    }
    let idx = patchify_indices(cfg)?;
    let masked = plan.masked_flags();
    let mut pixels = clip.pixels().to_vec();
    for tok in 0..n {
        let write = match mode {
            RenderMode::Masked | RenderMode::ReconPlusVisible => masked[tok],
            RenderMode::Recon => true,
        };
        if !write {
            continue;
        }
        for k in 0..pd {
            let at = idx[tok * pd + k];
            pixels[at] = match mode {
                RenderMode::Masked => 0,
                _ => {
                    let v = target.unnormalize(tok, pred.row(tok)[k]);
                    denormalize_pixel(v, cfg.pixel_mean, cfg.pixel_std)
                }
            };
        }
    }
    VideoClip::with_fps_millis(f, s, s, clip.fps_millis(), pixels)
}

/// Binary graymap (P5) bytes for one 8-bit frame.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Writes the listed frames of `clip` as `{stem}.{panel}.{frame:03}.pgm`
/// in `dir`.
pub fn write_pgm_frames(
    dir: impl AsRef<Path>,
    stem: &str,
    panel: &str,
    clip: &VideoClip,
    frames: &[usize],
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(frames.len());
    for &t in frames {
        if t >= clip.frames() {
            return Err(Error::Index {
                op: "write_pgm_frames",
                index: t,
                extent: clip.frames(),
            });
        }
        let path = dir.join(format!("{stem}.{panel}.{t:03}.pgm"));
        std::fs::write(
            &path,
            encode_pgm(clip.width(), clip.height(), clip.frame(t)),
        )
        .map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Writes the four panels (original, masked, recon, recon_visible) at the
/// reconstructed frames only.
pub fn write_reconstruction_panels(
    dir: impl AsRef<Path>,
    stem: &str,
    clip: &VideoClip,
    pred: &Tensor,
    target: &ReconTarget,
    plan: &MaskPlan,
    cfg: &ModelConfig,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let frames = &target.frame_ids;
    let mut paths = write_pgm_frames(dir, stem, "original", clip, frames)?;
    for mode in [
        RenderMode::Masked,
        RenderMode::Recon,
        RenderMode::ReconPlusVisible,
    ] {
        let panel = render_reconstruction(clip, pred, target, plan, cfg, mode)?;
        paths.extend(write_pgm_frames(
            dir,
            stem,
            mode.panel_name(),
            &panel,
            frames,
        )?);
    }
    Ok(paths)
}

/// One clip pushed through the masked autoencoder, ready for rendering.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// The sampled, resized input frames.
    pub clip: VideoClip,
    pub pred: Tensor,
    pub target: ReconTarget,
    pub plan: MaskPlan,
    pub loss: f64,
}

/// Samples `num_frames` from the start of a preprocessed clip, masks it with
/// `mask_seed` and runs encoder and decoder from `params`.
pub fn reconstruct_clip(
    params: &ParamStore,
    cfg: &ModelConfig,
    frames: &VideoClip,
    mask_seed: u64,
) -> Result<Reconstruction> {
    let clip = sample_frames(frames, &cfg.sampling(), 0)?;
    let video = normalize_pixels(&clip, cfg.pixel_mean, cfg.pixel_std)?;
    let plan = make_mask_plan(cfg.token_grid()?.n_tokens(), cfg.mask_ratio, mask_seed)?;
    let target = build_recon_target(&video, cfg)?;
    let g = Graph::new();
    let p = params.bind_frozen(&g);
    let latent = encode_visible(g.constant(video), &plan, cfg, &p)?;
    let pred = decoder_forward(&latent, &plan, cfg, &p)?;
    let loss = reconstruction_loss(pred, &target, &plan)?.item()? as f64;
    Ok(Reconstruction {
        clip,
        pred: pred.value(),
        target,
        plan,
        loss,
    })
}

impl Reconstruction {
    pub fn render(&self, cfg: &ModelConfig, mode: RenderMode) -> Result<VideoClip> {
        render_reconstruction(&self.clip, &self.pred, &self.target, &self.plan, cfg, mode)
    }

    pub fn write_panels(
        &self,
        dir: impl AsRef<Path>,
        stem: &str,
        cfg: &ModelConfig,
    ) -> Result<Vec<PathBuf>> {
        write_reconstruction_panels(
            dir,
            stem,
            &self.clip,
            &self.pred,
            &self.target,
            &self.plan,
            cfg,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchSize;

    fn setup() -> (ModelConfig, VideoClip, ReconTarget, MaskPlan) {
        let cfg = ModelConfig::new(ArchSize::Toy, 8, 4, 4);
        let px: Vec<u8> = (0..256).map(|i| (30 + (i * 7) % 200) as u8).collect();
        let clip = VideoClip::new(4, 8, 8, 50.0, px).unwrap();
        let norm = normalize_pixels(&clip, cfg.pixel_mean, cfg.pixel_std).unwrap();
        let target = build_recon_target(&norm, &cfg).unwrap();
        let plan = make_mask_plan(8, 0.75, 5).unwrap();
        (cfg, clip, target, plan)
    }

    #[test]
    fn visible_pixels_are_exact() {
        let (cfg, clip, target, plan) = setup();
        let pred = Tensor::full([8, 32], 9.0).unwrap();
        let out = render_reconstruction(
            &clip,
            &pred,
            &target,
            &plan,
            &cfg,
            RenderMode::ReconPlusVisible,
        )
        .unwrap();
        let idx = patchify_indices(&cfg).unwrap();
        for &tok in &plan.keep_ids {
            for k in 0..32 {
                let at = idx[tok * 32 + k];
                assert_eq!(out.pixels()[at], clip.pixels()[at]);
            }
        }
    }

    #[test]
    fn masked_panel_zero_count() {
        let (cfg, clip, target, plan) = setup();
        let out = render_reconstruction(
            &clip,
            &target.values,
            &target,
            &plan,
            &cfg,
            RenderMode::Masked,
        )
        .unwrap();
        let zeros = out.pixels().iter().filter(|&&p| p == 0).count();
        assert_eq!(zeros, plan.mask_ids.len() * 32);
    }

    #[test]
    fn perfect_prediction_round_trips() {
        let (cfg, clip, target, plan) = setup();
        let out = render_reconstruction(
            &clip,
            &target.values,
            &target,
            &plan,
            &cfg,
            RenderMode::Recon,
        )
        .unwrap();
        for (a, b) in out.pixels().iter().zip(clip.pixels()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn pgm_files() {
        let (cfg, clip, target, plan) = setup();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_reconstruction_panels(
            dir.path(),
            "clip",
            &clip,
            &target.values,
            &target,
            &plan,
            &cfg,
        )
        .unwrap();
        assert_eq!(paths.len(), 16);
        let mut half = cfg.clone();
        half.recon_frames = 2;
        let t2 = build_recon_target(
            &normalize_pixels(&clip, half.pixel_mean, half.pixel_std).unwrap(),
            &half,
        )
        .unwrap();
        let sub = tempfile::tempdir().unwrap();
        let paths =
            write_reconstruction_panels(sub.path(), "clip", &clip, &t2.values, &t2, &plan, &half)
                .unwrap();
        assert_eq!(paths.len(), 8);
        assert!(sub.path().join("clip.recon.003.pgm").exists());
        let first = std::fs::read(dir.path().join("clip.masked.002.pgm")).unwrap();
        assert!(first.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(first.len(), 11 + 64);
    }
}
