use super::mask::{apply_mask, MaskPlan};
use crate::error::{Error, Result};
use crate::model::{
    add_embeddings, embed_video, encoder_forward, layer_norm, linear, patchify_indices, run_blocks,
    EncoderOutput, ModelConfig, ParamVars, TargetNorm, TokenSequence,
};
use crate::tensor::{Element, Tensor, Var};
use crate::video::equally_spaced;

/// Below this deviation a token's target pixels count as constant.
pub const CONSTANT_PATCH_STD: f64 = 1e-6;

/// Embeds the whole video, drops masked tokens and encodes the rest.
pub fn encode_visible<'g, E: Element>(
    video: Var<'g, E>,
    plan: &MaskPlan,
    cfg: &ModelConfig,
    params: &ParamVars<'g, E>,
) -> Result<EncoderOutput<'g, E>> {
    let seq = embed_video(video, cfg, params)?;
    let visible = apply_mask(&seq, plan)?;
    encoder_forward(&visible, params, cfg)
}

/// Lightweight decoder: projects the visible latent, fills masked slots with
/// the shared mask token, restores grid order, adds decoder embeddings and
/// predicts every token's full tubelet pixels `[n_tokens × patch_dim]`.
pub fn decoder_forward<'g, E: Element>(
    latent: &EncoderOutput<'g, E>,
    plan: &MaskPlan,
    cfg: &ModelConfig,
    params: &ParamVars<'g, E>,
) -> Result<Var<'g, E>> {
    let rows = latent.latent.shape()[0];
    let offset = usize::from(latent.has_class_token);
    if rows < offset || rows - offset != plan.keep_ids.len() {
        return Err(Error::Contract(format!(
            "decoder expects {} visible tokens, latent has {}",
            plan.keep_ids.len(),
            rows.saturating_sub(offset)
        )));
    }
    let visible = if latent.has_class_token {
        latent.latent.gather_rows(&(1..rows).collect::<Vec<_>>())?
    } else {
        latent.latent
    };
    let x = linear(visible, params, "dec.embed")?;
    let full = if plan.mask_ids.is_empty() {
        x
    } else {
        let masks = params
            .get("dec.mask_token")?
            .gather_rows(&vec![0; plan.mask_ids.len()])?;
        x.graph().concat_rows(&[x, masks])?
    };
    let seq = TokenSequence {
        tokens: full.gather_rows(&plan.restore_perm)?,
        grid: cfg.token_grid()?,
        has_class_token: false,
    };
    let seq = add_embeddings(
        seq,
        params.get("dec.pos_embed")?,
        params.get("dec.time_embed")?,
        None,
    )?;
    let h = run_blocks(
        seq.tokens,
        params,
        "dec",
        cfg.decoder.depth,
        cfg.decoder.heads,
    )?;
    let h = layer_norm(h, params, "dec.norm")?;
    linear(h, params, "dec.pred")
}

/// Reconstruction target for one clip.
///
/// `values` and `weights` are `[n_tokens × patch_dim]`; a weight is 1 where the
/// coordinate falls on a target frame. `mean`/`std` undo the per-token
/// scaling (`pixel = value·std + mean`); constant tokens have `std == 0` and
/// all-zero values.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconTarget {
    pub values: Tensor,
    pub weights: Tensor,
    pub frame_ids: Vec<usize>,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub norm: TargetNorm,
}

/// Frames whose pixels enter the loss: `recon_frames` equally spaced indices
/// over `num_frames`.
pub fn target_frames(num_frames: usize, recon_frames: usize) -> Result<Vec<usize>> {
    if recon_frames == 0 || recon_frames > num_frames {
        return Err(Error::param(
            "recon_frames",
            format!("must lie in 1..={num_frames}, got {recon_frames}"),
        ));
    }
    Ok(equally_spaced(num_frames, recon_frames))
}

/// Builds the target from a normalized video `[frames × h × w]`.
pub fn build_recon_target(video: &Tensor, cfg: &ModelConfig) -> Result<ReconTarget> {
    let want = [cfg.num_frames, cfg.image_size, cfg.image_size];
    if video.shape() != want {
        return Err(Error::dim("build_recon_target", video.shape(), &want));
    }
    let frame_ids = target_frames(cfg.num_frames, cfg.recon_frames)?;
    let grid = cfg.token_grid()?;
    let n = grid.n_tokens();
    let pd = cfg.patch_dim();
    let pp = cfg.patch_size * cfg.patch_size;
    let mut is_target = vec![false; cfg.num_frames];
    for &f in &frame_ids {
        is_target[f] = true;
    }
    let idx = patchify_indices(cfg)?;
    let mut values: Vec<f32> = idx.iter().map(|&i| video.data()[i]).collect();
    let mut weights = vec![0f32; n * pd];
    let mut mean = vec![0f32; n];
    let mut std = vec![1f32; n];
    for tok in 0..n {
        let frame0 = grid.coords(tok).0 * cfg.tubelet_depth;
        let w = &mut weights[tok * pd..(tok + 1) * pd];
        for (k, wk) in w.iter_mut().enumerate() {
            if is_target[frame0 + k / pp] {
                *wk = 1.0;
            }
        }
        if cfg.target_norm == TargetNorm::Raw {
            continue;
        }
        let row = &mut values[tok * pd..(tok + 1) * pd];
        // Statistics over target coordinates, or the whole tubelet when none
        // of its frames is targeted.
        let selected: Vec<f64> = row
            .iter()
            .zip(w.iter())
            .filter(|(_, &wk)| wk > 0.0)
            .map(|(&v, _)| v as f64)
            .collect();
        let sample: Vec<f64> = if selected.is_empty() {
            row.iter().map(|&v| v as f64).collect()
        } else {
            selected
        };
        let m = sample.iter().sum::<f64>() / sample.len() as f64;
        let var = sample.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / sample.len() as f64;
        let s = var.sqrt();
        mean[tok] = m as f32;
        if s < CONSTANT_PATCH_STD {
            std[tok] = 0.0;
            row.fill(0.0);
        } else {
            std[tok] = s as f32;
            for v in row.iter_mut() {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
    }
    Ok(ReconTarget {
        values: Tensor::new([n, pd], values)?,
        weights: Tensor::new([n, pd], weights)?,
        frame_ids,
        mean,
        std,
        norm: cfg.target_norm,
    })
}

impl ReconTarget {
    /// Maps a predicted token row back to normalized pixel space.
    pub fn unnormalize(&self, token: usize, v: f32) -> f32 {
        v * self.std[token] + self.mean[token]
    }

    /// Loss weights restricted to the masked tokens of `plan`.
    pub fn masked_weights<E: Element>(&self, plan: &MaskPlan) -> Result<Tensor<E>> {
        let n = self.values.rows();
        if plan.n_tokens != n {
            return Err(Error::dim("reconstruction_loss", &[plan.n_tokens], &[n]));
        }
        let pd = self.values.row_len();
        let flags = plan.masked_flags();
        let data = self
            .weights
            .data()
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                if flags[i / pd] {
                    E::from_f64(w as f64)
                } else {
                    E::zero()
                }
            })
            .collect();
        Tensor::new([n, pd], data)
    }
}

/// Mean squared error over masked tokens and target-frame coordinates only.
pub fn reconstruction_loss<'g, E: Element>(
    pred: Var<'g, E>,
    target: &ReconTarget,
    plan: &MaskPlan,
) -> Result<Var<'g, E>> {
    let weights = target.masked_weights::<E>(plan)?;
    let t = pred.graph().constant(target.values.cast());
    pred.masked_mse(t, &weights)
}
