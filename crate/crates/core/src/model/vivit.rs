//! Tubelet embedding, transformer encoder and regression head.

use super::config::{ModelConfig, TokenGrid, LAYER_NORM_EPS};
use super::params::ParamVars;
use crate::error::{Error, Result};
use crate::tensor::{Element, Var};

/// Embedded tokens in grid order (time-major, then row-major), optionally
/// preceded by a class token.
#[derive(Debug, Clone, Copy)]
pub struct TokenSequence<'g, E: Element = f32> {
    pub tokens: Var<'g, E>,
    pub grid: TokenGrid,
    pub has_class_token: bool,
}

impl<E: Element> TokenSequence<'_, E> {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Encoder latent: one row per input token.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput<'g, E: Element = f32> {
    pub latent: Var<'g, E>,
    pub has_class_token: bool,
}

/// Flat video offsets, laid out `[n_tokens × patch_dim]`, that gather each
/// tubelet's pixels in `(frame, row, col)` order.
pub fn patchify_indices(cfg: &ModelConfig) -> Result<Vec<usize>> {
    let grid = cfg.token_grid()?;
    let (p, td, side) = (cfg.patch_size, cfg.tubelet_depth, cfg.image_size);
    let mut idx = Vec::with_capacity(grid.n_tokens() * cfg.patch_dim());
    for token in 0..grid.n_tokens() {
        let (tau, gy, gx) = grid.coords(token);
        for dt in 0..td {
            for py in 0..p {
                for px in 0..p {
                    let f = tau * td + dt;
                    let y = gy * p + py;
                    let x = gx * p + px;
                    idx.push((f * side + y) * side + x);
                }
            }
        }
    }
    Ok(idx)
}

fn check_video_shape(shape: &[usize], cfg: &ModelConfig) -> Result<()> {
    let want = [cfg.num_frames, cfg.image_size, cfg.image_size];
    if shape != want {
        return Err(Error::Config(format!(
            "video shape {shape:?} does not match config {want:?}"
        )));
    }
    Ok(())
}

/// Splits the video into tubelets and projects each to `embed_dim`.
pub fn tubelet_embed<'g, E: Element>(
    video: Var<'g, E>,
    cfg: &ModelConfig,
    params: &ParamVars<'g, E>,
) -> Result<TokenSequence<'g, E>> {
    check_video_shape(&video.shape(), cfg)?;
    let grid = cfg.token_grid()?;
    let patches =
        video.gather_elements(&patchify_indices(cfg)?, [grid.n_tokens(), cfg.patch_dim()])?;
    let tokens = patches
        .matmul(params.get("enc.patch_embed.weight")?)?
        .add_row(params.get("enc.patch_embed.bias")?)?;
    Ok(TokenSequence {
        tokens,
        grid,
        has_class_token: false,
    })
}

/// Adds factorized space/time embeddings and optionally prepends a class
/// token, which receives no positional term.
pub fn add_embeddings<'g, E: Element>(
    seq: TokenSequence<'g, E>,
    pos_table: Var<'g, E>,
    temporal_table: Var<'g, E>,
    class_token: Option<Var<'g, E>>,
) -> Result<TokenSequence<'g, E>> {
    let grid = seq.grid;
    let pos_rows = pos_table.shape()[0];
    let time_rows = temporal_table.shape()[0];
    if pos_rows != grid.h * grid.w || time_rows != grid.t {
        return Err(Error::Config(format!(
            "embedding tables ({pos_rows} spatial, {time_rows} temporal rows) do not match grid {}x{}x{}",
            grid.t, grid.h, grid.w
        )));
    }
    if seq.has_class_token {
        return Err(Error::Contract("embeddings already added".into()));
    }
    let n = grid.n_tokens();
    let pos_ids: Vec<usize> = (0..n)
        .map(|i| {
            let (_, y, x) = grid.coords(i);
            y * grid.w + x
        })
        .collect();
    let time_ids: Vec<usize> = (0..n).map(|i| grid.coords(i).0).collect();
    let tokens = seq
        .tokens
        .add(pos_table.gather_rows(&pos_ids)?)?
        .add(temporal_table.gather_rows(&time_ids)?)?;
    let (tokens, has_class_token) = match class_token {
        Some(cls) => (tokens.graph().concat_rows(&[cls, tokens])?, true),
        None => (tokens, false),
    };
    Ok(TokenSequence {
        tokens,
        grid,
        has_class_token,
    })
}

/// Tubelet embedding followed by the encoder's embeddings.
pub fn embed_video<'g, E: Element>(
    video: Var<'g, E>,
    cfg: &ModelConfig,
    params: &ParamVars<'g, E>,
) -> Result<TokenSequence<'g, E>> {
    let seq = tubelet_embed(video, cfg, params)?;
    let cls = if cfg.use_class_token {
        Some(params.get("enc.cls_token")?)
    } else {
        None
    };
    add_embeddings(
        seq,
        params.get("enc.pos_embed")?,
        params.get("enc.time_embed")?,
        cls,
    )
}

pub(crate) fn linear<'g, E: Element>(
    x: Var<'g, E>,
    params: &ParamVars<'g, E>,
    prefix: &str,
) -> Result<Var<'g, E>> {
    x.matmul(params.get(&format!("{prefix}.weight"))?)?
        .add_row(params.get(&format!("{prefix}.bias"))?)
}

pub(crate) fn layer_norm<'g, E: Element>(
    x: Var<'g, E>,
    params: &ParamVars<'g, E>,
    prefix: &str,
) -> Result<Var<'g, E>> {
    x.layer_norm(
        params.get(&format!("{prefix}.weight"))?,
        params.get(&format!("{prefix}.bias"))?,
        E::from_f64(LAYER_NORM_EPS),
    )
}

fn self_attention<'g, E: Element>(
    x: Var<'g, E>,
    params: &ParamVars<'g, E>,
    prefix: &str,
    heads: usize,
) -> Result<Var<'g, E>> {
    let d = x.shape()[1];
    let dh = d / heads;
    let qkv = linear(x, params, &format!("{prefix}.qkv"))?;
    let scale = E::from_f64(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = qkv.slice_cols(h * dh, dh)?;
        let k = qkv.slice_cols(d + h * dh, dh)?;
        let v = qkv.slice_cols(2 * d + h * dh, dh)?;
        let attn = q.matmul(k.transpose()?)?.scale(scale)?.softmax()?;
        outs.push(attn.matmul(v)?);
    }
    let merged = if heads == 1 {
        outs[0]
    } else {
        x.graph().concat_cols(&outs)?
    };
    linear(merged, params, &format!("{prefix}.proj"))
}

/// Pre-norm block: `x + attn(norm1(x))`, then `x + mlp(norm2(x))`.
pub fn transformer_block<'g, E: Element>(
    x: Var<'g, E>,
    params: &ParamVars<'g, E>,
    prefix: &str,
    heads: usize,
) -> Result<Var<'g, E>> {
    let h = layer_norm(x, params, &format!("{prefix}.norm1"))?;
    let x = x.add(self_attention(h, params, &format!("{prefix}.attn"), heads)?)?;
    let h = layer_norm(x, params, &format!("{prefix}.norm2"))?;
    let h = linear(h, params, &format!("{prefix}.mlp.fc1"))?.gelu()?;
    let h = linear(h, params, &format!("{prefix}.mlp.fc2"))?;
    x.add(h)
}

pub(crate) fn run_blocks<'g, E: Element>(
    mut x: Var<'g, E>,
    params: &ParamVars<'g, E>,
    prefix: &str,
    depth: usize,
    heads: usize,
) -> Result<Var<'g, E>> {
    for i in 0..depth {
        x = transformer_block(x, params, &format!("{prefix}.block{i}"), heads)?;
    }
    Ok(x)
}

/// Runs the encoder blocks over any token set (full or visible-only).
pub fn encoder_forward<'g, E: Element>(
    seq: &TokenSequence<'g, E>,
    params: &ParamVars<'g, E>,
    cfg: &ModelConfig,
) -> Result<EncoderOutput<'g, E>> {
    let latent = run_blocks(
        seq.tokens,
        params,
        "enc",
        cfg.encoder.depth,
        cfg.encoder.heads,
    )?;
    Ok(EncoderOutput {
        latent,
        has_class_token: seq.has_class_token,
    })
}

/// Pools the latent (class token row, or mean over tokens) and applies the
/// dense EF head. Output is `[1×1]` in EF percent, unbounded.
pub fn regression_head<'g, E: Element>(
    latent: &EncoderOutput<'g, E>,
    params: &ParamVars<'g, E>,
) -> Result<Var<'g, E>> {
    let pooled = if latent.has_class_token {
        latent.latent.gather_rows(&[0])?
    } else {
        latent.latent.mean_rows()?
    };
    linear(pooled, params, "head")
}

/// Video `[frames × h × w]` to EF estimate `[1×1]`.
pub fn predict_ef<'g, E: Element>(
    video: Var<'g, E>,
    cfg: &ModelConfig,
    params: &ParamVars<'g, E>,
) -> Result<Var<'g, E>> {
    let seq = embed_video(video, cfg, params)?;
    let out = encoder_forward(&seq, params, cfg)?;
    regression_head(&out, params)
}
