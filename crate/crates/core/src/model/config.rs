use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::video::{SamplingMode, SamplingSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchSize {
    /// Test-scale model.
    Toy,
    Base,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderDims {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl ArchSize {
    pub fn encoder(self) -> EncoderDims {
        let (embed_dim, depth, heads) = match self {
            ArchSize::Toy => (64, 2, 4),
            ArchSize::Base => (768, 12, 12),
            ArchSize::Large => (1024, 24, 16),
        };
        EncoderDims {
            embed_dim,
            depth,
            heads,
            mlp_ratio: 4,
        }
    }

    pub fn decoder(self) -> DecoderConfig {
        let embed_dim = match self {
            ArchSize::Toy => 32,
            ArchSize::Base | ArchSize::Large => 128,
        };
        DecoderConfig {
            embed_dim,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
        }
    }
}

impl fmt::Display for ArchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchSize::Toy => "toy",
            ArchSize::Base => "base",
            ArchSize::Large => "large",
        })
    }
}

impl FromStr for ArchSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "toy" => Ok(ArchSize::Toy),
            "base" => Ok(ArchSize::Base),
            "large" => Ok(ArchSize::Large),
            _ => Err(Error::Config(format!("unknown arch_size `{s}`"))),
        }
    }
}

/// How reconstruction targets are scaled before the pixel loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetNorm {
    /// Each token's target pixels standardized to zero mean, unit variance.
    PerToken,
    /// Normalized pixel values as fed to the encoder.
    Raw,
}

impl FromStr for TargetNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_token" => Ok(TargetNorm::PerToken),
            "raw" => Ok(TargetNorm::Raw),
            _ => Err(Error::Config(format!(
                "unknown target_norm `{s}` (per_token|raw)"
            ))),
        }
    }
}

impl fmt::Display for TargetNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetNorm::PerToken => "per_token",
            TargetNorm::Raw => "raw",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenGrid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl TokenGrid {
    pub fn n_tokens(&self) -> usize {
        self.t * self.h * self.w
    }

    /// `(time, row, col)` of grid token `i` (time-major, then row-major).
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let hw = self.h * self.w;
        (i / hw, (i % hw) / self.w, i % self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: ArchSize,
    pub encoder: EncoderDims,
    pub decoder: DecoderConfig,
    /// Square input side in pixels.
    pub image_size: usize,
    pub num_frames: usize,
    pub patch_size: usize,
    pub tubelet_depth: usize,
    pub use_class_token: bool,
    pub recon_frames: usize,
    pub sampling_mode: SamplingMode,
    pub target_fps: f64,
    pub mask_ratio: f64,
    pub target_norm: TargetNorm,
    pub pixel_mean: f32,
    pub pixel_std: f32,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

impl ModelConfig {
    /// Defaults for an architecture: tubelet depth 2, mean pooling, mask
    /// ratio 0.9, per-token targets.
    pub fn new(arch: ArchSize, image_size: usize, num_frames: usize, patch_size: usize) -> Self {
        Self {
            arch,
            encoder: arch.encoder(),
            decoder: arch.decoder(),
            image_size,
            num_frames,
            patch_size,
            tubelet_depth: 2,
            use_class_token: false,
            recon_frames: num_frames,
            sampling_mode: SamplingMode::EquallySpaced,
            target_fps: 50.0,
            mask_ratio: 0.9,
            target_norm: TargetNorm::PerToken,
            pixel_mean: 0.45,
            pixel_std: 0.225,
        }
    }

    /// 32×32 pixels, 8 frames, patch 8: a 4×4×4 grid of 64 tokens.
    pub fn toy() -> Self {
        Self::new(ArchSize::Toy, 32, 8, 8)
    }

    /// The toy layout shrunk for finite-difference checks: 8×8 pixels,
    /// 4 frames, patch 4, width 16 and two blocks in encoder and decoder.
    pub fn gradcheck_scale() -> Self {
        let mut c = Self::new(ArchSize::Toy, 8, 4, 4);
        c.encoder.embed_dim = 16;
        c.encoder.heads = 2;
        c.decoder.embed_dim = 16;
        c.decoder.depth = 2;
        c.decoder.heads = 2;
        c.mask_ratio = 0.5;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.token_grid()?;
        let e = &self.encoder;
        let d = &self.decoder;
        if e.embed_dim == 0 || e.heads == 0 || e.embed_dim % e.heads != 0 {
            return Err(Error::Config(format!(
                "encoder heads {} must divide embed_dim {}",
                e.heads, e.embed_dim
            )));
        }
        if d.embed_dim == 0 || d.heads == 0 || d.embed_dim % d.heads != 0 {
            return Err(Error::Config(format!(
                "decoder heads {} must divide embed_dim {}",
                d.heads, d.embed_dim
            )));
        }
        if e.mlp_ratio == 0 || d.mlp_ratio == 0 {
            return Err(Error::Config("mlp_ratio must be at least 1".into()));
        }
        if self.recon_frames == 0 || self.recon_frames > self.num_frames {
            return Err(Error::Config(format!(
                "recon_frames {} must lie in 1..={}",
                self.recon_frames, self.num_frames
            )));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!(
                "mask_ratio {} must lie in (0, 1)",
                self.mask_ratio
            )));
        }
        if !(self.pixel_std > 0.0) {
            return Err(Error::Config("pixel_std must be positive".into()));
        }
        self.sampling()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Token grid extents; fails when the patch or tubelet does not tile the
    /// input exactly.
    pub fn token_grid(&self) -> Result<TokenGrid> {
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.tubelet_depth == 0
            || self.num_frames == 0
            || self.num_frames % self.tubelet_depth != 0
        {
            return Err(Error::Config(format!(
                "num_frames {} is not divisible by tubelet_depth {}",
                self.num_frames, self.tubelet_depth
            )));
        }
        let side = self.image_size / self.patch_size;
        Ok(TokenGrid {
            t: self.num_frames / self.tubelet_depth,
            h: side,
            w: side,
        })
    }

    /// Pixels per tubelet.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.tubelet_depth
    }

    pub fn sampling(&self) -> SamplingSpec {
        SamplingSpec {
            num_frames: self.num_frames,
            mode: self.sampling_mode,
            target_fps: self.target_fps,
        }
    }

    /// Number of encoder tokens including the optional class token.
    pub fn sequence_len(&self) -> Result<usize> {
        Ok(self.token_grid()?.n_tokens() + usize::from(self.use_class_token))
    }
}
