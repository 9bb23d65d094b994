//! Masked-autoencoder pretraining: mask plans, visible-token encoding, the
//! decoder, reconstruction targets and loss, and reconstruction rendering.

mod mask;
mod recon;
mod render;

pub use mask::{apply_mask, make_mask_plan, visible_count, MaskPlan};
pub use recon::{
    build_recon_target, decoder_forward, encode_visible, reconstruction_loss, target_frames,
    ReconTarget, CONSTANT_PATCH_STD,
};
pub use render::{
    encode_pgm, reconstruct_clip, render_reconstruction, write_pgm_frames,
    write_reconstruction_panels, Reconstruction, RenderMode,
};
