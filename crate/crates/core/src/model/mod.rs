//! Video vision transformer: configuration, parameters, forward pass and
//! checkpoints.

mod checkpoint;
mod config;
mod params;
mod vivit;

pub use checkpoint::{
    decode_eaiw, encode_eaiw, load_checkpoint, load_checkpoint_checked, save_checkpoint,
    EAIW_MAGIC, EAIW_VERSION,
};
pub use config::{
    ArchSize, DecoderConfig, EncoderDims, ModelConfig, TargetNorm, TokenGrid, LAYER_NORM_EPS,
};
pub use params::{
    block_param_count, check_schema, decoder_param_count, decoder_schema, encoder_param_count,
    encoder_schema, finetune_schema, head_schema, pretrain_schema, Init, ParamSpec, ParamStore,
    ParamVars, INIT_STD,
};
pub use vivit::{
    add_embeddings, embed_video, encoder_forward, patchify_indices, predict_ef, regression_head,
    transformer_block, tubelet_embed, EncoderOutput, TokenSequence,
};

pub(crate) use vivit::{layer_norm, linear, run_blocks};

use crate::error::{Error, Result};
use crate::mae::{
    build_recon_target, decoder_forward, encode_visible, make_mask_plan, reconstruction_loss,
};
use crate::tensor::check_all_ops;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{gradcheck, GradcheckOptions, GradcheckReport, Graph, Tensor};

/// Shape summary of a configuration, produced without allocating weights
/// at full width.
#[derive(Debug, Clone, PartialEq)]
pub struct DryRun {
    pub grid: TokenGrid,
    pub n_tokens: usize,
    /// Encoder sequence length with the class token, if any.
    pub sequence_len: usize,
    pub visible_tokens: usize,
    pub encoder_params: usize,
    pub decoder_params: usize,
    pub head_params: usize,
}

/// Validates `cfg`, builds its parameter schemas and checks them against the
/// closed-form counts.
///
/// With `forward` set, also pushes a zero video through a narrow stand-in
/// (same geometry, TOY widths, one block each) and checks every token count
/// along the full-sequence, masked-encoder and decoder paths.
pub fn dry_run(cfg: &ModelConfig, forward: bool) -> Result<DryRun> {
    cfg.validate()?;
    let grid = cfg.token_grid()?;
    let n = grid.n_tokens();
    let count = |s: &[ParamSpec]| s.iter().map(ParamSpec::numel).sum::<usize>();
    let encoder_params = count(&encoder_schema(cfg)?);
    let decoder_params = count(&decoder_schema(cfg)?);
    let head_params = count(&head_schema(cfg));
    if encoder_params != encoder_param_count(cfg)? || decoder_params != decoder_param_count(cfg)? {
        return Err(Error::Contract(
            "parameter schema disagrees with closed-form count".into(),
        ));
    }
    let plan = make_mask_plan(n, cfg.mask_ratio, 0)?;
    let report = DryRun {
        grid,
        n_tokens: n,
        sequence_len: cfg.sequence_len()?,
        visible_tokens: plan.keep_ids.len(),
        encoder_params,
        decoder_params,
        head_params,
    };
    if forward {
        let mut narrow = cfg.clone();
        narrow.encoder = ArchSize::Toy.encoder();
        narrow.encoder.depth = 1;
        narrow.decoder = ArchSize::Toy.decoder();
        narrow.decoder.depth = 1;
        let mut schema = pretrain_schema(&narrow)?;
        schema.extend(head_schema(&narrow));
        let params = ParamStore::<f32>::init(&schema, 0)?;
        let g = Graph::new();
        let p = params.bind_frozen(&g);
        let video = g.constant(Tensor::zeros([
            cfg.num_frames,
            cfg.image_size,
            cfg.image_size,
        ])?);

        let seq = embed_video(video, &narrow, &p)?;
        let full = encoder_forward(&seq, &p, &narrow)?;
        let masked = encode_visible(video, &plan, &narrow, &p)?;
        let pred = decoder_forward(&masked, &plan, &narrow, &p)?;
        let ef = regression_head(&full, &p)?;
        let checks = [
            ("sequence", seq.len(), report.sequence_len),
            ("latent", full.latent.shape()[0], report.sequence_len),
            (
                "visible latent",
                masked.latent.shape()[0],
                report.visible_tokens + usize::from(cfg.use_class_token),
            ),
            ("decoder rows", pred.shape()[0], n),
            ("decoder cols", pred.shape()[1], cfg.patch_dim()),
            ("head", ef.shape().iter().product(), 1),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::Contract(format!(
                    "dry run: {what} has {got}, expected {want}"
                )));
            }
        }
    }
    Ok(report)
}

fn gradcheck_store(schema: &[ParamSpec], seed: u64) -> Result<ParamStore<f64>> {
    let mut store = ParamStore::<f64>::init(schema, seed)?;
    // Larger weights than the training init so every path carries signal.
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            if *v != 0.0 && *v != 1.0 {
                *v *= 10.0;
            }
        }
    }
    Ok(store)
}

fn random_video(cfg: &ModelConfig, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let numel = cfg.num_frames * cfg.image_size * cfg.image_size;
    let video: Vec<f64> = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new([cfg.num_frames, cfg.image_size, cfg.image_size], video)
}

/// Finite-difference check of `d(EF estimate)/d(every weight)` and of the
/// input video, in `f64`, for a freshly initialized fine-tuning model.
pub fn gradcheck_model(
    cfg: &ModelConfig,
    seed: u64,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    cfg.validate()?;
    let store = gradcheck_store(&finetune_schema(cfg)?, seed)?;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut inputs: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    inputs.push(random_video(cfg, seed)?);
    let n_params = names.len();
    gradcheck(
        &inputs,
        |_, vars| {
            let params = ParamVars::from_vars(names.iter().cloned(), &vars[..n_params]);
            predict_ef(vars[n_params], cfg, &params)?.sum()
        },
        opts,
    )
}

/// Finite-difference check of the masked reconstruction loss with respect
/// to every encoder and decoder weight.
pub fn gradcheck_pretrain(
    cfg: &ModelConfig,
    seed: u64,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    cfg.validate()?;
    let store = gradcheck_store(&pretrain_schema(cfg)?, seed)?;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let inputs: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    let video = random_video(cfg, seed)?;
    let target = build_recon_target(&video.cast::<f32>(), cfg)?;
    let plan = make_mask_plan(cfg.token_grid()?.n_tokens(), cfg.mask_ratio, seed)?;
    gradcheck(
        &inputs,
        |g, vars| {
            let params = ParamVars::from_vars(names.iter().cloned(), vars);
            let latent = encode_visible(g.constant(video.clone()), &plan, cfg, &params)?;
            let pred = decoder_forward(&latent, &plan, cfg, &params)?;
            reconstruction_loss(pred, &target, &plan)
        },
        opts,
    )
}

/// Every differentiable op, then the fine-tuning and pretraining graphs of
/// [`ModelConfig::gradcheck_scale`], each with its own report.
pub fn gradcheck_suite(
    seed: u64,
    opts: &GradcheckOptions,
) -> Result<Vec<(String, GradcheckReport)>> {
    let mut out: Vec<(String, GradcheckReport)> = check_all_ops(opts)?
        .into_iter()
        .map(|(name, r)| (format!("op {name}"), r))
        .collect();
    let cfg = ModelConfig::gradcheck_scale();
    out.push((
        "model ef-regression".into(),
        gradcheck_model(&cfg, seed, opts)?,
    ));
    out.push((
        "model reconstruction".into(),
        gradcheck_pretrain(&cfg, seed, opts)?,
    ));
    Ok(out)
}
