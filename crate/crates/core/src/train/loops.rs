use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{mix_seed, sample_video, PreparedClip};
use super::optim::{AdamW, AdamWConfig, GradAccumulator};
use super::schedule::{cosine_lr, ScheduleConfig};
use crate::error::{Error, Result};
use crate::mae::{
    build_recon_target, decoder_forward, encode_visible, make_mask_plan, reconstruction_loss,
    MaskPlan,
};
use crate::metrics::{compute_report, EvalPair, EvalReport};
use crate::model::{
    encoder_schema, head_schema, predict_ef, pretrain_schema, save_checkpoint, ModelConfig,
    ParamStore,
};
use crate::tensor::{Element, Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Pretrain,
    Finetune,
    /// Fine-tuning from random encoder weights.
    VanillaFinetune,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub grad_accum: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub base_lr: f64,
    pub optimizer: AdamWConfig,
    /// Fraction of the schedule spent in linear warmup.
    pub warmup_frac: f64,
    /// Stops after this many data iterations; the schedule spans exactly
    /// this many when set.
    pub max_iterations: Option<usize>,
    pub augment_strength: f64,
    /// Write an intermediate checkpoint every this many epochs (0: never).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(mode: TrainMode) -> Self {
        let (base_lr, optimizer) = match mode {
            TrainMode::Pretrain => (0.0016, AdamWConfig::PRETRAIN),
            TrainMode::Finetune | TrainMode::VanillaFinetune => (0.0024, AdamWConfig::FINETUNE),
        };
        Self {
            mode,
            epochs: 50,
            grad_accum: 2,
            batch_size: 4,
            seed: 0,
            base_lr,
            optimizer,
            warmup_frac: 0.0,
            max_iterations: None,
            augment_strength: 0.0,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.grad_accum == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs, grad_accum and batch_size must be at least 1".into(),
            ));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config(format!(
                "warmup_frac {} must lie in [0, 1)",
                self.warmup_frac
            )));
        }
        if !(0.0..=1.0).contains(&self.augment_strength) {
            return Err(Error::Config(format!(
                "augment_strength {} must lie in [0, 1]",
                self.augment_strength
            )));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
            || !(o.eps > 0.0)
            || o.weight_decay < 0.0
        {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }

    /// Data iterations per epoch, total iterations, and the epochs needed.
    pub fn plan(&self, n_clips: usize) -> (usize, usize, usize) {
        let per_epoch = n_clips.div_ceil(self.batch_size);
        let total = self.max_iterations.unwrap_or(self.epochs * per_epoch);
        (per_epoch, total, total.div_ceil(per_epoch))
    }

    fn schedule(&self, total: usize) -> Result<ScheduleConfig> {
        let mut s = ScheduleConfig::new(self.base_lr, total);
        s.warmup_iterations = (self.warmup_frac * total as f64).round() as usize;
        s.validate()?;
        Ok(s)
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// 1-based data iteration.
    pub iteration: usize,
    /// 1-based epoch.
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn write_loss_csv(log: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["iteration", "epoch", "lr", "loss"])?;
    for r in log {
        w.write_record([
            r.iteration.to_string(),
            r.epoch.to_string(),
            r.lr.to_string(),
            r.loss.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `out` with its extension replaced by `suffix`: `run.eaiw` → `run.loss.csv`.
pub fn sibling_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

/// One clip's input to a pretraining step.
#[derive(Debug, Clone)]
pub struct PretrainItem {
    pub video: Tensor,
    pub plan: MaskPlan,
}

fn check_loss(loss: f64, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!("non-finite {what} loss")))
    }
}

fn add_scaled<E: Element>(acc: &mut Option<ParamStore<E>>, grads: ParamStore<E>, scale: f64) {
    let s = E::from_f64(scale);
    match acc {
        None => {
            let mut g = grads;
            for (_, t) in g.iter_mut() {
                t.data_mut().iter_mut().for_each(|x| *x = *x * s);
            }
            *acc = Some(g);
        }
        Some(sum) => {
            for (name, t) in sum.iter_mut() {
                let g = grads.get(name).expect("same parameter set");
                for (a, &b) in t.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + b * s;
                }
            }
        }
    }
}

/// Mean reconstruction loss over a micro-batch and its gradient.
pub fn pretrain_grads<E: Element>(
    params: &ParamStore<E>,
    items: &[PretrainItem],
    cfg: &ModelConfig,
) -> Result<(f64, ParamStore<E>)> {
    if items.is_empty() {
        return Err(Error::Contract("empty micro-batch".into()));
    }
    let scale = 1.0 / items.len() as f64;
    let (mut total, mut acc) = (0.0, None);
    for item in items {
        let g = Graph::new();
        let p = params.bind(&g);
        let video = g.constant(item.video.cast::<E>());
        let latent = encode_visible(video, &item.plan, cfg, &p)?;
        let pred = decoder_forward(&latent, &item.plan, cfg, &p)?;
        let target = build_recon_target(&item.video, cfg)?;
        let loss = reconstruction_loss(pred, &target, &item.plan)?;
        total += check_loss(loss.item()?.as_f64(), "reconstruction")?;
        g.backward(loss)?;
        add_scaled(&mut acc, p.grads(), scale);
    }
    Ok((total * scale, acc.expect("non-empty batch")))
}

/// Mean squared EF error over a micro-batch and its gradient.
pub fn finetune_grads<E: Element>(
    params: &ParamStore<E>,
    items: &[(Tensor, f64)],
    cfg: &ModelConfig,
) -> Result<(f64, ParamStore<E>)> {
    if items.is_empty() {
        return Err(Error::Contract("empty micro-batch".into()));
    }
    let scale = 1.0 / items.len() as f64;
    let (mut total, mut acc) = (0.0, None);
    for (video, ef) in items {
        let g = Graph::new();
        let p = params.bind(&g);
        let pred = predict_ef(g.constant(video.cast::<E>()), cfg, &p)?;
        let target = g.constant(Tensor::new([1, 1], vec![E::from_f64(*ef)])?);
        let loss = pred.mse_loss(target)?;
        total += check_loss(loss.item()?.as_f64(), "EF")?;
        g.backward(loss)?;
        add_scaled(&mut acc, p.grads(), scale);
    }
    Ok((total * scale, acc.expect("non-empty batch")))
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ParamStore,
    pub log: Vec<LossRecord>,
    pub optimizer_steps: u64,
}

/// Masked-autoencoder pretraining of encoder and decoder.
///
/// With `out`, writes the final checkpoint there, the loss log next to it
/// (`*.loss.csv`) and, if configured, `*.epochNNN.eaiw` snapshots.
pub fn pretrain(
    clips: &[PreparedClip],
    cfg: &ModelConfig,
    train: &TrainConfig,
    out: Option<&Path>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    train.validate()?;
    if clips.is_empty() {
        return Err(Error::Config("pretraining needs at least one clip".into()));
    }
    let n_tokens = cfg.token_grid()?.n_tokens();
    let mut params = ParamStore::<f32>::init(&pretrain_schema(cfg)?, train.seed)?;
    let outcome = run_loop(
        clips,
        train,
        &mut params,
        out,
        None,
        |params, batch, iter_seed| {
            let items = batch
                .iter()
                .enumerate()
                .map(|(b, clip)| {
                    let s = mix_seed(iter_seed, b as u64);
                    Ok(PretrainItem {
                        video: sample_video(clip, cfg, Some(s), train.augment_strength)?,
                        plan: make_mask_plan(n_tokens, cfg.mask_ratio, mix_seed(s, 0x3A5C))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            pretrain_grads(params, &items, cfg)
        },
    )?;
    Ok(PretrainOutcome {
        params,
        log: outcome.log,
        optimizer_steps: outcome.steps,
    })
}

/// Encoder source for fine-tuning.
#[derive(Debug, Clone, Copy)]
pub enum FinetuneInit<'a> {
    /// Encoder tensors from a pretraining run (decoder already dropped).
    Pretrained(&'a ParamStore),
    Random,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Weights after the last iteration.
    pub params: ParamStore,
    /// Weights at the epoch with the lowest validation MAE (the last weights
    /// when there is no validation set).
    pub best_params: ParamStore,
    pub log: Vec<LossRecord>,
    /// Validation MAE after each epoch.
    pub val_mae: Vec<f64>,
    pub best_epoch: usize,
    pub optimizer_steps: u64,
}

fn require_labels(clips: &[PreparedClip]) -> Result<()> {
    let missing: Vec<&str> = clips
        .iter()
        .filter(|c| c.ef.is_none())
        .map(|c| c.name.as_str())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "missing EF labels for: {}",
            missing.join(", ")
        )))
    }
}

/// Initial fine-tuning weights: the given or a random encoder plus a fresh
/// head whose bias starts at the mean training EF.
pub fn finetune_init(
    cfg: &ModelConfig,
    init: FinetuneInit<'_>,
    train_efs: &[f64],
    seed: u64,
) -> Result<ParamStore> {
    let enc_schema = encoder_schema(cfg)?;
    let mut params = match init {
        FinetuneInit::Pretrained(store) => {
            let mut p = ParamStore::new();
            for spec in &enc_schema {
                let t = store.require(&spec.name)?;
                if t.shape() != spec.shape {
                    return Err(Error::dim("finetune_init", t.shape(), &spec.shape));
                }
                p.insert(spec.name.clone(), t.clone());
            }
            p
        }
        FinetuneInit::Random => ParamStore::init(&enc_schema, seed)?,
    };
    let mut head = ParamStore::init(&head_schema(cfg), mix_seed(seed, 0x4EAD))?;
    let mean = if train_efs.is_empty() {
        0.0
    } else {
        train_efs.iter().sum::<f64>() / train_efs.len() as f64
    };
    head.insert("head.bias", Tensor::new([1], vec![mean as f32])?);
    params.merge(&head);
    Ok(params)
}

/// EF regression on labeled clips, validated after every epoch.
///
/// With `out`, also writes `*.best.eaiw` (best validation epoch) and the
/// loss log next to the final checkpoint.
pub fn finetune(
    train_clips: &[PreparedClip],
    val_clips: &[PreparedClip],
    init: FinetuneInit<'_>,
    cfg: &ModelConfig,
    train: &TrainConfig,
    out: Option<&Path>,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    train.validate()?;
    if train_clips.is_empty() {
        return Err(Error::Config(
            "fine-tuning needs at least one training clip".into(),
        ));
    }
    require_labels(train_clips)?;
    require_labels(val_clips)?;
    let efs: Vec<f64> = train_clips.iter().map(|c| c.ef.expect("checked")).collect();
    let mut params = finetune_init(cfg, init, &efs, train.seed)?;
    let mut val_mae = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut on_epoch = |params: &ParamStore, epoch: usize| -> Result<()> {
        if val_clips.is_empty() {
            return Ok(());
        }
        let preds = predict_clips(params, cfg, val_clips)?;
        let mae = preds
            .iter()
            .zip(val_clips)
            .map(|(p, c)| (p - c.ef.expect("checked")).abs())
            .sum::<f64>()
            / preds.len() as f64;
        log::info!("epoch {epoch}: validation MAE {mae:.3}");
        val_mae.push(mae);
        if best.as_ref().is_none_or(|(b, _, _)| mae < *b) {
            best = Some((mae, epoch, params.clone()));
        }
        Ok(())
    };
    let outcome = run_loop(
        train_clips,
        train,
        &mut params,
        out,
        Some(&mut on_epoch),
        |params, batch, iter_seed| {
            let items = batch
                .iter()
                .enumerate()
                .map(|(b, clip)| {
                    let s = mix_seed(iter_seed, b as u64);
                    Ok((
                        sample_video(clip, cfg, Some(s), train.augment_strength)?,
                        clip.ef.expect("checked"),
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            finetune_grads(params, &items, cfg)
        },
    )?;
    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (outcome.epochs, params.clone()),
    };
    if let Some(out) = out {
        save_checkpoint(&best_params, sibling_path(out, "best.eaiw"))?;
    }
    Ok(FinetuneOutcome {
        params,
        best_params,
        log: outcome.log,
        val_mae,
        best_epoch,
        optimizer_steps: outcome.steps,
    })
}

struct LoopOutcome {
    log: Vec<LossRecord>,
    steps: u64,
    epochs: usize,
}

type EpochHook<'a> = &'a mut dyn FnMut(&ParamStore, usize) -> Result<()>;

/// Shared epoch/iteration driver: shuffles per epoch, computes micro-batch
/// gradients through `grads`, accumulates and steps, logs and checkpoints.
fn run_loop(
    clips: &[PreparedClip],
    train: &TrainConfig,
    params: &mut ParamStore,
    out: Option<&Path>,
    mut on_epoch: Option<EpochHook<'_>>,
    mut grads: impl FnMut(&ParamStore, &[&PreparedClip], u64) -> Result<(f64, ParamStore)>,
) -> Result<LoopOutcome> {
    let (per_epoch, total, epochs) = train.plan(clips.len());
    let schedule = train.schedule(total)?;
    let mut opt = AdamW::new(train.optimizer);
    let mut accum = GradAccumulator::new(train.grad_accum)?;
    let mut log = Vec::with_capacity(total);
    let mut iteration = 0;
    log::info!(
        "{:?}: {} clips, {per_epoch} iterations/epoch, {total} iterations, {epochs} epochs",
        train.mode,
        clips.len()
    );
    for epoch in 1..=epochs {
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            train.seed,
            epoch as u64,
        )));
        for chunk in order.chunks(train.batch_size) {
            if iteration == total {
                break;
            }
            iteration += 1;
            let lr = cosine_lr(iteration - 1, &schedule);
            let batch: Vec<&PreparedClip> = chunk.iter().map(|&i| &clips[i]).collect();
            let iter_seed = mix_seed(train.seed ^ 0x17E2, iteration as u64);
            let (loss, g) = grads(params, &batch, iter_seed)?;
            log.push(LossRecord {
                iteration,
                epoch,
                lr,
                loss,
            });
            if let Some(avg) = accum.push(g)? {
                opt.step(params, &avg, lr)?;
            }
            if iteration % 20 == 0 || iteration == total {
                log::debug!("iteration {iteration}/{total} lr {lr:.6} loss {loss:.5}");
            }
        }
        if let Some(hook) = on_epoch.as_mut() {
            hook(params, epoch)?;
        }
        if let Some(out) = out {
            if train.checkpoint_every > 0 && epoch % train.checkpoint_every == 0 && epoch < epochs {
                save_checkpoint(params, sibling_path(out, &format!("epoch{epoch:03}.eaiw")))?;
            }
        }
    }
    if let Some(out) = out {
        save_checkpoint(params, out)?;
        write_loss_csv(&log, sibling_path(out, "loss.csv"))?;
    }
    Ok(LoopOutcome {
        log,
        steps: opt.steps(),
        epochs,
    })
}

/// EF predictions with deterministic sampling and no augmentation.
pub fn predict_clips(
    params: &ParamStore,
    cfg: &ModelConfig,
    clips: &[PreparedClip],
) -> Result<Vec<f64>> {
    clips
        .iter()
        .map(|c| {
            let video = sample_video(c, cfg, None, 0.0)?;
            let g = Graph::new();
            let p = params.bind_frozen(&g);
            let v = predict_ef(g.constant(video), cfg, &p)?.item()? as f64;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Numeric(format!(
                    "non-finite prediction for `{}`",
                    c.name
                )))
            }
        })
        .collect()
}

/// Predicts every clip and scores against its label.
pub fn evaluate(
    params: &ParamStore,
    cfg: &ModelConfig,
    clips: &[PreparedClip],
) -> Result<(Vec<EvalPair>, EvalReport)> {
    require_labels(clips)?;
    let preds = predict_clips(params, cfg, clips)?;
    let pairs: Vec<EvalPair> = clips
        .iter()
        .zip(preds)
        .map(|(c, p)| EvalPair::new(&c.name, c.ef.expect("checked"), p))
        .collect();
    let report = compute_report(&pairs)?;
    Ok((pairs, report))
}
