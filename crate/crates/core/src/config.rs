//! Flat `key = value` run configuration files.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! rejected, as is `sampling_rate` together with
//! `sampling_mode = equally_spaced`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ArchSize, ModelConfig, TargetNorm};
use crate::train::{TrainConfig, TrainMode};
use crate::video::SamplingMode;

pub const KNOWN_KEYS: &[&str] = &[
    "arch_size",
    "image_size",
    "num_frames",
    "sampling_mode",
    "sampling_rate",
    "target_fps",
    "patch_size",
    "tubelet_depth",
    "recon_frames",
    "mask_ratio",
    "base_lr",
    "epochs",
    "grad_accum",
    "batch_size",
    "seed",
    "use_class_token",
    "target_norm",
    "weight_decay",
    "warmup_frac",
    "max_iterations",
    "augment_strength",
    "pixel_mean",
    "pixel_std",
    "checkpoint_every",
];

const REQUIRED_KEYS: &[&str] = &["arch_size", "image_size", "num_frames", "patch_size"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Overrides the per-mode default when set.
    pub base_lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: usize,
    pub grad_accum: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub warmup_frac: f64,
    pub max_iterations: Option<usize>,
    pub augment_strength: f64,
    pub checkpoint_every: usize,
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean `{raw}` for `{key}`"
        ))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KNOWN_KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key `{k}`", i + 1)));
            }
            if kv.insert(k, v).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{k}`",
                    i + 1
                )));
            }
        }
        for k in REQUIRED_KEYS {
            if !kv.contains_key(k) {
                return Err(Error::Config(format!("missing required key `{k}`")));
            }
        }
        let get = |k: &str| kv.get(k).copied();

        let arch: ArchSize = kv["arch_size"].parse()?;
        let mut model = ModelConfig::new(
            arch,
            parse_value("image_size", kv["image_size"])?,
            parse_value("num_frames", kv["num_frames"])?,
            parse_value("patch_size", kv["patch_size"])?,
        );
        let rate = get("sampling_rate")
            .map(|v| parse_value::<usize>("sampling_rate", v))
            .transpose()?;
        model.sampling_mode = match (get("sampling_mode"), rate) {
            (Some("equally_spaced"), Some(_)) => {
                return Err(Error::Config(
                    "sampling_rate must be absent when sampling_mode = equally_spaced".into(),
                ))
            }
            (Some("equally_spaced"), None) | (None, None) => SamplingMode::EquallySpaced,
            (Some("rate"), Some(r)) | (None, Some(r)) => SamplingMode::Rate(r),
            (Some("rate"), None) => {
                return Err(Error::Config(
                    "sampling_mode = rate needs sampling_rate".into(),
                ))
            }
            (Some(other), _) => {
                return Err(Error::Config(format!(
                    "unknown sampling_mode `{other}` (rate|equally_spaced)"
                )))
            }
        };
        if let Some(v) = get("target_fps") {
            model.target_fps = parse_value("target_fps", v)?;
        }
        if let Some(v) = get("tubelet_depth") {
            model.tubelet_depth = parse_value("tubelet_depth", v)?;
        }
        model.recon_frames = match get("recon_frames") {
            Some(v) => parse_value("recon_frames", v)?,
            None => model.num_frames,
        };
        if let Some(v) = get("mask_ratio") {
            model.mask_ratio = parse_value("mask_ratio", v)?;
        }
        if let Some(v) = get("use_class_token") {
            model.use_class_token = parse_bool("use_class_token", v)?;
        }
        if let Some(v) = get("target_norm") {
            model.target_norm = v.parse::<TargetNorm>()?;
        }
        if let Some(v) = get("pixel_mean") {
            model.pixel_mean = parse_value("pixel_mean", v)?;
        }
        if let Some(v) = get("pixel_std") {
            model.pixel_std = parse_value("pixel_std", v)?;
        }
        model.validate()?;

        let opt =
            |k: &str| -> Result<Option<f64>> { get(k).map(|v| parse_value(k, v)).transpose() };
        let cfg = Self {
            model,
            base_lr: opt("base_lr")?,
            weight_decay: opt("weight_decay")?,
            epochs: get("epochs")
                .map(|v| parse_value("epochs", v))
                .transpose()?
                .unwrap_or(50),
            grad_accum: get("grad_accum")
                .map(|v| parse_value("grad_accum", v))
                .transpose()?
                .unwrap_or(2),
            batch_size: get("batch_size")
                .map(|v| parse_value("batch_size", v))
                .transpose()?
                .unwrap_or(4),
            seed: get("seed")
                .map(|v| parse_value("seed", v))
                .transpose()?
                .unwrap_or(0),
            warmup_frac: opt("warmup_frac")?.unwrap_or(0.0),
            max_iterations: get("max_iterations")
                .map(|v| parse_value("max_iterations", v))
                .transpose()?,
            augment_strength: opt("augment_strength")?.unwrap_or(0.0),
            checkpoint_every: get("checkpoint_every")
                .map(|v| parse_value("checkpoint_every", v))
                .transpose()?
                .unwrap_or(0),
        };
        cfg.train_config(TrainMode::Pretrain).validate()?;
        cfg.train_config(TrainMode::Finetune).validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Training settings for `mode`: per-mode learning rate and betas unless
    /// overridden.
    pub fn train_config(&self, mode: TrainMode) -> TrainConfig {
        let mut t = TrainConfig::new(mode);
        if let Some(lr) = self.base_lr {
            t.base_lr = lr;
        }
        if let Some(wd) = self.weight_decay {
            t.optimizer.weight_decay = wd;
        }
        t.epochs = self.epochs;
        t.grad_accum = self.grad_accum;
        t.batch_size = self.batch_size;
        t.seed = self.seed;
        t.warmup_frac = self.warmup_frac;
        t.max_iterations = self.max_iterations;
        t.augment_strength = self.augment_strength;
        t.checkpoint_every = self.checkpoint_every;
        t
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("arch_size", m.arch.to_string());
        put("image_size", m.image_size.to_string());
        put("num_frames", m.num_frames.to_string());
        match m.sampling_mode {
            SamplingMode::Rate(r) => {
                put("sampling_mode", "rate".into());
                put("sampling_rate", r.to_string());
            }
            SamplingMode::EquallySpaced => put("sampling_mode", "equally_spaced".into()),
        }
        put("target_fps", m.target_fps.to_string());
        put("patch_size", m.patch_size.to_string());
        put("tubelet_depth", m.tubelet_depth.to_string());
        put("recon_frames", m.recon_frames.to_string());
        put("mask_ratio", m.mask_ratio.to_string());
        put("use_class_token", m.use_class_token.to_string());
        put("target_norm", m.target_norm.to_string());
        put("pixel_mean", m.pixel_mean.to_string());
        put("pixel_std", m.pixel_std.to_string());
        if let Some(lr) = self.base_lr {
            put("base_lr", lr.to_string());
        }
        if let Some(wd) = self.weight_decay {
            put("weight_decay", wd.to_string());
        }
        put("epochs", self.epochs.to_string());
        put("grad_accum", self.grad_accum.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("warmup_frac", self.warmup_frac.to_string());
        if let Some(n) = self.max_iterations {
            put("max_iterations", n.to_string());
        }
        put("augment_strength", self.augment_strength.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROW8: &str = "\
# equally spaced frames
arch_size = large
image_size = 112
num_frames = 32
sampling_mode = equally_spaced
target_fps = 50
patch_size = 16
recon_frames = 8
";

    #[test]
    fn parses_and_round_trips() {
        let c = RunConfig::parse(ROW8).unwrap();
        assert_eq!(c.model.sampling_mode, SamplingMode::EquallySpaced);
        assert_eq!(c.model.token_grid().unwrap().n_tokens(), 784);
        assert_eq!((c.epochs, c.grad_accum), (50, 2));
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn lr_defaults_follow_mode() {
        let c = RunConfig::parse(ROW8).unwrap();
        assert_eq!(c.train_config(TrainMode::Pretrain).base_lr, 0.0016);
        assert_eq!(c.train_config(TrainMode::Finetune).base_lr, 0.0024);
        assert_eq!(c.train_config(TrainMode::Pretrain).optimizer.beta2, 0.95);
        let c = RunConfig::parse(&format!("{ROW8}base_lr = 0.01\n")).unwrap();
        assert_eq!(c.train_config(TrainMode::VanillaFinetune).base_lr, 0.01);
    }

    #[test]
    fn rejections() {
        let unknown = RunConfig::parse(&format!("{ROW8}learning_rate = 1\n")).unwrap_err();
        assert!(unknown.to_string().contains("learning_rate"));
        assert!(RunConfig::parse(&format!("{ROW8}sampling_rate = 3\n")).is_err());
        assert!(RunConfig::parse(&format!("{ROW8}patch_size = 8\n")).is_err());
        assert!(RunConfig::parse(&ROW8.replace("patch_size = 16", "patch_size = 15")).is_err());
        assert!(RunConfig::parse(&ROW8.replace("arch_size = large\n", "")).is_err());
        assert!(RunConfig::parse("arch_size large").is_err());
        let rate = ROW8.replace("sampling_mode = equally_spaced", "sampling_mode = rate");
        assert!(RunConfig::parse(&rate).is_err());
        let c = RunConfig::parse(&format!("{rate}sampling_rate = 3\n")).unwrap();
        assert_eq!(c.model.sampling_mode, SamplingMode::Rate(3));
    }
}
