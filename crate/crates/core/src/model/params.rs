//! Named parameter schema, storage, and graph binding.
//!
//! Tensor names form a stable schema shared by checkpoints:
//!
//! ```text
//! enc.patch_embed.{weight,bias}   enc.pos_embed   enc.time_embed   enc.cls_token
//! enc.block{i}.norm1.{weight,bias}  enc.block{i}.attn.qkv.{weight,bias}
//! enc.block{i}.attn.proj.{weight,bias}  enc.block{i}.norm2.{weight,bias}
//! enc.block{i}.mlp.fc1.{weight,bias}  enc.block{i}.mlp.fc2.{weight,bias}
//! head.{weight,bias}
//! dec.embed.{weight,bias}  dec.mask_token  dec.pos_embed  dec.time_embed
//! dec.block{i}.…  dec.norm.{weight,bias}  dec.pred.{weight,bias}
//! ```

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with the given deviation, resampled outside ±2σ.
    TruncNormal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: impl Into<String>, shape: impl Into<Vec<usize>>, init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.into(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn linear(out: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.push(ParamSpec::new(
        format!("{prefix}.weight"),
        [fan_in, fan_out],
        Init::TruncNormal(INIT_STD),
    ));
    out.push(ParamSpec::new(
        format!("{prefix}.bias"),
        [fan_out],
        Init::Zeros,
    ));
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize) {
    out.push(ParamSpec::new(
        format!("{prefix}.weight"),
        [dim],
        Init::Ones,
    ));
    out.push(ParamSpec::new(format!("{prefix}.bias"), [dim], Init::Zeros));
}

fn block(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize, mlp_ratio: usize) {
    norm(out, &format!("{prefix}.norm1"), dim);
    linear(out, &format!("{prefix}.attn.qkv"), dim, 3 * dim);
    linear(out, &format!("{prefix}.attn.proj"), dim, dim);
    norm(out, &format!("{prefix}.norm2"), dim);
    linear(out, &format!("{prefix}.mlp.fc1"), dim, mlp_ratio * dim);
    linear(out, &format!("{prefix}.mlp.fc2"), mlp_ratio * dim, dim);
}

pub fn encoder_schema(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    let grid = cfg.token_grid()?;
    let d = cfg.encoder.embed_dim;
    let mut out = Vec::new();
    linear(&mut out, "enc.patch_embed", cfg.patch_dim(), d);
    out.push(ParamSpec::new(
        "enc.pos_embed",
        [grid.h * grid.w, d],
        Init::TruncNormal(INIT_STD),
    ));
    out.push(ParamSpec::new(
        "enc.time_embed",
        [grid.t, d],
        Init::TruncNormal(INIT_STD),
    ));
    if cfg.use_class_token {
        out.push(ParamSpec::new(
            "enc.cls_token",
            [1, d],
            Init::TruncNormal(INIT_STD),
        ));
    }
    for i in 0..cfg.encoder.depth {
        block(&mut out, &format!("enc.block{i}"), d, cfg.encoder.mlp_ratio);
    }
    Ok(out)
}

pub fn head_schema(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    linear(&mut out, "head", cfg.encoder.embed_dim, 1);
    out
}

pub fn decoder_schema(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    let grid = cfg.token_grid()?;
    let dd = cfg.decoder.embed_dim;
    let mut out = Vec::new();
    linear(&mut out, "dec.embed", cfg.encoder.embed_dim, dd);
    out.push(ParamSpec::new(
        "dec.mask_token",
        [1, dd],
        Init::TruncNormal(INIT_STD),
    ));
    out.push(ParamSpec::new(
        "dec.pos_embed",
        [grid.h * grid.w, dd],
        Init::TruncNormal(INIT_STD),
    ));
    out.push(ParamSpec::new(
        "dec.time_embed",
        [grid.t, dd],
        Init::TruncNormal(INIT_STD),
    ));
    for i in 0..cfg.decoder.depth {
        block(
            &mut out,
            &format!("dec.block{i}"),
            dd,
            cfg.decoder.mlp_ratio,
        );
    }
    norm(&mut out, "dec.norm", dd);
    linear(&mut out, "dec.pred", dd, cfg.patch_dim());
    Ok(out)
}

/// Encoder + decoder, as trained during masked pretraining.
pub fn pretrain_schema(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    let mut s = encoder_schema(cfg)?;
    s.extend(decoder_schema(cfg)?);
    Ok(s)
}

/// Encoder + regression head, as trained during fine-tuning.
pub fn finetune_schema(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    let mut s = encoder_schema(cfg)?;
    s.extend(head_schema(cfg));
    Ok(s)
}

/// Parameters in one pre-norm transformer block of width `d`:
/// two norms (4d), qkv (3d² + 3d), proj (d² + d), fc1 (r·d² + r·d), fc2 (r·d² + d).
pub fn block_param_count(d: usize, mlp_ratio: usize) -> usize {
    (4 + 2 * mlp_ratio) * d * d + (9 + mlp_ratio) * d
}

/// Closed-form encoder size: tubelet projection `P·D + D`, factorized
/// embeddings `(h·w + t)·D`, optional class token `D`, then `depth` blocks.
pub fn encoder_param_count(cfg: &ModelConfig) -> Result<usize> {
    let g = cfg.token_grid()?;
    let d = cfg.encoder.embed_dim;
    let cls = if cfg.use_class_token { d } else { 0 };
    Ok(cfg.patch_dim() * d
        + d
        + (g.h * g.w + g.t) * d
        + cls
        + cfg.encoder.depth * block_param_count(d, cfg.encoder.mlp_ratio))
}

pub fn decoder_param_count(cfg: &ModelConfig) -> Result<usize> {
    let g = cfg.token_grid()?;
    let (d, dd, p) = (
        cfg.encoder.embed_dim,
        cfg.decoder.embed_dim,
        cfg.patch_dim(),
    );
    Ok(d * dd
        + dd
        + dd
        + (g.h * g.w + g.t) * dd
        + cfg.decoder.depth * block_param_count(dd, cfg.decoder.mlp_ratio)
        + 2 * dd
        + dd * p
        + p)
}

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<E: Element = f32> {
    entries: Vec<(String, Tensor<E>)>,
    index: HashMap<String, usize>,
}

impl<E: Element> Default for ParamStore<E> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeded initialization of every tensor in `schema`.
    pub fn init(schema: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for spec in schema {
            let n = spec.numel();
            let data: Vec<E> = match spec.init {
                Init::Zeros => vec![E::zero(); n],
                Init::Ones => vec![E::one(); n],
                Init::TruncNormal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n)
                        .map(|_| loop {
                            let v: f64 = dist.sample(&mut rng);
                            if v.abs() <= 2.0 * std {
                                break E::from_f64(v);
                            }
                        })
                        .collect()
                }
            };
            store.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?);
        }
        Ok(store)
    }

    /// Inserts or replaces a tensor, keeping first-insertion order.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<E>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = t,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, t));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<E>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<E>> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<E>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Tensors whose names start with `prefix`, in order.
    pub fn filter_prefix(&self, prefix: &str) -> Self {
        let mut out = Self::new();
        for (n, t) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.insert(n, t.clone());
        }
        out
    }

    /// Copies every tensor of `other` into `self`, replacing same-named ones.
    pub fn merge(&mut self, other: &Self) {
        for (n, t) in other.iter() {
            self.insert(n, t.clone());
        }
    }

    /// Binds every tensor as a trainable leaf of `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph<E>) -> ParamVars<'g, E> {
        self.bind_with(graph, true)
    }

    /// Binds every tensor as a constant of `graph` (inference).
    pub fn bind_frozen<'g>(&self, graph: &'g Graph<E>) -> ParamVars<'g, E> {
        self.bind_with(graph, false)
    }

    fn bind_with<'g>(&self, graph: &'g Graph<E>, trainable: bool) -> ParamVars<'g, E> {
        let vars = self
            .entries
            .iter()
            .map(|(n, t)| (n.clone(), graph.leaf(t.clone(), trainable)))
            .collect();
        ParamVars { vars }
    }

    pub fn schema_entries(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }
}

/// Parameters bound into one graph.
pub struct ParamVars<'g, E: Element = f32> {
    vars: Vec<(String, Var<'g, E>)>,
}

impl<'g, E: Element> ParamVars<'g, E> {
    /// Pairs names with already-bound variables.
    pub fn from_vars(names: impl IntoIterator<Item = String>, vars: &[Var<'g, E>]) -> Self {
        Self {
            vars: names.into_iter().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var<'g, E>> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.iter().any(|(n, _)| n == name)
    }

    /// Gradients after backward; parameters the loss does not reach get
    /// zeros.
    pub fn grads(&self) -> ParamStore<E> {
        let mut out = ParamStore::new();
        for (n, v) in &self.vars {
            let g = v.grad().unwrap_or_else(|| {
                let shape = v.shape();
                Tensor::zeros(shape).expect("bound parameter has a valid shape")
            });
            out.insert(n.clone(), g);
        }
        out
    }
}

/// Compares found `(name, shape)` entries against an expected schema.
/// Entries for which `allow_extra` returns true are ignored when unexpected.
pub fn check_schema(
    found: &[(String, Vec<usize>)],
    expected: &[ParamSpec],
    allow_extra: impl Fn(&str) -> bool,
) -> Result<()> {
    let found_map: HashMap<&str, &Vec<usize>> =
        found.iter().map(|(n, s)| (n.as_str(), s)).collect();
    let expected_names: HashMap<&str, &Vec<usize>> = expected
        .iter()
        .map(|p| (p.name.as_str(), &p.shape))
        .collect();
    let missing: Vec<String> = expected
        .iter()
        .filter(|p| !found_map.contains_key(p.name.as_str()))
        .map(|p| p.name.clone())
        .collect();
    let extra: Vec<String> = found
        .iter()
        .filter(|(n, _)| !expected_names.contains_key(n.as_str()) && !allow_extra(n))
        .map(|(n, _)| n.clone())
        .collect();
    let reshaped: Vec<String> = expected
        .iter()
        .filter(|p| {
            found_map
                .get(p.name.as_str())
                .is_some_and(|s| **s != p.shape)
        })
        .map(|p| format!("{} {:?}→{:?}", p.name, found_map[p.name.as_str()], p.shape))
        .collect();
    if missing.is_empty() && extra.is_empty() && reshaped.is_empty() {
        Ok(())
    } else {
        Err(Error::Schema {
            missing,
            extra,
            reshaped,
        })
    }
}
