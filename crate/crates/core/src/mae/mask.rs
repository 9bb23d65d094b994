use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::TokenSequence;
use crate::tensor::Element;

/// A random partition of grid tokens into visible and masked sets.
///
/// `keep_ids` and `mask_ids` are in shuffled order. Concatenating them gives
/// the shuffled sequence; `restore_perm[i]` is the position of grid token `i`
/// in that sequence, so gathering with it restores grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub n_tokens: usize,
    pub keep_ids: Vec<usize>,
    pub mask_ids: Vec<usize>,
    pub restore_perm: Vec<usize>,
    pub ratio: f64,
    pub seed: u64,
}

/// Visible-token count: `max(1, round(n·(1 − ratio)))`.
pub fn visible_count(n_tokens: usize, ratio: f64) -> usize {
    ((n_tokens as f64 * (1.0 - ratio)).round() as usize).clamp(1, n_tokens)
}

pub fn make_mask_plan(n_tokens: usize, ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::param(
            "mask_ratio",
            format!("must lie in (0, 1), got {ratio}"),
        ));
    }
    if n_tokens == 0 {
        return Err(Error::param("n_tokens", "must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n_tokens).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(MaskPlan::from_order(
        order,
        visible_count(n_tokens, ratio),
        ratio,
        seed,
    ))
}

impl MaskPlan {
    /// Builds a plan from an explicit shuffled order whose first `keep`
    /// entries are visible.
    pub fn from_order(order: Vec<usize>, keep: usize, ratio: f64, seed: u64) -> Self {
        let n_tokens = order.len();
        let mut restore_perm = vec![0; n_tokens];
        for (j, &i) in order.iter().enumerate() {
            restore_perm[i] = j;
        }
        let mask_ids = order[keep..].to_vec();
        let mut keep_ids = order;
        keep_ids.truncate(keep);
        Self {
            n_tokens,
            keep_ids,
            mask_ids,
            restore_perm,
            ratio,
            seed,
        }
    }

    /// `keep_ids` followed by `mask_ids`.
    pub fn shuffled_order(&self) -> Vec<usize> {
        self.keep_ids
            .iter()
            .chain(&self.mask_ids)
            .copied()
            .collect()
    }

    /// Per-token flag, true where the token is masked.
    pub fn masked_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n_tokens];
        for &i in &self.mask_ids {
            flags[i] = true;
        }
        flags
    }
}

/// Keeps the visible tokens (in shuffled order). A leading class token is
/// never masked and stays in front.
pub fn apply_mask<'g, E: Element>(
    seq: &TokenSequence<'g, E>,
    plan: &MaskPlan,
) -> Result<TokenSequence<'g, E>> {
    let offset = usize::from(seq.has_class_token);
    let grid_tokens = seq.len() - offset;
    if grid_tokens != plan.n_tokens {
        return Err(Error::Contract(format!(
            "mask plan covers {} tokens, sequence has {grid_tokens}",
            plan.n_tokens
        )));
    }
    let mut rows = Vec::with_capacity(plan.keep_ids.len() + offset);
    if seq.has_class_token {
        rows.push(0);
    }
    rows.extend(plan.keep_ids.iter().map(|&i| i + offset));
    Ok(TokenSequence {
        tokens: seq.tokens.gather_rows(&rows)?,
        grid: seq.grid,
        has_class_token: seq.has_class_token,
    })
}
