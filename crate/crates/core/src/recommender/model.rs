//! Forward and backward passes of the encoder, fusion, scoring and losses.

use std::collections::BTreeMap;

use crate::corpus::{InteractionSequence, ItemId, UserId};
use crate::error::{Error, Result};
use crate::gaa::{sd_loss, sd_loss_grad};
use crate::scalar::{dot, from_usize, lit, Scalar};
use crate::semantics::EmbeddingStore;

use super::{BatchGradient, EncoderParams, FusionMode, TrainConfig};

/// Intermediate values of one [`encode`] call, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncodeCache<T> {
    pub items: Vec<ItemId>,
    /// `pool_decay^(T-1-t)` for position `t`.
    pub weights: Vec<T>,
    pub weight_sum: T,
    pub pooled: Vec<T>,
    pub h: Vec<T>,
}

fn check_item<T: Scalar>(item: ItemId, params: &EncoderParams<T>) -> Result<()> {
    if (item as usize) < params.n_items() {
        Ok(())
    } else {
        Err(Error::ItemOutOfRange { item, n_items: params.n_items() })
    }
}

pub fn encode_cached<T: Scalar>(seq: &[ItemId], params: &EncoderParams<T>) -> Result<EncodeCache<T>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let d = params.dim();
    let mut weights = vec![T::zero(); seq.len()];
    let mut w = T::one();
    for slot in weights.iter_mut().rev() {
        *slot = w;
        w = w * params.pool_decay;
    }
    let weight_sum: T = weights.iter().copied().sum();
    let mut pooled = vec![T::zero(); d];
    for (&item, &wt) in seq.iter().zip(&weights) {
        check_item(item, params)?;
        for (p, &e) in pooled.iter_mut().zip(params.item_table.row(item as usize)) {
            *p = *p + wt * e;
        }
    }
    pooled.iter_mut().for_each(|p| *p = *p / weight_sum);
    let h = params
        .proj_w
        .mul_vec(&pooled)
        .into_iter()
        .zip(&params.proj_b)
        .map(|(z, &b)| (z + b).tanh())
        .collect();
    Ok(EncodeCache { items: seq.to_vec(), weights, weight_sum, pooled, h })
}

/// `h = tanh(W p + b)` with `p` the recency-weighted mean of the item rows.
pub fn encode<T: Scalar>(seq: &[ItemId], params: &EncoderParams<T>) -> Result<Vec<T>> {
    encode_cached(seq, params).map(|c| c.h)
}

/// Accumulates the gradient of a loss with `∂L/∂h = grad_h` into `grad`.
pub fn encode_backward<T: Scalar>(
    cache: &EncodeCache<T>,
    grad_h: &[T],
    params: &EncoderParams<T>,
    grad: &mut BatchGradient<T>,
) {
    let grad_z: Vec<T> = grad_h.iter().zip(&cache.h).map(|(&g, &h)| g * (T::one() - h * h)).collect();
    grad.proj_w.add_outer(&grad_z, &cache.pooled);
    grad.proj_b.iter_mut().zip(&grad_z).for_each(|(b, &g)| *b = *b + g);
    let grad_p = params.proj_w.mul_vec_t(&grad_z);

    let n = cache.items.len();
    let lambda = params.pool_decay;
    let mut grad_lambda = T::zero();
    for (t, (&item, &wt)) in cache.items.iter().zip(&cache.weights).enumerate() {
        let row = params.item_table.row(item as usize);
        let coef = wt / cache.weight_sum;
        for (g, &gp) in grad.item_table.row_mut(item as usize).iter_mut().zip(&grad_p) {
            *g = *g + coef * gp;
        }
        // d w_t / d lambda = e lambda^(e-1), e = T-1-t
        let e = n - 1 - t;
        if e > 0 {
            let dw = from_usize::<T>(e) * lambda.powi(e as i32 - 1);
            let centered: T = row.iter().zip(&cache.pooled).zip(&grad_p).map(|((&x, &p), &g)| g * (x - p)).sum();
            grad_lambda = grad_lambda + dw / cache.weight_sum * centered;
        }
    }
    grad.pool_decay = grad.pool_decay + grad_lambda;
}

fn semantic_arg<'s, T: Scalar>(
    s: Option<&'s [T]>,
    mode: FusionMode,
    params: &EncoderParams<T>,
) -> Result<Option<&'s [T]>> {
    if mode == FusionMode::None {
        return Ok(None);
    }
    let s = s.ok_or_else(|| Error::Contract(format!("fusion mode {mode} needs a semantic embedding")))?;
    if s.len() != params.sem_dim() {
        return Err(Error::Dimension { expected: params.sem_dim(), got: s.len() });
    }
    Ok(Some(s))
}

/// none: `h`; add: `h + Pᵀ s`; concat_project: `H h + Pᵀ s`.
pub fn fuse<T: Scalar>(h: &[T], s: Option<&[T]>, mode: FusionMode, params: &EncoderParams<T>) -> Result<Vec<T>> {
    let Some(s) = semantic_arg(s, mode, params)? else {
        return Ok(h.to_vec());
    };
    let proj = params.fuse_p.mul_vec_t(s);
    let base = match mode {
        FusionMode::ConcatProject => params.fuse_h.mul_vec(h),
        _ => h.to_vec(),
    };
    Ok(base.into_iter().zip(proj).map(|(a, b)| a + b).collect())
}

/// Accumulates fusion parameter gradients and returns `∂L/∂h`.
pub fn fuse_backward<T: Scalar>(
    h: &[T],
    s: Option<&[T]>,
    mode: FusionMode,
    params: &EncoderParams<T>,
    grad_out: &[T],
    grad: &mut BatchGradient<T>,
) -> Result<Vec<T>> {
    let Some(s) = semantic_arg(s, mode, params)? else {
        return Ok(grad_out.to_vec());
    };
    grad.fuse_p.add_outer(s, grad_out);
    Ok(match mode {
        FusionMode::ConcatProject => {
            grad.fuse_h.add_outer(grad_out, h);
            params.fuse_h.mul_vec_t(grad_out)
        }
        _ => grad_out.to_vec(),
    })
}

/// `e_j · h`.
pub fn score<T: Scalar>(h: &[T], item: ItemId, params: &EncoderParams<T>) -> Result<T> {
    check_item(item, params)?;
    if h.len() != params.dim() {
        return Err(Error::Dimension { expected: params.dim(), got: h.len() });
    }
    Ok(dot(params.item_table.row(item as usize), h))
}

/// Scores of every row of the item table.
pub fn score_all<T: Scalar>(h: &[T], params: &EncoderParams<T>) -> Vec<T> {
    params.item_table.mul_vec(h)
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `-ln σ(pos - neg)`.
pub fn rank_loss<T: Scalar>(pos: T, neg: T) -> T {
    softplus(neg - pos)
}

/// `(∂/∂pos, ∂/∂neg)` of [`rank_loss`].
pub fn rank_loss_grad<T: Scalar>(pos: T, neg: T) -> (T, T) {
    let s = sigmoid(neg - pos);
    (-s, s)
}

/// Predict `pos` from the first `prefix_len` items of `user`'s sequence,
/// contrasted with `neg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainPair {
    pub user: UserId,
    pub prefix_len: usize,
    pub pos: ItemId,
    pub neg: ItemId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Batch {
    pub users: Vec<UserId>,
    pub pairs: Vec<TrainPair>,
}

/// Read-only inputs of the objective besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a, T> {
    /// Training sequences.
    pub sequences: &'a BTreeMap<UserId, InteractionSequence>,
    pub semantic: Option<&'a EmbeddingStore<T>>,
    /// Detached teacher mediators per user.
    pub mediators: Option<&'a BTreeMap<UserId, Vec<T>>>,
}

impl<'a, T: Scalar> LossContext<'a, T> {
    fn sequence(&self, user: UserId) -> Result<&'a [ItemId]> {
        self.sequences.get(&user).map(|s| s.items.as_slice()).ok_or(Error::UserNotFound(user))
    }

    fn semantic_vector(&self, user: UserId, mode: FusionMode) -> Result<Option<&'a [T]>> {
        if mode == FusionMode::None {
            return Ok(None);
        }
        let store = self
            .semantic
            .ok_or_else(|| Error::Contract(format!("fusion mode {mode} needs semantic embeddings")))?;
        store.vector(user).map(Some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub rank_sum: T,
    pub n_pairs: usize,
    pub sd_sum: T,
    pub n_sd: usize,
    /// `rank_sum + alpha · sd_sum / n_sd`.
    pub total: T,
}

/// Joint objective over a batch: ranking loss summed over the pairs plus
/// `alpha` times the batch-mean self-distillation loss, with its gradient.
pub fn total_loss<T: Scalar>(
    batch: &Batch,
    params: &EncoderParams<T>,
    config: &TrainConfig,
    ctx: &LossContext<'_, T>,
) -> Result<(LossParts<T>, BatchGradient<T>)> {
    let mut grad = params.zero_grad();
    let mode = config.fusion_mode;
    let mut rank_sum = T::zero();
    for pair in &batch.pairs {
        let seq = ctx.sequence(pair.user)?;
        let prefix = seq
            .get(..pair.prefix_len)
            .ok_or_else(|| Error::Contract(format!("prefix {} beyond user {} sequence", pair.prefix_len, pair.user)))?;
        let s = ctx.semantic_vector(pair.user, mode)?;
        let cache = encode_cached(prefix, params)?;
        let fused = fuse(&cache.h, s, mode, params)?;
        let pos = score(&fused, pair.pos, params)?;
        let neg = score(&fused, pair.neg, params)?;
        rank_sum = rank_sum + rank_loss(pos, neg);
        let (gp, gn) = rank_loss_grad(pos, neg);
        let e_pos = params.item_table.row(pair.pos as usize);
        let e_neg = params.item_table.row(pair.neg as usize);
        let grad_fused: Vec<T> = e_pos.iter().zip(e_neg).map(|(&a, &b)| gp * a + gn * b).collect();
        for (g, &x) in grad.item_table.row_mut(pair.pos as usize).iter_mut().zip(&fused) {
            *g = *g + gp * x;
        }
        for (g, &x) in grad.item_table.row_mut(pair.neg as usize).iter_mut().zip(&fused) {
            *g = *g + gn * x;
        }
        let grad_h = fuse_backward(&cache.h, s, mode, params, &grad_fused, &mut grad)?;
        encode_backward(&cache, &grad_h, params, &mut grad);
    }

    let mut sd_sum = T::zero();
    let mut n_sd = 0;
    if config.gaa_enabled && !batch.users.is_empty() {
        let mediators = ctx
            .mediators
            .ok_or_else(|| Error::Contract("group-aware alignment enabled but no mediators supplied".into()))?;
        let weight = lit::<T>(config.alpha) / from_usize(batch.users.len());
        for &user in &batch.users {
            let m = mediators.get(&user).ok_or(Error::MediatorUndefined(user))?;
            let cache = encode_cached(ctx.sequence(user)?, params)?;
            sd_sum = sd_sum + sd_loss(&cache.h, m)?;
            n_sd += 1;
            if config.alpha > 0.0 {
                let g: Vec<T> = sd_loss_grad(&cache.h, m).into_iter().map(|x| weight * x).collect();
                encode_backward(&cache, &g, params, &mut grad);
            }
        }
    }
    let total = if n_sd > 0 && config.alpha > 0.0 {
        rank_sum + lit::<T>(config.alpha) * sd_sum / from_usize(n_sd)
    } else {
        rank_sum
    };
    Ok((LossParts { rank_sum, n_pairs: batch.pairs.len(), sd_sum, n_sd, total }, grad))
}
