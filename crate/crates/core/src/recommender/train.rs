//! Mini-batch SGD over per-step ranking pairs with optional self-distillation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{InteractionSequence, ItemId, SplitCorpus, UserId};
use crate::error::{Error, Result};
use crate::gaa::{mean_of, NeighborSet};
use crate::scalar::{lit, Scalar};
use crate::semantics::{EmbeddingStore, DEFAULT_HASH_DIM};

use super::model::{encode, total_loss, Batch, LossContext, TrainPair};
use super::{EncoderParams, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean ranking loss per pair.
    pub rank: f64,
    /// Mean self-distillation loss per user (0 when not computed).
    pub sd: f64,
    /// `rank + alpha · sd`.
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// `epoch  rank_loss  sd_loss  total` per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.epoch, e.rank, e.sd, e.total);
        }
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut epochs = Vec::new();
        for (idx, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::parse(source, idx + 1, "expected `epoch rank sd total`");
            if cols.len() != 4 {
                return Err(bad());
            }
            let f = |s: &str| s.parse::<f64>().map_err(|_| bad());
            epochs.push(EpochLog {
                epoch: cols[0].parse().map_err(|_| bad())?,
                rank: f(cols[1])?,
                sd: f(cols[2])?,
                total: f(cols[3])?,
            });
        }
        Ok(Self { epochs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub params: EncoderParams<T>,
    pub log: TrainLog,
}

/// Teacher mediators: for every user with a neighbor set, the mean encoder
/// output of its filtered neighbors under `params`.
pub fn compute_mediators<T: Scalar>(
    params: &EncoderParams<T>,
    sequences: &BTreeMap<UserId, InteractionSequence>,
    neighbors: &BTreeMap<UserId, NeighborSet<T>>,
) -> Result<BTreeMap<UserId, Vec<T>>> {
    let reps: BTreeMap<UserId, Vec<T>> = sequences
        .par_iter()
        .map(|(&u, seq)| encode(&seq.items, params).map(|h| (u, h)))
        .collect::<Result<_>>()?;
    neighbors
        .iter()
        .map(|(&u, ns)| {
            mean_of(u, ns.filtered.iter().map(|(v, _)| *v), |v| reps.get(&v).map(Vec::as_slice)).map(|m| (u, m))
        })
        .collect()
}

struct Sampler<'a> {
    catalog: &'a [ItemId],
}

impl Sampler<'_> {
    fn negative(&self, exclude: &BTreeSet<ItemId>, rng: &mut impl Rng) -> ItemId {
        loop {
            let j = self.catalog[rng.gen_range(0..self.catalog.len())];
            if !exclude.contains(&j) {
                return j;
            }
        }
    }
}

/// Trains from a seeded init for `config.epochs` passes. The result is a
/// pure function of the inputs and `config.seed`.
pub fn train<T: Scalar>(
    split: &SplitCorpus,
    config: &TrainConfig,
    semantic: Option<&EmbeddingStore<T>>,
    neighbors: Option<&BTreeMap<UserId, NeighborSet<T>>>,
) -> Result<TrainedModel<T>> {
    config.validate()?;
    let sequences = &split.train.users;
    if sequences.is_empty() {
        return Err(Error::EmptyCorpus { min_len: crate::corpus::MIN_SEQUENCE_LEN });
    }
    if config.gaa_enabled && neighbors.is_none() {
        return Err(Error::Contract("group-aware alignment enabled but no neighbor sets supplied".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sem_dim = semantic.map_or(DEFAULT_HASH_DIM, |s| s.dim);
    let mut params = EncoderParams::<T>::init(split.train.item_table_rows(), config.dim, sem_dim, &mut rng);

    let catalog: Vec<ItemId> = split.train.items.keys().copied().collect();
    let seen: BTreeMap<UserId, BTreeSet<ItemId>> =
        sequences.iter().map(|(&u, s)| (u, s.items.iter().copied().collect())).collect();
    if let Some((u, _)) = seen.iter().find(|(_, s)| s.len() >= catalog.len()) {
        return Err(Error::Contract(format!("user {u} covers the whole catalog; no negatives to sample")));
    }
    let sampler = Sampler { catalog: &catalog };
    let mut users: Vec<UserId> = sequences.keys().copied().collect();
    let lr: T = lit(config.learning_rate);
    let mut log = TrainLog::default();

    for epoch in 1..=config.epochs {
        let mediators = match neighbors {
            Some(ns) if config.gaa_enabled => Some(compute_mediators(&params, sequences, ns)?),
            _ => None,
        };
        let ctx = LossContext { sequences, semantic, mediators: mediators.as_ref() };
        users.shuffle(&mut rng);

        let (mut rank_sum, mut n_pairs, mut sd_sum, mut n_sd) = (0.0, 0usize, 0.0, 0usize);
        for chunk in users.chunks(config.batch_size) {
            let mut batch = Batch { users: chunk.to_vec(), pairs: Vec::new() };
            for &user in chunk {
                let items = &sequences[&user].items;
                for k in 1..items.len() {
                    for _ in 0..config.negatives_per_positive {
                        let neg = sampler.negative(&seen[&user], &mut rng);
                        batch.pairs.push(TrainPair { user, prefix_len: k, pos: items[k], neg });
                    }
                }
            }
            let (parts, grad) = total_loss(&batch, &params, config, &ctx)?;
            if !parts.total.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence { epoch, detail: format!("non-finite loss {}", parts.total) });
            }
            params.sgd_step(&grad, lr);
            rank_sum += parts.rank_sum.to_f64().unwrap_or(f64::NAN);
            sd_sum += parts.sd_sum.to_f64().unwrap_or(f64::NAN);
            n_pairs += parts.n_pairs;
            n_sd += parts.n_sd;
        }
        if !params.is_finite() {
            return Err(Error::Divergence { epoch, detail: "non-finite parameters after update".into() });
        }
        let rank = if n_pairs > 0 { rank_sum / n_pairs as f64 } else { 0.0 };
        let sd = if n_sd > 0 { sd_sum / n_sd as f64 } else { 0.0 };
        let entry = EpochLog { epoch, rank, sd, total: rank + config.alpha * sd };
        log::debug!("epoch {epoch}: rank {rank:.5} sd {sd:.5}");
        log.epochs.push(entry);
    }
    Ok(TrainedModel { params, log })
}
