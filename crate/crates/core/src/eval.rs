//! Sampled-candidate ranking evaluation: 100 unseen negatives per user,
//! HR@K and NDCG@K, with head/tail user and item breakdowns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{HeadTailPartition, ItemId, SplitCorpus, UserId};
use crate::error::{Error, Result};
use crate::recommender::{encode, fuse, score, EncoderParams, FusionMode};
use crate::scalar::Scalar;
use crate::semantics::EmbeddingStore;

pub const NUM_NEGATIVES: usize = 100;
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub user_id: UserId,
    pub ground_truth: ItemId,
    pub negatives: Vec<ItemId>,
    /// Fewer than the requested negatives were available.
    pub short: bool,
}

/// Generator for `(seed, user)`: the user id selects the ChaCha stream.
pub fn user_rng(seed: u64, user: UserId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(user));
    rng
}

/// Uniform negatives without replacement from `catalog` minus `history`
/// (which must contain the ground truth).
pub fn build_candidates(
    user: UserId,
    ground_truth: ItemId,
    history: &BTreeSet<ItemId>,
    catalog: &[ItemId],
    seed: u64,
    count: usize,
) -> CandidateSet {
    let eligible: Vec<ItemId> =
        catalog.iter().copied().filter(|j| *j != ground_truth && !history.contains(j)).collect();
    let short = eligible.len() < count;
    let negatives = if short {
        eligible
    } else {
        let mut rng = user_rng(seed, user);
        rand::seq::index::sample(&mut rng, eligible.len(), count).into_iter().map(|i| eligible[i]).collect()
    };
    CandidateSet { user_id: user, ground_truth, negatives, short }
}

/// Candidate sets for every user with a test target, built from the full
/// sequence and the split's catalog.
pub fn candidates_for_split(split: &SplitCorpus, seed: u64) -> Result<Vec<CandidateSet>> {
    let catalog: Vec<ItemId> = split.train.items.keys().copied().collect();
    split
        .test_target
        .iter()
        .map(|(&u, &gt)| {
            let full = split.full_sequence(u).ok_or(Error::UserNotFound(u))?;
            let history: BTreeSet<ItemId> = full.into_iter().collect();
            Ok(build_candidates(u, gt, &history, &catalog, seed, NUM_NEGATIVES))
        })
        .collect()
}

/// 1-based rank of the ground truth: one plus the negatives scoring higher,
/// or equal with a smaller id.
pub fn rank_of<T: PartialOrd>(ground_truth: (ItemId, T), negatives: &[(ItemId, T)]) -> usize {
    let (gt, gs) = ground_truth;
    1 + negatives.iter().filter(|(j, s)| *s > gs || (*s == gs && *j < gt)).count()
}

/// Rank of the ground truth among `candidates` under `e_j · h`.
pub fn rank_candidates<T: Scalar>(h: &[T], candidates: &CandidateSet, params: &EncoderParams<T>) -> Result<usize> {
    let gt = score(h, candidates.ground_truth, params)?;
    let negs = candidates.negatives.iter().map(|&j| score(h, j, params).map(|s| (j, s))).collect::<Result<Vec<_>>>()?;
    if !gt.is_finite() || negs.iter().any(|(_, s)| !s.is_finite()) {
        return Err(Error::Contract(format!("non-finite score for user {}", candidates.user_id)));
    }
    Ok(rank_of((candidates.ground_truth, gt), &negs))
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserRank {
    pub user_id: UserId,
    pub ground_truth: ItemId,
    pub rank: usize,
}

/// Ranks the test item of every user, encoding train + validation items.
pub fn evaluate_model<T: Scalar>(
    params: &EncoderParams<T>,
    split: &SplitCorpus,
    semantic: Option<&EmbeddingStore<T>>,
    fusion: FusionMode,
    seed: u64,
) -> Result<Vec<UserRank>> {
    let candidates = candidates_for_split(split, seed)?;
    candidates
        .par_iter()
        .map(|c| {
            let input = split.test_input(c.user_id).ok_or(Error::UserNotFound(c.user_id))?;
            let h = encode(&input, params)?;
            let s = match (fusion, semantic) {
                (FusionMode::None, _) => None,
                (_, Some(store)) => Some(store.vector(c.user_id)?),
                (_, None) => return Err(Error::Contract(format!("fusion mode {fusion} needs semantic embeddings"))),
            };
            let fused = fuse(&h, s, fusion, params)?;
            Ok(UserRank { user_id: c.user_id, ground_truth: c.ground_truth, rank: rank_candidates(&fused, c, params)? })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvalGroup {
    Overall,
    TailItem,
    HeadItem,
    TailUser,
    HeadUser,
}

impl EvalGroup {
    pub const ALL: [EvalGroup; 5] =
        [EvalGroup::Overall, EvalGroup::TailItem, EvalGroup::HeadItem, EvalGroup::TailUser, EvalGroup::HeadUser];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalGroup::Overall => "overall",
            EvalGroup::TailItem => "tail_item",
            EvalGroup::HeadItem => "head_item",
            EvalGroup::TailUser => "tail_user",
            EvalGroup::HeadUser => "head_user",
        }
    }

    fn contains(self, r: &UserRank, partition: &HeadTailPartition) -> bool {
        match self {
            EvalGroup::Overall => true,
            EvalGroup::TailItem => !partition.is_head_item(r.ground_truth),
            EvalGroup::HeadItem => partition.is_head_item(r.ground_truth),
            EvalGroup::TailUser => !partition.is_head_user(r.user_id),
            EvalGroup::HeadUser => partition.is_head_user(r.user_id),
        }
    }
}

impl fmt::Display for EvalGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalGroup {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        EvalGroup::ALL.into_iter().find(|g| g.as_str() == s).ok_or_else(|| format!("unknown group {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMetrics {
    pub hr: f64,
    pub ndcg: f64,
    pub users: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    pub seeds: Vec<u64>,
    /// Empty groups are absent.
    pub groups: BTreeMap<EvalGroup, GroupMetrics>,
}

impl MetricsReport {
    pub fn get(&self, group: EvalGroup) -> Option<&GroupMetrics> {
        self.groups.get(&group)
    }

    pub fn ndcg(&self, group: EvalGroup) -> Option<f64> {
        self.get(group).map(|g| g.ndcg)
    }

    pub fn hr(&self, group: EvalGroup) -> Option<f64> {
        self.get(group).map(|g| g.hr)
    }

    /// Aligned plain-text table.
    pub fn render_table(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = format!("seeds: {}\n", seeds.join(","));
        let _ = writeln!(out, "{:<10} {:>9} {:>9} {:>7}", "group", format!("HR@{}", self.k), format!("NDCG@{}", self.k), "users");
        for group in EvalGroup::ALL {
            match self.groups.get(&group) {
                Some(m) => {
                    let _ = writeln!(out, "{:<10} {:>9.4} {:>9.4} {:>7}", group.as_str(), m.hr, m.ndcg, m.users);
                }
                None => {
                    let _ = writeln!(out, "{:<10} {:>9} {:>9} {:>7}", group.as_str(), "-", "-", 0);
                }
            }
        }
        out
    }

    /// `group  metric  value` lines.
    pub fn render_tsv(&self) -> String {
        let mut out = String::new();
        for (group, m) in &self.groups {
            let _ = writeln!(out, "{group}\thr@{}\t{}", self.k, m.hr);
            let _ = writeln!(out, "{group}\tndcg@{}\t{}", self.k, m.ndcg);
            let _ = writeln!(out, "{group}\tusers\t{}", m.users);
        }
        out
    }

    pub fn parse_tsv(text: &str, source: &str) -> Result<Self> {
        let mut groups: BTreeMap<EvalGroup, GroupMetrics> = BTreeMap::new();
        let mut k = DEFAULT_K;
        for (idx, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let n = idx + 1;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(source, n, "expected `group metric value`"));
            }
            let group: EvalGroup = cols[0].parse().map_err(|e: String| Error::parse(source, n, e))?;
            let entry = groups.entry(group).or_insert(GroupMetrics { hr: 0.0, ndcg: 0.0, users: 0 });
            let value = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(source, n, "bad value"));
            match cols[1] {
                "users" => entry.users = cols[2].parse().map_err(|_| Error::parse(source, n, "bad user count"))?,
                m if m.starts_with("hr@") => {
                    k = m[3..].parse().map_err(|_| Error::parse(source, n, "bad cutoff"))?;
                    entry.hr = value(cols[2])?;
                }
                m if m.starts_with("ndcg@") => entry.ndcg = value(cols[2])?,
                m => return Err(Error::parse(source, n, format!("unknown metric {m:?}"))),
            }
        }
        Ok(Self { k, seeds: Vec::new(), groups })
    }
}

/// Averages per-group metrics over seeds. Each entry of `runs` holds the
/// per-user ranks of one seed.
pub fn report(runs: &[(u64, Vec<UserRank>)], partition: &HeadTailPartition, k: usize) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::Contract("report needs at least one seed".into()));
    }
    let mut groups = BTreeMap::new();
    for group in EvalGroup::ALL {
        let mut hr_sum = 0.0;
        let mut ndcg_sum = 0.0;
        let mut users = 0;
        for (_, ranks) in runs {
            let members: Vec<&UserRank> = ranks.iter().filter(|r| group.contains(r, partition)).collect();
            if members.is_empty() {
                users = 0;
                break;
            }
            users = members.len();
            let n = members.len() as f64;
            hr_sum += members.iter().map(|r| hr_at_k(r.rank, k)).sum::<f64>() / n;
            ndcg_sum += members.iter().map(|r| ndcg_at_k(r.rank, k)).sum::<f64>() / n;
        }
        if users > 0 {
            let s = runs.len() as f64;
            groups.insert(group, GroupMetrics { hr: hr_sum / s, ndcg: ndcg_sum / s, users });
        }
    }
    Ok(MetricsReport { k, seeds: runs.iter().map(|(s, _)| *s).collect(), groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn metric_examples() {
        assert_eq!((hr_at_k(1, 10), ndcg_at_k(1, 10)), (1.0, 1.0));
        assert_eq!((hr_at_k(11, 10), ndcg_at_k(11, 10)), (0.0, 0.0));
        assert!((ndcg_at_k(10, 10) - 0.28906).abs() < 1e-5);
        for r in 1..30 {
            assert!(ndcg_at_k(r + 1, 10) <= ndcg_at_k(r, 10));
            assert!(ndcg_at_k(r, 10) <= hr_at_k(r, 10));
        }
    }

    #[test]
    fn forced_negative_set() {
        let catalog: Vec<u32> = (0..101).collect();
        let c = build_candidates(3, 50, &BTreeSet::from([50]), &catalog, 42, 100);
        let mut negs = c.negatives.clone();
        negs.sort_unstable();
        assert_eq!(negs, (0..101).filter(|&j| j != 50).collect::<Vec<_>>());
        assert!(!c.short);
        let short = build_candidates(3, 50, &BTreeSet::from([50, 1]), &catalog, 42, 100);
        assert!(short.short);
        assert_eq!(short.negatives.len(), 99);
    }

    #[test]
    fn candidates_deterministic_and_disjoint() {
        let catalog: Vec<u32> = (0..500).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for u in 0..100u32 {
            let history: BTreeSet<u32> = (0..20).map(|_| rng.gen_range(0..500)).collect();
            let gt = *history.iter().next().unwrap();
            let a = build_candidates(u, gt, &history, &catalog, 42, 100);
            let b = build_candidates(u, gt, &history, &catalog, 42, 100);
            assert_eq!(a, b);
            assert_eq!(a.negatives.len(), 100);
            assert!(a.negatives.iter().all(|j| !history.contains(j)));
            let uniq: BTreeSet<u32> = a.negatives.iter().copied().collect();
            assert_eq!(uniq.len(), 100);
        }
        let a = build_candidates(1, 0, &BTreeSet::from([0]), &catalog, 42, 100);
        let b = build_candidates(1, 0, &BTreeSet::from([0]), &catalog, 43, 100);
        assert_ne!(a.negatives, b.negatives);
    }

    #[test]
    fn ranking_ties() {
        assert_eq!(rank_of((5, 1.0), &[(1, 0.5), (9, 0.9)]), 1);
        assert_eq!(rank_of((0, 1.0), &[(1, 1.0), (2, 1.0)]), 1);
        assert_eq!(rank_of((2, 1.0), &[(1, 1.0), (3, 1.0)]), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut all: Vec<(u32, f64)> = (0..30).map(|j| (j, (rng.gen_range(0..8) as f64) / 4.0)).collect();
            let gt = all[rng.gen_range(0..30)];
            let negs: Vec<(u32, f64)> = all.iter().copied().filter(|c| c.0 != gt.0).collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let oracle = all.iter().position(|c| c.0 == gt.0).unwrap() + 1;
            assert_eq!(rank_of(gt, &negs), oracle);
        }
    }

    #[test]
    fn report_groups() {
        let partition = HeadTailPartition {
            head_users: BTreeSet::from([1]),
            tail_users: BTreeSet::from([2, 3]),
            head_items: BTreeSet::from([10]),
            tail_items: BTreeSet::from([11]),
            user_counts: BTreeMap::new(),
            item_popularity: BTreeMap::new(),
        };
        let ranks = vec![
            UserRank { user_id: 1, ground_truth: 10, rank: 1 },
            UserRank { user_id: 2, ground_truth: 11, rank: 20 },
            UserRank { user_id: 3, ground_truth: 11, rank: 3 },
        ];
        let r = report(&[(42, ranks)], &partition, 10).unwrap();
        assert_eq!(r.get(EvalGroup::HeadUser).unwrap().users + r.get(EvalGroup::TailUser).unwrap().users, 3);
        let o = r.get(EvalGroup::Overall).unwrap();
        let (h, t) = (r.get(EvalGroup::HeadUser).unwrap(), r.get(EvalGroup::TailUser).unwrap());
        assert!((o.ndcg - (h.ndcg * 1.0 + t.ndcg * 2.0) / 3.0).abs() < 1e-12);
        assert_eq!(h.ndcg, 1.0);

        let one = report(&[(42, vec![UserRank { user_id: 1, ground_truth: 10, rank: 1 }])], &partition, 10).unwrap();
        assert!(one.get(EvalGroup::TailUser).is_none());
        assert!(one.groups.values().all(|m| m.hr == 1.0 && m.ndcg == 1.0));

        let back = MetricsReport::parse_tsv(&r.render_tsv(), "mem").unwrap();
        assert_eq!(back.groups, r.groups);
        assert!(r.render_table().contains("tail_user"));
    }
}
