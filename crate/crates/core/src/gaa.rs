//! Group-aware alignment: activity groups, neighbor retrieval over semantic
//! embeddings, Pearson-percentile filtering for active users, and the
//! self-distillation loss against the neighbors' mean representation.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::corpus::{top_fraction, UserId};
use crate::error::{Error, Result};
use crate::scalar::{from_usize, parse_scalar, Scalar};
use crate::semantics::{cosine, pearson, EmbeddingStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UserGroup {
    Active,
    LongTail,
}

impl fmt::Display for UserGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UserGroup::Active => "active",
            UserGroup::LongTail => "long-tail",
        })
    }
}

impl FromStr for UserGroup {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "active" => Ok(UserGroup::Active),
            "long-tail" => Ok(UserGroup::LongTail),
            _ => Err(format!("unknown group {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaaConfig {
    pub active_fraction: f64,
    pub k_longtail: usize,
    pub k_active: usize,
    /// Percentile level in [0, 100].
    pub percentile_tau: f64,
    pub alpha: f64,
    pub group_aware_enabled: bool,
    pub active_filter_enabled: bool,
}

impl Default for GaaConfig {
    fn default() -> Self {
        Self {
            active_fraction: 0.20,
            k_longtail: 14,
            k_active: 6,
            percentile_tau: 50.0,
            alpha: 0.1,
            group_aware_enabled: true,
            active_filter_enabled: true,
        }
    }
}

impl GaaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_longtail < 1 || self.k_active < 1 {
            return Err(Error::Config("neighbor counts must be at least 1".into()));
        }
        if !(0.0..=100.0).contains(&self.percentile_tau) {
            return Err(Error::Config(format!("percentile_tau must lie in [0, 100], got {}", self.percentile_tau)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be finite and non-negative, got {}", self.alpha)));
        }
        if !(self.active_fraction > 0.0 && self.active_fraction < 1.0) {
            return Err(Error::Config(format!("active_fraction must lie in (0, 1), got {}", self.active_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet<T> {
    pub user_id: UserId,
    pub group: UserGroup,
    /// Sorted by cosine descending, ascending id on ties.
    pub candidates: Vec<(UserId, T)>,
    pub filtered: Vec<(UserId, T)>,
    /// Pearson percentile threshold, when the active filter ran.
    pub threshold_used: Option<T>,
}

impl<T> NeighborSet<T> {
    pub fn filtered_ids(&self) -> Vec<UserId> {
        self.filtered.iter().map(|(id, _)| *id).collect()
    }

    pub fn candidate_ids(&self) -> Vec<UserId> {
        self.candidates.iter().map(|(id, _)| *id).collect()
    }
}

/// Top `floor(fraction * M)` users by interaction count are active.
pub fn assign_groups(counts: &BTreeMap<UserId, usize>, active_fraction: f64) -> Result<BTreeMap<UserId, UserGroup>> {
    if counts.is_empty() {
        return Err(Error::Contract("cannot assign groups over an empty user set".into()));
    }
    let active = top_fraction(counts, active_fraction)?;
    Ok(counts
        .keys()
        .map(|&u| (u, if active.contains(&u) { UserGroup::Active } else { UserGroup::LongTail }))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval<T> {
    pub candidates: Vec<(UserId, T)>,
    /// Fewer than `k` other users were available.
    pub short: bool,
}

fn by_score_desc<T: Scalar>(a: &(UserId, T), b: &(UserId, T)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Exact top-`k` users by cosine similarity of semantic embeddings, excluding
/// `user` itself. Zero-norm entries are skipped.
pub fn retrieve_neighbors<T: Scalar>(user: UserId, store: &EmbeddingStore<T>, k: usize) -> Result<Retrieval<T>> {
    let query = store.vector(user)?;
    if store.get(user).is_some_and(|q| q.raw) {
        return Err(Error::UndefinedSimilarity(format!("user {user} has a zero embedding")));
    }
    let mut scored: Vec<(UserId, T)> = Vec::with_capacity(store.len());
    for (&other, e) in &store.entries {
        if other == user {
            continue;
        }
        if e.raw {
            log::debug!("skipping user {other}: zero embedding");
            continue;
        }
        scored.push((other, cosine(query, &e.vector)?));
    }
    let short = scored.len() < k;
    if k < scored.len() {
        scored.select_nth_unstable_by(k, by_score_desc);
        scored.truncate(k);
    }
    scored.sort_by(by_score_desc);
    Ok(Retrieval { candidates: scored, short })
}

/// Nearest-rank percentile: the `ceil(tau/100 * n)`-th smallest value,
/// index clamped to `[1, n]`.
pub fn percentile_threshold<T: Scalar>(sims: &[T], tau: f64) -> Result<T> {
    if sims.is_empty() {
        return Err(Error::Contract("percentile of an empty similarity set".into()));
    }
    if !(0.0..=100.0).contains(&tau) {
        return Err(Error::Config(format!("percentile level must lie in [0, 100], got {tau}")));
    }
    let mut sorted = sims.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    let rank = ((tau * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome<T> {
    pub filtered: Vec<(UserId, T)>,
    pub threshold: Option<T>,
}

/// Keeps candidates whose Pearson similarity to `user` reaches the `tau`-th
/// percentile of the candidates' Pearson values. Order is preserved.
pub fn filter_active<T: Scalar>(
    user: UserId,
    candidates: &[(UserId, T)],
    store: &EmbeddingStore<T>,
    tau: f64,
) -> Result<FilterOutcome<T>> {
    let query = store.vector(user)?;
    let mut scored: Vec<((UserId, T), T)> = Vec::with_capacity(candidates.len());
    for &(v, cos) in candidates {
        match pearson(query, store.vector(v)?) {
            Ok(p) => scored.push(((v, cos), p)),
            Err(Error::UndefinedSimilarity(why)) => log::debug!("user {user}: dropping candidate {v}: {why}"),
            Err(e) => return Err(e),
        }
    }
    if scored.is_empty() {
        return Ok(FilterOutcome { filtered: Vec::new(), threshold: None });
    }
    let sims: Vec<T> = scored.iter().map(|(_, p)| *p).collect();
    let q = percentile_threshold(&sims, tau)?;
    let filtered = scored.into_iter().filter(|(_, p)| *p >= q).map(|(c, _)| c).collect();
    Ok(FilterOutcome { filtered, threshold: Some(q) })
}

/// Final neighbors for one user according to its group and the config.
pub fn final_neighbors<T: Scalar>(
    user: UserId,
    group: UserGroup,
    config: &GaaConfig,
    store: &EmbeddingStore<T>,
) -> Result<NeighborSet<T>> {
    let uniform = !config.group_aware_enabled;
    let k = match group {
        UserGroup::Active if !uniform => config.k_active,
        _ => config.k_longtail,
    };
    let retrieval = retrieve_neighbors(user, store, k)?;
    if retrieval.short {
        log::debug!("user {user}: only {} neighbors available for k={k}", retrieval.candidates.len());
    }
    let candidates = retrieval.candidates;
    let (filtered, threshold_used) = if group == UserGroup::Active && !uniform && config.active_filter_enabled {
        let out = filter_active(user, &candidates, store, config.percentile_tau)?;
        (out.filtered, out.threshold)
    } else {
        (candidates.clone(), None)
    };
    Ok(NeighborSet { user_id: user, group, candidates, filtered, threshold_used })
}

/// Neighbor sets for every user in `groups` that has an embedding.
pub fn build_neighbor_sets<T: Scalar>(
    groups: &BTreeMap<UserId, UserGroup>,
    config: &GaaConfig,
    store: &EmbeddingStore<T>,
) -> Result<BTreeMap<UserId, NeighborSet<T>>> {
    use rayon::prelude::*;
    let users: Vec<(UserId, UserGroup)> = groups
        .iter()
        .filter(|(u, _)| store.get(**u).is_some_and(|e| !e.raw))
        .map(|(&u, &g)| (u, g))
        .collect();
    users
        .par_iter()
        .map(|&(u, g)| final_neighbors(u, g, config, store).map(|ns| (u, ns)))
        .collect()
}

/// Mean representation of the filtered neighbors. The result is a constant
/// target: no gradient flows back into the neighbors.
pub fn teacher_mediator<T: Scalar>(
    neighbors: &NeighborSet<T>,
    reps: &BTreeMap<UserId, Vec<T>>,
) -> Result<Vec<T>> {
    mean_of(neighbors.user_id, neighbors.filtered.iter().map(|(id, _)| *id), |id| reps.get(&id).map(Vec::as_slice))
}

pub(crate) fn mean_of<'r, T: Scalar>(
    user: UserId,
    ids: impl Iterator<Item = UserId>,
    rep: impl Fn(UserId) -> Option<&'r [T]>,
) -> Result<Vec<T>> {
    let mut acc: Option<Vec<T>> = None;
    let mut count = 0usize;
    for id in ids {
        let r = rep(id).ok_or(Error::UserNotFound(id))?;
        let a = acc.get_or_insert_with(|| vec![T::zero(); r.len()]);
        if a.len() != r.len() {
            return Err(Error::Dimension { expected: a.len(), got: r.len() });
        }
        a.iter_mut().zip(r).for_each(|(x, &y)| *x = *x + y);
        count += 1;
    }
    let mut acc = acc.ok_or(Error::MediatorUndefined(user))?;
    let n: T = from_usize(count);
    acc.iter_mut().for_each(|x| *x = *x / n);
    Ok(acc)
}

/// `||student - mediator||^2`.
pub fn sd_loss<T: Scalar>(student: &[T], mediator: &[T]) -> Result<T> {
    if student.len() != mediator.len() {
        return Err(Error::Dimension { expected: student.len(), got: mediator.len() });
    }
    Ok(student.iter().zip(mediator).map(|(&s, &m)| (s - m) * (s - m)).sum())
}

/// Gradient of [`sd_loss`] with respect to the student: `2 (student - mediator)`.
pub fn sd_loss_grad<T: Scalar>(student: &[T], mediator: &[T]) -> Vec<T> {
    let two = T::one() + T::one();
    student.iter().zip(mediator).map(|(&s, &m)| two * (s - m)).collect()
}

fn join_ids(ids: &[UserId]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
}

/// `user_id  group  candidate_ids  filtered_ids  threshold` per line.
/// Scores are not stored; reloaded sets carry zero scores.
pub fn render_neighbor_sets<'a, T: Scalar>(sets: impl IntoIterator<Item = &'a NeighborSet<T>>) -> String {
    let mut out = String::new();
    for ns in sets {
        let threshold = ns.threshold_used.map_or_else(|| "none".to_string(), |t| t.to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            ns.user_id,
            ns.group,
            join_ids(&ns.candidate_ids()),
            join_ids(&ns.filtered_ids()),
            threshold
        );
    }
    out
}

pub fn parse_neighbor_sets<T: Scalar>(text: &str, source: &str) -> Result<BTreeMap<UserId, NeighborSet<T>>> {
    let ids = |s: &str, line: usize| -> Result<Vec<(UserId, T)>> {
        s.split(',')
            .filter(|x| !x.is_empty())
            .map(|x| x.parse().map(|id| (id, T::zero())).map_err(|_| Error::parse(source, line, "bad neighbor id")))
            .collect()
    };
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let n = idx + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse(source, n, "expected 5 columns"));
        }
        let user_id: UserId = cols[0].parse().map_err(|_| Error::parse(source, n, "bad user_id"))?;
        let group: UserGroup = cols[1].parse().map_err(|e: String| Error::parse(source, n, e))?;
        let threshold_used = match cols[4] {
            "none" => None,
            t => Some(parse_scalar(t).ok_or_else(|| Error::parse(source, n, "bad threshold"))?),
        };
        out.insert(
            user_id,
            NeighborSet { user_id, group, candidates: ids(cols[2], n)?, filtered: ids(cols[3], n)?, threshold_used },
        );
    }
    Ok(out)
}
