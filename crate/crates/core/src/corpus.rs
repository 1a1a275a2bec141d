//! Interaction corpus: loading, leave-one-out splitting and head/tail
//! partitioning of users and items.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Users with fewer interactions than this are dropped at load time.
pub const MIN_SEQUENCE_LEN: usize = 3;

pub type UserId = u32;
pub type ItemId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub item_id: ItemId,
    pub title: String,
    pub genres: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSequence {
    pub user_id: UserId,
    pub items: Vec<ItemId>,
}

impl InteractionSequence {
    pub fn new(user_id: UserId, items: Vec<ItemId>) -> Self {
        Self { user_id, items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub users: BTreeMap<UserId, InteractionSequence>,
    pub items: BTreeMap<ItemId, Item>,
}

impl Corpus {
    /// Number of users (M).
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Number of catalog items (N).
    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    /// Rows needed by an item table indexed directly by item id.
    pub fn item_table_rows(&self) -> usize {
        self.items.keys().next_back().map_or(0, |&id| id as usize + 1)
    }

    pub fn item(&self, id: ItemId) -> Option<&Item> {
        self.items.get(&id)
    }

    /// Parses the TSV interaction format without applying the length filter.
    pub fn parse_tsv(text: &str, source: &str) -> Result<Corpus> {
        // (order_index, row number) keeps the sort stable for repeated indices.
        let mut rows: BTreeMap<UserId, Vec<(i64, usize, ItemId)>> = BTreeMap::new();
        let mut items: BTreeMap<ItemId, Item> = BTreeMap::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::parse(
                    source,
                    line_no,
                    format!("expected 5 tab-separated columns, found {}", cols.len()),
                ));
            }
            let user_id: UserId = cols[0]
                .trim()
                .parse()
                .map_err(|_| Error::parse(source, line_no, format!("bad user_id {:?}", cols[0])))?;
            let item_id: ItemId = cols[1]
                .trim()
                .parse()
                .map_err(|_| Error::parse(source, line_no, format!("bad item_id {:?}", cols[1])))?;
            let order: i64 = cols[2]
                .trim()
                .parse()
                .map_err(|_| Error::parse(source, line_no, format!("bad order_index {:?}", cols[2])))?;
            let genres = split_genres(cols[4]);
            rows.entry(user_id).or_default().push((order, line_no, item_id));
            items.insert(item_id, Item { item_id, title: cols[3].to_string(), genres });
        }

        let users = rows
            .into_iter()
            .map(|(user_id, mut seq)| {
                seq.sort_unstable();
                let items = seq.into_iter().map(|(_, _, item)| item).collect();
                (user_id, InteractionSequence { user_id, items })
            })
            .collect();
        Ok(Corpus { users, items })
    }

    /// Drops users with fewer than `min_len` interactions; returns the number dropped.
    pub fn filter_min_interactions(&mut self, min_len: usize) -> usize {
        let before = self.users.len();
        self.users.retain(|_, seq| seq.len() >= min_len);
        before - self.users.len()
    }

    /// Renders the corpus back into the TSV interaction format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for seq in self.users.values() {
            for (pos, item_id) in seq.items.iter().enumerate() {
                let (title, genres) = match self.items.get(item_id) {
                    Some(item) => (item.title.as_str(), item.genres.join("|")),
                    None => ("", String::new()),
                };
                let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", seq.user_id, item_id, pos, title, genres);
            }
        }
        out
    }

    /// Interaction count per user (n_u).
    pub fn user_counts(&self) -> BTreeMap<UserId, usize> {
        self.users.iter().map(|(&u, seq)| (u, seq.len())).collect()
    }

    /// Popularity per catalog item (p_v), counting every interaction.
    pub fn item_popularity(&self) -> BTreeMap<ItemId, usize> {
        let mut counts: BTreeMap<ItemId, usize> = self.items.keys().map(|&id| (id, 0)).collect();
        for seq in self.users.values() {
            for id in &seq.items {
                *counts.entry(*id).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        for seq in self.users.values() {
            if let Some(missing) = seq.items.iter().find(|id| !self.items.contains_key(id)) {
                return Err(Error::Contract(format!(
                    "user {} references unknown item {}",
                    seq.user_id, missing
                )));
            }
        }
        Ok(())
    }
}

fn split_genres(field: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for tag in field.split('|').map(str::trim).filter(|t| !t.is_empty()) {
        if !out.iter().any(|g| g == tag) {
            out.push(tag.to_string());
        }
    }
    out
}

/// Loads an interactions file and drops users shorter than [`MIN_SEQUENCE_LEN`].
pub fn load_interactions(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = Corpus::parse_tsv(&text, &path.display().to_string())?;
    let dropped = corpus.filter_min_interactions(MIN_SEQUENCE_LEN);
    if dropped > 0 {
        log::info!("dropped {dropped} users with fewer than {MIN_SEQUENCE_LEN} interactions");
    }
    if corpus.users.is_empty() {
        return Err(Error::EmptyCorpus { min_len: MIN_SEQUENCE_LEN });
    }
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitCorpus {
    /// Every sequence shortened by its last two items.
    pub train: Corpus,
    pub valid_target: BTreeMap<UserId, ItemId>,
    pub test_target: BTreeMap<UserId, ItemId>,
}

impl SplitCorpus {
    /// Train sequence followed by the validation item: the input used to
    /// predict the test item.
    pub fn test_input(&self, user: UserId) -> Option<Vec<ItemId>> {
        let seq = self.train.users.get(&user)?;
        let valid = self.valid_target.get(&user)?;
        let mut items = seq.items.clone();
        items.push(*valid);
        Some(items)
    }

    /// Original full sequence (train + valid + test).
    pub fn full_sequence(&self, user: UserId) -> Option<Vec<ItemId>> {
        let mut items = self.test_input(user)?;
        items.push(*self.test_target.get(&user)?);
        Some(items)
    }

    /// The pre-split corpus.
    pub fn full_corpus(&self) -> Corpus {
        let users = self
            .train
            .users
            .keys()
            .filter_map(|&u| Some((u, InteractionSequence::new(u, self.full_sequence(u)?))))
            .collect();
        Corpus { users, items: self.train.items.clone() }
    }
}

pub fn split_leave_one_out(corpus: &Corpus) -> Result<SplitCorpus> {
    let mut train = Corpus { users: BTreeMap::new(), items: corpus.items.clone() };
    let mut valid_target = BTreeMap::new();
    let mut test_target = BTreeMap::new();
    for (&user_id, seq) in &corpus.users {
        let t = seq.len();
        if t < MIN_SEQUENCE_LEN {
            return Err(Error::Contract(format!(
                "user {user_id} has {t} interactions; leave-one-out needs at least {MIN_SEQUENCE_LEN}"
            )));
        }
        valid_target.insert(user_id, seq.items[t - 2]);
        test_target.insert(user_id, seq.items[t - 1]);
        train
            .users
            .insert(user_id, InteractionSequence::new(user_id, seq.items[..t - 2].to_vec()));
    }
    Ok(SplitCorpus { train, valid_target, test_target })
}

/// Top `floor(fraction * len)` keys by descending count, ties broken by ascending id.
pub fn top_fraction(counts: &BTreeMap<u32, usize>, fraction: f64) -> Result<BTreeSet<u32>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("head fraction must lie in (0, 1), got {fraction}")));
    }
    let mut ranked: Vec<(u32, usize)> = counts.iter().map(|(&k, &c)| (k, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let n_head = (fraction * ranked.len() as f64).floor() as usize;
    Ok(ranked.into_iter().take(n_head).map(|(k, _)| k).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadTailPartition {
    pub head_users: BTreeSet<UserId>,
    pub tail_users: BTreeSet<UserId>,
    pub head_items: BTreeSet<ItemId>,
    pub tail_items: BTreeSet<ItemId>,
    pub user_counts: BTreeMap<UserId, usize>,
    pub item_popularity: BTreeMap<ItemId, usize>,
}

impl HeadTailPartition {
    pub fn is_head_user(&self, user: UserId) -> bool {
        self.head_users.contains(&user)
    }

    pub fn is_head_item(&self, item: ItemId) -> bool {
        self.head_items.contains(&item)
    }
}

/// Splits users by interaction count and items by popularity.
///
/// Popularity is counted on whatever corpus is passed in; the pipeline passes
/// the full pre-split corpus.
pub fn partition_head_tail(corpus: &Corpus, head_fraction: f64) -> Result<HeadTailPartition> {
    let user_counts = corpus.user_counts();
    let item_popularity = corpus.item_popularity();
    let head_users = top_fraction(&user_counts, head_fraction)?;
    let head_items = top_fraction(&item_popularity, head_fraction)?;
    let tail_users = user_counts.keys().copied().filter(|u| !head_users.contains(u)).collect();
    let tail_items = item_popularity.keys().copied().filter(|i| !head_items.contains(i)).collect();
    Ok(HeadTailPartition { head_users, tail_users, head_items, tail_items, user_counts, item_popularity })
}
