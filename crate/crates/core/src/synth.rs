//! Synthetic genre-labelled corpus with planted taste clusters.
//!
//! Every cluster owns a disjoint block of items and a disjoint set of genre
//! words, so the clusters are visible both in the interactions and in the
//! token content of interest summaries. A user draws most items from their
//! own cluster, popular items first, and the rest uniformly from the catalog.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, InteractionSequence, Item, ItemId, UserId};
use crate::error::{Error, Result};

const GENRE_WORDS: [&str; 40] = [
    "Amber", "Basalt", "Cobalt", "Dune", "Ember", "Fjord", "Garnet", "Harbor", "Iris", "Jade", "Kelp", "Lagoon",
    "Marble", "Nectar", "Onyx", "Prairie", "Quartz", "Reef", "Sable", "Tundra", "Umber", "Velvet", "Willow",
    "Xenon", "Yarrow", "Zephyr", "Aurora", "Bramble", "Cinder", "Delta", "Echo", "Flint", "Glacier", "Heather",
    "Indigo", "Juniper", "Kestrel", "Lumen", "Meadow", "Nimbus",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub active_fraction: f64,
    pub active_len: usize,
    pub tail_len: usize,
    pub clusters: usize,
    pub items_per_cluster: usize,
    pub genres_per_cluster: usize,
    /// Probability that an interaction comes from outside the user's cluster.
    pub noise: f64,
    /// Exponent of the within-cluster popularity law `1 / (rank + 1)^s`.
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 1000,
            active_fraction: 0.2,
            active_len: 40,
            tail_len: 5,
            clusters: 10,
            items_per_cluster: 150,
            genres_per_cluster: 4,
            noise: 0.15,
            popularity_exponent: 1.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.items_per_cluster == 0 || self.users == 0 {
            return Err(Error::Config("synthetic corpus needs users, clusters and items".into()));
        }
        if self.clusters * self.genres_per_cluster > GENRE_WORDS.len() || self.genres_per_cluster == 0 {
            return Err(Error::Config(format!(
                "at most {} genre words available for {} clusters",
                GENRE_WORDS.len(),
                self.clusters
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..1.0).contains(&self.active_fraction) {
            return Err(Error::Config("noise must lie in [0, 1] and active_fraction in [0, 1)".into()));
        }
        if self.tail_len < crate::corpus::MIN_SEQUENCE_LEN || self.active_len < self.tail_len {
            return Err(Error::Config("sequence lengths too short for leave-one-out".into()));
        }
        if self.active_len > self.items_per_cluster * self.clusters {
            return Err(Error::Config("active_len exceeds the catalog".into()));
        }
        Ok(())
    }
}

/// Cluster of a synthetic item id.
pub fn item_cluster(config: &SynthConfig, item: ItemId) -> usize {
    item as usize / config.items_per_cluster
}

/// Generates the corpus and the planted user clusters. The first
/// `floor(active_fraction * users)` user ids are the long-history users.
pub fn generate(config: &SynthConfig) -> Result<(Corpus, BTreeMap<UserId, usize>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut items = BTreeMap::new();
    for c in 0..config.clusters {
        let words = &GENRE_WORDS[c * config.genres_per_cluster..(c + 1) * config.genres_per_cluster];
        for r in 0..config.items_per_cluster {
            let id = (c * config.items_per_cluster + r) as ItemId;
            let first = rng.gen_range(0..words.len());
            let mut genres = vec![words[first].to_string()];
            if rng.gen_bool(0.5) {
                let second = (first + 1 + rng.gen_range(0..words.len() - 1)) % words.len();
                genres.push(words[second].to_string());
            }
            items.insert(id, Item { item_id: id, title: format!("Title {id}"), genres });
        }
    }
    let weights: Vec<f64> =
        (0..config.items_per_cluster).map(|r| 1.0 / ((r + 1) as f64).powf(config.popularity_exponent)).collect();
    let within = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let n_items = config.clusters * config.items_per_cluster;
    let n_active = (config.active_fraction * config.users as f64).floor() as usize;

    let mut users = BTreeMap::new();
    let mut membership = BTreeMap::new();
    for u in 0..config.users {
        let user = u as UserId;
        let cluster = rng.gen_range(0..config.clusters);
        let len = if u < n_active { config.active_len } else { config.tail_len };
        let mut seq: Vec<ItemId> = Vec::with_capacity(len);
        while seq.len() < len {
            let j = if rng.gen_bool(config.noise) {
                rng.gen_range(0..n_items)
            } else {
                cluster * config.items_per_cluster + within.sample(&mut rng)
            } as ItemId;
            if !seq.contains(&j) {
                seq.push(j);
            }
        }
        users.insert(user, InteractionSequence::new(user, seq));
        membership.insert(user, cluster);
    }
    Ok((Corpus { users, items }, membership))
}
