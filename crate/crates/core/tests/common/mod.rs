//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod hsu;

use std::collections::BTreeMap;

use hsuga::corpus::{InteractionSequence, UserId};
use hsuga::recommender::EncoderParams;
use hsuga::semantics::{EmbeddingStore, SemanticEmbedding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Small fixed instance: 5 users, 10 items, `d = 8`, semantic dim 8.
pub struct Instance {
    pub params: EncoderParams<f64>,
    pub sequences: BTreeMap<UserId, InteractionSequence>,
    pub store: EmbeddingStore<f64>,
    pub mediators: BTreeMap<UserId, Vec<f64>>,
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_items, d, ds) = (10, 8, 8);
    let mut params = EncoderParams::<f64>::init(n_items, d, ds, &mut rng);
    // larger weights than the init so tanh is away from its linear regime
    for (_, _, _, block) in params.blocks_mut() {
        if block.len() > 1 {
            block.iter_mut().for_each(|x| *x = rng.gen_range(-0.8..0.8));
        }
    }
    params.pool_decay = 0.7;
    let mut sequences = BTreeMap::new();
    let mut store = EmbeddingStore::new(ds);
    let mut mediators = BTreeMap::new();
    for u in 0..5u32 {
        let len = 3 + u as usize;
        let items = (0..len).map(|_| rng.gen_range(0..n_items as u32)).collect();
        sequences.insert(u, InteractionSequence::new(u, items));
        let v: Vec<f64> = (0..ds).map(|_| rng.gen_range(-1.0..1.0)).collect();
        store.insert(SemanticEmbedding::normalized(u, v)).unwrap();
        mediators.insert(u, (0..d).map(|_| rng.gen_range(-0.9..0.9)).collect());
    }
    Instance { params, sequences, store, mediators }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central differences of `f` over every parameter entry, compared to the
/// matching entry of `analytic`. Returns the worst relative error and where.
pub fn check_params(
    params: &EncoderParams<f64>,
    analytic: &hsuga::BatchGradient,
    f: impl Fn(&EncoderParams<f64>) -> f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let grads = analytic.blocks();
    let mut probe = params.clone();
    for b in 0..grads.len() {
        let (name, _, _, g) = grads[b];
        for i in 0..g.len() {
            let orig = probe.blocks()[b].3[i];
            probe.blocks_mut()[b].3[i] = orig + FD_STEP;
            let up = f(&probe);
            probe.blocks_mut()[b].3[i] = orig - FD_STEP;
            let down = f(&probe);
            probe.blocks_mut()[b].3[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(g[i], numeric);
            if e > worst.0 {
                worst = (e, format!("{name}[{i}]: analytic {} numeric {numeric}", g[i]));
            }
        }
    }
    worst
}

/// Central differences of a function of a plain vector.
pub fn check_vector(x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let e = rel_err(analytic[i], numeric);
        if e > worst.0 {
            worst = (e, format!("[{i}]: analytic {} numeric {numeric}", analytic[i]));
        }
    }
    worst
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}
