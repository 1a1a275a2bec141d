//! Reference sequence recommender: a recency-weighted pooling encoder with a
//! single affine-tanh layer, dot-product scoring, pairwise ranking loss, the
//! semantic fusion operator and the joint objective with self-distillation.
//!
//! Gradients are written out by hand; see [`model`] for the forward and
//! backward passes and [`train`] for the optimisation loop.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{lit, parse_scalar, Scalar};

pub mod model;
pub mod train;

pub use model::{
    encode, encode_backward, encode_cached, fuse, fuse_backward, rank_loss, rank_loss_grad, score, score_all,
    total_loss, Batch, EncodeCache, LossContext, LossParts, TrainPair,
};
pub use train::{compute_mediators, train, EpochLog, TrainLog, TrainedModel};

pub const DEFAULT_DIM: usize = 32;
pub const POOL_DECAY_MIN: f64 = 1e-3;
const INIT_RANGE: f64 = 0.1;
const POOL_DECAY_INIT: f64 = 0.9;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn uniform(rows: usize, cols: usize, range: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols).map(|_| lit(rng.gen_range(-range..=range))).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    /// `self · x`.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.rows).map(|i| crate::scalar::dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · x`.
    pub fn mul_vec_t(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + a * xi;
            }
        }
        out
    }

    /// `self += u vᵀ`.
    pub fn add_outer(&mut self, u: &[T], v: &[T]) {
        for (i, &ui) in u.iter().enumerate() {
            for (a, &vj) in self.row_mut(i).iter_mut().zip(v) {
                *a = *a + ui * vj;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMode {
    #[default]
    None,
    Add,
    ConcatProject,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Add => "add",
            FusionMode::ConcatProject => "concat_project",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(FusionMode::None),
            "add" => Ok(FusionMode::Add),
            "concat_project" | "concat" => Ok(FusionMode::ConcatProject),
            _ => Err(format!("unknown fusion mode {s:?} (expected none, add or concat_project)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub fusion_mode: FusionMode,
    pub hsu_enabled: bool,
    pub gaa_enabled: bool,
    pub dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 8,
            negatives_per_positive: 1,
            seed: 42,
            fusion_mode: FusionMode::None,
            hsu_enabled: true,
            gaa_enabled: true,
            dim: DEFAULT_DIM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be finite and non-negative, got {}", self.alpha)));
        }
        if self.batch_size == 0 || self.negatives_per_positive == 0 || self.dim == 0 {
            return Err(Error::Config("batch_size, negatives_per_positive and dim must be at least 1".into()));
        }
        if self.fusion_mode != FusionMode::None && !self.hsu_enabled {
            return Err(Error::Config("semantic fusion needs hsu_enabled".into()));
        }
        if self.gaa_enabled && !self.hsu_enabled {
            return Err(Error::Config("group-aware alignment retrieves neighbors from HSU embeddings; enable hsu".into()));
        }
        Ok(())
    }

    /// Whether the self-distillation term contributes to the objective.
    pub fn uses_sd(&self) -> bool {
        self.gaa_enabled && self.alpha > 0.0
    }
}

/// Trainable parameters. `item_table` rows are indexed by item id.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub item_table: Matrix<T>,
    /// Recency weight in `[POOL_DECAY_MIN, 1]`.
    pub pool_decay: T,
    pub proj_w: Matrix<T>,
    pub proj_b: Vec<T>,
    /// `d_s × d` semantic projection.
    pub fuse_p: Matrix<T>,
    /// `d × d` collaborative half of the concat projection.
    pub fuse_h: Matrix<T>,
}

/// Per-parameter gradients, shaped like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient<T> {
    pub item_table: Matrix<T>,
    pub pool_decay: T,
    pub proj_w: Matrix<T>,
    pub proj_b: Vec<T>,
    pub fuse_p: Matrix<T>,
    pub fuse_h: Matrix<T>,
}

/// Named parameter block: `(name, rows, cols, values)`.
pub type Block<'a, T> = (&'static str, usize, usize, &'a [T]);
pub type BlockMut<'a, T> = (&'static str, usize, usize, &'a mut [T]);

macro_rules! param_blocks {
    ($ty:ident) => {
        impl<T: Scalar> $ty<T> {
            pub fn blocks(&self) -> [Block<'_, T>; 6] {
                let d = self.proj_b.len();
                [
                    ("item_table", self.item_table.rows, self.item_table.cols, &self.item_table.data),
                    ("pool_decay", 1, 1, std::slice::from_ref(&self.pool_decay)),
                    ("proj_w", d, d, &self.proj_w.data),
                    ("proj_b", 1, d, &self.proj_b),
                    ("fuse_p", self.fuse_p.rows, self.fuse_p.cols, &self.fuse_p.data),
                    ("fuse_h", d, d, &self.fuse_h.data),
                ]
            }

            pub fn blocks_mut(&mut self) -> [BlockMut<'_, T>; 6] {
                let d = self.proj_b.len();
                [
                    ("item_table", self.item_table.rows, self.item_table.cols, &mut self.item_table.data),
                    ("pool_decay", 1, 1, std::slice::from_mut(&mut self.pool_decay)),
                    ("proj_w", d, d, &mut self.proj_w.data),
                    ("proj_b", 1, d, &mut self.proj_b),
                    ("fuse_p", self.fuse_p.rows, self.fuse_p.cols, &mut self.fuse_p.data),
                    ("fuse_h", d, d, &mut self.fuse_h.data),
                ]
            }

            pub fn dim(&self) -> usize {
                self.proj_b.len()
            }

            pub fn n_items(&self) -> usize {
                self.item_table.rows
            }

            pub fn sem_dim(&self) -> usize {
                self.fuse_p.rows
            }
        }
    };
}

param_blocks!(EncoderParams);
param_blocks!(BatchGradient);

impl<T: Scalar> EncoderParams<T> {
    /// Uniform `[-0.1, 0.1]` init; `fuse_h` starts at the identity and
    /// `pool_decay` at 0.9.
    pub fn init(n_items: usize, dim: usize, sem_dim: usize, rng: &mut impl Rng) -> Self {
        let item_table = Matrix::uniform(n_items, dim, INIT_RANGE, rng);
        let proj_w = Matrix::uniform(dim, dim, INIT_RANGE, rng);
        let proj_b = Matrix::uniform(1, dim, INIT_RANGE, rng).data;
        let fuse_p = Matrix::uniform(sem_dim, dim, INIT_RANGE, rng);
        Self { item_table, pool_decay: lit(POOL_DECAY_INIT), proj_w, proj_b, fuse_p, fuse_h: Matrix::identity(dim) }
    }

    pub fn zero_grad(&self) -> BatchGradient<T> {
        let d = self.dim();
        BatchGradient {
            item_table: Matrix::zeros(self.n_items(), d),
            pool_decay: T::zero(),
            proj_w: Matrix::zeros(d, d),
            proj_b: vec![T::zero(); d],
            fuse_p: Matrix::zeros(self.sem_dim(), d),
            fuse_h: Matrix::zeros(d, d),
        }
    }

    /// `θ ← θ − lr · g`, then clamps `pool_decay` into its domain.
    pub fn sgd_step(&mut self, grad: &BatchGradient<T>, lr: T) {
        for ((_, _, _, p), (_, _, _, g)) in self.blocks_mut().into_iter().zip(grad.blocks()) {
            for (x, &dx) in p.iter_mut().zip(g) {
                *x = *x - lr * dx;
            }
        }
        self.pool_decay = self.pool_decay.max(lit(POOL_DECAY_MIN)).min(T::one());
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, _, _, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Header `dim d items N`, then one `param name rows cols` block per
    /// tensor with one line of values per row.
    pub fn render_checkpoint(&self) -> String {
        let mut out = format!("dim {} items {}\n", self.dim(), self.n_items());
        for (name, rows, cols, values) in self.blocks() {
            let _ = writeln!(out, "param {name} {rows} {cols}");
            for r in 0..rows {
                let line: Vec<String> = values[r * cols..(r + 1) * cols].iter().map(T::to_string).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse_checkpoint(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(source, 1, "missing header"))?;
        let (dim, n_items) = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["dim", d, "items", n] => (
                d.parse::<usize>().map_err(|_| Error::parse(source, 1, "bad dim"))?,
                n.parse::<usize>().map_err(|_| Error::parse(source, 1, "bad item count"))?,
            ),
            _ => return Err(Error::parse(source, 1, "expected `dim d items N`")),
        };
        let mut blocks: Vec<(String, usize, usize, Vec<T>)> = Vec::new();
        while let Some((idx, line)) = lines.next() {
            let n = idx + 1;
            let (name, rows, cols) = match line.split_whitespace().collect::<Vec<_>>().as_slice() {
                ["param", name, r, c] => (
                    name.to_string(),
                    r.parse::<usize>().map_err(|_| Error::parse(source, n, "bad rows"))?,
                    c.parse::<usize>().map_err(|_| Error::parse(source, n, "bad cols"))?,
                ),
                _ => return Err(Error::parse(source, n, "expected `param name rows cols`")),
            };
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (idx, row) = lines.next().ok_or_else(|| Error::parse(source, n, format!("truncated block {name}")))?;
                let before = values.len();
                for x in row.split_whitespace() {
                    values.push(parse_scalar(x).ok_or_else(|| Error::parse(source, idx + 1, format!("bad float {x:?}")))?);
                }
                if values.len() - before != cols {
                    return Err(Error::parse(source, idx + 1, format!("expected {cols} values")));
                }
            }
            blocks.push((name, rows, cols, values));
        }
        let mut take = |want: &str, rows: Option<usize>, cols: usize| -> Result<Matrix<T>> {
            let pos = blocks
                .iter()
                .position(|b| b.0 == want)
                .ok_or_else(|| Error::parse(source, 0, format!("missing block {want}")))?;
            let (_, r, c, data) = blocks.swap_remove(pos);
            if rows.is_some_and(|rows| rows != r) || c != cols {
                return Err(Error::parse(source, 0, format!("block {want} has shape {r}x{c}")));
            }
            Ok(Matrix { rows: r, cols: c, data })
        };
        let item_table = take("item_table", Some(n_items), dim)?;
        let pool_decay = take("pool_decay", Some(1), 1)?.data[0];
        let proj_w = take("proj_w", Some(dim), dim)?;
        let proj_b = take("proj_b", Some(1), dim)?.data;
        let fuse_p = take("fuse_p", None, dim)?;
        let fuse_h = take("fuse_h", Some(dim), dim)?;
        let params = Self { item_table, pool_decay, proj_w, proj_b, fuse_p, fuse_h };
        if !params.is_finite() {
            return Err(Error::parse(source, 0, "non-finite parameter"));
        }
        Ok(params)
    }
}

impl<T: Scalar> BatchGradient<T> {
    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, _, _, v)| v.iter().all(|x| x.is_finite()))
    }
}
