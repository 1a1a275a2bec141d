//! Stage orchestration over a run directory.
//!
//! A run directory is named by the config digest and seeds. Each stage
//! writes its outputs and then an empty `<stage>.done` marker; a finished
//! stage is skipped unless forced, and forcing a stage invalidates the ones
//! downstream of it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{hex, BackendKind, CorpusSource, EmbedderKind, RunConfig};
use crate::corpus::{load_interactions, partition_head_tail, split_leave_one_out, Corpus, ItemId, SplitCorpus, UserId};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, report, MetricsReport, UserRank};
use crate::gaa::{assign_groups, build_neighbor_sets, parse_neighbor_sets, render_neighbor_sets, NeighborSet};
use crate::hsu::{
    parse_final_summaries, render_traces, ChatBackend, CountingBackend, HsuEngine, HttpChatBackend, MockBackend,
    PromptSet,
};
use crate::recommender::{train, EncoderParams};
use crate::semantics::{embed_summary, EmbeddingStore, EndpointEmbedder, HashEmbedder, TextEmbedder};
use crate::synth::generate;

pub const CORPUS_FILE: &str = "corpus.tsv";
pub const TRACES_FILE: &str = "traces.tsv";
pub const USAGE_FILE: &str = "hsu_usage.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const GROUPS_FILE: &str = "groups.tsv";
pub const NEIGHBORS_FILE: &str = "neighbors.tsv";
pub const REPORT_TABLE: &str = "report.txt";
pub const REPORT_TSV: &str = "report.tsv";
pub const SWEEP_FILE: &str = "sweep.tsv";
pub const CONFIG_FILE: &str = "config.txt";

pub fn checkpoint_file(seed: u64) -> String {
    format!("checkpoint-{seed}.txt")
}

pub fn train_log_file(seed: u64) -> String {
    format!("trainlog-{seed}.tsv")
}

pub fn ranks_file(seed: u64) -> String {
    format!("ranks-{seed}.tsv")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Hsu,
    Embed,
    Group,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Ingest, Stage::Hsu, Stage::Embed, Stage::Group, Stage::Train, Stage::Eval];

    /// Subcommand name.
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Hsu => "hsu",
            Stage::Embed => "embed",
            Stage::Group => "group",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }

    pub fn marker(self) -> String {
        format!("{}.done", self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

pub struct Pipeline {
    config: RunConfig,
    dir: PathBuf,
    force: bool,
    auto: bool,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Pipeline {
    /// Validates the config and creates the run directory.
    pub fn new(config: RunConfig, force: bool, auto: bool) -> Result<Self> {
        config.validate()?;
        let dir = Path::new(&config.run.out_dir).join(config.run_dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join(CONFIG_FILE), &config.render_portable())?;
        Ok(Self { config, dir, force, auto })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.path(&stage.marker()).exists()
    }

    fn upstream(&self, stage: Stage) -> Option<Stage> {
        match stage {
            Stage::Ingest => None,
            Stage::Hsu => Some(Stage::Ingest),
            Stage::Embed => Some(Stage::Hsu),
            Stage::Group => Some(Stage::Embed),
            Stage::Train if self.config.train.hsu_enabled => Some(Stage::Group),
            Stage::Train => Some(Stage::Ingest),
            Stage::Eval => Some(Stage::Train),
        }
    }

    /// Runs `stage`, first producing missing upstream stages when `auto` is
    /// set. Without `auto` a missing upstream stage is a dependency error.
    pub fn run(&self, stage: Stage) -> Result<Outcome> {
        self.run_inner(stage, self.force)
    }

    fn run_inner(&self, stage: Stage, force: bool) -> Result<Outcome> {
        if let Some(up) = self.upstream(stage) {
            if !self.is_done(up) {
                if !self.auto {
                    return Err(Error::Dependency { command: up.name(), path: self.path(&up.marker()) });
                }
                self.run_inner(up, false)?;
            }
        }
        if self.is_done(stage) && !force {
            log::info!("{}: already complete, skipping", stage.name());
            return Ok(Outcome::Skipped);
        }
        for later in Stage::ALL.into_iter().filter(|s| *s >= stage) {
            let marker = self.path(&later.marker());
            if marker.exists() {
                fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
            }
        }
        log::info!("{}: running in {}", stage.name(), self.dir.display());
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Hsu => self.hsu(),
            Stage::Embed => self.embed(),
            Stage::Group => self.group(),
            Stage::Train => self.train(),
            Stage::Eval => self.eval().map(|_| ()),
        }?;
        write(&self.path(&stage.marker()), "")?;
        Ok(Outcome::Ran)
    }

    fn ingest(&self) -> Result<()> {
        let corpus = match self.config.corpus.source {
            CorpusSource::Synthetic => {
                let (mut c, _) = generate(&self.config.corpus.synth)?;
                c.filter_min_interactions(crate::corpus::MIN_SEQUENCE_LEN);
                c
            }
            CorpusSource::File => load_interactions(&self.config.corpus.path)?,
        };
        corpus.validate()?;
        write(&self.path(CORPUS_FILE), &corpus.to_tsv())
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        let path = self.path(CORPUS_FILE);
        let corpus = Corpus::parse_tsv(&read(&path)?, &path.display().to_string())?;
        if corpus.users.is_empty() {
            return Err(Error::EmptyCorpus { min_len: crate::corpus::MIN_SEQUENCE_LEN });
        }
        Ok(corpus)
    }

    pub fn load_split(&self) -> Result<SplitCorpus> {
        split_leave_one_out(&self.load_corpus()?)
    }

    fn backend(&self) -> Result<Box<dyn ChatBackend>> {
        Ok(match self.config.hsu.backend {
            BackendKind::Mock => Box::new(MockBackend),
            BackendKind::Http => Box::new(HttpChatBackend::new(self.config.chat_config(self.config.eval.seeds[0]))?),
        })
    }

    fn hsu(&self) -> Result<()> {
        let corpus = self.load_corpus()?;
        let prompts = PromptSet::v1();
        let backend = CountingBackend::new(self.backend()?);
        let engine = HsuEngine::new(&corpus, &prompts, &backend, self.config.hsu_config());
        let sequences: Vec<_> = corpus.users.values().cloned().collect();
        let traces = engine.infer_traces(&sequences)?;
        write(&self.path(TRACES_FILE), &render_traces(&traces))?;
        let usage = backend.stats();
        write(
            &self.path(USAGE_FILE),
            &format!("calls\t{}\nprompt_tokens\t{}\nreply_tokens\t{}\n", usage.calls, usage.prompt_tokens, usage.reply_tokens),
        )
    }

    fn embedder(&self) -> Result<Box<dyn TextEmbedder>> {
        Ok(match self.config.semantics.embedder {
            EmbedderKind::Hash => {
                Box::new(HashEmbedder { dim: self.config.semantics.dim, seed: self.config.semantics.hash_seed })
            }
            EmbedderKind::Endpoint => Box::new(EndpointEmbedder::new(self.config.endpoint_config())?),
        })
    }

    fn embed(&self) -> Result<()> {
        let path = self.path(TRACES_FILE);
        let summaries = parse_final_summaries(&read(&path)?, &path.display().to_string())?;
        let embedder = self.embedder()?;
        let mut store = EmbeddingStore::<f64>::new(embedder.dim());
        for (&user, state) in &summaries {
            store.insert(embed_summary(user, state, embedder.as_ref())?)?;
        }
        write(&self.path(EMBEDDINGS_FILE), &store.render())
    }

    pub fn load_embeddings(&self) -> Result<EmbeddingStore<f64>> {
        let path = self.path(EMBEDDINGS_FILE);
        EmbeddingStore::parse(&read(&path)?, &path.display().to_string())
    }

    fn group(&self) -> Result<()> {
        let corpus = self.load_corpus()?;
        let store = self.load_embeddings()?;
        let gaa = self.config.gaa_config();
        let groups = assign_groups(&corpus.user_counts(), gaa.active_fraction)?;
        let sets = build_neighbor_sets(&groups, &gaa, &store)?;
        let mut text = String::new();
        for (u, g) in &groups {
            let _ = writeln!(text, "{u}\t{g}");
        }
        write(&self.path(GROUPS_FILE), &text)?;
        write(&self.path(NEIGHBORS_FILE), &render_neighbor_sets(sets.values()))
    }

    pub fn load_neighbors(&self) -> Result<BTreeMap<UserId, NeighborSet<f64>>> {
        let path = self.path(NEIGHBORS_FILE);
        parse_neighbor_sets(&read(&path)?, &path.display().to_string())
    }

    fn train(&self) -> Result<()> {
        let split = self.load_split()?;
        let hsu_on = self.config.train.hsu_enabled;
        let store = if hsu_on { Some(self.load_embeddings()?) } else { None };
        let neighbors = if hsu_on && self.config.train.gaa_enabled { Some(self.load_neighbors()?) } else { None };
        for &seed in &self.config.eval.seeds {
            let model = train(&split, &self.config.train_config(seed), store.as_ref(), neighbors.as_ref())?;
            write(&self.path(&checkpoint_file(seed)), &model.params.render_checkpoint())?;
            write(&self.path(&train_log_file(seed)), &model.log.render())?;
        }
        Ok(())
    }

    pub fn load_checkpoint(&self, seed: u64) -> Result<EncoderParams<f64>> {
        let path = self.path(&checkpoint_file(seed));
        EncoderParams::parse_checkpoint(&read(&path)?, &path.display().to_string())
    }

    fn eval(&self) -> Result<MetricsReport> {
        let corpus = self.load_corpus()?;
        let split = split_leave_one_out(&corpus)?;
        let partition = partition_head_tail(&corpus, self.config.corpus.head_fraction)?;
        let store = if self.config.train.hsu_enabled { Some(self.load_embeddings()?) } else { None };
        let mut runs: Vec<(u64, Vec<UserRank>)> = Vec::new();
        for &seed in &self.config.eval.seeds {
            let params = self.load_checkpoint(seed)?;
            let ranks = evaluate_model(&params, &split, store.as_ref(), self.config.train.fusion_mode, seed)?;
            let mut text = String::new();
            for r in &ranks {
                let _ = writeln!(text, "{}\t{}\t{}", r.user_id, r.ground_truth, r.rank);
            }
            write(&self.path(&ranks_file(seed)), &text)?;
            runs.push((seed, ranks));
        }
        let metrics = report(&runs, &partition, self.config.eval.k)?;
        write(&self.path(REPORT_TABLE), &metrics.render_table())?;
        write(&self.path(REPORT_TSV), &metrics.render_tsv())?;
        Ok(metrics)
    }

    pub fn load_report(&self) -> Result<MetricsReport> {
        let path = self.path(REPORT_TSV);
        let mut r = MetricsReport::parse_tsv(&read(&path)?, &path.display().to_string())?;
        r.seeds = self.config.eval.seeds.clone();
        Ok(r)
    }

    pub fn load_ranks(&self, seed: u64) -> Result<Vec<UserRank>> {
        let path = self.path(&ranks_file(seed));
        let source = path.display().to_string();
        read(&path)?
            .lines()
            .enumerate()
            .map(|(i, line)| {
                let f: Vec<&str> = line.split('\t').collect();
                let num = |s: &str| s.trim().parse::<u64>().map_err(|e| Error::parse(&source, i + 1, e.to_string()));
                match f.as_slice() {
                    [u, g, r] => Ok(UserRank { user_id: num(u)? as UserId, ground_truth: num(g)? as ItemId, rank: num(r)? as usize }),
                    _ => Err(Error::parse(&source, i + 1, "expected user, ground truth and rank")),
                }
            })
            .collect()
    }

    /// Report for one evaluated seed, from its saved ranks.
    pub fn seed_report(&self, seed: u64) -> Result<MetricsReport> {
        let corpus = self.load_corpus()?;
        let partition = partition_head_tail(&corpus, self.config.corpus.head_fraction)?;
        report(&[(seed, self.load_ranks(seed)?)], &partition, self.config.eval.k)
    }

    /// SHA-256 over every regular file in the run directory, in name order.
    pub fn digest(&self) -> Result<String> {
        run_digest(&self.dir)
    }
}

pub fn run_digest(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut hasher = Sha256::new();
    for path in names {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(fs::read(&path).map_err(|e| Error::io(&path, e))?);
        hasher.update([0u8]);
    }
    Ok(hex(&hasher.finalize()))
}

/// One cell of a robustness sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub label: String,
    pub dir: PathBuf,
    pub report: MetricsReport,
}

/// Runs the full pipeline for every `split × tau` cell and every stage
/// length (other knobs at their configured values), then writes
/// `sweep.tsv` (`cell  group  metric  value`) into the base run directory.
pub fn sweep(base: &RunConfig, force: bool) -> Result<(PathBuf, Vec<SweepCell>)> {
    let mut variants: Vec<(String, RunConfig)> = Vec::new();
    for &split in &base.sweep.splits {
        for &tau in &base.sweep.percentile_taus {
            let mut c = base.clone();
            c.gaa.active_fraction = split;
            c.gaa.percentile_tau = tau;
            variants.push((format!("split={split} tau={tau}"), c));
        }
    }
    for &stage_len in &base.sweep.stage_lens {
        let mut c = base.clone();
        c.hsu.stage_len = stage_len;
        variants.push((format!("stage_len={stage_len}"), c));
    }
    let base_run = Pipeline::new(base.clone(), false, true)?;
    let mut cells = Vec::with_capacity(variants.len());
    let mut summary = String::new();
    for (label, config) in variants {
        let p = Pipeline::new(config, force, true)?;
        p.run(Stage::Eval)?;
        let report = p.load_report()?;
        for (group, m) in &report.groups {
            let _ = writeln!(summary, "{label}\t{group}\thr@{}\t{}", report.k, m.hr);
            let _ = writeln!(summary, "{label}\t{group}\tndcg@{}\t{}", report.k, m.ndcg);
        }
        cells.push(SweepCell { label, dir: p.dir().to_path_buf(), report });
    }
    write(&base_run.path(SWEEP_FILE), &summary)?;
    Ok((base_run.dir().to_path_buf(), cells))
}
