//! Run configuration: a line-oriented `key = value` file with `[section]`
//! headers. Every key has a default, unknown keys are rejected and
//! `parse(render(c)) == c`.
//!
//! Backend credentials never appear here; `token_env` names the environment
//! variable that holds them.

use std::fmt::{Display, Write as _};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gaa::GaaConfig;
use crate::hsu::{EditKind, HsuConfig, HttpChatConfig, OperationSet};
use crate::recommender::{FusionMode, TrainConfig, DEFAULT_DIM};
use crate::semantics::{EndpointConfig, HashEmbedder, DEFAULT_HASH_DIM};
use crate::synth::SynthConfig;

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
        pub enum $name {
            #[default]
            $($variant),+
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("unknown value {s:?}; expected one of: {}", [$($text),+].join(", "))),
                }
            }
        }
    };
}

string_enum!(CorpusSource { Synthetic => "synthetic", File => "file" });
string_enum!(BackendKind { Mock => "mock", Http => "http" });
string_enum!(EmbedderKind { Hash => "hash", Endpoint => "endpoint" });

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render_value(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse::<$t>().map_err(|e| format!("{s:?}: {e}"))
            }
            fn render_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

scalar_value!(f64, usize, u64, bool, String, FusionMode, CorpusSource, BackendKind, EmbedderKind);

impl<T: FromStr + Display> ConfigValue for Vec<T>
where
    T::Err: Display,
{
    fn parse_value(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| x.parse::<T>().map_err(|e| format!("{x:?}: {e}")))
            .collect()
    }

    fn render_value(&self) -> String {
        self.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSection {
    pub source: CorpusSource,
    /// Interaction TSV, used when `source = file`.
    pub path: String,
    /// Head share of users and items in evaluation breakdowns.
    pub head_fraction: f64,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HsuSection {
    pub stage_len: usize,
    pub retries: usize,
    pub backend: BackendKind,
    pub url: String,
    pub model: String,
    pub token_env: String,
    pub timeout_secs: u64,
    pub disable_add: bool,
    pub disable_delete: bool,
    pub disable_update: bool,
    pub disable_retain: bool,
    pub no_interest_updater: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticsSection {
    pub embedder: EmbedderKind,
    pub dim: usize,
    pub hash_seed: u64,
    pub url: String,
    pub model: String,
    pub token_env: String,
    pub timeout_secs: u64,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaaSection {
    pub active_fraction: f64,
    pub k_longtail: usize,
    pub k_active: usize,
    pub percentile_tau: f64,
    pub alpha: f64,
    pub no_group_aware: bool,
    pub no_active_filter: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub fusion_mode: FusionMode,
    pub dim: usize,
    pub hsu_enabled: bool,
    pub gaa_enabled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    /// One model is trained and evaluated per seed; reports average them.
    pub seeds: Vec<u64>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub splits: Vec<f64>,
    pub percentile_taus: Vec<f64>,
    pub stage_lens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub out_dir: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub hsu: HsuSection,
    pub semantics: SemanticsSection,
    pub gaa: GaaSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hsu = HsuConfig::default();
        let gaa = GaaConfig::default();
        let train = TrainConfig::default();
        Self {
            corpus: CorpusSection {
                source: CorpusSource::Synthetic,
                path: String::new(),
                head_fraction: 0.2,
                synth: SynthConfig::default(),
            },
            hsu: HsuSection {
                stage_len: hsu.stage_len,
                retries: hsu.retries,
                backend: BackendKind::Mock,
                url: "http://127.0.0.1:8000/v1/chat/completions".into(),
                model: "gpt-4o-mini".into(),
                token_env: "HSUGA_CHAT_TOKEN".into(),
                timeout_secs: 60,
                disable_add: false,
                disable_delete: false,
                disable_update: false,
                disable_retain: false,
                no_interest_updater: false,
            },
            semantics: SemanticsSection {
                embedder: EmbedderKind::Hash,
                dim: DEFAULT_HASH_DIM,
                hash_seed: HashEmbedder::default().seed,
                url: "http://127.0.0.1:8000/v1/embeddings".into(),
                model: "text-embedding-3-small".into(),
                token_env: "HSUGA_EMBED_TOKEN".into(),
                timeout_secs: 60,
                retries: 2,
            },
            gaa: GaaSection {
                active_fraction: gaa.active_fraction,
                k_longtail: gaa.k_longtail,
                k_active: gaa.k_active,
                percentile_tau: gaa.percentile_tau,
                alpha: gaa.alpha,
                no_group_aware: false,
                no_active_filter: false,
            },
            train: TrainSection {
                learning_rate: train.learning_rate,
                epochs: train.epochs,
                batch_size: train.batch_size,
                negatives_per_positive: train.negatives_per_positive,
                fusion_mode: train.fusion_mode,
                dim: DEFAULT_DIM,
                hsu_enabled: true,
                gaa_enabled: true,
            },
            eval: EvalSection { seeds: vec![42, 43, 44], k: crate::eval::DEFAULT_K },
            sweep: SweepSection {
                splits: vec![0.15, 0.20, 0.25],
                percentile_taus: vec![25.0, 50.0, 75.0],
                stage_lens: vec![13, 9, 7],
            },
            run: RunSection { out_dir: "runs".into() },
        }
    }
}

macro_rules! config_fields {
    ($($sec:literal . $key:literal => $($field:ident).+ ;)*) => {
        impl RunConfig {
            /// Every `(section, key)` pair, in file order.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[$(($sec, $key)),*];

            fn set_field(&mut self, sec: &str, key: &str, value: &str) -> Result<(), String> {
                match (sec, key) {
                    $(($sec, $key) => self.$($field).+ = ConfigValue::parse_value(value)?,)*
                    _ => return Err(format!("unknown key `{key}` in section [{sec}]")),
                }
                Ok(())
            }

            /// Rendered value of one key.
            pub fn get(&self, sec: &str, key: &str) -> Option<String> {
                match (sec, key) {
                    $(($sec, $key) => Some(self.$($field).+.render_value()),)*
                    _ => None,
                }
            }
        }
    };
}

config_fields! {
    "corpus"."source" => corpus.source;
    "corpus"."path" => corpus.path;
    "corpus"."head_fraction" => corpus.head_fraction;
    "corpus"."synth_users" => corpus.synth.users;
    "corpus"."synth_active_fraction" => corpus.synth.active_fraction;
    "corpus"."synth_active_len" => corpus.synth.active_len;
    "corpus"."synth_tail_len" => corpus.synth.tail_len;
    "corpus"."synth_clusters" => corpus.synth.clusters;
    "corpus"."synth_items_per_cluster" => corpus.synth.items_per_cluster;
    "corpus"."synth_genres_per_cluster" => corpus.synth.genres_per_cluster;
    "corpus"."synth_noise" => corpus.synth.noise;
    "corpus"."synth_popularity_exponent" => corpus.synth.popularity_exponent;
    "corpus"."synth_seed" => corpus.synth.seed;
    "hsu"."stage_len" => hsu.stage_len;
    "hsu"."retries" => hsu.retries;
    "hsu"."backend" => hsu.backend;
    "hsu"."url" => hsu.url;
    "hsu"."model" => hsu.model;
    "hsu"."token_env" => hsu.token_env;
    "hsu"."timeout_secs" => hsu.timeout_secs;
    "hsu"."disable_add" => hsu.disable_add;
    "hsu"."disable_delete" => hsu.disable_delete;
    "hsu"."disable_update" => hsu.disable_update;
    "hsu"."disable_retain" => hsu.disable_retain;
    "hsu"."no_interest_updater" => hsu.no_interest_updater;
    "semantics"."embedder" => semantics.embedder;
    "semantics"."dim" => semantics.dim;
    "semantics"."hash_seed" => semantics.hash_seed;
    "semantics"."url" => semantics.url;
    "semantics"."model" => semantics.model;
    "semantics"."token_env" => semantics.token_env;
    "semantics"."timeout_secs" => semantics.timeout_secs;
    "semantics"."retries" => semantics.retries;
    "gaa"."active_fraction" => gaa.active_fraction;
    "gaa"."k_longtail" => gaa.k_longtail;
    "gaa"."k_active" => gaa.k_active;
    "gaa"."percentile_tau" => gaa.percentile_tau;
    "gaa"."alpha" => gaa.alpha;
    "gaa"."no_group_aware" => gaa.no_group_aware;
    "gaa"."no_active_filter" => gaa.no_active_filter;
    "train"."learning_rate" => train.learning_rate;
    "train"."epochs" => train.epochs;
    "train"."batch_size" => train.batch_size;
    "train"."negatives_per_positive" => train.negatives_per_positive;
    "train"."fusion_mode" => train.fusion_mode;
    "train"."dim" => train.dim;
    "train"."hsu_enabled" => train.hsu_enabled;
    "train"."gaa_enabled" => train.gaa_enabled;
    "eval"."seeds" => eval.seeds;
    "eval"."k" => eval.k;
    "sweep"."splits" => sweep.splits;
    "sweep"."percentile_taus" => sweep.percentile_taus;
    "sweep"."stage_lens" => sweep.stage_lens;
    "run"."out_dir" => run.out_dir;
}

/// Named ablation presets and the single flag each one sets.
pub const ABLATIONS: &[(&str, &str, &str)] = &[
    ("w/o-add", "hsu.disable_add", "remove the Add edit operation"),
    ("w/o-delete", "hsu.disable_delete", "remove the Delete edit operation"),
    ("w/o-update", "hsu.disable_update", "remove the Update edit operation"),
    ("w/o-retain", "hsu.disable_retain", "remove the Retain edit operation"),
    ("w/o-interest-updater", "hsu.no_interest_updater", "regenerate summaries from full history each stage"),
    ("w/o-group-aware", "gaa.no_group_aware", "same neighbor count and no filter for every user"),
    ("w/o-active-filter", "gaa.no_active_filter", "keep group-aware neighbor counts, drop the Pearson filter"),
];

impl RunConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let n = idx + 1;
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !Self::KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(Error::Config(format!("{source}:{n}: unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{source}:{n}: expected `key = value`")))?;
            if section.is_empty() {
                return Err(Error::Config(format!("{source}:{n}: key outside any [section]")));
            }
            config.set_field(&section, key.trim(), value.trim()).map_err(|e| Error::Config(format!("{source}:{n}: {e}")))?;
        }
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn render(&self) -> String {
        self.render_sections(true)
    }

    /// Rendering without the `[run]` section: what a run directory records.
    pub fn render_portable(&self) -> String {
        self.render_sections(false)
    }

    fn render_sections(&self, with_run: bool) -> String {
        let mut out = String::new();
        let mut current = "";
        for &(sec, key) in Self::KEYS.iter().filter(|(sec, _)| with_run || *sec != "run") {
            if sec != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{sec}]");
                current = sec;
            }
            let _ = writeln!(out, "{key} = {}", self.get(sec, key).unwrap_or_default());
        }
        out
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not `section.key=value`")))?;
        let (sec, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override key {path:?} is not `section.key`")))?;
        self.set_field(sec, key, value.trim()).map_err(|e| Error::Config(format!("override {assignment:?}: {e}")))
    }

    pub fn apply_ablation(&mut self, name: &str) -> Result<()> {
        let (_, flag, _) = ABLATIONS.iter().find(|(n, _, _)| *n == name).ok_or_else(|| {
            let names: Vec<&str> = ABLATIONS.iter().map(|a| a.0).collect();
            Error::Config(format!("unknown ablation {name:?}; expected one of: {}", names.join(", ")))
        })?;
        self.apply_override(&format!("{flag}=true"))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.corpus.head_fraction > 0.0 && self.corpus.head_fraction < 1.0) {
            return Err(Error::Config("corpus.head_fraction must lie in (0, 1)".into()));
        }
        if self.corpus.source == CorpusSource::File && self.corpus.path.is_empty() {
            return Err(Error::Config("corpus.source = file needs corpus.path".into()));
        }
        if self.corpus.source == CorpusSource::Synthetic {
            self.corpus.synth.validate()?;
        }
        if self.hsu.stage_len == 0 {
            return Err(Error::Config("hsu.stage_len must be at least 1".into()));
        }
        if self.hsu_config().operations.is_empty() {
            return Err(Error::Config("every edit operation is disabled".into()));
        }
        if self.semantics.dim == 0 {
            return Err(Error::Config("semantics.dim must be at least 1".into()));
        }
        if self.eval.seeds.is_empty() || self.eval.k == 0 {
            return Err(Error::Config("eval.seeds must be non-empty and eval.k positive".into()));
        }
        self.gaa_config().validate()?;
        self.train_config(self.eval.seeds[0]).validate()
    }

    pub fn operations(&self) -> OperationSet {
        let mut ops = OperationSet::default();
        for (off, kind) in [
            (self.hsu.disable_add, EditKind::Add),
            (self.hsu.disable_delete, EditKind::Delete),
            (self.hsu.disable_update, EditKind::Update),
            (self.hsu.disable_retain, EditKind::Retain),
        ] {
            if off {
                ops = ops.without(kind);
            }
        }
        ops
    }

    pub fn hsu_config(&self) -> HsuConfig {
        HsuConfig {
            stage_len: self.hsu.stage_len,
            retries: self.hsu.retries,
            operations: self.operations(),
            interest_updater: !self.hsu.no_interest_updater,
        }
    }

    pub fn chat_config(&self, seed: u64) -> HttpChatConfig {
        HttpChatConfig {
            url: self.hsu.url.clone(),
            model: self.hsu.model.clone(),
            token_env: self.hsu.token_env.clone(),
            timeout_secs: self.hsu.timeout_secs,
            seed,
        }
    }

    pub fn endpoint_config(&self) -> EndpointConfig {
        EndpointConfig {
            url: self.semantics.url.clone(),
            model: self.semantics.model.clone(),
            token_env: self.semantics.token_env.clone(),
            dim: self.semantics.dim,
            retries: self.semantics.retries,
            timeout_secs: self.semantics.timeout_secs,
        }
    }

    pub fn gaa_config(&self) -> GaaConfig {
        GaaConfig {
            active_fraction: self.gaa.active_fraction,
            k_longtail: self.gaa.k_longtail,
            k_active: self.gaa.k_active,
            percentile_tau: self.gaa.percentile_tau,
            alpha: self.gaa.alpha,
            group_aware_enabled: !self.gaa.no_group_aware,
            active_filter_enabled: !self.gaa.no_active_filter,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            alpha: self.gaa.alpha,
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            negatives_per_positive: self.train.negatives_per_positive,
            seed,
            fusion_mode: self.train.fusion_mode,
            hsu_enabled: self.train.hsu_enabled,
            gaa_enabled: self.train.gaa_enabled,
            dim: self.train.dim,
        }
    }

    /// SHA-256 of the rendered config without the `[run]` section, hex.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.render_portable().as_bytes()))
    }

    /// `<first 12 hex digits of the digest>-seed<seeds joined by _>`.
    pub fn run_dir_name(&self) -> String {
        let seeds: Vec<String> = self.eval.seeds.iter().map(u64::to_string).collect();
        format!("{}-seed{}", &self.digest()[..12], seeds.join("_"))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trip() {
        let c = RunConfig::default();
        let text = c.render();
        assert!(text.starts_with("[corpus]\nsource = synthetic\n"));
        assert_eq!(RunConfig::parse(&text, "mem").unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn modified_round_trip() {
        let mut c = RunConfig::default();
        c.apply_override("gaa.percentile_tau=75").unwrap();
        c.apply_override("eval.seeds = 1, 2").unwrap();
        c.apply_override("train.fusion_mode=concat_project").unwrap();
        c.apply_override("corpus.synth_noise=0.3").unwrap();
        c.apply_override("run.out_dir=/tmp/x y").unwrap();
        assert_eq!(c.eval.seeds, vec![1, 2]);
        assert_eq!(RunConfig::parse(&c.render(), "mem").unwrap(), c);
    }

    #[test]
    fn rejects_unknown() {
        assert!(matches!(RunConfig::parse("[gaa]\nbogus = 1\n", "mem"), Err(Error::Config(_))));
        assert!(RunConfig::parse("[nope]\n", "mem").is_err());
        assert!(RunConfig::parse("alpha = 1\n", "mem").is_err());
        assert!(RunConfig::parse("[gaa]\nalpha = x\n", "mem").is_err());
        assert!(RunConfig::parse("[hsu]\napi_key = secret\n", "mem").is_err());
        let mut c = RunConfig::default();
        assert!(c.apply_override("gaa.k_active").is_err());
        assert!(c.apply_ablation("w/o-everything").is_err());
    }

    #[test]
    fn comments_and_partial_files() {
        let c = RunConfig::parse("# run\n[gaa]\nalpha = 0.5 # weight\n\n[hsu]\nstage_len=7\n", "mem").unwrap();
        assert_eq!(c.gaa.alpha, 0.5);
        assert_eq!(c.hsu.stage_len, 7);
        assert_eq!(c.train, RunConfig::default().train);
    }

    #[test]
    fn ablations_map_to_distinct_flags() {
        let base = RunConfig::default();
        let mut seen = Vec::new();
        for (name, flag, _) in ABLATIONS {
            let mut c = base.clone();
            c.apply_ablation(name).unwrap();
            let changed: Vec<&str> = RunConfig::KEYS
                .iter()
                .filter(|(s, k)| c.get(s, k) != base.get(s, k))
                .map(|(_, k)| *k)
                .collect();
            assert_eq!(changed.len(), 1, "{name}");
            assert!(flag.ends_with(changed[0]));
            assert!(!seen.contains(&changed[0]));
            seen.push(changed[0]);
        }
        let mut c = base.clone();
        c.apply_ablation("w/o-retain").unwrap();
        assert!(!c.operations().contains(EditKind::Retain));
        let mut c = base;
        c.apply_ablation("w/o-group-aware").unwrap();
        assert!(!c.gaa_config().group_aware_enabled);
    }

    #[test]
    fn digest_tracks_content_not_out_dir() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.run.out_dir = "elsewhere".into();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.run_dir_name(), b.run_dir_name());
        b.gaa.alpha = 0.5;
        assert_ne!(a.digest(), b.digest());
        assert!(a.run_dir_name().ends_with("-seed42_43_44"));
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn portable_render_drops_only_run() {
        let mut c = RunConfig::default();
        c.gaa.alpha = 0.3;
        c.run.out_dir = "/somewhere".into();
        let text = c.render_portable();
        assert!(!text.contains("[run]") && !text.contains("/somewhere"));
        let back = RunConfig::parse(&text, "mem").unwrap();
        assert_eq!(back.gaa.alpha, 0.3);
        assert_eq!(back.digest(), c.digest());
    }
}
