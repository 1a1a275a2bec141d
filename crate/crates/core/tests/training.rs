//! Training on a small synthetic corpus: descent, determinism, fusion modes.

use hsuga::pipeline::{checkpoint_file, train_log_file};
use hsuga::recommender::{train, FusionMode, TrainConfig, TrainLog};
use hsuga::{Pipeline, RunConfig, Stage};

fn small_config(out: &std::path::Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.run.out_dir = out.display().to_string();
    c.corpus.synth.users = 300;
    c.eval.seeds = vec![42];
    c.train.epochs = 8;
    c
}

fn read(p: std::path::PathBuf) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn epoch_loss_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path()), false, true).unwrap();
    p.run(Stage::Train).unwrap();
    let log = TrainLog::parse(&read(p.path(&train_log_file(42))), "log").unwrap();
    assert_eq!(log.epochs.len(), 8);
    for w in log.epochs.windows(2) {
        assert!(w[1].rank < w[0].rank, "rank loss rose: {:?} -> {:?}", w[0], w[1]);
    }
    assert!(log.epochs[0].sd > 0.0);
    for e in &log.epochs {
        assert!((e.total - (e.rank + 0.1 * e.sd)).abs() < 1e-9);
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path()), false, true).unwrap();
    p.run(Stage::Group).unwrap();
    let split = p.load_split().unwrap();
    let store = p.load_embeddings().unwrap();
    let neighbors = p.load_neighbors().unwrap();
    let config = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let a = train(&split, &config, Some(&store), Some(&neighbors)).unwrap();
    let b = train(&split, &config, Some(&store), Some(&neighbors)).unwrap();
    assert_eq!(a.params.render_checkpoint(), b.params.render_checkpoint());
    assert_eq!(a.log, b.log);
    let c = train(&split, &TrainConfig { seed: 43, ..config.clone() }, Some(&store), Some(&neighbors)).unwrap();
    assert_ne!(a.params.render_checkpoint(), c.params.render_checkpoint());

    p.run(Stage::Train).unwrap();
    let saved = read(p.path(&checkpoint_file(42)));
    let reloaded = p.load_checkpoint(42).unwrap();
    assert_eq!(reloaded.render_checkpoint(), saved);
}

#[test]
fn every_fusion_mode_trains_without_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path()), false, true).unwrap();
    p.run(Stage::Embed).unwrap();
    let split = p.load_split().unwrap();
    let store = p.load_embeddings().unwrap();
    for mode in [FusionMode::None, FusionMode::Add, FusionMode::ConcatProject] {
        let config = TrainConfig { epochs: 3, gaa_enabled: false, fusion_mode: mode, ..TrainConfig::default() };
        let m = train(&split, &config, Some(&store), None).unwrap();
        assert!(m.params.is_finite());
        assert!(m.log.epochs[2].rank < m.log.epochs[0].rank, "{mode}: {:?}", m.log);
        assert!(m.log.epochs.iter().all(|e| e.sd == 0.0));
    }
}

#[test]
fn alignment_without_neighbors_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path()), false, true).unwrap();
    p.run(Stage::Ingest).unwrap();
    let split = p.load_split().unwrap();
    assert!(train::<f64>(&split, &TrainConfig::default(), None, None).is_err());
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path()), false, true).unwrap();
    p.run(Stage::Ingest).unwrap();
    let split = p.load_split().unwrap();
    let config = TrainConfig { learning_rate: 1e200, gaa_enabled: false, epochs: 5, ..TrainConfig::default() };
    match train::<f64>(&split, &config, None, None) {
        Err(e @ hsuga::Error::Divergence { .. }) => assert_eq!(e.exit_code(), 7),
        other => panic!("expected divergence, got {:?}", other.map(|m| m.log)),
    }
}
