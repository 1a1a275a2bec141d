//! Fixtures and checkers for interest traces.

use hsuga::corpus::{Corpus, InteractionSequence};
use hsuga::hsu::{render_traces, OperationSet, PromptSet, StepAction};
use hsuga::synth::{generate, SynthConfig};
use hsuga::{EditKind, HsuConfig, HsuEngine, InterestTrace, MockBackend};

/// Steam user over four stages. Stage 0 seeds the interest set the user
/// holds when those stages begin.
pub const CASE_STAGES: [&[(&str, &[&str])]; 5] = [
    &[
        ("Earlier Action Game", &["Action"]),
        ("Earlier Adventure Game", &["Adventure"]),
        ("Earlier Indie Game", &["Indie"]),
        ("Earlier Strategy Game", &["Strategy"]),
        ("Earlier Simulation Game", &["Simulation"]),
    ],
    &[
        ("Planetary Annihilation: TITANS", &["Strategy", "Simulation"]),
        ("Far Cry 4", &["Action", "Adventure"]),
        ("Trine Enchanted Edition", &["Indie", "Adventure"]),
    ],
    &[
        ("Planetbase", &["Indie", "Simulation", "Strategy"]),
        ("Fallout 4", &["RPG", "Adventure"]),
        ("Undertale", &["Indie", "RPG"]),
        ("Next Car Game: Wreckfest", &["Racing", "Simulation"]),
    ],
    &[
        ("Trine 3", &["Action", "Adventure", "Indie"]),
        ("Just Cause 3", &["Action", "Adventure"]),
        ("Blitzkrieg 3", &["Strategy"]),
        ("Outlast", &["Action", "Adventure", "Indie", "Horror"]),
    ],
    &[
        ("Iron Snout", &["Indie", "Action"]),
        ("Age of Empires II HD", &["Strategy"]),
        ("Life is Strange", &["Adventure"]),
        ("Risk of Rain", &["Indie", "Action", "RPG"]),
        ("Total War Battles: KINGDOM", &["Strategy"]),
    ],
];

/// Fashion user, genre-labelled. Stage 0 seeds tops, skirts and accessories.
pub const FASHION_STAGES: [&[(&str, &[&str])]; 5] = [
    &[
        ("Plus-size Tunic Top", &["Women's tops"]),
        ("Pleated Midi Skirt", &["Skirts"]),
        ("Beaded Bracelet", &["Accessories"]),
    ],
    &[
        ("3D Animal Lion Print Long Sleeve T-shirt", &["Women's tops"]),
        ("Solid V-neck Long Sleeve Chiffon Shirt", &["Women's tops"]),
    ],
    &[
        ("Silver Plated Chain Heart Key Pendant Bracelet", &["Accessories"]),
        ("2-Layer Tassel Pendant Necklace", &["Accessories"]),
        ("Hollow Out Enamel Necklace", &["Accessories"]),
    ],
    &[
        ("Chunky Turquoise Pendant Necklace Set", &["Accessories"]),
        ("Chunky Twist Tribal Bib Necklace", &["Accessories"]),
        ("QIYUN.Z Leaf Pendant Bib Necklace Set", &["Accessories"]),
    ],
    &[
        ("Ribbon Buckle Pendant Necklace", &["Accessories"]),
        ("Chunky Tribal Drop Beaded Necklace", &["Accessories"]),
        ("Babydoll Dress with Collar Red L", &["Women's clothing"]),
    ],
];

pub fn stage_corpus(stages: &[&[(&str, &[&str])]]) -> Corpus {
    let mut text = String::new();
    let mut id = 0;
    for stage in stages {
        for (title, genres) in *stage {
            text.push_str(&format!("7\t{id}\t{id}\t{title}\t{}\n", genres.join("|")));
            id += 1;
        }
    }
    Corpus::parse_tsv(&text, "case study").unwrap()
}

/// Replays `stages` one at a time through the mock backend.
pub fn replay(stages: &[&[(&str, &[&str])]]) -> InterestTrace {
    let corpus = stage_corpus(stages);
    let prompts = PromptSet::default();
    let engine = HsuEngine::new(&corpus, &prompts, MockBackend, HsuConfig::default());
    let mut trace = InterestTrace::empty(7, HsuConfig::default().stage_len);
    let mut next = 0u32;
    for stage in stages {
        let items: Vec<u32> = (next..next + stage.len() as u32).collect();
        next += stage.len() as u32;
        trace = engine.incremental_update(&trace, &items, true).unwrap();
    }
    trace
}

pub fn replay_case_study() -> InterestTrace {
    replay(&CASE_STAGES)
}

/// Labels like `Retain`, `Add(RPG, Racing)` for the steps after the first.
pub fn operation_labels(trace: &InterestTrace) -> Vec<String> {
    trace.steps[1..]
        .iter()
        .map(|s| match &s.action {
            StepAction::Edit(op) if op.payload.is_empty() => op.kind.to_string(),
            StepAction::Edit(op) => format!("{}({})", op.kind, op.payload.join(", ")),
            other => other.label(),
        })
        .collect()
}

/// Synthetic genre-labelled corpus with multi-stage histories for every user.
pub fn trace_corpus(users: usize) -> Corpus {
    let cfg = SynthConfig { users, active_fraction: 0.3, tail_len: 20, seed: 11, ..SynthConfig::default() };
    generate(&cfg).unwrap().0
}

pub fn traces(corpus: &Corpus, config: HsuConfig) -> Vec<InterestTrace> {
    let prompts = PromptSet::default();
    let engine = HsuEngine::new(corpus, &prompts, MockBackend, config);
    let seqs: Vec<InteractionSequence> = corpus.users.values().cloned().collect();
    engine.infer_traces(&seqs).unwrap()
}

pub fn config_without(kind: Option<EditKind>) -> HsuConfig {
    let operations = match kind {
        Some(k) => OperationSet::default().without(k),
        None => OperationSet::default(),
    };
    HsuConfig { operations, ..HsuConfig::default() }
}

/// Edit-contract violations of one trace: Retain must keep the list as is,
/// Delete may only remove, Add may only extend, and no step may use a kind
/// outside `allowed`. Rollbacks count as violations when `strict`.
pub fn contract_violations(trace: &InterestTrace, allowed: &OperationSet, strict: bool) -> Vec<String> {
    let mut out = Vec::new();
    for pair in trace.steps.windows(2) {
        let (prev, step) = (&pair[0].state.interests, &pair[1].state.interests);
        let at = format!("user {} stage {}", trace.user_id, pair[1].stage.index);
        let lower = |v: &Vec<String>| v.iter().map(|p| p.to_lowercase()).collect::<Vec<_>>();
        let (prev_l, next_l) = (lower(prev), lower(step));
        match &pair[1].action {
            StepAction::Edit(op) => {
                if !allowed.contains(op.kind) {
                    out.push(format!("{at}: disabled {} applied", op.kind));
                }
                match op.kind {
                    EditKind::Retain if prev != step => out.push(format!("{at}: Retain changed {prev:?} to {step:?}")),
                    EditKind::Delete if !next_l.iter().all(|p| prev_l.contains(p)) => {
                        out.push(format!("{at}: Delete result {step:?} not within {prev:?}"))
                    }
                    EditKind::Add if !prev_l.iter().all(|p| next_l.contains(p)) => {
                        out.push(format!("{at}: Add result {step:?} drops part of {prev:?}"))
                    }
                    _ => {}
                }
            }
            StepAction::RolledBack { attempted, reason } => {
                if !allowed.contains(*attempted) {
                    out.push(format!("{at}: disabled {attempted} attempted"));
                }
                if strict {
                    out.push(format!("{at}: {attempted} rolled back: {reason}"));
                }
                if prev != step {
                    out.push(format!("{at}: rollback changed the state"));
                }
            }
            StepAction::Initial { .. } => out.push(format!("{at}: Initial after the first stage")),
            StepAction::Regenerate => {}
        }
    }
    out
}

/// Mismatches between `infer_trace` and every stage-aligned composition
/// `trace_items(prefix[..s])` + `incremental_update(prefix[s..], flush)`.
pub fn incremental_mismatches(corpus: &Corpus, config: HsuConfig) -> (usize, Vec<String>) {
    let prompts = PromptSet::default();
    let engine = HsuEngine::new(corpus, &prompts, MockBackend, config);
    let mut checked = 0;
    let mut bad = Vec::new();
    for seq in corpus.users.values() {
        let whole = engine.infer_trace(seq).unwrap();
        let expected = render_traces([&whole]);
        let prefix = &seq.items[..seq.len() - 2];
        let stage_len = engine.config.stage_len;
        for s in (0..=prefix.len()).step_by(stage_len) {
            let head = engine.trace_items(seq.user_id, &prefix[..s]).unwrap();
            let composed = engine.incremental_update(&head, &prefix[s..], true).unwrap();
            checked += 1;
            if composed != whole || render_traces([&composed]) != expected {
                bad.push(format!("user {} split {s}", seq.user_id));
            }
        }
        // one item at a time, flushing only at the end
        let mut t = InterestTrace::empty(seq.user_id, stage_len);
        for &item in prefix {
            t = engine.incremental_update(&t, &[item], false).unwrap();
        }
        t = engine.incremental_update(&t, &[], true).unwrap();
        checked += 1;
        if t != whole {
            bad.push(format!("user {} item-by-item", seq.user_id));
        }
    }
    (checked, bad)
}
