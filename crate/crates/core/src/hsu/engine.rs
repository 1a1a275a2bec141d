use std::collections::BTreeMap;

use crate::corpus::{Corpus, InteractionSequence, ItemId, UserId};
use crate::error::{Error, Result};

use super::prompts::render_item;
use super::{
    ChatBackend, EditKind, EditOperation, InterestState, InterestTrace, OperationSet, PromptSet, Stage,
    StepAction, TraceStep,
};

#[derive(Debug, Clone, PartialEq)]
pub struct HsuConfig {
    pub stage_len: usize,
    /// Extra attempts after an unparseable reply.
    pub retries: usize,
    pub operations: OperationSet,
    /// When false every stage regenerates the summary from the whole prefix.
    pub interest_updater: bool,
}

impl Default for HsuConfig {
    fn default() -> Self {
        Self { stage_len: 9, retries: 2, operations: OperationSet::default(), interest_updater: true }
    }
}

/// Number of stages for `n` items: `ceil(n / stage_len)`.
pub fn stage_count(n: usize, stage_len: usize) -> usize {
    n.div_ceil(stage_len.max(1))
}

/// Cuts `items` into consecutive chunks of `stage_len`; a shorter final chunk
/// is kept as its own stage. Stage indices start at `first_index`.
pub fn segment_stages(
    items: &[ItemId],
    stage_len: usize,
    first_index: usize,
    corpus: &Corpus,
    prompts: &PromptSet,
) -> Result<Vec<Stage>> {
    if stage_len == 0 {
        return Err(Error::Config("stage_len must be at least 1".into()));
    }
    items
        .chunks(stage_len)
        .enumerate()
        .map(|(i, chunk)| {
            Ok(Stage {
                index: first_index + i,
                items: chunk.to_vec(),
                rendered_text: render_items(chunk, corpus, prompts)?,
            })
        })
        .collect()
}

fn render_items(items: &[ItemId], corpus: &Corpus, prompts: &PromptSet) -> Result<String> {
    let lines = items
        .iter()
        .map(|id| {
            corpus
                .item(*id)
                .map(|item| render_item(&prompts.history, item))
                .ok_or(Error::ItemOutOfRange { item: *id, n_items: corpus.num_items() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(lines.join("\n"))
}

/// Groups users by the number of stages their inference prefix (`T - 2`
/// items) produces, so backend calls can be batched per group.
pub fn group_by_stage_count(
    sequences: &[InteractionSequence],
    stage_len: usize,
) -> BTreeMap<usize, Vec<UserId>> {
    let mut groups: BTreeMap<usize, Vec<UserId>> = BTreeMap::new();
    for seq in sequences {
        let n = seq.len().saturating_sub(2);
        groups.entry(stage_count(n, stage_len)).or_default().push(seq.user_id);
    }
    groups
}

pub struct HsuEngine<'a, B: ChatBackend> {
    pub corpus: &'a Corpus,
    pub prompts: &'a PromptSet,
    pub backend: B,
    pub config: HsuConfig,
}

impl<'a, B: ChatBackend> HsuEngine<'a, B> {
    pub fn new(corpus: &'a Corpus, prompts: &'a PromptSet, backend: B, config: HsuConfig) -> Self {
        Self { corpus, prompts, backend, config }
    }

    /// Calls the backend and parses the reply, retrying on parse failures.
    fn ask<T>(&self, prompt: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<T> {
        let attempts = self.config.retries + 1;
        let mut last_err = String::new();
        let mut last_raw = String::new();
        for _ in 0..attempts {
            let raw = self.backend.complete(prompt)?;
            match parse(&raw) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    last_err = e;
                    last_raw = raw;
                }
            }
        }
        Err(Error::ReplyParse { attempts, reason: last_err, raw: last_raw })
    }

    pub fn infer_initial_interests(&self, stage: &Stage) -> Result<InterestState> {
        let prompt = self.prompts.render_initial(&stage.rendered_text);
        self.ask(&prompt, |raw| {
            let state = InterestState::from_phrases(parse_list(field(raw, "Interests")?), stage.index);
            if state.is_empty() {
                return Err("no interests in reply".into());
            }
            Ok(state)
        })
    }

    pub fn select_operation(
        &self,
        state: &InterestState,
        previous: Option<&Stage>,
        last: Option<&StepAction>,
        stage: &Stage,
    ) -> Result<EditKind> {
        let allowed = self.config.operations.kinds();
        if allowed.is_empty() {
            return Err(Error::Config("every edit operation is disabled".into()));
        }
        let prompt = self.prompts.render_selection(
            state,
            previous.map(|s| s.rendered_text.as_str()),
            last,
            &stage.rendered_text,
            &allowed,
        );
        self.ask(&prompt, |raw| {
            let kind: EditKind = field(raw, "Operation")?.parse()?;
            if !allowed.contains(&kind) {
                return Err(format!("operation {kind} is disabled"));
            }
            Ok(kind)
        })
    }

    /// Applies `kind`; a reply that contradicts the kind's contract is an
    /// [`Error::OperationContract`] and leaves `state` untouched.
    pub fn execute_operation(
        &self,
        state: &InterestState,
        previous: Option<&Stage>,
        last: Option<&StepAction>,
        stage: &Stage,
        kind: EditKind,
    ) -> Result<(EditOperation, InterestState)> {
        let prompt = self.prompts.render_execution(
            state,
            previous.map(|s| s.rendered_text.as_str()),
            last,
            &stage.rendered_text,
            kind,
        );
        let (changes, proposed, rationale) = self.ask(&prompt, |raw| {
            let interests = parse_list(field(raw, "Interests")?);
            let changes = field(raw, "Changes").map(parse_list).unwrap_or_default();
            let rationale = field(raw, "Rationale").unwrap_or_default().to_string();
            Ok((changes, interests, rationale))
        })?;
        let proposed = InterestState::from_phrases(proposed, stage.index);
        check_edit(state, &proposed, &changes, stage, kind, rationale)
    }

    /// One stage of the select → execute pipeline, with rollback on contract
    /// violations.
    fn step(&self, state: &InterestState, previous: Option<&TraceStep>, stage: &Stage) -> Result<TraceStep> {
        let prev_stage = previous.map(|s| &s.stage);
        let last = previous.map(|s| &s.action);
        let kind = self.select_operation(state, prev_stage, last, stage)?;
        match self.execute_operation(state, prev_stage, last, stage, kind) {
            Ok((op, next)) => Ok(TraceStep { stage: stage.clone(), action: StepAction::Edit(op), state: next }),
            Err(Error::OperationContract { reason, .. }) => {
                log::warn!("stage {}: {kind} rolled back: {reason}", stage.index);
                let mut kept = state.clone();
                kept.stage_index = stage.index;
                Ok(TraceStep {
                    stage: stage.clone(),
                    action: StepAction::RolledBack { attempted: kind, reason },
                    state: kept,
                })
            }
            Err(e) => Err(e),
        }
    }

    fn regenerate(&self, prefix: &[ItemId], stage: &Stage) -> Result<TraceStep> {
        let text = render_items(prefix, self.corpus, self.prompts)?;
        let whole = Stage { index: stage.index, items: prefix.to_vec(), rendered_text: text };
        let state = self.infer_initial_interests(&whole)?;
        Ok(TraceStep { stage: stage.clone(), action: StepAction::Regenerate, state })
    }

    fn process_stages(&self, trace: &mut InterestTrace, stages: Vec<Stage>) -> Result<()> {
        for stage in stages {
            let wrap = |e: Error| Error::Stage { user_id: trace.user_id, stage: stage.index, source: Box::new(e) };
            let step = match trace.steps.last() {
                None => {
                    let state = self.infer_initial_interests(&stage).map_err(wrap)?;
                    let rationale = format!("Initial interests inferred from {} interactions", stage.items.len());
                    TraceStep { stage, action: StepAction::Initial { rationale }, state }
                }
                Some(_) if !self.config.interest_updater => {
                    let mut prefix = trace.processed_items();
                    prefix.extend_from_slice(&stage.items);
                    self.regenerate(&prefix, &stage).map_err(wrap)?
                }
                Some(prev) => self.step(&trace.final_state, Some(prev), &stage).map_err(wrap)?,
            };
            trace.final_state = step.state.clone();
            trace.steps.push(step);
        }
        Ok(())
    }

    /// Builds a trace over exactly `items` (no truncation).
    pub fn trace_items(&self, user_id: UserId, items: &[ItemId]) -> Result<InterestTrace> {
        let mut trace = InterestTrace::empty(user_id, self.config.stage_len);
        let stages = segment_stages(items, self.config.stage_len, 0, self.corpus, self.prompts)?;
        self.process_stages(&mut trace, stages)?;
        Ok(trace)
    }

    /// Trace over the sequence minus its last two items, which are held out
    /// for validation and test.
    pub fn infer_trace(&self, seq: &InteractionSequence) -> Result<InterestTrace> {
        let keep = seq.len().saturating_sub(2);
        self.trace_items(seq.user_id, &seq.items[..keep])
    }

    /// Appends items to a trace. Full stages are processed as soon as the
    /// buffer holds `stage_len` items; `flush` also processes a partial
    /// remainder. Existing steps are never modified.
    pub fn incremental_update(&self, trace: &InterestTrace, new_items: &[ItemId], flush: bool) -> Result<InterestTrace> {
        let mut next = trace.clone();
        next.pending.extend_from_slice(new_items);
        let full = next.pending.len() / next.stage_len * next.stage_len;
        let take = if flush { next.pending.len() } else { full };
        if take == 0 {
            return Ok(next);
        }
        let batch: Vec<ItemId> = next.pending.drain(..take).collect();
        let first = next.steps.len();
        let stages = segment_stages(&batch, next.stage_len, first, self.corpus, self.prompts)?;
        self.process_stages(&mut next, stages)?;
        Ok(next)
    }

    /// Traces for many users, run in parallel; output order follows input.
    pub fn infer_traces(&self, sequences: &[InteractionSequence]) -> Result<Vec<InterestTrace>> {
        use rayon::prelude::*;
        sequences.par_iter().map(|seq| self.infer_trace(seq)).collect()
    }
}

fn field<'r>(raw: &'r str, name: &str) -> Result<&'r str, String> {
    raw.lines()
        .find_map(|l| {
            let l = l.trim().trim_start_matches(['*', '-', ' ']);
            let (key, value) = l.split_once(':')?;
            key.trim().trim_matches('*').eq_ignore_ascii_case(name).then(|| value.trim())
        })
        .ok_or_else(|| format!("missing `{name}:` line"))
}

fn parse_list(value: &str) -> Vec<String> {
    value.split([';', '\n']).map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}

fn lower_set(phrases: &[String]) -> Vec<String> {
    phrases.iter().map(|p| p.to_lowercase()).collect()
}

fn violation(kind: EditKind, reason: impl Into<String>) -> Error {
    Error::OperationContract { kind: kind.to_string(), reason: reason.into() }
}

/// Enforces the per-kind contract and builds the resulting state, keeping the
/// original spelling and order of surviving interests.
fn check_edit(
    old: &InterestState,
    proposed: &InterestState,
    changes: &[String],
    stage: &Stage,
    kind: EditKind,
    rationale: String,
) -> Result<(EditOperation, InterestState)> {
    let old_l = lower_set(&old.interests);
    let new_l = lower_set(&proposed.interests);
    let kept_all = old_l.iter().all(|p| new_l.contains(p));
    let no_extra = new_l.iter().all(|p| old_l.contains(p));
    let index = stage.index;

    let (payload, interests) = match kind {
        EditKind::Retain => {
            if !(kept_all && no_extra) {
                return Err(violation(kind, "Retain changed the interest list"));
            }
            (Vec::new(), old.interests.clone())
        }
        EditKind::Add => {
            if !kept_all {
                return Err(violation(kind, "Add removed an existing interest"));
            }
            let added: Vec<String> = proposed
                .interests
                .iter()
                .filter(|p| !old_l.contains(&p.to_lowercase()))
                .cloned()
                .collect();
            if added.is_empty() {
                return Err(violation(kind, "Add introduced nothing"));
            }
            let mut interests = old.interests.clone();
            interests.extend(added.iter().cloned());
            (added, interests)
        }
        EditKind::Delete => {
            if !no_extra {
                return Err(violation(kind, "Delete introduced a new interest"));
            }
            if proposed.is_empty() {
                return Err(violation(kind, "Delete removed every interest"));
            }
            let removed: Vec<String> =
                old.interests.iter().filter(|p| !new_l.contains(&p.to_lowercase())).cloned().collect();
            if removed.is_empty() {
                return Err(violation(kind, "Delete removed nothing"));
            }
            let interests = old.interests.iter().filter(|p| new_l.contains(&p.to_lowercase())).cloned().collect();
            (removed, interests)
        }
        EditKind::Update => {
            if proposed.is_empty() {
                return Err(violation(kind, "Update emptied the interest list"));
            }
            if proposed.len() > old.len() {
                return Err(violation(kind, "Update grew the interest list"));
            }
            let mut payload: Vec<String> = proposed
                .interests
                .iter()
                .filter(|p| !old_l.contains(&p.to_lowercase()))
                .cloned()
                .collect();
            if payload.is_empty() {
                payload = changes.iter().filter(|c| old_l.contains(&c.to_lowercase())).cloned().collect();
            }
            if payload.is_empty() {
                return Err(violation(kind, "Update changed nothing"));
            }
            let old_parts: Vec<String> = old_l.iter().flat_map(|p| split_parts(p)).collect();
            let stage_text = stage.rendered_text.to_lowercase();
            for phrase in &payload {
                for part in split_parts(&phrase.to_lowercase()) {
                    if !old_parts.contains(&part) && !stage_text.contains(&part) {
                        return Err(violation(kind, format!("{part:?} is not traceable to the interests or stage")));
                    }
                }
            }
            (payload, proposed.interests.clone())
        }
    };
    Ok((EditOperation { kind, payload, rationale }, InterestState { interests, stage_index: index }))
}

fn split_parts(phrase: &str) -> Vec<String> {
    phrase.split(" + ").map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsu::MockBackend;

    fn corpus(genres: &[&str]) -> Corpus {
        let mut text = String::new();
        for (i, g) in genres.iter().enumerate() {
            text.push_str(&format!("1\t{i}\t{i}\tgame {i}\t{g}\n"));
        }
        Corpus::parse_tsv(&text, "mem").unwrap()
    }

    struct Fixed(&'static str);
    impl ChatBackend for Fixed {
        fn complete(&self, _: &str) -> Result<String> {
            Ok(self.0.to_string())
        }
        fn is_deterministic(&self) -> bool {
            true
        }
    }

    #[test]
    fn stage_sizes() {
        let c = corpus(&["A"; 10]);
        let p = PromptSet::v1();
        let items: Vec<u32> = (0..10).collect();
        let sizes: Vec<usize> =
            segment_stages(&items, 4, 0, &c, &p).unwrap().iter().map(|s| s.items.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(segment_stages(&items[..4], 4, 0, &c, &p).unwrap().len(), 1);
        assert!(segment_stages(&[], 4, 0, &c, &p).unwrap().is_empty());
        assert!(segment_stages(&items, 0, 0, &c, &p).is_err());
    }

    #[test]
    fn initial_interests_from_action_stage() {
        let c = corpus(&["Action", "Action", "Action"]);
        let p = PromptSet::v1();
        let e = HsuEngine::new(&c, &p, MockBackend, HsuConfig::default());
        let stage = &segment_stages(&[0, 1, 2], 4, 0, &c, &p).unwrap()[0];
        assert_eq!(e.infer_initial_interests(stage).unwrap().interests, vec!["Action"]);
    }

    #[test]
    fn empty_reply_is_parse_failure() {
        let c = corpus(&["Action"]);
        let p = PromptSet::v1();
        let e = HsuEngine::new(&c, &p, Fixed(""), HsuConfig::default());
        let stage = &segment_stages(&[0], 4, 0, &c, &p).unwrap()[0];
        match e.infer_initial_interests(stage) {
            Err(Error::ReplyParse { attempts, raw, .. }) => {
                assert_eq!(attempts, 3);
                assert_eq!(raw, "");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_phrases_collapse() {
        let c = corpus(&["Action"]);
        let p = PromptSet::v1();
        let e = HsuEngine::new(&c, &p, Fixed("Interests: Action; action"), HsuConfig::default());
        let stage = &segment_stages(&[0], 4, 0, &c, &p).unwrap()[0];
        assert_eq!(e.infer_initial_interests(stage).unwrap().interests, vec!["Action"]);
    }

    #[test]
    fn out_of_vocabulary_selection_fails() {
        let c = corpus(&["Action"]);
        let p = PromptSet::v1();
        let e = HsuEngine::new(&c, &p, Fixed("Operation: Merge"), HsuConfig::default());
        let stage = &segment_stages(&[0], 4, 1, &c, &p).unwrap()[0];
        let state = InterestState::from_phrases(["Action"], 0);
        assert!(matches!(e.select_operation(&state, None, None, stage), Err(Error::ReplyParse { .. })));
    }

    #[test]
    fn contract_violation_rolls_back() {
        let c = corpus(&["Action", "Action", "Action", "Action", "Action"]);
        let p = PromptSet::v1();
        // Selection says Add, execution drops the interest: the step keeps the old state.
        struct Liar;
        impl ChatBackend for Liar {
            fn complete(&self, prompt: &str) -> Result<String> {
                Ok(if prompt.contains("Allowed operations:") {
                    "Operation: Add".into()
                } else if prompt.contains("Apply the operation:") {
                    "Changes: Puzzle\nInterests: Puzzle\nRationale: x".into()
                } else {
                    "Interests: Action".into()
                })
            }
            fn is_deterministic(&self) -> bool {
                true
            }
        }
        let cfg = HsuConfig { stage_len: 2, ..HsuConfig::default() };
        let e = HsuEngine::new(&c, &p, Liar, cfg);
        let t = e.trace_items(1, &[0, 1, 2, 3]).unwrap();
        assert_eq!(t.steps.len(), 2);
        assert!(matches!(t.steps[1].action, StepAction::RolledBack { attempted: EditKind::Add, .. }));
        assert_eq!(t.final_state.interests, vec!["Action"]);
    }

    #[test]
    fn retain_is_identity() {
        let c = corpus(&["Action|Indie", "Indie", "Action"]);
        let p = PromptSet::v1();
        let e = HsuEngine::new(&c, &p, MockBackend, HsuConfig::default());
        let stage = &segment_stages(&[0, 1, 2], 4, 1, &c, &p).unwrap()[0];
        let state = InterestState::from_phrases(["Action", "Indie"], 0);
        let (op, next) = e.execute_operation(&state, None, None, stage, EditKind::Retain).unwrap();
        assert!(op.payload.is_empty());
        assert_eq!(next.interests, state.interests);
    }

    #[test]
    fn add_on_nothing_new_is_violation() {
        let c = corpus(&["Action"]);
        let p = PromptSet::v1();
        let e = HsuEngine::new(&c, &p, MockBackend, HsuConfig::default());
        let stage = &segment_stages(&[0], 4, 1, &c, &p).unwrap()[0];
        let state = InterestState::from_phrases(["Action"], 0);
        assert!(matches!(
            e.execute_operation(&state, None, None, stage, EditKind::Add),
            Err(Error::OperationContract { .. })
        ));
    }

    #[test]
    fn short_sequence_yields_one_stage() {
        let c = corpus(&["A", "B", "C"]);
        let p = PromptSet::v1();
        let e = HsuEngine::new(&c, &p, MockBackend, HsuConfig { stage_len: 4, ..HsuConfig::default() });
        let t = e.infer_trace(&InteractionSequence::new(1, vec![0, 1, 2])).unwrap();
        assert_eq!(t.steps.len(), 1);
        assert_eq!(t.steps[0].stage.items, vec![0]);
    }

    #[test]
    fn buffering_without_flush() {
        let c = corpus(&["A"; 8]);
        let p = PromptSet::v1();
        let e = HsuEngine::new(&c, &p, MockBackend, HsuConfig { stage_len: 4, ..HsuConfig::default() });
        let t = e.trace_items(1, &[0, 1, 2, 3]).unwrap();
        let t1 = e.incremental_update(&t, &[4], false).unwrap();
        assert_eq!(t1.steps, t.steps);
        assert_eq!(t1.pending, vec![4]);
        let t2 = e.incremental_update(&t1, &[5, 6, 7], false).unwrap();
        assert_eq!(t2.steps.len(), 2);
        assert!(t2.pending.is_empty());
        assert_eq!(t2.steps[..1], t.steps[..]);
    }

    #[test]
    fn stage_count_groups() {
        let seqs = vec![
            InteractionSequence::new(1, (0..6).collect()),
            InteractionSequence::new(2, (0..6).collect()),
            InteractionSequence::new(3, (0..10).collect()),
        ];
        let g = group_by_stage_count(&seqs, 4);
        assert_eq!(g, BTreeMap::from([(1, vec![1, 2]), (2, vec![3])]));
        assert!(group_by_stage_count(&[], 4).is_empty());
    }

    #[test]
    fn without_updater_regenerates() {
        let c = corpus(&["A", "A", "B", "B"]);
        let p = PromptSet::v1();
        let cfg = HsuConfig { stage_len: 2, interest_updater: false, ..HsuConfig::default() };
        let e = HsuEngine::new(&c, &p, MockBackend, cfg);
        let t = e.trace_items(1, &[0, 1, 2, 3]).unwrap();
        assert_eq!(t.steps[1].action, StepAction::Regenerate);
        assert_eq!(t.final_state.interests, vec!["A", "B"]);
    }
}
