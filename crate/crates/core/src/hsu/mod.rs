//! Stage-wise interest modelling.
//!
//! A user's history is cut into fixed-length stages. The first stage seeds an
//! interest list; every later stage asks the chat backend to pick one atomic
//! edit (Add, Delete, Update, Retain) and then to apply it.

mod backend;
mod engine;
mod mock;
mod prompts;
mod trace_io;

use std::fmt;
use std::str::FromStr;

pub use backend::{ChatBackend, CountingBackend, HttpChatBackend, HttpChatConfig, UsageStats};
pub use engine::{group_by_stage_count, segment_stages, stage_count, HsuConfig, HsuEngine};
pub use mock::MockBackend;
pub use prompts::{render_item, PromptSet};
pub use trace_io::{parse_final_summaries, render_traces};

use crate::corpus::{ItemId, UserId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub index: usize,
    pub items: Vec<ItemId>,
    pub rendered_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EditKind {
    Add,
    Delete,
    Update,
    Retain,
}

impl EditKind {
    pub const ALL: [EditKind; 4] = [EditKind::Add, EditKind::Delete, EditKind::Update, EditKind::Retain];

    pub fn as_str(self) -> &'static str {
        match self {
            EditKind::Add => "Add",
            EditKind::Delete => "Delete",
            EditKind::Update => "Update",
            EditKind::Retain => "Retain",
        }
    }
}

impl fmt::Display for EditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EditKind {
    type Err = String;

    /// Accepts the canonical names plus the noun forms LLMs tend to produce.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let word = s
            .trim()
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_ascii_lowercase();
        match word.as_str() {
            "add" | "addition" => Ok(EditKind::Add),
            "delete" | "deletion" | "remove" => Ok(EditKind::Delete),
            "update" | "modification" | "modify" | "refine" => Ok(EditKind::Update),
            "retain" | "keep" => Ok(EditKind::Retain),
            _ => Err(format!("unknown edit operation {s:?}")),
        }
    }
}

/// The subset of edit kinds the selector may choose from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperationSet {
    pub add: bool,
    pub delete: bool,
    pub update: bool,
    pub retain: bool,
}

impl Default for OperationSet {
    fn default() -> Self {
        Self { add: true, delete: true, update: true, retain: true }
    }
}

impl OperationSet {
    pub fn contains(&self, kind: EditKind) -> bool {
        match kind {
            EditKind::Add => self.add,
            EditKind::Delete => self.delete,
            EditKind::Update => self.update,
            EditKind::Retain => self.retain,
        }
    }

    pub fn without(mut self, kind: EditKind) -> Self {
        match kind {
            EditKind::Add => self.add = false,
            EditKind::Delete => self.delete = false,
            EditKind::Update => self.update = false,
            EditKind::Retain => self.retain = false,
        }
        self
    }

    pub fn kinds(&self) -> Vec<EditKind> {
        EditKind::ALL.into_iter().filter(|&k| self.contains(k)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditOperation {
    pub kind: EditKind,
    /// Phrases affected by the edit; empty exactly for Retain.
    pub payload: Vec<String>,
    pub rationale: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InterestState {
    pub interests: Vec<String>,
    pub stage_index: usize,
}

impl InterestState {
    /// Builds a state from raw phrases: trims, drops empties and removes
    /// case-insensitive duplicates, keeping first occurrences.
    pub fn from_phrases<I, S>(phrases: I, stage_index: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut interests: Vec<String> = Vec::new();
        for p in phrases {
            let p = p.as_ref().trim();
            if p.is_empty() || interests.iter().any(|q| q.eq_ignore_ascii_case(p)) {
                continue;
            }
            interests.push(p.to_string());
        }
        Self { interests, stage_index }
    }

    pub fn len(&self) -> usize {
        self.interests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interests.is_empty()
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.interests.iter().any(|p| p.eq_ignore_ascii_case(phrase))
    }

    /// Interests joined by `"; "`, the text that gets embedded.
    pub fn summary_text(&self) -> String {
        self.interests.join("; ")
    }
}

/// What produced a trace step's state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepAction {
    /// First stage: interests inferred from scratch.
    Initial { rationale: String },
    /// Selected and executed edit.
    Edit(EditOperation),
    /// The backend's execution contradicted the selected kind; the previous
    /// state was kept.
    RolledBack { attempted: EditKind, reason: String },
    /// Interest updater disabled: summary regenerated from the whole prefix.
    Regenerate,
}

impl StepAction {
    pub fn edit_kind(&self) -> Option<EditKind> {
        match self {
            StepAction::Edit(op) => Some(op.kind),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            StepAction::Initial { .. } => "Init".to_string(),
            StepAction::Edit(op) => op.kind.to_string(),
            StepAction::RolledBack { attempted, .. } => format!("Rollback({attempted})"),
            StepAction::Regenerate => "Regenerate".to_string(),
        }
    }

    pub fn rationale(&self) -> &str {
        match self {
            StepAction::Initial { rationale } => rationale,
            StepAction::Edit(op) => &op.rationale,
            StepAction::RolledBack { reason, .. } => reason,
            StepAction::Regenerate => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub stage: Stage,
    pub action: StepAction,
    pub state: InterestState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterestTrace {
    pub user_id: UserId,
    pub stage_len: usize,
    pub steps: Vec<TraceStep>,
    pub final_state: InterestState,
    /// Items received by incremental updates that do not yet fill a stage.
    pub pending: Vec<ItemId>,
}

impl InterestTrace {
    pub fn empty(user_id: UserId, stage_len: usize) -> Self {
        Self { user_id, stage_len, steps: Vec::new(), final_state: InterestState::default(), pending: Vec::new() }
    }

    pub fn last_step(&self) -> Option<&TraceStep> {
        self.steps.last()
    }

    /// Items covered by processed stages, in order.
    pub fn processed_items(&self) -> Vec<ItemId> {
        self.steps.iter().flat_map(|s| s.stage.items.iter().copied()).collect()
    }
}
