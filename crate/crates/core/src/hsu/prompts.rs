use crate::corpus::Item;

use super::{EditKind, InterestState, StepAction};

/// The four prompt templates. `v1` is compiled in from `templates/v1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub version: &'static str,
    pub history: String,
    pub initial: String,
    pub selection: String,
    pub execution: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::v1()
    }
}

impl PromptSet {
    pub fn v1() -> Self {
        Self {
            version: "v1",
            history: include_str!("../../templates/v1/history.txt").to_string(),
            initial: include_str!("../../templates/v1/stage1_inference.txt").to_string(),
            selection: include_str!("../../templates/v1/drift_selection.txt").to_string(),
            execution: include_str!("../../templates/v1/edit_execution.txt").to_string(),
        }
    }

    pub fn render_initial(&self, stage_text: &str) -> String {
        fill(&self.initial, &[("stage", stage_text)])
    }

    pub fn render_selection(
        &self,
        state: &InterestState,
        previous_text: Option<&str>,
        last: Option<&StepAction>,
        stage_text: &str,
        allowed: &[EditKind],
    ) -> String {
        let ops = allowed.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ");
        fill(
            &self.selection,
            &[
                ("interests", &render_interests(state)),
                ("history", previous_text.unwrap_or("(none)")),
                ("last_edit", &render_last_edit(last)),
                ("stage", stage_text),
                ("operations", &ops),
            ],
        )
    }

    pub fn render_execution(
        &self,
        state: &InterestState,
        previous_text: Option<&str>,
        last: Option<&StepAction>,
        stage_text: &str,
        kind: EditKind,
    ) -> String {
        fill(
            &self.execution,
            &[
                ("interests", &render_interests(state)),
                ("history", previous_text.unwrap_or("(none)")),
                ("last_edit", &render_last_edit(last)),
                ("stage", stage_text),
                ("operation", kind.as_str()),
            ],
        )
    }
}

/// Renders one item with the history template.
pub fn render_item(template: &str, item: &Item) -> String {
    fill(template, &[("title", &item.title), ("genres", &item.genres.join(", "))])
}

fn render_interests(state: &InterestState) -> String {
    if state.is_empty() {
        return "(none)".to_string();
    }
    state.interests.iter().map(|p| format!("- {p}")).collect::<Vec<_>>().join("\n")
}

fn render_last_edit(last: Option<&StepAction>) -> String {
    match last {
        Some(StepAction::Edit(op)) if op.payload.is_empty() => op.kind.to_string(),
        Some(StepAction::Edit(op)) => format!("{}: {}", op.kind, op.payload.join("; ")),
        _ => "none".to_string(),
    }
}

/// Single-pass placeholder substitution; substituted text is never rescanned.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_does_not_rescan_values() {
        let s = fill("a {x} b {y} {z}", &[("x", "{y}"), ("y", "Y")]);
        assert_eq!(s, "a {y} b Y {z}");
    }

    #[test]
    fn item_rendering() {
        let item = Item { item_id: 1, title: "Fallout 4".into(), genres: vec!["RPG".into(), "Adventure".into()] };
        assert_eq!(render_item(&PromptSet::v1().history, &item), "- Fallout 4 [genres: RPG, Adventure]");
    }

    #[test]
    fn templates_carry_placeholders() {
        let p = PromptSet::v1();
        assert!(p.initial.contains("{stage}"));
        for t in [&p.selection, &p.execution] {
            for key in ["{interests}", "{history}", "{stage}", "{last_edit}"] {
                assert!(t.contains(key), "{key} missing");
            }
        }
        assert!(p.selection.contains("{operations}"));
        assert!(p.execution.contains("{operation}"));
    }
}
