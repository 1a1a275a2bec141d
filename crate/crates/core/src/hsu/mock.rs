//! Deterministic genre-driven stand-in for the chat model.
//!
//! The mock reads only the prompt text. Item lines carry their genre tags,
//! the prompt carries the previous stage and the last edit, and the reply is
//! a pure function of those:
//!
//! 1. Retain when the stage's tag set equals the tag set of the interests.
//! 2. Delete interests that are stale: none of their tags occur in the
//!    current stage, and either none occur in the previous stage or the
//!    interest was introduced by the previous stage's Add.
//! 3. Add tags of the current stage that no interest covers.
//! 4. Update the best-supported interest into `"<interest> + <dominant tag>"`.
//! 5. Otherwise Retain.
//!
//! Disabled operations are skipped. An interest's tags are its `" + "`
//! separated parts, compared case-insensitively.

use crate::error::Result;

use super::{ChatBackend, EditKind};

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl ChatBackend for MockBackend {
    fn complete(&self, prompt: &str) -> Result<String> {
        Ok(reply(prompt))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

fn reply(prompt: &str) -> String {
    if let Some(op) = header_value(prompt, "Apply the operation:") {
        let view = View::parse(prompt);
        return match op.parse::<EditKind>() {
            Ok(kind) => view.execute(kind).render(),
            Err(_) => "I cannot apply that operation.".to_string(),
        };
    }
    if header_value(prompt, "Allowed operations:").is_some() {
        let view = View::parse(prompt);
        return format!("Operation: {}", view.select());
    }
    let items = parse_items(&section(prompt, "Interactions:"));
    let interests = initial_interests(&items);
    if interests.is_empty() {
        return String::new();
    }
    format!("Interests: {}", interests.join("; "))
}

#[derive(Debug, Clone)]
struct ItemLine {
    title: String,
    tags: Vec<String>,
}

fn header_value<'a>(prompt: &'a str, header: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(header)).map(str::trim)
}

/// Lines following `header` up to the next blank line.
fn section(prompt: &str, header: &str) -> Vec<String> {
    let mut lines = prompt.lines();
    for l in lines.by_ref() {
        if l.trim_end() == header {
            break;
        }
    }
    lines.take_while(|l| !l.trim().is_empty()).map(str::to_string).collect()
}

fn parse_items(lines: &[String]) -> Vec<ItemLine> {
    lines
        .iter()
        .filter_map(|l| {
            let body = l.strip_prefix("- ")?;
            match body.rfind(" [genres: ") {
                Some(pos) => {
                    let tags = body[pos + " [genres: ".len()..]
                        .trim_end_matches(']')
                        .split(", ")
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(str::to_string)
                        .collect();
                    Some(ItemLine { title: body[..pos].to_string(), tags })
                }
                None => Some(ItemLine { title: body.to_string(), tags: Vec::new() }),
            }
        })
        .collect()
}

fn parts(phrase: &str) -> Vec<String> {
    phrase.split(" + ").map(|p| p.trim().to_lowercase()).filter(|p| !p.is_empty()).collect()
}

/// Distinct tags in first-appearance order with their occurrence counts.
fn tag_counts(items: &[ItemLine]) -> Vec<(String, usize)> {
    let mut counts: Vec<(String, usize)> = Vec::new();
    for tag in items.iter().flat_map(|i| i.tags.iter()) {
        match counts.iter_mut().find(|(t, _)| t.eq_ignore_ascii_case(tag)) {
            Some((_, c)) => *c += 1,
            None => counts.push((tag.clone(), 1)),
        }
    }
    counts
}

/// Tags by descending frequency (stable on first appearance); titles when no
/// item carries a tag.
fn initial_interests(items: &[ItemLine]) -> Vec<String> {
    let mut counts = tag_counts(items);
    if counts.is_empty() {
        let mut titles: Vec<String> = Vec::new();
        for item in items {
            if !titles.iter().any(|t| t.eq_ignore_ascii_case(&item.title)) {
                titles.push(item.title.clone());
            }
        }
        return titles;
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1));
    counts.into_iter().map(|(t, _)| t).collect()
}

struct View {
    interests: Vec<String>,
    current: Vec<ItemLine>,
    previous: Vec<ItemLine>,
    last_added: Vec<String>,
    allowed: Vec<EditKind>,
}

struct Execution {
    changes: Vec<String>,
    interests: Vec<String>,
    rationale: String,
}

impl Execution {
    fn render(&self) -> String {
        format!(
            "Changes: {}\nInterests: {}\nRationale: {}",
            self.changes.join("; "),
            self.interests.join("; "),
            self.rationale
        )
    }
}

impl View {
    fn parse(prompt: &str) -> Self {
        let interests = section(prompt, "Current interests:")
            .iter()
            .filter_map(|l| l.strip_prefix("- ").map(str::to_string))
            .collect();
        let last_added = match header_value(prompt, "Last edit:").and_then(|v| v.strip_prefix("Add:")) {
            Some(list) => list.split(';').map(|p| p.trim().to_lowercase()).filter(|p| !p.is_empty()).collect(),
            None => Vec::new(),
        };
        let allowed = header_value(prompt, "Allowed operations:")
            .map(|v| v.split(',').filter_map(|k| k.parse().ok()).collect())
            .unwrap_or_else(|| EditKind::ALL.to_vec());
        Self {
            interests,
            current: parse_items(&section(prompt, "Current stage interactions:")),
            previous: parse_items(&section(prompt, "Previous stage interactions:")),
            last_added,
            allowed,
        }
    }

    fn occurs(items: &[ItemLine], tag: &str) -> bool {
        items.iter().flat_map(|i| i.tags.iter()).any(|t| t.eq_ignore_ascii_case(tag))
    }

    fn covered(&self, tag: &str) -> bool {
        self.interests.iter().any(|p| parts(p).iter().any(|q| q.eq_ignore_ascii_case(tag)))
    }

    fn tag_sets_equal(&self) -> bool {
        let stage: Vec<(String, usize)> = tag_counts(&self.current);
        let all_stage_covered = stage.iter().all(|(t, _)| self.covered(t));
        let all_parts_present = self
            .interests
            .iter()
            .flat_map(|p| parts(p))
            .all(|part| Self::occurs(&self.current, &part));
        all_stage_covered && all_parts_present
    }

    fn stale(&self) -> Vec<String> {
        self.interests
            .iter()
            .filter(|p| {
                let ps = parts(p);
                let in_current = ps.iter().any(|t| Self::occurs(&self.current, t));
                let in_previous = ps.iter().any(|t| Self::occurs(&self.previous, t));
                let on_probation = self.last_added.iter().any(|a| a.eq_ignore_ascii_case(p));
                !in_current && (!in_previous || on_probation)
            })
            .cloned()
            .collect()
    }

    fn new_tags(&self) -> Vec<String> {
        tag_counts(&self.current).into_iter().map(|(t, _)| t).filter(|t| !self.covered(t)).collect()
    }

    fn support(&self, phrase: &str) -> usize {
        let ps = parts(phrase);
        self.current
            .iter()
            .flat_map(|i| i.tags.iter())
            .filter(|t| ps.iter().any(|p| p.eq_ignore_ascii_case(t)))
            .count()
    }

    /// Index of the best-supported interest (earliest on ties).
    fn target(&self) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for (i, p) in self.interests.iter().enumerate() {
            let s = self.support(p);
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| i)
    }

    /// (target index, refined phrase) when a refinement exists.
    fn refinement(&self) -> Option<(usize, String)> {
        let idx = self.target()?;
        let target = &self.interests[idx];
        let ps = parts(target);
        let mut best: Option<(String, usize)> = None;
        for (tag, count) in tag_counts(&self.current) {
            if ps.iter().any(|p| p.eq_ignore_ascii_case(&tag)) {
                continue;
            }
            if best.as_ref().is_none_or(|(_, c)| count > *c) {
                best = Some((tag, count));
            }
        }
        let (tag, _) = best?;
        let refined = format!("{target} + {tag}");
        if self.interests.iter().any(|p| p.eq_ignore_ascii_case(&refined)) {
            return None;
        }
        Some((idx, refined))
    }

    fn allows(&self, kind: EditKind) -> bool {
        self.allowed.contains(&kind)
    }

    fn select(&self) -> EditKind {
        if self.allows(EditKind::Retain) && self.tag_sets_equal() {
            return EditKind::Retain;
        }
        let stale = self.stale();
        if self.allows(EditKind::Delete) && !stale.is_empty() && stale.len() < self.interests.len() {
            return EditKind::Delete;
        }
        if self.allows(EditKind::Add) && !self.new_tags().is_empty() {
            return EditKind::Add;
        }
        if self.allows(EditKind::Update) && self.refinement().is_some() {
            return EditKind::Update;
        }
        if self.allows(EditKind::Retain) {
            return EditKind::Retain;
        }
        if self.allows(EditKind::Update) {
            return EditKind::Update;
        }
        self.allowed.first().copied().unwrap_or(EditKind::Retain)
    }

    fn execute(&self, kind: EditKind) -> Execution {
        let keep = |rationale: String| Execution {
            changes: Vec::new(),
            interests: self.interests.clone(),
            rationale,
        };
        match kind {
            EditKind::Retain => keep(format!(
                "User maintains stable interests in {}; no edits required",
                self.interests.join(", ")
            )),
            EditKind::Add => {
                let new = self.new_tags();
                if new.is_empty() {
                    return keep("No new interests found in this stage".into());
                }
                let mut interests = self.interests.clone();
                interests.extend(new.iter().cloned());
                Execution {
                    rationale: format!("New interactions reveal emerging interests in {}", new.join(", ")),
                    changes: new,
                    interests,
                }
            }
            EditKind::Delete => {
                let stale = self.stale();
                let interests: Vec<String> =
                    self.interests.iter().filter(|p| !stale.contains(p)).cloned().collect();
                Execution {
                    rationale: format!(
                        "Reduced engagement with {}; retain {}",
                        stale.join(", "),
                        interests.join(", ")
                    ),
                    changes: stale,
                    interests,
                }
            }
            EditKind::Update => match self.refinement() {
                Some((idx, refined)) => {
                    let mut interests = self.interests.clone();
                    let old = std::mem::replace(&mut interests[idx], refined.clone());
                    Execution {
                        rationale: format!("Existing interest in {old} is refined by the current stage"),
                        changes: vec![refined],
                        interests,
                    }
                }
                None => match self.target() {
                    Some(idx) => Execution {
                        rationale: format!("Interest in {} is confirmed by the current stage", self.interests[idx]),
                        changes: vec![self.interests[idx].clone()],
                        interests: self.interests.clone(),
                    },
                    None => keep("Nothing to refine".into()),
                },
            },
        }
    }
}
