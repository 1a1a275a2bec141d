//! Trace file: one TSV record per stage,
//! `user_id  stage_index  operation  interests("; ")  rationale`,
//! followed by a `Final` record per user with `stage_index = -1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::corpus::UserId;
use crate::error::{Error, Result};

use super::{InterestState, InterestTrace};

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

fn join(state: &InterestState) -> String {
    state.interests.iter().map(|p| clean(&p.replace(';', ","))).collect::<Vec<_>>().join("; ")
}

pub fn render_traces<'a>(traces: impl IntoIterator<Item = &'a InterestTrace>) -> String {
    let mut out = String::new();
    for trace in traces {
        for step in &trace.steps {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                trace.user_id,
                step.stage.index,
                step.action.label(),
                join(&step.state),
                clean(step.action.rationale())
            );
        }
        let _ = writeln!(out, "{}\t-1\tFinal\t{}\t", trace.user_id, join(&trace.final_state));
    }
    out
}

/// Reads the `Final` records of a trace file.
pub fn parse_final_summaries(text: &str, source: &str) -> Result<BTreeMap<UserId, InterestState>> {
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::parse(source, idx + 1, "expected 5 columns"));
        }
        if cols[1] != "-1" {
            continue;
        }
        let user: UserId = cols[0].parse().map_err(|_| Error::parse(source, idx + 1, "bad user_id"))?;
        let state = InterestState::from_phrases(cols[3].split("; "), 0);
        out.insert(user, state);
    }
    Ok(out)
}
