//! Text checkpoint format.
//!
//! ```text
//! hdet-checkpoint v1
//! groups 2
//! embedding 8
//! transformer 8
//! <one value per line, group order>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::EngineError;
use crate::objectives::{GroupLayout, Objective, ParamGroupSet};

const MAGIC: &str = "hdet-checkpoint v1";

fn bad(msg: impl Into<String>) -> EngineError {
    EngineError::Checkpoint(msg.into())
}

pub fn to_string(params: &ParamGroupSet) -> String {
    let layout = params.layout();
    let mut out = format!("{MAGIC}\ngroups {}\n", layout.num_groups());
    for (g, name) in layout.names().iter().enumerate() {
        let _ = writeln!(out, "{name} {}", layout.range(g).len());
    }
    for v in params.as_slice() {
        let _ = writeln!(out, "{v:?}");
    }
    out
}

/// Parses a checkpoint into its layout and values.
pub fn parse(text: &str) -> Result<(GroupLayout, Vec<f64>), EngineError> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad(format!("missing `{MAGIC}` header")));
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("groups "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| bad("expected `groups <count>` line"))?;
    let mut groups = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| bad("truncated group table"))?;
        let (name, len) = line.split_once(' ').ok_or_else(|| bad(format!("bad group line `{line}`")))?;
        let len: usize = len.trim().parse().map_err(|_| bad(format!("bad group length in `{line}`")))?;
        groups.push((name.to_owned(), len));
    }
    let layout = GroupLayout::new(groups).map_err(|e| bad(e.to_string()))?;
    let values = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|_| bad(format!("bad value `{l}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != layout.total_dim() {
        return Err(bad(format!("header declares {} values, found {}", layout.total_dim(), values.len())));
    }
    Ok((layout, values))
}

pub fn save(path: &Path, params: &ParamGroupSet) -> Result<(), EngineError> {
    std::fs::write(path, to_string(params))?;
    Ok(())
}

/// Loads a checkpoint and checks it against the objective's groups.
pub fn load(path: &Path, objective: &Objective) -> Result<ParamGroupSet, EngineError> {
    let text = std::fs::read_to_string(path)?;
    let (layout, values) = parse(&text)?;
    if &layout != objective.layout().as_ref() {
        return Err(bad(format!(
            "checkpoint groups {:?} do not match the objective's {:?}",
            layout.names(),
            objective.layout().names()
        )));
    }
    Ok(objective.params(values)?)
}
