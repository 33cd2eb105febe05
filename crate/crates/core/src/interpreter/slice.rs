use std::collections::{BTreeSet, HashSet};

use super::{MemLoc, ObservationPoint, RunResult, TraceEvent};
use crate::minilang::LocationId;

/// Events in the backward closure of `criterion` over def-use links and
/// control parents, the criterion included.
pub fn slice_events(trace: &[TraceEvent], criterion: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut work = vec![criterion];
    while let Some(i) = work.pop() {
        if !seen.insert(i) {
            continue;
        }
        let e = &trace[i];
        work.extend(e.uses.iter().filter_map(|u| u.def));
        work.extend(e.control_parent);
    }
    seen
}

/// Statements of the dynamic slice of `trace` with respect to `criterion`.
pub fn dynamic_slice(trace: &[TraceEvent], criterion: usize) -> BTreeSet<LocationId> {
    slice_events(trace, criterion)
        .into_iter()
        .map(|i| trace[i].location)
        .collect()
}

/// Variables in scope at `point` whose values there flow into a slice event
/// executed after the point.
///
/// `run` must have captured `point`; otherwise the result is empty.
pub fn relevant_variables_at(
    run: &RunResult,
    slice: &BTreeSet<usize>,
    point: ObservationPoint,
) -> BTreeSet<String> {
    let Some(state) = run.captures.get(&point) else {
        return BTreeSet::new();
    };
    let pos = state.position;
    let in_frame = |loc: &MemLoc| match loc {
        MemLoc::Var { frame, name } if *frame == state.frame => state
            .bindings
            .contains_key(&**name)
            .then(|| name.to_string()),
        _ => None,
    };
    let mut out = BTreeSet::new();
    let mut unmapped: HashSet<usize> = HashSet::new();
    for &i in slice.range(pos..) {
        for u in &run.trace[i].uses {
            if u.def.is_some_and(|d| d >= pos) {
                continue;
            }
            let obj = match &u.loc {
                MemLoc::Var { .. } => {
                    out.extend(in_frame(&u.loc));
                    continue;
                }
                MemLoc::Field { obj, .. } => *obj,
                MemLoc::Elem { arr, .. } => *arr,
                MemLoc::Ret { .. } => continue,
            };
            let via_base = u
                .base
                .as_ref()
                .and_then(in_frame)
                .filter(|b| state.reach[b].contains(&obj));
            match via_base {
                Some(b) => {
                    out.insert(b);
                }
                None => {
                    unmapped.insert(obj);
                }
            }
        }
    }
    for (root, reach) in &state.reach {
        if reach.iter().any(|o| unmapped.contains(o)) {
            out.insert(root.clone());
        }
    }
    out
}
