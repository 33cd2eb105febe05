//! Ochiai suspiciousness over the dynamic slice and candidate observation
//! points derived from it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interpreter::{ObservationPoint, RunResult};
use crate::minilang::{LocationId, TypedProgram};
use crate::testgen::SuiteResult;

pub const DEFAULT_X_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocalizationError {
    #[error(
        "no failing test: the designated assertion never fails, so there is nothing to explain"
    )]
    NoFailingTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub location: LocationId,
    pub ef: usize,
    pub ep: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspiciousnessMap {
    /// One entry per slice statement, by ordinal.
    pub entries: Vec<ScoreEntry>,
    pub nf_total: usize,
}

impl SuspiciousnessMap {
    pub fn score(&self, loc: LocationId) -> Option<f64> {
        self.entry(loc).map(|e| e.score)
    }

    pub fn entry(&self, loc: LocationId) -> Option<&ScoreEntry> {
        self.entries.iter().find(|e| e.location == loc)
    }
}

pub fn ochiai(ef: usize, ep: usize, nf_total: usize) -> f64 {
    let denom = ((nf_total * (ef + ep)) as f64).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        ef as f64 / denom
    }
}

/// Scores slice statements from a coverage matrix given as
/// `(failed, covered statements)` rows.
pub fn ochiai_from_rows<'a>(
    rows: impl IntoIterator<Item = (bool, &'a BTreeSet<LocationId>)>,
    slice: &BTreeSet<LocationId>,
) -> Result<SuspiciousnessMap, LocalizationError> {
    let mut counts: BTreeMap<LocationId, (usize, usize)> =
        slice.iter().map(|&l| (l, (0, 0))).collect();
    let mut nf_total = 0;
    for (failed, covered) in rows {
        nf_total += failed as usize;
        for loc in covered {
            if let Some(c) = counts.get_mut(loc) {
                if failed {
                    c.0 += 1;
                } else {
                    c.1 += 1;
                }
            }
        }
    }
    if nf_total == 0 {
        return Err(LocalizationError::NoFailingTest);
    }
    Ok(SuspiciousnessMap {
        entries: counts
            .into_iter()
            .map(|(location, (ef, ep))| ScoreEntry {
                location,
                ef,
                ep,
                score: ochiai(ef, ep, nf_total),
            })
            .collect(),
        nf_total,
    })
}

/// Irrelevant runs count as non-failing, with their completed coverage.
pub fn ochiai_scores(
    suite: &SuiteResult,
    slice: &BTreeSet<LocationId>,
) -> Result<SuspiciousnessMap, LocalizationError> {
    let failed: BTreeSet<usize> = suite.failed.iter().copied().collect();
    ochiai_from_rows(
        suite
            .runs
            .iter()
            .enumerate()
            .map(|(i, r)| (failed.contains(&i), &r.coverage)),
        slice,
    )
}

/// The point naming the gap right after `s` in its statement list.
fn point_after(tp: &TypedProgram, s: LocationId) -> ObservationPoint {
    let info = tp.info(s);
    match tp.list(info.list).stmts.get(info.index + 1) {
        Some(&next) if tp.info(next).is_compound => ObservationPoint::before(next),
        _ => ObservationPoint::after(s),
    }
}

fn is_plain(tp: &TypedProgram, s: LocationId) -> bool {
    let info = tp.info(s);
    !info.is_compound && !info.calls && !info.is_assert
}

/// Maps a suspicious statement to the point where an explanation for it is
/// sought, or `None` for the designated assertion.
pub fn point_for(tp: &TypedProgram, s: LocationId) -> Option<ObservationPoint> {
    if Some(s) == tp.designated_assertion() {
        return None;
    }
    let info = tp.info(s);
    if let Some(&outer) = info.loops.first() {
        return Some(point_after(tp, outer));
    }
    if info.is_loop {
        return Some(point_after(tp, s));
    }
    if info.is_compound {
        return Some(ObservationPoint::before(s));
    }
    if !is_plain(tp, s) {
        return Some(point_after(tp, s));
    }
    let stmts = &tp.list(info.list).stmts;
    let mut last = info.index;
    while last + 1 < stmts.len() && is_plain(tp, stmts[last + 1]) {
        last += 1;
    }
    Some(point_after(tp, stmts[last]))
}

/// Ranked candidate observation points.
///
/// Slice statements scoring at least `x_threshold` are mapped through
/// [`point_for`]. A point is dropped when the failing run never reaches it or
/// when the next event there is the designated assertion. Points rank by
/// their best score, then by the smallest ordinal mapped to them.
pub fn candidate_points(
    tp: &TypedProgram,
    scores: &SuspiciousnessMap,
    failing: &RunResult,
    x_threshold: f64,
    max_points: usize,
) -> Vec<ObservationPoint> {
    let assertion = tp.designated_assertion();
    let mut best: BTreeMap<ObservationPoint, (f64, u32)> = BTreeMap::new();
    for e in &scores.entries {
        if e.score < x_threshold {
            continue;
        }
        let Some(p) = point_for(tp, e.location) else {
            continue;
        };
        let Some(&pos) = failing.point_positions.get(&p) else {
            continue;
        };
        match failing.trace.get(pos) {
            Some(ev) if Some(ev.location) != assertion => {}
            _ => continue,
        }
        let entry = best.entry(p).or_insert((e.score, e.location.ordinal));
        entry.0 = entry.0.max(e.score);
        entry.1 = entry.1.min(e.location.ordinal);
    }
    let mut ranked: Vec<(ObservationPoint, f64, u32)> =
        best.into_iter().map(|(p, (s, o))| (p, s, o)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
    ranked.truncate(max_points);
    ranked.into_iter().map(|(p, _, _)| p).collect()
}
