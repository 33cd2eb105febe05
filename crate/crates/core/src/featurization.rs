//! Numerical value graphs, aligned feature vectors, feature priorities and
//! feature combinations.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interpreter::{AccessPath, MemLoc, PathStep, ProgramState, RunResult};
use crate::minilang::Value;

pub const DEFAULT_N: usize = 10;
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Int,
    Float,
    Bool,
    IsNull,
    Length,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NumericType {
    Int,
    Float,
    Bool,
}

/// What a trace access must touch to count as an access of the feature.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccessKey {
    Var(String),
    Field { record: String, field: String },
    Elem(String),
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub path: AccessPath,
    pub kind: FeatureKind,
    pub depth: u32,
    /// Assignable by an overlay. `IsNull` features are writable only
    /// towards null.
    pub writable: bool,
    pub key: AccessKey,
    /// Position in the stable path order of the session.
    pub order: usize,
}

impl FeatureDescriptor {
    pub fn numeric_type(&self) -> NumericType {
        match self.kind {
            FeatureKind::Int | FeatureKind::Length => NumericType::Int,
            FeatureKind::Float => NumericType::Float,
            FeatureKind::Bool | FeatureKind::IsNull => NumericType::Bool,
        }
    }

    /// Takes integral values only (ints, lengths and flags).
    pub fn is_integral(&self) -> bool {
        self.numeric_type() != NumericType::Float
    }

    /// The overlay value that sets this feature to `x`, or `None` when the
    /// assignment is impossible or a no-op (`isNull` towards false).
    pub fn assignment(&self, x: f64) -> Option<Value> {
        if !self.writable || !x.is_finite() && self.kind != FeatureKind::Float {
            return None;
        }
        match self.kind {
            FeatureKind::Int => Some(Value::Int(x.round() as i64)),
            FeatureKind::Float => Some(Value::Float(x)),
            FeatureKind::Bool => Some(Value::Bool(x >= 0.5)),
            FeatureKind::IsNull => (x >= 0.5).then_some(Value::Bool(true)),
            FeatureKind::Length => None,
        }
    }
}

impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Origin {
    Observed,
    Synthesized,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: Label,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("the captured states share no numeric feature")]
    NoCommonFeatures,
    #[error("feature extraction needs at least one passing and one failing state")]
    MissingLabel,
}

/// One node of a state's value graph.
struct Node {
    path: AccessPath,
    /// `path` with `[last]` replaced by the concrete index.
    concrete: AccessPath,
    kind: FeatureKind,
    depth: u32,
    key: AccessKey,
}

fn walk(
    v: &Value,
    path: AccessPath,
    concrete: AccessPath,
    depth: u32,
    key: AccessKey,
    out: &mut Vec<Node>,
) {
    let leaf = |kind| Node {
        path: path.clone(),
        concrete: concrete.clone(),
        kind,
        depth,
        key: key.clone(),
    };
    match v {
        Value::Int(_) => out.push(leaf(FeatureKind::Int)),
        Value::Float(f) if f.is_finite() => out.push(leaf(FeatureKind::Float)),
        Value::Float(_) => {}
        Value::Bool(_) => out.push(leaf(FeatureKind::Bool)),
        Value::Null => out.push(Node {
            path: path.push(PathStep::IsNull),
            concrete: concrete.push(PathStep::IsNull),
            kind: FeatureKind::IsNull,
            depth,
            key,
        }),
        Value::Record(r) => {
            out.push(Node {
                path: path.push(PathStep::IsNull),
                concrete: concrete.push(PathStep::IsNull),
                kind: FeatureKind::IsNull,
                depth,
                key,
            });
            for (name, fv) in &r.fields {
                let step = PathStep::Field(name.clone());
                let key = AccessKey::Field {
                    record: r.name.clone(),
                    field: name.clone(),
                };
                walk(
                    fv,
                    path.push(step.clone()),
                    concrete.push(step),
                    depth + 1,
                    key,
                    out,
                );
            }
        }
        Value::Array(a) => {
            out.push(Node {
                path: path.push(PathStep::Len),
                concrete: concrete.push(PathStep::Len),
                kind: FeatureKind::Length,
                depth: depth + 1,
                key: AccessKey::Never,
            });
            let key = AccessKey::Elem(a.elem.to_string());
            for (i, e) in a.elems.iter().enumerate() {
                let step = PathStep::Index(i);
                walk(
                    e,
                    path.push(step.clone()),
                    concrete.push(step),
                    depth + 1,
                    key.clone(),
                    out,
                );
            }
            if let Some(last) = a.elems.last() {
                let c = concrete.push(PathStep::Index(a.elems.len() - 1));
                walk(last, path.push(PathStep::Last), c, depth + 1, key, out);
            }
        }
    }
}

/// Value-graph nodes of the given roots of one state, in path order.
fn graph(state: &ProgramState, roots: &BTreeSet<String>) -> Vec<Node> {
    let mut out = Vec::new();
    for (name, v) in &state.bindings {
        if roots.contains(name) {
            let p = AccessPath::var(name.clone());
            walk(v, p.clone(), p, 0, AccessKey::Var(name.clone()), &mut out);
        }
    }
    out
}

/// Reads a feature from a captured state; `None` if the path does not
/// exist there.
pub fn feature_value(bindings: &BTreeMap<String, Value>, path: &AccessPath) -> Option<f64> {
    let mut v = bindings.get(&path.root)?;
    let n = path.steps.len();
    for (i, step) in path.steps.iter().enumerate() {
        v = match (step, v) {
            (PathStep::IsNull, Value::Null) if i + 1 == n => return Some(1.0),
            (PathStep::IsNull, Value::Record(_)) if i + 1 == n => return Some(0.0),
            (PathStep::Len, Value::Array(a)) if i + 1 == n => return Some(a.elems.len() as f64),
            (PathStep::Field(f), Value::Record(r)) => r.field(f)?,
            (PathStep::Index(k), Value::Array(a)) => a.elems.get(*k)?,
            (PathStep::Last, Value::Array(a)) => a.elems.last()?,
            _ => return None,
        };
    }
    match v {
        Value::Int(i) => Some(*i as f64),
        Value::Float(f) if f.is_finite() => Some(*f),
        Value::Bool(b) => Some(*b as u8 as f64),
        _ => None,
    }
}

/// Reads every descriptor from a state; `None` if any is missing.
pub fn vector_for(state: &ProgramState, descriptors: &[FeatureDescriptor]) -> Option<Vec<f64>> {
    descriptors
        .iter()
        .map(|d| feature_value(&state.bindings, &d.path))
        .collect()
}

/// Builds the features common to all `states` under the `relevant` roots and
/// one vector per state, both in path order.
pub fn extract_features(
    states: &[(&ProgramState, Label)],
    relevant: &BTreeSet<String>,
) -> Result<(Vec<FeatureDescriptor>, Vec<FeatureVector>), FeatureError> {
    let has = |l| states.iter().any(|(_, label)| *label == l);
    if !has(Label::Positive) || !has(Label::Negative) {
        return Err(FeatureError::MissingLabel);
    }
    let graphs: Vec<Vec<Node>> = states.iter().map(|(s, _)| graph(s, relevant)).collect();
    let mut common: Vec<&Node> = Vec::new();
    'nodes: for node in &graphs[0] {
        let mut concretes = BTreeSet::new();
        concretes.insert(&node.concrete);
        for g in &graphs[1..] {
            match g
                .iter()
                .find(|n| n.path == node.path && n.kind == node.kind)
            {
                Some(other) => {
                    concretes.insert(&other.concrete);
                }
                None => continue 'nodes,
            }
        }
        let aliased = node.path.steps.contains(&PathStep::Last);
        if aliased && concretes.len() == 1 {
            // `[last]` names the same element everywhere; the index path covers it
            continue;
        }
        common.push(node);
    }
    if common.is_empty() {
        return Err(FeatureError::NoCommonFeatures);
    }
    let descriptors: Vec<FeatureDescriptor> = common
        .into_iter()
        .enumerate()
        .map(|(order, n)| FeatureDescriptor {
            path: n.path.clone(),
            kind: n.kind,
            depth: n.depth,
            writable: n.kind != FeatureKind::Length,
            key: n.key.clone(),
            order,
        })
        .collect();
    let vectors = states
        .iter()
        .map(|(s, label)| FeatureVector {
            values: vector_for(s, &descriptors).expect("common features exist in every state"),
            label: *label,
            origin: crate::featurization::Origin::Observed,
        })
        .collect();
    Ok((descriptors, vectors))
}

/// The last event before `position` that reads (as a value) or writes a
/// location matching `key`.
fn last_access(run: &RunResult, frame: u32, position: usize, key: &AccessKey) -> Option<usize> {
    let matches = |loc: &MemLoc| match (key, loc) {
        (AccessKey::Var(name), MemLoc::Var { frame: f, name: n }) => *f == frame && **n == **name,
        (
            AccessKey::Field { record, field },
            MemLoc::Field {
                record: r,
                field: f,
                ..
            },
        ) => **r == **record && **f == **field,
        (AccessKey::Elem(ty), MemLoc::Elem { elem, .. }) => **elem == **ty,
        _ => false,
    };
    if *key == AccessKey::Never {
        return None;
    }
    let end = position.min(run.trace.len());
    run.trace[..end].iter().rposition(|e| {
        e.defs.iter().any(&matches) || e.uses.iter().any(|u| u.leaf && matches(&u.loc))
    })
}

/// Orders descriptors by recency of access in the failing run before the
/// point (most recent first; never accessed last), then by depth, then by
/// path order, and keeps the first `n`. Returns indices into `descriptors`.
pub fn prioritize(
    descriptors: &[FeatureDescriptor],
    failing: &RunResult,
    state: &ProgramState,
    n: usize,
) -> Vec<usize> {
    let recency: Vec<Option<usize>> = descriptors
        .iter()
        .map(|d| last_access(failing, state.frame, state.position, &d.key))
        .collect();
    let mut idx: Vec<usize> = (0..descriptors.len()).collect();
    idx.sort_by_key(|&i| {
        (
            recency[i].is_none(),
            Reverse(recency[i]),
            descriptors[i].depth,
            descriptors[i].order,
        )
    });
    idx.truncate(n);
    idx
}

/// All index sets of sizes 1..=k over 0..n. Within a size, sets are ordered
/// by their largest index, then lexicographically.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 1..=k.min(n) {
        for top in size - 1..n {
            let mut rest = Vec::new();
            lex_subsets(top, size - 1, 0, &mut Vec::new(), &mut rest);
            for mut s in rest {
                s.push(top);
                out.push(s);
            }
        }
    }
    out
}

fn lex_subsets(n: usize, k: usize, from: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in from..n {
        if n - i < k - cur.len() {
            break;
        }
        cur.push(i);
        lex_subsets(n, k, i + 1, cur, out);
        cur.pop();
    }
}

/// Session dump: a header of access paths plus `label,origin`, then one row
/// per vector.
pub fn to_csv(descriptors: &[FeatureDescriptor], vectors: &[FeatureVector]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = descriptors.iter().map(|d| d.path.to_string()).collect();
    header.extend(["label".into(), "origin".into()]);
    w.write_record(&header).expect("in-memory write");
    for v in vectors {
        let mut row: Vec<String> = v.values.iter().map(|x| format!("{x:?}")).collect();
        row.push(format!("{:?}", v.label));
        row.push(format!("{:?}", v.origin));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Parses [`to_csv`] output back into the header paths and vectors.
pub fn from_csv(text: &str) -> Option<(Vec<String>, Vec<FeatureVector>)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().ok()?.iter().map(str::to_string).collect();
    let width = header.len().checked_sub(2)?;
    let mut vectors = Vec::new();
    for record in r.records() {
        let record = record.ok()?;
        let values = (0..width)
            .map(|i| record.get(i)?.parse().ok())
            .collect::<Option<Vec<f64>>>()?;
        let label = match record.get(width)? {
            "Positive" => Label::Positive,
            "Negative" => Label::Negative,
            _ => return None,
        };
        let origin = match record.get(width + 1)? {
            "Observed" => Origin::Observed,
            "Synthesized" => Origin::Synthesized,
            "Sampled" => Origin::Sampled,
            _ => return None,
        };
        vectors.push(FeatureVector {
            values,
            label,
            origin,
        });
    }
    Some((header[..width].to_vec(), vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpreter::{
        dynamic_slice, execute, relevant_variables_at, slice_events, ExecOptions, ObservationPoint,
        Verdict,
    };
    use crate::minilang::{compile, ArrayValue, Type};
    use crate::testgen::load_tests;

    const STU: &str = include_str!("../../../corpus/stu/stu.ml5");
    const STU_TESTS: &str = include_str!("../../../corpus/stu/stu.tests");

    fn state(bindings: Vec<(&str, Value)>) -> ProgramState {
        ProgramState {
            point: ObservationPoint::before(crate::minilang::LocationId::new(0, 1)),
            bindings: bindings
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            frame: 0,
            position: 0,
            reach: BTreeMap::new(),
        }
    }

    fn ints(xs: &[i64]) -> Value {
        Value::Array(ArrayValue {
            elem: Type::Int,
            elems: xs.iter().map(|&x| Value::Int(x)).collect(),
        })
    }

    #[test]
    fn combination_order() {
        assert_eq!(
            combinations(3, 2),
            vec![
                vec![0],
                vec![1],
                vec![2],
                vec![0, 1],
                vec![0, 2],
                vec![1, 2]
            ]
        );
        assert_eq!(combinations(10, 3).len(), 175);
        let c = combinations(4, 3);
        assert_eq!(
            &c[10..],
            &[vec![0, 1, 2], vec![0, 1, 3], vec![0, 2, 3], vec![1, 2, 3]]
        );
    }

    #[test]
    fn single_int_variable() {
        let a = state(vec![("x", Value::Int(3))]);
        let b = state(vec![("x", Value::Int(-4))]);
        let roots = ["x".to_string()].into();
        let (d, v) =
            extract_features(&[(&a, Label::Positive), (&b, Label::Negative)], &roots).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(v[0].values, [3.0]);
        assert_eq!(v[1].values, [-4.0]);
    }

    #[test]
    fn arrays_of_different_lengths_keep_shared_prefix_and_last() {
        let a = state(vec![("xs", ints(&[1, 2, 3]))]);
        let b = state(vec![("xs", ints(&[4, 5, 6, 7, 8]))]);
        let roots = ["xs".to_string()].into();
        let (d, v) =
            extract_features(&[(&a, Label::Positive), (&b, Label::Negative)], &roots).unwrap();
        let names: Vec<String> = d.iter().map(|d| d.to_string()).collect();
        assert_eq!(names, ["xs.length", "xs[0]", "xs[1]", "xs[2]", "xs[last]"]);
        assert_eq!(v[1].values, [5.0, 4.0, 5.0, 6.0, 8.0]);
    }

    #[test]
    fn missing_label_is_rejected() {
        let a = state(vec![("x", Value::Int(3))]);
        let roots = ["x".to_string()].into();
        assert_eq!(
            extract_features(&[(&a, Label::Positive)], &roots),
            Err(FeatureError::MissingLabel)
        );
    }

    #[test]
    fn running_example_features_before_line_8() {
        let tp = compile(STU).unwrap();
        let tests = load_tests(STU_TESTS, &tp).unwrap();
        let p = ObservationPoint::before(tp.location(7).unwrap());
        let opts = ExecOptions {
            capture_at: [p].into(),
            ..Default::default()
        };
        let runs: Vec<RunResult> = tests
            .iter()
            .map(|t| execute(&tp, &t.args, &opts).unwrap())
            .collect();
        let failing = &runs[0];
        let slice = slice_events(&failing.trace, failing.assertion_event.unwrap());
        assert_eq!(
            dynamic_slice(&failing.trace, failing.assertion_event.unwrap()).len(),
            9
        );
        let roots = relevant_variables_at(failing, &slice, p);
        let states: Vec<(&ProgramState, Label)> = runs
            .iter()
            .filter(|r| r.verdict != Verdict::Irrelevant)
            .map(|r| {
                let l = if r.verdict == Verdict::Fail {
                    Label::Negative
                } else {
                    Label::Positive
                };
                (&r.captures[&p], l)
            })
            .collect();
        let (d, v) = extract_features(&states, &roots).unwrap();
        let order = prioritize(&d, failing, &failing.captures[&p], DEFAULT_N);
        let names: Vec<String> = order.iter().map(|&i| d[i].to_string()).collect();
        assert_eq!(
            names,
            [
                "max",
                "stus[0].score",
                "stus[1].score",
                "stus[2].score",
                "stus.length",
                "stus[0].isNull",
                "stus[1].isNull",
                "stus[2].isNull",
                "stus[0].ID",
                "stus[0].newscore",
            ]
        );
        let first: Vec<f64> = order.iter().map(|&i| v[0].values[i]).collect();
        assert_eq!(
            first,
            [94.0, 94.0, 60.0, 100.0, 3.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn no_accesses_means_depth_order() {
        let tp = compile("entry fn f(a: int) { assert a > 0; }").unwrap();
        let run = execute(&tp, &[Value::Int(1)], &ExecOptions::default()).unwrap();
        let mk = |name: &str, depth, order| FeatureDescriptor {
            path: AccessPath::var(name),
            kind: FeatureKind::Int,
            depth,
            writable: true,
            key: AccessKey::Never,
            order,
        };
        let d = vec![mk("a", 2, 0), mk("b", 0, 1), mk("c", 1, 2), mk("d", 0, 3)];
        let s = state(vec![]);
        assert_eq!(prioritize(&d, &run, &s, 10), [1, 3, 2, 0]);
    }

    #[test]
    fn csv_roundtrip() {
        let d = vec![FeatureDescriptor {
            path: AccessPath::var("x"),
            kind: FeatureKind::Float,
            depth: 0,
            writable: true,
            key: AccessKey::Never,
            order: 0,
        }];
        let v = vec![FeatureVector {
            values: vec![0.49999999999999994],
            label: Label::Negative,
            origin: Origin::Sampled,
        }];
        let text = to_csv(&d, &v);
        assert_eq!(
            text,
            "x,label,origin\n0.49999999999999994,Negative,Sampled\n"
        );
        let (h, back) = from_csv(&text).unwrap();
        assert_eq!(h, ["x"]);
        assert_eq!(back, v);
    }
}
