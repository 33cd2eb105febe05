//! Instrumented tree-walking interpreter for MiniLang.
//!
//! A run records one [`TraceEvent`] per executed statement instance (loop
//! checks are events of the loop statement), completed-statement coverage,
//! and snapshots of the program state at requested observation points. A
//! [`MutationOverlay`] injects values at a point before the state is captured.

mod exec;
mod slice;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::minilang::{LocationId, Value};

pub use exec::{execute, ExecError, ExecOptions, DEFAULT_BUDGET, MAX_CALL_DEPTH};
pub use slice::{dynamic_slice, relevant_variables_at, slice_events};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Position {
    Before,
    After,
}

/// A program position next to a statement where states are captured and
/// mutated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObservationPoint {
    pub anchor: LocationId,
    pub position: Position,
}

impl ObservationPoint {
    pub fn before(anchor: LocationId) -> Self {
        Self {
            anchor,
            position: Position::Before,
        }
    }

    pub fn after(anchor: LocationId) -> Self {
        Self {
            anchor,
            position: Position::After,
        }
    }
}

impl fmt::Display for ObservationPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pos = match self.position {
            Position::Before => "before",
            Position::After => "after",
        };
        write!(f, "{pos} line {}", self.anchor.line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PathStep {
    Field(String),
    Index(usize),
    /// The last element of an array, whatever its length.
    Last,
    Len,
    IsNull,
}

/// A root variable followed by field, index and inspector steps, such as
/// `stus[2].score` or `stus.length`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccessPath {
    pub root: String,
    pub steps: Vec<PathStep>,
}

impl AccessPath {
    pub fn var(root: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            steps: Vec::new(),
        }
    }

    pub fn push(&self, step: PathStep) -> Self {
        let mut p = self.clone();
        p.steps.push(step);
        p
    }
}

impl fmt::Display for AccessPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.root)?;
        for s in &self.steps {
            match s {
                PathStep::Field(name) => write!(f, ".{name}")?,
                PathStep::Index(i) => write!(f, "[{i}]")?,
                PathStep::Last => f.write_str("[last]")?,
                PathStep::Len => f.write_str(".length")?,
                PathStep::IsNull => f.write_str(".isNull")?,
            }
        }
        Ok(())
    }
}

/// Assignments injected at the first visit of `point`.
///
/// An `IsNull` path accepts only `true` (set the reference to null); `false`
/// is accepted when the reference is already non-null and changes nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationOverlay {
    pub point: ObservationPoint,
    pub assignments: Vec<(AccessPath, Value)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    Irrelevant,
}

/// A concrete memory location as seen by the trace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MemLoc {
    Var {
        frame: u32,
        name: Arc<str>,
    },
    Field {
        obj: usize,
        record: Arc<str>,
        field: Arc<str>,
    },
    Elem {
        arr: usize,
        index: usize,
        elem: Arc<str>,
    },
    /// Return value slot of a call frame.
    Ret {
        frame: u32,
    },
}

impl fmt::Display for MemLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemLoc::Var { frame, name } => write!(f, "{name}#{frame}"),
            MemLoc::Field { obj, field, .. } => write!(f, "@{obj}.{field}"),
            MemLoc::Elem { arr, index, .. } => write!(f, "@{arr}[{index}]"),
            MemLoc::Ret { frame } => write!(f, "ret#{frame}"),
        }
    }
}

/// A read of `loc`, linked to the event that last defined it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Use {
    pub loc: MemLoc,
    pub def: Option<usize>,
    /// The value itself was consumed, not just dereferenced on the way.
    pub leaf: bool,
    /// Variable the access chain started from, for field and element reads.
    pub base: Option<MemLoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub location: LocationId,
    pub visit: u32,
    pub frame: u32,
    pub defs: Vec<MemLoc>,
    pub uses: Vec<Use>,
    pub control_parent: Option<usize>,
}

/// Deep snapshot of the variables in scope at an observation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramState {
    pub point: ObservationPoint,
    pub bindings: BTreeMap<String, Value>,
    pub frame: u32,
    /// Trace index of the next event at capture time.
    pub position: usize,
    /// Heap objects reachable from each binding.
    pub reach: BTreeMap<String, BTreeSet<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub verdict: Verdict,
    pub trace: Vec<TraceEvent>,
    pub coverage: BTreeSet<LocationId>,
    #[serde(with = "crate::pairs")]
    pub captures: BTreeMap<ObservationPoint, ProgramState>,
    /// Trace index at the first visit of every point reached.
    #[serde(with = "crate::pairs")]
    pub point_positions: BTreeMap<ObservationPoint, usize>,
    /// Event evaluating the designated assertion (the failing one on Fail).
    pub assertion_event: Option<usize>,
    pub exception: Option<String>,
    pub budget_exceeded: bool,
    pub overlay_applied: bool,
    pub steps: u64,
}

impl RunResult {
    pub fn reached(&self, point: &ObservationPoint) -> bool {
        self.point_positions.contains_key(point)
    }

    /// One event per line: `index ordinal visit defs=[..] uses=[..] parent`.
    pub fn dump_trace(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.trace.iter().enumerate() {
            let defs: Vec<String> = e.defs.iter().map(|d| d.to_string()).collect();
            let uses: Vec<String> = e
                .uses
                .iter()
                .map(|u| match u.def {
                    Some(d) => format!("{}<-{d}", u.loc),
                    None => format!("{}<-_", u.loc),
                })
                .collect();
            let parent = e
                .control_parent
                .map_or_else(|| "-".to_string(), |p| p.to_string());
            out.push_str(&format!(
                "{i} {} {} defs=[{}] uses=[{}] {parent}\n",
                e.location.ordinal,
                e.visit,
                defs.join(","),
                uses.join(",")
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::{compile, RecordValue, TypedProgram};

    const STU: &str = include_str!("../../../../corpus/stu/stu.ml5");

    fn stu(score: i64, id: i64) -> Value {
        Value::Record(RecordValue {
            name: "Stu".into(),
            fields: vec![
                ("score".into(), Value::Int(score)),
                ("ID".into(), Value::Int(id)),
                ("newscore".into(), Value::Float(0.0)),
            ],
        })
    }

    fn tests() -> Vec<Vec<Value>> {
        vec![
            vec![stu(94, 1), stu(60, 2), stu(100, 3)],
            vec![stu(75, 3), stu(90, 2), stu(80, 1)],
            vec![Value::Null, Value::Null, Value::Null],
            vec![stu(-33, 99), stu(12, -10), stu(0, 0)],
        ]
    }

    fn line(tp: &TypedProgram, numbered: u32) -> LocationId {
        tp.location(numbered - 1).unwrap()
    }

    fn run(tp: &TypedProgram, args: &[Value], opts: &ExecOptions) -> RunResult {
        execute(tp, args, opts).unwrap()
    }

    #[test]
    fn running_example_verdicts() {
        let tp = compile(STU).unwrap();
        let verdicts: Vec<Verdict> = tests()
            .iter()
            .map(|t| run(&tp, t, &ExecOptions::default()).verdict)
            .collect();
        assert_eq!(
            verdicts,
            [
                Verdict::Fail,
                Verdict::Pass,
                Verdict::Irrelevant,
                Verdict::Pass
            ]
        );
    }

    #[test]
    fn null_students_raise_in_the_loop_body() {
        let tp = compile(STU).unwrap();
        let r = run(&tp, &tests()[2], &ExecOptions::default());
        assert!(r.exception.as_deref().unwrap().contains("null dereference"));
        let covered: Vec<u32> = r.coverage.iter().map(|l| l.line).collect();
        let expected: Vec<u32> = [1, 2, 4, 5].iter().map(|&l| line(&tp, l).line).collect();
        assert_eq!(covered, expected);
    }

    #[test]
    fn overlay_before_line_8_flips_test_2() {
        let tp = compile(STU).unwrap();
        let overlay = MutationOverlay {
            point: ObservationPoint::before(line(&tp, 8)),
            assignments: vec![(AccessPath::var("max"), Value::Int(12))],
        };
        let opts = ExecOptions {
            overlay: Some(&overlay),
            capture_at: [overlay.point].into(),
            ..Default::default()
        };
        let r = run(&tp, &tests()[1], &opts);
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.overlay_applied);
        assert_eq!(r.captures[&overlay.point].bindings["max"], Value::Int(12));
    }

    #[test]
    fn failing_slice_contains_every_statement() {
        let tp = compile(STU).unwrap();
        let r = run(&tp, &tests()[0], &ExecOptions::default());
        let slice = dynamic_slice(&r.trace, r.assertion_event.unwrap());
        assert_eq!(slice.len(), 9);
    }

    #[test]
    fn relevant_variables_before_line_8() {
        let tp = compile(STU).unwrap();
        let p = ObservationPoint::before(line(&tp, 8));
        let a = ObservationPoint::before(line(&tp, 3));
        let opts = ExecOptions {
            capture_at: [p, a].into(),
            ..Default::default()
        };
        let r = run(&tp, &tests()[0], &opts);
        let slice = slice_events(&r.trace, r.assertion_event.unwrap());
        let vars: Vec<String> = relevant_variables_at(&r, &slice, p).into_iter().collect();
        assert_eq!(vars, ["max", "stus"]);
        let vars: Vec<String> = relevant_variables_at(&r, &slice, a).into_iter().collect();
        assert_eq!(vars, ["s3"]);
    }

    #[test]
    fn straight_line_slice_skips_unused_definitions() {
        let tp = compile("entry fn f() { let x: int = 1; let y: int = 2; assert x > 0; }").unwrap();
        let r = run(&tp, &[], &ExecOptions::default());
        let slice: Vec<u32> = dynamic_slice(&r.trace, r.assertion_event.unwrap())
            .iter()
            .map(|l| l.ordinal)
            .collect();
        assert_eq!(slice, [0, 2]);
    }

    #[test]
    fn runs_are_deterministic() {
        let tp = compile(STU).unwrap();
        let opts = ExecOptions {
            capture_at: [ObservationPoint::after(line(&tp, 1))].into(),
            ..Default::default()
        };
        for t in tests() {
            let a = serde_json::to_string(&run(&tp, &t, &opts)).unwrap();
            let b = serde_json::to_string(&run(&tp, &t, &opts)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn budget_overrun_is_irrelevant() {
        let tp = compile("entry fn f() { while (true) { } assert true; }").unwrap();
        let opts = ExecOptions {
            budget: 1000,
            ..Default::default()
        };
        let r = run(&tp, &[], &opts);
        assert_eq!(r.verdict, Verdict::Irrelevant);
        assert!(r.budget_exceeded);
    }

    #[test]
    fn deep_recursion_is_supported() {
        let src = "fn down(n: int) -> int { if (n == 0) { return 0; } return 1 + down(n - 1); }\n\
                   entry fn f(n: int) { assert down(n) == n; }";
        let tp = compile(src).unwrap();
        let opts = ExecOptions {
            record_trace: false,
            ..Default::default()
        };
        let r = run(&tp, &[Value::Int(15_000)], &opts);
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn arithmetic_semantics() {
        let src = "entry fn f(a: int, b: int) { let m: int = a * b; let q: float = sqrt(-1.0); \
                   assert m < 0 && !(q == q); }";
        let tp = compile(src).unwrap();
        let r = run(
            &tp,
            &[Value::Int(i64::MAX), Value::Int(2)],
            &ExecOptions::default(),
        );
        assert_eq!(r.verdict, Verdict::Pass);
        let src = "entry fn f(a: int) { let m: int = 1 / a; assert m > 0; }";
        let tp = compile(src).unwrap();
        let r = run(&tp, &[Value::Int(0)], &ExecOptions::default());
        assert_eq!(r.verdict, Verdict::Irrelevant);
        assert!(!r.coverage.contains(&tp.location(0).unwrap()));
    }

    #[test]
    fn unresolvable_overlay_makes_the_run_irrelevant() {
        let tp = compile(STU).unwrap();
        let overlay = MutationOverlay {
            point: ObservationPoint::before(line(&tp, 8)),
            assignments: vec![(
                AccessPath::var("stus")
                    .push(PathStep::Index(7))
                    .push(PathStep::Field("score".into())),
                Value::Int(1),
            )],
        };
        let opts = ExecOptions {
            overlay: Some(&overlay),
            ..Default::default()
        };
        assert_eq!(run(&tp, &tests()[0], &opts).verdict, Verdict::Irrelevant);
    }

    #[test]
    fn is_null_overlay_clears_a_reference() {
        let tp = compile(STU).unwrap();
        let overlay = MutationOverlay {
            point: ObservationPoint::before(line(&tp, 8)),
            assignments: vec![(
                AccessPath::var("stus")
                    .push(PathStep::Index(0))
                    .push(PathStep::IsNull),
                Value::Bool(true),
            )],
        };
        let opts = ExecOptions {
            overlay: Some(&overlay),
            ..Default::default()
        };
        let r = run(&tp, &tests()[1], &opts);
        assert_eq!(r.verdict, Verdict::Irrelevant);
        assert!(r.exception.unwrap().contains("null"));
    }
}
