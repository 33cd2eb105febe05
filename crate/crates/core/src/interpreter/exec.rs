use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use super::*;
use crate::minilang::{
    is_builtin, ArrayValue, BinOp, Expr, ExprKind, LocationId, Program, RecordValue, Stmt,
    StmtKind, Type, TypedProgram, UnOp, Value,
};

/// Statement instances executed before a run is cut off.
pub const DEFAULT_BUDGET: u64 = 1_000_000;
pub const MAX_CALL_DEPTH: usize = 20_000;

#[derive(Debug, Clone)]
pub struct ExecOptions<'a> {
    pub overlay: Option<&'a MutationOverlay>,
    pub capture_at: BTreeSet<ObservationPoint>,
    pub budget: u64,
    /// Keep per-event trace records. Coverage, captures and point positions
    /// are produced either way.
    pub record_trace: bool,
}

impl Default for ExecOptions<'_> {
    fn default() -> Self {
        Self {
            overlay: None,
            capture_at: BTreeSet::new(),
            budget: DEFAULT_BUDGET,
            record_trace: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("entry function takes {expected} arguments, test has {found}")]
    Arity { expected: usize, found: usize },
    #[error("argument {index}: {message}")]
    ArgType { index: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Rt {
    Int(i64),
    Float(f64),
    Bool(bool),
    Null,
    Ref(usize),
}

#[derive(Debug)]
enum Obj {
    Record {
        rec: usize,
        fields: Vec<Rt>,
    },
    Array {
        elem: Type,
        elem_name: Arc<str>,
        elems: Vec<Rt>,
    },
}

struct Frame {
    id: u32,
    func: usize,
    vars: BTreeMap<Arc<str>, (Type, Rt)>,
    scopes: Vec<Vec<Arc<str>>>,
}

enum Stop {
    Exception(String),
    Budget,
    AssertFail,
}

enum Flow {
    Normal,
    Return(Option<Rt>),
}

#[derive(Clone, Copy)]
enum Slot {
    Var(usize),
    Field(usize, usize),
    Elem(usize, usize),
}

type Res<T> = Result<T, Stop>;

struct Machine<'a> {
    program: &'a Program,
    designated: Option<LocationId>,
    opts: &'a ExecOptions<'a>,
    heap: Vec<Obj>,
    frames: Vec<Frame>,
    next_frame: u32,
    trace: Vec<TraceEvent>,
    shadow: HashMap<MemLoc, usize>,
    active: Vec<(usize, LocationId)>,
    raised: Option<LocationId>,
    visits: Vec<u32>,
    events: usize,
    steps: u64,
    points: BTreeMap<ObservationPoint, usize>,
    captures: BTreeMap<ObservationPoint, ProgramState>,
    assertion_event: Option<usize>,
    assert_passed: bool,
    overlay_applied: bool,
    rec_names: Vec<Arc<str>>,
    field_names: Vec<Vec<Arc<str>>>,
    /// Slot names for the overlay's root variable, by frame variable index.
    slot_vars: Vec<Arc<str>>,
}

/// Runs the entry function of `program` on `args`.
pub fn execute(
    program: &TypedProgram,
    args: &[Value],
    opts: &ExecOptions<'_>,
) -> Result<RunResult, ExecError> {
    let prog = program.program();
    let entry = prog.entry_function();
    if entry.params.len() != args.len() {
        return Err(ExecError::Arity {
            expected: entry.params.len(),
            found: args.len(),
        });
    }
    let mut m = Machine {
        program: prog,
        designated: program.designated_assertion(),
        opts,
        heap: Vec::new(),
        frames: Vec::new(),
        next_frame: 1,
        trace: Vec::new(),
        shadow: HashMap::new(),
        active: Vec::new(),
        raised: None,
        visits: vec![0; program.infos().len()],
        events: 0,
        steps: 0,
        points: BTreeMap::new(),
        captures: BTreeMap::new(),
        assertion_event: None,
        assert_passed: false,
        overlay_applied: false,
        rec_names: prog
            .records
            .iter()
            .map(|r| Arc::from(r.name.as_str()))
            .collect(),
        field_names: prog
            .records
            .iter()
            .map(|r| {
                r.fields
                    .iter()
                    .map(|(f, _)| Arc::from(f.as_str()))
                    .collect()
            })
            .collect(),
        slot_vars: Vec::new(),
    };
    let mut frame = Frame {
        id: 0,
        func: prog
            .functions
            .iter()
            .position(|f| f.is_entry)
            .expect("entry exists"),
        vars: BTreeMap::new(),
        scopes: Vec::new(),
    };
    for (index, (p, v)) in entry.params.iter().zip(args).enumerate() {
        let v = v
            .clone()
            .coerce(&p.ty, prog)
            .map_err(|message| ExecError::ArgType { index, message })?;
        let rt = m.alloc_value(&v, &p.ty);
        frame
            .vars
            .insert(Arc::from(p.name.as_str()), (p.ty.clone(), rt));
    }
    m.frames.push(frame);
    let outcome = m.exec_block(&entry.body, None);

    let mut exception = None;
    let mut budget_exceeded = false;
    let verdict = match outcome {
        Err(Stop::AssertFail) => Verdict::Fail,
        Err(Stop::Exception(msg)) => {
            exception = Some(msg);
            Verdict::Irrelevant
        }
        Err(Stop::Budget) => {
            budget_exceeded = true;
            Verdict::Irrelevant
        }
        Ok(_) if m.assert_passed => Verdict::Pass,
        Ok(_) => Verdict::Irrelevant,
    };
    let mut coverage: BTreeSet<LocationId> = program
        .infos()
        .iter()
        .filter(|i| m.visits[i.id.ordinal as usize] > 0)
        .map(|i| i.id)
        .collect();
    if let Some(loc) = m.raised {
        if m.visits[loc.ordinal as usize] == 1 {
            coverage.remove(&loc);
        }
    }
    Ok(RunResult {
        verdict,
        trace: m.trace,
        coverage,
        captures: m.captures,
        point_positions: m.points,
        assertion_event: m.assertion_event,
        exception,
        budget_exceeded,
        overlay_applied: m.overlay_applied,
        steps: m.steps,
    })
}

fn coerce(v: Rt, ty: &Type) -> Rt {
    match (v, ty) {
        (Rt::Int(i), Type::Float) => Rt::Float(i as f64),
        (v, _) => v,
    }
}

fn num(v: Rt) -> f64 {
    match v {
        Rt::Int(i) => i as f64,
        Rt::Float(f) => f,
        _ => f64::NAN,
    }
}

impl<'a> Machine<'a> {
    fn record(&self) -> bool {
        self.opts.record_trace
    }

    fn frame(&self) -> &Frame {
        self.frames.last().expect("a frame is active")
    }

    fn frame_mut(&mut self) -> &mut Frame {
        self.frames.last_mut().expect("a frame is active")
    }

    fn throw<T>(&mut self, msg: impl Into<String>) -> Res<T> {
        if self.raised.is_none() {
            self.raised = self.active.last().map(|&(_, loc)| loc);
        }
        Err(Stop::Exception(msg.into()))
    }

    fn begin(&mut self, loc: LocationId, ctrl: Option<usize>) -> Res<usize> {
        self.steps += 1;
        if self.steps > self.opts.budget {
            return Err(Stop::Budget);
        }
        self.visits[loc.ordinal as usize] += 1;
        let idx = self.events;
        self.events += 1;
        if self.record() {
            let visit = self.visits[loc.ordinal as usize];
            let frame = self.frame().id;
            self.trace.push(TraceEvent {
                location: loc,
                visit,
                frame,
                defs: Vec::new(),
                uses: Vec::new(),
                control_parent: ctrl,
            });
        }
        self.active.push((idx, loc));
        Ok(idx)
    }

    fn end(&mut self) {
        self.active.pop();
    }

    fn note_use(&mut self, loc: MemLoc, leaf: bool, base: Option<MemLoc>) {
        if !self.record() {
            return;
        }
        if let Some(&(idx, _)) = self.active.last() {
            let def = self.shadow.get(&loc).copied();
            self.trace[idx].uses.push(Use {
                loc,
                def,
                leaf,
                base,
            });
        }
    }

    fn note_def(&mut self, loc: MemLoc) {
        if !self.record() {
            return;
        }
        if let Some(&(idx, _)) = self.active.last() {
            self.trace[idx].defs.push(loc.clone());
            self.shadow.insert(loc, idx);
        }
    }

    fn var_loc(&self, name: &str) -> MemLoc {
        MemLoc::Var {
            frame: self.frame().id,
            name: Arc::from(name),
        }
    }

    fn field_loc(&self, obj: usize, field: usize) -> MemLoc {
        let Obj::Record { rec, .. } = &self.heap[obj] else {
            unreachable!("field of a non-record")
        };
        MemLoc::Field {
            obj,
            record: self.rec_names[*rec].clone(),
            field: self.field_names[*rec][field].clone(),
        }
    }

    fn elem_loc(&self, arr: usize, index: usize) -> MemLoc {
        let Obj::Array { elem_name, .. } = &self.heap[arr] else {
            unreachable!("element of a non-array")
        };
        MemLoc::Elem {
            arr,
            index,
            elem: elem_name.clone(),
        }
    }

    fn declare(&mut self, name: &str, ty: &Type, v: Rt) {
        let name: Arc<str> = Arc::from(name);
        let frame = self.frame_mut();
        frame.vars.insert(name.clone(), (ty.clone(), coerce(v, ty)));
        if let Some(scope) = frame.scopes.last_mut() {
            scope.push(name);
        }
    }

    fn set_var(&mut self, name: &str, v: Rt) {
        let slot = self
            .frame_mut()
            .vars
            .get_mut(name)
            .expect("typechecked variable");
        slot.1 = coerce(v, &slot.0);
    }

    // ---- observation points ------------------------------------------------

    fn visit_point(&mut self, p: ObservationPoint) -> Res<()> {
        if self.points.contains_key(&p) {
            return Ok(());
        }
        self.points.insert(p, self.events);
        if let Some(ov) = self.opts.overlay {
            if ov.point == p {
                self.overlay_applied = true;
                for (path, value) in &ov.assignments {
                    self.apply_assignment(path, value)?;
                }
            }
        }
        if self.opts.capture_at.contains(&p) {
            self.capture(p);
        }
        Ok(())
    }

    fn capture(&mut self, point: ObservationPoint) {
        let mut bindings = BTreeMap::new();
        let mut reach = BTreeMap::new();
        for (name, (_, v)) in &self.frame().vars {
            bindings.insert(name.to_string(), self.snapshot(*v, &mut Vec::new()));
            let mut set = BTreeSet::new();
            self.reachable(*v, &mut set);
            reach.insert(name.to_string(), set);
        }
        let state = ProgramState {
            point,
            bindings,
            frame: self.frame().id,
            position: self.events,
            reach,
        };
        self.captures.insert(point, state);
    }

    fn snapshot(&self, v: Rt, ancestors: &mut Vec<usize>) -> Value {
        match v {
            Rt::Int(i) => Value::Int(i),
            Rt::Float(f) => Value::Float(f),
            Rt::Bool(b) => Value::Bool(b),
            Rt::Null => Value::Null,
            Rt::Ref(o) => {
                let cyclic = ancestors.contains(&o);
                ancestors.push(o);
                let out = match &self.heap[o] {
                    Obj::Record { .. } if cyclic => Value::Null,
                    Obj::Record { rec, fields } => Value::Record(RecordValue {
                        name: self.rec_names[*rec].to_string(),
                        fields: fields
                            .iter()
                            .enumerate()
                            .map(|(i, f)| {
                                (
                                    self.field_names[*rec][i].to_string(),
                                    self.snapshot(*f, ancestors),
                                )
                            })
                            .collect(),
                    }),
                    Obj::Array { elem, elems, .. } => Value::Array(ArrayValue {
                        elem: elem.clone(),
                        elems: if cyclic {
                            Vec::new()
                        } else {
                            elems.iter().map(|e| self.snapshot(*e, ancestors)).collect()
                        },
                    }),
                };
                ancestors.pop();
                out
            }
        }
    }

    fn reachable(&self, v: Rt, out: &mut BTreeSet<usize>) {
        let mut stack = vec![v];
        while let Some(v) = stack.pop() {
            if let Rt::Ref(o) = v {
                if out.insert(o) {
                    match &self.heap[o] {
                        Obj::Record { fields, .. } => stack.extend(fields.iter().copied()),
                        Obj::Array { elems, .. } => stack.extend(elems.iter().copied()),
                    }
                }
            }
        }
    }

    fn alloc_value(&mut self, v: &Value, ty: &Type) -> Rt {
        match (v, ty) {
            (Value::Int(i), Type::Float) => Rt::Float(*i as f64),
            (Value::Int(i), _) => Rt::Int(*i),
            (Value::Float(f), _) => Rt::Float(*f),
            (Value::Bool(b), _) => Rt::Bool(*b),
            (Value::Null, _) => Rt::Null,
            (Value::Record(r), _) => {
                let rec = self
                    .program
                    .records
                    .iter()
                    .position(|d| d.name == r.name)
                    .expect("conforming record");
                let def = &self.program.records[rec];
                let types: Vec<Type> = def.fields.iter().map(|(_, t)| t.clone()).collect();
                let fields = types
                    .iter()
                    .zip(&r.fields)
                    .map(|(t, (_, v))| self.alloc_value(v, t))
                    .collect();
                self.heap.push(Obj::Record { rec, fields });
                Rt::Ref(self.heap.len() - 1)
            }
            (Value::Array(a), _) => {
                let elems = a
                    .elems
                    .iter()
                    .map(|v| self.alloc_value(v, &a.elem))
                    .collect();
                self.alloc_array(a.elem.clone(), elems)
            }
        }
    }

    fn alloc_array(&mut self, elem: Type, elems: Vec<Rt>) -> Rt {
        let elem_name = Arc::from(elem.to_string().as_str());
        self.heap.push(Obj::Array {
            elem,
            elem_name,
            elems,
        });
        Rt::Ref(self.heap.len() - 1)
    }

    // ---- overlays ----------------------------------------------------------

    fn slot_read(&self, slot: Slot) -> Rt {
        match slot {
            Slot::Var(i) => self.frame().vars[&self.slot_vars[i]].1,
            Slot::Field(o, f) => match &self.heap[o] {
                Obj::Record { fields, .. } => fields[f],
                _ => unreachable!(),
            },
            Slot::Elem(a, i) => match &self.heap[a] {
                Obj::Array { elems, .. } => elems[i],
                _ => unreachable!(),
            },
        }
    }

    fn slot_type(&self, slot: Slot) -> Type {
        match slot {
            Slot::Var(i) => self.frame().vars[&self.slot_vars[i]].0.clone(),
            Slot::Field(o, f) => match &self.heap[o] {
                Obj::Record { rec, .. } => self.program.records[*rec].fields[f].1.clone(),
                _ => unreachable!(),
            },
            Slot::Elem(a, _) => match &self.heap[a] {
                Obj::Array { elem, .. } => elem.clone(),
                _ => unreachable!(),
            },
        }
    }

    fn slot_write(&mut self, slot: Slot, v: Rt) {
        match slot {
            Slot::Var(i) => {
                let name = self.slot_vars[i].clone();
                self.frame_mut().vars.get_mut(&name).expect("resolved").1 = v;
                let loc = self.var_loc(&name);
                self.shadow.remove(&loc);
            }
            Slot::Field(o, f) => {
                if let Obj::Record { fields, .. } = &mut self.heap[o] {
                    fields[f] = v;
                }
                let loc = self.field_loc(o, f);
                self.shadow.remove(&loc);
            }
            Slot::Elem(a, i) => {
                if let Obj::Array { elems, .. } = &mut self.heap[a] {
                    elems[i] = v;
                }
                let loc = self.elem_loc(a, i);
                self.shadow.remove(&loc);
            }
        }
    }

    fn resolve_slot(&mut self, path: &AccessPath, steps: &[PathStep]) -> Option<Slot> {
        if !self.frame().vars.contains_key(path.root.as_str()) {
            return None;
        }
        self.slot_vars = vec![Arc::from(path.root.as_str())];
        let mut slot = Slot::Var(0);
        for step in steps {
            let Rt::Ref(o) = self.slot_read(slot) else {
                return None;
            };
            slot = match (step, &self.heap[o]) {
                (PathStep::Field(f), Obj::Record { rec, .. }) => {
                    Slot::Field(o, self.program.records[*rec].field_index(f)?)
                }
                (PathStep::Index(i), Obj::Array { elems, .. }) if *i < elems.len() => {
                    Slot::Elem(o, *i)
                }
                (PathStep::Last, Obj::Array { elems, .. }) if !elems.is_empty() => {
                    Slot::Elem(o, elems.len() - 1)
                }
                _ => return None,
            };
        }
        Some(slot)
    }

    fn apply_assignment(&mut self, path: &AccessPath, value: &Value) -> Res<()> {
        let unresolved = |m: &mut Self| m.throw(format!("overlay cannot assign `{path}`"));
        if let Some(PathStep::IsNull) = path.steps.last() {
            let Some(slot) = self.resolve_slot(path, &path.steps[..path.steps.len() - 1]) else {
                return unresolved(self);
            };
            if !matches!(self.slot_type(slot), Type::Record(_)) {
                return unresolved(self);
            }
            return match (value, self.slot_read(slot)) {
                (Value::Bool(true) | Value::Int(1), _) => {
                    self.slot_write(slot, Rt::Null);
                    Ok(())
                }
                (Value::Bool(false) | Value::Int(0), Rt::Ref(_)) => Ok(()),
                _ => unresolved(self),
            };
        }
        let Some(slot) = self.resolve_slot(path, &path.steps) else {
            return unresolved(self);
        };
        let ty = self.slot_type(slot);
        let v = match (value, &ty) {
            (Value::Int(i), Type::Int) => Rt::Int(*i),
            (Value::Int(i), Type::Float) => Rt::Float(*i as f64),
            (Value::Float(f), Type::Float) => Rt::Float(*f),
            (Value::Float(f), Type::Int) if f.fract() == 0.0 && f.abs() < 9.2e18 => {
                Rt::Int(*f as i64)
            }
            (Value::Bool(b), Type::Bool) => Rt::Bool(*b),
            (v, ty) if v.conforms(ty, self.program) => self.alloc_value(v, ty),
            _ => return unresolved(self),
        };
        self.slot_write(slot, v);
        Ok(())
    }

    // ---- statements --------------------------------------------------------

    fn exec_block(&mut self, stmts: &'a [Stmt], ctrl: Option<usize>) -> Res<Flow> {
        self.frame_mut().scopes.push(Vec::new());
        let mut flow = Flow::Normal;
        for s in stmts {
            flow = self.exec_stmt(s, ctrl)?;
            if let Flow::Return(_) = flow {
                break;
            }
        }
        let frame = self.frame_mut();
        for name in frame.scopes.pop().expect("scope pushed") {
            frame.vars.remove(&name);
        }
        Ok(flow)
    }

    fn exec_stmt(&mut self, s: &'a Stmt, ctrl: Option<usize>) -> Res<Flow> {
        self.visit_point(ObservationPoint::before(s.id))?;
        let flow = self.exec_kind(s, ctrl)?;
        if let Flow::Normal = flow {
            self.visit_point(ObservationPoint::after(s.id))?;
        }
        Ok(flow)
    }

    fn exec_kind(&mut self, s: &'a Stmt, ctrl: Option<usize>) -> Res<Flow> {
        match &s.kind {
            StmtKind::Let { name, ty, init } => {
                self.begin(s.id, ctrl)?;
                let v = self.eval(init, true)?;
                self.declare(name, ty, v);
                let loc = self.var_loc(name);
                self.note_def(loc);
                self.end();
            }
            StmtKind::Assign { target, value } => {
                self.begin(s.id, ctrl)?;
                self.assign(target, value)?;
                self.end();
            }
            StmtKind::Expr(e) => {
                self.begin(s.id, ctrl)?;
                self.eval(e, true)?;
                self.end();
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                let idx = self.begin(s.id, ctrl)?;
                let c = self.eval_bool(cond)?;
                self.end();
                let body = if c {
                    Some(then_body)
                } else {
                    else_body.as_ref()
                };
                if let Some(body) = body {
                    return self.exec_block(body, Some(idx));
                }
            }
            StmtKind::While { cond, body } => {
                let mut parent = ctrl;
                loop {
                    let idx = self.begin(s.id, parent)?;
                    let c = self.eval_bool(cond)?;
                    self.end();
                    if !c {
                        break;
                    }
                    parent = Some(idx);
                    if let Flow::Return(v) = self.exec_block(body, Some(idx))? {
                        return Ok(Flow::Return(v));
                    }
                }
            }
            StmtKind::ForRange {
                var,
                start,
                end,
                body,
            } => {
                self.frame_mut().scopes.push(Vec::new());
                let mut idx = self.begin(s.id, ctrl)?;
                let first = self.eval_int(start)?;
                self.declare(var, &Type::Int, Rt::Int(first));
                let loc = self.var_loc(var);
                self.note_def(loc.clone());
                let mut i = first;
                loop {
                    let bound = self.eval_int(end)?;
                    self.end();
                    if i >= bound {
                        break;
                    }
                    if let Flow::Return(v) = self.exec_block(body, Some(idx))? {
                        return Ok(Flow::Return(v));
                    }
                    idx = self.begin(s.id, Some(idx))?;
                    self.note_use(loc.clone(), true, None);
                    i = match self.frame().vars[var.as_str()].1 {
                        Rt::Int(v) => v.wrapping_add(1),
                        _ => unreachable!("loop counter is int"),
                    };
                    self.set_var(var, Rt::Int(i));
                    self.note_def(loc.clone());
                }
                self.pop_scope();
            }
            StmtKind::ForEach {
                var,
                ty,
                iterable,
                body,
            } => {
                self.frame_mut().scopes.push(Vec::new());
                let mut idx = self.begin(s.id, ctrl)?;
                let Rt::Ref(arr) = self.eval(iterable, false)? else {
                    return self.throw("for-each over a non-array");
                };
                let base = self.base_of(iterable);
                let loc = self.var_loc(var);
                let mut k = 0usize;
                let mut declared = false;
                loop {
                    let len = match &self.heap[arr] {
                        Obj::Array { elems, .. } => elems.len(),
                        _ => unreachable!(),
                    };
                    if k >= len {
                        self.end();
                        break;
                    }
                    let elem_loc = self.elem_loc(arr, k);
                    self.note_use(elem_loc, true, base.clone());
                    let v = match &self.heap[arr] {
                        Obj::Array { elems, .. } => elems[k],
                        _ => unreachable!(),
                    };
                    if declared {
                        self.set_var(var, v);
                    } else {
                        self.declare(var, ty, v);
                        declared = true;
                    }
                    self.note_def(loc.clone());
                    self.end();
                    if let Flow::Return(v) = self.exec_block(body, Some(idx))? {
                        return Ok(Flow::Return(v));
                    }
                    k += 1;
                    idx = self.begin(s.id, Some(idx))?;
                }
                self.pop_scope();
            }
            StmtKind::Assert(cond) => {
                let idx = self.begin(s.id, ctrl)?;
                let c = self.eval_bool(cond)?;
                if Some(s.id) == self.designated {
                    if self.assertion_event.is_none() || !c {
                        self.assertion_event = Some(idx);
                    }
                    if !c {
                        self.end();
                        return Err(Stop::AssertFail);
                    }
                    self.assert_passed = true;
                } else if !c {
                    return self.throw(format!("assertion at line {} failed", s.id.line));
                }
                self.end();
            }
            StmtKind::Return(e) => {
                self.begin(s.id, ctrl)?;
                let v = match e {
                    Some(e) => {
                        let v = self.eval(e, true)?;
                        let func = self.frame().func;
                        let ty = self.program.functions[func].ret.clone();
                        Some(ty.map_or(v, |t| coerce(v, &t)))
                    }
                    None => None,
                };
                let loc = MemLoc::Ret {
                    frame: self.frame().id,
                };
                self.note_def(loc);
                self.end();
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn pop_scope(&mut self) {
        let frame = self.frame_mut();
        for name in frame.scopes.pop().expect("scope pushed") {
            frame.vars.remove(&name);
        }
    }

    fn assign(&mut self, target: &'a Expr, value: &'a Expr) -> Res<()> {
        match &target.kind {
            ExprKind::Var(name) => {
                let v = self.eval(value, true)?;
                self.set_var(name, v);
                let loc = self.var_loc(name);
                self.note_def(loc);
            }
            ExprKind::Field(b, f) => {
                let Rt::Ref(o) = self.eval(b, false)? else {
                    return self.throw(format!("null dereference writing `.{f}`"));
                };
                let Obj::Record { rec, .. } = &self.heap[o] else {
                    unreachable!()
                };
                let rec = *rec;
                let fi = self.program.records[rec]
                    .field_index(f)
                    .expect("typechecked");
                let ty = self.program.records[rec].fields[fi].1.clone();
                let v = self.eval(value, true)?;
                if let Obj::Record { fields, .. } = &mut self.heap[o] {
                    fields[fi] = coerce(v, &ty);
                }
                let loc = self.field_loc(o, fi);
                self.note_def(loc);
            }
            ExprKind::Index(a, i) => {
                let Rt::Ref(arr) = self.eval(a, false)? else {
                    return self.throw("indexing a non-array");
                };
                let i = self.eval_int(i)?;
                let v = self.eval(value, true)?;
                let Obj::Array { elems, elem, .. } = &mut self.heap[arr] else {
                    unreachable!()
                };
                if i < 0 || i as usize >= elems.len() {
                    let len = elems.len();
                    return self.throw(format!("index {i} out of bounds for length {len}"));
                }
                elems[i as usize] = coerce(v, elem);
                let loc = self.elem_loc(arr, i as usize);
                self.note_def(loc);
            }
            _ => unreachable!("typechecked assignment target"),
        }
        Ok(())
    }

    // ---- expressions -------------------------------------------------------

    fn eval_bool(&mut self, e: &'a Expr) -> Res<bool> {
        match self.eval(e, true)? {
            Rt::Bool(b) => Ok(b),
            _ => unreachable!("typechecked bool"),
        }
    }

    fn eval_int(&mut self, e: &'a Expr) -> Res<i64> {
        match self.eval(e, true)? {
            Rt::Int(i) => Ok(i),
            _ => unreachable!("typechecked int"),
        }
    }

    /// The variable an access chain such as `a[i].f` starts from.
    fn base_of(&self, e: &Expr) -> Option<MemLoc> {
        if !self.record() {
            return None;
        }
        match &e.kind {
            ExprKind::Var(name) => Some(self.var_loc(name)),
            ExprKind::Field(b, _) | ExprKind::Index(b, _) => self.base_of(b),
            _ => None,
        }
    }

    fn eval(&mut self, e: &'a Expr, leaf: bool) -> Res<Rt> {
        match &e.kind {
            ExprKind::Int(i) => Ok(Rt::Int(*i)),
            ExprKind::Float(f) => Ok(Rt::Float(*f)),
            ExprKind::Bool(b) => Ok(Rt::Bool(*b)),
            ExprKind::Null => Ok(Rt::Null),
            ExprKind::Var(name) => {
                let v = self.frame().vars[name.as_str()].1;
                if self.record() {
                    let loc = self.var_loc(name);
                    self.note_use(loc, leaf, None);
                }
                Ok(v)
            }
            ExprKind::Field(b, f) => {
                let Rt::Ref(o) = self.eval(b, false)? else {
                    return self.throw(format!("null dereference reading `.{f}`"));
                };
                let Obj::Record { rec, fields } = &self.heap[o] else {
                    unreachable!()
                };
                let fi = self.program.records[*rec]
                    .field_index(f)
                    .expect("typechecked");
                let v = fields[fi];
                if self.record() {
                    let loc = self.field_loc(o, fi);
                    let base = self.base_of(b);
                    self.note_use(loc, leaf, base);
                }
                Ok(v)
            }
            ExprKind::Index(a, i) => {
                let Rt::Ref(arr) = self.eval(a, false)? else {
                    return self.throw("indexing a non-array");
                };
                let i = self.eval_int(i)?;
                let Obj::Array { elems, .. } = &self.heap[arr] else {
                    unreachable!()
                };
                if i < 0 || i as usize >= elems.len() {
                    let len = elems.len();
                    return self.throw(format!("index {i} out of bounds for length {len}"));
                }
                let v = elems[i as usize];
                if self.record() {
                    let loc = self.elem_loc(arr, i as usize);
                    let base = self.base_of(a);
                    self.note_use(loc, leaf, base);
                }
                Ok(v)
            }
            ExprKind::Call(name, args) if is_builtin(name) => self.builtin(name, &args[0]),
            ExprKind::Call(name, args) => self.call(name, args),
            ExprKind::Unary(op, inner) => {
                let v = self.eval(inner, true)?;
                Ok(match (op, v) {
                    (UnOp::Neg, Rt::Int(i)) => Rt::Int(i.wrapping_neg()),
                    (UnOp::Neg, Rt::Float(f)) => Rt::Float(-f),
                    (UnOp::Not, Rt::Bool(b)) => Rt::Bool(!b),
                    _ => unreachable!("typechecked unary"),
                })
            }
            ExprKind::Binary(op, l, r) => self.binary(*op, l, r),
            ExprKind::ArrayLit(items) => {
                let elem = self.array_lit_type(items);
                let mut elems = Vec::with_capacity(items.len());
                for item in items {
                    let v = self.eval(item, true)?;
                    elems.push(coerce(v, &elem));
                }
                Ok(self.alloc_array(elem, elems))
            }
            ExprKind::NewArray(elem, len) => {
                let n = self.eval_int(len)?;
                if n < 0 {
                    return self.throw(format!("negative array length {n}"));
                }
                let mut elems = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let v = match elem {
                        Type::Int => Rt::Int(0),
                        Type::Float => Rt::Float(0.0),
                        Type::Bool => Rt::Bool(false),
                        Type::Record(_) => Rt::Null,
                        Type::Array(inner) => self.alloc_array((**inner).clone(), Vec::new()),
                    };
                    elems.push(v);
                }
                Ok(self.alloc_array(elem.clone(), elems))
            }
            ExprKind::RecordLit(name, inits) => {
                let rec = self
                    .program
                    .records
                    .iter()
                    .position(|r| r.name == *name)
                    .expect("typechecked record");
                let mut fields = vec![Rt::Null; self.program.records[rec].fields.len()];
                for (f, fe) in inits {
                    let v = self.eval(fe, true)?;
                    let def = &self.program.records[rec];
                    let fi = def.field_index(f).expect("typechecked field");
                    fields[fi] = coerce(v, &def.fields[fi].1);
                }
                self.heap.push(Obj::Record { rec, fields });
                Ok(Rt::Ref(self.heap.len() - 1))
            }
        }
    }

    fn builtin(&mut self, name: &str, arg: &'a Expr) -> Res<Rt> {
        if name == "len" {
            let Rt::Ref(arr) = self.eval(arg, false)? else {
                unreachable!("typechecked len")
            };
            return match &self.heap[arr] {
                Obj::Array { elems, .. } => Ok(Rt::Int(elems.len() as i64)),
                _ => unreachable!(),
            };
        }
        let v = self.eval(arg, true)?;
        Ok(match (name, v) {
            ("abs", Rt::Int(i)) => Rt::Int(i.wrapping_abs()),
            ("int", Rt::Int(i)) => Rt::Int(i),
            ("int", v) => Rt::Int(num(v) as i64),
            ("abs", v) => Rt::Float(num(v).abs()),
            ("sqrt", v) => Rt::Float(num(v).sqrt()),
            ("floor", v) => Rt::Float(num(v).floor()),
            ("ceil", v) => Rt::Float(num(v).ceil()),
            ("float", v) => Rt::Float(num(v)),
            _ => unreachable!("unknown builtin {name}"),
        })
    }

    fn call(&mut self, name: &str, args: &'a [Expr]) -> Res<Rt> {
        let program = self.program;
        let (func, f) = program
            .functions
            .iter()
            .enumerate()
            .find(|(_, f)| f.name == name)
            .expect("typechecked call");
        let mut vals = Vec::with_capacity(args.len());
        for a in args {
            vals.push(self.eval(a, true)?);
        }
        if self.frames.len() >= MAX_CALL_DEPTH {
            return self.throw(format!("call depth exceeds {MAX_CALL_DEPTH}"));
        }
        let id = self.next_frame;
        self.next_frame += 1;
        let mut frame = Frame {
            id,
            func,
            vars: BTreeMap::new(),
            scopes: Vec::new(),
        };
        for (p, v) in f.params.iter().zip(vals) {
            let name: Arc<str> = Arc::from(p.name.as_str());
            frame
                .vars
                .insert(name.clone(), (p.ty.clone(), coerce(v, &p.ty)));
            self.note_def(MemLoc::Var { frame: id, name });
        }
        let call_event = self.active.last().map(|&(idx, _)| idx);
        self.frames.push(frame);
        let flow = stacker::maybe_grow(64 * 1024, 2 * 1024 * 1024, || {
            self.exec_block(&f.body, call_event)
        })?;
        self.frames.pop();
        match flow {
            Flow::Return(Some(v)) => {
                self.note_use(MemLoc::Ret { frame: id }, true, None);
                Ok(v)
            }
            _ if f.ret.is_some() => self.throw(format!("`{name}` ended without returning")),
            _ => Ok(Rt::Null),
        }
    }

    fn binary(&mut self, op: BinOp, l: &'a Expr, r: &'a Expr) -> Res<Rt> {
        match op {
            BinOp::And => {
                return Ok(Rt::Bool(self.eval_bool(l)? && self.eval_bool(r)?));
            }
            BinOp::Or => {
                return Ok(Rt::Bool(self.eval_bool(l)? || self.eval_bool(r)?));
            }
            _ => {}
        }
        let a = self.eval(l, true)?;
        let b = self.eval(r, true)?;
        let out = match (op, a, b) {
            (BinOp::Add, Rt::Int(x), Rt::Int(y)) => Rt::Int(x.wrapping_add(y)),
            (BinOp::Sub, Rt::Int(x), Rt::Int(y)) => Rt::Int(x.wrapping_sub(y)),
            (BinOp::Mul, Rt::Int(x), Rt::Int(y)) => Rt::Int(x.wrapping_mul(y)),
            (BinOp::Div | BinOp::Rem, Rt::Int(_), Rt::Int(0)) => {
                return self.throw("integer division by zero");
            }
            (BinOp::Div, Rt::Int(x), Rt::Int(y)) => Rt::Int(x.wrapping_div(y)),
            (BinOp::Rem, Rt::Int(x), Rt::Int(y)) => Rt::Int(x.wrapping_rem(y)),
            (BinOp::Add, x, y) => Rt::Float(num(x) + num(y)),
            (BinOp::Sub, x, y) => Rt::Float(num(x) - num(y)),
            (BinOp::Mul, x, y) => Rt::Float(num(x) * num(y)),
            (BinOp::Div, x, y) => Rt::Float(num(x) / num(y)),
            (BinOp::Eq | BinOp::Ne, x, y) => {
                let eq = match (x, y) {
                    (Rt::Int(x), Rt::Int(y)) => x == y,
                    (Rt::Bool(x), Rt::Bool(y)) => x == y,
                    (Rt::Null, Rt::Null) => true,
                    (Rt::Ref(x), Rt::Ref(y)) => x == y,
                    (Rt::Null, Rt::Ref(_)) | (Rt::Ref(_), Rt::Null) => false,
                    (x, y) => num(x) == num(y),
                };
                Rt::Bool(eq == (op == BinOp::Eq))
            }
            (_, Rt::Int(x), Rt::Int(y)) => Rt::Bool(match op {
                BinOp::Lt => x < y,
                BinOp::Le => x <= y,
                BinOp::Gt => x > y,
                BinOp::Ge => x >= y,
                _ => unreachable!(),
            }),
            (_, x, y) => {
                let (x, y) = (num(x), num(y));
                Rt::Bool(match op {
                    BinOp::Lt => x < y,
                    BinOp::Le => x <= y,
                    BinOp::Gt => x > y,
                    BinOp::Ge => x >= y,
                    _ => unreachable!("typechecked binary"),
                })
            }
        };
        Ok(out)
    }

    // ---- static types for array literals ------------------------------------

    fn array_lit_type(&self, items: &[Expr]) -> Type {
        let types: Vec<Type> = items.iter().filter_map(|e| self.static_type(e)).collect();
        if types.contains(&Type::Float) {
            Type::Float
        } else {
            types.into_iter().next().expect("typechecked array literal")
        }
    }

    fn static_type(&self, e: &Expr) -> Option<Type> {
        Some(match &e.kind {
            ExprKind::Int(_) => Type::Int,
            ExprKind::Float(_) => Type::Float,
            ExprKind::Bool(_) => Type::Bool,
            ExprKind::Null => return None,
            ExprKind::Var(name) => self.frame().vars[name.as_str()].0.clone(),
            ExprKind::Field(b, f) => match self.static_type(b)? {
                Type::Record(r) => {
                    let def = self.program.record(&r)?;
                    def.fields[def.field_index(f)?].1.clone()
                }
                _ => return None,
            },
            ExprKind::Index(a, _) => match self.static_type(a)? {
                Type::Array(elem) => *elem,
                _ => return None,
            },
            ExprKind::Call(name, args) => match name.as_str() {
                "len" | "int" => Type::Int,
                "sqrt" | "floor" | "ceil" | "float" => Type::Float,
                "abs" => self.static_type(&args[0])?,
                _ => self.program.function(name)?.ret.clone()?,
            },
            ExprKind::Unary(UnOp::Not, _) => Type::Bool,
            ExprKind::Unary(UnOp::Neg, inner) => self.static_type(inner)?,
            ExprKind::Binary(op, l, r) => match op {
                _ if op.is_comparison() => Type::Bool,
                BinOp::And | BinOp::Or => Type::Bool,
                BinOp::Rem => Type::Int,
                _ => {
                    if self.static_type(l)? == Type::Int && self.static_type(r)? == Type::Int {
                        Type::Int
                    } else {
                        Type::Float
                    }
                }
            },
            ExprKind::ArrayLit(items) => Type::Array(Box::new(self.array_lit_type(items))),
            ExprKind::NewArray(elem, _) => Type::Array(Box::new(elem.clone())),
            ExprKind::RecordLit(name, _) => Type::Record(name.clone()),
        })
    }
}
