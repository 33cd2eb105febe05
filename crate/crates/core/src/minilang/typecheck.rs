//! Static checking of MiniLang programs.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::ast::*;

#[derive(Debug, Clone, PartialEq, Error)]
pub struct TypeError {
    pub location: Option<LocationId>,
    pub line: u32,
    pub message: String,
}

impl fmt::Display for TypeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Some(loc) => write!(f, "line {} ({loc}): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

pub const BUILTINS: [&str; 7] = ["len", "sqrt", "floor", "ceil", "abs", "float", "int"];

pub fn is_builtin(name: &str) -> bool {
    BUILTINS.contains(&name)
}

/// Where a statement sits in the program.
#[derive(Debug, Clone)]
pub struct StmtInfo {
    pub id: LocationId,
    pub function: usize,
    /// Identifies the statement list holding this statement.
    pub list: usize,
    pub index: usize,
    /// Enclosing loop statements within the same function, outermost first.
    pub loops: Vec<LocationId>,
    pub is_loop: bool,
    pub is_compound: bool,
    pub is_assert: bool,
    /// Evaluates a call to a user-defined function.
    pub calls: bool,
}

/// A statement list: the body of a function or of a compound statement.
#[derive(Debug, Clone)]
pub struct StmtList {
    pub function: usize,
    pub stmts: Vec<LocationId>,
}

/// A program that passed [`typecheck`]. Cheap to clone and safe to share
/// across threads.
#[derive(Debug, Clone)]
pub struct TypedProgram {
    inner: Arc<TypedInner>,
}

#[derive(Debug)]
struct TypedInner {
    program: Program,
    designated: Option<LocationId>,
    infos: Vec<StmtInfo>,
    lists: Vec<StmtList>,
}

impl TypedProgram {
    pub fn program(&self) -> &Program {
        &self.inner.program
    }

    /// The first `assert` of the entry function in program order; its
    /// violation defines a failing run.
    pub fn designated_assertion(&self) -> Option<LocationId> {
        self.inner.designated
    }

    pub fn info(&self, id: LocationId) -> &StmtInfo {
        &self.inner.infos[id.ordinal as usize]
    }

    pub fn infos(&self) -> &[StmtInfo] {
        &self.inner.infos
    }

    pub fn list(&self, list: usize) -> &StmtList {
        &self.inner.lists[list]
    }

    pub fn location(&self, ordinal: u32) -> Option<LocationId> {
        self.inner.infos.get(ordinal as usize).map(|i| i.id)
    }

    pub fn entry_params(&self) -> Vec<Type> {
        self.program()
            .entry_function()
            .params
            .iter()
            .map(|p| p.ty.clone())
            .collect()
    }
}

pub fn typecheck(program: Program) -> Result<TypedProgram, Vec<TypeError>> {
    let mut cx = Checker {
        program: &program,
        errors: Vec::new(),
        scopes: Vec::new(),
        ret: None,
        current: None,
    };
    cx.check_signatures();
    for f in &program.functions {
        cx.check_function(f);
    }
    if !cx.errors.is_empty() {
        return Err(cx.errors);
    }
    let (infos, lists) = layout(&program);
    let entry = program.entry_function();
    let mut designated = None;
    visit_stmts(&entry.body, &mut |s| {
        if designated.is_none() && matches!(s.kind, StmtKind::Assert(_)) {
            designated = Some(s.id);
        }
    });
    Ok(TypedProgram {
        inner: Arc::new(TypedInner {
            program,
            designated,
            infos,
            lists,
        }),
    })
}

fn visit_stmts(stmts: &[Stmt], f: &mut dyn FnMut(&Stmt)) {
    for s in stmts {
        f(s);
        for child in s.kind.children() {
            visit_stmts(child, f);
        }
    }
}

fn layout(program: &Program) -> (Vec<StmtInfo>, Vec<StmtList>) {
    struct Walk<'a> {
        infos: Vec<Option<StmtInfo>>,
        lists: Vec<StmtList>,
        program: &'a Program,
    }
    impl Walk<'_> {
        fn list(&mut self, stmts: &[Stmt], function: usize, loops: &[LocationId]) {
            let list = self.lists.len();
            self.lists.push(StmtList {
                function,
                stmts: stmts.iter().map(|s| s.id).collect(),
            });
            for (index, s) in stmts.iter().enumerate() {
                let calls = s.kind.own_exprs().iter().any(|e| {
                    e.contains_call(&|n| is_builtin(n) || self.program.function(n).is_none())
                });
                self.infos[s.id.ordinal as usize] = Some(StmtInfo {
                    id: s.id,
                    function,
                    list,
                    index,
                    loops: loops.to_vec(),
                    is_loop: s.kind.is_loop(),
                    is_compound: s.kind.is_compound(),
                    is_assert: matches!(s.kind, StmtKind::Assert(_)),
                    calls,
                });
                let mut inner = loops.to_vec();
                if s.kind.is_loop() {
                    inner.push(s.id);
                }
                for child in s.kind.children() {
                    self.list(child, function, &inner);
                }
            }
        }
    }
    let mut w = Walk {
        infos: vec![None; program.statement_count()],
        lists: Vec::new(),
        program,
    };
    for (i, f) in program.functions.iter().enumerate() {
        w.list(&f.body, i, &[]);
    }
    let infos = w
        .infos
        .into_iter()
        .map(|i| i.expect("every ordinal is visited"))
        .collect();
    (infos, w.lists)
}

/// Static type of an expression; `Null` is the type of the `null` literal.
#[derive(Debug, Clone, PartialEq)]
enum Ty {
    T(Type),
    Null,
    Void,
}

struct Checker<'a> {
    program: &'a Program,
    errors: Vec<TypeError>,
    scopes: Vec<HashMap<String, Type>>,
    ret: Option<Type>,
    current: Option<LocationId>,
}

impl Checker<'_> {
    fn err(&mut self, line: u32, message: impl Into<String>) {
        self.errors.push(TypeError {
            location: self.current,
            line,
            message: message.into(),
        });
    }

    fn check_type_exists(&mut self, ty: &Type, line: u32) {
        match ty {
            Type::Record(name) if self.program.record(name).is_none() => {
                self.err(line, format!("unknown type `{name}`"))
            }
            Type::Array(elem) => self.check_type_exists(elem, line),
            _ => {}
        }
    }

    fn check_signatures(&mut self) {
        let mut seen = Vec::new();
        for r in &self.program.records {
            if seen.contains(&&r.name) {
                self.err(r.line, format!("duplicate record `{}`", r.name));
            }
            seen.push(&r.name);
            for (i, (f, ty)) in r.fields.iter().enumerate() {
                if r.fields[..i].iter().any(|(g, _)| g == f) {
                    self.err(r.line, format!("duplicate field `{f}` in `{}`", r.name));
                }
                self.check_type_exists(ty, r.line);
            }
        }
        for f in &self.program.functions {
            if is_builtin(&f.name) {
                self.err(f.line, format!("`{}` shadows a builtin", f.name));
            }
            for p in &f.params {
                self.check_type_exists(&p.ty, f.line);
            }
            if let Some(r) = &f.ret {
                self.check_type_exists(r, f.line);
            }
        }
    }

    fn lookup(&self, name: &str) -> Option<&Type> {
        self.scopes.iter().rev().find_map(|s| s.get(name))
    }

    fn declare(&mut self, name: &str, ty: Type, line: u32) {
        if self.lookup(name).is_some() {
            self.err(line, format!("`{name}` is already declared in this scope"));
        }
        self.scopes
            .last_mut()
            .expect("a scope is open")
            .insert(name.to_string(), ty);
    }

    fn check_function(&mut self, f: &Function) {
        self.scopes = vec![HashMap::new()];
        self.ret = f.ret.clone();
        self.current = None;
        for p in &f.params {
            self.declare(&p.name, p.ty.clone(), f.line);
        }
        self.check_block(&f.body);
    }

    fn check_block(&mut self, stmts: &[Stmt]) {
        self.scopes.push(HashMap::new());
        for s in stmts {
            self.check_stmt(s);
        }
        self.scopes.pop();
    }

    fn assignable(&self, from: &Ty, to: &Type) -> bool {
        match from {
            Ty::T(t) => t == to || (*t == Type::Int && *to == Type::Float),
            Ty::Null => matches!(to, Type::Record(_)),
            Ty::Void => false,
        }
    }

    fn expect_assignable(&mut self, from: &Ty, to: &Type, line: u32, what: &str) {
        if !self.assignable(from, to) {
            let found = match from {
                Ty::T(t) => t.to_string(),
                Ty::Null => "null".into(),
                Ty::Void => "no value".into(),
            };
            self.err(line, format!("{what}: expected `{to}`, found `{found}`"));
        }
    }

    fn check_stmt(&mut self, s: &Stmt) {
        self.current = Some(s.id);
        let line = s.id.line;
        match &s.kind {
            StmtKind::Let { name, ty, init } => {
                self.check_type_exists(ty, line);
                let t = self.expr(init);
                self.expect_assignable(&t, ty, line, &format!("initialiser of `{name}`"));
                self.declare(name, ty.clone(), line);
            }
            StmtKind::Assign { target, value } => {
                if !matches!(
                    target.kind,
                    ExprKind::Var(_) | ExprKind::Field(..) | ExprKind::Index(..)
                ) {
                    self.err(line, "left side of `=` is not assignable");
                }
                let tt = self.expr(target);
                let vt = self.expr(value);
                if let Ty::T(tt) = tt {
                    self.expect_assignable(&vt, &tt, line, "assignment");
                }
            }
            StmtKind::Expr(e) => {
                if !matches!(e.kind, ExprKind::Call(..)) {
                    self.err(line, "expression statement must be a call");
                }
                self.expr(e);
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                self.expect_bool(cond, "if condition");
                self.check_block(then_body);
                if let Some(e) = else_body {
                    self.check_block(e);
                }
            }
            StmtKind::While { cond, body } => {
                self.expect_bool(cond, "while condition");
                self.check_block(body);
            }
            StmtKind::ForRange {
                var,
                start,
                end,
                body,
            } => {
                for (e, what) in [(start, "range start"), (end, "range end")] {
                    let t = self.expr(e);
                    if t != Ty::T(Type::Int) {
                        self.err(e.span.line, format!("{what} must be `int`"));
                    }
                }
                self.scopes.push(HashMap::new());
                self.declare(var, Type::Int, line);
                self.check_block(body);
                self.scopes.pop();
            }
            StmtKind::ForEach {
                var,
                ty,
                iterable,
                body,
            } => {
                self.check_type_exists(ty, line);
                match self.expr(iterable) {
                    Ty::T(Type::Array(elem)) if *elem == *ty => {}
                    Ty::T(Type::Array(elem)) => self.err(
                        line,
                        format!("loop variable has type `{ty}` but elements are `{elem}`"),
                    ),
                    _ => self.err(line, "for-each needs an array"),
                }
                self.scopes.push(HashMap::new());
                self.declare(var, ty.clone(), line);
                self.check_block(body);
                self.scopes.pop();
            }
            StmtKind::Assert(e) => self.expect_bool(e, "assert"),
            StmtKind::Return(e) => match (e, self.ret.clone()) {
                (None, None) => {}
                (Some(e), Some(rt)) => {
                    let t = self.expr(e);
                    self.expect_assignable(&t, &rt, line, "return value");
                }
                (None, Some(rt)) => self.err(line, format!("missing return value of type `{rt}`")),
                (Some(_), None) => self.err(line, "function returns no value"),
            },
        }
    }

    fn expect_bool(&mut self, e: &Expr, what: &str) {
        let t = self.expr(e);
        if t != Ty::T(Type::Bool) {
            self.err(e.span.line, format!("{what} needs `bool`"));
        }
    }

    fn numeric(&self, t: &Ty) -> Option<Type> {
        match t {
            Ty::T(t @ (Type::Int | Type::Float)) => Some(t.clone()),
            _ => None,
        }
    }

    fn expr(&mut self, e: &Expr) -> Ty {
        let line = e.span.line;
        match &e.kind {
            ExprKind::Int(_) => Ty::T(Type::Int),
            ExprKind::Float(_) => Ty::T(Type::Float),
            ExprKind::Bool(_) => Ty::T(Type::Bool),
            ExprKind::Null => Ty::Null,
            ExprKind::Var(name) => match self.lookup(name) {
                Some(t) => Ty::T(t.clone()),
                None => {
                    self.err(line, format!("unknown variable `{name}`"));
                    Ty::Void
                }
            },
            ExprKind::Field(base, field) => match self.expr(base) {
                Ty::T(Type::Record(r)) => {
                    let def = self.program.record(&r).expect("record types are checked");
                    match def.fields.iter().find(|(f, _)| f == field) {
                        Some((_, t)) => Ty::T(t.clone()),
                        None => {
                            self.err(line, format!("`{r}` has no field `{field}`"));
                            Ty::Void
                        }
                    }
                }
                Ty::Void => Ty::Void,
                _ => {
                    self.err(line, format!("field access `.{field}` on a non-record"));
                    Ty::Void
                }
            },
            ExprKind::Index(arr, idx) => {
                let at = self.expr(arr);
                let it = self.expr(idx);
                if it != Ty::T(Type::Int) && it != Ty::Void {
                    self.err(line, "array index must be `int`");
                }
                match at {
                    Ty::T(Type::Array(elem)) => Ty::T(*elem),
                    Ty::Void => Ty::Void,
                    _ => {
                        self.err(line, "indexing a non-array");
                        Ty::Void
                    }
                }
            }
            ExprKind::Call(name, args) => self.call(name, args, line),
            ExprKind::Unary(op, inner) => {
                let t = self.expr(inner);
                match op {
                    UnOp::Neg => match self.numeric(&t) {
                        Some(t) => Ty::T(t),
                        None => {
                            self.err(line, "`-` needs a number");
                            Ty::Void
                        }
                    },
                    UnOp::Not => {
                        if t != Ty::T(Type::Bool) {
                            self.err(line, "`!` needs `bool`");
                        }
                        Ty::T(Type::Bool)
                    }
                }
            }
            ExprKind::Binary(op, l, r) => {
                let lt = self.expr(l);
                let rt = self.expr(r);
                self.binary(*op, lt, rt, line)
            }
            ExprKind::ArrayLit(items) => {
                let types: Vec<Ty> = items.iter().map(|i| self.expr(i)).collect();
                let Some(elem) = types.iter().find_map(|t| match t {
                    Ty::T(t) => Some(t.clone()),
                    _ => None,
                }) else {
                    self.err(line, "cannot infer the element type of this array literal");
                    return Ty::Void;
                };
                let elem = if types.contains(&Ty::T(Type::Float)) && elem == Type::Int {
                    Type::Float
                } else {
                    elem
                };
                for t in &types {
                    self.expect_assignable(t, &elem, line, "array element");
                }
                Ty::T(Type::Array(Box::new(elem)))
            }
            ExprKind::NewArray(elem, len) => {
                self.check_type_exists(elem, line);
                if self.expr(len) != Ty::T(Type::Int) {
                    self.err(line, "array length must be `int`");
                }
                Ty::T(Type::Array(Box::new(elem.clone())))
            }
            ExprKind::RecordLit(name, fields) => {
                let Some(def) = self.program.record(name) else {
                    self.err(line, format!("unknown record `{name}`"));
                    return Ty::Void;
                };
                let def = def.clone();
                for (fname, fty) in &def.fields {
                    match fields.iter().filter(|(f, _)| f == fname).count() {
                        0 => self.err(line, format!("missing field `{fname}`")),
                        1 => {}
                        _ => self.err(line, format!("field `{fname}` given twice")),
                    }
                    let _ = fty;
                }
                for (fname, fe) in fields {
                    let t = self.expr(fe);
                    match def.fields.iter().find(|(f, _)| f == fname) {
                        Some((_, fty)) => {
                            self.expect_assignable(&t, fty, line, &format!("field `{fname}`"))
                        }
                        None => self.err(line, format!("`{name}` has no field `{fname}`")),
                    }
                }
                Ty::T(Type::Record(name.clone()))
            }
        }
    }

    fn binary(&mut self, op: BinOp, lt: Ty, rt: Ty, line: u32) -> Ty {
        if lt == Ty::Void || rt == Ty::Void {
            return Ty::Void;
        }
        match op {
            BinOp::And | BinOp::Or => {
                if lt != Ty::T(Type::Bool) || rt != Ty::T(Type::Bool) {
                    self.err(line, format!("`{}` needs `bool` operands", op.symbol()));
                }
                Ty::T(Type::Bool)
            }
            BinOp::Eq | BinOp::Ne => {
                let ok = match (&lt, &rt) {
                    (Ty::T(a), Ty::T(b)) => a == b || (a.is_numeric() && b.is_numeric()),
                    (Ty::Null, Ty::T(Type::Record(_))) | (Ty::T(Type::Record(_)), Ty::Null) => true,
                    (Ty::Null, Ty::Null) => true,
                    _ => false,
                };
                if !ok {
                    self.err(line, format!("cannot compare with `{}`", op.symbol()));
                }
                Ty::T(Type::Bool)
            }
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                if self.numeric(&lt).is_none() || self.numeric(&rt).is_none() {
                    self.err(line, format!("`{}` needs numbers", op.symbol()));
                }
                Ty::T(Type::Bool)
            }
            BinOp::Rem => {
                if lt != Ty::T(Type::Int) || rt != Ty::T(Type::Int) {
                    self.err(line, "`%` needs `int` operands");
                }
                Ty::T(Type::Int)
            }
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => {
                match (self.numeric(&lt), self.numeric(&rt)) {
                    (Some(Type::Int), Some(Type::Int)) => Ty::T(Type::Int),
                    (Some(_), Some(_)) => Ty::T(Type::Float),
                    _ => {
                        self.err(line, format!("`{}` needs numbers", op.symbol()));
                        Ty::Void
                    }
                }
            }
        }
    }

    fn call(&mut self, name: &str, args: &[Expr], line: u32) -> Ty {
        let types: Vec<Ty> = args.iter().map(|a| self.expr(a)).collect();
        if is_builtin(name) {
            if types.len() != 1 {
                self.err(line, format!("`{name}` takes one argument"));
                return Ty::Void;
            }
            let t = &types[0];
            return match name {
                "len" => {
                    if !matches!(t, Ty::T(Type::Array(_))) {
                        self.err(line, "`len` needs an array");
                    }
                    Ty::T(Type::Int)
                }
                "abs" => match self.numeric(t) {
                    Some(t) => Ty::T(t),
                    None => {
                        self.err(line, "`abs` needs a number");
                        Ty::Void
                    }
                },
                "int" => {
                    if self.numeric(t).is_none() {
                        self.err(line, "`int` needs a number");
                    }
                    Ty::T(Type::Int)
                }
                _ => {
                    if self.numeric(t).is_none() {
                        self.err(line, format!("`{name}` needs a number"));
                    }
                    Ty::T(Type::Float)
                }
            };
        }
        let Some(f) = self.program.function(name) else {
            self.err(line, format!("unknown function `{name}`"));
            return Ty::Void;
        };
        let f = f.clone();
        if f.params.len() != types.len() {
            self.err(
                line,
                format!(
                    "`{name}` takes {} arguments, got {}",
                    f.params.len(),
                    types.len()
                ),
            );
        } else {
            for (p, t) in f.params.iter().zip(&types) {
                self.expect_assignable(t, &p.ty, line, &format!("argument `{}`", p.name));
            }
        }
        match f.ret {
            Some(t) => Ty::T(t),
            None => Ty::Void,
        }
    }
}
