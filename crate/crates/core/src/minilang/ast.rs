//! Syntax tree for MiniLang compilation units.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

/// Identity of a statement: its ordinal in program order plus the source line
/// it starts on.
///
/// Equality, ordering and hashing only look at the ordinal, which is a
/// bijection onto the statements of one program.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LocationId {
    pub ordinal: u32,
    pub line: u32,
}

impl LocationId {
    pub fn new(ordinal: u32, line: u32) -> Self {
        Self { ordinal, line }
    }
}

impl PartialEq for LocationId {
    fn eq(&self, other: &Self) -> bool {
        self.ordinal == other.ordinal
    }
}

impl Eq for LocationId {}

impl Hash for LocationId {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.ordinal.hash(state);
    }
}

impl PartialOrd for LocationId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LocationId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.ordinal.cmp(&other.ordinal)
    }
}

impl fmt::Display for LocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}@{}", self.ordinal, self.line)
    }
}

/// Source position of an expression. Positions never take part in equality so
/// that re-parsed printer output compares equal to the original tree.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Type {
    Int,
    Float,
    Bool,
    Record(String),
    Array(Box<Type>),
}

impl Type {
    pub fn is_numeric(&self) -> bool {
        matches!(self, Type::Int | Type::Float)
    }

    pub fn is_reference(&self) -> bool {
        matches!(self, Type::Record(_) | Type::Array(_))
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Int => f.write_str("int"),
            Type::Float => f.write_str("float"),
            Type::Bool => f.write_str("bool"),
            Type::Record(name) => f.write_str(name),
            Type::Array(elem) => write!(f, "{elem}[]"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecordDef {
    pub name: String,
    pub fields: Vec<(String, Type)>,
    pub line: u32,
}

impl RecordDef {
    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|(f, _)| f == name)
    }
}

// Source lines of declarations are ignored by equality, like `Span`.
impl PartialEq for RecordDef {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.fields == other.fields
    }
}

impl PartialEq for Function {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.params == other.params
            && self.ret == other.ret
            && self.body == other.body
            && self.is_entry == other.is_entry
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: Type,
}

#[derive(Debug, Clone)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Option<Type>,
    pub body: Vec<Stmt>,
    pub is_entry: bool,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub id: LocationId,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Let {
        name: String,
        ty: Type,
        init: Expr,
    },
    Assign {
        target: Expr,
        value: Expr,
    },
    Expr(Expr),
    If {
        cond: Expr,
        then_body: Vec<Stmt>,
        else_body: Option<Vec<Stmt>>,
    },
    While {
        cond: Expr,
        body: Vec<Stmt>,
    },
    /// `for i in start .. end { }`, bounds re-evaluated before every check.
    ForRange {
        var: String,
        start: Expr,
        end: Expr,
        body: Vec<Stmt>,
    },
    ForEach {
        var: String,
        ty: Type,
        iterable: Expr,
        body: Vec<Stmt>,
    },
    Assert(Expr),
    Return(Option<Expr>),
}

impl StmtKind {
    pub fn is_loop(&self) -> bool {
        matches!(
            self,
            StmtKind::While { .. } | StmtKind::ForRange { .. } | StmtKind::ForEach { .. }
        )
    }

    /// Statements that own nested statement lists.
    pub fn is_compound(&self) -> bool {
        self.is_loop() || matches!(self, StmtKind::If { .. })
    }

    /// Nested statement lists, in source order.
    pub fn children(&self) -> Vec<&[Stmt]> {
        match self {
            StmtKind::If {
                then_body,
                else_body,
                ..
            } => {
                let mut out = vec![then_body.as_slice()];
                if let Some(e) = else_body {
                    out.push(e.as_slice());
                }
                out
            }
            StmtKind::While { body, .. }
            | StmtKind::ForRange { body, .. }
            | StmtKind::ForEach { body, .. } => vec![body.as_slice()],
            _ => Vec::new(),
        }
    }

    /// Expressions evaluated by the statement itself (not by nested statements).
    pub fn own_exprs(&self) -> Vec<&Expr> {
        match self {
            StmtKind::Let { init, .. } => vec![init],
            StmtKind::Assign { target, value } => vec![target, value],
            StmtKind::Expr(e) | StmtKind::Assert(e) => vec![e],
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => vec![cond],
            StmtKind::ForRange { start, end, .. } => vec![start, end],
            StmtKind::ForEach { iterable, .. } => vec![iterable],
            StmtKind::Return(e) => e.iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Self { kind, span }
    }

    /// True if evaluating this expression may call a user-defined function.
    pub fn contains_call(&self, is_builtin: &dyn Fn(&str) -> bool) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if let ExprKind::Call(name, _) = &e.kind {
                if !is_builtin(name) {
                    found = true;
                }
            }
        });
        found
    }

    pub fn walk(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Field(b, _) => b.walk(f),
            ExprKind::Index(a, i) => {
                a.walk(f);
                i.walk(f);
            }
            ExprKind::Call(_, args) | ExprKind::ArrayLit(args) => {
                for a in args {
                    a.walk(f);
                }
            }
            ExprKind::Unary(_, e) | ExprKind::NewArray(_, e) => e.walk(f),
            ExprKind::Binary(_, l, r) => {
                l.walk(f);
                r.walk(f);
            }
            ExprKind::RecordLit(_, fields) => {
                for (_, e) in fields {
                    e.walk(f);
                }
            }
            ExprKind::Int(_)
            | ExprKind::Float(_)
            | ExprKind::Bool(_)
            | ExprKind::Null
            | ExprKind::Var(_) => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Int(i64),
    Float(f64),
    Bool(bool),
    Null,
    Var(String),
    Field(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    ArrayLit(Vec<Expr>),
    NewArray(Type, Box<Expr>),
    RecordLit(String, Vec<(String, Expr)>),
}

/// A parsed MiniLang compilation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub records: Vec<RecordDef>,
    pub functions: Vec<Function>,
    pub entry: String,
}

impl Program {
    pub fn record(&self, name: &str) -> Option<&RecordDef> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn entry_function(&self) -> &Function {
        self.function(&self.entry)
            .expect("parser guarantees the entry function exists")
    }

    /// Every statement in program order.
    pub fn statements(&self) -> Vec<&Stmt> {
        fn visit<'a>(stmts: &'a [Stmt], out: &mut Vec<&'a Stmt>) {
            for s in stmts {
                out.push(s);
                for child in s.kind.children() {
                    visit(child, out);
                }
            }
        }
        let mut out = Vec::new();
        for f in &self.functions {
            visit(&f.body, &mut out);
        }
        out
    }

    pub fn statement(&self, id: LocationId) -> Option<&Stmt> {
        self.statements().into_iter().find(|s| s.id == id)
    }

    pub fn statement_count(&self) -> usize {
        self.statements().len()
    }
}
