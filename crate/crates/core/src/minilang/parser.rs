//! Lexer and recursive-descent parser for MiniLang source text.

use std::collections::HashSet;

use thiserror::Error;

use super::ast::*;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(u64),
    Float(f64),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: u32,
    col: u32,
}

const PUNCTS: [&str; 27] = [
    "..", "->", "<=", ">=", "==", "!=", "&&", "||", "{", "}", "(", ")", "[", "]", ";", ":", ",",
    ".", "=", "<", ">", "+", "-", "*", "/", "%", "!",
];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let err = |line, col, message: String| ParseError { line, col, message };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            out.push(Token {
                tok: Tok::Ident(word),
                line: start_line,
                col: start_col,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_float = false;
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                is_float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    is_float = true;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| {
                    err(start_line, start_col, format!("bad float literal `{text}`"))
                })?)
            } else {
                Tok::Int(text.parse().map_err(|_| {
                    err(
                        start_line,
                        start_col,
                        format!("integer literal `{text}` out of range"),
                    )
                })?)
            };
            out.push(Token {
                tok,
                line: start_line,
                col: start_col,
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match PUNCTS.iter().find(|p| rest.starts_with(**p)) {
            Some(p) => {
                i += p.len();
                col += p.len() as u32;
                out.push(Token {
                    tok: Tok::Punct(p),
                    line: start_line,
                    col: start_col,
                });
            }
            None => return Err(err(line, col, format!("unexpected character `{c}`"))),
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

const KEYWORDS: [&str; 17] = [
    "record", "fn", "entry", "let", "if", "else", "while", "for", "in", "assert", "return", "true",
    "false", "null", "new", "int", "float",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    next_ordinal: u32,
    record_names: HashSet<String>,
}

pub fn parse_program(source: &str) -> Result<Program, ParseError> {
    let toks = lex(source)?;
    let record_names = toks
        .windows(2)
        .filter_map(|w| match (&w[0].tok, &w[1].tok) {
            (Tok::Ident(kw), Tok::Ident(name)) if kw == "record" => Some(name.clone()),
            _ => None,
        })
        .collect();
    let mut p = Parser {
        toks,
        pos: 0,
        next_ordinal: 0,
        record_names,
    };
    p.program()
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> Span {
        let t = &self.toks[self.pos];
        Span {
            line: t.line,
            col: t.col,
        }
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let t = &self.toks[self.pos];
        Err(ParseError {
            line: t.line,
            col: t.col,
            message: message.into(),
        })
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w == kw)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.error(format!("expected `{p}`, found {}", describe(self.peek())))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.error(format!("expected `{kw}`, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(w) if !KEYWORDS.contains(&w.as_str()) && w != "bool" => {
                self.bump();
                Ok(w)
            }
            other => self.error(format!("expected identifier, found {}", describe(&other))),
        }
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut records = Vec::new();
        let mut functions: Vec<Function> = Vec::new();
        loop {
            if matches!(self.peek(), Tok::Eof) {
                break;
            }
            if self.is_kw("record") {
                records.push(self.record()?);
            } else if self.is_kw("fn") || self.is_kw("entry") {
                let f = self.function()?;
                if functions.iter().any(|g| g.name == f.name) {
                    return Err(ParseError {
                        line: f.line,
                        col: 1,
                        message: format!("duplicate function `{}`", f.name),
                    });
                }
                functions.push(f);
            } else {
                return self.error(format!(
                    "expected `record`, `fn` or `entry`, found {}",
                    describe(self.peek())
                ));
            }
        }
        let entries: Vec<&Function> = functions.iter().filter(|f| f.is_entry).collect();
        let entry = match entries.as_slice() {
            [] => return self.error("no entry function"),
            [f] => f.name.clone(),
            [_, second, ..] => {
                return Err(ParseError {
                    line: second.line,
                    col: 1,
                    message: "more than one entry function".into(),
                })
            }
        };
        Ok(Program {
            records,
            functions,
            entry,
        })
    }

    fn record(&mut self) -> Result<RecordDef, ParseError> {
        let line = self.here().line;
        self.expect_kw("record")?;
        let name = self.ident()?;
        self.expect_punct("{")?;
        let mut fields = Vec::new();
        while !self.eat_punct("}") {
            let fname = self.ident()?;
            self.expect_punct(":")?;
            let ty = self.ty()?;
            self.expect_punct(";")?;
            fields.push((fname, ty));
        }
        Ok(RecordDef { name, fields, line })
    }

    fn function(&mut self) -> Result<Function, ParseError> {
        let line = self.here().line;
        let is_entry = self.eat_kw("entry");
        self.expect_kw("fn")?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.eat_punct(")") {
            loop {
                let pname = self.ident()?;
                self.expect_punct(":")?;
                let ty = self.ty()?;
                params.push(Param { name: pname, ty });
                if self.eat_punct(")") {
                    break;
                }
                self.expect_punct(",")?;
            }
        }
        let ret = if self.eat_punct("->") {
            Some(self.ty()?)
        } else {
            None
        };
        let body = self.block()?;
        Ok(Function {
            name,
            params,
            ret,
            body,
            is_entry,
            line,
        })
    }

    fn ty(&mut self) -> Result<Type, ParseError> {
        let mut ty = match self.peek().clone() {
            Tok::Ident(w) if w == "int" => Type::Int,
            Tok::Ident(w) if w == "float" => Type::Float,
            Tok::Ident(w) if w == "bool" => Type::Bool,
            Tok::Ident(w) if !KEYWORDS.contains(&w.as_str()) => Type::Record(w),
            other => return self.error(format!("expected type, found {}", describe(&other))),
        };
        self.bump();
        while self.is_punct("[") && matches!(self.peek_at(1), Tok::Punct("]")) {
            self.bump();
            self.bump();
            ty = Type::Array(Box::new(ty));
        }
        Ok(ty)
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect_punct("{")?;
        let mut stmts = Vec::new();
        while !self.eat_punct("}") {
            if matches!(self.peek(), Tok::Eof) {
                return self.error("unterminated block");
            }
            stmts.push(self.stmt()?);
        }
        Ok(stmts)
    }

    fn new_id(&mut self) -> LocationId {
        let id = LocationId::new(self.next_ordinal, self.here().line);
        self.next_ordinal += 1;
        id
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let id = self.new_id();
        let kind = if self.eat_kw("let") {
            let name = self.ident()?;
            self.expect_punct(":")?;
            let ty = self.ty()?;
            self.expect_punct("=")?;
            let init = self.expr()?;
            self.expect_punct(";")?;
            StmtKind::Let { name, ty, init }
        } else if self.eat_kw("if") {
            self.if_rest()?
        } else if self.eat_kw("while") {
            self.expect_punct("(")?;
            let cond = self.expr()?;
            self.expect_punct(")")?;
            let body = self.block()?;
            StmtKind::While { cond, body }
        } else if self.eat_kw("for") {
            let var = self.ident()?;
            if self.eat_punct(":") {
                let ty = self.ty()?;
                self.expect_kw("in")?;
                let iterable = self.expr()?;
                let body = self.block()?;
                StmtKind::ForEach {
                    var,
                    ty,
                    iterable,
                    body,
                }
            } else {
                self.expect_kw("in")?;
                let start = self.expr()?;
                self.expect_punct("..")?;
                let end = self.expr()?;
                let body = self.block()?;
                StmtKind::ForRange {
                    var,
                    start,
                    end,
                    body,
                }
            }
        } else if self.eat_kw("assert") {
            let e = self.expr()?;
            self.expect_punct(";")?;
            StmtKind::Assert(e)
        } else if self.eat_kw("return") {
            let e = if self.is_punct(";") {
                None
            } else {
                Some(self.expr()?)
            };
            self.expect_punct(";")?;
            StmtKind::Return(e)
        } else {
            let e = self.expr()?;
            if self.eat_punct("=") {
                let value = self.expr()?;
                self.expect_punct(";")?;
                StmtKind::Assign { target: e, value }
            } else {
                self.expect_punct(";")?;
                StmtKind::Expr(e)
            }
        };
        Ok(Stmt { id, kind })
    }

    fn if_rest(&mut self) -> Result<StmtKind, ParseError> {
        self.expect_punct("(")?;
        let cond = self.expr()?;
        self.expect_punct(")")?;
        let then_body = self.block()?;
        let else_body = if self.eat_kw("else") {
            if self.is_kw("if") {
                let id = self.new_id();
                self.bump();
                let kind = self.if_rest()?;
                Some(vec![Stmt { id, kind }])
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(StmtKind::If {
            cond,
            then_body,
            else_body,
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(1)
    }

    fn binop(&self) -> Option<BinOp> {
        let op = match self.peek() {
            Tok::Punct("||") => BinOp::Or,
            Tok::Punct("&&") => BinOp::And,
            Tok::Punct("==") => BinOp::Eq,
            Tok::Punct("!=") => BinOp::Ne,
            Tok::Punct("<") => BinOp::Lt,
            Tok::Punct("<=") => BinOp::Le,
            Tok::Punct(">") => BinOp::Gt,
            Tok::Punct(">=") => BinOp::Ge,
            Tok::Punct("+") => BinOp::Add,
            Tok::Punct("-") => BinOp::Sub,
            Tok::Punct("*") => BinOp::Mul,
            Tok::Punct("/") => BinOp::Div,
            Tok::Punct("%") => BinOp::Rem,
            _ => return None,
        };
        Some(op)
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binop() {
            if op.precedence() < min_prec {
                break;
            }
            let span = self.here();
            self.bump();
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let span = self.here();
        if self.eat_punct("-") {
            // Fold negative literals so that i64::MIN is expressible.
            if let Tok::Int(v) = *self.peek() {
                if !matches!(self.peek_at(1), Tok::Punct(".") | Tok::Punct("[")) {
                    self.bump();
                    return Ok(Expr::new(ExprKind::Int((v as i64).wrapping_neg()), span));
                }
            }
            if let Tok::Float(v) = *self.peek() {
                self.bump();
                return Ok(Expr::new(ExprKind::Float(-v), span));
            }
            let e = self.unary()?;
            return Ok(Expr::new(ExprKind::Unary(UnOp::Neg, Box::new(e)), span));
        }
        if self.eat_punct("!") {
            let e = self.unary()?;
            return Ok(Expr::new(ExprKind::Unary(UnOp::Not, Box::new(e)), span));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        loop {
            let span = self.here();
            if self.eat_punct(".") {
                let field = self.ident()?;
                e = Expr::new(ExprKind::Field(Box::new(e), field), span);
            } else if self.eat_punct("[") {
                let idx = self.expr()?;
                self.expect_punct("]")?;
                e = Expr::new(ExprKind::Index(Box::new(e), Box::new(idx)), span);
            } else {
                return Ok(e);
            }
        }
    }

    fn args(&mut self, close: &str) -> Result<Vec<Expr>, ParseError> {
        let mut args = Vec::new();
        if self.eat_punct(close) {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat_punct(close) {
                return Ok(args);
            }
            self.expect_punct(",")?;
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let span = self.here();
        let kind = match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                if v > i64::MAX as u64 {
                    return Err(ParseError {
                        line: span.line,
                        col: span.col,
                        message: format!("integer literal {v} out of range"),
                    });
                }
                ExprKind::Int(v as i64)
            }
            Tok::Float(v) => {
                self.bump();
                ExprKind::Float(v)
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                return Ok(e);
            }
            Tok::Punct("[") => {
                self.bump();
                ExprKind::ArrayLit(self.args("]")?)
            }
            Tok::Ident(w) if w == "true" => {
                self.bump();
                ExprKind::Bool(true)
            }
            Tok::Ident(w) if w == "false" => {
                self.bump();
                ExprKind::Bool(false)
            }
            Tok::Ident(w) if w == "null" => {
                self.bump();
                ExprKind::Null
            }
            Tok::Ident(w) if w == "new" => {
                self.bump();
                let elem = match self.peek().clone() {
                    Tok::Ident(w) if w == "int" => Type::Int,
                    Tok::Ident(w) if w == "float" => Type::Float,
                    Tok::Ident(w) if w == "bool" => Type::Bool,
                    Tok::Ident(w) if !KEYWORDS.contains(&w.as_str()) => Type::Record(w),
                    other => {
                        return self.error(format!("expected type, found {}", describe(&other)))
                    }
                };
                self.bump();
                let mut elem = elem;
                while self.is_punct("[") && matches!(self.peek_at(1), Tok::Punct("]")) {
                    self.bump();
                    self.bump();
                    elem = Type::Array(Box::new(elem));
                }
                self.expect_punct("[")?;
                let len = self.expr()?;
                self.expect_punct("]")?;
                ExprKind::NewArray(elem, Box::new(len))
            }
            Tok::Ident(w) if w == "int" || w == "float" => {
                // conversion builtins share their names with types
                self.bump();
                self.expect_punct("(")?;
                ExprKind::Call(w, self.args(")")?)
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                if self.eat_punct("(") {
                    ExprKind::Call(name, self.args(")")?)
                } else if self.record_names.contains(&name) && self.is_punct("{") {
                    self.bump();
                    let mut fields = Vec::new();
                    if !self.eat_punct("}") {
                        loop {
                            let f = self.ident()?;
                            self.expect_punct(":")?;
                            fields.push((f, self.expr()?));
                            if self.eat_punct("}") {
                                break;
                            }
                            self.expect_punct(",")?;
                        }
                    }
                    ExprKind::RecordLit(name, fields)
                } else {
                    ExprKind::Var(name)
                }
            }
            other => return self.error(format!("expected expression, found {}", describe(&other))),
        };
        Ok(Expr::new(kind, span))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(w) => format!("`{w}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Float(v) => format!("`{v}`"),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Eof => "end of input".into(),
    }
}
