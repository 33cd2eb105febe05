//! Canonical pretty-printer. Parsing its output yields a structurally equal tree.

use std::fmt::Write;

use super::ast::*;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for r in &p.records {
        let _ = writeln!(out, "record {} {{", r.name);
        for (f, ty) in &r.fields {
            let _ = writeln!(out, "    {f}: {ty};");
        }
        out.push_str("}\n\n");
    }
    for f in &p.functions {
        if f.is_entry {
            out.push_str("entry ");
        }
        let params: Vec<String> = f
            .params
            .iter()
            .map(|p| format!("{}: {}", p.name, p.ty))
            .collect();
        let _ = write!(out, "fn {}({})", f.name, params.join(", "));
        if let Some(ret) = &f.ret {
            let _ = write!(out, " -> {ret}");
        }
        out.push_str(" {\n");
        print_block(&f.body, 1, &mut out);
        out.push_str("}\n\n");
    }
    out
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn print_block(stmts: &[Stmt], level: usize, out: &mut String) {
    for s in stmts {
        indent(level, out);
        print_stmt(s, level, out);
        out.push('\n');
    }
}

fn print_stmt(s: &Stmt, level: usize, out: &mut String) {
    match &s.kind {
        StmtKind::Let { name, ty, init } => {
            let _ = write!(out, "let {name}: {ty} = {};", print_expr(init));
        }
        StmtKind::Assign { target, value } => {
            let _ = write!(out, "{} = {};", print_expr(target), print_expr(value));
        }
        StmtKind::Expr(e) => {
            let _ = write!(out, "{};", print_expr(e));
        }
        StmtKind::If {
            cond,
            then_body,
            else_body,
        } => {
            let _ = writeln!(out, "if ({}) {{", print_expr(cond));
            print_block(then_body, level + 1, out);
            indent(level, out);
            out.push('}');
            if let Some(else_body) = else_body {
                match else_body.as_slice() {
                    [only @ Stmt {
                        kind: StmtKind::If { .. },
                        ..
                    }] => {
                        out.push_str(" else ");
                        print_stmt(only, level, out);
                    }
                    _ => {
                        out.push_str(" else {\n");
                        print_block(else_body, level + 1, out);
                        indent(level, out);
                        out.push('}');
                    }
                }
            }
        }
        StmtKind::While { cond, body } => {
            let _ = writeln!(out, "while ({}) {{", print_expr(cond));
            print_block(body, level + 1, out);
            indent(level, out);
            out.push('}');
        }
        StmtKind::ForRange {
            var,
            start,
            end,
            body,
        } => {
            let _ = writeln!(
                out,
                "for {var} in {} .. {} {{",
                print_expr(start),
                print_expr(end)
            );
            print_block(body, level + 1, out);
            indent(level, out);
            out.push('}');
        }
        StmtKind::ForEach {
            var,
            ty,
            iterable,
            body,
        } => {
            let _ = writeln!(out, "for {var}: {ty} in {} {{", print_expr(iterable));
            print_block(body, level + 1, out);
            indent(level, out);
            out.push('}');
        }
        StmtKind::Assert(e) => {
            let _ = write!(out, "assert {};", print_expr(e));
        }
        StmtKind::Return(None) => out.push_str("return;"),
        StmtKind::Return(Some(e)) => {
            let _ = write!(out, "return {};", print_expr(e));
        }
    }
}

/// Prints an expression fully parenthesised where precedence requires it.
pub fn print_expr(e: &Expr) -> String {
    expr_prec(e, 0)
}

fn float_literal(v: f64) -> String {
    if v.is_nan() {
        return "(0.0 / 0.0)".into();
    }
    if v.is_infinite() {
        return if v > 0.0 {
            "(1.0 / 0.0)"
        } else {
            "(-1.0 / 0.0)"
        }
        .into();
    }
    let s = format!("{:?}", v.abs());
    let s = if s.contains('.') || s.contains('e') {
        s
    } else {
        format!("{s}.0")
    };
    // `1e300` lexes as a float; `1.5e-7` too
    if v.is_sign_negative() {
        format!("(-{s})")
    } else {
        s
    }
}

fn expr_prec(e: &Expr, min: u8) -> String {
    match &e.kind {
        ExprKind::Int(v) => {
            if *v < 0 {
                format!("({v})")
            } else {
                v.to_string()
            }
        }
        ExprKind::Float(v) => float_literal(*v),
        ExprKind::Bool(b) => b.to_string(),
        ExprKind::Null => "null".into(),
        ExprKind::Var(v) => v.clone(),
        ExprKind::Field(b, f) => format!("{}.{f}", expr_prec(b, 10)),
        ExprKind::Index(a, i) => format!("{}[{}]", expr_prec(a, 10), expr_prec(i, 0)),
        ExprKind::Call(name, args) => {
            let args: Vec<String> = args.iter().map(print_expr).collect();
            format!("{name}({})", args.join(", "))
        }
        ExprKind::Unary(op, inner) => {
            let sym = match op {
                UnOp::Neg => "-",
                UnOp::Not => "!",
            };
            let operand = match (op, &inner.kind) {
                (UnOp::Neg, ExprKind::Int(_) | ExprKind::Float(_)) => {
                    format!("({})", print_expr(inner))
                }
                _ => expr_prec(inner, 9),
            };
            let s = format!("{sym}{operand}");
            if min > 8 {
                format!("({s})")
            } else {
                s
            }
        }
        ExprKind::Binary(op, l, r) => {
            let p = op.precedence();
            let s = format!(
                "{} {} {}",
                expr_prec(l, p),
                op.symbol(),
                expr_prec(r, p + 1)
            );
            if p < min {
                format!("({s})")
            } else {
                s
            }
        }
        ExprKind::ArrayLit(items) => {
            let items: Vec<String> = items.iter().map(print_expr).collect();
            format!("[{}]", items.join(", "))
        }
        ExprKind::NewArray(elem, len) => {
            // `new T[][n]` for nested element types
            let mut base = elem.clone();
            let mut dims = String::new();
            while let Type::Array(inner) = base {
                dims.push_str("[]");
                base = *inner;
            }
            format!("new {base}{dims}[{}]", print_expr(len))
        }
        ExprKind::RecordLit(name, fields) => {
            let fields: Vec<String> = fields
                .iter()
                .map(|(f, e)| format!("{f}: {}", print_expr(e)))
                .collect();
            format!("{name}{{{}}}", fields.join(", "))
        }
    }
}
