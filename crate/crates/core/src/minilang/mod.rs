//! MiniLang: a small imperative language with records, arrays, and asserts.
//!
//! ```text
//! program   := (record | function)*
//! record    := "record" IDENT "{" (IDENT ":" type ";")* "}"
//! function  := ["entry"] "fn" IDENT "(" [param ("," param)*] ")" ["->" type] block
//! param     := IDENT ":" type
//! type      := ("int" | "float" | "bool" | IDENT) ("[" "]")*
//! block     := "{" stmt* "}"
//! stmt      := "let" IDENT ":" type "=" expr ";"
//!            | expr "=" expr ";"
//!            | expr ";"                                   (call)
//!            | "if" "(" expr ")" block ["else" (block | if)]
//!            | "while" "(" expr ")" block
//!            | "for" IDENT "in" expr ".." expr block     (counted, end exclusive)
//!            | "for" IDENT ":" type "in" expr block       (for-each)
//!            | "assert" expr ";"
//!            | "return" [expr] ";"
//! expr      := binary operators || && == != < <= > >= + - * / %, unary - !,
//!              postfix .field [index] call(args), literals, null,
//!              [e, ...] array literal, new T[n], Rec{field: e, ...}
//! ```
//!
//! Builtins: `len`, `sqrt`, `floor`, `ceil`, `abs`, `float`, `int`.
//! Integers are 64-bit and wrap on overflow; records and arrays are passed by
//! reference, primitives by value.

mod ast;
mod parser;
mod printer;
mod typecheck;
mod value;

pub use ast::*;
pub use parser::{parse_program, ParseError};
pub use printer::{print_expr, print_program};
pub use typecheck::{is_builtin, typecheck, StmtInfo, StmtList, TypeError, TypedProgram, BUILTINS};
pub use value::{ArrayValue, RecordValue, Value};

/// Parses and typechecks in one step.
pub fn compile(source: &str) -> Result<TypedProgram, crate::Error> {
    let program = parse_program(source)?;
    typecheck(program).map_err(crate::Error::Type)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const STU: &str = include_str!("../../../../corpus/stu/stu.ml5");

    #[test]
    fn running_example_has_nine_statements() {
        let p = parse_program(STU).unwrap();
        assert_eq!(p.statement_count(), 9);
        let ords: Vec<u32> = p.statements().iter().map(|s| s.id.ordinal).collect();
        assert_eq!(ords, (0..9).collect::<Vec<_>>());
        assert_eq!(p.entry, "program");
        assert!(typecheck(p).is_ok());
    }

    #[test]
    fn empty_source_has_no_entry() {
        let err = parse_program("").unwrap_err();
        assert_eq!(err.message, "no entry function");
    }

    #[test]
    fn minimal_program() {
        let p = parse_program("entry fn f(){ assert true; }").unwrap();
        assert_eq!(p.statement_count(), 1);
        let t = typecheck(p).unwrap();
        assert_eq!(t.designated_assertion().map(|l| l.ordinal), Some(0));
    }

    #[test]
    fn parse_error_reports_position() {
        let err = parse_program("entry fn f() {\n  let x: int = ;\n}").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("expected expression"));
    }

    #[test]
    fn assert_needs_bool() {
        let errs = typecheck(parse_program("entry fn f() { assert 1; }").unwrap()).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].location.map(|l| l.ordinal), Some(0));
    }

    #[test]
    fn null_into_int_is_rejected() {
        let src = "entry fn f() { let x: int = null; assert x > 0; }";
        let errs = typecheck(parse_program(src).unwrap()).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].location.map(|l| l.ordinal), Some(0));
    }

    #[test]
    fn index_must_be_int() {
        let src = "entry fn f(a: int[]) { assert a[true] > 0; }";
        assert!(typecheck(parse_program(src).unwrap()).is_err());
    }

    #[test]
    fn null_only_for_records() {
        let src = "record R { v: int; }\nentry fn f(r: R) { r = null; assert r == null; }";
        assert!(typecheck(parse_program(src).unwrap()).is_ok());
        let src = "entry fn f(a: int[]) { a = null; assert true; }";
        assert!(typecheck(parse_program(src).unwrap()).is_err());
    }

    #[test]
    fn redeclaration_is_rejected() {
        let src = "entry fn f(x: int) { let x: int = 1; assert x > 0; }";
        assert!(typecheck(parse_program(src).unwrap()).is_err());
    }

    #[test]
    fn running_example_roundtrips_through_printer() {
        let p = parse_program(STU).unwrap();
        let printed = print_program(&p);
        let q = parse_program(&printed).unwrap();
        assert_eq!(p, q);
        assert_eq!(print_program(&q), printed);
    }

    #[test]
    fn else_if_chains_roundtrip() {
        let src = "entry fn f(x: int) { let y: int = 0; if (x < 0) { y = -1; } else if (x == 0) { y = 0; } else { y = 1; } assert -y * 2 <= 2 - -3; }";
        let p = parse_program(src).unwrap();
        let q = parse_program(&print_program(&p)).unwrap();
        assert_eq!(p, q);
    }
}
