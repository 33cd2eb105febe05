//! Test files: a list of argument lists written as value literals.
//!
//! ```text
//! // comments run to the end of the line
//! [
//!   [Stu{score: 94, ID: 1, newscore: 0.0}, null, [1, 2, 3]],
//!   [null, null, []],
//! ]
//! ```
//!
//! Numbers with a `.` or an exponent are floats; `NaN`, `inf` and `-inf` are
//! also floats. Ints are widened where a float is expected.

use thiserror::Error;

use super::{Provenance, TestCase};
use crate::minilang::{ArrayValue, RecordValue, Type, TypedProgram, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TestFileError {
    #[error("{line}:{col}: {message}")]
    Syntax {
        line: u32,
        col: u32,
        message: String,
    },
    #[error("test {test}: {message}")]
    Shape { test: usize, message: String },
}

struct Reader<'s> {
    src: &'s [u8],
    pos: usize,
}

impl<'s> Reader<'s> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, TestFileError> {
        let before = &self.src[..self.pos.min(self.src.len())];
        let line = before.iter().filter(|&&b| b == b'\n').count() as u32 + 1;
        let col = (before.len()
            - before
                .iter()
                .rposition(|&b| b == b'\n')
                .map_or(0, |p| p + 1)) as u32
            + 1;
        Err(TestFileError::Syntax {
            line,
            col,
            message: message.into(),
        })
    }

    fn skip(&mut self) {
        loop {
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.src[self.pos..].starts_with(b"//") {
                while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), TestFileError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected `{}`", c as char))
        }
    }

    fn word(&mut self) -> &'s str {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).expect("ascii")
    }

    /// Comma-separated items up to `close`; a trailing comma is allowed.
    fn list<T>(
        &mut self,
        close: u8,
        mut item: impl FnMut(&mut Self) -> Result<T, TestFileError>,
    ) -> Result<Vec<T>, TestFileError> {
        let mut out = Vec::new();
        loop {
            if self.eat(close) {
                return Ok(out);
            }
            out.push(item(self)?);
            if !self.eat(b',') {
                self.expect(close)?;
                return Ok(out);
            }
        }
    }

    fn value(&mut self) -> Result<Value, TestFileError> {
        match self.peek() {
            None => self.err("unexpected end of input"),
            Some(b'[') => {
                self.pos += 1;
                let elems = self.list(b']', Self::value)?;
                // element type is settled when coercing against the signature
                Ok(Value::Array(ArrayValue {
                    elem: Type::Int,
                    elems,
                }))
            }
            Some(c) if c == b'-' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let w = self.word();
                match w {
                    "true" => Ok(Value::Bool(true)),
                    "false" => Ok(Value::Bool(false)),
                    "null" => Ok(Value::Null),
                    "NaN" => Ok(Value::Float(f64::NAN)),
                    "inf" => Ok(Value::Float(f64::INFINITY)),
                    _ => {
                        let name = w.to_string();
                        self.expect(b'{')?;
                        let fields = self.list(b'}', |r| {
                            r.skip();
                            let f = r.word().to_string();
                            if f.is_empty() {
                                return r.err("expected field name");
                            }
                            r.expect(b':')?;
                            Ok((f, r.value()?))
                        })?;
                        Ok(Value::Record(RecordValue { name, fields }))
                    }
                }
            }
            Some(c) => self.err(format!("unexpected `{}`", c as char)),
        }
    }

    fn number(&mut self) -> Result<Value, TestFileError> {
        let start = self.pos;
        if self.src[self.pos] == b'-' {
            self.pos += 1;
            if self.src[self.pos..].starts_with(b"inf") {
                self.pos += 3;
                return Ok(Value::Float(f64::NEG_INFINITY));
            }
        }
        let mut float = false;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            let sign_after_exp =
                (c == b'-' || c == b'+') && matches!(self.src[self.pos - 1], b'e' | b'E');
            if c.is_ascii_digit() || sign_after_exp {
                self.pos += 1;
            } else if matches!(c, b'.' | b'e' | b'E') {
                float = true;
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        if float {
            match text.parse::<f64>() {
                Ok(f) => Ok(Value::Float(f)),
                Err(_) => self.err(format!("bad float `{text}`")),
            }
        } else {
            match text.parse::<i64>() {
                Ok(i) => Ok(Value::Int(i)),
                Err(_) => self.err(format!("bad integer `{text}`")),
            }
        }
    }
}

/// Parses the raw argument lists of a test file.
pub fn parse_values(text: &str) -> Result<Vec<Vec<Value>>, TestFileError> {
    let mut r = Reader {
        src: text.as_bytes(),
        pos: 0,
    };
    r.expect(b'[')?;
    let tests = r.list(b']', |r| {
        r.expect(b'[')?;
        r.list(b']', Reader::value)
    })?;
    if r.peek().is_some() {
        return r.err("trailing input");
    }
    Ok(tests)
}

/// Parses a test file and checks every test against the entry signature.
pub fn load_tests(text: &str, program: &TypedProgram) -> Result<Vec<TestCase>, TestFileError> {
    let params = program.entry_params();
    parse_values(text)?
        .into_iter()
        .enumerate()
        .map(|(test, args)| {
            if args.len() != params.len() {
                return Err(TestFileError::Shape {
                    test,
                    message: format!("expected {} arguments, found {}", params.len(), args.len()),
                });
            }
            let args = args
                .into_iter()
                .zip(&params)
                .map(|(v, ty)| v.coerce(ty, program.program()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|message| TestFileError::Shape { test, message })?;
            Ok(TestCase {
                id: test,
                args,
                provenance: Provenance::Given,
            })
        })
        .collect()
}

pub fn save_tests(tests: &[TestCase]) -> String {
    let mut out = String::from("[\n");
    for t in tests {
        let args: Vec<String> = t.args.iter().map(|a| a.to_string()).collect();
        out.push_str(&format!("  [{}],\n", args.join(", ")));
    }
    out.push_str("]\n");
    out
}
