use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{Program, Type};

/// A fully materialised MiniLang value: test arguments and captured program
/// states use this tree form rather than heap references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Null,
    Record(RecordValue),
    Array(ArrayValue),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordValue {
    pub name: String,
    pub fields: Vec<(String, Value)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayValue {
    pub elem: Type,
    pub elems: Vec<Value>,
}

impl RecordValue {
    pub fn field(&self, name: &str) -> Option<&Value> {
        self.fields.iter().find(|(f, _)| f == name).map(|(_, v)| v)
    }
}

impl Value {
    pub fn default_for(ty: &Type) -> Value {
        match ty {
            Type::Int => Value::Int(0),
            Type::Float => Value::Float(0.0),
            Type::Bool => Value::Bool(false),
            Type::Record(_) => Value::Null,
            Type::Array(elem) => Value::Array(ArrayValue {
                elem: (**elem).clone(),
                elems: Vec::new(),
            }),
        }
    }

    /// Checks that the value inhabits `ty`, recursing into records and arrays.
    pub fn conforms(&self, ty: &Type, program: &Program) -> bool {
        match (self, ty) {
            (Value::Int(_), Type::Int) | (Value::Float(_), Type::Float) => true,
            (Value::Bool(_), Type::Bool) => true,
            (Value::Null, Type::Record(_)) => true,
            (Value::Record(r), Type::Record(name)) => {
                let Some(def) = program.record(name) else {
                    return false;
                };
                r.name == *name
                    && r.fields.len() == def.fields.len()
                    && def
                        .fields
                        .iter()
                        .zip(&r.fields)
                        .all(|((fname, fty), (vname, v))| {
                            fname == vname && v.conforms(fty, program)
                        })
            }
            (Value::Array(a), Type::Array(elem)) => {
                a.elem == **elem && a.elems.iter().all(|v| v.conforms(elem, program))
            }
            _ => false,
        }
    }

    /// Coerces a literal read without type information to `ty` (ints into
    /// float slots, element types of empty arrays).
    pub fn coerce(self, ty: &Type, program: &Program) -> Result<Value, String> {
        match (self, ty) {
            (Value::Int(v), Type::Float) => Ok(Value::Float(v as f64)),
            (v @ (Value::Int(_) | Value::Float(_) | Value::Bool(_)), _)
                if v.conforms(ty, program) =>
            {
                Ok(v)
            }
            (Value::Null, Type::Record(_)) => Ok(Value::Null),
            (Value::Record(r), Type::Record(name)) => {
                let def = program
                    .record(name)
                    .ok_or_else(|| format!("unknown record type `{name}`"))?;
                if r.name != *name {
                    return Err(format!("expected `{name}`, found `{}`", r.name));
                }
                let mut fields = Vec::with_capacity(def.fields.len());
                for (fname, fty) in &def.fields {
                    let v = r
                        .field(fname)
                        .cloned()
                        .ok_or_else(|| format!("`{name}` literal is missing field `{fname}`"))?;
                    fields.push((fname.clone(), v.coerce(fty, program)?));
                }
                if r.fields.len() != def.fields.len() {
                    return Err(format!("`{name}` literal has unknown fields"));
                }
                Ok(Value::Record(RecordValue {
                    name: name.clone(),
                    fields,
                }))
            }
            (Value::Array(a), Type::Array(elem)) => {
                let elems = a
                    .elems
                    .into_iter()
                    .map(|v| v.coerce(elem, program))
                    .collect::<Result<_, _>>()?;
                Ok(Value::Array(ArrayValue {
                    elem: (**elem).clone(),
                    elems,
                }))
            }
            (v, ty) => Err(format!("value `{v}` does not fit type `{ty}`")),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }
}

pub(crate) fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        let s = format!("{v:?}");
        if s.contains('.') || s.contains('e') || s.contains("inf") {
            s
        } else {
            format!("{s}.0")
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => f.write_str(&format_float(*v)),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Null => f.write_str("null"),
            Value::Record(r) => {
                write!(f, "{}{{", r.name)?;
                for (i, (name, v)) in r.fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{name}: {v}")?;
                }
                f.write_str("}")
            }
            Value::Array(a) => {
                f.write_str("[")?;
                for (i, v) in a.elems.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}
