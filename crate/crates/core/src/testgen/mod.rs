//! Random test generation and suite execution.

mod format;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::interpreter::{execute, ExecError, ExecOptions, RunResult, Verdict};
use crate::minilang::{ArrayValue, Program, RecordValue, Type, TypedProgram, Value};

pub use format::{load_tests, parse_values, save_tests, TestFileError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Given,
    Generated { seed: u64, index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: usize,
    pub args: Vec<Value>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub base_ints: Vec<i64>,
    /// Uniform draws added to each primitive pool.
    pub draws_per_type: usize,
    /// Range of the uniform draws, for ints and floats alike.
    pub draw_range: (i64, i64),
    pub null_probability: f64,
    pub reuse_probability: f64,
    pub max_depth: usize,
    pub max_array_len: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            base_ints: vec![-10, -1, 0, 1, 10, 100],
            draws_per_type: 8,
            draw_range: (-1000, 1000),
            null_probability: 0.1,
            reuse_probability: 0.25,
            max_depth: 4,
            max_array_len: 5,
        }
    }
}

pub fn generate_tests(program: &TypedProgram, m: usize, seed: u64) -> Vec<TestCase> {
    generate_tests_with(program, m, seed, &GenConfig::default())
}

pub fn generate_tests_with(
    program: &TypedProgram,
    m: usize,
    seed: u64,
    config: &GenConfig,
) -> Vec<TestCase> {
    let mut g = Generator::new(program.program(), seed, config);
    let params = program.entry_params();
    (0..m)
        .map(|index| TestCase {
            id: index,
            args: params.iter().map(|t| g.value(t, 0)).collect(),
            provenance: Provenance::Generated { seed, index },
        })
        .collect()
}

struct Generator<'a> {
    program: &'a Program,
    config: &'a GenConfig,
    rng: ChaCha8Rng,
    ints: Vec<i64>,
    floats: Vec<f64>,
    made: BTreeMap<String, Vec<Value>>,
}

impl<'a> Generator<'a> {
    fn new(program: &'a Program, seed: u64, config: &'a GenConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = config.draw_range;
        let mut ints = config.base_ints.clone();
        let mut floats: Vec<f64> = config.base_ints.iter().map(|&i| i as f64).collect();
        for _ in 0..config.draws_per_type {
            ints.push(rng.gen_range(lo..=hi));
        }
        for _ in 0..config.draws_per_type {
            floats.push(rng.gen_range(lo as f64..=hi as f64));
        }
        Self {
            program,
            config,
            rng,
            ints,
            floats,
            made: BTreeMap::new(),
        }
    }

    fn value(&mut self, ty: &Type, depth: usize) -> Value {
        match ty {
            Type::Int => Value::Int(*self.ints.choose(&mut self.rng).expect("non-empty pool")),
            Type::Float => {
                Value::Float(*self.floats.choose(&mut self.rng).expect("non-empty pool"))
            }
            Type::Bool => Value::Bool(self.rng.gen_bool(0.5)),
            Type::Record(name) => {
                if depth >= self.config.max_depth || self.rng.gen_bool(self.config.null_probability)
                {
                    return Value::Null;
                }
                if let Some(pool) = self.made.get(name).filter(|p| !p.is_empty()) {
                    if self.rng.gen_bool(self.config.reuse_probability) {
                        let pick = self.rng.gen_range(0..pool.len());
                        return pool[pick].clone();
                    }
                }
                let def = self.program.record(name).expect("typechecked record");
                let fields = def
                    .fields
                    .iter()
                    .map(|(f, t)| (f.clone(), self.value(t, depth + 1)))
                    .collect::<Vec<_>>();
                let v = Value::Record(RecordValue {
                    name: name.clone(),
                    fields,
                });
                self.observe(&v);
                self.made.entry(name.clone()).or_default().push(v.clone());
                v
            }
            Type::Array(elem) => {
                let len = if depth >= self.config.max_depth {
                    0
                } else {
                    self.rng.gen_range(0..=self.config.max_array_len)
                };
                Value::Array(ArrayValue {
                    elem: (**elem).clone(),
                    elems: (0..len).map(|_| self.value(elem, depth + 1)).collect(),
                })
            }
        }
    }

    /// Adds the primitive field values of a constructed object to the pools.
    fn observe(&mut self, v: &Value) {
        match v {
            Value::Int(i) if !self.ints.contains(i) => self.ints.push(*i),
            Value::Float(f) if !self.floats.iter().any(|g| g.to_bits() == f.to_bits()) => {
                self.floats.push(*f)
            }
            Value::Record(r) => {
                for (_, f) in &r.fields {
                    self.observe(f);
                }
            }
            Value::Array(a) => {
                for e in &a.elems {
                    self.observe(e);
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub tests: Vec<TestCase>,
    /// One run per test, in test order.
    pub runs: Vec<RunResult>,
    /// Indices into `tests`.
    pub passed: Vec<usize>,
    pub failed: Vec<usize>,
    pub irrelevant: Vec<usize>,
}

impl SuiteResult {
    pub fn summary(&self) -> String {
        format!(
            "{} failed, {} passed, {} irrelevant",
            self.failed.len(),
            self.passed.len(),
            self.irrelevant.len()
        )
    }
}

pub fn run_suite(
    program: &TypedProgram,
    tests: &[TestCase],
    opts: &ExecOptions<'_>,
) -> Result<SuiteResult, ExecError> {
    let mut out = SuiteResult {
        tests: tests.to_vec(),
        runs: Vec::with_capacity(tests.len()),
        passed: Vec::new(),
        failed: Vec::new(),
        irrelevant: Vec::new(),
    };
    for (i, t) in tests.iter().enumerate() {
        let run = execute(program, &t.args, opts)?;
        match run.verdict {
            Verdict::Pass => out.passed.push(i),
            Verdict::Fail => out.failed.push(i),
            Verdict::Irrelevant => out.irrelevant.push(i),
        }
        out.runs.push(run);
    }
    Ok(out)
}
