//! The explanation search: data synthesis, selective sampling and the walk
//! over candidate points and feature combinations.

use std::collections::{BTreeSet, HashSet};
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurization::{
    combinations, extract_features, feature_value, prioritize, FeatureDescriptor, FeatureError,
    FeatureKind, FeatureVector, Label, Origin, DEFAULT_K, DEFAULT_N,
};
use crate::interpreter::{
    dynamic_slice, execute, relevant_variables_at, slice_events, AccessPath, ExecError,
    ExecOptions, MutationOverlay, ObservationPoint, Position, ProgramState, Verdict,
};
use crate::learner::{
    simplify, threshold_1d, Classifier, ClauseReport, LearnError, Solver, DEFAULT_SOLVER_BUDGET,
};
use crate::localization::{
    candidate_points, ochiai_scores, LocalizationError, SuspiciousnessMap, DEFAULT_MAX_POINTS,
    DEFAULT_X_THRESHOLD,
};
use crate::minilang::{TypedProgram, Value};
use crate::testgen::{generate_tests, run_suite, SuiteResult, TestCase};

pub const DEFAULT_MAX_CLAUSES: usize = 3;
pub const DEFAULT_ITERATION_CAP: usize = 100;
pub const DEFAULT_SYNTHESIS_CAP: usize = 256;
/// Normalized coefficients closer than this count as the same classifier.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub m: usize,
    pub x_threshold: f64,
    pub n: usize,
    pub k: usize,
    pub max_clauses: usize,
    pub max_points: usize,
    pub solver_budget: Duration,
    pub iteration_cap: usize,
    pub synthesis_cap: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            m: 0,
            x_threshold: DEFAULT_X_THRESHOLD,
            n: DEFAULT_N,
            k: DEFAULT_K,
            max_clauses: DEFAULT_MAX_CLAUSES,
            max_points: DEFAULT_MAX_POINTS,
            solver_budget: DEFAULT_SOLVER_BUDGET,
            iteration_cap: DEFAULT_ITERATION_CAP,
            synthesis_cap: DEFAULT_SYNTHESIS_CAP,
            seed: 0,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.x_threshold) {
            return bad("x threshold must lie in [0, 1]");
        }
        if self.k < 1 || self.k > self.n {
            return bad("need 1 <= k <= n");
        }
        if self.max_clauses < 1 {
            return bad("max clauses must be at least 1");
        }
        if self.synthesis_cap < 1 {
            return bad("synthesis cap must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(
        "no failing test: the designated assertion never fails. Add a failing test or raise --m"
    )]
    NoFailingTest,
    #[error("no passing test: every test that reaches the assertion fails. Add a passing test or raise --m")]
    NoPassingTest,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

impl From<LocalizationError> for EngineError {
    fn from(e: LocalizationError) -> Self {
        match e {
            LocalizationError::NoFailingTest => EngineError::NoFailingTest,
        }
    }
}

/// Labeled vectors of one point, deduplicated per label.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub vectors: Vec<FeatureVector>,
    seen: HashSet<(Vec<u64>, Label)>,
}

impl Dataset {
    pub fn push(&mut self, v: FeatureVector) -> bool {
        let key = (v.values.iter().map(|x| x.to_bits()).collect(), v.label);
        if self.seen.insert(key) {
            self.vectors.push(v);
            true
        } else {
            false
        }
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.vectors.iter().filter(|v| v.origin == origin).count()
    }

    /// Positives and negatives projected onto `combo`, skipping vectors
    /// missing one of its features. Duplicates within a label are dropped.
    pub fn split(&self, combo: &[usize]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pos: Vec<Vec<f64>> = Vec::new();
        let mut neg: Vec<Vec<f64>> = Vec::new();
        for v in &self.vectors {
            let Some(p) = project(v, combo) else {
                continue;
            };
            let side = match v.label {
                Label::Positive => &mut pos,
                Label::Negative => &mut neg,
            };
            if !side.contains(&p) {
                side.push(p);
            }
        }
        (pos, neg)
    }
}

pub fn project(v: &FeatureVector, combo: &[usize]) -> Option<Vec<f64>> {
    let p: Vec<f64> = combo.iter().map(|&i| v.values[i]).collect();
    p.iter().all(|x| !x.is_nan()).then_some(p)
}

/// Labels injected states by re-running the tests that reach a point.
pub trait LabelingOracle {
    fn query(
        &mut self,
        assignments: &[(AccessPath, Value)],
        origin: Origin,
    ) -> Result<Vec<FeatureVector>, EngineError>;
}

/// The oracle backed by program re-execution.
pub struct ProgramOracle<'a> {
    pub program: &'a TypedProgram,
    pub tests: Vec<&'a TestCase>,
    pub point: ObservationPoint,
    pub descriptors: &'a [FeatureDescriptor],
    pub queries: u64,
}

/// Reads every descriptor, with NaN for paths missing from the state.
pub fn full_vector(state: &ProgramState, descriptors: &[FeatureDescriptor]) -> Vec<f64> {
    descriptors
        .iter()
        .map(|d| feature_value(&state.bindings, &d.path).unwrap_or(f64::NAN))
        .collect()
}

fn label_of(v: Verdict) -> Option<Label> {
    match v {
        Verdict::Pass => Some(Label::Positive),
        Verdict::Fail => Some(Label::Negative),
        Verdict::Irrelevant => None,
    }
}

impl LabelingOracle for ProgramOracle<'_> {
    fn query(
        &mut self,
        assignments: &[(AccessPath, Value)],
        origin: Origin,
    ) -> Result<Vec<FeatureVector>, EngineError> {
        self.queries += 1;
        let overlay = MutationOverlay {
            point: self.point,
            assignments: assignments.to_vec(),
        };
        let opts = ExecOptions {
            overlay: Some(&overlay),
            capture_at: [self.point].into(),
            record_trace: false,
            ..Default::default()
        };
        let mut out = Vec::new();
        for t in &self.tests {
            let run = execute(self.program, &t.args, &opts)?;
            let (Some(label), Some(state)) = (label_of(run.verdict), run.captures.get(&self.point))
            else {
                continue;
            };
            out.push(FeatureVector {
                values: full_vector(state, self.descriptors),
                label,
                origin,
            });
        }
        Ok(out)
    }
}

/// Observed values of every writable feature of `combo`, crossed, queried
/// once per value combination.
pub fn synthesize_data(
    descriptors: &[FeatureDescriptor],
    combo: &[usize],
    data: &mut Dataset,
    oracle: &mut dyn LabelingOracle,
    cap: usize,
    seed: u64,
) -> Result<usize, EngineError> {
    let writable: Vec<usize> = combo
        .iter()
        .copied()
        .filter(|&i| descriptors[i].writable)
        .collect();
    if writable.is_empty() {
        return Ok(0);
    }
    let domains: Vec<Vec<f64>> = writable
        .iter()
        .map(|&i| {
            let mut vals: Vec<f64> = data
                .vectors
                .iter()
                .map(|v| v.values[i])
                .filter(|x| x.is_finite())
                .collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup_by(|a, b| a.to_bits() == b.to_bits());
            vals
        })
        .collect();
    let total = domains
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(d.len()))
        .unwrap_or(usize::MAX);
    if total == 0 {
        return Ok(0);
    }
    let picks: Vec<usize> = if total > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, total, cap).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..total).collect()
    };
    let mut added = 0;
    for mut k in picks {
        let mut point = vec![0.0; writable.len()];
        for (slot, d) in point.iter_mut().zip(&domains).rev() {
            *slot = d[k % d.len()];
            k /= d.len();
        }
        let assignments: Vec<(AccessPath, Value)> = writable
            .iter()
            .zip(&point)
            .filter_map(|(&i, &x)| {
                descriptors[i]
                    .assignment(x)
                    .map(|v| (descriptors[i].path.clone(), v))
            })
            .collect();
        if assignments.is_empty() {
            continue;
        }
        for v in oracle.query(&assignments, Origin::Synthesized)? {
            added += data.push(v) as usize;
        }
    }
    Ok(added)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingOutcome {
    pub classifier: Option<Classifier>,
    pub converged: bool,
    /// Every distinct classifier learned, in order.
    pub history: Vec<Classifier>,
    pub iterations: usize,
}

/// Counts of learner work shared across one explanation search.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    /// Classifier computations (one per learn step of the sampling loop).
    pub learn_calls: u64,
    /// Max-margin solver runs, including the per-negative ones of
    /// conjunctive classification.
    pub svm_calls: u64,
}

fn learn(
    data: &Dataset,
    combo: &[usize],
    descriptors: &[FeatureDescriptor],
    solver: &mut Solver,
    counters: &mut Counters,
) -> Result<Option<Classifier>, EngineError> {
    counters.learn_calls += 1;
    let (pos, neg) = data.split(combo);
    let clauses = if combo.len() == 1 {
        let p: Vec<f64> = pos.iter().map(|v| v[0]).collect();
        let n: Vec<f64> = neg.iter().map(|v| v[0]).collect();
        threshold_1d(&p, &n, descriptors[combo[0]].is_integral()).map(|h| vec![h])
    } else {
        let before = solver.invocations;
        let r = solver.conjunctive(&pos, &neg)?;
        counters.svm_calls += solver.invocations - before;
        r
    };
    Ok(clauses.map(|clauses| Classifier {
        clauses,
        feature_indices: combo.to_vec(),
    }))
}

fn integral(descriptors: &[FeatureDescriptor], combo: &[usize]) -> Vec<bool> {
    combo
        .iter()
        .map(|&i| descriptors[i].is_integral())
        .collect()
}

fn same_classifier(
    a: &Classifier,
    b: &Classifier,
    descriptors: &[FeatureDescriptor],
    data: &Dataset,
) -> bool {
    if a == b {
        return true;
    }
    let combo = &a.feature_indices;
    if combo.len() >= 2 && a.approx_eq(b, CONVERGENCE_TOLERANCE) {
        return true;
    }
    let types = integral(descriptors, combo);
    if !types.iter().all(|&t| t) {
        return false;
    }
    let (pos, neg) = data.split(combo);
    let sa = simplify(a, &types, &pos, &neg);
    let sb = simplify(b, &types, &pos, &neg);
    sa.rationalization_failed.is_empty()
        && sb.rationalization_failed.is_empty()
        && sa.classifier == sb.classifier
}

/// Points on each clause boundary, solved from the most recent negative
/// vector (most recent positive as fallback) for up to two free features.
fn boundary_samples(
    clf: &Classifier,
    descriptors: &[FeatureDescriptor],
    data: &Dataset,
) -> Vec<Vec<f64>> {
    let combo = &clf.feature_indices;
    let mut out: Vec<Vec<f64>> = Vec::new();
    let add = |s: Vec<f64>, out: &mut Vec<Vec<f64>>| {
        if !out.contains(&s) {
            out.push(s);
        }
    };
    for h in &clf.clauses {
        let mut free: Vec<usize> = (0..combo.len())
            .filter(|&j| descriptors[combo[j]].writable && h.coeffs[j] != 0.0)
            .collect();
        free.sort_by(|&a, &b| {
            h.coeffs[b]
                .abs()
                .total_cmp(&h.coeffs[a].abs())
                .then(a.cmp(&b))
        });
        free.truncate(2);
        let solve = |t: &[f64], j: usize| -> Option<Vec<f64>> {
            let rest: f64 = (0..combo.len())
                .filter(|&g| g != j)
                .map(|g| h.coeffs[g] * t[g])
                .sum();
            let mut x = (h.rhs - rest) / h.coeffs[j];
            let d = &descriptors[combo[j]];
            if d.is_integral() {
                x = x.round();
            }
            if !x.is_finite()
                || d.numeric_type() == crate::featurization::NumericType::Bool
                    && !(x == 0.0 || x == 1.0)
            {
                return None;
            }
            let mut s = t.to_vec();
            s[j] = x;
            Some(s)
        };
        let template = |label: Label| {
            data.vectors
                .iter()
                .rev()
                .filter(|v| v.label == label)
                .filter_map(|v| project(v, combo))
                .find(|t| free.iter().any(|&j| solve(t, j).is_some()))
        };
        let Some(t) = template(Label::Negative).or_else(|| template(Label::Positive)) else {
            continue;
        };
        for &j in &free {
            let Some(s) = solve(&t, j) else {
                continue;
            };
            if combo.len() >= 2 {
                for (g, &i) in combo.iter().enumerate() {
                    let d = &descriptors[i];
                    if d.writable && d.kind == FeatureKind::Int {
                        for delta in [1.0, -1.0] {
                            let mut nb = s.clone();
                            nb[g] += delta;
                            add(nb, &mut out);
                        }
                    }
                }
            }
            add(s, &mut out);
        }
    }
    out
}

/// Learn, query boundary samples, relearn until the
/// classifier stops changing or the iteration cap is hit.
#[allow(clippy::too_many_arguments)]
pub fn classify_with_sampling(
    descriptors: &[FeatureDescriptor],
    combo: &[usize],
    data: &mut Dataset,
    oracle: &mut dyn LabelingOracle,
    iteration_cap: usize,
    solver: &mut Solver,
    counters: &mut Counters,
) -> Result<SamplingOutcome, EngineError> {
    let mut history = Vec::new();
    let Some(mut current) = learn(data, combo, descriptors, solver, counters)? else {
        return Ok(SamplingOutcome {
            classifier: None,
            converged: false,
            history,
            iterations: 0,
        });
    };
    history.push(current.clone());
    let mut queried: HashSet<Vec<u64>> = HashSet::new();
    for iteration in 1..=iteration_cap {
        for s in boundary_samples(&current, descriptors, data) {
            if !queried.insert(s.iter().map(|x| x.to_bits()).collect()) {
                continue;
            }
            let assignments: Vec<(AccessPath, Value)> = combo
                .iter()
                .zip(&s)
                .filter_map(|(&i, &x)| {
                    descriptors[i]
                        .assignment(x)
                        .map(|v| (descriptors[i].path.clone(), v))
                })
                .collect();
            if assignments.is_empty() {
                continue;
            }
            for v in oracle.query(&assignments, Origin::Sampled)? {
                data.push(v);
            }
        }
        let Some(next) = learn(data, combo, descriptors, solver, counters)? else {
            return Ok(SamplingOutcome {
                classifier: None,
                converged: false,
                history,
                iterations: iteration,
            });
        };
        if same_classifier(&current, &next, descriptors, data) {
            return Ok(SamplingOutcome {
                classifier: Some(next),
                converged: true,
                history,
                iterations: iteration,
            });
        }
        history.push(next.clone());
        current = next;
    }
    Ok(SamplingOutcome {
        classifier: Some(current),
        converged: false,
        history,
        iterations: iteration_cap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub line: u32,
    pub ordinal: u32,
    pub position: Position,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub observed: usize,
    pub synthesized: usize,
    pub sampled: usize,
    pub points_tried: usize,
    pub combinations_tried: usize,
    pub oracle_queries: u64,
    pub learn_calls: u64,
    pub svm_calls: u64,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub point: PointReport,
    pub features: Vec<String>,
    pub predicate_pretty: String,
    pub clauses: Vec<ClauseReport>,
    pub rationalization_failed: Vec<usize>,
    pub narrative: String,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip)]
    pub observation_point: Option<ObservationPoint>,
    #[serde(skip)]
    pub classifier: Option<Classifier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResult {
    pub suite: String,
    pub points: Vec<PointReport>,
    pub explanation: Option<Explanation>,
    pub stats: Stats,
}

impl ExplainResult {
    pub fn text(&self) -> String {
        let mut out = format!("tests: {}\n", self.suite);
        match &self.explanation {
            Some(e) => {
                out.push_str(&format!("predicate: {}\n", e.predicate_pretty));
                out.push_str(&e.narrative);
                out.push('\n');
            }
            None => out.push_str("no explanation is identified\n"),
        }
        let s = &self.stats;
        out.push_str(&format!(
            "vectors: {} observed, {} synthesized, {} sampled; {} learn calls, {} solver calls, {} oracle queries\n",
            s.observed, s.synthesized, s.sampled, s.learn_calls, s.svm_calls, s.oracle_queries
        ));
        out
    }
}

fn report(p: ObservationPoint) -> PointReport {
    PointReport {
        line: p.anchor.line,
        ordinal: p.anchor.ordinal,
        position: p.position,
    }
}

fn binom(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Upper bound on learn calls: points × C(N+K−1, K) × (1 + iteration cap).
pub fn learn_call_bound(points: usize, n: usize, k: usize, iteration_cap: usize) -> u64 {
    (points as u64)
        .saturating_mul(binom((n + k - 1) as u64, k as u64))
        .saturating_mul(1 + iteration_cap as u64)
}

/// Given tests followed by `config.m` generated ones.
pub fn assemble_tests(
    program: &TypedProgram,
    given: &[TestCase],
    config: &Config,
) -> Vec<TestCase> {
    let mut tests = given.to_vec();
    for mut t in generate_tests(program, config.m, config.seed) {
        t.id = tests.len();
        tests.push(t);
    }
    tests
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub suite: SuiteResult,
    pub scores: SuspiciousnessMap,
    pub points: Vec<ObservationPoint>,
}

/// Runs the suite, slices the first failing run and ranks candidate points.
pub fn localize(
    program: &TypedProgram,
    tests: &[TestCase],
    config: &Config,
) -> Result<Localization, EngineError> {
    config.validate()?;
    let suite = run_suite(program, tests, &ExecOptions::default())?;
    let Some(&first) = suite.failed.first() else {
        return Err(EngineError::NoFailingTest);
    };
    let failing = &suite.runs[first];
    let criterion = failing
        .assertion_event
        .expect("failing runs stop at the assertion");
    let slice = dynamic_slice(&failing.trace, criterion);
    let scores = ochiai_scores(&suite, &slice)?;
    let points = candidate_points(
        program,
        &scores,
        failing,
        config.x_threshold,
        config.max_points,
    );
    Ok(Localization {
        suite,
        scores,
        points,
    })
}

/// The full search over a given suite plus `config.m` generated tests.
pub fn explain(
    program: &TypedProgram,
    given: &[TestCase],
    config: &Config,
) -> Result<ExplainResult, EngineError> {
    let start = Instant::now();
    let tests = assemble_tests(program, given, config);
    let Localization { suite, points, .. } = localize(program, &tests, config)?;
    if suite.passed.is_empty() {
        return Err(EngineError::NoPassingTest);
    }
    let mut result = ExplainResult {
        suite: suite.summary(),
        points: points.iter().map(|&p| report(p)).collect(),
        explanation: None,
        stats: Stats::default(),
    };
    let mut solver = Solver::new(config.solver_budget);
    let mut counters = Counters::default();
    for &point in &points {
        result.stats.points_tried += 1;
        let found = explain_at(
            program,
            &suite,
            point,
            config,
            &mut solver,
            &mut counters,
            &mut result.stats,
        )?;
        if found.is_some() {
            result.explanation = found;
            break;
        }
    }
    result.stats.learn_calls = counters.learn_calls;
    result.stats.svm_calls = counters.svm_calls;
    result.stats.wall_time = start.elapsed();
    Ok(result)
}

/// Labeled data and prioritized features of one observation point.
pub struct Session<'a> {
    pub point: ObservationPoint,
    pub descriptors: Vec<FeatureDescriptor>,
    pub data: Dataset,
    program: &'a TypedProgram,
    tests: Vec<&'a TestCase>,
    pub queries: u64,
}

impl<'a> Session<'a> {
    /// Captures the passing and failing states at `point` and builds the top
    /// `n` features. `None` when the states share no feature.
    pub fn open(
        program: &'a TypedProgram,
        suite: &'a SuiteResult,
        point: ObservationPoint,
        n: usize,
    ) -> Result<Option<Session<'a>>, EngineError> {
        let Some(&first) = suite.failed.first() else {
            return Err(EngineError::NoFailingTest);
        };
        let opts = ExecOptions {
            capture_at: [point].into(),
            ..Default::default()
        };
        let failing = execute(program, &suite.tests[first].args, &opts)?;
        let Some(fstate) = failing.captures.get(&point) else {
            return Ok(None);
        };
        let quick = ExecOptions {
            record_trace: false,
            ..opts
        };
        let mut ids: Vec<usize> = suite.failed.iter().chain(&suite.passed).copied().collect();
        ids.sort_unstable();
        let mut states = Vec::new();
        let mut tests = Vec::new();
        for i in ids {
            if !suite.runs[i].reached(&point) {
                continue;
            }
            tests.push(&suite.tests[i]);
            let run = execute(program, &suite.tests[i].args, &quick)?;
            if let (Some(label), Some(state)) = (label_of(run.verdict), run.captures.get(&point)) {
                states.push((state.clone(), label));
            }
        }
        let criterion = failing
            .assertion_event
            .expect("failing runs stop at the assertion");
        let events = slice_events(&failing.trace, criterion);
        let roots: BTreeSet<String> = relevant_variables_at(&failing, &events, point);
        let labeled: Vec<(&ProgramState, Label)> = states.iter().map(|(s, l)| (s, *l)).collect();
        let all = match extract_features(&labeled, &roots) {
            Ok((d, _)) => d,
            Err(FeatureError::NoCommonFeatures | FeatureError::MissingLabel) => return Ok(None),
        };
        let descriptors: Vec<FeatureDescriptor> = prioritize(&all, &failing, fstate, n)
            .into_iter()
            .map(|i| all[i].clone())
            .collect();
        let mut data = Dataset::default();
        for (s, label) in &states {
            data.push(FeatureVector {
                values: full_vector(s, &descriptors),
                label: *label,
                origin: Origin::Observed,
            });
        }
        Ok(Some(Session {
            point,
            descriptors,
            data,
            program,
            tests,
            queries: 0,
        }))
    }

    pub fn names(&self) -> Vec<String> {
        self.descriptors
            .iter()
            .map(|d| d.path.to_string())
            .collect()
    }

    pub fn index_of(&self, path: &str) -> Option<usize> {
        self.descriptors
            .iter()
            .position(|d| d.path.to_string() == path)
    }

    fn oracle(&self) -> ProgramOracle<'_> {
        ProgramOracle {
            program: self.program,
            tests: self.tests.clone(),
            point: self.point,
            descriptors: &self.descriptors,
            queries: 0,
        }
    }

    pub fn synthesize(
        &mut self,
        combo: &[usize],
        cap: usize,
        seed: u64,
    ) -> Result<usize, EngineError> {
        let mut data = std::mem::take(&mut self.data);
        let mut oracle = self.oracle();
        let r = synthesize_data(&self.descriptors, combo, &mut data, &mut oracle, cap, seed);
        self.queries += oracle.queries;
        self.data = data;
        r
    }

    pub fn sample(
        &mut self,
        combo: &[usize],
        iteration_cap: usize,
        solver: &mut Solver,
        counters: &mut Counters,
    ) -> Result<SamplingOutcome, EngineError> {
        let mut data = std::mem::take(&mut self.data);
        let mut oracle = self.oracle();
        let r = classify_with_sampling(
            &self.descriptors,
            combo,
            &mut data,
            &mut oracle,
            iteration_cap,
            solver,
            counters,
        );
        self.queries += oracle.queries;
        self.data = data;
        r
    }
}

fn explain_at(
    program: &TypedProgram,
    suite: &SuiteResult,
    point: ObservationPoint,
    config: &Config,
    solver: &mut Solver,
    counters: &mut Counters,
    stats: &mut Stats,
) -> Result<Option<Explanation>, EngineError> {
    let Some(mut session) = Session::open(program, suite, point, config.n)? else {
        return Ok(None);
    };
    let names = session.names();
    let mut found = None;
    for (ci, combo) in combinations(names.len(), config.k).into_iter().enumerate() {
        stats.combinations_tried += 1;
        let seed = config.seed ^ (ci as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        session.synthesize(&combo, config.synthesis_cap, seed)?;
        let outcome = session.sample(&combo, config.iteration_cap, solver, counters)?;
        let Some(clf) = outcome.classifier else {
            continue;
        };
        if !outcome.converged || clf.clauses.len() > config.max_clauses {
            continue;
        }
        let (pos, neg) = session.data.split(&combo);
        let simplified = simplify(&clf, &integral(&session.descriptors, &combo), &pos, &neg);
        let combo_names: Vec<String> = combo.iter().map(|&i| names[i].clone()).collect();
        let predicate = simplified.classifier.pretty(&combo_names);
        found = Some(Explanation {
            point: report(point),
            features: combo_names.clone(),
            narrative: format!("assertion failure occurs iff {predicate} is violated at {point}"),
            predicate_pretty: predicate,
            clauses: simplified.classifier.reports(&combo_names),
            rationalization_failed: simplified.rationalization_failed,
            converged: true,
            iterations: outcome.iterations,
            observation_point: Some(point),
            classifier: Some(simplified.classifier),
        });
        break;
    }
    stats.observed = session.data.count(Origin::Observed);
    stats.synthesized = session.data.count(Origin::Synthesized);
    stats.sampled = session.data.count(Origin::Sampled);
    stats.oracle_queries += session.queries;
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurization::AccessKey;
    use crate::minilang::compile;
    use crate::testgen::load_tests;

    const STU: &str = include_str!("../../../corpus/stu/stu.ml5");
    const STU_TESTS: &str = include_str!("../../../corpus/stu/stu.tests");

    /// Fails iff x < 33, one state per query.
    struct Threshold33 {
        queries: usize,
    }

    impl LabelingOracle for Threshold33 {
        fn query(
            &mut self,
            assignments: &[(AccessPath, Value)],
            origin: Origin,
        ) -> Result<Vec<FeatureVector>, EngineError> {
            self.queries += 1;
            let Value::Int(x) = assignments[0].1 else {
                panic!("int expected")
            };
            let label = if x < 33 {
                Label::Negative
            } else {
                Label::Positive
            };
            Ok(vec![FeatureVector {
                values: vec![x as f64],
                label,
                origin,
            }])
        }
    }

    fn x_descriptor() -> FeatureDescriptor {
        FeatureDescriptor {
            path: AccessPath::var("x"),
            kind: FeatureKind::Int,
            depth: 0,
            writable: true,
            key: AccessKey::Never,
            order: 0,
        }
    }

    #[test]
    fn one_dimensional_sampling_sequence() {
        let d = [x_descriptor()];
        let mut data = Dataset::default();
        for (x, label) in [(100.0, Label::Positive), (0.0, Label::Negative)] {
            data.push(FeatureVector {
                values: vec![x],
                label,
                origin: Origin::Observed,
            });
        }
        let mut oracle = Threshold33 { queries: 0 };
        let out = classify_with_sampling(
            &d,
            &[0],
            &mut data,
            &mut oracle,
            100,
            &mut Solver::default(),
            &mut Counters::default(),
        )
        .unwrap();
        assert!(out.converged);
        let seq: Vec<f64> = out.history.iter().map(|c| c.clauses[0].rhs).collect();
        assert_eq!(seq, [50.0, 25.0, 38.0, 32.0, 35.0, 34.0, 33.0]);
        assert_eq!(out.classifier.unwrap().clauses[0].rhs, 33.0);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let d = [x_descriptor()];
        let mut data = Dataset::default();
        for (x, label) in [(100.0, Label::Positive), (0.0, Label::Negative)] {
            data.push(FeatureVector {
                values: vec![x],
                label,
                origin: Origin::Observed,
            });
        }
        let out = classify_with_sampling(
            &d,
            &[0],
            &mut data,
            &mut Threshold33 { queries: 0 },
            2,
            &mut Solver::default(),
            &mut Counters::default(),
        )
        .unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
    }

    #[test]
    fn non_writable_combo_is_never_queried() {
        let mut d = x_descriptor();
        d.kind = FeatureKind::Length;
        d.writable = false;
        let mut data = Dataset::default();
        data.push(FeatureVector {
            values: vec![3.0],
            label: Label::Positive,
            origin: Origin::Observed,
        });
        let mut oracle = Threshold33 { queries: 0 };
        let n = synthesize_data(&[d], &[0], &mut data, &mut oracle, 256, 0).unwrap();
        assert_eq!((n, oracle.queries), (0, 0));
    }

    #[test]
    fn running_example_explanation() {
        let tp = compile(STU).unwrap();
        let tests = load_tests(STU_TESTS, &tp).unwrap();
        let r = explain(&tp, &tests, &Config::default()).unwrap();
        let e = r.explanation.expect("an explanation");
        assert_eq!(e.predicate_pretty, "max ≥ stus[2].score");
        assert_eq!((e.point.ordinal, e.point.line), (7, 22));
        assert_eq!(e.point.position, Position::Before);
        assert_eq!(
            e.narrative,
            "assertion failure occurs iff max ≥ stus[2].score is violated at before line 22"
        );
        assert!(r.stats.learn_calls <= learn_call_bound(r.stats.points_tried, 10, 3, 100));
    }

    #[test]
    fn missing_failing_and_passing_tests() {
        let tp = compile("entry fn f(x: int) { assert x > 0; }").unwrap();
        let pass = load_tests("[[1]]", &tp).unwrap();
        let fail = load_tests("[[0]]", &tp).unwrap();
        assert_eq!(
            explain(&tp, &pass, &Config::default()),
            Err(EngineError::NoFailingTest)
        );
        assert_eq!(
            explain(&tp, &fail, &Config::default()),
            Err(EngineError::NoPassingTest)
        );
    }

    #[test]
    fn config_validation() {
        let c = Config {
            k: 11,
            ..Config::default()
        };
        assert!(c.validate().is_err());
        assert_eq!(learn_call_bound(3, 10, 3, 100), 3 * 220 * 101);
    }
}
