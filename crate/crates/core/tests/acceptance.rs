//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{
    Config as PropConfig, RngAlgorithm, TestCaseError, TestError, TestRng, TestRunner,
};
use whyfail::engine::{
    self, classify_with_sampling, explain, learn_call_bound, localize, Config, Counters, Dataset,
    EngineError, LabelingOracle, Session,
};
use whyfail::featurization::{
    AccessKey, FeatureDescriptor, FeatureKind, FeatureVector, Label, Origin,
};
use whyfail::interpreter::{
    dynamic_slice, execute, AccessPath, ExecOptions, ObservationPoint, Verdict,
};
use whyfail::learner::{max_margin_separator, simplify_clause, HalfSpace, Solver};
use whyfail::minilang::{compile, TypedProgram, Value};
use whyfail::testgen::{generate_tests, load_tests, run_suite, TestCase};

const STU: &str = include_str!("../../../corpus/stu/stu.ml5");
const STU_TESTS: &str = include_str!("../../../corpus/stu/stu.tests");

const CORPUS: [(&str, &str, &str); 5] = [
    ("stu", STU, STU_TESTS),
    (
        "array_max",
        include_str!("../../../corpus/array_max/array_max.ml5"),
        include_str!("../../../corpus/array_max/array_max.tests"),
    ),
    (
        "order_total",
        include_str!("../../../corpus/order_total/order_total.ml5"),
        include_str!("../../../corpus/order_total/order_total.tests"),
    ),
    (
        "rounding",
        include_str!("../../../corpus/rounding/rounding.ml5"),
        include_str!("../../../corpus/rounding/rounding.tests"),
    ),
    (
        "fraction",
        include_str!("../../../corpus/fraction/fraction.ml5"),
        include_str!("../../../corpus/fraction/fraction.tests"),
    ),
];

type Outcome = Result<String, String>;
type Named<F> = (&'static str, F);

fn stu() -> (TypedProgram, Vec<TestCase>) {
    let tp = compile(STU).unwrap();
    let tests = load_tests(STU_TESTS, &tp).unwrap();
    (tp, tests)
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let r = f()?;
    let t = start.elapsed();
    if t > limit {
        return Err(format!("{r}; took {t:?}, limit {limit:?}"));
    }
    Ok(format!("{r} ({} ms)", t.as_millis()))
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn ochiai_exactness() -> Outcome {
    let (tp, tests) = stu();
    let loc = localize(&tp, &tests, &Config::default()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for numbered in 1..=9u32 {
        let expected = if [1, 2, 4, 5].contains(&numbered) {
            0.5
        } else {
            1.0 / 3f64.sqrt()
        };
        let s = loc
            .scores
            .score(tp.location(numbered - 1).unwrap())
            .ok_or(format!("line {numbered} missing from the slice"))?;
        worst = worst.max((s - expected).abs());
    }
    check(worst <= 1e-9, format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:e}"))
}

fn candidate_points() -> Outcome {
    let (tp, tests) = stu();
    let loc = localize(&tp, &tests, &Config::default()).map_err(|e| e.to_string())?;
    let at = |l: u32| tp.location(l - 1).unwrap();
    let want: BTreeSet<ObservationPoint> = [
        ObservationPoint::before(at(8)),
        ObservationPoint::after(at(1)),
        ObservationPoint::before(at(5)),
    ]
    .into();
    let got: BTreeSet<ObservationPoint> = loc.points.iter().copied().collect();
    check(
        got == want && loc.points.len() == 3,
        format!("{:?}", loc.points),
    )?;
    Ok("{Before 8, After 1, Before 5}".into())
}

fn end_to_end() -> Outcome {
    let (tp, tests) = stu();
    let r = explain(&tp, &tests, &Config::default()).map_err(|e| e.to_string())?;
    let e = r.explanation.ok_or("no explanation")?;
    let point = e.observation_point.unwrap();
    check(
        point == ObservationPoint::before(tp.location(7).unwrap()),
        format!("point {point}"),
    )?;
    check(
        e.features == ["max", "stus[2].score"],
        format!("{:?}", e.features),
    )?;
    let c = e.classifier.as_ref().unwrap();
    check(
        c.clauses.len() == 1 && c.clauses[0].coeffs == [1.0, -1.0] && c.clauses[0].rhs == 0.0,
        format!("{c:?}"),
    )?;
    check(
        e.predicate_pretty == "max ≥ stus[2].score",
        e.predicate_pretty.clone(),
    )?;
    Ok(e.predicate_pretty)
}

/// Fails iff x < 33.
struct Below33;

impl LabelingOracle for Below33 {
    fn query(
        &mut self,
        assignments: &[(AccessPath, Value)],
        origin: Origin,
    ) -> Result<Vec<FeatureVector>, EngineError> {
        let Value::Int(x) = assignments[0].1 else {
            unreachable!()
        };
        Ok(vec![FeatureVector {
            values: vec![x as f64],
            label: if x < 33 {
                Label::Negative
            } else {
                Label::Positive
            },
            origin,
        }])
    }
}

fn one_dimensional_trace() -> Outcome {
    let d = [FeatureDescriptor {
        path: AccessPath::var("x"),
        kind: FeatureKind::Int,
        depth: 0,
        writable: true,
        key: AccessKey::Never,
        order: 0,
    }];
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
        &mut Below33,
        engine::DEFAULT_ITERATION_CAP,
        &mut Solver::default(),
        &mut Counters::default(),
    )
    .map_err(|e| e.to_string())?;
    let seq: Vec<f64> = out.history.iter().map(|c| c.clauses[0].rhs).collect();
    check(
        out.converged && seq == [50.0, 25.0, 38.0, 32.0, 35.0, 34.0, 33.0],
        format!("{seq:?}, converged {}", out.converged),
    )?;
    Ok(format!("{seq:?}"))
}

fn conflict_behavior() -> Outcome {
    let (tp, tests) = stu();
    let suite = run_suite(&tp, &tests, &ExecOptions::default()).map_err(|e| e.to_string())?;
    let point = ObservationPoint::before(tp.location(7).unwrap());
    let mut s = Session::open(&tp, &suite, point, 10)
        .map_err(|e| e.to_string())?
        .ok_or("no session")?;
    let max = s.index_of("max").ok_or("no max feature")?;
    let id = s.index_of("stus[0].ID").ok_or("no stus[0].ID feature")?;
    s.synthesize(&[max], 256, 0).map_err(|e| e.to_string())?;
    let conflicts = |s: &Session| {
        let (pos, neg) = s.data.split(&[max, id]);
        pos.into_iter()
            .filter(|p| neg.contains(p))
            .collect::<Vec<_>>()
    };
    check(conflicts(&s).is_empty(), "conflict present before sampling")?;
    let out = s
        .sample(
            &[max, id],
            10,
            &mut Solver::default(),
            &mut Counters::default(),
        )
        .map_err(|e| e.to_string())?;
    let after = conflicts(&s);
    check(
        out.classifier.is_none() && out.iterations <= 10 && !after.is_empty(),
        format!(
            "classifier {:?}, {} iterations, {} conflicts",
            out.classifier,
            out.iterations,
            after.len()
        ),
    )?;
    Ok(format!(
        "none after {} iteration(s); labeled both ways: {:?}",
        out.iterations, after
    ))
}

fn float_boundary() -> Outcome {
    let (_, src, tests) = CORPUS[3];
    let tp = compile(src).unwrap();
    let tests = load_tests(tests, &tp).unwrap();
    let r = explain(&tp, &tests, &Config::default()).map_err(|e| e.to_string())?;
    let e = r.explanation.ok_or("no explanation")?;
    let h = &e.classifier.as_ref().unwrap().clauses[0];
    check(h.coeffs == [-1.0], format!("{h:?}"))?;
    let c = -h.rhs;
    // walk down from the failing seed until the program passes
    let passes = |x: f64| {
        execute(&tp, &[Value::Float(x)], &ExecOptions::default())
            .unwrap()
            .verdict
            == Verdict::Pass
    };
    let mut x = 0.49999999999999994f64;
    while !passes(x) {
        x = f64::from_bits(x.to_bits() - 1);
    }
    let ulps = (c.to_bits() as i64 - x.to_bits() as i64).abs();
    check(ulps <= 1, format!("learned {c:e}, brute force {x:e}"))?;
    Ok(format!("x ≤ {c} ({ulps} ulp from brute force)"))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn margin_along(w: &[f64], p: &[Vec<f64>], n: &[Vec<f64>]) -> f64 {
    let norm = dot(w, w).sqrt();
    let lo = p.iter().map(|v| dot(w, v)).fold(f64::INFINITY, f64::min);
    let hi = n
        .iter()
        .map(|v| dot(w, v))
        .fold(f64::NEG_INFINITY, f64::max);
    (lo - hi) / (2.0 * norm)
}

fn subsets(n: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for i in 0..n {
        let grown: Vec<Vec<usize>> = out
            .iter()
            .filter(|s| s.len() < max)
            .map(|s| {
                let mut t = s.clone();
                t.push(i);
                t
            })
            .collect();
        out.extend(grown);
    }
    out.retain(|s| !s.is_empty());
    out
}

/// Optimal margin by enumerating support sets S⁺, S⁻ with |S⁺|+|S⁻| ≤ d+1:
/// the candidate normal is the shortest vector between their affine hulls,
/// i.e. pₐ − n_b minus its projection onto the within-set differences.
fn brute_force_margin(p: &[Vec<f64>], n: &[Vec<f64>]) -> f64 {
    let d = p[0].len();
    let mut best = f64::NEG_INFINITY;
    for sp in subsets(p.len(), d) {
        for sn in subsets(n.len(), d + 1 - sp.len()) {
            let (pa, nb) = (&p[sp[0]], &n[sn[0]]);
            let z0 = DVector::from_iterator(d, pa.iter().zip(nb).map(|(x, y)| x - y));
            let diffs: Vec<DVector<f64>> =
                sp[1..]
                    .iter()
                    .map(|&i| DVector::from_iterator(d, p[i].iter().zip(pa).map(|(x, y)| x - y)))
                    .chain(sn[1..].iter().map(|&j| {
                        DVector::from_iterator(d, n[j].iter().zip(nb).map(|(x, y)| x - y))
                    }))
                    .collect();
            let mut w = z0.clone();
            if !diffs.is_empty() {
                let svd = DMatrix::from_columns(&diffs).svd(true, false);
                let u = svd.u.unwrap();
                let top = svd.singular_values.max();
                for (i, &sigma) in svd.singular_values.iter().enumerate() {
                    if sigma > 1e-9 * top {
                        let col = u.column(i);
                        w -= col * col.dot(&z0);
                    }
                }
            }
            let w: Vec<f64> = w.iter().copied().collect();
            if dot(&w, &w) > 1e-18 {
                best = best.max(margin_along(&w, p, n));
            }
        }
    }
    best
}

fn separable_sets() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..=3, 2usize..=12)
        .prop_flat_map(|(d, count)| {
            (
                prop::collection::vec(-10i32..=10, d),
                -20i32..=20,
                prop::collection::vec(prop::collection::vec(-10i32..=10, d), count),
            )
        })
        .prop_filter_map("need both classes", |(w, c, pts)| {
            if w.iter().all(|&x| x == 0) {
                return None;
            }
            let (mut p, mut n) = (Vec::new(), Vec::new());
            for x in pts {
                let s: i32 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<i32>() - c;
                let v: Vec<f64> = x.iter().map(|&t| t as f64).collect();
                match s {
                    0 => {}
                    s if s > 0 => p.push(v),
                    _ => n.push(v),
                }
            }
            (!p.is_empty() && !n.is_empty()).then_some((p, n))
        })
}

fn run_prop<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Outcome {
    let config = PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    match runner.run(&strategy, test) {
        Ok(()) => Ok(format!("{cases} cases, zero violations")),
        Err(TestError::Fail(why, input)) => Err(format!("{why}; minimal failing input {input:?}")),
        Err(e) => Err(e.to_string()),
    }
}

fn separator_property() -> Outcome {
    run_prop(1000, separable_sets(), |(p, n)| {
        let h = max_margin_separator(&p, &n, Duration::from_secs(5))
            .unwrap()
            .ok_or_else(|| TestCaseError::fail("separable set rejected"))?;
        prop_assert!(p.iter().all(|v| h.accepts(v)) && n.iter().all(|v| !h.accepts(v)));
        let got = margin_along(&h.coeffs, &p, &n);
        let opt = brute_force_margin(&p, &n);
        prop_assert!(
            (got - opt).abs() <= 1e-6 * opt.abs().max(1e-9),
            "margin {got} vs optimum {opt}"
        );
        Ok(())
    })
}

fn box_datasets() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..=3)
        .prop_flat_map(|d| {
            (
                prop::collection::vec((-5i32..=0, 1i32..=5, any::<bool>(), any::<bool>()), d),
                prop::collection::vec(prop::collection::vec(-8i32..=8, d), 4..=30),
            )
        })
        .prop_filter_map("need both classes", |(faces, pts)| {
            let active: Vec<usize> = (0..faces.len()).collect();
            let inside = |x: &[i32]| {
                let mut n_active = 0;
                active.iter().all(|&i| {
                    let (lo, hi, use_lo, use_hi) = faces[i];
                    let ok_lo = !use_lo || n_active >= 3 || x[i] >= lo;
                    n_active += use_lo as usize;
                    let ok_hi = !use_hi || n_active >= 3 || x[i] <= hi;
                    n_active += use_hi as usize;
                    ok_lo && ok_hi
                })
            };
            let (mut p, mut n) = (Vec::new(), Vec::new());
            for x in pts {
                let v: Vec<f64> = x.iter().map(|&t| t as f64).collect();
                if inside(&x) {
                    if !p.contains(&v) {
                        p.push(v);
                    }
                } else if !n.contains(&v) {
                    n.push(v);
                }
            }
            (!p.is_empty() && !n.is_empty()).then_some((p, n))
        })
}

fn conjunctive_property() -> Outcome {
    run_prop(500, box_datasets(), |(p, n)| {
        let clauses = Solver::default()
            .conjunctive(&p, &n)
            .unwrap()
            .ok_or_else(|| TestCaseError::fail("no classifier for a box"))?;
        let accepts = |v: &Vec<f64>| clauses.iter().all(|h| h.accepts(v));
        prop_assert!(p.iter().all(accepts) && !n.iter().any(accepts));
        Ok(())
    })
}

/// A straight-line program over `a`, `b` and fresh locals, plus the
/// statements the assertion transitively depends on, computed by reaching
/// definitions.
fn straight_line() -> impl Strategy<Value = (String, BTreeSet<u32>)> {
    prop::collection::vec((0usize..3, 0usize..8, 0usize..8, any::<bool>()), 1..12).prop_map(
        |stmts| {
            let mut vars = vec!["a".to_string(), "b".to_string()];
            let mut def: Vec<Option<u32>> = vec![None, None];
            let mut deps: Vec<BTreeSet<u32>> = Vec::new();
            let mut body = String::new();
            for (k, (op, x, y, fresh)) in stmts.iter().enumerate() {
                let (ix, iy) = (x % vars.len(), y % vars.len());
                let op = ["+", "-", "*"][*op];
                let mut d: BTreeSet<u32> = BTreeSet::new();
                for i in [ix, iy] {
                    if let Some(s) = def[i] {
                        d.insert(s);
                        d.extend(deps[s as usize].iter().copied());
                    }
                }
                deps.push(d);
                let rhs = format!("{} {op} {}", vars[ix], vars[iy]);
                if *fresh || vars.len() == 2 {
                    let name = format!("v{k}");
                    body.push_str(&format!("    let {name}: int = {rhs};\n"));
                    vars.push(name);
                    def.push(Some(k as u32));
                } else {
                    let target = 2 + (x + y) % (vars.len() - 2);
                    body.push_str(&format!("    {} = {rhs};\n", vars[target]));
                    def[target] = Some(k as u32);
                }
            }
            let last = vars.len() - 1;
            let n = stmts.len() as u32;
            let mut want: BTreeSet<u32> = [n].into();
            if let Some(s) = def[last] {
                want.insert(s);
                want.extend(deps[s as usize].iter().copied());
            }
            let src = format!(
                "entry fn f(a: int, b: int) {{\n{body}    assert {} > 0;\n}}\n",
                vars[last]
            );
            (src, want)
        },
    )
}

fn slice_property() -> Outcome {
    run_prop(500, straight_line(), |(src, want)| {
        let tp = compile(&src).map_err(|e| TestCaseError::fail(format!("{e}\n{src}")))?;
        let run = execute(
            &tp,
            &[Value::Int(3), Value::Int(-7)],
            &ExecOptions::default(),
        )
        .unwrap();
        let criterion = run
            .assertion_event
            .ok_or_else(|| TestCaseError::fail("assertion not reached"))?;
        let got: BTreeSet<u32> = dynamic_slice(&run.trace, criterion)
            .iter()
            .map(|l| l.ordinal)
            .collect();
        prop_assert!(
            want.is_subset(&got),
            "missing {:?}\n{}",
            want.difference(&got).collect::<Vec<_>>(),
            src
        );
        prop_assert_eq!(got, want);
        Ok(())
    })
}

fn pipeline_fingerprint(seed: u64) -> String {
    let (_, src, tests) = CORPUS[seed as usize % CORPUS.len()];
    let tp = compile(src).unwrap();
    let given = load_tests(tests, &tp).unwrap();
    let config = Config {
        m: (seed % 7) as usize,
        seed,
        n: 5,
        k: 2,
        ..Config::default()
    };
    let generated = generate_tests(&tp, 20, seed);
    let suite = run_suite(&tp, &generated, &ExecOptions::default()).unwrap();
    let all = engine::assemble_tests(&tp, &given, &config);
    let loc = localize(&tp, &all, &config).map(|l| (l.scores, l.points));
    let expl = explain(&tp, &given, &config).map(|r| serde_json::to_string(&r).unwrap());
    format!(
        "{}\n{}\n{:?}\n{:?}",
        serde_json::to_string(&generated).unwrap(),
        serde_json::to_string(&suite).unwrap(),
        loc,
        expl
    )
}

fn determinism_property() -> Outcome {
    run_prop(50, any::<u64>(), |seed| {
        prop_assert_eq!(pipeline_fingerprint(seed), pipeline_fingerprint(seed));
        Ok(())
    })
}

fn simplify_property() -> Outcome {
    let clause = (1usize..=3).prop_flat_map(|d| {
        (
            prop::collection::vec(-5i64..=5, d),
            -12i64..=12,
            0u32..4,
            1i64..=60,
            1i64..=60,
        )
    });
    run_prop(500, clause, |(coeffs, rhs, frac, num, den)| {
        prop_assume!(coeffs.iter().any(|&c| c != 0));
        let scale = num as f64 / den as f64;
        let h = HalfSpace {
            coeffs: coeffs.iter().map(|&c| c as f64 * scale).collect(),
            rhs: (rhs as f64 + frac as f64 / 4.0) * scale,
        };
        let s = simplify_clause(&h, true).ok_or_else(|| TestCaseError::fail("not simplified"))?;
        let exact = |x: &[i64]| {
            let lhs: i64 = coeffs.iter().zip(x).map(|(c, v)| c * v).sum();
            4 * lhs >= 4 * rhs + frac as i64
        };
        let d = coeffs.len();
        let mut x = vec![-6i64; d];
        loop {
            let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            prop_assert_eq!(s.accepts(&xf), exact(&x), "{:?} at {:?}", s, x);
            let mut i = 0;
            while i < d && x[i] == 6 {
                x[i] = -6;
                i += 1;
            }
            if i == d {
                break;
            }
            x[i] += 1;
        }
        Ok(())
    })
}

fn property_suites() -> Outcome {
    let suites: [Named<fn() -> Outcome>; 5] = [
        ("separator", separator_property),
        ("conjunction", conjunctive_property),
        ("slice", slice_property),
        ("determinism", determinism_property),
        ("simplify", simplify_property),
    ];
    let parts = suites.map(|(name, f)| {
        let start = Instant::now();
        (
            name,
            f().map(|m| format!("{m} ({} ms)", start.elapsed().as_millis())),
        )
    });
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for (name, r) in parts {
        match r {
            Ok(m) => ok.push(format!("{name}: {m}")),
            Err(m) => bad.push(format!("{name}: {m}")),
        }
    }
    if bad.is_empty() {
        Ok(ok.join("; "))
    } else {
        Err(bad.join("; "))
    }
}

fn budget_bound() -> Outcome {
    let mut notes = Vec::new();
    for (name, src, tests) in CORPUS {
        let tp = compile(src).unwrap();
        let tests = load_tests(tests, &tp).unwrap();
        let config = Config::default();
        let r = explain(&tp, &tests, &config).map_err(|e| format!("{name}: {e}"))?;
        let bound = learn_call_bound(r.points.len(), config.n, config.k, config.iteration_cap);
        check(
            r.stats.learn_calls <= bound,
            format!("{name}: {} calls, bound {bound}", r.stats.learn_calls),
        )?;
        notes.push(format!("{name} {}/{bound}", r.stats.learn_calls));
    }
    Ok(notes.join(", "))
}

fn main() -> ExitCode {
    let criteria: [Named<Box<dyn FnOnce() -> Outcome>>; 8] = [
        (
            "1 ochiai exactness",
            Box::new(|| timed(Duration::from_secs(1), ochiai_exactness)),
        ),
        (
            "2 candidate points",
            Box::new(|| timed(Duration::from_secs(1), candidate_points)),
        ),
        (
            "3 end-to-end explanation",
            Box::new(|| timed(Duration::from_secs(30), end_to_end)),
        ),
        (
            "4 1-D convergence trace",
            Box::new(|| timed(Duration::from_secs(1), one_dimensional_trace)),
        ),
        ("5 conflict behavior", Box::new(conflict_behavior)),
        (
            "6 float boundary",
            Box::new(|| timed(Duration::from_secs(30), float_boundary)),
        ),
        ("7 property suites", Box::new(property_suites)),
        ("8 budget bound", Box::new(budget_bound)),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(msg) => println!("PASS  {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
