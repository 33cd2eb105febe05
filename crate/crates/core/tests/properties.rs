use proptest::prelude::*;
use whyfail::interpreter::{execute, ExecOptions};
use whyfail::minilang::{compile, parse_program, print_program, Value};

fn int_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (-20i64..=20).prop_map(|v| v.to_string()),
        Just("a".to_string()),
        Just("b".to_string()),
        Just("abs(b)".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (
                inner.clone(),
                prop::sample::select(vec!["+", "-", "*", "/", "%"]),
                inner.clone(),
                any::<bool>()
            )
                .prop_map(|(l, op, r, paren)| if paren {
                    format!("({l} {op} {r})")
                } else {
                    format!("{l} {op} {r}")
                }),
            inner.prop_map(|e| format!("-({e})")),
        ]
    })
}

fn bool_expr() -> impl Strategy<Value = String> {
    let cmp = (
        int_expr(),
        prop::sample::select(vec!["<", "<=", ">", ">=", "==", "!="]),
        int_expr(),
    )
        .prop_map(|(l, op, r)| format!("{l} {op} {r}"));
    cmp.prop_recursive(2, 8, 2, |inner| {
        prop_oneof![
            (
                inner.clone(),
                prop::sample::select(vec!["&&", "||"]),
                inner.clone()
            )
                .prop_map(|(l, op, r)| format!("({l}) {op} ({r})")),
            inner.prop_map(|e| format!("!({e})")),
        ]
    })
}

fn program() -> impl Strategy<Value = String> {
    (int_expr(), int_expr(), bool_expr()).prop_map(|(x, y, cond)| {
        format!(
            "entry fn f(a: int, b: int) {{\n    let r: int = {x};\n    if ({cond}) {{\n        r = {y};\n    }}\n    assert r >= a;\n}}\n"
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn printing_is_a_fixed_point(src in program()) {
        let once = print_program(&parse_program(&src).unwrap());
        let twice = print_program(&parse_program(&once).unwrap());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn printing_preserves_behavior(src in program(), a in -50i64..=50, b in -50i64..=50) {
        let original = compile(&src).unwrap();
        let printed = compile(&print_program(original.program())).unwrap();
        let args = [Value::Int(a), Value::Int(b)];
        let x = execute(&original, &args, &ExecOptions::default()).unwrap();
        let y = execute(&printed, &args, &ExecOptions::default()).unwrap();
        prop_assert_eq!(x.verdict, y.verdict);
        prop_assert_eq!(x.exception, y.exception);
        prop_assert_eq!(x.coverage.len(), y.coverage.len());
    }
}

#[test]
fn corpus_programs_round_trip() {
    for src in [
        include_str!("../../../corpus/stu/stu.ml5"),
        include_str!("../../../corpus/array_max/array_max.ml5"),
        include_str!("../../../corpus/order_total/order_total.ml5"),
        include_str!("../../../corpus/rounding/rounding.ml5"),
        include_str!("../../../corpus/fraction/fraction.ml5"),
    ] {
        let p = parse_program(src).unwrap();
        let printed = print_program(&p);
        let again = print_program(&parse_program(&printed).unwrap());
        assert_eq!(printed, again);
        compile(&printed).unwrap();
    }
}
