use std::path::{Path, PathBuf};

use geotomo::config::{derivative_check, sample_points, ConfigFile};
use geotomo::domain::DomainSpec;
use geotomo::expr::{parse, Expr, ExprError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn eval(text: &str, x: &[f64]) -> f64 {
    parse(text, x.len().max(2)).unwrap().evaluate(x).unwrap()
}

#[test]
fn examples() {
    assert_eq!(eval("4/(1 - (x1^2 + x2^2))^2", &[0.0, 0.0]), 4.0);
    assert_eq!(eval("x1*x2 + 1", &[2.0, 3.0]), 7.0);
    assert_eq!(eval("exp(0)", &[0.0, 0.0]), 1.0);
    match parse("sin(x1) *", 2) {
        Err(ExprError::Syntax {
            line,
            column,
            expected,
        }) => {
            assert_eq!((line, column), (1, 10));
            assert!(expected.iter().any(|e| e == "number"));
            assert!(expected.iter().any(|e| e == "("));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(
        parse("x3", 2),
        Err(ExprError::UnknownIdentifier {
            name: "x3".into(),
            column: 1
        })
    );
    let e = parse("1/(1 - x1)", 2).unwrap();
    assert!(matches!(
        e.evaluate(&[1.0, 0.0]),
        Err(ExprError::NonFinite { .. })
    ));
    let e = parse("log(x1 - 1) + 2", 2).unwrap();
    match e.evaluate(&[0.5, 0.0]) {
        Err(ExprError::NonFinite { subexpr }) => assert_eq!(subexpr, "log(x1 - 1)"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn diagnostics_carry_positions() {
    match parse("x1 +\n  * 2", 2) {
        Err(ExprError::Syntax { line, column, .. }) => assert_eq!((line, column), (2, 3)),
        other => panic!("{other:?}"),
    }
    match parse("(x1 + 2", 2) {
        Err(ExprError::Syntax {
            column, expected, ..
        }) => {
            assert_eq!(column, 8);
            assert!(expected.contains(&")".to_string()));
        }
        other => panic!("{other:?}"),
    }
    assert!(
        matches!(parse("foo(x1)", 2), Err(ExprError::UnknownIdentifier { name, .. }) if name == "foo")
    );
    assert!(matches!(
        parse("x0", 2),
        Err(ExprError::UnknownIdentifier { .. })
    ));
    assert!(matches!(
        parse("atan2(x1)", 2),
        Err(ExprError::Syntax { .. })
    ));
    assert!(matches!(
        parse("2 $ 3", 2),
        Err(ExprError::Syntax { column: 3, .. })
    ));
}

#[test]
fn precedence_and_associativity() {
    let z = [0.0, 0.0];
    assert_eq!(eval("2+3*4", &z), 14.0);
    assert_eq!(eval("-2^2", &z), -4.0);
    assert_eq!(eval("2^3^2", &z), 512.0);
    assert_eq!(eval("(2^3)^2", &z), 64.0);
    assert_eq!(eval("2^-1", &z), 0.5);
    assert_eq!(eval("-x1^2", &[3.0, 0.0]), -9.0);
    assert_eq!(eval("8/4/2", &z), 1.0);
    assert_eq!(eval("8-4-2", &z), 2.0);
    assert_eq!(eval("--3", &z), 3.0);
    assert_eq!(eval("2*-3", &z), -6.0);
    assert_eq!(eval("pow(2, 10) + atan2(0, 1)", &z), 1024.0);
    assert_eq!(eval("sqrt(16) + abs(-2) + 1.5e1", &z), 21.0);
    assert!((eval("pi", &z) - std::f64::consts::PI).abs() < 1e-15);
}

fn fd_rel(e: &Expr, d: &Expr, k: usize, x: &[f64]) -> f64 {
    let h = 1e-4;
    let at = |t: f64| {
        let mut y = x.to_vec();
        y[k] = t;
        e.eval(&y)
    };
    let fd = |h: f64| {
        (8.0 * (at(x[k] + h) - at(x[k] - h)) - (at(x[k] + 2.0 * h) - at(x[k] - 2.0 * h)))
            / (12.0 * h)
    };
    let approx = (16.0 * fd(0.5 * h) - fd(h)) / 15.0;
    let exact = d.eval(x);
    (exact - approx).abs() / exact.abs().max(1.0)
}

#[test]
fn derivative_examples() {
    let e = parse("x1^2", 2).unwrap();
    let d = e.differentiate(0);
    assert_eq!(d.to_string(), "2 * x1");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        assert!(fd_rel(&e, &d, 0, &x) < 1e-7);
    }
    assert_eq!(
        parse("sin(x1)", 2).unwrap().differentiate(1),
        Expr::Num(0.0)
    );

    // conformal factor of the Poincare disk
    let e = parse("4/(1 - (x1^2 + x2^2))^2", 2).unwrap();
    let d = e.differentiate(0);
    let mut checked = 0;
    while checked < 100 {
        let x = [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)];
        if x[0] * x[0] + x[1] * x[1] > 0.8 {
            continue;
        }
        assert!(fd_rel(&e, &d, 0, &x) < 1e-7, "{x:?}");
        checked += 1;
    }
}

#[test]
fn shipped_configs_differentiate_consistently() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files: Vec<PathBuf> = Vec::new();
    let mut stack = vec![root];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    assert!(files.len() >= 10);
    let mut total = 0;
    for path in &files {
        let file = ConfigFile::load(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let domain = file.domain().unwrap_or_else(|| DomainSpec::disk(0.5));
        let pts = sample_points(&domain, 30, 9);
        for lab in file.expressions() {
            let e = lab.parse().unwrap();
            let err = derivative_check(&e, &pts);
            assert!(err < 1e-7, "{} {}: {err:e}", path.display(), lab.label);
            total += 1;
        }
    }
    assert!(total > 30, "{total}");
}

fn leaf() -> impl Strategy<Value = String> {
    prop_oneof![
        (0u32..100).prop_map(|v| v.to_string()),
        (0u32..1000).prop_map(|v| format!("{}", v as f64 / 8.0)),
        Just("x1".to_string()),
        Just("x2".to_string()),
        Just("pi".to_string()),
    ]
}

fn source() -> impl Strategy<Value = String> {
    leaf().prop_recursive(5, 48, 3, |inner| {
        prop_oneof![
            (
                inner.clone(),
                inner.clone(),
                prop::sample::select(vec!["+", "-", "*", "/", "^"])
            )
                .prop_map(|(a, b, op)| format!("{a} {op} {b}")),
            inner.clone().prop_map(|a| format!("-{a}")),
            inner.clone().prop_map(|a| format!("({a})")),
            (
                inner.clone(),
                prop::sample::select(vec!["sin", "cos", "exp", "sqrt", "abs", "log", "tan"])
            )
                .prop_map(|(a, f)| format!("{f}({a})")),
            (inner.clone(), inner).prop_map(|(a, b)| format!("atan2({a}, {b})")),
        ]
    })
}

fn same(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a == b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn print_then_parse_is_identity(text in source()) {
        let e = parse(&text, 2).unwrap();
        let printed = e.to_string();
        let again = parse(&printed, 2).unwrap();
        prop_assert_eq!(&again, &e, "{} -> {}", text, printed);
        prop_assert_eq!(again.to_string(), printed);
    }

    #[test]
    fn whitespace_is_insignificant(text in source()) {
        let squeezed: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        prop_assert_eq!(parse(&squeezed, 2).unwrap(), parse(&text, 2).unwrap());
    }

    #[test]
    fn evaluation_is_pure(text in source(), x1 in -2.0f64..2.0, x2 in -2.0f64..2.0) {
        let e = parse(&text, 2).unwrap();
        let x = [x1, x2];
        prop_assert!(same(e.eval(&x), e.eval(&x)));
        match e.evaluate(&x) {
            Ok(v) => prop_assert!(same(v, e.eval(&x))),
            // an inner infinity may still fold to a finite value
            Err(ExprError::NonFinite { .. }) => {}
            Err(other) => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn unary_minus_yields_to_power(a in 1u32..9, b in 1u32..4) {
        let v = eval(&format!("-{a}^{b}"), &[0.0, 0.0]);
        prop_assert_eq!(v, -((a as f64).powi(b as i32)));
    }

    #[test]
    fn power_is_right_associative(a in 1u32..4, b in 1u32..3, c in 1u32..3) {
        let v = eval(&format!("{a}^{b}^{c}"), &[0.0, 0.0]);
        prop_assert_eq!(v, (a as f64).powf((b as f64).powf(c as f64)));
    }

    #[test]
    fn symbolic_derivative_matches_differences(
        c in prop::collection::vec(-2.0f64..2.0, 4),
        x1 in -0.8f64..0.8,
        x2 in -0.8f64..0.8,
    ) {
        let text = format!(
            "{}*sin(x1*x2) + {}*exp(x1)/(2 + x2^2) + {}*sqrt(1 + x1^2)*cos(x2) + {}*log(3 + x1 - x2)^2",
            c[0], c[1], c[2], c[3]
        );
        let e = parse(&text, 2).unwrap();
        for k in 0..2 {
            let d = e.differentiate(k);
            prop_assert!(fd_rel(&e, &d, k, &[x1, x2]) < 1e-7);
        }
    }
}
