//! Project and formula parsing: round trips through the printers and positioned diagnostics.

use std::path::PathBuf;

use proptest::prelude::*;
use stostl::formula::{ChancePredicate, Formula, LinExpr, Signal};
use stostl::parser::{parse_formula, parse_project, print_project};

fn bundled(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../projects").join(name);
    std::fs::read_to_string(path).expect("bundled project")
}

#[test]
fn bundled_projects_round_trip() {
    for name in ["example1.stsl", "refinement.stsl", "battery.stsl"] {
        let p = parse_project(&bundled(name)).unwrap_or_else(|e| panic!("{name}:{e}"));
        let printed = print_project(&p);
        let again = parse_project(&printed).unwrap_or_else(|e| panic!("{name} reprinted:{e}\n{printed}"));
        assert_eq!(p, again, "{name}");
        assert_eq!(printed, print_project(&again), "{name}");
    }
}

fn diagnostic(text: &str) -> (usize, usize, String) {
    let e = parse_project(text).expect_err("project should be rejected");
    (e.line, e.col, e.message)
}

const SYSTEM: &str = "system s {\n  class: linear_gaussian;\n  nx: 1;\n  nu: 1;\n  A: [[1]];\n  B: [[1]];\n  noise_B: [[[0.1]]];\n  w_cov: [[1]];\n  x0: [0];\n  u_bounds: [[-1, 1]];\n}\n";

#[test]
fn dimension_mismatch_is_positioned() {
    let text = SYSTEM.replace("A: [[1]];", "A: [[1, 0]];");
    let (line, _, message) = diagnostic(&text);
    assert_eq!(line, 5, "{message}");
}

#[test]
fn undeclared_system_is_positioned() {
    let text = format!("{SYSTEM}contract C over missing {{\n  assume: true;\n  guarantee: x1 <= 1;\n}}\n");
    let (line, col, message) = diagnostic(&text);
    assert_eq!(line, 12, "{message}");
    assert!(col > 1, "{message}");
    assert!(message.contains("missing"), "{message}");
}

#[test]
fn undeclared_contract_in_task_is_positioned() {
    let text = format!("{SYSTEM}task consistency C9;\n");
    let (line, _, message) = diagnostic(&text);
    assert_eq!(line, 12, "{message}");
    assert!(message.contains("C9"), "{message}");
}

#[test]
fn unknown_signal_is_rejected() {
    let text = format!("{SYSTEM}contract C over s {{\n  assume: true;\n  guarantee: x3 <= 1;\n}}\n");
    let (line, _, message) = diagnostic(&text);
    assert_eq!(line, 14, "{message}");
}

#[test]
fn duplicate_names_are_rejected() {
    let text = format!("{SYSTEM}{SYSTEM}");
    let (line, _, message) = diagnostic(&text);
    assert_eq!(line, 12, "{message}");
    assert!(message.contains('s'), "{message}");
}

#[test]
fn formula_syntax_errors_carry_columns() {
    let e = parse_formula("x1 <= 1 && (x2 >= ").expect_err("incomplete formula");
    assert_eq!(e.line, 1);
    assert!(e.col >= 12, "{e}");
    assert!(parse_formula("G[3,1] x1 <= 0").is_err());
}

fn arb_expr() -> impl Strategy<Value = LinExpr> {
    (
        -20i32..20,
        proptest::collection::vec((0usize..3, -9i32..10), 1..3),
        proptest::option::of(-9i32..10),
    )
        .prop_map(|(c, terms, u)| {
            let mut e = LinExpr::constant(c as f64 / 4.0);
            for (i, coef) in terms {
                if coef != 0 {
                    e.add(&LinExpr::term(Signal::State(i), coef as f64 / 2.0), 1.0);
                }
            }
            if let Some(coef) = u.filter(|c| *c != 0) {
                e.add(&LinExpr::term(Signal::Input(0), coef as f64), 1.0);
            }
            e
        })
}

fn arb_atom() -> impl Strategy<Value = Formula> {
    (arb_expr(), proptest::option::of(1u32..20)).prop_map(|(mu, p)| match p {
        Some(p) => Formula::atom(ChancePredicate::chance(mu, p as f64 / 20.0)),
        None => Formula::atom(ChancePredicate::deterministic(mu)),
    })
}

fn arb_formula() -> impl Strategy<Value = Formula> {
    arb_atom().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Formula::not),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::or(a, b)),
            (0u32..3, 0u32..3, inner.clone()).prop_map(|(lo, w, f)| Formula::globally(lo, lo + w, f)),
            (0u32..3, 0u32..3, inner.clone()).prop_map(|(lo, w, f)| Formula::eventually(lo, lo + w, f)),
            (0u32..3, 0u32..3, inner.clone(), inner).prop_map(|(lo, w, a, b)| Formula::until(lo, lo + w, a, b)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn formula_display_round_trips(f in arb_formula()) {
        let text = f.to_string();
        let parsed = parse_formula(&text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert_eq!(parsed.to_string(), text);
        prop_assert_eq!(parsed.horizon(), f.horizon());
    }

    #[test]
    fn contract_formulas_round_trip_through_projects(a in arb_formula(), g in arb_formula()) {
        let text = format!(
            "system s {{\n  class: linear_gaussian;\n  nx: 3;\n  nu: 1;\n  A: [[1, 0, 0], [0, 1, 0], [0, 0, 1]];\n  B: [[1], [0], [0]];\n  noise_B: [[[0.1], [0], [0]]];\n  w_cov: [[1]];\n  x0: [0, 0, 0];\n  u_bounds: [[-1, 1]];\n}}\ncontract C over s {{\n  assume: {a};\n  guarantee: {g};\n}}\ntask consistency C;\n"
        );
        let p = parse_project(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        let printed = print_project(&p);
        let again = parse_project(&printed).map_err(|e| TestCaseError::fail(format!("{e}\n{printed}")))?;
        prop_assert_eq!(&p, &again);
    }
}
