mod common;

use stostl_milp::{solve, AffineExpr, Budget, MipModel, ObjSense, Sense, SolveStatus, VarId};

/// Solves every one of the 2^b binary fixings as a pure LP and keeps the best.
fn enumerate(m: &MipModel) -> Option<f64> {
    let bins = common::binary_ids(m);
    let minimize = m.objective().is_none_or(|o| o.sense == ObjSense::Minimize);
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << bins.len()) {
        let mut fixed = m.clone();
        for (k, &j) in bins.iter().enumerate() {
            let v = f64::from((mask >> k) & 1);
            fixed.tighten_bounds(VarId(j), v, v).unwrap();
        }
        let r = solve(&fixed, &Budget::default()).unwrap();
        if let SolveStatus::Feasible { objective, .. } = r.status {
            best = Some(match best {
                None => objective,
                Some(b) if minimize => b.min(objective),
                Some(b) => b.max(objective),
            });
        }
    }
    best
}

#[test]
fn random_mips_match_enumeration() {
    let mut feasible = 0;
    for seed in 0..50 {
        let m = common::random_mip(seed, true);
        let oracle = enumerate(&m);
        let r = solve(&m, &Budget::default()).unwrap();
        match (&r.status, oracle) {
            (SolveStatus::Feasible { values, objective }, Some(best)) => {
                feasible += 1;
                assert!(
                    (objective - best).abs() <= 1e-6 * best.abs().max(1.0),
                    "seed {seed}: {objective} vs {best}"
                );
                assert!(m.max_violation(values).0 <= 1e-6, "seed {seed}");
                for j in common::binary_ids(&m) {
                    assert!(values[j] == 0.0 || values[j] == 1.0);
                }
            }
            (SolveStatus::Infeasible, None) => {}
            (status, oracle) => panic!("seed {seed}: {status:?} vs oracle {oracle:?}"),
        }
    }
    assert!(feasible >= 10, "generator produced too few feasible cases: {feasible}");
}

#[test]
fn feasibility_queries_agree_with_enumeration() {
    for seed in 100..150 {
        let m = common::random_mip(seed, false);
        let oracle = enumerate(&m);
        let r = solve(&m, &Budget::default()).unwrap();
        assert_eq!(r.is_feasible(), oracle.is_some(), "seed {seed}");
        if let Some(values) = r.values() {
            assert!(m.max_violation(values).0 <= 1e-6);
        }
    }
}

#[test]
fn solver_is_deterministic() {
    for seed in 0..10 {
        let m = common::random_mip(seed, true);
        let a = solve(&m, &Budget::default()).unwrap();
        let b = solve(&m, &Budget::default()).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.stats.nodes, b.stats.nodes);
    }
}

#[test]
fn indicator_fixed_on_enforces_row() {
    let mut m = MipModel::new();
    let x = m.add_continuous("x", -10.0, 10.0).unwrap();
    let b = m.add_binary("b");
    let mut e = AffineExpr::var(x);
    e.add_constant(-2.0);
    let big_m = m.certified_big_m(&e);
    m.add_indicator("ind", b, &e, big_m).unwrap();
    m.tighten_bounds(b, 1.0, 1.0).unwrap();
    m.set_objective(ObjSense::Maximize, AffineExpr::var(x));
    match solve(&m, &Budget::default()).unwrap().status {
        SolveStatus::Feasible { objective, .. } => assert!((objective - 2.0).abs() < 1e-9),
        other => panic!("{other:?}"),
    }
}

#[test]
fn indicator_fixed_off_relaxes_row() {
    let mut m = MipModel::new();
    let b = m.add_binary("b");
    m.add_indicator("ind", b, &AffineExpr::constant(50.0), 100.0).unwrap();
    m.tighten_bounds(b, 0.0, 0.0).unwrap();
    assert!(solve(&m, &Budget::default()).unwrap().is_feasible());
}

#[test]
fn indicator_feasible_set_matches_case_analysis() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for _ in 0..40 {
        // affine = a*x + c with x in [-1, 1] and |affine| <= 80
        let a: f64 = rng.random_range(-40.0..40.0);
        let c: f64 = rng.random_range(-40.0..40.0);
        let x0: f64 = rng.random_range(-1.0..1.0);
        for bval in [0.0, 1.0] {
            let mut m = MipModel::new();
            let x = m.add_continuous("x", x0, x0).unwrap();
            let b = m.add_binary("b");
            let mut e = AffineExpr::default();
            e.add_term(x, a).add_constant(c);
            m.add_indicator("ind", b, &e, 100.0).unwrap();
            m.tighten_bounds(b, bval, bval).unwrap();
            let expected = bval == 0.0 || a * x0 + c <= 1e-9;
            let got = solve(&m, &Budget::default()).unwrap().is_feasible();
            assert_eq!(got, expected, "a={a} c={c} x={x0} b={bval}");
        }
    }
}

#[test]
fn rejects_nonpositive_big_m() {
    let mut m = MipModel::new();
    let b = m.add_binary("b");
    assert!(m.add_indicator("ind", b, &AffineExpr::constant(1.0), 0.0).is_err());
    assert!(m.add_indicator("ind", b, &AffineExpr::constant(1.0), -3.0).is_err());
}

#[test]
fn equality_rows_with_continuous_and_binaries() {
    // min x + 2y  s.t. x + y = 1.5, y <= 10 b, x <= 1, x,y >= 0
    let mut m = MipModel::new();
    let x = m.add_continuous("x", 0.0, 1.0).unwrap();
    let y = m.add_continuous("y", 0.0, 10.0).unwrap();
    let b = m.add_binary("b");
    let mut s = AffineExpr::var(x);
    s.add_term(y, 1.0);
    m.add_row("sum", &s, Sense::Eq, 1.5).unwrap();
    let mut link = AffineExpr::var(y);
    link.add_term(b, -10.0);
    m.add_row("link", &link, Sense::Le, 0.0).unwrap();
    let mut obj = AffineExpr::var(x);
    obj.add_term(y, 2.0);
    m.set_objective(ObjSense::Minimize, obj);
    let r = solve(&m, &Budget::default()).unwrap();
    let v = r.values().unwrap();
    assert!((v[0] - 1.0).abs() < 1e-9 && (v[1] - 0.5).abs() < 1e-9 && v[2] == 1.0);
}

#[test]
fn strictness_margins_are_not_absorbed() {
    // x <= 0 always, and x >= 1e-6 whenever b = 1 through a large big-M
    let mut m = MipModel::new();
    let x = m.add_continuous("x", -1e3, 1e3).unwrap();
    let b = m.add_binary("b");
    m.add_row("le", &AffineExpr::var(x), Sense::Le, 0.0).unwrap();
    let mut ge = AffineExpr::var(x).scaled(-1.0);
    ge.add_constant(1e-6);
    m.add_indicator("ge", b, &ge, 1e4).unwrap();
    let r = solve(&m, &Budget::default()).unwrap();
    match r.status {
        SolveStatus::Feasible { values, .. } => assert_eq!(values[b.0], 0.0, "{values:?}"),
        other => panic!("{other:?}"),
    }
    m.add_row("b_one", &AffineExpr::var(b), Sense::Ge, 1.0).unwrap();
    let r = solve(&m, &Budget::default()).unwrap();
    assert!(r.is_infeasible(), "{:?}", r.status);
}
