//! Stochastic model predictive control: problem validation, open-loop plans replayed against
//! sampled trajectories, and reproducible closed-loop runs.

use nalgebra::DVector;
use stostl::contracts::Contract;
use stostl::formula::{LinExpr, Signal};
use stostl::montecarlo::replay_formula;
use stostl::mpc::{run_many, run_receding_horizon, synthesize_open_loop, MpcProblem, Objective, PlanStatus};
use stostl::parser::{parse_formula, parse_project, Project};

fn battery() -> Project {
    let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../projects/battery.stsl");
    parse_project(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn minimize_charge() -> Objective {
    Objective {
        linear: LinExpr::term(Signal::Input(0), 1.0),
        abs_terms: Vec::new(),
    }
}

fn problem(p: &Project) -> MpcProblem {
    let c = p.contract("supply").unwrap().clone();
    let sys = p.system(&c.system).unwrap().clone();
    MpcProblem::new(sys, c, 6, minimize_charge()).unwrap()
}

#[test]
fn non_polyhedral_assumptions_are_rejected() {
    let p = battery();
    let sys = p.system("battery").unwrap().clone();
    let g = p.contract("supply").unwrap().guarantee.clone();
    for assume in ["P{ B <= 0.5 } >= 0.9", "B >= 0.2 || B <= 0.1", "F[1,2] B >= 0.2", "charge <= 0.5"] {
        let mut a = parse_formula(assume).unwrap();
        stostl::parser::resolve_signals(&mut a, &sys).unwrap();
        let c = Contract::new("c", "battery", a, g.clone());
        assert!(MpcProblem::new(sys.clone(), c, 6, minimize_charge()).is_err(), "{assume}");
    }
}

#[test]
fn invalid_costs_and_horizons_are_rejected() {
    let p = battery();
    let c = p.contract("supply").unwrap().clone();
    let sys = p.system("battery").unwrap().clone();
    let concave = Objective {
        linear: LinExpr::default(),
        abs_terms: vec![(-1.0, LinExpr::term(Signal::Input(0), 1.0))],
    };
    assert!(MpcProblem::new(sys.clone(), c.clone(), 6, concave).is_err());
    assert!(MpcProblem::new(sys, c, 3, minimize_charge()).is_err());
}

#[test]
fn open_loop_plan_meets_the_guarantee_on_samples() {
    let p = battery();
    let mpc = problem(&p);
    let x = DVector::from_element(1, 0.225);
    let plan = synthesize_open_loop(&mpc, &x, 0, None).unwrap();
    assert_eq!(plan.status, PlanStatus::Solved);
    assert_eq!(plan.inputs.len(), 6);
    for u in &plan.inputs {
        assert!((-1e-9..=1.0 + 1e-9).contains(&u[0]), "{u}");
    }
    let nnf = mpc.contract.guarantee.to_nnf();
    assert!(replay_formula(&mpc.system, &nnf, &x, &plan.inputs, 20_000, 5, 3.0, 1e-5).unwrap());
    // charging costs something, so the plan does not charge flat out
    let total: f64 = plan.inputs.iter().map(|u| u[0]).sum();
    assert!(total < 6.0 - 1e-6, "total charge {total}");
}

#[test]
fn states_outside_the_assumption_give_vacuous_plans() {
    let p = battery();
    let mpc = problem(&p);
    let plan = synthesize_open_loop(&mpc, &DVector::from_element(1, 0.1), 0, None).unwrap();
    assert_eq!(plan.status, PlanStatus::Vacuous);
    assert_eq!(plan.inputs.len(), 6);
}

#[test]
fn closed_loop_runs_are_reproducible() {
    let p = battery();
    let mpc = problem(&p);
    let a = run_receding_horizon(&mpc, 21, 8).unwrap();
    let b = run_receding_horizon(&mpc, 21, 8).unwrap();
    let c = run_receding_horizon(&mpc, 22, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.states, c.states);
    assert_eq!(a.states.len(), 9);
    assert_eq!(a.to_csv(&mpc.system), b.to_csv(&mpc.system));
    assert_eq!(a.to_csv(&mpc.system).lines().count(), 9);
}

#[test]
fn run_many_tallies_the_monitor_per_step() {
    let p = battery();
    let mpc = problem(&p);
    let mut monitor = parse_formula("B >= 0.3").unwrap();
    stostl::parser::resolve_signals(&mut monitor, &mpc.system).unwrap();
    let pred = monitor.atoms().remove(0);
    let mut seen = Vec::new();
    let summary = run_many(&mpc, 100, 12, 6, Some(&pred), |t| seen.push(t.seed)).unwrap();
    assert_eq!(seen, (100..112).collect::<Vec<_>>());
    assert_eq!(summary.monitor_rates.len(), 6);
    // recount the monitor from independently rerun traces
    for (step, rate) in summary.monitor_rates.iter().enumerate() {
        let hits = (100..112)
            .filter(|s| run_receding_horizon(&mpc, *s, 6).unwrap().states[step + 1][0] >= 0.3)
            .count();
        assert!((rate - hits as f64 / 12.0).abs() < 1e-12, "step {}", step + 1);
    }
}
