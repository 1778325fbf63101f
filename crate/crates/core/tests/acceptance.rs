//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero when any
//! criterion fails. Pass a substring such as `c3` to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};
use stostl::chance::{lambda_pair, ApproxLevel, Layout};
use stostl::contracts::{check_compatibility, check_consistency, check_refinement, CheckConfig, Outcome};
use stostl::encoder::{encode, EncodeOptions};
use stostl::formula::{ChancePredicate, Formula, LinExpr, Signal};
use stostl::models::{Dynamics, InitialState, LinearGaussian, MarkovJump, MeasurementNoise, Mode, Schedule, SystemModel};
use stostl::montecarlo::replay_formula;
use stostl::mpc::{run_many, MpcProblem};
use stostl::parser::{parse_project, Expectation, Project, TaskKind};
use stostl::runner::{run_project, RunConfig};
use stostl_milp::{solve, AffineExpr, Budget, MipModel, ObjSense, Sense, SolveStatus, VarKind};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn projects_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../projects")
}

fn load(name: &str) -> Result<Project, String> {
    let path = projects_dir().join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_project(&text).map_err(|e| format!("{name}:{e}"))
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// ---------------------------------------------------------------------------------------
// 1. Example 1: compatible and consistent

fn example_one() -> Check {
    let start = Instant::now();
    let p = load("example1.stsl")?;
    let c = p.contract("C1").ok_or("missing C1")?;
    let sys = p.system(&c.system).ok_or("missing system")?;
    let cfg = CheckConfig::default();
    let compat = check_compatibility(sys, c, &cfg).map_err(|e| e.to_string())?;
    let consist = check_consistency(sys, c, &cfg).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(compat.outcome == Outcome::Holds, || format!("compatibility is {}", compat.outcome))?;
    ensure(consist.outcome == Outcome::Holds, || format!("consistency is {}", consist.outcome))?;
    ensure(took < Duration::from_secs(5), || format!("took {}", secs(took)))?;
    Ok(format!("compatible=Holds consistent=Holds in {}", secs(took)))
}

// ---------------------------------------------------------------------------------------
// 2. Refinement C2 <= C1

fn refinement_pair() -> Check {
    let start = Instant::now();
    let p = load("refinement.stsl")?;
    let c1 = p.contract("C1").ok_or("missing C1")?;
    let c2 = p.contract("C2").ok_or("missing C2")?;
    let sys = p.system(&c1.system).ok_or("missing system")?;
    let v = check_refinement(sys, c2, c1, &CheckConfig::default()).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(v.outcome == Outcome::Holds, || format!("refinement is {}", v.outcome))?;
    ensure(took < Duration::from_secs(10), || format!("took {}", secs(took)))?;
    Ok(format!("C2 refines C1: Holds in {} ({} solver calls)", secs(took), v.attempts.len()))
}

// ---------------------------------------------------------------------------------------
// 3. Mean and standard deviation of mu(z_k) against direct simulation

const MOMENT_SAMPLES: usize = 1_000_000;
const MOMENT_REL_TOL: f64 = 0.01;
const Z99: f64 = 2.576;

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-s..s))
}

fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, s: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-s..s))
}

fn random_cov(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let l = uniform_matrix(rng, n, n, 1.0);
    &l * l.transpose() + DMatrix::identity(n, n) * 0.1
}

/// Fixed-size direct simulator of a linear-Gaussian system, independent of the encoder.
struct DirectSampler {
    nx: usize,
    nw: usize,
    a: [[f64; 4]; 4],
    /// Per step: drift `Bm u + zm + sum_l wm_l (Bn_l u + zn_l)` and noise gains.
    drift: Vec<[f64; 4]>,
    gains: Vec<[[f64; 2]; 4]>,
    chol: Vec<[[f64; 2]; 2]>,
    x0: [f64; 4],
}

impl DirectSampler {
    fn new(lg: &LinearGaussian, x0: &DVector<f64>, inputs: &[DVector<f64>], k: usize) -> Self {
        let nx = x0.len();
        let nw = lg.b_noise.len();
        let mut a = [[0.0; 4]; 4];
        for i in 0..nx {
            for j in 0..nx {
                a[i][j] = lg.a[(i, j)];
            }
        }
        let mut drift = Vec::new();
        let mut gains = Vec::new();
        let mut chol = Vec::new();
        for (t, u) in inputs.iter().enumerate().take(k) {
            let base = lg.b_mean.at(t) * u + lg.zeta_mean.at(t);
            let mut g = [[0.0; 2]; 4];
            let mut d = [0.0; 4];
            for i in 0..nx {
                d[i] = base[i];
            }
            for l in 0..nw {
                let col = &lg.b_noise[l] * u + &lg.zeta_noise[l];
                for i in 0..nx {
                    g[i][l] = col[i];
                    d[i] += lg.w_mean.at(t)[l] * col[i];
                }
            }
            let c = lg.w_cov.at(t).clone().cholesky().expect("positive definite").l();
            let mut cl = [[0.0; 2]; 2];
            for i in 0..nw {
                for j in 0..nw {
                    cl[i][j] = c[(i, j)];
                }
            }
            drift.push(d);
            gains.push(g);
            chol.push(cl);
        }
        let mut x = [0.0; 4];
        for i in 0..nx {
            x[i] = x0[i];
        }
        Self {
            nx,
            nw,
            a,
            drift,
            gains,
            chol,
            x0: x,
        }
    }

    fn state(&self, rng: &mut ChaCha8Rng) -> [f64; 4] {
        let mut x = self.x0;
        for t in 0..self.drift.len() {
            let mut z = [0.0; 2];
            for zi in z.iter_mut().take(self.nw) {
                *zi = rng.sample(StandardNormal);
            }
            let mut w = [0.0; 2];
            for i in 0..self.nw {
                for j in 0..=i {
                    w[i] += self.chol[t][i][j] * z[j];
                }
            }
            let mut next = self.drift[t];
            for i in 0..self.nx {
                for j in 0..self.nx {
                    next[i] += self.a[i][j] * x[j];
                }
                for l in 0..self.nw {
                    next[i] += self.gains[t][i][l] * w[l];
                }
            }
            x = next;
        }
        x
    }
}

fn predicate_moments() -> Check {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    let mut boundary_worst: f64 = 0.0;
    let mut pairs = 0;
    for inst in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3_000 + inst);
        let nx = rng.random_range(1..=4);
        let nu = rng.random_range(1..=2);
        let nw = rng.random_range(1..=2);
        let k = rng.random_range(1..=4);
        let varying = rng.random_bool(0.5);
        let steps = if varying { k + 1 } else { 1 };
        let lg = LinearGaussian {
            a: uniform_matrix(&mut rng, nx, nx, 0.9),
            b_mean: Schedule((0..steps).map(|_| uniform_matrix(&mut rng, nx, nu, 1.0)).collect()),
            zeta_mean: Schedule((0..steps).map(|_| uniform_vector(&mut rng, nx, 0.5)).collect()),
            b_noise: (0..nw).map(|_| uniform_matrix(&mut rng, nx, nu, 0.5)).collect(),
            zeta_noise: (0..nw).map(|_| uniform_vector(&mut rng, nx, 0.3)).collect(),
            w_mean: Schedule((0..steps).map(|_| uniform_vector(&mut rng, nw, 0.3)).collect()),
            w_cov: Schedule((0..steps).map(|_| random_cov(&mut rng, nw)).collect()),
        };
        let x0 = uniform_vector(&mut rng, nx, 1.0);
        let a = uniform_vector(&mut rng, nx, 1.0);
        let b = uniform_vector(&mut rng, nu, 1.0);
        let layout = Layout { nx, nu, steps: k + 1 };
        let pair = lambda_pair(&lg, &layout, &a, &b, 0.0, k).map_err(|e| e.to_string())?;
        for trial in 0..10u64 {
            let inputs: Vec<DVector<f64>> = (0..=k).map(|_| uniform_vector(&mut rng, nu, 1.0)).collect();
            let mut d: Vec<f64> = x0.iter().copied().collect();
            for u in &inputs {
                d.extend(u.iter());
            }
            let stacked: Vec<f64> = d[nx..nx + k * nu].to_vec();
            let lambda2 = pair.std_dev(&stacked);
            let raw_mean = pair.mean.eval(&d);
            // shift the constant so the mean is at least as large as the spread
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let c = sign * rng.random_range(1.0..2.0) * lambda2 - raw_mean;
            let lambda1 = raw_mean + c;
            let sampler = DirectSampler::new(&lg, &x0, &inputs, k);
            let input_term = b.dot(&inputs[k]) + c;
            let p_boundary = 0.1 * rng.random_range(1..=9) as f64;
            let boundary_shift = -normal.inverse_cdf(p_boundary) * lambda2 - lambda1;
            let mut srng = ChaCha8Rng::seed_from_u64(90_000 + inst * 100 + trial);
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..MOMENT_SAMPLES {
                let x = sampler.state(&mut srng);
                let mut v = input_term;
                for i in 0..nx {
                    v += a[i] * x[i];
                }
                sum += v;
                sq += v * v;
            }
            let n = MOMENT_SAMPLES as f64;
            let mean = sum / n;
            let std = ((sq / n - mean * mean) * n / (n - 1.0)).max(0.0).sqrt();
            let rel_mean = (mean - lambda1).abs() / lambda1.abs();
            let rel_std = (std - lambda2).abs() / lambda2;
            worst_mean = worst_mean.max(rel_mean);
            worst_std = worst_std.max(rel_std);
            ensure(rel_mean <= MOMENT_REL_TOL, || {
                format!("instance {inst} trial {trial}: mean {mean} vs lambda1 {lambda1}")
            })?;
            ensure(rel_std <= MOMENT_REL_TOL, || {
                format!("instance {inst} trial {trial}: std {std} vs lambda2 {lambda2}")
            })?;
            if trial == 0 {
                // the boundary estimate draws its own samples, independent of the moment check
                let mut brng = ChaCha8Rng::seed_from_u64(190_000 + inst);
                let mut hits = 0usize;
                for _ in 0..MOMENT_SAMPLES {
                    let x = sampler.state(&mut brng);
                    let mut v = input_term + boundary_shift;
                    for i in 0..nx {
                        v += a[i] * x[i];
                    }
                    if v <= 0.0 {
                        hits += 1;
                    }
                }
                let p_hat = hits as f64 / n;
                let half = Z99 * (p_boundary * (1.0 - p_boundary) / n).sqrt();
                boundary_worst = boundary_worst.max((p_hat - p_boundary).abs() / half);
                ensure((p_hat - p_boundary).abs() <= half, || {
                    format!("instance {inst}: boundary estimate {p_hat} outside {p_boundary} +/- {half}")
                })?;
            }
            pairs += 1;
        }
    }
    Ok(format!(
        "{pairs} pairs, worst relative error mean {worst_mean:.2e} std {worst_std:.2e}; boundary worst {boundary_worst:.2} half-widths"
    ))
}

// ---------------------------------------------------------------------------------------
// 4. Inner/outer sandwich over random formulas

const SANDWICH_CASES: u64 = 200;
const REPLAY_SAMPLES: usize = 20_000;
const REPLAY_SIGMAS: f64 = 3.0;
const REPLAY_TOL: f64 = 1e-5;

fn random_system(rng: &mut ChaCha8Rng, class: usize) -> SystemModel {
    let nx = rng.random_range(1..=2);
    let nu = rng.random_range(1..=2);
    let dynamics = match class {
        0 => {
            let nw = rng.random_range(1..=2);
            Dynamics::LinearGaussian(LinearGaussian {
                a: uniform_matrix(rng, nx, nx, 1.0),
                b_mean: Schedule::constant(uniform_matrix(rng, nx, nu, 1.0)),
                zeta_mean: Schedule::constant(uniform_vector(rng, nx, 0.5)),
                b_noise: (0..nw).map(|_| uniform_matrix(rng, nx, nu, 0.4)).collect(),
                zeta_noise: (0..nw).map(|_| uniform_vector(rng, nx, 0.3)).collect(),
                w_mean: Schedule::constant(DVector::zeros(nw)),
                w_cov: Schedule::constant(random_cov(rng, nw)),
            })
        }
        1 => {
            let modes = (0..2)
                .map(|_| Mode {
                    a: uniform_matrix(rng, nx, nx, 1.0),
                    b: uniform_matrix(rng, nx, nu, 1.0),
                    zeta: uniform_vector(rng, nx, 0.5),
                })
                .collect();
            let q: f64 = rng.random_range(0.1..0.9);
            let r: f64 = rng.random_range(0.1..0.9);
            let s: f64 = rng.random_range(0.1..0.9);
            Dynamics::MarkovJump(MarkovJump {
                modes,
                initial: DVector::from_vec(vec![q, 1.0 - q]),
                transition: DMatrix::from_row_slice(2, 2, &[r, 1.0 - r, 1.0 - s, s]),
            })
        }
        _ => Dynamics::MeasurementNoise(MeasurementNoise {
            a: uniform_matrix(rng, nx, nx, 1.0),
            b: uniform_matrix(rng, nx, nu, 1.0),
            w_mean: Schedule::constant(uniform_vector(rng, nx + nu, 0.5)),
            w_cov: Schedule::constant(random_cov(rng, nx + nu) * 0.2),
        }),
    };
    let x0 = if rng.random_bool(0.5) {
        InitialState::Fixed(uniform_vector(rng, nx, 1.0))
    } else {
        InitialState::Free {
            lower: DVector::from_element(nx, -2.0),
            upper: DVector::from_element(nx, 2.0),
        }
    };
    let sys = SystemModel {
        name: format!("random{class}"),
        nx,
        nu,
        dynamics,
        x0,
        u_bounds: vec![(-2.0, 2.0); nu],
        state_names: Vec::new(),
        input_names: Vec::new(),
    };
    sys.validate().expect("random system is valid");
    sys
}

fn random_atom(rng: &mut ChaCha8Rng, sys: &SystemModel) -> Formula {
    let mut mu = LinExpr::constant(rng.random_range(-1.5..1.5));
    for i in 0..sys.nx {
        if rng.random_bool(0.7) {
            mu.add(&LinExpr::term(Signal::State(i), rng.random_range(-1.0..1.0)), 1.0);
        }
    }
    for i in 0..sys.nu {
        if rng.random_bool(0.5) {
            mu.add(&LinExpr::term(Signal::Input(i), rng.random_range(-1.0..1.0)), 1.0);
        }
    }
    if sys.class_name() == "measurement_noise" && rng.random_bool(0.6) {
        mu.add(&LinExpr::term(Signal::NoiseProduct, rng.random_range(-1.0..1.0)), 1.0);
    }
    if rng.random_bool(0.25) {
        Formula::atom(ChancePredicate::deterministic(mu))
    } else {
        Formula::atom(ChancePredicate::chance(mu, 0.1 * rng.random_range(1..=9) as f64))
    }
}

fn random_formula(rng: &mut ChaCha8Rng, sys: &SystemModel, depth: u32, budget: u32) -> Formula {
    if depth == 0 || rng.random_bool(0.25) {
        return random_atom(rng, sys);
    }
    let interval = |rng: &mut ChaCha8Rng| {
        let lo = rng.random_range(0..=budget.min(1));
        let hi = rng.random_range(lo..=budget);
        (lo, hi)
    };
    match rng.random_range(0..8) {
        0 => Formula::not(random_formula(rng, sys, depth - 1, budget)),
        1 => Formula::and(random_formula(rng, sys, depth - 1, budget), random_formula(rng, sys, depth - 1, budget)),
        2 => Formula::or(random_formula(rng, sys, depth - 1, budget), random_formula(rng, sys, depth - 1, budget)),
        3 => Formula::implies(random_formula(rng, sys, depth - 1, budget), random_formula(rng, sys, depth - 1, budget)),
        4 if budget > 0 => {
            let (lo, hi) = interval(rng);
            Formula::globally(lo, hi, random_formula(rng, sys, depth - 1, budget - hi))
        }
        5 if budget > 0 => {
            let (lo, hi) = interval(rng);
            Formula::eventually(lo, hi, random_formula(rng, sys, depth - 1, budget - hi))
        }
        6 if budget > 0 => {
            let (lo, hi) = interval(rng);
            let rest = budget - hi;
            Formula::until(lo, hi, random_formula(rng, sys, depth - 1, rest), random_formula(rng, sys, depth - 1, rest))
        }
        7 if budget > 0 => {
            let (lo, hi) = interval(rng);
            let rest = budget - hi;
            Formula::weak_until(lo, hi, random_formula(rng, sys, depth - 1, rest), random_formula(rng, sys, depth - 1, rest))
        }
        _ => Formula::and(random_atom(rng, sys), random_formula(rng, sys, depth - 1, budget)),
    }
}

enum Solved {
    Feasible(DVector<f64>, Vec<DVector<f64>>),
    Infeasible,
    Capped,
}

fn solve_level(sys: &SystemModel, f: &Formula, level: ApproxLevel) -> Result<Solved, String> {
    let enc = encode(sys, f, &EncodeOptions::new(level)).map_err(|e| e.to_string())?;
    let r = solve(&enc.model, &Budget::default()).map_err(|e| e.to_string())?;
    Ok(match r.status {
        SolveStatus::Feasible { values, .. } => {
            let d = enc.decision_values(&values, sys);
            let (nx, nu) = (enc.layout.nx, enc.layout.nu);
            let x0 = DVector::from_column_slice(&d[..nx]);
            let inputs = (0..enc.layout.steps)
                .map(|t| DVector::from_column_slice(&d[nx + t * nu..nx + (t + 1) * nu]))
                .collect();
            Solved::Feasible(x0, inputs)
        }
        SolveStatus::Infeasible => Solved::Infeasible,
        SolveStatus::CapExceeded { .. } => Solved::Capped,
    })
}

fn sandwich() -> Check {
    let mut counts = [0usize; 4];
    let mut replayed = 0;
    for case in 0..SANDWICH_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(4_000 + case);
        let class = (case % 3) as usize;
        let sys = random_system(&mut rng, class);
        let f = random_formula(&mut rng, &sys, 3, 3);
        let segments = [1, 2, 4][rng.random_range(0..3)];
        let under = solve_level(&sys, &f, ApproxLevel::under(segments)).map_err(|e| format!("case {case}: {e}"))?;
        let over = solve_level(&sys, &f, ApproxLevel::over(segments)).map_err(|e| format!("case {case}: {e}"))?;
        match (&under, &over) {
            (Solved::Feasible(..), Solved::Infeasible) => {
                return Err(format!("case {case}: inner feasible but outer infeasible for `{f}`"));
            }
            (Solved::Feasible(..), _) => counts[0] += 1,
            (Solved::Infeasible, Solved::Infeasible) => counts[1] += 1,
            (Solved::Infeasible, Solved::Feasible(..)) => counts[2] += 1,
            _ => counts[3] += 1,
        }
        if let Solved::Feasible(x0, inputs) = &under {
            let ok = replay_formula(&sys, &f.to_nnf(), x0, inputs, REPLAY_SAMPLES, 40_000 + case, REPLAY_SIGMAS, REPLAY_TOL)
                .map_err(|e| format!("case {case}: {e}"))?;
            ensure(ok, || format!("case {case}: inner witness does not replay for `{f}`"))?;
            replayed += 1;
        }
    }
    ensure(counts[0] >= 20 && counts[1] >= 20, || format!("unbalanced generator: {counts:?}"))?;
    Ok(format!(
        "{SANDWICH_CASES} cases: both feasible {}, both infeasible {}, gap {}, capped {}; {replayed} witnesses replayed",
        counts[0], counts[1], counts[2], counts[3]
    ))
}

// ---------------------------------------------------------------------------------------
// 5. Markov-jump encodings against scenario enumeration

fn markov_exactness() -> Check {
    let mut checked = 0;
    for inst in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5_000 + inst);
        let k = (inst % 3 + 1) as usize;
        let nx = rng.random_range(1..=2);
        let nu = 1;
        let modes: Vec<Mode> = (0..2)
            .map(|_| Mode {
                a: uniform_matrix(&mut rng, nx, nx, 1.2),
                b: uniform_matrix(&mut rng, nx, nu, 1.0),
                zeta: uniform_vector(&mut rng, nx, 1.0),
            })
            .collect();
        let q: f64 = rng.random_range(0.05..0.95);
        let r: f64 = rng.random_range(0.05..0.95);
        let s: f64 = rng.random_range(0.05..0.95);
        let initial = [q, 1.0 - q];
        let transition = [[r, 1.0 - r], [1.0 - s, s]];
        let x0 = uniform_vector(&mut rng, nx, 1.0);
        let inputs: Vec<f64> = (0..=k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coef = uniform_vector(&mut rng, nx, 1.0);
        let c0: f64 = rng.random_range(-0.5..0.5);
        let sys = SystemModel {
            name: "markov".into(),
            nx,
            nu,
            dynamics: Dynamics::MarkovJump(MarkovJump {
                modes: modes.clone(),
                initial: DVector::from_row_slice(&initial),
                transition: DMatrix::from_row_slice(2, 2, &[transition[0][0], transition[0][1], transition[1][0], transition[1][1]]),
            }),
            x0: InitialState::Fixed(x0.clone()),
            u_bounds: vec![(-1.0, 1.0)],
            state_names: Vec::new(),
            input_names: Vec::new(),
        };
        // inputs are pinned per step through a conjunction of deterministic equalities
        let mut pins = Vec::new();
        for (t, u) in inputs.iter().enumerate().take(k) {
            let hi = LinExpr {
                terms: vec![(Signal::Input(0), 1.0)],
                constant: -u,
            };
            let pin = Formula::and(
                Formula::atom(ChancePredicate::deterministic(hi.clone())),
                Formula::atom(ChancePredicate::deterministic(hi.negated())),
            );
            pins.push(Formula::globally(t as u32, t as u32, pin));
        }
        sys.validate().map_err(|e| e.to_string())?;
        // enumeration oracle
        let mut oracle_p = 0.0;
        for path in 0..(1usize << k) {
            let seq: Vec<usize> = (0..k).map(|t| (path >> (k - 1 - t)) & 1).collect();
            let mut prob = initial[seq[0]];
            for t in 1..k {
                prob *= transition[seq[t - 1]][seq[t]];
            }
            let mut x = x0.clone();
            for (t, &m) in seq.iter().enumerate() {
                x = &modes[m].a * x + &modes[m].b * inputs[t] + &modes[m].zeta;
            }
            if coef.dot(&x) + c0 <= 0.0 {
                oracle_p += prob;
            }
        }
        for step in 1..=9 {
            let p = 0.1 * step as f64;
            if (oracle_p - p).abs() < 1e-9 {
                continue;
            }
            let mut mu = LinExpr::constant(c0);
            for i in 0..nx {
                mu.add(&LinExpr::term(Signal::State(i), coef[i]), 1.0);
            }
            let mut f = Formula::globally(k as u32, k as u32, Formula::atom(ChancePredicate::chance(mu, p)));
            for pin in &pins {
                f = Formula::and(f, pin.clone());
            }
            let expected = oracle_p >= p;
            for level in [ApproxLevel::under(1), ApproxLevel::over(1)] {
                let got = match solve_level(&sys, &f, level)? {
                    Solved::Feasible(..) => true,
                    Solved::Infeasible => false,
                    Solved::Capped => return Err(format!("instance {inst}: solver budget exhausted")),
                };
                ensure(got == expected, || {
                    format!("instance {inst} k={k} p={p}: encoded {got}, enumeration P={oracle_p}")
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} encoded queries agree with enumeration"))
}

// ---------------------------------------------------------------------------------------
// 6. MILP solver against binary enumeration with vertex-enumerated LPs

fn random_mip(seed: u64) -> MipModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = rng.random_range(1..=8);
    let nc = rng.random_range(0..=3);
    let nrows = rng.random_range(1..=10);
    let mut m = MipModel::new();
    let mut vars = Vec::new();
    for i in 0..nb {
        vars.push(m.add_binary(format!("b{i}")));
    }
    for i in 0..nc {
        let lo = rng.random_range(-5..=0) as f64;
        let hi = lo + rng.random_range(1..=8) as f64;
        vars.push(m.add_continuous(format!("x{i}"), lo, hi).unwrap());
    }
    for r in 0..nrows {
        let mut e = AffineExpr::default();
        for &v in &vars {
            if rng.random_bool(0.6) {
                e.add_term(v, rng.random_range(-5..=5) as f64);
            }
        }
        let sense = match rng.random_range(0..7) {
            0 => Sense::Eq,
            1 | 2 => Sense::Ge,
            _ => Sense::Le,
        };
        m.add_row(format!("r{r}"), &e, sense, rng.random_range(-4..=8) as f64).unwrap();
    }
    let mut e = AffineExpr::default();
    for &v in &vars {
        e.add_term(v, rng.random_range(-6..=6) as f64);
    }
    let sense = if rng.random_bool(0.5) { ObjSense::Minimize } else { ObjSense::Maximize };
    m.set_objective(sense, e);
    m
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Exhaustive optimum: every binary assignment, then every vertex of the continuous
/// polytope as the solution of a square system of active constraints.
fn enumerate_mip(m: &MipModel) -> Option<f64> {
    let vars = m.vars();
    let bins: Vec<usize> = (0..vars.len()).filter(|&j| vars[j].kind == VarKind::Binary).collect();
    let conts: Vec<usize> = (0..vars.len()).filter(|&j| vars[j].kind != VarKind::Binary).collect();
    let obj = m.objective().expect("objective");
    let minimize = obj.sense == ObjSense::Minimize;
    let nc = conts.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << bins.len()) {
        let mut x = vec![0.0; vars.len()];
        for (k, &j) in bins.iter().enumerate() {
            x[j] = f64::from((mask >> k) & 1);
        }
        // hyperplanes g . xc = h over the continuous variables
        let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
        for row in m.rows() {
            let mut g = vec![0.0; nc];
            let mut fixed = 0.0;
            for &(v, c) in &row.coeffs {
                match conts.iter().position(|&j| j == v.0) {
                    Some(p) => g[p] += c,
                    None => fixed += c * x[v.0],
                }
            }
            planes.push((g, row.rhs - fixed));
        }
        for (p, &j) in conts.iter().enumerate() {
            let mut g = vec![0.0; nc];
            g[p] = 1.0;
            planes.push((g.clone(), vars[j].lower));
            planes.push((g, vars[j].upper));
        }
        let mut candidates: Vec<Vec<f64>> = Vec::new();
        for idx in combinations(planes.len(), nc) {
            let a = DMatrix::from_fn(nc, nc, |r, c| planes[idx[r]].0[c]);
            let b = DVector::from_fn(nc, |r, _| planes[idx[r]].1);
            if nc == 0 {
                candidates.push(Vec::new());
            } else if let Some(sol) = a.lu().solve(&b) {
                candidates.push(sol.iter().copied().collect());
            }
        }
        for cand in candidates {
            for (p, &j) in conts.iter().enumerate() {
                x[j] = cand[p];
            }
            if m.max_violation(&x).0 > 1e-7 {
                continue;
            }
            let v = obj.expr.eval(&x);
            best = Some(match best {
                None => v,
                Some(b) if minimize => b.min(v),
                Some(b) => b.max(v),
            });
        }
    }
    best
}

fn milp_enumeration() -> Check {
    let mut feasible = 0;
    for seed in 0..50u64 {
        let m = random_mip(6_000 + seed);
        let oracle = enumerate_mip(&m);
        let r = solve(&m, &Budget::default()).map_err(|e| e.to_string())?;
        match (&r.status, oracle) {
            (SolveStatus::Feasible { objective, .. }, Some(best)) => {
                ensure((objective - best).abs() <= 1e-6, || format!("seed {seed}: {objective} vs {best}"))?;
                feasible += 1;
            }
            (SolveStatus::Infeasible, None) => {}
            (status, oracle) => return Err(format!("seed {seed}: solver {status:?}, enumeration {oracle:?}")),
        }
    }
    Ok(format!("50 MIPs agree ({feasible} feasible)"))
}

// ---------------------------------------------------------------------------------------
// 7. Battery closed loop

const BATTERY_MIN_RATE: f64 = 0.93;

fn battery() -> Check {
    let start = Instant::now();
    let p = load("battery.stsl")?;
    let task = p
        .tasks
        .iter()
        .find(|t| matches!(t.kind, TaskKind::Simulate { .. }))
        .ok_or("no simulate task")?;
    let TaskKind::Simulate {
        contract,
        horizon,
        steps,
        runs,
        seed,
        objective,
        monitor,
    } = &task.kind
    else {
        unreachable!()
    };
    ensure(*runs == 500 && *steps == 20, || format!("task runs {runs} x {steps} steps"))?;
    ensure(matches!(task.expect, Some(Expectation::MinRate(r)) if r == BATTERY_MIN_RATE), || {
        "task does not declare the pinned rate".into()
    })?;
    let c = p.contract(contract).ok_or("missing contract")?;
    let sys = p.system(&c.system).ok_or("missing system")?;
    let problem = MpcProblem::new(sys.clone(), c.clone(), *horizon, objective.clone()).map_err(|e| e.to_string())?;
    let summary = run_many(&problem, seed.unwrap_or(1), *runs, *steps, monitor.as_ref(), |_| {}).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let min_rate = summary.min_rate().ok_or("no monitor")?;
    ensure(min_rate >= BATTERY_MIN_RATE, || format!("minimum rate {min_rate}"))?;
    ensure(took < Duration::from_secs(600), || format!("took {}", secs(took)))?;
    Ok(format!(
        "{} runs x {} steps, minimum per-step rate {min_rate:.3}, {} infeasible steps, in {}",
        summary.runs,
        summary.steps,
        summary.infeasible_steps,
        secs(took)
    ))
}

// ---------------------------------------------------------------------------------------
// 8. 100-state refinement

fn jordan_project(n: usize) -> String {
    let mat = |f: &dyn Fn(usize, usize) -> f64| -> String {
        let rows: Vec<String> = (0..n)
            .map(|i| {
                let r: Vec<String> = (0..n).map(|j| format!("{}", f(i, j))).collect();
                format!("[{}]", r.join(", "))
            })
            .collect();
        format!("[{}]", rows.join(", "))
    };
    let a = mat(&|i, j| if i == j || (j == i + 1 && i % 2 == 0) { 1.0 } else { 0.0 });
    let eye = mat(&|i, j| if i == j { 1.0 } else { 0.0 });
    let diag = mat(&|i, j| if i == j { 0.3 } else { 0.0 });
    let anti = mat(&|i, j| if i + j == n - 1 { -0.2 } else { 0.0 });
    let bounds = vec!["[-10, 10]"; n].join(", ");
    format!(
        "system jordan {{\n  class: linear_gaussian;\n  nx: {n};\n  nu: {n};\n  A: {a};\n  B: {eye};\n  noise_B: [{diag}, {anti}];\n  w_cov: [[1, 0], [0, 1]];\n  x0: free;\n  x0_bounds: [{bounds}];\n  u_bounds: [{bounds}];\n}}\n\
         contract C1 over jordan {{\n  assume: x1 >= 1 && x1 <= 2;\n  guarantee: (x1 >= 1 && x1 <= 2) -> !F[2,2] (P{{ x1 <= 1 }} >= 0.7);\n}}\n\
         contract C2 over jordan {{\n  assume: x1 <= 3;\n  guarantee: x1 <= 3 -> G[1,3] !(P{{ x1 <= 2 }} >= 0.6);\n}}\n"
    )
}

fn scalability() -> Check {
    let start = Instant::now();
    let p = parse_project(&jordan_project(100)).map_err(|e| e.to_string())?;
    let c1 = p.contract("C1").ok_or("missing C1")?;
    let c2 = p.contract("C2").ok_or("missing C2")?;
    let sys = p.system("jordan").ok_or("missing system")?;
    let v = check_refinement(sys, c2, c1, &CheckConfig::default()).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(v.outcome == Outcome::Holds, || format!("refinement is {}", v.outcome))?;
    ensure(took < Duration::from_secs(60), || format!("took {}", secs(took)))?;
    Ok(format!("100 states: Holds in {} ({} solver calls)", secs(took), v.attempts.len()))
}

// ---------------------------------------------------------------------------------------
// 9. Deterministic reports

fn determinism() -> Check {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(projects_dir()).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|e| e == "stsl") {
            names.push(path.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    names.sort();
    ensure(!names.is_empty(), || "no bundled projects".into())?;
    let cfg = RunConfig {
        seed: Some(11),
        runs: Some(40),
        csv: true,
        dump_lp: true,
        ..RunConfig::default()
    };
    for name in &names {
        let p = load(name)?;
        let first = run_project(&p, &cfg).map_err(|e| e.to_string())?;
        let second = run_project(&p, &cfg).map_err(|e| e.to_string())?;
        ensure(first == second, || format!("{name}: reports differ between runs"))?;
    }
    Ok(format!("{} bundled projects reproduce byte for byte", names.len()))
}

fn main() {
    let criteria: [(&str, &str, fn() -> Check); 9] = [
        ("c1", "example 1 compatible and consistent", example_one),
        ("c2", "refinement of the double-integrator pair", refinement_pair),
        ("c3", "predicate moments match simulation", predicate_moments),
        ("c4", "inner/outer sandwich soundness", sandwich),
        ("c5", "Markov-jump exactness", markov_exactness),
        ("c6", "MILP solver against enumeration", milp_enumeration),
        ("c7", "battery closed-loop satisfaction rate", battery),
        ("c8", "100-state refinement", scalability),
        ("c9", "deterministic reports", determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (key, title, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| key.contains(f.as_str()) || title.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = secs(start.elapsed());
        match result {
            Ok(detail) => println!("PASS {key} {title}: {detail} [{took}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {key} {title}: {why} [{took}]");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
