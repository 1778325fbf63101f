//! Sampling estimates of predicate probabilities and formula satisfaction rates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::ModelError;
use crate::formula::{ChancePredicate, Formula, Nnf};
use crate::models::{psd_factor, simulate, Dynamics, SystemModel};

/// z-value of a two-sided 99% normal interval.
pub const Z99: f64 = 2.576;

/// Fewest samples accepted by the estimators.
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub probability: f64,
    pub samples: usize,
    /// 99% normal-approximation half-width.
    pub half_width: f64,
    pub seed: u64,
}

impl Estimate {
    fn new(hits: usize, samples: usize, seed: u64) -> Self {
        let p = hits as f64 / samples as f64;
        Self {
            probability: p,
            samples,
            half_width: Z99 * (p * (1.0 - p) / samples as f64).sqrt(),
            seed,
        }
    }

    /// Standard error of the estimate.
    pub fn std_error(&self) -> f64 {
        (self.probability * (1.0 - self.probability) / self.samples as f64).sqrt()
    }
}

/// Sample moments of `mu(z_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std_dev: f64,
    /// Fraction of samples with `mu <= 0`.
    pub probability: f64,
    pub samples: usize,
}

fn check_inputs(sys: &SystemModel, x0: &DVector<f64>, inputs: &[DVector<f64>], need: usize) -> Result<(), ModelError> {
    if x0.len() != sys.nx {
        return Err(ModelError::Dimension {
            what: "x0".into(),
            expected: format!("length {}", sys.nx),
            got: format!("length {}", x0.len()),
        });
    }
    if inputs.len() < need {
        return Err(ModelError::Dimension {
            what: "inputs".into(),
            expected: format!("at least {need} steps"),
            got: format!("{} steps", inputs.len()),
        });
    }
    if let Some(u) = inputs.iter().find(|u| u.len() != sys.nu) {
        return Err(ModelError::Dimension {
            what: "input".into(),
            expected: format!("length {}", sys.nu),
            got: format!("length {}", u.len()),
        });
    }
    Ok(())
}

/// Precomputed sampler of `mu(z_k)` for fixed `x_0` and inputs.
enum Sampler {
    /// `mu = c + g' eps`, `eps ~ N(0, I)` (linear-Gaussian and measurement-noise systems).
    Gaussian { c: f64, g: DVector<f64> },
    /// Mode sequences drawn from the chain; `values[mode path index]` is `mu`.
    Markov {
        initial: Vec<f64>,
        transition: DMatrix<f64>,
        modes: usize,
        k: usize,
        values: Vec<f64>,
    },
}

fn build_sampler(
    sys: &SystemModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    pred: &ChancePredicate,
    k: usize,
) -> Result<Sampler, ModelError> {
    let co = crate::chance::coefficients(pred, sys.nx, sys.nu)?;
    let u_k = inputs.get(k).cloned();
    let needs_u_k = co.input.iter().any(|c| *c != 0.0) || co.noise != 0.0;
    if needs_u_k && u_k.is_none() {
        return Err(ModelError::Dimension {
            what: "inputs".into(),
            expected: format!("at least {} steps", k + 1),
            got: format!("{} steps", inputs.len()),
        });
    }
    let u_k = u_k.unwrap_or_else(|| DVector::zeros(sys.nu));
    match &sys.dynamics {
        Dynamics::LinearGaussian(lg) => {
            if co.noise != 0.0 {
                return Err(ModelError::Invalid("`wxi` only exists for measurement_noise systems".into()));
            }
            // x_k = mean_k + sum_t M_t eps_t, one block of eps per step
            let mut mean = x0.clone();
            let mut blocks: Vec<DMatrix<f64>> = Vec::new();
            for (t, u) in inputs.iter().enumerate().take(k) {
                let f = psd_factor(lg.w_cov.at(t), "w_cov")?;
                let nw = lg.b_noise.len();
                let mut g = DMatrix::zeros(sys.nx, nw);
                for l in 0..nw {
                    g.set_column(l, &(&lg.b_noise[l] * u + &lg.zeta_noise[l]));
                }
                let c = lg.b_mean.at(t) * u + lg.zeta_mean.at(t) + &g * lg.w_mean.at(t);
                mean = &lg.a * mean + c;
                for b in blocks.iter_mut() {
                    *b = &lg.a * &*b;
                }
                blocks.push(g * f.transpose());
            }
            let c = co.state.dot(&mean) + co.input.dot(&u_k) + co.constant;
            let parts: Vec<f64> = blocks
                .iter()
                .flat_map(|b| (b.transpose() * &co.state).iter().copied().collect::<Vec<_>>())
                .collect();
            Ok(Sampler::Gaussian {
                c,
                g: DVector::from_vec(parts),
            })
        }
        Dynamics::MeasurementNoise(mn) => {
            let mut x = x0.clone();
            for u in inputs.iter().take(k) {
                x = &mn.a * x + &mn.b * u;
            }
            let mut xi = DVector::zeros(sys.nx + sys.nu);
            xi.rows_mut(0, sys.nx).copy_from(&x);
            xi.rows_mut(sys.nx, sys.nu).copy_from(&u_k);
            let mut c = co.state.dot(&x) + co.input.dot(&u_k) + co.constant;
            let mut g = DVector::zeros(0);
            if co.noise != 0.0 {
                c += co.noise * mn.w_mean.at(k).dot(&xi);
                let f = psd_factor(mn.w_cov.at(k), "w_cov")?;
                g = &f * &xi * co.noise;
            }
            Ok(Sampler::Gaussian { c, g })
        }
        Dynamics::MarkovJump(mj) => {
            if co.noise != 0.0 {
                return Err(ModelError::Invalid("`wxi` only exists for measurement_noise systems".into()));
            }
            let scenarios = mj.scenarios(k);
            let values = scenarios
                .iter()
                .map(|s| {
                    let mut x = x0.clone();
                    for (t, &l) in s.modes.iter().enumerate() {
                        let m = &mj.modes[l];
                        x = &m.a * x + &m.b * &inputs[t] + &m.zeta;
                    }
                    co.state.dot(&x) + co.input.dot(&u_k) + co.constant
                })
                .collect();
            Ok(Sampler::Markov {
                initial: mj.initial.iter().copied().collect(),
                transition: mj.transition.clone(),
                modes: mj.modes.len(),
                k,
                values,
            })
        }
    }
}

fn pick(weights: impl Iterator<Item = f64>, rng: &mut impl Rng) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if r < acc {
                return i;
            }
        }
    }
    last
}

impl Sampler {
    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Sampler::Gaussian { c, g } => {
                let mut v = *c;
                for gi in g.iter() {
                    let e: f64 = rng.sample(StandardNormal);
                    v += gi * e;
                }
                v
            }
            Sampler::Markov {
                initial,
                transition,
                modes,
                k,
                values,
            } => {
                let mut idx = 0;
                let mut prev = 0;
                for t in 0..*k {
                    let l = if t == 0 {
                        pick(initial.iter().copied(), rng)
                    } else {
                        pick(transition.row(prev).iter().copied(), rng)
                    };
                    idx = idx * modes + l;
                    prev = l;
                }
                values[idx]
            }
        }
    }
}

/// Samples `mu(z_k)` `n` times and returns its moments.
pub fn sample_moments(
    sys: &SystemModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    pred: &ChancePredicate,
    k: usize,
    n: usize,
    seed: u64,
) -> Result<Moments, ModelError> {
    check_inputs(sys, x0, inputs, k)?;
    if n < MIN_SAMPLES {
        return Err(ModelError::Invalid(format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    let sampler = build_sampler(sys, x0, inputs, pred, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sq, mut hits) = (0.0, 0.0, 0usize);
    for _ in 0..n {
        let v = sampler.draw(&mut rng);
        sum += v;
        sq += v * v;
        if v <= 0.0 {
            hits += 1;
        }
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0) * n as f64 / (n as f64 - 1.0);
    Ok(Moments {
        mean,
        std_dev: var.sqrt(),
        probability: hits as f64 / n as f64,
        samples: n,
    })
}

/// Estimates `P{mu(z_k) <= 0}` under the inputs `u_0 ..`, drawing `n` samples.
pub fn estimate_atom(
    sys: &SystemModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    pred: &ChancePredicate,
    k: usize,
    n: usize,
    seed: u64,
) -> Result<Estimate, ModelError> {
    let m = sample_moments(sys, x0, inputs, pred, k, n, seed)?;
    Ok(Estimate::new((m.probability * n as f64).round() as usize, n, seed))
}

fn event(pred: &ChancePredicate, traj: &crate::models::Trajectory, inputs: &[DVector<f64>], nu: usize, k: usize) -> bool {
    let x = &traj.states[k];
    let u = inputs.get(k).cloned().unwrap_or_else(|| DVector::zeros(nu));
    let noise_product = match traj.noise.get(k) {
        Some(w) if w.len() == x.len() + u.len() => {
            w.rows(0, x.len()).dot(x) + w.rows(x.len(), u.len()).dot(&u)
        }
        _ => 0.0,
    };
    pred.mu.eval(x.as_slice(), u.as_slice(), noise_product) <= 0.0
}

/// Fraction of sampled trajectories on which `f` holds with every atom read as the event
/// `mu(z_k) <= 0` of that trajectory.
pub fn estimate_formula(
    sys: &SystemModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    f: &Formula,
    n: usize,
    seed: u64,
) -> Result<Estimate, ModelError> {
    let h = f.horizon() as usize;
    check_inputs(sys, x0, inputs, h)?;
    if n < MIN_SAMPLES {
        return Err(ModelError::Invalid(format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    let ids = f.atoms();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..n {
        let traj = simulate(sys, x0, &inputs[..h], &mut rng)?;
        if f.eval_with(0, &mut |id, k| event(&ids[id], &traj, inputs, sys.nu, k)) {
            hits += 1;
        }
    }
    Ok(Estimate::new(hits, n, seed))
}

/// Checks a formula at fixed inputs by estimating every literal's probability with `n`
/// samples. A literal counts as true when its threshold lies within `sigmas` standard
/// errors of the estimate on the favourable side. Predicate values within `tol` of zero
/// count in the literal's favour, absorbing solver feasibility slack.
pub fn replay_formula(
    sys: &SystemModel,
    nnf: &Nnf,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    n: usize,
    seed: u64,
    sigmas: f64,
    tol: f64,
) -> Result<bool, ModelError> {
    let mut cache: std::collections::HashMap<(usize, usize, bool), Estimate> = std::collections::HashMap::new();
    let mut err = None;
    let ok = nnf.eval_with(0, &mut |pred, id, k, negated| {
        if err.is_some() {
            return false;
        }
        if let Some(c) = pred.constant_value() {
            return c != negated;
        }
        let est = match cache.get(&(id, k, negated)) {
            Some(e) => *e,
            None => {
                let s = seed ^ ((id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ ((k as u64) << 32);
                let mut shifted = pred.clone();
                shifted.mu.constant += if negated { tol } else { -tol };
                match estimate_atom(sys, x0, inputs, &shifted, k, n, s) {
                    Ok(e) => {
                        cache.insert((id, k, negated), e);
                        e
                    }
                    Err(e) => {
                        err = Some(e);
                        return false;
                    }
                }
            }
        };
        let p = if pred.deterministic { 1.0 } else { pred.p };
        // a floor on the standard error keeps estimates at 0 or 1 from being overconfident
        let se = est.std_error().max(0.5 / n as f64);
        if negated {
            est.probability < p + sigmas * se
        } else {
            est.probability >= p - sigmas * se
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(ok),
    }
}
