//! The three stochastic system classes, sampling, and shared numerical kernels.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::ModelError;

/// Eigenvalues above `-PSD_TOL * max(1, |M|)` are accepted and clamped to zero.
pub const PSD_TOL: f64 = 1e-10;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF for `0 < p < 1`.
pub fn inv_norm_cdf(p: f64) -> Result<f64, ModelError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ModelError::ProbabilityEndpoint(p));
    }
    Ok(-std::f64::consts::SQRT_2 * erfc_inv(2.0 * p))
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<f64, ModelError> {
    if !m.is_square() {
        return Err(ModelError::Dimension {
            what: what.into(),
            expected: "square matrix".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return Err(ModelError::Asymmetric(what.into()));
    }
    Ok(scale)
}

fn eigen(m: &DMatrix<f64>, what: &str) -> Result<(Vec<f64>, DMatrix<f64>), ModelError> {
    let scale = check_symmetric(m, what)?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values = Vec::with_capacity(order.len());
    let mut vectors = DMatrix::zeros(m.nrows(), m.nrows());
    for (c, &i) in order.iter().enumerate() {
        let ev = eig.eigenvalues[i];
        if ev < -PSD_TOL * scale {
            return Err(ModelError::Indefinite {
                what: what.into(),
                eigenvalue: ev,
            });
        }
        values.push(ev.max(0.0));
        let mut v = eig.eigenvectors.column(i).into_owned();
        // fix the sign so results do not depend on solver internals
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v = -v;
        }
        vectors.set_column(c, &v);
    }
    Ok((values, vectors))
}

/// Symmetric square root `S` of a PSD matrix, so that `S' S = M`.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
    let (values, vectors) = eigen(m, "psd_sqrt input")?;
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        values.len(),
        values.iter().map(|v| v.sqrt()),
    ));
    Ok(&vectors * d * vectors.transpose())
}

/// Compact factor `F` (rank x n) with `F' F = M`, dropping numerically zero directions.
pub fn psd_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>, ModelError> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (values, vectors) = eigen(m, what)?;
    let top = values.first().copied().unwrap_or(0.0);
    let keep: Vec<usize> = (0..n)
        .filter(|&i| values[i] > 1e-12 * top.max(1e-300) && values[i] > 1e-300)
        .collect();
    let mut f = DMatrix::zeros(keep.len(), n);
    for (r, &i) in keep.iter().enumerate() {
        let s = values[i].sqrt();
        for c in 0..n {
            f[(r, c)] = s * vectors[(c, i)];
        }
    }
    Ok(f)
}

/// Per-step parameter; the last entry repeats beyond the list.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T>(pub Vec<T>);

impl<T> Schedule<T> {
    pub fn constant(v: T) -> Self {
        Schedule(vec![v])
    }

    pub fn at(&self, k: usize) -> &T {
        &self.0[k.min(self.0.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `x+ = A x + B_k u + zeta_k` with `[B_k, zeta_k] = [Bm_k, zm_k] + sum_l [Bn_l, zn_l] w_{k,l}`,
/// `w_k ~ N(w_mean_k, w_cov_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussian {
    pub a: DMatrix<f64>,
    pub b_mean: Schedule<DMatrix<f64>>,
    pub zeta_mean: Schedule<DVector<f64>>,
    pub b_noise: Vec<DMatrix<f64>>,
    pub zeta_noise: Vec<DVector<f64>>,
    pub w_mean: Schedule<DVector<f64>>,
    pub w_cov: Schedule<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub zeta: DVector<f64>,
}

/// Linear dynamics switched by a finite Markov chain over modes.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovJump {
    pub modes: Vec<Mode>,
    pub initial: DVector<f64>,
    pub transition: DMatrix<f64>,
}

/// One mode sequence of a Markov jump system with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub modes: Vec<usize>,
    pub probability: f64,
}

impl MarkovJump {
    pub fn scenario_count(&self, k: usize) -> Option<usize> {
        self.modes.len().checked_pow(k as u32)
    }

    /// All mode sequences of length `k` in lexicographic order, including zero-probability ones.
    pub fn scenarios(&self, k: usize) -> Vec<Scenario> {
        let n = self.modes.len();
        let total = self.scenario_count(k).expect("scenario count overflow");
        let mut out = Vec::with_capacity(total);
        let mut seq = vec![0usize; k];
        for _ in 0..total {
            let mut p = if k == 0 { 1.0 } else { self.initial[seq[0]] };
            for t in 1..k {
                p *= self.transition[(seq[t - 1], seq[t])];
            }
            out.push(Scenario {
                modes: seq.clone(),
                probability: p,
            });
            for t in (0..k).rev() {
                seq[t] += 1;
                if seq[t] < n {
                    break;
                }
                seq[t] = 0;
            }
        }
        out
    }

    /// Marginal mode distribution at step `k`.
    pub fn marginal(&self, k: usize) -> DVector<f64> {
        let mut d = self.initial.clone();
        for _ in 0..k {
            d = self.transition.transpose() * d;
        }
        d
    }
}

/// `x+ = A x + B u` with predicates `w_k' [x_k; u_k] + c`, `w_k ~ N(w_mean_k, w_cov_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementNoise {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w_mean: Schedule<DVector<f64>>,
    pub w_cov: Schedule<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    LinearGaussian(LinearGaussian),
    MarkovJump(MarkovJump),
    MeasurementNoise(MeasurementNoise),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Fixed(DVector<f64>),
    /// Free initial state inside a box.
    Free {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
}

/// Default bound on every input component when none is declared.
pub const DEFAULT_INPUT_BOUND: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub name: String,
    pub nx: usize,
    pub nu: usize,
    pub dynamics: Dynamics,
    pub x0: InitialState,
    /// Per-component `(lower, upper)`.
    pub u_bounds: Vec<(f64, f64)>,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
}

fn dim_err(what: impl Into<String>, expected: String, got: String) -> ModelError {
    ModelError::Dimension {
        what: what.into(),
        expected,
        got,
    }
}

fn check_mat(m: &DMatrix<f64>, r: usize, c: usize, what: &str) -> Result<(), ModelError> {
    if m.nrows() != r || m.ncols() != c {
        return Err(dim_err(
            what,
            format!("{r}x{c}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Invalid(format!("`{what}` has non-finite entries")));
    }
    Ok(())
}

fn check_vec(v: &DVector<f64>, n: usize, what: &str) -> Result<(), ModelError> {
    if v.len() != n {
        return Err(dim_err(what, format!("length {n}"), format!("length {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::Invalid(format!("`{what}` has non-finite entries")));
    }
    Ok(())
}

impl SystemModel {
    /// Dimension of one noise sample.
    pub fn noise_dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::LinearGaussian(lg) => lg.b_noise.len(),
            Dynamics::MarkovJump(mj) => mj.modes.len().saturating_sub(1),
            Dynamics::MeasurementNoise(_) => self.nx + self.nu,
        }
    }

    pub fn class_name(&self) -> &'static str {
        match &self.dynamics {
            Dynamics::LinearGaussian(_) => "linear_gaussian",
            Dynamics::MarkovJump(_) => "markov_jump",
            Dynamics::MeasurementNoise(_) => "measurement_noise",
        }
    }

    /// Cross-checks all dimensions and distribution parameters.
    pub fn validate(&self) -> Result<(), ModelError> {
        let (nx, nu) = (self.nx, self.nu);
        match &self.dynamics {
            Dynamics::LinearGaussian(lg) => {
                check_mat(&lg.a, nx, nx, "A")?;
                for m in &lg.b_mean.0 {
                    check_mat(m, nx, nu, "B")?;
                }
                for z in &lg.zeta_mean.0 {
                    check_vec(z, nx, "zeta")?;
                }
                let nw = lg.b_noise.len();
                if lg.zeta_noise.len() != nw {
                    return Err(dim_err(
                        "noise_zeta",
                        format!("{nw} vectors"),
                        format!("{} vectors", lg.zeta_noise.len()),
                    ));
                }
                for m in &lg.b_noise {
                    check_mat(m, nx, nu, "noise_B")?;
                }
                for z in &lg.zeta_noise {
                    check_vec(z, nx, "noise_zeta")?;
                }
                for w in &lg.w_mean.0 {
                    check_vec(w, nw, "w_mean")?;
                }
                for c in &lg.w_cov.0 {
                    check_mat(c, nw, nw, "w_cov")?;
                    psd_factor(c, "w_cov")?;
                }
            }
            Dynamics::MarkovJump(mj) => {
                if mj.modes.is_empty() {
                    return Err(ModelError::Invalid("markov_jump system needs at least one mode".into()));
                }
                for (i, m) in mj.modes.iter().enumerate() {
                    check_mat(&m.a, nx, nx, &format!("mode {i} A"))?;
                    check_mat(&m.b, nx, nu, &format!("mode {i} B"))?;
                    check_vec(&m.zeta, nx, &format!("mode {i} zeta"))?;
                }
                let n = mj.modes.len();
                check_vec(&mj.initial, n, "initial")?;
                check_mat(&mj.transition, n, n, "transition")?;
                let stochastic = |v: &[f64]| {
                    v.iter().all(|&p| p >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-9
                };
                if !stochastic(mj.initial.as_slice()) {
                    return Err(ModelError::NotStochastic { what: "initial".into() });
                }
                for r in 0..n {
                    let row: Vec<f64> = mj.transition.row(r).iter().copied().collect();
                    if !stochastic(&row) {
                        return Err(ModelError::NotStochastic {
                            what: format!("transition row {}", r + 1),
                        });
                    }
                }
            }
            Dynamics::MeasurementNoise(mn) => {
                check_mat(&mn.a, nx, nx, "A")?;
                check_mat(&mn.b, nx, nu, "B")?;
                for w in &mn.w_mean.0 {
                    check_vec(w, nx + nu, "w_mean")?;
                }
                for c in &mn.w_cov.0 {
                    check_mat(c, nx + nu, nx + nu, "w_cov")?;
                    psd_factor(c, "w_cov")?;
                }
            }
        }
        match &self.x0 {
            InitialState::Fixed(x) => check_vec(x, nx, "x0")?,
            InitialState::Free { lower, upper } => {
                check_vec(lower, nx, "x0_bounds lower")?;
                check_vec(upper, nx, "x0_bounds upper")?;
                if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
                    return Err(ModelError::Invalid("x0_bounds has lower > upper".into()));
                }
            }
        }
        if self.u_bounds.len() != nu {
            return Err(dim_err(
                "u_bounds",
                format!("{nu} pairs"),
                format!("{} pairs", self.u_bounds.len()),
            ));
        }
        if self.u_bounds.iter().any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u)) {
            return Err(ModelError::Invalid("u_bounds must be finite with lower <= upper".into()));
        }
        for (names, n, what) in [
            (&self.state_names, nx, "state_names"),
            (&self.input_names, nu, "input_names"),
        ] {
            if !names.is_empty() && names.len() != n {
                return Err(dim_err(what, format!("{n} names"), format!("{} names", names.len())));
            }
        }
        Ok(())
    }

    /// Mean-dynamics matrices at step `k`: `x+ = A x + B u + zeta` with noise at its mean.
    /// The system seen from step `t`: per-step parameters start at `t`, the initial state is
    /// `x0`, and for Markov jump systems the first mode follows the transition row of
    /// `last_mode` when one is known.
    pub fn shifted(&self, t: usize, x0: DVector<f64>, last_mode: Option<usize>) -> SystemModel {
        fn tail<T: Clone>(s: &Schedule<T>, t: usize) -> Schedule<T> {
            Schedule(s.0[t.min(s.0.len() - 1)..].to_vec())
        }
        let dynamics = match &self.dynamics {
            Dynamics::LinearGaussian(lg) => Dynamics::LinearGaussian(LinearGaussian {
                a: lg.a.clone(),
                b_mean: tail(&lg.b_mean, t),
                zeta_mean: tail(&lg.zeta_mean, t),
                b_noise: lg.b_noise.clone(),
                zeta_noise: lg.zeta_noise.clone(),
                w_mean: tail(&lg.w_mean, t),
                w_cov: tail(&lg.w_cov, t),
            }),
            Dynamics::MeasurementNoise(mn) => Dynamics::MeasurementNoise(MeasurementNoise {
                a: mn.a.clone(),
                b: mn.b.clone(),
                w_mean: tail(&mn.w_mean, t),
                w_cov: tail(&mn.w_cov, t),
            }),
            Dynamics::MarkovJump(mj) => {
                let mut mj = mj.clone();
                if let Some(l) = last_mode {
                    mj.initial = mj.transition.row(l).transpose();
                } else if t > 0 {
                    mj.initial = mj.marginal(t);
                }
                Dynamics::MarkovJump(mj)
            }
        };
        SystemModel {
            dynamics,
            x0: InitialState::Fixed(x0),
            ..self.clone()
        }
    }

    /// Not defined for Markov jump systems.
    pub fn mean_step(&self, k: usize) -> Option<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
        match &self.dynamics {
            Dynamics::LinearGaussian(lg) => {
                let w = lg.w_mean.at(k);
                let mut b = lg.b_mean.at(k).clone();
                let mut z = lg.zeta_mean.at(k).clone();
                for l in 0..lg.b_noise.len() {
                    b += &lg.b_noise[l] * w[l];
                    z += &lg.zeta_noise[l] * w[l];
                }
                Some((lg.a.clone(), b, z))
            }
            Dynamics::MeasurementNoise(mn) => {
                Some((mn.a.clone(), mn.b.clone(), DVector::zeros(self.nx)))
            }
            Dynamics::MarkovJump(_) => None,
        }
    }
}

/// A sampled run. `noise[k]` is the sample used at step `k`: the coefficient noise for
/// linear-Gaussian systems (steps `0..H`), the predicate noise for measurement-noise
/// systems (steps `0..=H`). `modes` is filled for Markov jump systems.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub noise: Vec<DVector<f64>>,
    pub modes: Vec<usize>,
}

fn sample_gaussian(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> Result<DVector<f64>, ModelError> {
    let f = psd_factor(cov, "w_cov")?;
    let eps = DVector::from_iterator(f.nrows(), (0..f.nrows()).map(|_| StandardNormal.sample(rng)));
    Ok(mean + f.transpose() * eps)
}

fn sample_index(weights: impl Iterator<Item = f64>, rng: &mut impl Rng) -> usize {
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

/// Simulates `inputs.len()` steps from `x0` with fresh noise drawn from `rng`.
pub fn simulate(
    sys: &SystemModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    rng: &mut impl Rng,
) -> Result<Trajectory, ModelError> {
    if x0.len() != sys.nx {
        return Err(dim_err("x0", format!("length {}", sys.nx), format!("length {}", x0.len())));
    }
    if let Some(u) = inputs.iter().find(|u| u.len() != sys.nu) {
        return Err(dim_err("input", format!("length {}", sys.nu), format!("length {}", u.len())));
    }
    let h = inputs.len();
    let mut states = vec![x0.clone()];
    let mut noise = Vec::new();
    let mut modes = Vec::new();
    match &sys.dynamics {
        Dynamics::LinearGaussian(lg) => {
            for (k, u) in inputs.iter().enumerate() {
                let w = sample_gaussian(lg.w_mean.at(k), lg.w_cov.at(k), rng)?;
                let mut b = lg.b_mean.at(k).clone();
                let mut z = lg.zeta_mean.at(k).clone();
                for l in 0..lg.b_noise.len() {
                    b += &lg.b_noise[l] * w[l];
                    z += &lg.zeta_noise[l] * w[l];
                }
                let next = &lg.a * &states[k] + b * u + z;
                states.push(next);
                noise.push(w);
            }
        }
        Dynamics::MarkovJump(mj) => {
            for (k, u) in inputs.iter().enumerate() {
                let l = if k == 0 {
                    sample_index(mj.initial.iter().copied(), rng)
                } else {
                    let prev = modes[k - 1];
                    sample_index(mj.transition.row(prev).iter().copied(), rng)
                };
                modes.push(l);
                let m = &mj.modes[l];
                let next = &m.a * &states[k] + &m.b * u + &m.zeta;
                states.push(next);
            }
        }
        Dynamics::MeasurementNoise(mn) => {
            for (k, u) in inputs.iter().enumerate() {
                states.push(&mn.a * &states[k] + &mn.b * u);
            }
            for k in 0..=h {
                noise.push(sample_gaussian(mn.w_mean.at(k), mn.w_cov.at(k), rng)?);
            }
        }
    }
    Ok(Trajectory {
        states,
        noise,
        modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_cdf_known_values() {
        assert_eq!(inv_norm_cdf(0.5).unwrap(), 0.0);
        assert!((inv_norm_cdf(0.975).unwrap() - 1.959963984540054).abs() < 1e-12);
        assert!(inv_norm_cdf(0.0).is_err());
        assert!(inv_norm_cdf(1.0).is_err());
    }

    #[test]
    fn sqrt_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = psd_sqrt(&m).unwrap();
        assert!((s.transpose() * &s - &m).norm() < 1e-12);
        assert!((s[(0, 0)] - 2.0).abs() < 1e-12 && (s[(1, 1)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn factor_drops_null_directions() {
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let m = &v * v.transpose();
        let f = psd_factor(&m, "m").unwrap();
        assert_eq!(f.nrows(), 1);
        assert!((f.transpose() * &f - &m).norm() < 1e-12);
    }

    #[test]
    fn indefinite_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(psd_sqrt(&m), Err(ModelError::Indefinite { .. })));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(psd_sqrt(&m), Err(ModelError::Asymmetric(_))));
    }

    #[test]
    fn uniform_chain_scenarios() {
        let mode = Mode {
            a: DMatrix::identity(1, 1),
            b: DMatrix::zeros(1, 1),
            zeta: DVector::zeros(1),
        };
        let mj = MarkovJump {
            modes: vec![mode.clone(), mode],
            initial: DVector::from_vec(vec![0.5, 0.5]),
            transition: DMatrix::from_element(2, 2, 0.5),
        };
        let s = mj.scenarios(2);
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|x| (x.probability - 0.25).abs() < 1e-15));
        assert_eq!(s[1].modes, vec![0, 1]);
    }
}
