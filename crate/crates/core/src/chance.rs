//! Deterministic reformulations of single chance predicates at a fixed step.
//!
//! Every predicate is first reduced to the distribution of `mu(z_k)` as a function of the
//! decision vector `d = [x_0; u_0; ...; u_{T-1}]`: either a Gaussian form (affine mean and a
//! vector of affine factor rows whose Euclidean norm is the standard deviation) or a finite
//! scenario form for Markov jump systems. Fragments then state exact, inner or outer
//! conditions on those forms.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use nalgebra::{DMatrix, DVector};

use crate::error::{EncodeError, ModelError};
use crate::formula::{ChancePredicate, Signal};
use crate::models::{inv_norm_cdf, psd_factor, Dynamics, LinearGaussian, SystemModel};

/// Margin used to turn strict inequalities into non-strict ones.
pub const EPSILON: f64 = 1e-6;
/// Default cap on enumerated Markov scenarios per predicate.
pub const DEFAULT_SCENARIO_CAP: usize = 4096;

/// Index layout of the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub nx: usize,
    pub nu: usize,
    /// Number of input steps `u_0 .. u_{steps-1}`.
    pub steps: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.nx + self.nu * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x0(&self, i: usize) -> usize {
        i
    }

    pub fn u(&self, t: usize, i: usize) -> usize {
        self.nx + t * self.nu + i
    }
}

/// Affine function `coef . d + constant` of the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub coef: DVector<f64>,
    pub constant: f64,
}

impl Affine {
    pub fn zero(n: usize) -> Self {
        Self {
            coef: DVector::zeros(n),
            constant: 0.0,
        }
    }

    pub fn eval(&self, d: &[f64]) -> f64 {
        self.constant + self.coef.iter().zip(d).map(|(c, x)| c * x).sum::<f64>()
    }

    pub fn is_constant(&self) -> bool {
        self.coef.iter().all(|c| *c == 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.is_constant() && self.constant == 0.0
    }

    pub fn scaled(&self, s: f64) -> Affine {
        Affine {
            coef: &self.coef * s,
            constant: self.constant * s,
        }
    }

    pub fn shifted(&self, c: f64) -> Affine {
        Affine {
            coef: self.coef.clone(),
            constant: self.constant + c,
        }
    }
}

/// Affine map `M d + offset` into a vector space.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub mat: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineMap {
    /// Row `i` as an [`Affine`].
    pub fn row(&self, i: usize) -> Affine {
        Affine {
            coef: self.mat.row(i).transpose(),
            constant: self.offset[i],
        }
    }

    /// `w . (M d + offset)`.
    pub fn dot(&self, w: &DVector<f64>) -> Affine {
        Affine {
            coef: self.mat.transpose() * w,
            constant: w.dot(&self.offset),
        }
    }

    pub fn eval(&self, d: &[f64]) -> DVector<f64> {
        &self.mat * DVector::from_column_slice(d) + &self.offset
    }
}

fn initial_state_map(layout: &Layout) -> AffineMap {
    let mut mat = DMatrix::zeros(layout.nx, layout.len());
    for i in 0..layout.nx {
        mat[(i, layout.x0(i))] = 1.0;
    }
    AffineMap {
        mat,
        offset: DVector::zeros(layout.nx),
    }
}

fn input_map(layout: &Layout, t: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(layout.nu, layout.len());
    for i in 0..layout.nu {
        m[(i, layout.u(t, i))] = 1.0;
    }
    m
}

/// `x_{t+1} = A x_t + B u_t + zeta` applied to an affine state map.
fn step_map(x: &AffineMap, a: &DMatrix<f64>, b: &DMatrix<f64>, zeta: &DVector<f64>, layout: &Layout, t: usize) -> AffineMap {
    AffineMap {
        mat: a * &x.mat + b * input_map(layout, t),
        offset: a * &x.offset + zeta,
    }
}

/// Expected state `x_k` under the mean dynamics (linear-Gaussian and measurement-noise systems).
pub fn mean_state(sys: &SystemModel, layout: &Layout, k: usize) -> AffineMap {
    let mut x = initial_state_map(layout);
    for t in 0..k {
        let (a, b, z) = sys.mean_step(t).expect("mean dynamics exist for this class");
        x = step_map(&x, &a, &b, &z, layout, t);
    }
    x
}

/// Expected state `E[x_k]` as an affine map of the decision vector.
pub fn expected_state(sys: &SystemModel, layout: &Layout, k: usize, scenario_cap: usize) -> Result<AffineMap, EncodeError> {
    match &sys.dynamics {
        Dynamics::MarkovJump(mj) => {
            let count = mj.scenario_count(k).unwrap_or(usize::MAX);
            if count > scenario_cap {
                return Err(EncodeError::ScenarioCap {
                    count,
                    cap: scenario_cap,
                });
            }
            let mut acc = AffineMap {
                mat: DMatrix::zeros(layout.nx, layout.len()),
                offset: DVector::zeros(layout.nx),
            };
            for s in mj.scenarios(k) {
                if s.probability <= 0.0 {
                    continue;
                }
                let mut x = initial_state_map(layout);
                for (t, &l) in s.modes.iter().enumerate() {
                    let m = &mj.modes[l];
                    x = step_map(&x, &m.a, &m.b, &m.zeta, layout, t);
                }
                acc.mat += x.mat * s.probability;
                acc.offset += x.offset * s.probability;
            }
            Ok(acc)
        }
        _ => Ok(mean_state(sys, layout, k)),
    }
}

/// Coefficients of a resolved predicate expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub state: DVector<f64>,
    pub input: DVector<f64>,
    pub noise: f64,
    pub constant: f64,
}

pub fn coefficients(pred: &ChancePredicate, nx: usize, nu: usize) -> Result<Coefficients, ModelError> {
    let mut c = Coefficients {
        state: DVector::zeros(nx),
        input: DVector::zeros(nu),
        noise: 0.0,
        constant: pred.mu.constant,
    };
    for (s, v) in &pred.mu.terms {
        match s {
            Signal::State(i) if *i < nx => c.state[*i] += v,
            Signal::Input(i) if *i < nu => c.input[*i] += v,
            Signal::NoiseProduct => c.noise += v,
            other => return Err(ModelError::UnknownSignal(other.to_string())),
        }
    }
    Ok(c)
}

/// Mean and covariance structure of a linear-Gaussian predicate at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPair {
    /// Expected value of `mu(z_k)`.
    pub mean: Affine,
    /// Second-moment matrix of the centred predicate in the variables `[u_0; ...; u_{k-1}; 1]`.
    pub cov: DMatrix<f64>,
    /// Symmetric square root of `cov`.
    pub sqrt: DMatrix<f64>,
}

impl LambdaPair {
    /// Standard deviation of `mu(z_k)` for the given inputs `u_0 .. u_{k-1}` (stacked).
    pub fn std_dev(&self, u_stacked: &[f64]) -> f64 {
        let mut v = DVector::from_column_slice(u_stacked).push(1.0);
        v = &self.sqrt * v;
        v.norm()
    }
}

/// Builds the mean and the block covariance of `a' x_k + b' u_k + c` for a linear-Gaussian system.
pub fn lambda_pair(
    lg: &LinearGaussian,
    layout: &Layout,
    a: &DVector<f64>,
    b: &DVector<f64>,
    c: f64,
    k: usize,
) -> Result<LambdaPair, ModelError> {
    let nx = layout.nx;
    let nu = layout.nu;
    let nw = lg.b_noise.len();
    // a' A^t for t = 0..k
    let mut a_pow: Vec<DVector<f64>> = Vec::with_capacity(k + 1);
    let mut row = a.clone();
    for _ in 0..=k {
        a_pow.push(row.clone());
        row = lg.a.transpose() * row;
    }

    let mut mean = Affine::zero(layout.len());
    for i in 0..nx {
        mean.coef[layout.x0(i)] += a_pow[k][i];
    }
    for i in 0..nu {
        mean.coef[layout.u(k, i)] += b[i];
    }
    mean.constant += c;
    for t in 1..=k {
        let g = &a_pow[k - t];
        let wbar = lg.w_mean.at(t - 1);
        let mut bt = lg.b_mean.at(t - 1).clone();
        let mut zt = lg.zeta_mean.at(t - 1).clone();
        for l in 0..nw {
            bt += &lg.b_noise[l] * wbar[l];
            zt += &lg.zeta_noise[l] * wbar[l];
        }
        let gb = bt.transpose() * g;
        for i in 0..nu {
            mean.coef[layout.u(t - 1, i)] += gb[i];
        }
        mean.constant += g.dot(&zt);
    }

    // Block structure: alpha_t pairs with u_{k-1-t}, beta_t couples it with the constant.
    let dim = k * nu + 1;
    let mut cov = DMatrix::zeros(dim, dim);
    for t in 0..k {
        let g = &a_pow[t];
        let theta = lg.w_cov.at(k - 1 - t);
        let gb: Vec<DVector<f64>> = lg.b_noise.iter().map(|bn| bn.transpose() * g).collect();
        let gz: Vec<f64> = lg.zeta_noise.iter().map(|z| g.dot(z)).collect();
        let block = k - 1 - t;
        for l1 in 0..nw {
            for l2 in 0..nw {
                let th = theta[(l1, l2)];
                if th == 0.0 {
                    continue;
                }
                for i in 0..nu {
                    for j in 0..nu {
                        cov[(block * nu + i, block * nu + j)] += gb[l1][i] * gb[l2][j] * th;
                    }
                    let beta = gz[l1] * gb[l2][i] * th;
                    cov[(block * nu + i, dim - 1)] += beta;
                    cov[(dim - 1, block * nu + i)] += beta;
                }
            }
        }
    }
    for t in 1..=k {
        let g = &a_pow[k - t];
        let theta = lg.w_cov.at(t - 1);
        let gz: Vec<f64> = lg.zeta_noise.iter().map(|z| g.dot(z)).collect();
        for l1 in 0..nw {
            for l2 in 0..nw {
                cov[(dim - 1, dim - 1)] += gz[l1] * gz[l2] * theta[(l1, l2)];
            }
        }
    }
    let sqrt = crate::models::psd_sqrt(&cov)?;
    Ok(LambdaPair { mean, cov, sqrt })
}

/// `mu(z_k) ~ N(mean(d), |factor(d)|^2)`; an empty factor means `mu` is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianForm {
    pub mean: Affine,
    pub factor: Vec<Affine>,
}

impl GaussianForm {
    pub fn std_dev(&self, d: &[f64]) -> f64 {
        self.factor.iter().map(|r| r.eval(d).powi(2)).sum::<f64>().sqrt()
    }
}

/// `mu(z_k)` takes value `value(d)` in each mode sequence with the given probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioForm {
    pub scenarios: Vec<(Affine, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredicateForm {
    Gaussian(GaussianForm),
    Scenario(ScenarioForm),
}

impl PredicateForm {
    /// Deterministic affine value, if `mu(z_k)` carries no randomness.
    pub fn deterministic(&self) -> Option<&Affine> {
        match self {
            PredicateForm::Gaussian(g) if g.factor.is_empty() => Some(&g.mean),
            PredicateForm::Scenario(s) => {
                let mut live = s.scenarios.iter().filter(|(_, p)| *p > 0.0);
                let first = live.next()?;
                live.all(|(a, _)| a == &first.0).then_some(&first.0)
            }
            _ => None,
        }
    }
}

fn factor_rows(factor: &DMatrix<f64>, to_affine: impl Fn(usize) -> Affine) -> Vec<Affine> {
    (0..factor.nrows())
        .map(to_affine)
        .filter(|a| !a.is_zero())
        .collect()
}

/// Distribution of a resolved predicate's expression at step `k`.
pub fn predicate_form(
    sys: &SystemModel,
    pred: &ChancePredicate,
    layout: &Layout,
    k: usize,
    scenario_cap: usize,
) -> Result<PredicateForm, EncodeError> {
    if layout.steps <= k {
        return Err(EncodeError::HorizonTooShort {
            have: layout.steps,
            need: k + 1,
        });
    }
    let co = coefficients(pred, sys.nx, sys.nu)?;
    let n = layout.len();
    match &sys.dynamics {
        Dynamics::LinearGaussian(lg) => {
            if co.noise != 0.0 {
                return Err(EncodeError::Unsupported {
                    pred: pred.to_string(),
                    reason: "`wxi` only exists for measurement_noise systems".into(),
                });
            }
            let lp = lambda_pair(lg, layout, &co.state, &co.input, co.constant, k)?;
            let f = psd_factor(&lp.cov, "predicate covariance")?;
            let factor = factor_rows(&f, |j| {
                let mut a = Affine::zero(n);
                for t in 0..k {
                    for i in 0..layout.nu {
                        a.coef[layout.u(t, i)] = f[(j, t * layout.nu + i)];
                    }
                }
                a.constant = f[(j, k * layout.nu)];
                a
            });
            Ok(PredicateForm::Gaussian(GaussianForm {
                mean: lp.mean,
                factor,
            }))
        }
        Dynamics::MeasurementNoise(mn) => {
            let x = mean_state(sys, layout, k);
            let mut xi = AffineMap {
                mat: DMatrix::zeros(sys.nx + sys.nu, n),
                offset: DVector::zeros(sys.nx + sys.nu),
            };
            xi.mat.rows_mut(0, sys.nx).copy_from(&x.mat);
            xi.offset.rows_mut(0, sys.nx).copy_from(&x.offset);
            xi.mat.rows_mut(sys.nx, sys.nu).copy_from(&input_map(layout, k));
            let mut mean = x.dot(&co.state);
            for i in 0..sys.nu {
                mean.coef[layout.u(k, i)] += co.input[i];
            }
            mean.constant += co.constant;
            let mut factor = Vec::new();
            if co.noise != 0.0 {
                let wbar = mn.w_mean.at(k);
                let m = xi.dot(wbar).scaled(co.noise);
                mean.coef += &m.coef;
                mean.constant += m.constant;
                let f = psd_factor(mn.w_cov.at(k), "w_cov")?;
                let fm = AffineMap {
                    mat: &f * &xi.mat * co.noise,
                    offset: &f * &xi.offset * co.noise,
                };
                factor = factor_rows(&f, |j| fm.row(j));
            }
            Ok(PredicateForm::Gaussian(GaussianForm { mean, factor }))
        }
        Dynamics::MarkovJump(mj) => {
            if co.noise != 0.0 {
                return Err(EncodeError::Unsupported {
                    pred: pred.to_string(),
                    reason: "`wxi` only exists for measurement_noise systems".into(),
                });
            }
            let count = mj.scenario_count(k).unwrap_or(usize::MAX);
            if count > scenario_cap {
                return Err(EncodeError::ScenarioCap {
                    count,
                    cap: scenario_cap,
                });
            }
            let x0 = initial_state_map(layout);
            let mut scenarios = Vec::new();
            for s in mj.scenarios(k) {
                if s.probability <= 0.0 {
                    continue;
                }
                let mut x = x0.clone();
                for (t, &l) in s.modes.iter().enumerate() {
                    let m = &mj.modes[l];
                    x = step_map(&x, &m.a, &m.b, &m.zeta, layout, t);
                }
                let mut v = x.dot(&co.state);
                for i in 0..sys.nu {
                    v.coef[layout.u(k, i)] += co.input[i];
                }
                v.constant += co.constant;
                scenarios.push((v, s.probability));
            }
            Ok(PredicateForm::Scenario(ScenarioForm { scenarios }))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxMode {
    Exact,
    Under,
    Over,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApproxLevel {
    pub mode: ApproxMode,
    /// Refinement of the piecewise-affine norm bounds; 1 gives the plain L1 bounds.
    pub segments: u32,
}

impl ApproxLevel {
    pub fn under(segments: u32) -> Self {
        Self {
            mode: ApproxMode::Under,
            segments,
        }
    }

    pub fn over(segments: u32) -> Self {
        Self {
            mode: ApproxMode::Over,
            segments,
        }
    }

    pub fn exact() -> Self {
        Self {
            mode: ApproxMode::Exact,
            segments: 1,
        }
    }
}

/// Which bound replaces the Euclidean norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormBound {
    Exact,
    /// Piecewise-affine bound from above.
    Upper(u32),
    /// Piecewise-affine bound from below.
    Lower(u32),
}

/// Facet directions `(cx, cy)` and scale of the polygon bounding `sqrt(x^2 + y^2)` from above
/// on the positive quadrant. Vertices sit on the unit circle at multiples of `pi / 2m`.
pub fn upper_pieces(m: u32) -> (Vec<(f64, f64)>, f64) {
    let m = m.max(1);
    let pieces = (0..m)
        .map(|i| {
            let phi = (2 * i + 1) as f64 * FRAC_PI_4 / m as f64;
            (phi.cos(), phi.sin())
        })
        .collect();
    (pieces, 1.0 / (FRAC_PI_4 / m as f64).cos())
}

/// Tangent directions bounding `sqrt(x^2 + y^2)` from below on the positive quadrant.
pub fn lower_pieces(m: u32) -> Vec<(f64, f64)> {
    let m = m.max(1);
    (0..=m)
        .map(|i| {
            let phi = i as f64 * FRAC_PI_2 / m as f64;
            (phi.cos(), phi.sin())
        })
        .collect()
}

/// Pairing plan for a binary reduction over `n` leaves: each level lists `(left, right)`
/// child positions, with an unpaired last element carried to the next level.
pub fn reduction_levels(n: usize) -> Vec<Vec<(usize, Option<usize>)>> {
    let mut levels = Vec::new();
    let mut width = n;
    while width > 1 {
        let level: Vec<(usize, Option<usize>)> = (0..width.div_ceil(2))
            .map(|i| (2 * i, (2 * i + 1 < width).then_some(2 * i + 1)))
            .collect();
        width = level.len();
        levels.push(level);
    }
    levels
}

fn reduce(values: &[f64], combine: impl Fn(f64, f64) -> f64) -> f64 {
    let mut cur: Vec<f64> = values.to_vec();
    for level in reduction_levels(values.len()) {
        cur = level
            .iter()
            .map(|&(l, r)| match r {
                Some(r) => combine(cur[l], cur[r]),
                None => cur[l],
            })
            .collect();
    }
    cur.first().copied().unwrap_or(0.0)
}

/// Upper bound on `|v|_2`; with one segment it is `|v|_1`.
pub fn norm_upper(v: &[f64], segments: u32) -> f64 {
    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let (pieces, scale) = upper_pieces(segments);
    reduce(&abs, |x, y| {
        scale
            * pieces
                .iter()
                .map(|(c, s)| c * x + s * y)
                .fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Lower bound on `|v|_2`; with one segment it is `|v|_1 / sqrt(len)`.
pub fn norm_lower(v: &[f64], segments: u32) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let l1 = abs.iter().sum::<f64>() / (abs.len() as f64).sqrt();
    if segments <= 1 {
        return l1;
    }
    let pieces = lower_pieces(segments);
    let tree = reduce(&abs, |x, y| {
        pieces
            .iter()
            .map(|(c, s)| c * x + s * y)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    l1.max(tree)
}

/// A deterministic condition `value(d) <= 0` standing in for one literal.
#[derive(Debug, Clone, PartialEq)]
pub enum Fragment {
    Tautology,
    Contradiction,
    /// `expr <= 0`.
    Affine(Affine),
    /// `mean + multiplier * bound(|factor|) <= 0`.
    Norm {
        mean: Affine,
        factor: Vec<Affine>,
        multiplier: f64,
        bound: NormBound,
    },
    /// `mean <= 0` and every factor row equal to zero: the predicate holds almost surely.
    AlmostSure { mean: Affine, factor: Vec<Affine> },
    /// Probability mass of scenarios with `value <= 0` is at least `threshold`.
    Scenario {
        scenarios: Vec<(Affine, f64)>,
        threshold: f64,
    },
}

impl Fragment {
    /// Whether the condition holds at `d`, with absolute slack `tol`.
    pub fn holds(&self, d: &[f64], tol: f64) -> bool {
        match self {
            Fragment::Tautology => true,
            Fragment::Contradiction => false,
            Fragment::Affine(a) => a.eval(d) <= tol,
            Fragment::Norm { .. } => self.value(d) <= tol,
            Fragment::AlmostSure { mean, factor } => {
                mean.eval(d) <= tol && factor.iter().all(|r| r.eval(d).abs() <= tol)
            }
            Fragment::Scenario {
                scenarios,
                threshold,
            } => {
                let mass: f64 = scenarios
                    .iter()
                    .filter(|(a, _)| a.eval(d) <= tol)
                    .map(|(_, p)| p)
                    .sum();
                mass >= threshold - 1e-12
            }
        }
    }

    /// Left-hand side of the condition for the affine and norm kinds.
    pub fn value(&self, d: &[f64]) -> f64 {
        match self {
            Fragment::Affine(a) => a.eval(d),
            Fragment::Norm {
                mean,
                factor,
                multiplier,
                bound,
            } => {
                let v: Vec<f64> = factor.iter().map(|r| r.eval(d)).collect();
                let n = match bound {
                    NormBound::Exact => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
                    NormBound::Upper(s) => norm_upper(&v, *s),
                    NormBound::Lower(s) => norm_lower(&v, *s),
                };
                mean.eval(d) + multiplier * n
            }
            _ => {
                if self.holds(d, 0.0) {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }
}

fn gaussian_fragment(mean: Affine, factor: Vec<Affine>, p: f64, level: ApproxLevel) -> Result<Fragment, ModelError> {
    if factor.is_empty() {
        return Ok(Fragment::Affine(mean));
    }
    let q = inv_norm_cdf(p)?;
    if q == 0.0 {
        return Ok(Fragment::Affine(mean));
    }
    let s = level.segments.max(1);
    let bound = match (level.mode, q > 0.0) {
        (ApproxMode::Exact, _) => NormBound::Exact,
        (ApproxMode::Under, true) | (ApproxMode::Over, false) => NormBound::Upper(s),
        (ApproxMode::Under, false) | (ApproxMode::Over, true) => NormBound::Lower(s),
    };
    Ok(Fragment::Norm {
        mean,
        factor,
        multiplier: q,
        bound,
    })
}

/// Condition for the literal `pred` (or its negation) at step `k` of `form`.
///
/// Predicates written without a probability must hold almost surely. A negated predicate
/// whose expression is deterministic is complemented directly; otherwise
/// `P{mu <= 0} < p` is replaced by `P{-mu + eps <= 0} >= 1 - p + eps` (inner) or
/// `P{-mu <= 0} >= 1 - p` (outer).
pub fn literal_fragment(
    form: &PredicateForm,
    pred: &ChancePredicate,
    negated: bool,
    level: ApproxLevel,
) -> Result<Fragment, EncodeError> {
    if !pred.deterministic && !(pred.p > 0.0 && pred.p < 1.0) {
        return Err(EncodeError::ProbabilityEndpoint(pred.p));
    }
    let p = if pred.deterministic { 1.0 } else { pred.p };
    if let Some(value) = form.deterministic() {
        return Ok(match (negated, level.mode) {
            (false, _) => Fragment::Affine(value.clone()),
            (true, ApproxMode::Over) => Fragment::Affine(value.scaled(-1.0)),
            // exact and inner readings of `value > 0` both use the margin
            (true, _) => Fragment::Affine(value.scaled(-1.0).shifted(EPSILON)),
        });
    }
    let (sign, shift, p_lit) = match (negated, level.mode) {
        (false, _) => (1.0, 0.0, p),
        (true, ApproxMode::Over) => (-1.0, 0.0, 1.0 - p),
        (true, _) => (-1.0, EPSILON, 1.0 - p + EPSILON),
    };
    if p_lit <= 0.0 {
        return Ok(Fragment::Tautology);
    }
    if p_lit > 1.0 + 1e-12 {
        return Ok(Fragment::Contradiction);
    }
    match form {
        PredicateForm::Gaussian(g) => {
            let mean = g.mean.scaled(sign).shifted(shift);
            if p_lit >= 1.0 {
                return Ok(Fragment::AlmostSure {
                    mean,
                    factor: g.factor.clone(),
                });
            }
            Ok(gaussian_fragment(mean, g.factor.clone(), p_lit, level)?)
        }
        PredicateForm::Scenario(s) => Ok(Fragment::Scenario {
            scenarios: s
                .scenarios
                .iter()
                .map(|(a, p)| (a.scaled(sign).shifted(shift), *p))
                .collect(),
            threshold: p_lit.min(1.0),
        }),
    }
}

/// `P{mu(z_k) <= 0}` at the decision `d`.
pub fn probability(form: &PredicateForm, d: &[f64]) -> f64 {
    match form {
        PredicateForm::Gaussian(g) => {
            let m = g.mean.eval(d);
            let s = g.std_dev(d);
            if s <= 1e-12 {
                if m <= 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                crate::models::norm_cdf(-m / s)
            }
        }
        PredicateForm::Scenario(sc) => sc
            .scenarios
            .iter()
            .filter(|(a, _)| a.eval(d) <= 0.0)
            .map(|(_, p)| p)
            .sum(),
    }
}

/// Exact truth of a literal at `d`, with every comparison relaxed by `tol` in favour of the
/// literal. Predicates written without a probability must hold almost surely.
pub fn literal_holds(form: &PredicateForm, pred: &ChancePredicate, negated: bool, d: &[f64], tol: f64) -> bool {
    let sign = if negated { -1.0 } else { 1.0 };
    match form {
        PredicateForm::Gaussian(g) => {
            let m = g.mean.eval(d);
            let s = g.std_dev(d);
            let positive = if pred.deterministic || pred.p >= 1.0 {
                if negated {
                    return m > -tol || s > tol;
                }
                return m <= tol && s <= tol;
            } else if pred.p <= 0.0 {
                return !negated;
            } else {
                let q = inv_norm_cdf(pred.p).expect("probability inside (0, 1)");
                m + q * s
            };
            // positive: value <= 0 ; negated: value > 0
            sign * positive <= tol
        }
        PredicateForm::Scenario(sc) => {
            let p = if pred.deterministic { 1.0 } else { pred.p };
            let shift = sign * tol;
            let mass: f64 = sc
                .scenarios
                .iter()
                .filter(|(a, _)| a.eval(d) <= shift)
                .map(|(_, p)| p)
                .sum();
            if negated {
                mass < p - 1e-12
            } else {
                mass >= p - 1e-12
            }
        }
    }
}
