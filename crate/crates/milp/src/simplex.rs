//! Dense bounded-variable primal simplex.
//!
//! Two phases over the tableau `B^-1 [A | I | R]` where `I` holds one slack per row and
//! `R` holds artificial columns for rows whose slack cannot absorb the initial residual.
//! Pricing is Dantzig's rule; after a run of degenerate pivots it falls back to Bland's
//! rule until progress resumes.

use crate::model::Sense;

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
/// Residual infeasibility, summed over artificials, above which phase one reports infeasible.
const PHASE_ONE_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 30;
const REFRESH_EVERY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    pub status: LpStatus,
    /// Structural values (only meaningful when optimal).
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Dense LP `min c^T x  s.t.  A x (sense) b,  lower <= x <= upper`.
#[derive(Debug, Clone)]
pub(crate) struct DenseLp {
    pub m: usize,
    pub n: usize,
    /// Row-major `m x n`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sense: Vec<Sense>,
    pub cost: Vec<f64>,
}

struct Tableau<'a> {
    lp: &'a DenseLp,
    ncols: usize,
    /// Row-major `m x ncols`.
    t: Vec<f64>,
    /// Reduced costs for the active phase.
    d: Vec<f64>,
    x: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    art_start: usize,
    art_row: Vec<usize>,
    art_sign: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
}

impl<'a> Tableau<'a> {
    fn new(lp: &'a DenseLp, lower: &[f64], upper: &[f64]) -> Self {
        let (m, n) = (lp.m, lp.n);
        let mut x0 = vec![0.0; n];
        for j in 0..n {
            x0[j] = if lower[j].is_finite() {
                lower[j]
            } else if upper[j].is_finite() {
                upper[j]
            } else {
                0.0
            };
        }
        let mut residual = lp.b.clone();
        for i in 0..m {
            let row = &lp.a[i * n..(i + 1) * n];
            residual[i] -= row.iter().zip(&x0).map(|(a, x)| a * x).sum::<f64>();
        }
        let mut art_row = Vec::new();
        let mut art_sign = Vec::new();
        for i in 0..m {
            let r = residual[i];
            let absorbed = match lp.sense[i] {
                Sense::Le => r >= 0.0,
                Sense::Ge => r <= 0.0,
                Sense::Eq => r == 0.0,
            };
            if !absorbed {
                art_row.push(i);
                art_sign.push(if r >= 0.0 { 1.0 } else { -1.0 });
            }
        }
        let art_start = n + m;
        let ncols = art_start + art_row.len();
        let mut t = vec![0.0; m * ncols];
        let mut lo = vec![0.0; ncols];
        let mut hi = vec![0.0; ncols];
        let mut x = vec![0.0; ncols];
        lo[..n].copy_from_slice(lower);
        hi[..n].copy_from_slice(upper);
        x[..n].copy_from_slice(&x0);
        for i in 0..m {
            let (l, h) = match lp.sense[i] {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            lo[n + i] = l;
            hi[n + i] = h;
        }
        let mut basis: Vec<usize> = (0..m).map(|i| n + i).collect();
        let mut row_sign = vec![1.0; m];
        for (k, (&i, &s)) in art_row.iter().zip(&art_sign).enumerate() {
            let col = art_start + k;
            lo[col] = 0.0;
            hi[col] = f64::INFINITY;
            basis[i] = col;
            row_sign[i] = s;
        }
        for i in 0..m {
            let s = row_sign[i];
            let dst = &mut t[i * ncols..(i + 1) * ncols];
            for j in 0..n {
                dst[j] = s * lp.a[i * n + j];
            }
            dst[n + i] = s;
        }
        for (k, &i) in art_row.iter().enumerate() {
            t[i * ncols + art_start + k] = 1.0;
        }
        for i in 0..m {
            x[basis[i]] = row_sign[i] * residual[i];
        }
        let mut is_basic = vec![false; ncols];
        for &b in &basis {
            is_basic[b] = true;
        }
        let max_iterations = 50 * (m + ncols) + 1000;
        Self {
            lp,
            ncols,
            t,
            d: vec![0.0; ncols],
            x,
            lo,
            hi,
            basis,
            is_basic,
            art_start,
            art_row,
            art_sign,
            iterations: 0,
            max_iterations,
        }
    }

    fn set_costs(&mut self, cost: &[f64]) {
        let m = self.lp.m;
        let nc = self.ncols;
        self.d.copy_from_slice(cost);
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * nc..(i + 1) * nc];
                for (dj, tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
    }

    /// Recomputes basic values from the nonbasic ones; slack columns of the tableau hold `B^-1`.
    fn refresh_basic_values(&mut self) {
        let (m, n) = (self.lp.m, self.lp.n);
        let nc = self.ncols;
        let mut rhs = self.lp.b.clone();
        for j in 0..self.ncols {
            if self.is_basic[j] || self.x[j] == 0.0 {
                continue;
            }
            let xj = self.x[j];
            if j < n {
                for i in 0..m {
                    rhs[i] -= self.lp.a[i * n + j] * xj;
                }
            } else if j < self.art_start {
                rhs[j - n] -= xj;
            } else {
                let k = j - self.art_start;
                rhs[self.art_row[k]] -= self.art_sign[k] * xj;
            }
        }
        for r in 0..m {
            let row = &self.t[r * nc..(r + 1) * nc];
            let mut v = 0.0;
            for i in 0..m {
                v += row[n + i] * rhs[i];
            }
            self.x[self.basis[r]] = v;
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let m = self.lp.m;
        let nc = self.ncols;
        let piv = self.t[r * nc + q];
        {
            let row = &mut self.t[r * nc..(r + 1) * nc];
            for v in row.iter_mut() {
                *v /= piv;
            }
            row[q] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        for i in 0..m {
            if i == r {
                continue;
            }
            let row = if i < r {
                &mut before[i * nc..(i + 1) * nc]
            } else {
                let k = i - r - 1;
                &mut after[k * nc..(k + 1) * nc]
            };
            let f = row[q];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    if *p != 0.0 {
                        *v -= f * p;
                    }
                }
                row[q] = 0.0;
            }
        }
        let f = self.d[q];
        if f != 0.0 {
            for (v, p) in self.d.iter_mut().zip(prow.iter()) {
                if *p != 0.0 {
                    *v -= f * p;
                }
            }
            self.d[q] = 0.0;
        }
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
    }

    /// Runs primal simplex iterations for the current costs. `allow` filters entering columns.
    fn optimize(&mut self, allow: impl Fn(usize) -> bool) -> LpStatus {
        let m = self.lp.m;
        let nc = self.ncols;
        let mut degenerate = 0usize;
        let mut since_refresh = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return LpStatus::IterationLimit;
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let mut enter: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..nc {
                if self.is_basic[j] || !allow(j) || self.lo[j] == self.hi[j] {
                    continue;
                }
                let dj = self.d[j];
                let at_upper = self.x[j] >= self.hi[j] && self.hi[j].is_finite();
                let at_lower = self.x[j] <= self.lo[j] && self.lo[j].is_finite();
                let dir = if dj < -COST_TOL && !at_upper {
                    1.0
                } else if dj > COST_TOL && !at_lower {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    enter = Some((j, dir));
                    break;
                }
                if dj.abs() > best {
                    best = dj.abs();
                    enter = Some((j, dir));
                }
            }
            let Some((q, dir)) = enter else {
                return LpStatus::Optimal;
            };

            // Ratio test.
            let mut theta = self.hi[q] - self.lo[q];
            let mut leave: Option<usize> = None;
            let mut leave_piv = 0.0;
            for i in 0..m {
                let tiq = self.t[i * nc + q];
                if tiq.abs() <= PIVOT_TOL {
                    continue;
                }
                let bvar = self.basis[i];
                let delta = -dir * tiq;
                let ratio = if delta < 0.0 {
                    if !self.lo[bvar].is_finite() {
                        continue;
                    }
                    ((self.x[bvar] - self.lo[bvar]) / -delta).max(0.0)
                } else {
                    if !self.hi[bvar].is_finite() {
                        continue;
                    }
                    ((self.hi[bvar] - self.x[bvar]) / delta).max(0.0)
                };
                let better = match leave {
                    _ if ratio < theta - 1e-12 => true,
                    Some(l) if ratio <= theta + 1e-12 => {
                        if bland {
                            bvar < self.basis[l]
                        } else {
                            tiq.abs() > leave_piv
                        }
                    }
                    None if ratio <= theta + 1e-12 && !theta.is_finite() => true,
                    _ => false,
                };
                if better {
                    theta = ratio;
                    leave = Some(i);
                    leave_piv = tiq.abs();
                }
            }
            if !theta.is_finite() {
                return LpStatus::Unbounded;
            }
            self.iterations += 1;
            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            let step = dir * theta;
            if step != 0.0 {
                for i in 0..m {
                    let tiq = self.t[i * nc + q];
                    if tiq != 0.0 {
                        let b = self.basis[i];
                        self.x[b] -= step * tiq;
                    }
                }
            }
            match leave {
                None => {
                    // Bound flip.
                    self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                }
                Some(r) => {
                    let lv = self.basis[r];
                    let new_q = self.x[q] + step;
                    // Leaving variable lands exactly on the bound it reached.
                    let tiq = self.t[r * nc + q];
                    self.x[lv] = if -dir * tiq < 0.0 { self.lo[lv] } else { self.hi[lv] };
                    self.pivot(r, q);
                    self.x[q] = new_q;
                    since_refresh += 1;
                    if since_refresh >= REFRESH_EVERY {
                        self.refresh_basic_values();
                        since_refresh = 0;
                    }
                }
            }
        }
    }
}

pub(crate) fn solve_lp(lp: &DenseLp, lower: &[f64], upper: &[f64]) -> LpSolution {
    let n = lp.n;
    let fail = |status, iterations| LpSolution {
        status,
        x: Vec::new(),
        objective: f64::NAN,
        iterations,
    };
    for j in 0..n {
        if lower[j] > upper[j] + 1e-12 {
            return fail(LpStatus::Infeasible, 0);
        }
    }
    let mut tab = Tableau::new(lp, lower, upper);
    let art_start = tab.art_start;

    if !tab.art_row.is_empty() {
        let mut cost = vec![0.0; tab.ncols];
        for c in cost.iter_mut().skip(art_start) {
            *c = 1.0;
        }
        tab.set_costs(&cost);
        match tab.optimize(|_| true) {
            LpStatus::Optimal => {}
            LpStatus::IterationLimit => return fail(LpStatus::IterationLimit, tab.iterations),
            // Phase one is bounded below by zero.
            LpStatus::Unbounded | LpStatus::Infeasible => {
                return fail(LpStatus::Infeasible, tab.iterations)
            }
        }
        tab.refresh_basic_values();
        let scale = 1.0 + lp.b.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let infeas: f64 = tab.x[art_start..].iter().sum();
        if infeas > PHASE_ONE_TOL + 1e-12 * scale {
            return fail(LpStatus::Infeasible, tab.iterations);
        }
        for j in art_start..tab.ncols {
            tab.lo[j] = 0.0;
            tab.hi[j] = 0.0;
            if !tab.is_basic[j] {
                tab.x[j] = 0.0;
            }
        }
    }

    let mut cost = vec![0.0; tab.ncols];
    cost[..n].copy_from_slice(&lp.cost);
    tab.set_costs(&cost);
    let status = tab.optimize(|j| j < art_start);
    tab.refresh_basic_values();
    match status {
        LpStatus::Optimal => {
            let x: Vec<f64> = (0..n)
                .map(|j| tab.x[j].clamp(lower[j], upper[j]))
                .collect();
            let objective = x.iter().zip(&lp.cost).map(|(a, b)| a * b).sum();
            LpSolution {
                status,
                x,
                objective,
                iterations: tab.iterations,
            }
        }
        other => fail(other, tab.iterations),
    }
}
