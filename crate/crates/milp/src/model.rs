//! Mixed-integer linear model: variables, rows, objective and the big-M registry.

use std::fmt;

use crate::MilpError;

/// Index of a variable inside a [`MipModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// Index of a row inside a [`MipModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sense::Le => f.write_str("<="),
            Sense::Eq => f.write_str("="),
            Sense::Ge => f.write_str(">="),
        }
    }
}

/// Affine expression `sum(coef * var) + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(value: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn var(v: VarId) -> Self {
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &AffineExpr, scale: f64) -> &mut Self {
        if scale == 0.0 {
            return self;
        }
        for &(v, c) in &other.terms {
            self.terms.push((v, c * scale));
        }
        self.constant += other.constant * scale;
        self
    }

    pub fn scaled(&self, scale: f64) -> AffineExpr {
        let mut out = AffineExpr::default();
        out.add_scaled(self, scale);
        out
    }

    /// Merges duplicate variables and drops zero coefficients. Terms end up sorted by variable.
    pub fn compact(&mut self) {
        self.terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        self.terms = merged;
    }

    pub fn compacted(mut self) -> Self {
        self.compact();
        self
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.1 == 0.0)
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * values[v.0]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    /// Compacted coefficients, sorted by variable index.
    pub coeffs: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violates this row (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let act = self.activity(values);
        match self.sense {
            Sense::Le => (act - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - act).max(0.0),
            Sense::Eq => (act - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjSense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub sense: ObjSense,
    pub expr: AffineExpr,
}

/// One indicator row `expr <= (1 - indicator) * m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BigMEntry {
    pub row: RowId,
    pub indicator: VarId,
    pub m: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MipModel {
    vars: Vec<Variable>,
    rows: Vec<Row>,
    objective: Option<Objective>,
    big_m: Vec<BigMEntry>,
}

impl MipModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn objective(&self) -> Option<&Objective> {
        self.objective.as_ref()
    }

    pub fn big_m_registry(&self) -> &[BigMEntry] {
        &self.big_m
    }

    pub fn num_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lower: f64,
        upper: f64,
    ) -> Result<VarId, MilpError> {
        let name = name.into();
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            VarKind::Continuous => (lower, upper),
        };
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(MilpError::InvalidBounds { name, lower, upper });
        }
        self.vars.push(Variable {
            name,
            kind,
            lower,
            upper,
        });
        Ok(VarId(self.vars.len() - 1))
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
            .expect("binary bounds are valid")
    }

    pub fn add_continuous(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
    ) -> Result<VarId, MilpError> {
        self.add_var(name, VarKind::Continuous, lower, upper)
    }

    /// Tightens the bounds of `id` to the intersection with `[lower, upper]`.
    pub fn tighten_bounds(&mut self, id: VarId, lower: f64, upper: f64) -> Result<(), MilpError> {
        let v = &mut self.vars[id.0];
        let lo = v.lower.max(lower);
        let hi = v.upper.min(upper);
        if lo > hi {
            return Err(MilpError::InvalidBounds {
                name: v.name.clone(),
                lower: lo,
                upper: hi,
            });
        }
        v.lower = lo;
        v.upper = hi;
        Ok(())
    }

    /// Adds `expr sense rhs`; the constant of `expr` is moved to the right-hand side.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        expr: &AffineExpr,
        sense: Sense,
        rhs: f64,
    ) -> Result<RowId, MilpError> {
        let name = name.into();
        let mut e = expr.clone();
        e.compact();
        for &(v, c) in &e.terms {
            if v.0 >= self.vars.len() {
                return Err(MilpError::UnknownVariable { row: name, index: v.0 });
            }
            if !c.is_finite() {
                return Err(MilpError::NonFinite { row: name });
            }
        }
        let rhs = rhs - e.constant;
        if !rhs.is_finite() {
            return Err(MilpError::NonFinite { row: name });
        }
        self.rows.push(Row {
            name,
            coeffs: e.terms,
            sense,
            rhs,
        });
        Ok(RowId(self.rows.len() - 1))
    }

    /// Adds `expr <= (1 - indicator) * m`, i.e. `expr + m * indicator <= m`.
    ///
    /// `m` must dominate the maximum of `expr` over the variable box; use
    /// [`MipModel::certified_big_m`] to obtain one.
    pub fn add_indicator(
        &mut self,
        name: impl Into<String>,
        indicator: VarId,
        expr: &AffineExpr,
        m: f64,
    ) -> Result<RowId, MilpError> {
        let name = name.into();
        if !(m.is_finite() && m > 0.0) {
            return Err(MilpError::InvalidBigM { row: name, m });
        }
        if self.vars.get(indicator.0).map(|v| v.kind) != Some(VarKind::Binary) {
            return Err(MilpError::NotBinary { index: indicator.0 });
        }
        let mut e = expr.clone();
        e.add_term(indicator, m);
        let row = self.add_row(name, &e, Sense::Le, m)?;
        self.big_m.push(BigMEntry { row, indicator, m });
        Ok(row)
    }

    /// Interval-arithmetic range of `expr` over the declared variable bounds.
    pub fn expr_range(&self, expr: &AffineExpr) -> (f64, f64) {
        let mut lo = expr.constant;
        let mut hi = expr.constant;
        for &(v, c) in &expr.terms {
            let var = &self.vars[v.0];
            if c > 0.0 {
                lo += c * var.lower;
                hi += c * var.upper;
            } else if c < 0.0 {
                lo += c * var.upper;
                hi += c * var.lower;
            }
        }
        (lo, hi)
    }

    /// Row-wise big-M for `expr <= (1 - b) M`: the interval maximum of `expr` times 1.1, floored at 1.
    pub fn certified_big_m(&self, expr: &AffineExpr) -> f64 {
        let (_, hi) = self.expr_range(expr);
        (1.1 * hi.max(0.0)).max(1.0)
    }

    pub fn set_objective(&mut self, sense: ObjSense, expr: AffineExpr) {
        self.objective = Some(Objective {
            sense,
            expr: expr.compacted(),
        });
    }

    pub fn clear_objective(&mut self) {
        self.objective = None;
    }

    /// Largest row violation of `values`, with the offending row.
    pub fn max_violation(&self, values: &[f64]) -> (f64, Option<RowId>) {
        let mut worst = (0.0, None);
        for (i, row) in self.rows.iter().enumerate() {
            let v = row.violation(values);
            if v > worst.0 {
                worst = (v, Some(RowId(i)));
            }
        }
        for (i, var) in self.vars.iter().enumerate() {
            let x = values[i];
            let v = (var.lower - x).max(x - var.upper).max(0.0);
            if v > worst.0 {
                worst = (v, None);
            }
        }
        worst
    }

    pub fn objective_value(&self, values: &[f64]) -> Option<f64> {
        self.objective.as_ref().map(|o| o.expr.eval(values))
    }
}
