//! Bounded StSTL syntax: linear expressions, chance predicates, formulas, negation
//! normal form, horizons and trace evaluation.

use std::fmt;

use crate::error::FormulaError;

/// A signal read by a predicate at the step where the predicate is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    /// State component, 0-based.
    State(usize),
    /// Input component, 0-based.
    Input(usize),
    /// A state or input referred to by a declared name; resolved against a system.
    Named(String),
    /// The random inner product `w_k' xi_k` of a measurement-noise system.
    NoiseProduct,
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::State(i) => write!(f, "x[{}]", i + 1),
            Signal::Input(i) => write!(f, "u[{}]", i + 1),
            Signal::Named(n) => f.write_str(n),
            Signal::NoiseProduct => f.write_str("wxi"),
        }
    }
}

/// `sum(coef * signal) + constant`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    pub terms: Vec<(Signal, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(signal: Signal, coef: f64) -> Self {
        Self {
            terms: vec![(signal, coef)],
            constant: 0.0,
        }
    }

    pub fn add(&mut self, other: &LinExpr, scale: f64) {
        for (s, c) in &other.terms {
            match self.terms.iter_mut().find(|(t, _)| t == s) {
                Some(entry) => entry.1 += scale * c,
                None => self.terms.push((s.clone(), scale * c)),
            }
        }
        self.terms.retain(|t| t.1 != 0.0);
        self.constant += scale * other.constant;
    }

    pub fn negated(&self) -> LinExpr {
        let mut out = LinExpr::default();
        out.add(self, -1.0);
        out
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn has_noise(&self) -> bool {
        self.terms.iter().any(|(s, _)| *s == Signal::NoiseProduct)
    }

    /// Value for the given state, input and noise inner product; names must be resolved.
    pub fn eval(&self, x: &[f64], u: &[f64], noise_product: f64) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|(s, c)| {
                    c * match s {
                        Signal::State(i) => x[*i],
                        Signal::Input(i) => u[*i],
                        Signal::NoiseProduct => noise_product,
                        Signal::Named(n) => panic!("unresolved signal `{n}`"),
                    }
                })
                .sum::<f64>()
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

impl fmt::Display for LinExpr {
    /// Prints the variable part only; the constant goes to the right-hand side.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, (s, c)) in self.terms.iter().enumerate() {
            let (sign, mag) = if *c < 0.0 { ("-", -c) } else { ("+", *c) };
            if i == 0 {
                if sign == "-" {
                    f.write_str("-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            if mag == 1.0 {
                write!(f, "{s}")?;
            } else {
                write!(f, "{}*{s}", fmt_num(mag))?;
            }
        }
        Ok(())
    }
}

/// `P{ mu <= 0 } >= p`, or the plain constraint `mu <= 0` when `deterministic`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChancePredicate {
    pub mu: LinExpr,
    pub p: f64,
    /// Written without a probability; must hold almost surely.
    pub deterministic: bool,
}

impl ChancePredicate {
    pub fn chance(mu: LinExpr, p: f64) -> Self {
        Self {
            mu,
            p,
            deterministic: false,
        }
    }

    pub fn deterministic(mu: LinExpr) -> Self {
        Self {
            mu,
            p: 1.0,
            deterministic: true,
        }
    }

    /// Constant predicate that is always satisfied (`0 <= 0`).
    pub fn truth() -> Self {
        Self::deterministic(LinExpr::constant(0.0))
    }

    /// Constant predicate that is never satisfied (`1 <= 0`).
    pub fn falsity() -> Self {
        Self::deterministic(LinExpr::constant(1.0))
    }

    /// Truth value of a predicate whose expression has no signals.
    pub fn constant_value(&self) -> Option<bool> {
        self.mu.is_constant().then_some(self.mu.constant <= 0.0)
    }
}

impl fmt::Display for ChancePredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rhs = fmt_num(-self.mu.constant + 0.0);
        if self.deterministic {
            write!(f, "{} <= {rhs}", self.mu)
        } else {
            write!(f, "P{{ {} <= {rhs} }} >= {}", self.mu, fmt_num(self.p))
        }
    }
}

/// Bounded StSTL formula. Intervals are relative integer step offsets `lo <= hi`.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Atom(ChancePredicate),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Globally(u32, u32, Box<Formula>),
    Eventually(u32, u32, Box<Formula>),
    Until(u32, u32, Box<Formula>, Box<Formula>),
    WeakUntil(u32, u32, Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(p: ChancePredicate) -> Self {
        Formula::Atom(p)
    }

    pub fn truth() -> Self {
        Formula::Atom(ChancePredicate::truth())
    }

    pub fn falsity() -> Self {
        Formula::Atom(ChancePredicate::falsity())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn globally(lo: u32, hi: u32, f: Formula) -> Self {
        Formula::Globally(lo, hi, Box::new(f))
    }

    pub fn eventually(lo: u32, hi: u32, f: Formula) -> Self {
        Formula::Eventually(lo, hi, Box::new(f))
    }

    pub fn until(lo: u32, hi: u32, a: Formula, b: Formula) -> Self {
        Formula::Until(lo, hi, Box::new(a), Box::new(b))
    }

    pub fn weak_until(lo: u32, hi: u32, a: Formula, b: Formula) -> Self {
        Formula::WeakUntil(lo, hi, Box::new(a), Box::new(b))
    }

    /// Checks interval ordering and probability ranges.
    pub fn validate(&self) -> Result<(), FormulaError> {
        let check = |lo: u32, hi: u32| {
            if lo > hi {
                Err(FormulaError::ReversedInterval { lo, hi })
            } else {
                Ok(())
            }
        };
        match self {
            Formula::Atom(a) => {
                if !(0.0..=1.0).contains(&a.p) {
                    return Err(FormulaError::ProbabilityRange(a.p));
                }
                if a.mu.terms.iter().any(|t| !t.1.is_finite()) || !a.mu.constant.is_finite() {
                    return Err(FormulaError::NonFinite);
                }
                Ok(())
            }
            Formula::Not(f) => f.validate(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.validate()?;
                b.validate()
            }
            Formula::Globally(lo, hi, f) | Formula::Eventually(lo, hi, f) => {
                check(*lo, *hi)?;
                f.validate()
            }
            Formula::Until(lo, hi, a, b) | Formula::WeakUntil(lo, hi, a, b) => {
                check(*lo, *hi)?;
                a.validate()?;
                b.validate()
            }
        }
    }

    /// Number of steps beyond the evaluation step that satisfaction depends on.
    pub fn horizon(&self) -> u32 {
        match self {
            Formula::Atom(_) => 0,
            Formula::Not(f) => f.horizon(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.horizon().max(b.horizon())
            }
            Formula::Globally(_, hi, f) | Formula::Eventually(_, hi, f) => hi + f.horizon(),
            Formula::Until(_, hi, a, b) | Formula::WeakUntil(_, hi, a, b) => {
                hi + a.horizon().max(b.horizon())
            }
        }
    }

    /// Distinct predicates in first-occurrence order; the index is the atom id used by traces.
    pub fn atoms(&self) -> Vec<ChancePredicate> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut Vec<ChancePredicate>) {
        match self {
            Formula::Atom(a) => {
                if !out.contains(a) {
                    out.push(a.clone());
                }
            }
            Formula::Not(f) | Formula::Globally(_, _, f) | Formula::Eventually(_, _, f) => {
                f.collect_atoms(out)
            }
            Formula::And(a, b)
            | Formula::Or(a, b)
            | Formula::Implies(a, b)
            | Formula::Until(_, _, a, b)
            | Formula::WeakUntil(_, _, a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    /// Applies `f` to every predicate in place.
    pub fn map_atoms(&mut self, f: &mut impl FnMut(&mut ChancePredicate)) {
        match self {
            Formula::Atom(a) => f(a),
            Formula::Not(g) | Formula::Globally(_, _, g) | Formula::Eventually(_, _, g) => {
                g.map_atoms(f)
            }
            Formula::And(a, b)
            | Formula::Or(a, b)
            | Formula::Implies(a, b)
            | Formula::Until(_, _, a, b)
            | Formula::WeakUntil(_, _, a, b) => {
                a.map_atoms(f);
                b.map_atoms(f);
            }
        }
    }

    /// Evaluates at step `k` given `atom(id, step)` truth values.
    pub fn eval_with(&self, k: usize, atom: &mut impl FnMut(usize, usize) -> bool) -> bool {
        let atoms = self.atoms();
        self.eval_rec(k, &atoms, atom)
    }

    fn eval_rec(
        &self,
        k: usize,
        ids: &[ChancePredicate],
        atom: &mut impl FnMut(usize, usize) -> bool,
    ) -> bool {
        match self {
            Formula::Atom(a) => {
                let id = ids.iter().position(|b| b == a).expect("atom collected");
                atom(id, k)
            }
            Formula::Not(f) => !f.eval_rec(k, ids, atom),
            Formula::And(a, b) => a.eval_rec(k, ids, atom) && b.eval_rec(k, ids, atom),
            Formula::Or(a, b) => a.eval_rec(k, ids, atom) || b.eval_rec(k, ids, atom),
            Formula::Implies(a, b) => !a.eval_rec(k, ids, atom) || b.eval_rec(k, ids, atom),
            Formula::Globally(lo, hi, f) => {
                (k + *lo as usize..=k + *hi as usize).all(|i| f.eval_rec(i, ids, atom))
            }
            Formula::Eventually(lo, hi, f) => {
                (k + *lo as usize..=k + *hi as usize).any(|i| f.eval_rec(i, ids, atom))
            }
            Formula::Until(lo, hi, a, b) => until(k, *lo, *hi, &mut |right, i| {
                if right {
                    b.eval_rec(i, ids, atom)
                } else {
                    a.eval_rec(i, ids, atom)
                }
            }),
            Formula::WeakUntil(lo, hi, a, b) => {
                let lo_k = k + *lo as usize;
                let hi_k = k + *hi as usize;
                let strong = {
                    let mut found = false;
                    for i in lo_k..=hi_k {
                        if b.eval_rec(i, ids, atom)
                            && (lo_k..i).all(|j| a.eval_rec(j, ids, atom))
                        {
                            found = true;
                            break;
                        }
                    }
                    found
                };
                strong || (lo_k..=hi_k).all(|i| a.eval_rec(i, ids, atom))
            }
        }
    }

    /// Evaluates at step `k` on a trace indexed `[step][atom id]`.
    pub fn eval_on_trace(&self, trace: &[Vec<bool>], k: usize) -> Result<bool, FormulaError> {
        let need = k + self.horizon() as usize + 1;
        if trace.len() < need {
            return Err(FormulaError::TraceTooShort {
                have: trace.len(),
                need,
            });
        }
        let n_atoms = self.atoms().len();
        if let Some(row) = trace.iter().take(need).find(|r| r.len() < n_atoms) {
            return Err(FormulaError::TraceWidth {
                have: row.len(),
                need: n_atoms,
            });
        }
        Ok(self.eval_with(k, &mut |id, i| trace[i][id]))
    }

    /// Negation normal form; atom ids refer to [`Formula::atoms`] of `self`.
    pub fn to_nnf(&self) -> Nnf {
        let atoms = self.atoms();
        nnf(self, false, &atoms)
    }
}

fn until(
    k: usize,
    lo: u32,
    hi: u32,
    eval: &mut impl FnMut(bool, usize) -> bool,
) -> bool {
    let lo_k = k + lo as usize;
    for i in lo_k..=k + hi as usize {
        if eval(true, i) && (lo_k..i).all(|j| eval(false, j)) {
            return true;
        }
    }
    false
}

fn nnf(f: &Formula, neg: bool, ids: &[ChancePredicate]) -> Nnf {
    match f {
        Formula::Atom(a) => Nnf::Atom {
            id: ids.iter().position(|b| b == a).expect("atom collected"),
            pred: a.clone(),
            negated: neg,
        },
        Formula::Not(g) => nnf(g, !neg, ids),
        Formula::And(a, b) if !neg => Nnf::and(nnf(a, false, ids), nnf(b, false, ids)),
        Formula::And(a, b) => Nnf::or(nnf(a, true, ids), nnf(b, true, ids)),
        Formula::Or(a, b) if !neg => Nnf::or(nnf(a, false, ids), nnf(b, false, ids)),
        Formula::Or(a, b) => Nnf::and(nnf(a, true, ids), nnf(b, true, ids)),
        Formula::Implies(a, b) if !neg => Nnf::or(nnf(a, true, ids), nnf(b, false, ids)),
        Formula::Implies(a, b) => Nnf::and(nnf(a, false, ids), nnf(b, true, ids)),
        Formula::Globally(lo, hi, g) if !neg => Nnf::Globally(*lo, *hi, Box::new(nnf(g, false, ids))),
        Formula::Globally(lo, hi, g) => Nnf::Until(
            *lo,
            *hi,
            Box::new(Nnf::truth()),
            Box::new(nnf(g, true, ids)),
        ),
        Formula::Eventually(lo, hi, g) if !neg => Nnf::Until(
            *lo,
            *hi,
            Box::new(Nnf::truth()),
            Box::new(nnf(g, false, ids)),
        ),
        Formula::Eventually(lo, hi, g) => Nnf::Globally(*lo, *hi, Box::new(nnf(g, true, ids))),
        Formula::Until(lo, hi, a, b) if !neg => Nnf::Until(
            *lo,
            *hi,
            Box::new(nnf(a, false, ids)),
            Box::new(nnf(b, false, ids)),
        ),
        Formula::Until(lo, hi, a, b) => Nnf::Release(
            *lo,
            *hi,
            Box::new(nnf(a, true, ids)),
            Box::new(nnf(b, true, ids)),
        ),
        Formula::WeakUntil(lo, hi, a, b) => {
            let expanded = Formula::or(
                Formula::Until(*lo, *hi, a.clone(), b.clone()),
                Formula::Globally(*lo, *hi, a.clone()),
            );
            nnf(&expanded, neg, ids)
        }
    }
}

/// Formula in negation normal form. Negation only appears on atoms.
#[derive(Debug, Clone, PartialEq)]
pub enum Nnf {
    Atom {
        id: usize,
        pred: ChancePredicate,
        negated: bool,
    },
    And(Vec<Nnf>),
    Or(Vec<Nnf>),
    Globally(u32, u32, Box<Nnf>),
    /// Bounded until: some `i` in the window satisfies the right side and the left side
    /// holds on `[lo, i-1]`.
    Until(u32, u32, Box<Nnf>, Box<Nnf>),
    /// Dual of until: every `i` in the window satisfies the right side or the left side
    /// held at some `j` in `[lo, i-1]`.
    Release(u32, u32, Box<Nnf>, Box<Nnf>),
}

impl Nnf {
    /// The constant-true atom. Its id is `usize::MAX` since it may not occur in the source.
    pub fn truth() -> Self {
        Nnf::Atom {
            id: usize::MAX,
            pred: ChancePredicate::truth(),
            negated: false,
        }
    }

    fn and(a: Nnf, b: Nnf) -> Self {
        let mut v = Vec::new();
        for x in [a, b] {
            match x {
                Nnf::And(xs) => v.extend(xs),
                x => v.push(x),
            }
        }
        Nnf::And(v)
    }

    fn or(a: Nnf, b: Nnf) -> Self {
        let mut v = Vec::new();
        for x in [a, b] {
            match x {
                Nnf::Or(xs) => v.extend(xs),
                x => v.push(x),
            }
        }
        Nnf::Or(v)
    }

    pub fn horizon(&self) -> u32 {
        match self {
            Nnf::Atom { .. } => 0,
            Nnf::And(v) | Nnf::Or(v) => v.iter().map(Nnf::horizon).max().unwrap_or(0),
            Nnf::Globally(_, hi, f) => hi + f.horizon(),
            Nnf::Until(_, hi, a, b) | Nnf::Release(_, hi, a, b) => {
                hi + a.horizon().max(b.horizon())
            }
        }
    }

    /// Evaluates given `lit(pred, id, step, negated)`, the truth of each literal.
    ///
    /// For exact atom truth values the literal of a negated atom is the complement of the
    /// positive one; a caller may also supply independent judgements per polarity.
    pub fn eval_with(
        &self,
        k: usize,
        lit: &mut impl FnMut(&ChancePredicate, usize, usize, bool) -> bool,
    ) -> bool {
        match self {
            Nnf::Atom { id, pred, negated } => lit(pred, *id, k, *negated),
            Nnf::And(v) => v.iter().all(|f| f.eval_with(k, lit)),
            Nnf::Or(v) => v.iter().any(|f| f.eval_with(k, lit)),
            Nnf::Globally(lo, hi, f) => {
                (k + *lo as usize..=k + *hi as usize).all(|i| f.eval_with(i, lit))
            }
            Nnf::Until(lo, hi, a, b) => {
                let lo_k = k + *lo as usize;
                (lo_k..=k + *hi as usize)
                    .any(|i| b.eval_with(i, lit) && (lo_k..i).all(|j| a.eval_with(j, lit)))
            }
            Nnf::Release(lo, hi, a, b) => {
                let lo_k = k + *lo as usize;
                (lo_k..=k + *hi as usize)
                    .all(|i| b.eval_with(i, lit) || (lo_k..i).any(|j| a.eval_with(j, lit)))
            }
        }
    }

    /// Evaluates on a trace indexed `[step][atom id]` with standard negation.
    pub fn eval_on_trace(&self, trace: &[Vec<bool>], k: usize) -> Result<bool, FormulaError> {
        let need = k + self.horizon() as usize + 1;
        if trace.len() < need {
            return Err(FormulaError::TraceTooShort {
                have: trace.len(),
                need,
            });
        }
        Ok(self.eval_with(k, &mut |pred, id, i, neg| {
            let v = match pred.constant_value() {
                Some(c) if id == usize::MAX => c,
                _ => trace[i][id],
            };
            v != neg
        }))
    }

    /// Number of atom occurrences after expansion over time windows starting at `k`.
    pub fn count_nodes(&self) -> usize {
        match self {
            Nnf::Atom { .. } => 1,
            Nnf::And(v) | Nnf::Or(v) => 1 + v.iter().map(Nnf::count_nodes).sum::<usize>(),
            Nnf::Globally(_, _, f) => 1 + f.count_nodes(),
            Nnf::Until(_, _, a, b) | Nnf::Release(_, _, a, b) => {
                1 + a.count_nodes() + b.count_nodes()
            }
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Atom(a) => write!(f, "{a}"),
            Formula::Not(g) => write!(f, "!({g})"),
            Formula::And(a, b) => write!(f, "({a}) && ({b})"),
            Formula::Or(a, b) => write!(f, "({a}) || ({b})"),
            Formula::Implies(a, b) => write!(f, "({a}) -> ({b})"),
            Formula::Globally(lo, hi, g) => write!(f, "G[{lo},{hi}] ({g})"),
            Formula::Eventually(lo, hi, g) => write!(f, "F[{lo},{hi}] ({g})"),
            Formula::Until(lo, hi, a, b) => write!(f, "({a}) U[{lo},{hi}] ({b})"),
            Formula::WeakUntil(lo, hi, a, b) => write!(f, "({a}) W[{lo},{hi}] ({b})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a() -> Formula {
        Formula::atom(ChancePredicate::chance(LinExpr::term(Signal::State(0), 1.0), 0.7))
    }

    fn b() -> Formula {
        Formula::atom(ChancePredicate::chance(LinExpr::term(Signal::State(1), 1.0), 0.4))
    }

    #[test]
    fn horizons() {
        assert_eq!(a().horizon(), 0);
        assert_eq!(Formula::globally(1, 3, a()).horizon(), 3);
        let f = Formula::globally(1, 3, Formula::until(0, 5, a(), b()));
        assert_eq!(f.horizon(), 8);
        assert_eq!(f.to_nnf().horizon(), 8);
    }

    #[test]
    fn double_negation_is_positive_atom() {
        let f = Formula::not(Formula::not(a()));
        assert!(matches!(f.to_nnf(), Nnf::Atom { negated: false, .. }));
    }

    #[test]
    fn negated_globally_becomes_disjunction_over_offsets() {
        let f = Formula::not(Formula::globally(1, 3, a()));
        let Nnf::Until(1, 3, left, right) = f.to_nnf() else {
            panic!("expected until form");
        };
        assert_eq!(*left, Nnf::truth());
        assert!(matches!(*right, Nnf::Atom { negated: true, .. }));
        // false exactly when a holds on all of 1..=3
        for mask in 0u32..16 {
            let trace: Vec<Vec<bool>> = (0..4).map(|i| vec![(mask >> i) & 1 == 1]).collect();
            let all = (1..=3).all(|i| trace[i][0]);
            assert_eq!(f.to_nnf().eval_on_trace(&trace, 0).unwrap(), !all);
        }
    }

    #[test]
    fn globally_true_on_all_steps() {
        let trace = vec![vec![true]; 3];
        assert!(Formula::globally(0, 2, a()).eval_on_trace(&trace, 0).unwrap());
    }

    #[test]
    fn until_needs_left_before_right() {
        // a at step 1, b only at 2
        let trace = vec![vec![false, false], vec![true, false], vec![false, true]];
        assert!(Formula::until(1, 2, a(), b()).eval_on_trace(&trace, 0).unwrap());
        let trace = vec![vec![false, false], vec![false, false], vec![false, true]];
        assert!(!Formula::until(1, 2, a(), b()).eval_on_trace(&trace, 0).unwrap());
    }

    #[test]
    fn short_trace_is_rejected() {
        let err = Formula::globally(0, 4, a()).eval_on_trace(&[vec![true]], 0);
        assert!(matches!(err, Err(FormulaError::TraceTooShort { need: 5, .. })));
    }

    #[test]
    fn display_prints_rhs_constant() {
        let mut mu = LinExpr::term(Signal::State(0), 1.0);
        mu.constant = -1.0;
        let p = ChancePredicate::chance(mu, 0.7);
        assert_eq!(p.to_string(), "P{ x[1] <= 1 } >= 0.7");
        assert_eq!(ChancePredicate::truth().to_string(), "0 <= 0");
    }

    #[test]
    fn validate_rejects_reversed_interval() {
        assert!(Formula::globally(3, 1, a()).validate().is_err());
    }
}
