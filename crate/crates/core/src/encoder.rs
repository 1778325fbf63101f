//! Mixed-integer encodings of bounded formulas over a stochastic system.
//!
//! Atom literals get a binary indicator tied to their deterministic fragment by big-M rows.
//! Conjunctions, disjunctions and temporal operators are continuous variables in `[0, 1]`
//! bounded from above by their children (`y <= b_i` for conjunctions, `y <= sum b_i` for
//! disjunctions). In negation normal form every operator is monotone, so a positive value
//! at the root certifies satisfaction, and the root is fixed to 1. Constant literals are
//! folded away and operators known to be enforced push that requirement down to their
//! children as hard rows.

use std::collections::HashMap;

use stostl_milp::{AffineExpr, MipModel, Sense, VarId};

use crate::chance::{
    literal_fragment, literal_holds, lower_pieces, predicate_form, reduction_levels, upper_pieces, Affine,
    ApproxLevel, ApproxMode, Fragment, Layout, NormBound, PredicateForm, DEFAULT_SCENARIO_CAP,
};
use crate::error::EncodeError;
use crate::formula::{Formula, Nnf};
use crate::models::{InitialState, SystemModel};

const CONST_TOL: f64 = 1e-12;

/// Truth value of an encoded subformula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lit {
    Const(bool),
    Var(VarId),
}

/// A coordinate of the decision vector: fixed by the model or a solver variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Fixed(f64),
    Var(VarId),
    /// Not referenced by any row.
    Unused,
}

#[derive(Debug, Clone)]
pub struct EncodeOptions {
    pub level: ApproxLevel,
    /// Input steps in the decision vector; defaults to the formula horizon plus one.
    pub steps: Option<usize>,
    pub scenario_cap: usize,
}

impl EncodeOptions {
    pub fn new(level: ApproxLevel) -> Self {
        Self {
            level,
            steps: None,
            scenario_cap: DEFAULT_SCENARIO_CAP,
        }
    }
}

/// Per-literal record kept for auditing encodings.
#[derive(Debug, Clone)]
pub struct LiteralRecord {
    pub atom: usize,
    pub step: usize,
    pub negated: bool,
    pub fragment: Fragment,
    pub lit: Lit,
}

/// Result of encoding one formula.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub model: MipModel,
    pub layout: Layout,
    pub decisions: Vec<Decision>,
    pub root: Lit,
    pub literals: Vec<LiteralRecord>,
    /// Literals whose fragment replaces a norm by a piecewise-affine bound.
    pub norm_literals: usize,
    /// Structural node count of the encoded formula.
    pub nnf_nodes: usize,
}

impl Encoding {
    /// Decision vector at a solver point; unused coordinates take the admissible value closest to 0.
    pub fn decision_values(&self, values: &[f64], sys: &SystemModel) -> Vec<f64> {
        let mut d = Vec::with_capacity(self.decisions.len());
        for (i, dec) in self.decisions.iter().enumerate() {
            d.push(match dec {
                Decision::Fixed(v) => *v,
                Decision::Var(id) => values[id.0],
                Decision::Unused => {
                    let (lo, hi) = decision_bounds(sys, &self.layout, i);
                    0f64.clamp(lo, hi)
                }
            });
        }
        d
    }

    /// Solver expression for an affine function of the decision vector, creating
    /// variables for coordinates not referenced so far.
    pub fn decision_expr(&mut self, a: &Affine, sys: &SystemModel) -> Result<AffineExpr, EncodeError> {
        affine_expr(&mut self.model, &mut self.decisions, sys, &self.layout, a)
    }
}

fn decision_bounds(sys: &SystemModel, layout: &Layout, i: usize) -> (f64, f64) {
    if i < layout.nx {
        match &sys.x0 {
            InitialState::Fixed(x) => (x[i], x[i]),
            InitialState::Free { lower, upper } => (lower[i], upper[i]),
        }
    } else {
        sys.u_bounds[(i - layout.nx) % layout.nu]
    }
}

fn ensure_decision(
    model: &mut MipModel,
    decisions: &mut [Decision],
    sys: &SystemModel,
    layout: &Layout,
    i: usize,
) -> Result<Decision, EncodeError> {
    if let Decision::Unused = decisions[i] {
        let (lo, hi) = decision_bounds(sys, layout, i);
        let name = if i < layout.nx {
            format!("x0_{}", i + 1)
        } else {
            let j = i - layout.nx;
            format!("u{}_{}", j / layout.nu, j % layout.nu + 1)
        };
        let v = model.add_continuous(name, lo, hi)?;
        decisions[i] = Decision::Var(v);
    }
    Ok(decisions[i])
}

fn affine_expr(
    model: &mut MipModel,
    decisions: &mut [Decision],
    sys: &SystemModel,
    layout: &Layout,
    a: &Affine,
) -> Result<AffineExpr, EncodeError> {
    let mut e = AffineExpr::constant(a.constant);
    for (i, &c) in a.coef.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        match ensure_decision(model, decisions, sys, layout, i)? {
            Decision::Fixed(v) => {
                e.add_constant(c * v);
            }
            Decision::Var(id) => {
                e.add_term(id, c);
            }
            Decision::Unused => unreachable!("decision created above"),
        }
    }
    Ok(e.compacted())
}

/// Encodes `formula` at step 0 so that feasibility of the model relates to satisfiability
/// according to `options.level`.
pub fn encode(sys: &SystemModel, formula: &Formula, options: &EncodeOptions) -> Result<Encoding, EncodeError> {
    let nnf = formula.to_nnf();
    encode_nnf(sys, &nnf, options)
}

pub fn encode_nnf(sys: &SystemModel, nnf: &Nnf, options: &EncodeOptions) -> Result<Encoding, EncodeError> {
    let need = nnf.horizon() as usize + 1;
    let steps = options.steps.unwrap_or(need);
    if steps < need {
        return Err(EncodeError::HorizonTooShort { have: steps, need });
    }
    let layout = Layout {
        nx: sys.nx,
        nu: sys.nu,
        steps,
    };
    let mut enc = Encoder::new(sys, layout, options);
    let root = enc.node(nnf, 0, true)?;
    if root == Lit::Const(false) {
        enc.contradiction()?;
    }
    Ok(Encoding {
        model: enc.model,
        layout,
        decisions: enc.decisions,
        root,
        literals: enc.literals,
        norm_literals: enc.norm_literals,
        nnf_nodes: nnf.count_nodes(),
    })
}

/// Checks the exact semantics of `nnf` at the decision vector `d`, relaxing every literal by `tol`.
pub fn exact_holds(
    sys: &SystemModel,
    nnf: &Nnf,
    layout: &Layout,
    d: &[f64],
    tol: f64,
    scenario_cap: usize,
) -> Result<bool, EncodeError> {
    let mut forms: HashMap<(usize, usize), PredicateForm> = HashMap::new();
    let mut err = None;
    let ok = nnf.eval_with(0, &mut |pred, id, k, negated| {
        if err.is_some() {
            return false;
        }
        if let Some(c) = pred.constant_value() {
            return c != negated;
        }
        let form = match forms.entry((id, k)) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(v) => match predicate_form(sys, pred, layout, k, scenario_cap) {
                Ok(f) => v.insert(f),
                Err(e) => {
                    err = Some(e);
                    return false;
                }
            },
        };
        literal_holds(form, pred, negated, d, tol)
    });
    match err {
        Some(e) => Err(e),
        None => Ok(ok),
    }
}

struct Encoder<'a> {
    sys: &'a SystemModel,
    layout: Layout,
    level: ApproxLevel,
    scenario_cap: usize,
    model: MipModel,
    decisions: Vec<Decision>,
    forms: HashMap<(usize, usize), PredicateForm>,
    atoms: HashMap<(usize, usize, bool), Lit>,
    nodes: HashMap<(usize, usize), Lit>,
    literals: Vec<LiteralRecord>,
    norm_literals: usize,
    aux: usize,
}

impl<'a> Encoder<'a> {
    fn new(sys: &'a SystemModel, layout: Layout, options: &EncodeOptions) -> Self {
        let mut decisions = vec![Decision::Unused; layout.len()];
        if let InitialState::Fixed(x) = &sys.x0 {
            for i in 0..sys.nx {
                decisions[layout.x0(i)] = Decision::Fixed(x[i]);
            }
        }
        Self {
            sys,
            layout,
            level: options.level,
            scenario_cap: options.scenario_cap,
            model: MipModel::new(),
            decisions,
            forms: HashMap::new(),
            atoms: HashMap::new(),
            nodes: HashMap::new(),
            literals: Vec::new(),
            norm_literals: 0,
            aux: 0,
        }
    }

    fn name(&mut self, prefix: &str) -> String {
        self.aux += 1;
        format!("{prefix}{}", self.aux)
    }

    fn expr(&mut self, a: &Affine) -> Result<AffineExpr, EncodeError> {
        affine_expr(&mut self.model, &mut self.decisions, self.sys, &self.layout, a)
    }

    fn contradiction(&mut self) -> Result<(), EncodeError> {
        let z = self.model.add_continuous("contradiction", 0.0, 0.0)?;
        self.model.add_row("contradiction", &AffineExpr::var(z), Sense::Ge, 1.0)?;
        Ok(())
    }

    /// `expr <= 0` whenever `lit` is true.
    fn cond_le(&mut self, name: &str, expr: &AffineExpr, lit: Lit) -> Result<(), EncodeError> {
        let (lo, hi) = self.model.expr_range(expr);
        if hi <= 0.0 {
            return Ok(());
        }
        match lit {
            Lit::Const(false) => Ok(()),
            Lit::Const(true) => {
                if lo > CONST_TOL {
                    self.contradiction()
                } else {
                    self.model.add_row(name, expr, Sense::Le, 0.0)?;
                    Ok(())
                }
            }
            Lit::Var(b) => {
                if lo > CONST_TOL {
                    self.model.tighten_bounds(b, 0.0, 0.0)?;
                } else {
                    let m = self.model.certified_big_m(expr);
                    self.model.add_indicator(name, b, expr, m)?;
                }
                Ok(())
            }
        }
    }

    fn force(&mut self, lit: Lit) -> Result<(), EncodeError> {
        match lit {
            Lit::Const(true) => Ok(()),
            Lit::Const(false) => self.contradiction(),
            Lit::Var(v) => {
                if self.model.var(v).upper < 1.0 {
                    self.contradiction()
                } else {
                    Ok(self.model.tighten_bounds(v, 1.0, 1.0)?)
                }
            }
        }
    }

    fn node(&mut self, f: &Nnf, k: usize, forced: bool) -> Result<Lit, EncodeError> {
        let key = (f as *const Nnf as usize, k);
        if let Some(&lit) = self.nodes.get(&key) {
            if forced {
                self.force(lit)?;
                return Ok(Lit::Const(true));
            }
            return Ok(lit);
        }
        let lit = match f {
            Nnf::Atom { id, pred, negated } => self.atom(*id, pred, *negated, k, forced)?,
            Nnf::And(children) => {
                let items: Vec<(&Nnf, usize)> = children.iter().map(|c| (c, k)).collect();
                self.conj(&items, forced)?
            }
            Nnf::Or(children) => {
                let items: Vec<(&Nnf, usize)> = children.iter().map(|c| (c, k)).collect();
                self.disj(&items, forced)?
            }
            Nnf::Globally(lo, hi, g) => {
                let items: Vec<(&Nnf, usize)> = (k + *lo as usize..=k + *hi as usize).map(|i| (&**g, i)).collect();
                self.conj(&items, forced)?
            }
            Nnf::Until(lo, hi, a, b) => {
                let lo_k = k + *lo as usize;
                let mut options = Vec::new();
                for i in lo_k..=k + *hi as usize {
                    let mut items = vec![(&**b, i)];
                    items.extend((lo_k..i).map(|j| (&**a, j)));
                    let lit = self.conj(&items, false)?;
                    if lit == Lit::Const(true) {
                        options = vec![lit];
                        break;
                    }
                    options.push(lit);
                }
                self.combine_or(options, forced)?
            }
            Nnf::Release(lo, hi, a, b) => {
                let lo_k = k + *lo as usize;
                let mut parts = Vec::new();
                for i in lo_k..=k + *hi as usize {
                    let mut items = vec![(&**b, i)];
                    items.extend((lo_k..i).map(|j| (&**a, j)));
                    let lit = self.disj(&items, forced)?;
                    if lit == Lit::Const(false) {
                        parts = vec![lit];
                        break;
                    }
                    parts.push(lit);
                }
                self.combine_and(parts, forced)?
            }
        };
        let stored = if forced && lit != Lit::Const(false) { Lit::Const(true) } else { lit };
        self.nodes.insert(key, stored);
        Ok(stored)
    }

    fn conj(&mut self, items: &[(&Nnf, usize)], forced: bool) -> Result<Lit, EncodeError> {
        let mut lits = Vec::with_capacity(items.len());
        for &(c, i) in items {
            let lit = self.node(c, i, forced)?;
            if lit == Lit::Const(false) {
                return Ok(lit);
            }
            lits.push(lit);
        }
        self.combine_and(lits, forced)
    }

    fn disj(&mut self, items: &[(&Nnf, usize)], forced: bool) -> Result<Lit, EncodeError> {
        let mut lits = Vec::with_capacity(items.len());
        for &(c, i) in items {
            let lit = self.node(c, i, false)?;
            if lit == Lit::Const(true) {
                return Ok(lit);
            }
            lits.push(lit);
        }
        self.combine_or(lits, forced)
    }

    fn combine_and(&mut self, lits: Vec<Lit>, forced: bool) -> Result<Lit, EncodeError> {
        if lits.contains(&Lit::Const(false)) {
            return Ok(Lit::Const(false));
        }
        let vars: Vec<VarId> = lits
            .into_iter()
            .filter_map(|l| match l {
                Lit::Var(v) => Some(v),
                Lit::Const(_) => None,
            })
            .collect();
        if forced {
            for v in vars {
                self.force(Lit::Var(v))?;
            }
            return Ok(Lit::Const(true));
        }
        match vars.len() {
            0 => Ok(Lit::Const(true)),
            1 => Ok(Lit::Var(vars[0])),
            _ => {
                let name = self.name("and");
                let y = self.model.add_continuous(name.clone(), 0.0, 1.0)?;
                for v in vars {
                    let mut e = AffineExpr::var(y);
                    e.add_term(v, -1.0);
                    self.model.add_row(name.clone(), &e, Sense::Le, 0.0)?;
                }
                Ok(Lit::Var(y))
            }
        }
    }

    fn combine_or(&mut self, lits: Vec<Lit>, forced: bool) -> Result<Lit, EncodeError> {
        if lits.contains(&Lit::Const(true)) {
            return Ok(Lit::Const(true));
        }
        let vars: Vec<VarId> = lits
            .into_iter()
            .filter_map(|l| match l {
                Lit::Var(v) => Some(v),
                Lit::Const(_) => None,
            })
            .collect();
        match (vars.len(), forced) {
            (0, true) => {
                self.contradiction()?;
                Ok(Lit::Const(false))
            }
            (0, false) => Ok(Lit::Const(false)),
            (1, true) => {
                self.force(Lit::Var(vars[0]))?;
                Ok(Lit::Const(true))
            }
            (1, false) => Ok(Lit::Var(vars[0])),
            (_, true) => {
                let mut e = AffineExpr::constant(0.0);
                for v in vars {
                    e.add_term(v, 1.0);
                }
                let name = self.name("or");
                self.model.add_row(name, &e, Sense::Ge, 1.0)?;
                Ok(Lit::Const(true))
            }
            (_, false) => {
                let name = self.name("or");
                let y = self.model.add_continuous(name.clone(), 0.0, 1.0)?;
                let mut e = AffineExpr::var(y);
                for v in vars {
                    e.add_term(v, -1.0);
                }
                self.model.add_row(name, &e, Sense::Le, 0.0)?;
                Ok(Lit::Var(y))
            }
        }
    }

    fn atom(
        &mut self,
        id: usize,
        pred: &crate::formula::ChancePredicate,
        negated: bool,
        k: usize,
        forced: bool,
    ) -> Result<Lit, EncodeError> {
        if let Some(c) = pred.constant_value() {
            return Ok(Lit::Const(c != negated));
        }
        if let Some(&lit) = self.atoms.get(&(id, k, negated)) {
            if forced {
                self.force(lit)?;
                return Ok(Lit::Const(true));
            }
            return Ok(lit);
        }
        if !self.forms.contains_key(&(id, k)) {
            let form = predicate_form(self.sys, pred, &self.layout, k, self.scenario_cap)?;
            self.forms.insert((id, k), form);
        }
        let form = &self.forms[&(id, k)];
        let fragment = literal_fragment(form, pred, negated, self.level)?;
        let tag = format!("a{}_{}{}", if id == usize::MAX { 0 } else { id + 1 }, k, if negated { "n" } else { "" });
        let lit = self.fragment(&fragment, &tag, forced)?;
        if let Fragment::Norm {
            bound: NormBound::Upper(_) | NormBound::Lower(_),
            ..
        } = fragment
        {
            self.norm_literals += 1;
        }
        let stored = if forced && lit != Lit::Const(false) { Lit::Const(true) } else { lit };
        self.atoms.insert((id, k, negated), stored);
        self.literals.push(LiteralRecord {
            atom: id,
            step: k,
            negated,
            fragment,
            lit: stored,
        });
        Ok(stored)
    }

    fn indicator(&mut self, tag: &str, forced: bool) -> Lit {
        if forced {
            Lit::Const(true)
        } else {
            Lit::Var(self.model.add_binary(format!("b_{tag}")))
        }
    }

    fn finish(&mut self, lit: Lit, forced: bool) -> Result<Lit, EncodeError> {
        // an indicator forced to 0 by its rows is a constant
        if let Lit::Var(v) = lit {
            if self.model.var(v).upper < 1.0 {
                if forced {
                    self.contradiction()?;
                }
                return Ok(Lit::Const(false));
            }
        }
        Ok(lit)
    }

    fn fragment(&mut self, fragment: &Fragment, tag: &str, forced: bool) -> Result<Lit, EncodeError> {
        match fragment {
            Fragment::Tautology => Ok(Lit::Const(true)),
            Fragment::Contradiction => {
                if forced {
                    self.contradiction()?;
                }
                Ok(Lit::Const(false))
            }
            Fragment::Affine(a) => {
                let e = self.expr(a)?;
                if e.is_constant() {
                    let ok = e.constant <= CONST_TOL;
                    if forced && !ok {
                        self.contradiction()?;
                    }
                    return Ok(Lit::Const(ok));
                }
                let lit = self.indicator(tag, forced);
                self.cond_le(&format!("c_{tag}"), &e, lit)?;
                self.finish(lit, forced)
            }
            Fragment::AlmostSure { mean, factor } => {
                let lit = self.indicator(tag, forced);
                let e = self.expr(mean)?;
                self.cond_le(&format!("c_{tag}"), &e, lit)?;
                for (j, row) in factor.iter().enumerate() {
                    let e = self.expr(row)?;
                    self.cond_le(&format!("c_{tag}_p{j}"), &e, lit)?;
                    self.cond_le(&format!("c_{tag}_m{j}"), &e.scaled(-1.0), lit)?;
                }
                self.finish(lit, forced)
            }
            Fragment::Norm {
                mean,
                factor,
                multiplier,
                bound,
            } => {
                let mean_e = self.expr(mean)?;
                let mut rows = Vec::with_capacity(factor.len());
                for r in factor {
                    let e = self.expr(r)?;
                    if !(e.is_constant() && e.constant == 0.0) {
                        rows.push(e);
                    }
                }
                if mean_e.is_constant() && rows.iter().all(|r| r.is_constant()) {
                    let v: Vec<f64> = rows.iter().map(|r| r.constant).collect();
                    let n = match bound {
                        NormBound::Exact => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
                        NormBound::Upper(s) => crate::chance::norm_upper(&v, *s),
                        NormBound::Lower(s) => crate::chance::norm_lower(&v, *s),
                    };
                    let ok = mean_e.constant + multiplier * n <= CONST_TOL;
                    if forced && !ok {
                        self.contradiction()?;
                    }
                    return Ok(Lit::Const(ok));
                }
                let convex = *multiplier > 0.0;
                let norm = self.norm_expr(&rows, *bound, convex, tag)?;
                let mut e = mean_e;
                e.add_scaled(&norm, *multiplier);
                let lit = self.indicator(tag, forced);
                self.cond_le(&format!("c_{tag}"), &e, lit)?;
                self.finish(lit, forced)
            }
            Fragment::Scenario {
                scenarios,
                threshold,
            } => {
                let lit = self.indicator(tag, forced);
                if *threshold >= 1.0 {
                    for (s, (a, _)) in scenarios.iter().enumerate() {
                        let e = self.expr(a)?;
                        self.cond_le(&format!("c_{tag}_s{s}"), &e, lit)?;
                    }
                    return self.finish(lit, forced);
                }
                let mut mass = AffineExpr::constant(0.0);
                let mut open_mass = 0.0;
                for (s, (a, p)) in scenarios.iter().enumerate() {
                    let e = self.expr(a)?;
                    let (lo, hi) = self.model.expr_range(&e);
                    if hi <= 0.0 {
                        mass.add_constant(*p);
                    } else if lo <= CONST_TOL {
                        let bs = self.model.add_binary(format!("b_{tag}_s{s}"));
                        let m = self.model.certified_big_m(&e);
                        self.model.add_indicator(format!("c_{tag}_s{s}"), bs, &e, m)?;
                        mass.add_term(bs, *p);
                        open_mass += p;
                    }
                }
                if mass.constant >= threshold - 1e-12 {
                    return Ok(Lit::Const(true));
                }
                if mass.constant + open_mass < threshold - 1e-12 {
                    if forced {
                        self.contradiction()?;
                    }
                    return Ok(Lit::Const(false));
                }
                // sum p_s b_s >= threshold * b
                match lit {
                    Lit::Var(b) => {
                        mass.add_term(b, -threshold);
                        self.model.add_row(format!("c_{tag}_mass"), &mass, Sense::Ge, 0.0)?;
                    }
                    _ => {
                        self.model.add_row(format!("c_{tag}_mass"), &mass, Sense::Ge, *threshold - 1e-12)?;
                    }
                }
                self.finish(lit, forced)
            }
        }
    }

    /// Expression standing for the chosen bound on `|rows|_2`. With `convex` the expression
    /// may exceed the bound (it appears with a positive multiplier); otherwise it may fall short.
    fn norm_expr(&mut self, rows: &[AffineExpr], bound: NormBound, convex: bool, tag: &str) -> Result<AffineExpr, EncodeError> {
        let mut leaves = Vec::with_capacity(rows.len());
        for (j, r) in rows.iter().enumerate() {
            leaves.push(self.abs(r, convex, &format!("{tag}_{j}"))?);
        }
        match bound {
            NormBound::Exact => Err(EncodeError::Unsupported {
                pred: tag.into(),
                reason: "the exact Euclidean norm has no mixed-integer linear encoding; use an inner or outer level".into(),
            }),
            NormBound::Upper(s) => {
                let (pieces, scale) = upper_pieces(s);
                let pieces: Vec<(f64, f64)> = pieces.iter().map(|(c, si)| (c * scale, si * scale)).collect();
                self.tree(leaves, &pieces, convex, tag)
            }
            NormBound::Lower(s) => {
                let r = leaves.len() as f64;
                let mut l1 = AffineExpr::constant(0.0);
                for l in &leaves {
                    l1.add_scaled(l, 1.0 / r.sqrt());
                }
                if s <= 1 || leaves.len() == 1 {
                    return Ok(l1);
                }
                let tree = self.tree(leaves, &lower_pieces(s), convex, tag)?;
                self.max(vec![l1, tree], convex, &format!("{tag}_top"))
            }
        }
    }

    fn tree(&mut self, leaves: Vec<AffineExpr>, pieces: &[(f64, f64)], convex: bool, tag: &str) -> Result<AffineExpr, EncodeError> {
        let mut cur = leaves;
        for (depth, level) in reduction_levels(cur.len()).into_iter().enumerate() {
            let mut next = Vec::with_capacity(level.len());
            for (n, (l, r)) in level.into_iter().enumerate() {
                match r {
                    None => next.push(cur[l].clone()),
                    Some(r) => {
                        let cands: Vec<AffineExpr> = pieces
                            .iter()
                            .map(|&(c, s)| {
                                let mut e = cur[l].scaled(c);
                                e.add_scaled(&cur[r], s);
                                e.compacted()
                            })
                            .collect();
                        next.push(self.max(cands, convex, &format!("{tag}_t{depth}_{n}"))?);
                    }
                }
            }
            cur = next;
        }
        Ok(cur.pop().unwrap_or_else(|| AffineExpr::constant(0.0)))
    }

    /// `max` of nonnegative candidates: an epigraph variable when `convex`, otherwise a
    /// hypograph variable tied to one selected candidate.
    fn max(&mut self, cands: Vec<AffineExpr>, convex: bool, tag: &str) -> Result<AffineExpr, EncodeError> {
        if cands.len() == 1 {
            return Ok(cands.into_iter().next().expect("one candidate"));
        }
        let hi = cands
            .iter()
            .map(|c| self.model.expr_range(c).1)
            .fold(0.0, f64::max);
        let t = self.model.add_continuous(format!("m_{tag}"), 0.0, hi)?;
        if convex {
            for (i, c) in cands.iter().enumerate() {
                let mut e = c.clone();
                e.add_term(t, -1.0);
                self.model.add_row(format!("m_{tag}_{i}"), &e, Sense::Le, 0.0)?;
            }
        } else {
            let mut pick = AffineExpr::constant(0.0);
            for (i, c) in cands.iter().enumerate() {
                let s = self.model.add_binary(format!("s_{tag}_{i}"));
                let mut e = AffineExpr::var(t);
                e.add_scaled(c, -1.0);
                let e = e.compacted();
                let m = self.model.certified_big_m(&e);
                self.model.add_indicator(format!("m_{tag}_{i}"), s, &e, m)?;
                pick.add_term(s, 1.0);
            }
            self.model.add_row(format!("m_{tag}_pick"), &pick, Sense::Eq, 1.0)?;
        }
        Ok(AffineExpr::var(t))
    }

    fn abs(&mut self, e: &AffineExpr, convex: bool, tag: &str) -> Result<AffineExpr, EncodeError> {
        let (lo, hi) = self.model.expr_range(e);
        if lo >= 0.0 {
            return Ok(e.clone());
        }
        if hi <= 0.0 {
            return Ok(e.scaled(-1.0));
        }
        let a = self.model.add_continuous(format!("abs_{tag}"), 0.0, hi.max(-lo))?;
        if convex {
            for (sign, suffix) in [(1.0, "p"), (-1.0, "m")] {
                let mut row = e.scaled(sign);
                row.add_term(a, -1.0);
                self.model.add_row(format!("abs_{tag}_{suffix}"), &row, Sense::Le, 0.0)?;
            }
        } else {
            // y = 1 selects the positive branch a <= e, y = 0 selects a <= -e
            let y = self.model.add_binary(format!("sgn_{tag}"));
            let mut pos = AffineExpr::var(a);
            pos.add_scaled(e, -1.0);
            let pos = pos.compacted();
            let m = self.model.certified_big_m(&pos);
            self.model.add_indicator(format!("abs_{tag}_p"), y, &pos, m)?;
            let mut neg = AffineExpr::var(a);
            neg.add_scaled(e, 1.0);
            let mut neg = neg.compacted();
            let m = (1.1 * self.model.expr_range(&neg).1.max(0.0)).max(1.0);
            neg.add_term(y, -m);
            self.model.add_row(format!("abs_{tag}_m"), &neg, Sense::Le, 0.0)?;
        }
        Ok(AffineExpr::var(a))
    }
}

/// Whether `level` introduces piecewise-affine norm bounds, i.e. refining segments can matter.
pub fn is_tightenable(encoding: &Encoding) -> bool {
    encoding.norm_literals > 0
}

/// Convenience: an inner or outer level as used by the tightening ladder.
pub fn level(mode: ApproxMode, segments: u32) -> ApproxLevel {
    ApproxLevel { mode, segments }
}
