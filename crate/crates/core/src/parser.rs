//! Text front-end for formulas and project files.
//!
//! Formula grammar, loosest binding first:
//!
//! ```text
//! implied := ored ("->" implied)?
//! ored    := anded (("||" anded) | (("U" | "W") "[" int "," int "]" anded))*
//! anded   := unary ("&&" unary)*
//! unary   := "!" unary | ("G" | "F") "[" int "," int "]" unary | "(" implied ")" | atom
//! atom    := "true" | "false" | "P" "{" lin cmp lin "}" ">=" num | lin cmp lin
//! lin     := ["-"] term (("+" | "-") term)*      term := num ["*"] signal | num | signal
//! signal  := x[i] | u[i] | xN | uN | wxi | declared name
//! ```
//!
//! A project file holds `system`, `contract` and `task` items; see the README for fields.

use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::chance::EPSILON;
use crate::contracts::{Contract, Outcome};
use crate::error::{ModelError, ParseError};
use crate::formula::{ChancePredicate, Formula, LinExpr, Signal};
use crate::models::{
    Dynamics, InitialState, LinearGaussian, MarkovJump, MeasurementNoise, Mode, Schedule, SystemModel,
    DEFAULT_INPUT_BOUND,
};
use crate::mpc::Objective;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: [&str; 20] = [
    "<=", ">=", "&&", "||", "->", "{", "}", "[", "]", "(", ")", ",", ";", ":", "*", "+", "-", "<", ">", "!",
];

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start_col = col;
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s.parse().map_err(|_| ParseError {
                line,
                col: start_col,
                message: format!("malformed number `{s}`"),
            })?;
            col += i - start;
            out.push(Token {
                tok: Tok::Num(v),
                line,
                col: start_col,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line,
                col: start_col,
            });
            continue;
        }
        let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(*s)) {
            Some(s) => {
                i += s.len();
                col += s.len();
                out.push(Token {
                    tok: Tok::Sym(s),
                    line,
                    col: start_col,
                });
            }
            None => {
                return Err(ParseError {
                    line,
                    col,
                    message: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

const RESERVED: [&str; 8] = ["G", "F", "U", "W", "P", "true", "false", "abs"];

/// Words that end an objective or monitor expression inside a task.
const TASK_WORDS: [&str; 8] = ["name", "expect", "horizon", "steps", "runs", "seed", "monitor", "minimize"];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self, ParseError> {
        Ok(Self { toks: lex(text)?, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError {
            line,
            col,
            message: message.into(),
        })
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == w)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", self.describe()))
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), ParseError> {
        if self.is_word(w) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{w}`, found {}", self.describe()))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => self.err(format!("expected a name, found {}", self.describe())),
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let neg = self.eat_sym("-");
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => self.err(format!("expected a number, found {}", self.describe())),
        }
    }

    fn uint(&mut self) -> Result<u64, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 * 4096.0 => {
                self.bump();
                Ok(v as u64)
            }
            Tok::Sym("-") => self.err("expected a non-negative integer"),
            _ => self.err(format!("expected a non-negative integer, found {}", self.describe())),
        }
    }

    fn interval(&mut self) -> Result<(u32, u32), ParseError> {
        self.expect_sym("[")?;
        let (line, col) = self.here();
        let lo = self.uint()?;
        self.expect_sym(",")?;
        let hi = self.uint()?;
        self.expect_sym("]")?;
        if lo > hi {
            return Err(ParseError {
                line,
                col,
                message: format!("interval [{lo},{hi}] is reversed"),
            });
        }
        if hi > u32::MAX as u64 {
            return Err(ParseError {
                line,
                col,
                message: "interval bound is too large".into(),
            });
        }
        Ok((lo as u32, hi as u32))
    }

    // ---- formulas ----

    fn implied(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.ored()?;
        if self.eat_sym("->") {
            let rhs = self.implied()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn ored(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.anded()?;
        loop {
            if self.eat_sym("||") {
                lhs = Formula::or(lhs, self.anded()?);
            } else if self.is_word("U") || self.is_word("W") {
                let weak = self.is_word("W");
                self.bump();
                let (lo, hi) = self.interval()?;
                let rhs = self.anded()?;
                lhs = if weak {
                    Formula::weak_until(lo, hi, lhs, rhs)
                } else {
                    Formula::until(lo, hi, lhs, rhs)
                };
            } else {
                return Ok(lhs);
            }
        }
    }

    fn anded(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.unary()?;
        while self.eat_sym("&&") {
            lhs = Formula::and(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if self.eat_sym("!") {
            return Ok(Formula::not(self.unary()?));
        }
        if (self.is_word("G") || self.is_word("F")) && matches!(self.peek_at(1), Tok::Sym("[")) {
            let globally = self.is_word("G");
            self.bump();
            let (lo, hi) = self.interval()?;
            let body = self.unary()?;
            return Ok(if globally {
                Formula::globally(lo, hi, body)
            } else {
                Formula::eventually(lo, hi, body)
            });
        }
        if self.eat_sym("(") {
            let f = self.implied()?;
            self.expect_sym(")")?;
            return Ok(f);
        }
        if self.is_word("true") {
            self.bump();
            return Ok(Formula::truth());
        }
        if self.is_word("false") {
            self.bump();
            return Ok(Formula::falsity());
        }
        Ok(Formula::atom(self.atom()?))
    }

    fn atom(&mut self) -> Result<ChancePredicate, ParseError> {
        if self.is_word("P") && matches!(self.peek_at(1), Tok::Sym("{")) {
            self.bump();
            self.bump();
            let mu = self.comparison()?;
            self.expect_sym("}")?;
            self.expect_sym(">=")?;
            let (line, col) = self.here();
            let p = self.number()?;
            if !(0.0..=1.0).contains(&p) {
                return Err(ParseError {
                    line,
                    col,
                    message: format!("probability {p} is outside [0, 1]"),
                });
            }
            return Ok(ChancePredicate::chance(mu, p));
        }
        Ok(ChancePredicate::deterministic(self.comparison()?))
    }

    /// `lhs cmp rhs` normalized to `mu <= 0`.
    fn comparison(&mut self) -> Result<LinExpr, ParseError> {
        let lhs = self.lin()?;
        let op = match self.peek() {
            Tok::Sym(s @ ("<=" | ">=" | "<" | ">")) => *s,
            _ => return self.err(format!("expected a comparison, found {}", self.describe())),
        };
        self.bump();
        let rhs = self.lin()?;
        let mut mu = LinExpr::default();
        match op {
            "<=" | "<" => {
                mu.add(&lhs, 1.0);
                mu.add(&rhs, -1.0);
            }
            _ => {
                mu.add(&rhs, 1.0);
                mu.add(&lhs, -1.0);
            }
        }
        if op.len() == 1 {
            mu.constant += EPSILON;
        }
        Ok(mu)
    }

    fn lin(&mut self) -> Result<LinExpr, ParseError> {
        let mut out = LinExpr::default();
        let mut sign = if self.eat_sym("-") {
            -1.0
        } else {
            self.eat_sym("+");
            1.0
        };
        loop {
            let t = self.term()?;
            out.add(&t, sign);
            if self.eat_sym("+") {
                sign = 1.0;
            } else if self.eat_sym("-") {
                sign = -1.0;
            } else {
                return Ok(out);
            }
        }
    }

    fn starts_signal(&self) -> bool {
        match self.peek() {
            Tok::Ident(s) => !RESERVED.contains(&s.as_str()) && !TASK_WORDS.contains(&s.as_str()),
            _ => false,
        }
    }

    fn term(&mut self) -> Result<LinExpr, ParseError> {
        if let Tok::Num(c) = *self.peek() {
            self.bump();
            let star = self.eat_sym("*");
            if star || self.starts_signal() {
                let s = self.signal()?;
                return Ok(LinExpr::term(s, c));
            }
            return Ok(LinExpr::constant(c));
        }
        let s = self.signal()?;
        Ok(LinExpr::term(s, 1.0))
    }

    fn signal(&mut self) -> Result<Signal, ParseError> {
        if !self.starts_signal() {
            return self.err(format!("expected a signal, found {}", self.describe()));
        }
        let (line, col) = self.here();
        let name = self.ident()?;
        let fail = |message: String| Err(ParseError { line, col, message });
        if self.is_sym("[") {
            self.bump();
            let i = self.uint()? as usize;
            self.expect_sym("]")?;
            if i == 0 {
                return fail("signal indices start at 1".into());
            }
            return match name.as_str() {
                "x" => Ok(Signal::State(i - 1)),
                "u" => Ok(Signal::Input(i - 1)),
                _ => fail(format!("only `x` and `u` take an index, found `{name}[...]`")),
            };
        }
        if name == "wxi" {
            return Ok(Signal::NoiseProduct);
        }
        for (prefix, make) in [("x", Signal::State as fn(usize) -> Signal), ("u", Signal::Input)] {
            if let Some(digits) = name.strip_prefix(prefix) {
                if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                    let i: usize = digits.parse().unwrap_or(0);
                    if i == 0 {
                        return fail("signal indices start at 1".into());
                    }
                    return Ok(make(i - 1));
                }
            }
        }
        Ok(Signal::Named(name))
    }
}

/// Parses a standalone formula. Unknown names stay as [`Signal::Named`].
pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    let mut p = Parser::new(text)?;
    let f = p.implied()?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.err(format!("unexpected {} after formula", p.describe()));
    }
    Ok(f)
}

/// Expected result of a task, checked by the runner.
#[derive(Debug, Clone, PartialEq)]
pub enum Expectation {
    Outcome(Outcome),
    /// Minimum per-step monitor satisfaction rate of a closed-loop simulation.
    MinRate(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind {
    Compatibility {
        contract: String,
    },
    Consistency {
        contract: String,
    },
    /// `refined` refines `refines`.
    Refinement {
        refined: String,
        refines: String,
    },
    Synthesize {
        contract: String,
        horizon: usize,
        objective: Objective,
    },
    Simulate {
        contract: String,
        horizon: usize,
        steps: usize,
        runs: usize,
        seed: Option<u64>,
        objective: Objective,
        monitor: Option<ChancePredicate>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub name: String,
    pub kind: TaskKind,
    /// Encoding horizon override for contract checks.
    pub horizon: Option<usize>,
    pub expect: Option<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Project {
    pub systems: Vec<SystemModel>,
    pub contracts: Vec<Contract>,
    pub tasks: Vec<Task>,
}

impl Project {
    pub fn system(&self, name: &str) -> Option<&SystemModel> {
        self.systems.iter().find(|s| s.name == name)
    }

    pub fn contract(&self, name: &str) -> Option<&Contract> {
        self.contracts.iter().find(|c| c.name == name)
    }

    pub fn task(&self, name: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone)]
enum Value {
    Num(f64),
    Word(String),
    List(Vec<Value>),
    Steps(Vec<Value>),
}

struct Field {
    key: String,
    value: Value,
    line: usize,
    col: usize,
}

fn at<T>(line: usize, col: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        col,
        message: message.into(),
    })
}

impl Parser {
    fn value(&mut self) -> Result<Value, ParseError> {
        if self.eat_sym("[") {
            let mut items = Vec::new();
            if !self.is_sym("]") {
                loop {
                    items.push(self.value()?);
                    if !self.eat_sym(",") {
                        break;
                    }
                }
            }
            self.expect_sym("]")?;
            return Ok(Value::List(items));
        }
        if self.is_word("steps") && matches!(self.peek_at(1), Tok::Sym("(")) {
            self.bump();
            self.bump();
            let mut items = vec![self.value()?];
            while self.eat_sym(",") {
                items.push(self.value()?);
            }
            self.expect_sym(")")?;
            return Ok(Value::Steps(items));
        }
        if let Tok::Ident(w) = self.peek().clone() {
            self.bump();
            return Ok(Value::Word(w));
        }
        Ok(Value::Num(self.number()?))
    }

    fn fields(&mut self) -> Result<(Vec<Field>, Vec<(usize, Vec<Field>, usize, usize)>), ParseError> {
        self.expect_sym("{")?;
        let mut fields = Vec::new();
        let mut modes = Vec::new();
        while !self.eat_sym("}") {
            let (line, col) = self.here();
            if self.is_word("mode") && matches!(self.peek_at(1), Tok::Num(_)) {
                self.bump();
                let idx = self.uint()? as usize;
                let (inner, nested) = self.fields()?;
                if !nested.is_empty() {
                    return at(line, col, "modes cannot be nested");
                }
                modes.push((idx, inner, line, col));
                continue;
            }
            let key = self.ident()?;
            self.expect_sym(":")?;
            let value = self.value()?;
            self.expect_sym(";")?;
            if fields.iter().any(|f: &Field| f.key == key) {
                return at(line, col, format!("duplicate field `{key}`"));
            }
            fields.push(Field { key, value, line, col });
        }
        Ok((fields, modes))
    }
}

struct Fields {
    items: Vec<Field>,
    used: HashSet<String>,
    line: usize,
    col: usize,
}

impl Fields {
    fn get(&mut self, key: &str) -> Option<&Field> {
        let f = self.items.iter().find(|f| f.key == key)?;
        self.used.insert(key.to_string());
        Some(f)
    }

    fn require(&mut self, key: &str) -> Result<&Field, ParseError> {
        let (line, col) = (self.line, self.col);
        match self.get(key) {
            Some(f) => Ok(f),
            None => at(line, col, format!("missing field `{key}`")),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        for f in &self.items {
            if !self.used.contains(&f.key) {
                return at(f.line, f.col, format!("unknown field `{}`", f.key));
            }
        }
        Ok(())
    }
}

fn as_num(f: &Field, v: &Value) -> Result<f64, ParseError> {
    match v {
        Value::Num(x) => Ok(*x),
        _ => at(f.line, f.col, format!("`{}`: expected a number", f.key)),
    }
}

fn as_usize(f: &Field) -> Result<usize, ParseError> {
    let x = as_num(f, &f.value)?;
    if x < 0.0 || x.fract() != 0.0 {
        return at(f.line, f.col, format!("`{}`: expected a non-negative integer", f.key));
    }
    Ok(x as usize)
}

fn as_vector(f: &Field, v: &Value) -> Result<DVector<f64>, ParseError> {
    match v {
        Value::List(items) => {
            let xs: Result<Vec<f64>, ParseError> = items.iter().map(|x| as_num(f, x)).collect();
            Ok(DVector::from_vec(xs?))
        }
        _ => at(f.line, f.col, format!("`{}`: expected a vector `[a, b, ...]`", f.key)),
    }
}

fn as_matrix(f: &Field, v: &Value) -> Result<DMatrix<f64>, ParseError> {
    let rows = match v {
        Value::List(rows) => rows,
        _ => return at(f.line, f.col, format!("`{}`: expected a matrix `[[..], ..]`", f.key)),
    };
    let rows: Vec<DVector<f64>> = rows.iter().map(|r| as_vector(f, r)).collect::<Result<_, _>>()?;
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return at(f.line, f.col, format!("`{}`: rows have different lengths", f.key));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn as_schedule<T>(f: &Field, conv: impl Fn(&Field, &Value) -> Result<T, ParseError>) -> Result<Schedule<T>, ParseError> {
    match &f.value {
        Value::Steps(items) => Ok(Schedule(items.iter().map(|v| conv(f, v)).collect::<Result<_, _>>()?)),
        v => Ok(Schedule::constant(conv(f, v)?)),
    }
}

fn as_list<T>(f: &Field, conv: impl Fn(&Field, &Value) -> Result<T, ParseError>) -> Result<Vec<T>, ParseError> {
    match &f.value {
        Value::List(items) => items.iter().map(|v| conv(f, v)).collect(),
        _ => at(f.line, f.col, format!("`{}`: expected a list", f.key)),
    }
}

fn as_names(f: &Field) -> Result<Vec<String>, ParseError> {
    as_list(f, |f, v| match v {
        Value::Word(w) => Ok(w.clone()),
        _ => at(f.line, f.col, format!("`{}`: expected a list of names", f.key)),
    })
}

fn as_bounds(f: &Field, n: usize) -> Result<Vec<(f64, f64)>, ParseError> {
    let pair = |f: &Field, v: &Value| -> Result<(f64, f64), ParseError> {
        let p = as_vector(f, v)?;
        if p.len() != 2 || p[0] > p[1] {
            return at(f.line, f.col, format!("`{}`: expected `[lower, upper]` with lower <= upper", f.key));
        }
        Ok((p[0], p[1]))
    };
    if let Value::List(items) = &f.value {
        if items.len() == 2 && items.iter().all(|v| matches!(v, Value::Num(_))) && n != 2 {
            return Ok(vec![pair(f, &f.value)?; n]);
        }
    }
    let b = as_list(f, pair)?;
    if b.len() != n {
        return at(f.line, f.col, format!("`{}`: expected {n} bounds, got {}", f.key, b.len()));
    }
    Ok(b)
}

/// Position of the field a validation error names, if it was written out.
fn error_position(e: &ModelError, positions: &[(String, usize, usize)]) -> Option<(usize, usize)> {
    let what = match e {
        ModelError::Dimension { what, .. }
        | ModelError::Asymmetric(what)
        | ModelError::Indefinite { what, .. }
        | ModelError::NotStochastic { what } => what.as_str(),
        ModelError::Invalid(m) => m.split(' ').next().unwrap_or(""),
        _ => return None,
    };
    let key = match what.strip_prefix("mode ") {
        Some(rest) => format!("mode {}", rest.split(' ').next().unwrap_or("")),
        None => what.split(' ').next().unwrap_or("").to_string(),
    };
    positions.iter().find(|(k, _, _)| *k == key).map(|(_, l, c)| (*l, *c))
}

fn build_system(name: String, mut fields: Fields, modes: Vec<(usize, Vec<Field>, usize, usize)>) -> Result<SystemModel, ParseError> {
    let (line, col) = (fields.line, fields.col);
    let mut positions: Vec<(String, usize, usize)> = fields.items.iter().map(|f| (f.key.clone(), f.line, f.col)).collect();
    positions.extend(modes.iter().map(|(i, _, l, c)| (format!("mode {i}"), *l, *c)));
    let class = match &fields.require("class")?.value {
        Value::Word(w) => w.clone(),
        _ => return at(line, col, "`class` must be linear_gaussian, markov_jump or measurement_noise"),
    };
    let nx = as_usize(fields.require("nx")?)?;
    let nu = as_usize(fields.require("nu")?)?;
    if nx == 0 {
        return at(line, col, "`nx` must be positive");
    }
    let zero_b = DMatrix::zeros(nx, nu);
    let dynamics = match class.as_str() {
        "linear_gaussian" => {
            let a = {
                let f = fields.require("A")?;
                as_matrix(f, &f.value)?
            };
            let b_mean = match fields.get("B") {
                Some(f) => as_schedule(f, as_matrix)?,
                None => Schedule::constant(zero_b.clone()),
            };
            let zeta_mean = match fields.get("zeta") {
                Some(f) => as_schedule(f, as_vector)?,
                None => Schedule::constant(DVector::zeros(nx)),
            };
            let w_cov = as_schedule(fields.require("w_cov")?, as_matrix)?;
            let nw = w_cov.at(0).nrows();
            let w_mean = match fields.get("w_mean") {
                Some(f) => as_schedule(f, as_vector)?,
                None => Schedule::constant(DVector::zeros(nw)),
            };
            let b_noise = match fields.get("noise_B") {
                Some(f) => as_list(f, as_matrix)?,
                None => vec![zero_b.clone(); nw],
            };
            let zeta_noise = match fields.get("noise_zeta") {
                Some(f) => as_list(f, as_vector)?,
                None => vec![DVector::zeros(nx); nw],
            };
            if !modes.is_empty() {
                return at(modes[0].2, modes[0].3, "modes belong to markov_jump systems");
            }
            Dynamics::LinearGaussian(LinearGaussian {
                a,
                b_mean,
                zeta_mean,
                b_noise,
                zeta_noise,
                w_mean,
                w_cov,
            })
        }
        "measurement_noise" => {
            let a = {
                let f = fields.require("A")?;
                as_matrix(f, &f.value)?
            };
            let b = match fields.get("B") {
                Some(f) => as_matrix(f, &f.value)?,
                None => zero_b.clone(),
            };
            let w_cov = as_schedule(fields.require("w_cov")?, as_matrix)?;
            let w_mean = match fields.get("w_mean") {
                Some(f) => as_schedule(f, as_vector)?,
                None => Schedule::constant(DVector::zeros(nx + nu)),
            };
            if !modes.is_empty() {
                return at(modes[0].2, modes[0].3, "modes belong to markov_jump systems");
            }
            Dynamics::MeasurementNoise(MeasurementNoise { a, b, w_mean, w_cov })
        }
        "markov_jump" => {
            let initial = {
                let f = fields.require("initial")?;
                as_vector(f, &f.value)?
            };
            let transition = {
                let f = fields.require("transition")?;
                as_matrix(f, &f.value)?
            };
            let mut out = Vec::new();
            for (expected, (idx, items, mline, mcol)) in modes.into_iter().enumerate() {
                if idx != expected + 1 {
                    return at(mline, mcol, format!("expected `mode {}`", expected + 1));
                }
                let mut mf = Fields {
                    items,
                    used: HashSet::new(),
                    line: mline,
                    col: mcol,
                };
                let a = {
                    let f = mf.require("A")?;
                    as_matrix(f, &f.value)?
                };
                let b = match mf.get("B") {
                    Some(f) => as_matrix(f, &f.value)?,
                    None => zero_b.clone(),
                };
                let zeta = match mf.get("zeta") {
                    Some(f) => as_vector(f, &f.value)?,
                    None => DVector::zeros(nx),
                };
                mf.finish()?;
                out.push(Mode { a, b, zeta });
            }
            if out.is_empty() {
                return at(line, col, "markov_jump systems need at least one `mode`");
            }
            Dynamics::MarkovJump(MarkovJump {
                modes: out,
                initial,
                transition,
            })
        }
        other => return at(line, col, format!("unknown system class `{other}`")),
    };
    let x0 = match fields.require("x0")? {
        Field {
            value: Value::Word(w), ..
        } if w == "free" => {
            let b = as_bounds(fields.require("x0_bounds")?, nx)?;
            InitialState::Free {
                lower: DVector::from_iterator(nx, b.iter().map(|p| p.0)),
                upper: DVector::from_iterator(nx, b.iter().map(|p| p.1)),
            }
        }
        f => InitialState::Fixed(as_vector(f, &f.value)?),
    };
    let u_bounds = match fields.get("u_bounds") {
        Some(f) => as_bounds(f, nu)?,
        None => vec![(-DEFAULT_INPUT_BOUND, DEFAULT_INPUT_BOUND); nu],
    };
    let state_names = match fields.get("state_names") {
        Some(f) => as_names(f)?,
        None => Vec::new(),
    };
    let input_names = match fields.get("input_names") {
        Some(f) => as_names(f)?,
        None => Vec::new(),
    };
    fields.finish()?;
    let sys = SystemModel {
        name,
        nx,
        nu,
        dynamics,
        x0,
        u_bounds,
        state_names,
        input_names,
    };
    sys.validate().map_err(|e| {
        let (line, col) = error_position(&e, &positions).unwrap_or((line, col));
        ParseError {
            line,
            col,
            message: format!("system `{}`: {e}", sys.name),
        }
    })?;
    Ok(sys)
}

/// Replaces declared signal names by state/input indices and checks index ranges.
pub fn resolve_signals(f: &mut Formula, sys: &SystemModel) -> Result<(), String> {
    let mut err = None;
    f.map_atoms(&mut |a| {
        for (s, _) in a.mu.terms.iter_mut() {
            if let Err(e) = resolve_signal(s, sys) {
                err.get_or_insert(e);
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn resolve_signal(s: &mut Signal, sys: &SystemModel) -> Result<(), String> {
    match s {
        Signal::Named(n) => {
            if let Some(i) = sys.state_names.iter().position(|x| x == n) {
                *s = Signal::State(i);
            } else if let Some(i) = sys.input_names.iter().position(|x| x == n) {
                *s = Signal::Input(i);
            } else {
                return Err(format!("unknown signal `{n}` for system `{}`", sys.name));
            }
            Ok(())
        }
        Signal::State(i) if *i >= sys.nx => Err(format!("state x[{}] exceeds nx = {}", *i + 1, sys.nx)),
        Signal::Input(i) if *i >= sys.nu => Err(format!("input u[{}] exceeds nu = {}", *i + 1, sys.nu)),
        Signal::NoiseProduct if sys.class_name() != "measurement_noise" => {
            Err("`wxi` is only defined for measurement_noise systems".into())
        }
        _ => Ok(()),
    }
}

fn resolve_expr(e: &mut LinExpr, sys: &SystemModel) -> Result<(), String> {
    for (s, _) in e.terms.iter_mut() {
        resolve_signal(s, sys)?;
        if *s == Signal::NoiseProduct {
            return Err("`wxi` cannot appear here".into());
        }
    }
    Ok(())
}

impl Parser {
    fn contract(&mut self) -> Result<(Contract, usize, usize, [(usize, usize); 2]), ParseError> {
        let (line, col) = self.here();
        let name = self.ident()?;
        self.expect_word("over")?;
        let system = self.ident()?;
        self.expect_sym("{")?;
        let mut assume = None;
        let mut guarantee = None;
        let mut spots = [(line, col); 2];
        while !self.eat_sym("}") {
            let (fl, fc) = self.here();
            let key = self.ident()?;
            self.expect_sym(":")?;
            let f = self.implied()?;
            self.expect_sym(";")?;
            let (slot, spot) = match key.as_str() {
                "assume" => (&mut assume, 0),
                "guarantee" => (&mut guarantee, 1),
                other => return at(fl, fc, format!("unknown contract field `{other}`")),
            };
            if slot.is_some() {
                return at(fl, fc, format!("duplicate field `{key}`"));
            }
            *slot = Some(f);
            spots[spot] = (fl, fc);
        }
        let Some(guarantee) = guarantee else {
            return at(line, col, format!("contract `{name}` has no guarantee"));
        };
        Ok((
            Contract::new(name, system, assume.unwrap_or_else(Formula::truth), guarantee),
            line,
            col,
            spots,
        ))
    }

    fn objective(&mut self) -> Result<Objective, ParseError> {
        let mut obj = Objective::default();
        let mut sign = if self.eat_sym("-") {
            -1.0
        } else {
            self.eat_sym("+");
            1.0
        };
        loop {
            let mut coef = sign;
            if let Tok::Num(c) = *self.peek() {
                self.bump();
                coef *= c;
                self.eat_sym("*");
            }
            if self.is_word("abs") {
                self.bump();
                self.expect_sym("(")?;
                let e = self.lin()?;
                self.expect_sym(")")?;
                obj.abs_terms.push((coef, e));
            } else if self.starts_signal() {
                let s = self.signal()?;
                obj.linear.add(&LinExpr::term(s, coef), 1.0);
            } else {
                obj.linear.constant += coef;
            }
            if self.eat_sym("+") {
                sign = 1.0;
            } else if self.eat_sym("-") {
                sign = -1.0;
            } else {
                return Ok(obj);
            }
        }
    }

    fn task(&mut self, index: usize) -> Result<(Task, String, usize, usize), ParseError> {
        let (line, col) = self.here();
        let kind_word = self.ident()?;
        let first = self.ident()?;
        let second = if kind_word == "refinement" { Some(self.ident()?) } else { None };
        let mut name = None;
        let mut expect = None;
        let mut horizon = None;
        let mut steps = None;
        let mut runs = None;
        let mut seed = None;
        let mut monitor = None;
        let mut objective = None;
        while !self.eat_sym(";") {
            let (wl, wc) = self.here();
            let word = self.ident()?;
            match word.as_str() {
                "name" => name = Some(self.ident()?),
                "horizon" => horizon = Some(self.uint()? as usize),
                "steps" => steps = Some(self.uint()? as usize),
                "runs" => runs = Some(self.uint()? as usize),
                "seed" => seed = Some(self.uint()?),
                "monitor" => monitor = Some(self.atom()?),
                "minimize" => objective = Some(self.objective()?),
                "expect" => {
                    let w = self.ident()?;
                    expect = Some(match w.as_str() {
                        "holds" => Expectation::Outcome(Outcome::Holds),
                        "fails" => Expectation::Outcome(Outcome::Fails),
                        "unknown" => Expectation::Outcome(Outcome::Unknown),
                        "rate" => {
                            self.expect_sym(">=")?;
                            Expectation::MinRate(self.number()?)
                        }
                        other => return at(wl, wc, format!("unknown expectation `{other}`")),
                    });
                }
                other => return at(wl, wc, format!("unknown task option `{other}`")),
            }
        }
        let need = |v: Option<usize>, what: &str| match v {
            Some(v) => Ok(v),
            None => at(line, col, format!("`{kind_word}` tasks need `{what} N`")),
        };
        let default_name = match &second {
            Some(s) => format!("{kind_word}_{first}_{s}"),
            None => format!("{kind_word}_{first}"),
        };
        let kind = match kind_word.as_str() {
            "compatibility" => TaskKind::Compatibility { contract: first },
            "consistency" => TaskKind::Consistency { contract: first },
            "refinement" => TaskKind::Refinement {
                refined: first,
                refines: second.expect("read above"),
            },
            "synthesize" => TaskKind::Synthesize {
                contract: first,
                horizon: need(horizon.take(), "horizon")?,
                objective: objective.unwrap_or_default(),
            },
            "simulate" => TaskKind::Simulate {
                contract: first,
                horizon: need(horizon.take(), "horizon")?,
                steps: need(steps, "steps")?,
                runs: need(runs, "runs")?,
                seed,
                objective: objective.unwrap_or_default(),
                monitor,
            },
            other => return at(line, col, format!("unknown task kind `{other}` (index {index})")),
        };
        Ok((
            Task {
                name: name.clone().unwrap_or_default(),
                kind,
                horizon,
                expect,
            },
            default_name,
            line,
            col,
        ))
    }
}

/// Parses and fully resolves a project file.
pub fn parse_project(text: &str) -> Result<Project, ParseError> {
    let mut p = Parser::new(text)?;
    let mut project = Project::default();
    let mut contract_pos = Vec::new();
    let mut task_pos = Vec::new();
    let mut explicit_names = Vec::new();
    while !matches!(p.peek(), Tok::Eof) {
        let (line, col) = p.here();
        let word = p.ident()?;
        match word.as_str() {
            "system" => {
                let name = p.ident()?;
                if project.system(&name).is_some() {
                    return at(line, col, format!("duplicate system `{name}`"));
                }
                let (items, modes) = p.fields()?;
                let fields = Fields {
                    items,
                    used: HashSet::new(),
                    line,
                    col,
                };
                project.systems.push(build_system(name, fields, modes)?);
            }
            "contract" => {
                let (c, l, cc, spots) = p.contract()?;
                if project.contract(&c.name).is_some() {
                    return at(l, cc, format!("duplicate contract `{}`", c.name));
                }
                project.contracts.push(c);
                contract_pos.push((l, cc, spots));
            }
            "task" => {
                let (mut t, default_name, l, cc) = p.task(project.tasks.len())?;
                explicit_names.push(!t.name.is_empty());
                if t.name.is_empty() {
                    t.name = default_name;
                }
                project.tasks.push(t);
                task_pos.push((l, cc));
            }
            other => return at(line, col, format!("expected `system`, `contract` or `task`, found `{other}`")),
        }
    }

    for (c, &(line, col, spots)) in project.contracts.iter_mut().zip(&contract_pos) {
        let Some(sys) = project.systems.iter().find(|s| s.name == c.system) else {
            return at(line, col, format!("contract `{}` references undeclared system `{}`", c.name, c.system));
        };
        for (f, (line, col)) in [&mut c.assume, &mut c.guarantee].into_iter().zip(spots) {
            resolve_signals(f, sys).map_err(|m| ParseError {
                line,
                col,
                message: format!("contract `{}`: {m}", c.name),
            })?;
            f.validate().map_err(|e| ParseError {
                line,
                col,
                message: format!("contract `{}`: {e}", c.name),
            })?;
        }
    }

    // auto-generated names get a numeric suffix on collision
    let mut seen: HashSet<String> = HashSet::new();
    for (i, t) in project.tasks.iter_mut().enumerate() {
        let (line, col) = task_pos[i];
        if explicit_names[i] {
            if !seen.insert(t.name.clone()) {
                return at(line, col, format!("duplicate task name `{}`", t.name));
            }
        } else {
            let base = t.name.clone();
            let mut n = 2;
            while !seen.insert(t.name.clone()) {
                t.name = format!("{base}_{n}");
                n += 1;
            }
        }
    }
    for (i, t) in project.tasks.iter_mut().enumerate() {
        let (line, col) = task_pos[i];
        let refs: Vec<&String> = match &t.kind {
            TaskKind::Compatibility { contract }
            | TaskKind::Consistency { contract }
            | TaskKind::Synthesize { contract, .. }
            | TaskKind::Simulate { contract, .. } => vec![contract],
            TaskKind::Refinement { refined, refines } => vec![refined, refines],
        };
        let mut systems = Vec::new();
        for r in refs {
            match project.contracts.iter().find(|c| &c.name == r) {
                Some(c) => systems.push(c.system.clone()),
                None => return at(line, col, format!("task `{}` references undeclared contract `{r}`", t.name)),
            }
        }
        if systems.windows(2).any(|w| w[0] != w[1]) {
            return at(line, col, format!("task `{}` mixes contracts over different systems", t.name));
        }
        let sys = project
            .systems
            .iter()
            .find(|s| s.name == systems[0])
            .expect("contract systems are resolved");
        let fix = |m: String| ParseError {
            line,
            col,
            message: format!("task `{}`: {m}", t.name),
        };
        match &mut t.kind {
            TaskKind::Synthesize { objective, .. } => resolve_objective(objective, sys).map_err(fix)?,
            TaskKind::Simulate { objective, monitor, .. } => {
                resolve_objective(objective, sys).map_err(fix)?;
                if let Some(m) = monitor {
                    resolve_expr(&mut m.mu, sys).map_err(fix)?;
                }
            }
            _ => {}
        }
    }
    Ok(project)
}

fn resolve_objective(obj: &mut Objective, sys: &SystemModel) -> Result<(), String> {
    resolve_expr(&mut obj.linear, sys)?;
    for (_, e) in obj.abs_terms.iter_mut() {
        resolve_expr(e, sys)?;
    }
    Ok(())
}

fn num(x: f64) -> String {
    format!("{}", x + 0.0)
}

fn vec_text(v: &DVector<f64>) -> String {
    let items: Vec<String> = v.iter().map(|x| num(*x)).collect();
    format!("[{}]", items.join(", "))
}

fn mat_text(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| vec_text(&m.row(i).transpose()))
        .collect();
    format!("[{}]", rows.join(", "))
}

fn schedule_text<T>(s: &Schedule<T>, f: impl Fn(&T) -> String) -> String {
    if s.len() == 1 {
        f(&s.0[0])
    } else {
        let items: Vec<String> = s.0.iter().map(f).collect();
        format!("steps({})", items.join(", "))
    }
}

fn signed(out: &mut String, c: f64, body: &str) {
    let (sign, mag) = if c < 0.0 { ("-", -c) } else { ("+", c) };
    if out.is_empty() {
        if sign == "-" {
            out.push('-');
        }
    } else {
        let _ = write!(out, " {sign} ");
    }
    if body.is_empty() {
        out.push_str(&num(mag));
    } else {
        let _ = write!(out, "{}*{body}", num(mag));
    }
}

fn objective_text(obj: &Objective) -> String {
    let mut out = String::new();
    for (s, c) in &obj.linear.terms {
        signed(&mut out, *c, &s.to_string());
    }
    if obj.linear.constant != 0.0 {
        signed(&mut out, obj.linear.constant, "");
    }
    for (c, e) in &obj.abs_terms {
        let mut inner = e.to_string();
        if e.constant != 0.0 {
            let (sign, mag) = if e.constant < 0.0 { ("-", -e.constant) } else { ("+", e.constant) };
            let _ = write!(inner, " {sign} {}", num(mag));
        }
        signed(&mut out, *c, &format!("abs({inner})"));
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

/// Prints a project in the syntax accepted by [`parse_project`].
pub fn print_project(p: &Project) -> String {
    let mut out = String::new();
    for s in &p.systems {
        let _ = writeln!(out, "system {} {{", s.name);
        let _ = writeln!(out, "  class: {};", s.class_name());
        let _ = writeln!(out, "  nx: {};\n  nu: {};", s.nx, s.nu);
        match &s.dynamics {
            Dynamics::LinearGaussian(lg) => {
                let _ = writeln!(out, "  A: {};", mat_text(&lg.a));
                let _ = writeln!(out, "  B: {};", schedule_text(&lg.b_mean, mat_text));
                let _ = writeln!(out, "  zeta: {};", schedule_text(&lg.zeta_mean, vec_text));
                let nb: Vec<String> = lg.b_noise.iter().map(mat_text).collect();
                let _ = writeln!(out, "  noise_B: [{}];", nb.join(", "));
                let nz: Vec<String> = lg.zeta_noise.iter().map(vec_text).collect();
                let _ = writeln!(out, "  noise_zeta: [{}];", nz.join(", "));
                let _ = writeln!(out, "  w_mean: {};", schedule_text(&lg.w_mean, vec_text));
                let _ = writeln!(out, "  w_cov: {};", schedule_text(&lg.w_cov, mat_text));
            }
            Dynamics::MeasurementNoise(mn) => {
                let _ = writeln!(out, "  A: {};", mat_text(&mn.a));
                let _ = writeln!(out, "  B: {};", mat_text(&mn.b));
                let _ = writeln!(out, "  w_mean: {};", schedule_text(&mn.w_mean, vec_text));
                let _ = writeln!(out, "  w_cov: {};", schedule_text(&mn.w_cov, mat_text));
            }
            Dynamics::MarkovJump(mj) => {
                let _ = writeln!(out, "  initial: {};", vec_text(&mj.initial));
                let _ = writeln!(out, "  transition: {};", mat_text(&mj.transition));
                for (i, m) in mj.modes.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "  mode {} {{ A: {}; B: {}; zeta: {}; }}",
                        i + 1,
                        mat_text(&m.a),
                        mat_text(&m.b),
                        vec_text(&m.zeta)
                    );
                }
            }
        }
        match &s.x0 {
            InitialState::Fixed(x) => {
                let _ = writeln!(out, "  x0: {};", vec_text(x));
            }
            InitialState::Free { lower, upper } => {
                let b: Vec<String> = lower
                    .iter()
                    .zip(upper.iter())
                    .map(|(l, u)| format!("[{}, {}]", num(*l), num(*u)))
                    .collect();
                let _ = writeln!(out, "  x0: free;\n  x0_bounds: [{}];", b.join(", "));
            }
        }
        let b: Vec<String> = s.u_bounds.iter().map(|(l, u)| format!("[{}, {}]", num(*l), num(*u))).collect();
        let _ = writeln!(out, "  u_bounds: [{}];", b.join(", "));
        if !s.state_names.is_empty() {
            let _ = writeln!(out, "  state_names: [{}];", s.state_names.join(", "));
        }
        if !s.input_names.is_empty() {
            let _ = writeln!(out, "  input_names: [{}];", s.input_names.join(", "));
        }
        out.push_str("}\n\n");
    }
    for c in &p.contracts {
        let _ = writeln!(
            out,
            "contract {} over {} {{\n  assume: {};\n  guarantee: {};\n}}\n",
            c.name, c.system, c.assume, c.guarantee
        );
    }
    for t in &p.tasks {
        let mut line = match &t.kind {
            TaskKind::Compatibility { contract } => format!("task compatibility {contract}"),
            TaskKind::Consistency { contract } => format!("task consistency {contract}"),
            TaskKind::Refinement { refined, refines } => format!("task refinement {refined} {refines}"),
            TaskKind::Synthesize {
                contract,
                horizon,
                objective,
            } => format!("task synthesize {contract} horizon {horizon} minimize {}", objective_text(objective)),
            TaskKind::Simulate {
                contract,
                horizon,
                steps,
                runs,
                seed,
                objective,
                monitor,
            } => {
                let mut s = format!("task simulate {contract} horizon {horizon} steps {steps} runs {runs}");
                if let Some(seed) = seed {
                    let _ = write!(s, " seed {seed}");
                }
                if let Some(m) = monitor {
                    let _ = write!(s, " monitor {m}");
                }
                let _ = write!(s, " minimize {}", objective_text(objective));
                s
            }
        };
        if let Some(h) = t.horizon {
            if matches!(
                t.kind,
                TaskKind::Compatibility { .. } | TaskKind::Consistency { .. } | TaskKind::Refinement { .. }
            ) {
                let _ = write!(line, " horizon {h}");
            }
        }
        let _ = write!(line, " name {}", t.name);
        match &t.expect {
            Some(Expectation::Outcome(o)) => {
                let _ = write!(line, " expect {}", o.keyword());
            }
            Some(Expectation::MinRate(r)) => {
                let _ = write!(line, " expect rate >= {}", num(*r));
            }
            None => {}
        }
        line.push_str(";\n");
        out.push_str(&line);
    }
    out
}
