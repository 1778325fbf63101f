//! CPLEX LP text export.

use std::collections::HashSet;
use std::fmt::Write;

use crate::model::{MipModel, ObjSense, Sense, VarKind};

const MAX_LINE: usize = 200;

/// Formats a number with 17 significant digits, integers without exponent.
fn num(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.16e}")
    }
}

fn sanitize(raw: &str, fallback: &str, used: &mut HashSet<String>) -> String {
    let mut s: String = raw
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "_.()[]{}!#$%&,;?@'~|".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    let bad_start = s
        .chars()
        .next()
        .is_none_or(|c| c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E');
    if bad_start {
        s = format!("{fallback}_{s}");
    }
    if s.len() > 200 {
        s.truncate(200);
    }
    let mut candidate = s.clone();
    let mut k = 1;
    while used.contains(&candidate) {
        candidate = format!("{s}~{k}");
        k += 1;
    }
    used.insert(candidate.clone());
    candidate
}

fn push_terms(out: &mut String, lead: &str, terms: &[(usize, f64)], names: &[String]) {
    let mut line = String::from(lead);
    if terms.is_empty() {
        line.push_str(" 0");
    }
    for (i, &(v, c)) in terms.iter().enumerate() {
        let piece = if i == 0 {
            if c < 0.0 {
                format!(" - {} {}", num(-c), names[v])
            } else {
                format!(" {} {}", num(c), names[v])
            }
        } else if c < 0.0 {
            format!(" - {} {}", num(-c), names[v])
        } else {
            format!(" + {} {}", num(c), names[v])
        };
        if line.len() + piece.len() > MAX_LINE {
            out.push_str(&line);
            out.push('\n');
            line = String::from("  ");
        }
        line.push_str(&piece);
    }
    out.push_str(&line);
}

/// Writes `model` in CPLEX LP format.
///
/// Names are sanitized to the LP character set and made unique; rows without variables
/// are written as comments since the format cannot express them.
pub fn export_lp(model: &MipModel) -> String {
    let mut used = HashSet::new();
    used.insert("obj".to_string());
    let names: Vec<String> = model
        .vars()
        .iter()
        .map(|v| sanitize(&v.name, "v", &mut used))
        .collect();
    let mut out = String::new();

    let sense = model.objective().map(|o| o.sense).unwrap_or(ObjSense::Minimize);
    out.push_str(match sense {
        ObjSense::Minimize => "Minimize\n",
        ObjSense::Maximize => "Maximize\n",
    });
    match model.objective() {
        Some(obj) => {
            let terms: Vec<(usize, f64)> = obj.expr.terms.iter().map(|&(v, c)| (v.0, c)).collect();
            push_terms(&mut out, " obj:", &terms, &names);
            if obj.expr.constant != 0.0 {
                let c = obj.expr.constant;
                let sign = if c < 0.0 { '-' } else { '+' };
                let _ = write!(out, " {sign} {}", num(c.abs()));
            }
            out.push('\n');
        }
        None => out.push_str(" obj: 0\n"),
    }

    out.push_str("Subject To\n");
    for row in model.rows() {
        let name = sanitize(&row.name, "r", &mut used);
        if row.coeffs.is_empty() {
            let _ = writeln!(out, "\\ {name}: 0 {} {}", row.sense, num(row.rhs));
            continue;
        }
        let terms: Vec<(usize, f64)> = row.coeffs.iter().map(|&(v, c)| (v.0, c)).collect();
        push_terms(&mut out, &format!(" {name}:"), &terms, &names);
        let op = match row.sense {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        };
        let _ = writeln!(out, " {op} {}", num(row.rhs));
    }

    let continuous: Vec<usize> = model
        .vars()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Continuous)
        .map(|(i, _)| i)
        .collect();
    if !continuous.is_empty() {
        out.push_str("Bounds\n");
        for i in continuous {
            let v = &model.vars()[i];
            let lo = if v.lower.is_finite() { num(v.lower) } else { "-inf".into() };
            let hi = if v.upper.is_finite() { num(v.upper) } else { "+inf".into() };
            if !v.lower.is_finite() && !v.upper.is_finite() {
                let _ = writeln!(out, " {} free", names[i]);
            } else {
                let _ = writeln!(out, " {lo} <= {} <= {hi}", names[i]);
            }
        }
    }

    let binaries: Vec<&String> = model
        .vars()
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.kind == VarKind::Binary)
        .map(|(_, n)| n)
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for n in binaries {
            let _ = writeln!(out, " {n}");
        }
    }
    out.push_str("End\n");
    out
}
