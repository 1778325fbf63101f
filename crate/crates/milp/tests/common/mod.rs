use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stostl_milp::{AffineExpr, MipModel, ObjSense, Sense, VarKind};

/// Random small MIP with integer data so the enumeration oracle is well conditioned.
pub fn random_mip(seed: u64, with_objective: bool) -> MipModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = rng.random_range(1..=8);
    let nc = rng.random_range(0..=4);
    let nrows = rng.random_range(1..=12);
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
        let rhs = rng.random_range(-4..=8) as f64;
        m.add_row(format!("r{r}"), &e, sense, rhs).unwrap();
    }
    if with_objective {
        let mut e = AffineExpr::default();
        for &v in &vars {
            e.add_term(v, rng.random_range(-6..=6) as f64);
        }
        let sense = if rng.random_bool(0.5) { ObjSense::Minimize } else { ObjSense::Maximize };
        m.set_objective(sense, e);
    }
    m
}

#[allow(dead_code)]
pub fn binary_ids(m: &MipModel) -> Vec<usize> {
    m.vars()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(i, _)| i)
        .collect()
}
