//! Closed forms for iterated updates and iterated costs of simple loops.
//!
//! For an update `μ`, the value of `x` after `j` iterations satisfies
//! `x^(0) = x` and `x^(j+1) = xμ{y⃗ / y⃗^(j)}`.  Variables are solved in
//! dependency order; each update must have the shape `a·x + q` where `a` is a
//! non-negative rational constant and `q` only mentions already solved
//! variables.  Supported cases:
//!
//! * `a = 1`: `x^(j) = x + Σ_{i<j} q^(i)` (polynomial and geometric sums);
//! * `a > 0`, `a ≠ 1` with `q` constant across iterations:
//!   `x^(j) = a^j·x + q·(a^j − 1)/(a − 1)`;
//! * `a = 0` with `q` constant across iterations (a reset): `x^(j) = q`
//!   for `j ≥ 1`.
//!
//! Closed forms are required to be correct for `j ≥ 1` only; resets and
//! variables depending on them are only correct from the first iteration on,
//! which the summation step accounts for by treating index `0` separately.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::arith::{fresh_var, int, Atom, Expr, Rat, Subst, Var};

/// Largest polynomial degree handled by the summation kernel.
pub const MAX_SUM_DEGREE: u32 = 6;

/// Errors of the recurrence solver.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecurrenceError {
    /// The update or summand is outside the supported shapes.
    #[error("unsolvable recurrence: {0}")]
    Unsolvable(String),
    /// A polynomial summand exceeds the supported degree.
    #[error("summand degree {0} exceeds the supported maximum")]
    DegreeTooHigh(u32),
}

/// Closed forms of an iterated update in an iteration-count variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClosedForm {
    /// The iteration-count variable.
    pub tv: Var,
    /// `x ↦ x^(tv)` for every updated variable.
    pub update: Subst,
    /// Variables whose closed form is only valid for `tv ≥ 1`.
    pub from_one: BTreeSet<Var>,
}

fn unsolvable(msg: impl Into<String>) -> RecurrenceError {
    RecurrenceError::Unsolvable(msg.into())
}

/// Topological order of the updated variables (dependencies first).
fn dependency_order(mu: &Subst) -> Result<Vec<Var>, RecurrenceError> {
    let dom = mu.domain();
    let mut deps: BTreeMap<Var, BTreeSet<Var>> = BTreeMap::new();
    for (x, e) in mu.iter() {
        let d: BTreeSet<Var> = e.vars().into_iter().filter(|y| y != x && dom.contains(y)).collect();
        deps.insert(x.clone(), d);
    }
    let mut order = Vec::new();
    let mut done: BTreeSet<Var> = BTreeSet::new();
    while done.len() < dom.len() {
        let next = deps
            .iter()
            .find(|(x, d)| !done.contains(*x) && d.iter().all(|y| done.contains(y)))
            .map(|(x, _)| x.clone());
        match next {
            Some(x) => {
                done.insert(x.clone());
                order.push(x);
            }
            None => return Err(unsolvable("mutually dependent updates")),
        }
    }
    Ok(order)
}

/// Solves `x^(tv)` for every variable updated by `μ`.
pub fn iterated_update(mu: &Subst, tv: &Var) -> Result<ClosedForm, RecurrenceError> {
    let order = dependency_order(mu)?;
    let mut taken: BTreeSet<Var> = mu.domain();
    for (_, e) in mu.iter() {
        taken.extend(e.vars());
    }
    taken.insert(tv.clone());
    let idx = fresh_var("_i", &taken);
    let mut closed = Subst::new();
    let mut from_one: BTreeSet<Var> = BTreeSet::new();
    let dom = mu.domain();
    for x in order {
        let e = mu.image(&x);
        let coeffs = e
            .coeffs_in(&x)
            .ok_or_else(|| unsolvable(format!("`{x}` occurs in an exponent")))?;
        if coeffs.len() > 2 {
            return Err(unsolvable(format!("non-linear self-update of `{x}`")));
        }
        let a = match coeffs.get(1) {
            None => Rat::zero(),
            Some(c) => c
                .as_constant()
                .ok_or_else(|| unsolvable(format!("non-constant multiplier of `{x}`")))?,
        };
        let q = coeffs[0].clone();
        let q_deps: BTreeSet<Var> = q.vars().into_iter().filter(|y| dom.contains(y)).collect();
        let xe = Expr::from_var(x.clone());
        let tve = Expr::from_var(tv.clone());
        if a.is_negative() {
            return Err(unsolvable(format!("negative multiplier of `{x}`")));
        }
        if a.is_zero() {
            if !q_deps.is_empty() {
                return Err(unsolvable(format!("`{x}` is reset to a changing value")));
            }
            closed.insert(x.clone(), q);
            from_one.insert(x);
            continue;
        }
        if a.is_one() {
            // g(i) = q with every dependency replaced by its closed form at index i.
            let at_i: Subst = q_deps
                .iter()
                .map(|y| (y.clone(), closed.image(y).subst(&[(tv.clone(), Expr::from_var(idx.clone()))].into_iter().collect())))
                .collect();
            let g = q.subst(&at_i);
            let s = sum_index(&g, &idx, tv)?;
            if q_deps.iter().any(|y| from_one.contains(y)) {
                // x + q(σ₀) + Σ_{1≤i<tv} g(i)
                let g0 = g.subst(&[(idx.clone(), Expr::zero())].into_iter().collect());
                closed.insert(x.clone(), &(&(&xe + &q) + &s) - &g0);
                from_one.insert(x);
            } else {
                closed.insert(x.clone(), &xe + &s);
            }
            continue;
        }
        if !q_deps.is_empty() {
            return Err(unsolvable(format!("geometric update of `{x}` with changing offset")));
        }
        let pow = Expr::exp(a.clone(), &tve).map_err(|e| unsolvable(e.to_string()))?;
        let geo = (&pow - &Expr::one()).scale(&(a - Rat::one()).recip());
        closed.insert(x.clone(), &(&pow * &xe) + &(&q * &geo));
    }
    Ok(ClosedForm {
        tv: tv.clone(),
        update: closed,
        from_one,
    })
}

/// Closed form of `Σ_{i<tv} c μ^i`.
pub fn iterated_cost(c: &Expr, cf: &ClosedForm) -> Result<Expr, RecurrenceError> {
    let mut taken = c.vars();
    taken.insert(cf.tv.clone());
    for (v, e) in cf.update.iter() {
        taken.insert(v.clone());
        taken.extend(e.vars());
    }
    let idx = fresh_var("_i", &taken);
    let to_i: Subst = [(cf.tv.clone(), Expr::from_var(idx.clone()))].into_iter().collect();
    let at_i: Subst = cf
        .update
        .iter()
        .map(|(v, e)| (v.clone(), e.subst(&to_i)))
        .collect();
    let h = c.subst(&at_i);
    let s = sum_index(&h, &idx, &cf.tv)?;
    if c.vars().iter().any(|v| cf.from_one.contains(v)) {
        let h0 = h.subst(&[(idx, Expr::zero())].into_iter().collect());
        Ok(&(c + &s) - &h0)
    } else {
        Ok(s)
    }
}

/// `Σ_{i=0}^{t−1} i^k` as a polynomial in `t` (Lagrange interpolation).
pub fn power_sum(k: u32, t: &Var) -> Result<Expr, RecurrenceError> {
    if k > MAX_SUM_DEGREE {
        return Err(RecurrenceError::DegreeTooHigh(k));
    }
    let n = k as i64 + 2;
    let values: Vec<Rat> = (0..n)
        .map(|m| (0..m).map(|i| num_traits::pow(int(i), k as usize)).sum())
        .collect();
    let te = Expr::from_var(t.clone());
    let mut acc = Expr::zero();
    for m in 0..n {
        let mut basis = Expr::constant(values[m as usize].clone());
        for l in 0..n {
            if l != m {
                basis = &basis * &(&te - &Expr::int(l)).scale(&int(m - l).recip());
            }
        }
        acc = &acc + &basis;
    }
    Ok(acc)
}

/// `Σ_{i=0}^{t−1} g(i)` for summands that are sums of `p(i)` (polynomial) and
/// `c·R^i` (geometric with rational ratio) terms.
pub fn sum_index(g: &Expr, i: &Var, t: &Var) -> Result<Expr, RecurrenceError> {
    let te = Expr::from_var(t.clone());
    let mut acc = Expr::zero();
    for (m, coef) in g.terms() {
        let mut k = 0u32;
        let mut rest = Expr::constant(coef.clone());
        let mut ratio = Rat::one();
        let mut geo_t = Expr::one();
        for (a, e) in m.factors() {
            match a {
                Atom::Var(v) if v == i => k = e,
                Atom::Pow { base, exp } if exp.vars().contains(i) => {
                    let cs = exp.coeffs_in(i).ok_or_else(|| unsolvable("nested exponential"))?;
                    let alpha = cs
                        .get(1)
                        .and_then(|c| c.as_constant())
                        .filter(|_| cs.len() == 2)
                        .ok_or_else(|| unsolvable("non-linear exponent"))?;
                    if !alpha.is_integer() {
                        return Err(unsolvable("irrational geometric ratio"));
                    }
                    let r = num_traits::pow(base.clone(), alpha.numer().magnitude().try_into().unwrap_or(0usize));
                    ratio *= if alpha.is_negative() { r.recip() } else { r };
                    rest = &rest * &Expr::exp(base.clone(), &cs[0]).map_err(|e| unsolvable(e.to_string()))?;
                    geo_t = &geo_t * &Expr::exp(base.clone(), &te.scale(&alpha)).map_err(|e| unsolvable(e.to_string()))?;
                }
                _ => rest = &rest * &a.to_expr(e),
            }
        }
        if ratio.is_one() {
            acc = &acc + &(&rest * &power_sum(k, t)?);
        } else if k == 0 {
            let geo = (&geo_t - &Expr::one()).scale(&(ratio - Rat::one()).recip());
            acc = &acc + &(&rest * &geo);
        } else {
            return Err(unsolvable("polynomial times geometric summand"));
        }
    }
    Ok(acc)
}

/// `μ^k` by repeated composition (used to validate closed forms).
pub fn iterate_subst(mu: &Subst, k: usize) -> Subst {
    let mut acc = Subst::new();
    for _ in 0..k {
        acc = crate::arith::compose(mu, &acc);
    }
    acc
}
