//! Synthesis of (conditional) metering functions for simple loops and simple
//! recursions.
//!
//! A metering function `b` under-estimates how often a loop can be iterated.
//! For a loop with guard `φ ∧ ψ` (where `guard ⟹ ψμ`) the conditions are
//!
//! * (M1) `¬c ∧ ψ ⟹ b ≤ 0` for every conjunct `c` of `φ`,
//! * (M2) `guard ⟹ bμ ≥ b − 1` (for recursions: for every rhs term),
//! * (R1) `guard ⟹ b > 0` (excludes trivial solutions).
//!
//! `b` is a linear template `c₀ + Σ cᵥ·v` over the rule's variables.  Each
//! implication is turned into linear constraints on the template
//! coefficients via Farkas' lemma (premises are integer-tightened first), and
//! the resulting linear program maximizes `b` at a reference model of the
//! guard.  Every result is re-checked against the defining implications.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::arith::{fresh_var, Constraint, Expr, Guard, Rat, Rel, Subst, Var};
use crate::program::{Rule, RuleKind};
use crate::smt::{lp_optimize, Formula, LpResult, Model, Smt, Validity};

/// How a metering function was obtained.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MeteringKind {
    /// Unconditional metering function of a loop.
    Plain,
    /// Conditional metering function (`ψ` non-empty).
    Conditional,
    /// Metering function of a simple recursion.
    Recursion,
    /// The whole guard is invariant: a fresh temporary bounds the iterations.
    Unbounded,
}

/// A conditional metering function `χ_ψ · b`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Metering {
    /// The invariant part `ψ` of the guard.
    pub condition: Guard,
    /// The bound `b`.
    pub bound: Expr,
    /// Provenance.
    pub kind: MeteringKind,
}

/// Errors of metering synthesis.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MeteringError {
    /// No metering function was found.
    #[error("no metering function found: {0}")]
    NotFound(String),
    /// The rule cannot be made linear.
    #[error("rule is not linearizable")]
    NotLinearizable,
    /// Farkas' lemma needs linear premises and conclusions.
    #[error("non-linear input to Farkas encoding")]
    NonLinearInput,
}

/// Splits a guard into `(φ, ψ)` where `ψ` holds every conjunct `c` with
/// `guard ⟹ cμ` valid.
pub fn partition_guard(smt: &Smt, g: &Guard, mu: &Subst) -> (Guard, Guard) {
    let mut phi = Guard::truth();
    let mut psi = Guard::truth();
    for c in g.conjuncts() {
        if smt.implies(g, &c.subst(mu)) {
            psi.push(c.clone());
        } else {
            phi.push(c.clone());
        }
    }
    (phi, psi)
}

/// The Farkas encoding of `premise ⟹ q ≥ 0` (or `q > 0` when `strict`).
///
/// `q` is linear in the variables `xs`; its coefficients may be linear
/// expressions over the (existential) template coefficients.  Returns linear
/// constraints over template coefficients and fresh non-negative multipliers
/// (named with `prefix`), any model of which makes the implication valid.
pub fn farkas_encode(
    premise: &[Constraint],
    q: &Expr,
    strict: bool,
    xs: &BTreeSet<Var>,
    prefix: &str,
) -> Result<Vec<Constraint>, MeteringError> {
    let mut out = Vec::new();
    let mut lambdas = Vec::new();
    for (i, p) in premise.iter().enumerate() {
        if !p.expr.is_linear() || p.rel != Rel::Ge {
            return Err(MeteringError::NonLinearInput);
        }
        let l = Var::new(format!("{prefix}{i}"));
        out.push(Constraint::ge(Expr::from_var(l.clone())));
        lambdas.push(l);
    }
    let l0 = Var::new(format!("{prefix}c"));
    out.push(if strict {
        Constraint::gt(Expr::from_var(l0.clone()))
    } else {
        Constraint::ge(Expr::from_var(l0.clone()))
    });
    let mut all: BTreeSet<Var> = xs.clone();
    for p in premise {
        all.extend(p.vars());
    }
    let zero: Subst = all.iter().map(|v| (v.clone(), Expr::zero())).collect();
    for v in &all {
        let cq = coeff_of(q, v)?;
        let mut rhs = Expr::zero();
        for (p, l) in premise.iter().zip(&lambdas) {
            rhs = &rhs + &Expr::from_var(l.clone()).scale(&p.expr.linear_coeff(v));
        }
        let diff = &cq - &rhs;
        if !diff.is_zero() {
            out.push(Constraint::ge(diff.clone()));
            out.push(Constraint::ge(-diff));
        }
    }
    let mut rhs = Expr::from_var(l0);
    for (p, l) in premise.iter().zip(&lambdas) {
        rhs = &rhs + &Expr::from_var(l.clone()).scale(&p.expr.constant_part());
    }
    let diff = &q.subst(&zero) - &rhs;
    if !diff.is_zero() {
        out.push(Constraint::ge(diff.clone()));
        out.push(Constraint::ge(-diff));
    }
    if out.iter().any(|c| !c.expr.is_linear()) {
        return Err(MeteringError::NonLinearInput);
    }
    Ok(out)
}

/// Coefficient of `v` in `q` (which is at most linear in `v`).
fn coeff_of(q: &Expr, v: &Var) -> Result<Expr, MeteringError> {
    let cs = q.coeffs_in(v).ok_or(MeteringError::NonLinearInput)?;
    match cs.len() {
        1 => Ok(Expr::zero()),
        2 => Ok(cs[1].clone()),
        _ => Err(MeteringError::NonLinearInput),
    }
}

/// Result of [`linearize`]: the linearized guard and updates, the variables
/// allowed in the template, and the back-substitution.
#[derive(Clone, Debug)]
pub struct Linearized {
    pub guard: Guard,
    pub updates: Vec<Subst>,
    pub template_vars: BTreeSet<Var>,
    pub back: Subst,
}

/// Makes guard and updates linear: non-linear guard monomials whose
/// variables occur nowhere else (and are not updated) become fresh
/// variables; non-linearly updated variables absent from the guard are
/// excluded from the template.
pub fn linearize(guard: &Guard, updates: &[Subst], vars: &BTreeSet<Var>) -> Result<Linearized, MeteringError> {
    let mut back = Subst::new();
    let mut taken = vars.clone();
    taken.extend(guard.vars());
    for u in updates {
        for (v, e) in u.iter() {
            taken.insert(v.clone());
            taken.extend(e.vars());
        }
    }
    // Occurrence counts of variables over the monomials of the guard and update images.
    let mut occurrences: BTreeMap<Var, usize> = BTreeMap::new();
    for c in guard.conjuncts() {
        for (m, _) in c.expr.terms() {
            for (a, _) in m.factors() {
                if let crate::arith::Atom::Var(v) = a {
                    *occurrences.entry(v.clone()).or_insert(0) += 1;
                }
            }
        }
    }
    let updated: BTreeSet<Var> = updates.iter().flat_map(|u| u.domain()).collect();
    let in_updates: BTreeSet<Var> = updates
        .iter()
        .flat_map(|u| u.iter().flat_map(|(_, e)| e.vars()).collect::<Vec<_>>())
        .collect();
    let mut new_guard = Guard::truth();
    for c in guard.conjuncts() {
        if c.expr.is_linear() {
            new_guard.push(c.clone());
            continue;
        }
        let mut e = Expr::zero();
        for (m, coef) in c.expr.terms() {
            let term = Expr::from_term(m.clone(), coef.clone());
            if m.degree() < 2 && !m.has_pow() {
                e = &e + &term;
                continue;
            }
            let mvars = term.vars();
            let isolated = mvars.iter().all(|v| {
                occurrences.get(v).copied().unwrap_or(0) == 1 && !updated.contains(v) && !in_updates.contains(v)
            });
            if !isolated {
                return Err(MeteringError::NotLinearizable);
            }
            let mono = Expr::from_term(m.clone(), Rat::from_integer(1.into()));
            let w = fresh_var("w", &taken);
            taken.insert(w.clone());
            back.insert(w.clone(), mono);
            e = &e + &Expr::from_var(w).scale(coef);
        }
        new_guard.push(Constraint { expr: e, rel: c.rel });
    }
    // Template variables: drop variables with non-linear updates that are absent from the guard.
    let guard_vars = new_guard.vars();
    let mut template: BTreeSet<Var> = vars.iter().cloned().collect();
    template.extend(guard_vars.iter().cloned());
    for v in back.domain() {
        template.insert(v);
    }
    for mv in back.iter().flat_map(|(_, m)| m.vars()) {
        template.remove(&mv);
    }
    for u in updates {
        for (v, e) in u.iter() {
            if !e.is_linear() {
                if guard_vars.contains(v) {
                    return Err(MeteringError::NotLinearizable);
                }
                template.remove(v);
            }
        }
    }
    // Remaining template variables must have linear updates.
    let new_updates: Vec<Subst> = updates
        .iter()
        .map(|u| u.iter().filter(|(v, _)| template.contains(*v)).map(|(v, e)| (v.clone(), e.clone())).collect())
        .collect();
    Ok(Linearized {
        guard: new_guard,
        updates: new_updates,
        template_vars: template,
        back,
    })
}

/// Synthesizes a metering function for a simple loop or simple recursion.
pub fn find_metering(smt: &Smt, rule: &Rule, vars: &[Var]) -> Result<Metering, MeteringError> {
    let kind = rule.classify();
    let updates: Vec<Subst> = match kind {
        RuleKind::SimpleLoop | RuleKind::SimpleRecursion => rule.rhs.iter().map(|t| t.as_update(vars)).collect(),
        _ => return Err(MeteringError::NotFound("not a simple loop or recursion".into())),
    };
    let guard = rule.guard.drop_trivial();
    if smt.guard_unsat(&guard) {
        return Err(MeteringError::NotFound("guard is unsatisfiable".into()));
    }
    // Conditional split (loops only; recursions use the full guard as φ
    // unless it is invariant for every rhs term).
    let (phi, psi) = {
        let mut phi = Guard::truth();
        let mut psi = Guard::truth();
        for c in guard.conjuncts() {
            if updates.iter().all(|u| smt.implies(&guard, &c.subst(u))) {
                psi.push(c.clone());
            } else {
                phi.push(c.clone());
            }
        }
        (phi, psi)
    };
    if phi.is_empty() {
        let mut taken: BTreeSet<Var> = vars.iter().cloned().collect();
        taken.extend(rule.vars());
        let tv = fresh_var("tv", &taken);
        return Ok(Metering {
            condition: psi,
            bound: Expr::from_var(tv),
            kind: MeteringKind::Unbounded,
        });
    }
    let mut rule_vars: BTreeSet<Var> = vars.iter().cloned().collect();
    rule_vars.extend(rule.vars());
    let lin = linearize(&guard, &updates, &rule_vars)?;
    let lin_psi: Vec<Constraint> = {
        // ψ after linearization: conjuncts of the linearized guard at the ψ positions.
        guard
            .conjuncts()
            .iter()
            .zip(lin.guard.conjuncts())
            .filter(|(orig, _)| psi.conjuncts().contains(orig))
            .map(|(_, l)| l.clone())
            .collect()
    };
    let lin_phi: Vec<Constraint> = guard
        .conjuncts()
        .iter()
        .zip(lin.guard.conjuncts())
        .filter(|(orig, _)| !psi.conjuncts().contains(orig))
        .map(|(_, l)| l.clone())
        .collect();

    // Template b = _c + Σ _c_v · v.
    let tvars: Vec<Var> = lin.template_vars.iter().cloned().collect();
    let coef_of = |v: &Var| Var::new(format!("_c_{}", v.0));
    let c0 = Var::new("_c");
    let mut b = Expr::from_var(c0.clone());
    for v in &tvars {
        b = &b + &(&Expr::from_var(coef_of(v)) * &Expr::from_var(v.clone()));
    }
    let mut xs: BTreeSet<Var> = lin.template_vars.clone();
    xs.extend(lin.guard.vars());
    for u in &lin.updates {
        for (_, e) in u.iter() {
            xs.extend(e.vars());
        }
    }
    let tighten = |cs: &[Constraint]| -> Vec<Constraint> { cs.iter().map(|c| c.tighten_int()).collect() };
    let full: Vec<Constraint> = tighten(lin.guard.conjuncts());
    let mut lp: Vec<Constraint> = Vec::new();
    let mut k = 0usize;
    let mut add = |premise: Vec<Constraint>, q: Expr, strict: bool, lp: &mut Vec<Constraint>| -> Result<(), MeteringError> {
        let pg = Guard::from_constraints(premise.iter().cloned());
        if smt.guard_unsat(&pg) {
            return Ok(());
        }
        let cs = farkas_encode(&premise, &q, strict, &xs, &format!("_l{k}_"))?;
        k += 1;
        lp.extend(cs);
        Ok(())
    };
    // (M1)
    for c in &lin_phi {
        let mut premise = vec![c.negate().tighten_int()];
        premise.extend(tighten(&lin_psi));
        add(premise, -&b, false, &mut lp)?;
    }
    // (M2)
    for u in &lin.updates {
        let bmu = b.subst(u);
        add(full.clone(), &(&bmu - &b) + &Expr::one(), false, &mut lp)?;
    }
    // (R1)
    add(full.clone(), b.clone(), true, &mut lp)?;

    // Objective: b at a reference model of the guard.
    let reference: Model = smt
        .small_model(&lin.guard)
        .ok_or_else(|| MeteringError::NotFound("no model of the guard".into()))?;
    let mut obj = Expr::from_var(c0.clone());
    for v in &tvars {
        let val = reference.get(v).cloned().unwrap_or_else(|| Rat::from_integer(0.into()));
        obj = &obj + &Expr::from_var(coef_of(v)).scale(&val);
    }
    let model = solve_lp(&lp, &obj).ok_or_else(|| MeteringError::NotFound("Farkas system infeasible".into()))?;
    let inst: Subst = std::iter::once((c0.clone(), Expr::constant(model.get(&c0).cloned().unwrap_or_default())))
        .chain(tvars.iter().map(|v| {
            (coef_of(v), Expr::constant(model.get(&coef_of(v)).cloned().unwrap_or_default()))
        }))
        .collect();
    let bound = b.subst(&inst).subst(&lin.back);

    let met = Metering {
        condition: psi,
        bound,
        kind: match kind {
            RuleKind::SimpleRecursion => MeteringKind::Recursion,
            _ if lin_psi.is_empty() => MeteringKind::Plain,
            _ => MeteringKind::Conditional,
        },
    };
    if let Some(reason) = check_metering(smt, &guard, &updates, &met, &phi) {
        return Err(MeteringError::NotFound(reason));
    }
    Ok(met)
}

/// Solves the Farkas LP: the optimum of the closure if it satisfies the
/// strict constraints, otherwise an optimum with a fixed positive slack.
fn solve_lp(lp: &[Constraint], obj: &Expr) -> Option<Model> {
    let closure: Vec<Constraint> = lp.iter().map(|c| Constraint::ge(c.expr.clone())).collect();
    let strict_ok = |m: &Model| lp.iter().all(|c| c.holds(&with_defaults(m, c)).unwrap_or(false));
    match lp_optimize(&closure, Some(obj)) {
        LpResult::Infeasible => return None,
        LpResult::Optimal(m, _) | LpResult::Unbounded(m) if strict_ok(&m) => return Some(m),
        _ => {}
    }
    match lp_optimize(lp, Some(obj)) {
        LpResult::Infeasible => None,
        LpResult::Optimal(m, _) | LpResult::Unbounded(m) => Some(m),
    }
}

fn with_defaults(m: &Model, c: &Constraint) -> Model {
    let mut m = m.clone();
    for v in c.vars() {
        m.entry(v).or_insert_with(|| Rat::from_integer(0.into()));
    }
    m
}

/// Re-checks the defining implications; returns a reason on failure.
fn check_metering(smt: &Smt, guard: &Guard, updates: &[Subst], met: &Metering, phi: &Guard) -> Option<String> {
    let g = Formula::from_guard(guard);
    let psi = Formula::from_guard(&met.condition);
    let b = &met.bound;
    let mut obligations = Vec::new();
    for c in phi.conjuncts() {
        obligations.push(Formula::implies(
            Formula::and([Formula::Atom(c.negate()), psi.clone()]),
            Formula::ge(-b),
        ));
    }
    for u in updates {
        obligations.push(Formula::implies(g.clone(), Formula::ge(&(&b.subst(u) - b) + &Expr::one())));
    }
    obligations.push(Formula::implies(g, Formula::gt(b.clone())));
    for f in obligations {
        if let Validity::Invalid(m) = smt.is_valid(&f) {
            return Some(format!("candidate {b} violates an obligation at {}", crate::smt::fmt_model(&m)));
        }
    }
    None
}
