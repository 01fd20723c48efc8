//! Sound program transformations: loop and recursion acceleration,
//! instantiation of temporary variables, chaining, deletion and partial
//! deletion.
//!
//! Every processor is a pure function on rules or programs.  A produced rule
//! only admits evaluations that can be simulated by the rules it was derived
//! from at no smaller cost, so lower bounds for the result are lower bounds
//! for the input.

use std::collections::BTreeSet;
use std::fmt;

use num_traits::One;
use serde::Serialize;
use thiserror::Error;

use crate::arith::{fresh_var, maps_to_int, Constraint, Expr, Guard, Rat, Subst, Var};
use crate::metering::{find_metering, Metering, MeteringError, MeteringKind};
use crate::program::{Program, Rule, RuleId, RuleKind, Term};
use crate::recurrence::{iterated_cost, iterated_update, ClosedForm, RecurrenceError};
use crate::smt::{Formula, Smt};

/// Errors of the processors.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    /// The instantiation may leave the integers.
    #[error("cannot prove that `{0}` maps to the integers")]
    IntegralityUnprovable(String),
    /// The variable is not a temporary variable of the rule.
    #[error("`{0}` is not a temporary variable of the rule")]
    NotTemporary(Var),
    /// The chained term does not match the second rule's root.
    #[error("root mismatch: `{0}` vs `{1}`")]
    RootMismatch(String, String),
    /// The rule is not part of the program.
    #[error("rule {0} is not part of the program")]
    NotPresent(RuleId),
    /// Partial deletion must drop at least one term.
    #[error("the kept terms must form a strict sub-multiset of the rhs")]
    NotStrictSubset,
    /// The processor does not apply to this rule shape.
    #[error("not applicable: {0}")]
    NotApplicable(String),
    /// Metering synthesis failed.
    #[error(transparent)]
    Metering(#[from] MeteringError),
    /// Closed forms could not be computed.
    #[error(transparent)]
    Recurrence(#[from] RecurrenceError),
}

/// How a rule came about.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub enum ProvenanceTag {
    Original,
    Accelerated,
    Instantiated,
    Chained,
    PartialDeleted,
}

/// Provenance of a derived rule: tag, parent rules and the substitutions
/// (rendered) that were used.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct Provenance {
    pub tag: ProvenanceTag,
    pub parents: Vec<RuleId>,
    pub substitutions: Vec<String>,
}

impl Provenance {
    /// Provenance of an input rule.
    pub fn original() -> Self {
        Provenance {
            tag: ProvenanceTag::Original,
            parents: Vec::new(),
            substitutions: Vec::new(),
        }
    }

    /// Provenance with the given tag and parents.
    pub fn derived(tag: ProvenanceTag, parents: Vec<RuleId>, substitutions: Vec<String>) -> Self {
        Provenance {
            tag,
            parents,
            substitutions,
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.tag)?;
        if !self.parents.is_empty() {
            let ps: Vec<String> = self.parents.iter().map(|p| format!("#{p}")).collect();
            write!(f, " of {}", ps.join(", "))?;
        }
        if !self.substitutions.is_empty() {
            write!(f, " with {}", self.substitutions.join(", "))?;
        }
        Ok(())
    }
}

/// Drops conjuncts implied by the remaining ones (one pass, in order) and
/// constant-true conjuncts.
pub fn simplify_guard(smt: &Smt, g: &Guard) -> Guard {
    let mut cur = g.drop_trivial();
    let mut i = 0;
    while i < cur.len() {
        let rest = cur.without(i);
        let c = cur.conjuncts()[i].clone();
        if smt
            .is_valid(&Formula::implies(Formula::from_guard(&rest), Formula::Atom(c)))
            .is_valid()
        {
            cur = rest;
        } else {
            i += 1;
        }
    }
    cur
}

fn all_rule_vars(r: &Rule, vars: &[Var]) -> BTreeSet<Var> {
    let mut t: BTreeSet<Var> = vars.iter().cloned().collect();
    t.extend(r.vars());
    t
}

/// The accelerated loop `lhs −c_it→ lhs μ_it [guard ∧ ψ ∧ 0 < tv < b + 1]`.
///
/// For an unbounded metering function (a fresh temporary) the upper bound on
/// `tv` is omitted, since it constrains nothing.
pub fn accelerate_loop(smt: &Smt, r: &Rule, m: &Metering, cf: &ClosedForm, c_it: &Expr, vars: &[Var]) -> Rule {
    let tv = Expr::from_var(cf.tv.clone());
    let mut guard = r.guard.and(&m.condition);
    guard.push(Constraint::gt(tv.clone()));
    if m.kind != MeteringKind::Unbounded {
        guard.push(Constraint::gt(&(&m.bound + &Expr::one()) - &tv));
    }
    let rhs = Term::new(
        r.root.clone(),
        vars.iter().map(|v| cf.update.image(v)).collect(),
    );
    Rule::new(r.root.clone(), c_it.clone(), vec![rhs], simplify_guard(smt, &guard), vars.len())
}

/// Metering, closed forms and acceleration of a simple loop in one go.
/// Returns the accelerated rule, the metering function and the fresh
/// iteration-count variable.
pub fn accelerate_simple_loop(smt: &Smt, r: &Rule, vars: &[Var]) -> Result<(Rule, Metering, Var), TransformError> {
    if r.classify() != RuleKind::SimpleLoop {
        return Err(TransformError::NotApplicable("not a simple loop".into()));
    }
    let m = find_metering(smt, r, vars)?;
    let tv = match (m.kind, m.bound.as_var()) {
        // 0 < tv' < tv + 1 with a free tv only says tv' > 0: count with tv itself.
        (MeteringKind::Unbounded, Some(v)) => v,
        _ => fresh_var("tv", &all_rule_vars(r, vars)),
    };
    let mu = r.rhs[0].as_update(vars);
    let cf = iterated_update(&mu, &tv)?;
    let c_it = iterated_cost(&r.cost, &cf)?;
    let acc = accelerate_loop(smt, r, &m, &cf, &c_it, vars);
    Ok((acc, m, tv))
}

/// The accelerated recursion `lhs −(d^b − 1)/(d − 1)→ ∅ [guard ∧ ψ]`.
///
/// If the guard does not imply `cost ≥ 1`, that constraint is added first.
pub fn accelerate_recursion(smt: &Smt, r: &Rule, m: &Metering, arity: usize) -> Result<Rule, TransformError> {
    let d = r.degree();
    if r.classify() != RuleKind::SimpleRecursion || d < 2 {
        return Err(TransformError::NotApplicable("not a simple recursion".into()));
    }
    let mut guard = r.guard.and(&m.condition);
    let cost_ge_1 = Constraint::ge(&r.cost - &Expr::one());
    if !smt.implies(&guard, &cost_ge_1) {
        guard.push(cost_ge_1);
    }
    let dq = Rat::from_integer((d as i64).into());
    let pow = Expr::exp(dq.clone(), &m.bound).map_err(|e| TransformError::NotApplicable(e.to_string()))?;
    let cost = (&pow - &Expr::one()).scale(&(dq - Rat::one()).recip());
    Ok(Rule::new(r.root.clone(), cost, vec![], simplify_guard(smt, &guard), arity))
}

/// Replaces the temporary variable `tv` by `b` everywhere in the rule.
pub fn instantiate(r: &Rule, tv: &Var, b: &Expr, vars: &[Var]) -> Result<Rule, TransformError> {
    if !r.temp_vars(vars).contains(tv) {
        return Err(TransformError::NotTemporary(tv.clone()));
    }
    if !b.is_polynomial() || !maps_to_int(b).unwrap_or(false) {
        return Err(TransformError::IntegralityUnprovable(b.to_string()));
    }
    let s: Subst = [(tv.clone(), b.clone())].into_iter().collect();
    let mut out = r.subst(&s, vars.len());
    out.guard = out.guard.drop_trivial();
    Ok(out)
}

/// Finds a temporary variable with a tight syntactic bound: a minimal upper
/// bound `tv ≤ a` (preferred) or a maximal lower bound `tv ≥ a`.
pub fn instantiate_heuristic(smt: &Smt, r: &Rule, vars: &[Var]) -> Option<(Var, Expr)> {
    let temps = r.temp_vars(vars);
    let g = Formula::from_guard(&r.guard);
    for upper in [true, false] {
        for tv in &temps {
            for c in r.guard.conjuncts() {
                let t = c.tighten_int();
                if !t.expr.is_linear() {
                    continue;
                }
                let k = t.expr.linear_coeff(tv);
                let want = if upper { -Rat::one() } else { Rat::one() };
                if k != want {
                    continue;
                }
                // t: k·tv + rest ≥ 0
                let rest = &t.expr - &Expr::from_var(tv.clone()).scale(&k);
                if rest.vars().contains(tv) {
                    continue;
                }
                let a = if upper { rest } else { -rest };
                if !maps_to_int(&a).unwrap_or(false) {
                    continue;
                }
                let tve = Expr::from_var(tv.clone());
                let one = Expr::one();
                let (bound, tighter) = if upper {
                    (&a - &tve, &(&a - &one) - &tve)
                } else {
                    (&tve - &a, &(&tve - &a) - &one)
                };
                let holds = smt.is_valid(&Formula::implies(g.clone(), Formula::ge(bound))).is_valid();
                let tight = !smt.is_valid(&Formula::implies(g.clone(), Formula::ge(tighter))).is_valid();
                let s: Subst = [(tv.clone(), a.clone())].into_iter().collect();
                if holds && tight && !smt.guard_unsat(&r.guard.subst(&s)) {
                    return Some((tv.clone(), a));
                }
            }
        }
    }
    None
}

/// Chains `r1` with `r2` at the rhs term `at` of `r1`:
/// `f₁ −c₁ + c₂μ→ (S ∖ {at}) ∪ Tμ [φ₁ ∧ φ₂μ]` with `μ = {x⃗ / args(at)}`.
/// Temporaries of `r2` are renamed apart first.
pub fn chain(smt: &Smt, r1: &Rule, r2: &Rule, at: usize, vars: &[Var]) -> Result<Rule, TransformError> {
    let term = r1
        .rhs
        .get(at)
        .ok_or_else(|| TransformError::NotApplicable("no such rhs term".into()))?;
    if term.fun != r2.root {
        return Err(TransformError::RootMismatch(term.fun.clone(), r2.root.clone()));
    }
    let mut taken = all_rule_vars(r1, vars);
    taken.extend(r2.vars());
    let mut mu = Subst::new();
    for tv in r2.temp_vars(vars) {
        if taken.contains(&tv) && r1.vars().contains(&tv) {
            let fresh = fresh_var(tv.name(), &taken);
            taken.insert(fresh.clone());
            mu.insert(tv, Expr::from_var(fresh));
        }
    }
    for (v, a) in vars.iter().zip(&term.args) {
        mu.insert(v.clone(), a.clone());
    }
    let cost = &r1.cost + &r2.cost.subst(&mu);
    let mut rhs: Vec<Term> = r1.rhs.clone();
    rhs.remove(at);
    rhs.extend(r2.rhs.iter().map(|t| t.subst(&mu)));
    let guard = r1.guard.and(&r2.guard.subst(&mu));
    Ok(Rule::new(r1.root.clone(), cost, rhs, simplify_guard(smt, &guard), vars.len()))
}

/// Removes a rule from a program.
pub fn delete(p: &Program, id: RuleId) -> Result<Program, TransformError> {
    if p.get(id).is_none() {
        return Err(TransformError::NotPresent(id));
    }
    let mut out = p.clone();
    out.remove(id);
    Ok(out)
}

/// Keeps only the rhs terms with the given indices (a strict sub-multiset).
pub fn partial_delete(r: &Rule, keep: &[usize], arity: usize) -> Result<Rule, TransformError> {
    let keep: BTreeSet<usize> = keep.iter().copied().collect();
    if keep.len() >= r.rhs.len() || keep.iter().any(|&i| i >= r.rhs.len()) || r.is_sink_rule() {
        return Err(TransformError::NotStrictSubset);
    }
    let rhs: Vec<Term> = keep.iter().map(|&i| r.rhs[i].clone()).collect();
    Ok(Rule::new(r.root.clone(), r.cost.clone(), rhs, r.guard.clone(), arity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_program;

    fn e(s: &str) -> Expr {
        Expr::parse(s).unwrap()
    }

    fn vars(names: &[&str]) -> Vec<Var> {
        names.iter().map(|n| Var::new(*n)).collect()
    }

    fn g(cs: &[&str]) -> Guard {
        Guard::from_constraints(cs.iter().map(|c| Constraint::gt(e(c))))
    }

    fn rule(src: &str) -> (Rule, Vec<Var>) {
        let p = parse_program(src).unwrap();
        let r = p.rules().last().unwrap().clone();
        (r, p.vars.clone())
    }

    #[test]
    fn accelerate_alpha1() {
        let (r, vs) = rule("f1(x,y,z,u) -> f1(x-1, y+x, z, u) :|: x > 0");
        let (acc, m, tv) = accelerate_simple_loop(&Smt::builtin(), &r, &vs).unwrap();
        assert_eq!(m.bound, e("x"));
        assert_eq!(tv, Var::new("tv1"));
        assert_eq!(acc.cost, e("tv1"));
        assert_eq!(
            acc.rhs[0].args,
            vec![e("x - tv1"), e("y + tv1*x - 1/2*tv1^2 + 1/2*tv1"), e("z"), e("u")]
        );
        assert!(acc.guard.same_set(&g(&["tv1", "x + 1 - tv1"])));
        assert!(acc.well_formed());
    }

    #[test]
    fn accelerate_rational_metering() {
        let (r, vs) = rule("f(x) -> f(x-2) :|: 0 < x");
        let (acc, _, _) = accelerate_simple_loop(&Smt::builtin(), &r, &vs).unwrap();
        assert_eq!(acc.rhs[0].args, vec![e("x - 2*tv1")]);
        assert_eq!(acc.cost, e("tv1"));
        assert!(acc.guard.same_set(&g(&["tv1", "1/2*x + 1 - tv1"])));
        // tv := x/2 would leave the integers
        assert!(matches!(
            instantiate(&acc, &Var::new("tv1"), &e("1/2*x"), &vs),
            Err(TransformError::IntegralityUnprovable(_))
        ));
    }

    #[test]
    fn accelerate_unbounded() {
        let (r, vs) = rule("f(x,y) -{y}-> f(x+1, y) :|: 0 < x");
        let (acc, m, _) = accelerate_simple_loop(&Smt::builtin(), &r, &vs).unwrap();
        assert_eq!(m.kind, MeteringKind::Unbounded);
        assert_eq!(acc.cost, e("tv1*y"));
        assert_eq!(acc.rhs[0].args, vec![e("x + tv1"), e("y")]);
        assert!(acc.guard.same_set(&g(&["x", "tv1"])));
    }

    #[test]
    fn recursion_costs() {
        let smt = Smt::builtin();
        let (r, vs) = rule("fib(x) -> fib(x-1), fib(x-2) :|: x > 1");
        let m = Metering {
            condition: Guard::truth(),
            bound: e("1/2*x - 1"),
            kind: MeteringKind::Recursion,
        };
        let acc = accelerate_recursion(&smt, &r, &m, vs.len()).unwrap();
        assert!(acc.is_sink_rule());
        assert_eq!(acc.cost, &Expr::exp(Rat::from_integer(2.into()), &e("1/2*x - 1")).unwrap() - &Expr::one());
        assert!(acc.guard.same_set(&g(&["x - 1"])));
        let (r, _) = rule("f(x) -> f(x-1), f(x-1), f(x-1) :|: x > 0");
        let m = Metering {
            condition: Guard::truth(),
            bound: e("x"),
            kind: MeteringKind::Recursion,
        };
        let acc = accelerate_recursion(&smt, &r, &m, 1).unwrap();
        let three = Expr::exp(Rat::from_integer(3.into()), &e("x")).unwrap();
        assert_eq!(acc.cost, (&three - &Expr::one()).scale(&crate::arith::rat(1, 2)));
        // cost 0 forces the guard constraint cost ≥ 1
        let (r, _) = rule("f(x, y) -{y}-> f(x-1, y), f(x-1, y) :|: x > 0");
        let acc = accelerate_recursion(&smt, &r, &Metering { condition: Guard::truth(), bound: e("x"), kind: MeteringKind::Recursion }, 2).unwrap();
        assert!(acc.guard.conjuncts().contains(&Constraint::ge(e("y - 1"))));
        // degree one is rejected
        let (r, _) = rule("f(x) -> f(x-1) :|: x > 0");
        assert!(accelerate_recursion(&smt, &r, &m, 1).is_err());
    }

    #[test]
    fn instantiation_examples() {
        let smt = Smt::builtin();
        let (r, vs) = rule("f1(x,y,z,u) -> f1(x-1, y+x, z, u) :|: x > 0");
        let (acc, _, tv) = accelerate_simple_loop(&smt, &r, &vs).unwrap();
        let inst = instantiate(&acc, &tv, &e("x"), &vs).unwrap();
        assert_eq!(inst.cost, e("x"));
        assert_eq!(inst.rhs[0].args, vec![e("0"), e("y + 1/2*x^2 + 1/2*x"), e("z"), e("u")]);
        assert_eq!(simplify_guard(&smt, &inst.guard), g(&["x"]));
        assert!(matches!(instantiate(&acc, &Var::new("x"), &e("1"), &vs), Err(TransformError::NotTemporary(_))));
        let (fac, vs) = rule("fac(x) -{x}-> fac(x-1) :|: x > 1");
        let (acc, m, tv) = accelerate_simple_loop(&smt, &fac, &vs).unwrap();
        assert_eq!(m.bound, e("x - 1"));
        let inst = instantiate(&acc, &tv, &m.bound, &vs).unwrap();
        assert_eq!(inst.rhs[0].args, vec![e("1")]);
        assert_eq!(simplify_guard(&smt, &inst.guard), g(&["x - 1"]));
    }

    #[test]
    fn heuristic_examples() {
        let smt = Smt::builtin();
        let (r, vs) = rule("f3(x,y,z,u) -> f3(x,y,z,u-tv) :|: u > 0 && tv > 0");
        assert_eq!(instantiate_heuristic(&smt, &r, &vs), Some((Var::new("tv"), e("1"))));
        let (r, vs) = rule("f(z) -> g(z - tv) :|: 0 < tv && tv < z");
        assert_eq!(instantiate_heuristic(&smt, &r, &vs), Some((Var::new("tv"), e("z - 1"))));
        let (r, vs) = rule("f(z) -> f(z - 1) :|: z > 0");
        assert_eq!(instantiate_heuristic(&smt, &r, &vs), None);
    }

    #[test]
    fn chaining_examples() {
        let smt = Smt::builtin();
        let vs = vars(&["x", "y", "z", "u"]);
        let a0 = Rule::new("f0", e("1"), vec![Term::new("f1", vec![e("x"), e("0"), e("z"), e("u")])], Guard::truth(), 4);
        let a1 = Rule::new(
            "f1",
            e("x"),
            vec![Term::new("f1", vec![e("0"), e("y + 1/2*x^2 + 1/2*x"), e("z"), e("u")])],
            g(&["x"]),
            4,
        );
        let c = chain(&smt, &a0, &a1, 0, &vs).unwrap();
        assert_eq!(c.cost, e("1 + x"));
        assert_eq!(c.rhs[0].args, vec![e("0"), e("1/2*x^2 + 1/2*x"), e("z"), e("u")]);
        assert_eq!(c.guard, g(&["x"]));
        // facSum ∘ fac at fac(x)
        let v1 = vars(&["x"]);
        let fs = Rule::new(
            "facSum",
            e("1"),
            vec![Term::new("facSum", vec![e("x - 1")]), Term::new("fac", vec![e("x")])],
            g(&["x"]),
            1,
        );
        let fa = Rule::new("fac", e("x - 1"), vec![Term::new("fac", vec![e("1")])], g(&["x - 1"]), 1);
        let at = fs.rhs.iter().position(|t| t.fun == "fac").unwrap();
        let c = chain(&smt, &fs, &fa, at, &v1).unwrap();
        assert_eq!(c.cost, e("x"));
        assert_eq!(c.rhs, normalize(vec![Term::new("facSum", vec![e("x - 1")]), Term::new("fac", vec![e("1")])]));
        assert_eq!(c.guard, g(&["x - 1"]));
        assert!(matches!(chain(&smt, &fs, &a1, at, &v1), Err(TransformError::RootMismatch(..))));
        // chaining with a cost-0 no-op
        let noop = Rule::new("fac", e("0"), vec![Term::new("fac", vec![e("x")])], Guard::truth(), 1);
        let c = chain(&smt, &fs, &noop, at, &v1).unwrap();
        assert_eq!(c.cost, fs.cost);
        assert_eq!(c.guard, fs.guard);
    }

    fn normalize(ts: Vec<Term>) -> Vec<Term> {
        crate::program::normalize_rhs(ts, 1)
    }

    #[test]
    fn chain_renames_temporaries() {
        let smt = Smt::builtin();
        let vs = vars(&["x"]);
        let r1 = Rule::new("f", e("tv"), vec![Term::new("g", vec![e("x + tv")])], g(&["tv"]), 1);
        let r2 = Rule::new("g", e("tv"), vec![Term::new("h", vec![e("x - tv")])], g(&["tv"]), 1);
        let c = chain(&smt, &r1, &r2, 0, &vs).unwrap();
        assert_eq!(c.cost, e("tv + tv1"));
        assert_eq!(c.rhs[0].args, vec![e("x + tv - tv1")]);
    }

    #[test]
    fn deletion() {
        let p = parse_program("f(x) -> f(x - 1) :|: x > 0\n").unwrap();
        let mut q = p.clone();
        for id in p.ids() {
            q = delete(&q, id).unwrap();
        }
        assert!(q.is_empty());
        let id = p.ids()[0];
        assert!(matches!(delete(&q, id), Err(TransformError::NotPresent(_))));
        let r = Rule::new(
            "f",
            e("1"),
            vec![Term::new("f", vec![e("x - 1"), e("y")]), Term::new("f", vec![e("x - y"), e("y")])],
            g(&["x", "y - x"]),
            2,
        );
        let keep = r.rhs.iter().position(|t| t.args[0] == e("x - 1")).unwrap();
        let pd = partial_delete(&r, &[keep], 2).unwrap();
        assert_eq!(pd.rhs, vec![Term::new("f", vec![e("x - 1"), e("y")])]);
        assert_eq!(pd.guard, r.guard);
        assert_eq!(partial_delete(&r, &[0, 1], 2), Err(TransformError::NotStrictSubset));
        assert!(partial_delete(&r, &[], 2).unwrap().is_sink_rule());
    }
}
