//! Satisfiability and validity checking for quantifier-free integer/rational
//! arithmetic.
//!
//! The built-in decision procedure works on disjunctive normal form:
//!
//! * linear conjunctions are decided exactly with a two-phase rational
//!   simplex (strict inequalities via slack maximization) and branch and
//!   bound for integer-sorted variables;
//! * non-linear conjunctions are first simplified by equality propagation,
//!   refuted through a linear relaxation where possible, and otherwise
//!   searched for small integer models of the non-linear variables;
//! * exponential subterms are abstracted to fresh positive reals, so only
//!   `Unsat` and verified models are trusted.
//!
//! Every `Sat` model is re-checked by evaluating the original formula.  An
//! optional external solver can be attached and is spoken to through the
//! SMT-LIB2 text format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::arith::{denominator_lcm, fmt_rat, int, Atom, Constraint, Expr, Guard, Monomial, Rat, Rel, Subst, Var};

/// A model: a value for every free variable.
pub type Model = BTreeMap<Var, Rat>;

/// A quantifier-free formula over normalized constraints.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Formula {
    True,
    False,
    Atom(Constraint),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Not(Box<Formula>),
}

impl Formula {
    /// An atomic constraint.
    pub fn atom(c: Constraint) -> Self {
        Formula::Atom(c)
    }

    /// `e > 0`.
    pub fn gt(e: Expr) -> Self {
        Formula::Atom(Constraint::gt(e))
    }

    /// `e >= 0`.
    pub fn ge(e: Expr) -> Self {
        Formula::Atom(Constraint::ge(e))
    }

    /// `e = 0`.
    pub fn eq0(e: Expr) -> Self {
        Formula::And(vec![Formula::ge(e.clone()), Formula::ge(-e)])
    }

    /// Conjunction.
    pub fn and(fs: impl IntoIterator<Item = Formula>) -> Self {
        Formula::And(fs.into_iter().collect())
    }

    /// Disjunction.
    pub fn or(fs: impl IntoIterator<Item = Formula>) -> Self {
        Formula::Or(fs.into_iter().collect())
    }

    /// Negation.
    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    /// Implication `a ⟹ b`.
    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Or(vec![Formula::not(a), b])
    }

    /// The conjunction of a guard's constraints.
    pub fn from_guard(g: &Guard) -> Self {
        Formula::And(g.conjuncts().iter().cloned().map(Formula::Atom).collect())
    }

    /// Free variables.
    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Atom(c) => out.extend(c.vars()),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|f| f.collect_vars(out)),
            Formula::Not(f) => f.collect_vars(out),
        }
    }

    /// Evaluates the formula under a total valuation.
    pub fn eval(&self, m: &Model) -> Result<bool, crate::arith::ArithError> {
        Ok(match self {
            Formula::True => true,
            Formula::False => false,
            Formula::Atom(c) => c.holds(m)?,
            Formula::And(fs) => {
                for f in fs {
                    if !f.eval(m)? {
                        return Ok(false);
                    }
                }
                true
            }
            Formula::Or(fs) => {
                for f in fs {
                    if f.eval(m)? {
                        return Ok(true);
                    }
                }
                false
            }
            Formula::Not(f) => !f.eval(m)?,
        })
    }

    /// Whether every atom is exponential-free.
    pub fn is_polynomial(&self) -> bool {
        match self {
            Formula::True | Formula::False => true,
            Formula::Atom(c) => c.expr.is_polynomial(),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().all(|f| f.is_polynomial()),
            Formula::Not(f) => f.is_polynomial(),
        }
    }

    /// Applies a substitution to every atom.
    pub fn subst(&self, s: &Subst) -> Formula {
        match self {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            Formula::Atom(c) => Formula::Atom(c.subst(s)),
            Formula::And(fs) => Formula::And(fs.iter().map(|f| f.subst(s)).collect()),
            Formula::Or(fs) => Formula::Or(fs.iter().map(|f| f.subst(s)).collect()),
            Formula::Not(f) => Formula::not(f.subst(s)),
        }
    }

    /// Negation normal form (negations pushed into the atoms).
    pub fn nnf(&self) -> Formula {
        self.nnf_pol(true)
    }

    fn nnf_pol(&self, pos: bool) -> Formula {
        match (self, pos) {
            (Formula::True, true) | (Formula::False, false) => Formula::True,
            (Formula::True, false) | (Formula::False, true) => Formula::False,
            (Formula::Atom(c), true) => Formula::Atom(c.clone()),
            (Formula::Atom(c), false) => Formula::Atom(c.negate()),
            (Formula::And(fs), true) | (Formula::Or(fs), false) => {
                Formula::And(fs.iter().map(|f| f.nnf_pol(pos)).collect())
            }
            (Formula::Or(fs), true) | (Formula::And(fs), false) => {
                Formula::Or(fs.iter().map(|f| f.nnf_pol(pos)).collect())
            }
            (Formula::Not(f), p) => f.nnf_pol(!p),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => f.write_str("true"),
            Formula::False => f.write_str("false"),
            Formula::Atom(c) => write!(f, "{c}"),
            Formula::And(fs) | Formula::Or(fs) => {
                let sep = if matches!(self, Formula::And(_)) { " ∧ " } else { " ∨ " };
                f.write_str("(")?;
                for (i, g) in fs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    write!(f, "{g}")?;
                }
                f.write_str(")")
            }
            Formula::Not(g) => write!(f, "¬{g}"),
        }
    }
}

/// Result of a satisfiability query.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum SmtOutcome {
    Sat(Model),
    Unsat,
    Unknown(String),
}

impl SmtOutcome {
    /// Whether the outcome is `Unsat`.
    pub fn is_unsat(&self) -> bool {
        matches!(self, SmtOutcome::Unsat)
    }

    /// Whether the outcome is `Sat`.
    pub fn is_sat(&self) -> bool {
        matches!(self, SmtOutcome::Sat(_))
    }

    /// The model, if any.
    pub fn model(&self) -> Option<&Model> {
        match self {
            SmtOutcome::Sat(m) => Some(m),
            _ => None,
        }
    }
}

/// Result of a validity query.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Validity {
    Valid,
    Invalid(Model),
    Unknown(String),
}

impl Validity {
    /// Whether the formula was proved valid.
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Errors of the external backend.
#[derive(Debug, Error)]
pub enum SmtError {
    /// The configured solver could not be started or talked to.
    #[error("SMT backend unavailable: {0}")]
    BackendUnavailable(String),
    /// The solver's answer could not be understood.
    #[error("malformed solver output: {0}")]
    Malformed(String),
}

/// Budgets of the built-in procedure.
#[derive(Clone, Debug)]
pub struct SmtLimits {
    /// Maximal number of DNF cubes examined per query.
    pub max_cubes: usize,
    /// Maximal branch-and-bound nodes per cube.
    pub max_bb_nodes: usize,
    /// Maximal assignments tried for the non-linear variables of a cube.
    pub max_enum: usize,
    /// Largest absolute value enumerated for non-linear variables.
    pub enum_bound: i64,
}

impl Default for SmtLimits {
    fn default() -> Self {
        SmtLimits {
            max_cubes: 4096,
            max_bb_nodes: 400,
            max_enum: 3000,
            enum_bound: 12,
        }
    }
}

/// The SMT service: built-in procedure plus optional external solver.
#[derive(Clone, Debug)]
pub struct Smt {
    /// Per-query time budget.
    pub timeout: Duration,
    /// Path of an external SMT-LIB2 solver (e.g. `z3`), used for polynomial queries.
    pub external: Option<PathBuf>,
    /// Extra command-line arguments for the external solver (default `-in`).
    pub external_args: Vec<String>,
    /// Budgets of the built-in procedure.
    pub limits: SmtLimits,
}

impl Default for Smt {
    fn default() -> Self {
        Smt {
            timeout: Duration::from_secs(2),
            external: None,
            external_args: vec!["-in".to_string()],
            limits: SmtLimits::default(),
        }
    }
}

impl Smt {
    /// A service with the built-in procedure only.
    pub fn builtin() -> Self {
        Smt::default()
    }

    /// A service with the given per-query timeout.
    pub fn with_timeout(timeout: Duration) -> Self {
        Smt {
            timeout,
            ..Smt::default()
        }
    }

    /// Checks satisfiability over the integers.
    pub fn check_sat(&self, f: &Formula) -> SmtOutcome {
        self.check_sat_with(f, &BTreeSet::new())
    }

    /// Checks satisfiability where the variables in `reals` range over the
    /// rationals and all others over the integers.
    pub fn check_sat_with(&self, f: &Formula, reals: &BTreeSet<Var>) -> SmtOutcome {
        if let Some(path) = &self.external {
            if f.is_polynomial() {
                match external_check(path, &self.external_args, f, reals, self.timeout) {
                    Ok(out) => return out,
                    Err(e) => return SmtOutcome::Unknown(e.to_string()),
                }
            }
        }
        let deadline = Instant::now() + self.timeout;
        let out = builtin_check(f, reals, &self.limits, deadline);
        if let SmtOutcome::Sat(m) = &out {
            debug_assert!(f.eval(m).unwrap_or(false), "unverified model");
        }
        out
    }

    /// Validity over the integers: `f` is valid iff `¬f` is unsatisfiable.
    pub fn is_valid(&self, f: &Formula) -> Validity {
        match self.check_sat(&Formula::not(f.clone())) {
            SmtOutcome::Unsat => Validity::Valid,
            SmtOutcome::Sat(m) => Validity::Invalid(m),
            SmtOutcome::Unknown(r) => Validity::Unknown(r),
        }
    }

    /// Whether the guard `premise` implies the constraint `c` (integer semantics).
    pub fn implies(&self, premise: &Guard, c: &Constraint) -> bool {
        self.is_valid(&Formula::implies(Formula::from_guard(premise), Formula::Atom(c.clone())))
            .is_valid()
    }

    /// Whether the guard is provably unsatisfiable.
    pub fn guard_unsat(&self, g: &Guard) -> bool {
        self.check_sat(&Formula::from_guard(g)).is_unsat()
    }

    /// The first integer model of the guard in enumeration order (small
    /// absolute values first), falling back to any model of the solver.
    pub fn small_model(&self, g: &Guard) -> Option<Model> {
        let vars: Vec<Var> = g.vars().into_iter().collect();
        let deadline = Instant::now() + self.timeout;
        let mut found = None;
        enumerate_points(vars.len(), self.limits.enum_bound, self.limits.max_enum * 4, deadline, |pt| {
            let m: Model = vars.iter().cloned().zip(pt.iter().map(|v| int(*v))).collect();
            if g.holds(&m).unwrap_or(false) {
                found = Some(m);
                return true;
            }
            false
        });
        if found.is_some() {
            return found;
        }
        self.check_sat(&Formula::from_guard(g)).model().cloned()
    }
}

// ---------------------------------------------------------------------------
// Built-in procedure
// ---------------------------------------------------------------------------

fn builtin_check(f: &Formula, reals: &BTreeSet<Var>, lim: &SmtLimits, deadline: Instant) -> SmtOutcome {
    let nnf = f.nnf();
    let all_vars = f.vars();
    let cubes = match dnf(&nnf, lim.max_cubes) {
        Some(c) => c,
        None => return SmtOutcome::Unknown("DNF too large".into()),
    };
    let mut unknown: Option<String> = None;
    for cube in cubes {
        if Instant::now() > deadline {
            return SmtOutcome::Unknown("timeout".into());
        }
        match solve_cube(&cube, reals, lim, deadline) {
            SmtOutcome::Sat(mut m) => {
                for v in &all_vars {
                    m.entry(v.clone()).or_insert_with(Rat::zero);
                }
                match f.eval(&m) {
                    Ok(true) => return SmtOutcome::Sat(m),
                    _ => unknown = Some("model could not be verified".into()),
                }
            }
            SmtOutcome::Unsat => {}
            SmtOutcome::Unknown(r) => unknown = Some(r),
        }
    }
    match unknown {
        Some(r) => SmtOutcome::Unknown(r),
        None => SmtOutcome::Unsat,
    }
}

/// Expands an NNF formula into at most `cap` cubes (conjunctions of atoms).
fn dnf(f: &Formula, cap: usize) -> Option<Vec<Vec<Constraint>>> {
    match f {
        Formula::True => Some(vec![vec![]]),
        Formula::False => Some(vec![]),
        Formula::Atom(c) => match c.const_truth() {
            Some(true) => Some(vec![vec![]]),
            Some(false) => Some(vec![]),
            None => Some(vec![vec![c.clone()]]),
        },
        Formula::Or(fs) => {
            let mut out = Vec::new();
            for g in fs {
                out.extend(dnf(g, cap)?);
                if out.len() > cap {
                    return None;
                }
            }
            Some(out)
        }
        Formula::And(fs) => {
            let mut acc: Vec<Vec<Constraint>> = vec![vec![]];
            for g in fs {
                let part = dnf(g, cap)?;
                if part.is_empty() {
                    return Some(vec![]);
                }
                let mut next = Vec::new();
                for a in &acc {
                    for b in &part {
                        let mut c = a.clone();
                        for x in b {
                            if !c.contains(x) {
                                c.push(x.clone());
                            }
                        }
                        next.push(c);
                    }
                }
                if next.len() > cap {
                    return None;
                }
                acc = next;
            }
            Some(acc)
        }
        Formula::Not(_) => dnf(&f.nnf(), cap),
    }
}

/// Replaces every exponential atom by a fresh positive real variable.
fn abstract_exponentials(cube: &[Constraint], reals: &mut BTreeSet<Var>) -> (Vec<Constraint>, bool) {
    let mut table: BTreeMap<Monomial, Var> = BTreeMap::new();
    let mut out = Vec::new();
    let mut abstracted = false;
    for c in cube {
        if c.expr.is_polynomial() {
            out.push(c.clone());
            continue;
        }
        abstracted = true;
        let mut e = Expr::zero();
        for (m, coef) in c.expr.terms() {
            if !m.has_pow() {
                e = &e + &Expr::from_term(m.clone(), coef.clone());
                continue;
            }
            let (poly, pows) = m.split_pow();
            let n = table.len();
            let v = table
                .entry(pows)
                .or_insert_with(|| Var::new(format!("_exp{n}")))
                .clone();
            e = &e + &(&Expr::from_term(poly, coef.clone()) * &Expr::from_var(v));
        }
        out.push(Constraint { expr: e, rel: c.rel });
    }
    for v in table.values() {
        reals.insert(v.clone());
        out.push(Constraint::gt(Expr::from_var(v.clone())));
    }
    (out, abstracted)
}

fn is_int_var(v: &Var, reals: &BTreeSet<Var>) -> bool {
    !reals.contains(v)
}

/// Integer tightening of constraints whose variables are all integer-sorted.
fn tighten_all(cube: &[Constraint], reals: &BTreeSet<Var>) -> Vec<Constraint> {
    cube.iter()
        .map(|c| {
            if c.vars().iter().all(|v| is_int_var(v, reals)) {
                c.tighten_int()
            } else {
                c.clone()
            }
        })
        .collect()
}

/// Decides one conjunction of atoms.
fn solve_cube(cube: &[Constraint], reals: &BTreeSet<Var>, lim: &SmtLimits, deadline: Instant) -> SmtOutcome {
    let mut reals = reals.clone();
    let (cube, abstracted) = abstract_exponentials(cube, &mut reals);
    let out = solve_poly_cube(&cube, &reals, lim, deadline);
    match out {
        SmtOutcome::Sat(mut m) if abstracted => {
            m.retain(|v, _| !v.0.starts_with("_exp"));
            // The caller verifies the model against the original formula.
            SmtOutcome::Sat(m)
        }
        o => o,
    }
}

fn solve_poly_cube(cube: &[Constraint], reals: &BTreeSet<Var>, lim: &SmtLimits, deadline: Instant) -> SmtOutcome {
    // Equality propagation.
    let (cube, elim) = match propagate_equalities(cube.to_vec(), reals) {
        Some(x) => x,
        None => return SmtOutcome::Unsat,
    };
    let finish = |mut m: Model| -> Model {
        for (v, e) in elim.iter().rev() {
            let val = e.eval(&with_zero_defaults(&m, e)).unwrap_or_else(|_| Rat::zero());
            m.insert(v.clone(), val);
        }
        m
    };
    let cube = tighten_all(&cube, reals);
    let mut atoms = Vec::new();
    for c in cube {
        match c.const_truth() {
            Some(true) => {}
            Some(false) => return SmtOutcome::Unsat,
            None => {
                if !atoms.contains(&c) {
                    atoms.push(c)
                }
            }
        }
    }
    if atoms.iter().all(|c| c.expr.is_linear()) {
        return match int_lp_feasible(&atoms, reals, lim.max_bb_nodes, deadline) {
            SmtOutcome::Sat(m) => SmtOutcome::Sat(finish(m)),
            o => o,
        };
    }
    // Linear relaxation refutation.
    if relaxation_infeasible(&atoms) {
        return SmtOutcome::Unsat;
    }
    // Enumerate small integer values for variables in non-linear monomials.
    let mut nl: BTreeSet<Var> = BTreeSet::new();
    for c in &atoms {
        for (m, _) in c.expr.terms() {
            if m.degree() >= 2 {
                for (a, _) in m.factors() {
                    if let Atom::Var(v) = a {
                        nl.insert(v.clone());
                    }
                }
            }
        }
    }
    let nl: Vec<Var> = nl.into_iter().collect();
    let mut result = SmtOutcome::Unknown("non-linear search exhausted".into());
    let complete = enumerate_points(nl.len(), lim.enum_bound, lim.max_enum, deadline, |pt| {
        let s: Subst = nl
            .iter()
            .zip(pt)
            .map(|(v, x)| (v.clone(), Expr::int(*x)))
            .collect();
        let mut sub = Vec::new();
        for c in &atoms {
            let c2 = c.subst(&s);
            match c2.const_truth() {
                Some(true) => {}
                Some(false) => return false,
                None => sub.push(c2),
            }
        }
        let sub = tighten_all(&sub, reals);
        if !sub.iter().all(|c| c.expr.is_linear()) {
            return false;
        }
        if let SmtOutcome::Sat(mut m) = int_lp_feasible(&sub, reals, lim.max_bb_nodes / 4 + 1, deadline) {
            for (v, x) in nl.iter().zip(pt) {
                m.insert(v.clone(), int(*x));
            }
            result = SmtOutcome::Sat(finish(m));
            return true;
        }
        false
    });
    let _ = complete;
    if Instant::now() > deadline && !result.is_sat() {
        return SmtOutcome::Unknown("timeout".into());
    }
    result
}

fn with_zero_defaults(m: &Model, e: &Expr) -> Model {
    let mut m = m.clone();
    for v in e.vars() {
        m.entry(v).or_insert_with(Rat::zero);
    }
    m
}

/// Detects equalities `p >= 0 ∧ -p >= 0` and eliminates variables they
/// define.  Returns `None` if a contradiction is found; otherwise the reduced
/// cube and the eliminations (in order) for model reconstruction.
fn propagate_equalities(
    mut cube: Vec<Constraint>,
    reals: &BTreeSet<Var>,
) -> Option<(Vec<Constraint>, Vec<(Var, Expr)>)> {
    let mut elim: Vec<(Var, Expr)> = Vec::new();
    'outer: loop {
        for c in &cube {
            if c.const_truth() == Some(false) {
                return None;
            }
        }
        let mut eqs: Vec<Expr> = Vec::new();
        for c in &cube {
            if c.rel == Rel::Ge {
                let neg = Constraint::ge(-&c.expr);
                if cube.contains(&neg) && !eqs.contains(&-&c.expr) {
                    eqs.push(c.expr.clone());
                }
            }
        }
        for p in eqs {
            if let Some((v, def)) = solve_for_var(&p, reals) {
                let s: Subst = [(v.clone(), def.clone())].into_iter().collect();
                cube = cube.iter().map(|c| c.subst(&s)).collect();
                for (_, e) in elim.iter_mut() {
                    *e = e.subst(&s);
                }
                elim.push((v, def));
                cube.retain(|c| c.const_truth() != Some(true));
                continue 'outer;
            }
        }
        return Some((cube, elim));
    }
}

/// Finds a variable `v` with `p = 0 ⟺ v = def` (preserving integrality).
fn solve_for_var(p: &Expr, reals: &BTreeSet<Var>) -> Option<(Var, Expr)> {
    // A single monomial (times a constant) vanishing: if univariate, the variable is 0.
    if p.num_terms() == 1 {
        let (m, _) = p.terms().next().unwrap();
        let vs: Vec<&Atom> = m.factors().map(|(a, _)| a).collect();
        if vs.len() == 1 {
            if let Atom::Var(v) = vs[0] {
                return Some((v.clone(), Expr::zero()));
            }
        }
    }
    for v in p.vars() {
        let coeffs = p.coeffs_in(&v)?;
        if coeffs.len() != 2 {
            continue;
        }
        let Some(a) = coeffs[1].as_constant() else { continue };
        let rest = &coeffs[0];
        if rest.vars().contains(&v) {
            continue;
        }
        let def = rest.scale(&(-a.recip()));
        let ok = !is_int_var(&v, reals)
            || (def.terms().all(|(_, c)| c.is_integer())
                && def.vars().iter().all(|w| is_int_var(w, reals)));
        if ok {
            return Some((v, def));
        }
    }
    None
}

/// Tries to refute a non-linear cube through its linear relaxation, where
/// each non-linear monomial becomes a fresh real (non-negative for squares).
fn relaxation_infeasible(atoms: &[Constraint]) -> bool {
    let mut table: BTreeMap<Monomial, Var> = BTreeMap::new();
    let mut lin = Vec::new();
    for c in atoms {
        let mut e = Expr::zero();
        for (m, coef) in c.expr.terms() {
            if m.degree() >= 2 {
                let n = table.len();
                let v = table
                    .entry(m.clone())
                    .or_insert_with(|| Var::new(format!("_mono{n}")))
                    .clone();
                e = &e + &Expr::from_var(v).scale(coef);
            } else {
                e = &e + &Expr::from_term(m.clone(), coef.clone());
            }
        }
        lin.push(Constraint { expr: e, rel: c.rel });
    }
    for (m, v) in &table {
        if m.factors().all(|(_, k)| k % 2 == 0) {
            lin.push(Constraint::ge(Expr::from_var(v.clone())));
        }
    }
    matches!(lp_optimize(&lin, None), LpResult::Infeasible)
}

/// Enumerates integer points of dimension `dim` with coordinates in
/// `[-bound, bound]` in the order: increasing sum of ranks (rank of 0 is 0,
/// of 1 is 1, of -1 is 2, of 2 is 3, …), ties broken by rank tuples in
/// descending lexicographic order.  Stops when `visit` returns `true`
/// (returns `true`) or the budget is exhausted (returns `false`).
pub fn enumerate_points(
    dim: usize,
    bound: i64,
    budget: usize,
    deadline: Instant,
    mut visit: impl FnMut(&[i64]) -> bool,
) -> bool {
    let value = |r: u64| -> i64 {
        if r == 0 {
            0
        } else if r % 2 == 1 {
            r.div_ceil(2) as i64
        } else {
            -((r / 2) as i64)
        }
    };
    let max_rank = (2 * bound.max(0)) as u64;
    let mut count = 0usize;
    if dim == 0 {
        return visit(&[]);
    }
    for total in 0..=(max_rank * dim as u64) {
        // Rank tuples with the given sum, descending lexicographic order.
        let mut tuples: Vec<Vec<u64>> = Vec::new();
        gen_tuples(dim, total, max_rank, &mut vec![], &mut tuples);
        for t in tuples {
            count += 1;
            if count > budget || (count % 64 == 0 && Instant::now() > deadline) {
                return false;
            }
            let pt: Vec<i64> = t.iter().map(|r| value(*r)).collect();
            if visit(&pt) {
                return true;
            }
        }
    }
    false
}

fn gen_tuples(dim: usize, total: u64, max_rank: u64, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
    if prefix.len() + 1 == dim {
        if total <= max_rank {
            let mut t = prefix.clone();
            t.push(total);
            out.push(t);
        }
        return;
    }
    for r in (0..=total.min(max_rank)).rev() {
        prefix.push(r);
        gen_tuples(dim, total - r, max_rank, prefix, out);
        prefix.pop();
    }
}

/// Linear feasibility with integrality for integer-sorted variables
/// (branch and bound over the rational relaxation).
fn int_lp_feasible(atoms: &[Constraint], reals: &BTreeSet<Var>, max_nodes: usize, deadline: Instant) -> SmtOutcome {
    let mut stack: Vec<Vec<Constraint>> = vec![Vec::new()];
    let mut nodes = 0usize;
    let mut hit_cap = false;
    while let Some(extra) = stack.pop() {
        nodes += 1;
        if nodes > max_nodes || Instant::now() > deadline {
            hit_cap = true;
            break;
        }
        let mut cs: Vec<Constraint> = atoms.to_vec();
        cs.extend(extra.iter().cloned());
        let point = match lp_optimize(&cs, None) {
            LpResult::Infeasible => continue,
            LpResult::Optimal(m, _) | LpResult::Unbounded(m) => m,
        };
        let frac = point
            .iter()
            .find(|(v, x)| is_int_var(v, reals) && !x.is_integer())
            .map(|(v, x)| (v.clone(), x.clone()));
        match frac {
            None => return SmtOutcome::Sat(point),
            Some((v, x)) => {
                let fl = x.floor();
                let mut up = extra.clone();
                up.push(Constraint::ge(&Expr::from_var(v.clone()) - &Expr::constant(&fl + Rat::one())));
                let mut down = extra;
                down.push(Constraint::ge(&Expr::constant(fl) - &Expr::from_var(v)));
                stack.push(up);
                stack.push(down);
            }
        }
    }
    if hit_cap {
        SmtOutcome::Unknown("branch-and-bound budget exhausted".into())
    } else {
        SmtOutcome::Unsat
    }
}

// ---------------------------------------------------------------------------
// Linear programming
// ---------------------------------------------------------------------------

/// Outcome of a linear program over the rationals.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum LpResult {
    /// No rational point satisfies the constraints.
    Infeasible,
    /// The objective is unbounded; a feasible point is supplied.
    Unbounded(Model),
    /// An optimal point and the optimal objective value.
    Optimal(Model, Rat),
}

/// Maximizes a linear objective (or just finds a feasible point when
/// `objective` is `None`) subject to linear constraints over free rational
/// variables.  Strict inequalities are handled by first maximizing a common
/// slack `ε ∈ [0, 1]` and then fixing half of the optimal slack.
///
/// # Panics
/// Panics if a constraint or the objective is non-linear.
pub fn lp_optimize(cons: &[Constraint], objective: Option<&Expr>) -> LpResult {
    let mut vars: BTreeSet<Var> = BTreeSet::new();
    for c in cons {
        assert!(c.expr.is_linear(), "non-linear LP constraint {c}");
        vars.extend(c.vars());
    }
    if let Some(o) = objective {
        assert!(o.is_linear(), "non-linear LP objective {o}");
        vars.extend(o.vars());
    }
    let vars: Vec<Var> = vars.into_iter().collect();
    let has_strict = cons.iter().any(|c| c.rel == Rel::Gt);
    let mut fixed: Vec<Constraint> = cons.iter().filter(|c| c.rel == Rel::Ge).cloned().collect();
    if has_strict {
        let eps = Var::new("_eps");
        let mut cs = fixed.clone();
        for c in cons.iter().filter(|c| c.rel == Rel::Gt) {
            cs.push(Constraint::ge(&c.expr - &Expr::from_var(eps.clone())));
        }
        cs.push(Constraint::ge(&Expr::one() - &Expr::from_var(eps.clone())));
        let mut vs = vars.clone();
        vs.push(eps.clone());
        match lp_core(&vs, &cs, Some(&Expr::from_var(eps.clone()))) {
            LpResult::Optimal(_, val) if val.is_positive() => {
                let half = val / int(2);
                for c in cons.iter().filter(|c| c.rel == Rel::Gt) {
                    fixed.push(Constraint::ge(&c.expr - &Expr::constant(half.clone())));
                }
            }
            _ => return LpResult::Infeasible,
        }
    }
    lp_core(&vars, &fixed, objective)
}

/// Non-strict LP over free variables `vars`.
fn lp_core(vars: &[Var], cons: &[Constraint], objective: Option<&Expr>) -> LpResult {
    let n = vars.len();
    // Columns: p_0..p_{n-1}, q_0..q_{n-1}, slack per constraint.
    let m = cons.len();
    let cols = 2 * n + m;
    let mut a: Vec<Vec<Rat>> = Vec::with_capacity(m);
    let mut b: Vec<Rat> = Vec::with_capacity(m);
    for (i, c) in cons.iter().enumerate() {
        let mut row = vec![Rat::zero(); cols];
        for (j, v) in vars.iter().enumerate() {
            let k = c.expr.linear_coeff(v);
            row[j] = k.clone();
            row[n + j] = -k;
        }
        row[2 * n + i] = -Rat::one();
        a.push(row);
        b.push(-c.expr.constant_part());
    }
    let mut obj = vec![Rat::zero(); cols];
    if let Some(o) = objective {
        for (j, v) in vars.iter().enumerate() {
            let k = o.linear_coeff(v);
            obj[j] = k.clone();
            obj[n + j] = -k;
        }
    }
    let to_model = |y: &[Rat]| -> Model {
        vars.iter()
            .enumerate()
            .map(|(j, v)| (v.clone(), &y[j] - &y[n + j]))
            .collect()
    };
    match simplex(a, b, obj) {
        Std::Infeasible => LpResult::Infeasible,
        Std::Unbounded(y) => LpResult::Unbounded(to_model(&y)),
        Std::Optimal(y) => {
            let model = to_model(&y);
            let val = match objective {
                Some(o) => o.eval(&model).expect("objective variables bound"),
                None => Rat::zero(),
            };
            LpResult::Optimal(model, val)
        }
    }
}

enum Std {
    Infeasible,
    Unbounded(Vec<Rat>),
    Optimal(Vec<Rat>),
}

/// Two-phase dense simplex with Bland's rule: maximize `c·y` subject to
/// `A y = b`, `y >= 0`.
fn simplex(mut a: Vec<Vec<Rat>>, mut b: Vec<Rat>, c: Vec<Rat>) -> Std {
    let m = a.len();
    let n = c.len();
    for i in 0..m {
        if b[i].is_negative() {
            b[i] = -b[i].clone();
            for x in a[i].iter_mut() {
                *x = -x.clone();
            }
        }
    }
    // Tableau with artificials n..n+m and rhs column.
    let width = n + m + 1;
    let mut t: Vec<Vec<Rat>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = a[i].clone();
        row.resize(n + m, Rat::zero());
        row[n + i] = Rat::one();
        row.push(b[i].clone());
        t.push(row);
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    // Phase 1: maximize -Σ artificials.
    let mut p1 = vec![Rat::zero(); width];
    for j in n..n + m {
        p1[j] = -Rat::one();
    }
    let allowed_all: Vec<bool> = vec![true; n + m];
    price_out(&mut p1, &t, &basis);
    if !run_simplex(&mut t, &mut basis, &mut p1, &allowed_all) {
        unreachable!("phase one is bounded");
    }
    if p1[width - 1].is_positive() {
        // Objective row stores -value; a positive entry means Σ artificials > 0.
        return Std::Infeasible;
    }
    // Drive artificials out of the basis.
    let mut i = 0;
    while i < t.len() {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| !t[i][j].is_zero()) {
                pivot(&mut t, &mut basis, i, j, &mut p1);
            } else {
                t.remove(i);
                basis.remove(i);
                continue;
            }
        }
        i += 1;
    }
    // Phase 2.
    let mut obj = c.clone();
    obj.resize(width, Rat::zero());
    price_out(&mut obj, &t, &basis);
    let allowed: Vec<bool> = (0..n + m).map(|j| j < n).collect();
    let bounded = run_simplex(&mut t, &mut basis, &mut obj, &allowed);
    let mut y = vec![Rat::zero(); n];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            y[bv] = t[i][width - 1].clone();
        }
    }
    if bounded {
        Std::Optimal(y)
    } else {
        Std::Unbounded(y)
    }
}

/// Makes the objective row consistent with the basis (reduced costs).
fn price_out(obj: &mut [Rat], t: &[Vec<Rat>], basis: &[usize]) {
    for (i, &bv) in basis.iter().enumerate() {
        let f = obj[bv].clone();
        if !f.is_zero() {
            for (o, x) in obj.iter_mut().zip(&t[i]) {
                *o -= &f * x;
            }
        }
    }
}

fn pivot(t: &mut [Vec<Rat>], basis: &mut [usize], r: usize, col: usize, obj: &mut [Rat]) {
    let p = t[r][col].clone();
    for x in t[r].iter_mut() {
        *x /= &p;
    }
    let prow = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i != r && !row[col].is_zero() {
            let f = row[col].clone();
            for (x, y) in row.iter_mut().zip(&prow) {
                if !y.is_zero() {
                    *x -= &f * y;
                }
            }
        }
    }
    if !obj[col].is_zero() {
        let f = obj[col].clone();
        for (x, y) in obj.iter_mut().zip(&prow) {
            if !y.is_zero() {
                *x -= &f * y;
            }
        }
    }
    basis[r] = col;
}

/// Runs primal simplex iterations; returns `false` if unbounded.
fn run_simplex(t: &mut [Vec<Rat>], basis: &mut [usize], obj: &mut [Rat], allowed: &[bool]) -> bool {
    let width = obj.len();
    loop {
        let enter = (0..width - 1).find(|&j| allowed[j] && obj[j].is_positive());
        let Some(col) = enter else { return true };
        let mut best: Option<(usize, Rat)> = None;
        for (i, row) in t.iter().enumerate() {
            if row[col].is_positive() {
                let ratio = &row[width - 1] / &row[col];
                let better = match &best {
                    None => true,
                    Some((bi, br)) => ratio < *br || (ratio == *br && basis[i] < basis[*bi]),
                };
                if better {
                    best = Some((i, ratio));
                }
            }
        }
        let Some((r, _)) = best else { return false };
        pivot(t, basis, r, col, obj);
    }
}

// ---------------------------------------------------------------------------
// External SMT-LIB2 backend
// ---------------------------------------------------------------------------

fn smt_rat(q: &Rat) -> String {
    let num = q.numer().abs();
    let body = if q.is_integer() {
        num.to_string()
    } else {
        format!("(/ {} {})", num, q.denom())
    };
    if q.is_negative() {
        format!("(- {body})")
    } else {
        body
    }
}

/// Renders an expression with integer coefficients (the caller clears denominators).
fn smt_expr(e: &Expr) -> String {
    let mut parts = Vec::new();
    for (m, c) in e.terms() {
        let mut fs = vec![];
        for (a, k) in m.factors() {
            if let Atom::Var(v) = a {
                for _ in 0..k {
                    fs.push(smt_ident(v));
                }
            }
        }
        let coef = smt_rat(c);
        if fs.is_empty() {
            parts.push(coef);
        } else {
            fs.insert(0, coef);
            parts.push(format!("(* {})", fs.join(" ")));
        }
    }
    match parts.len() {
        0 => "0".into(),
        1 => parts.pop().unwrap(),
        _ => format!("(+ {})", parts.join(" ")),
    }
}

fn smt_ident(v: &Var) -> String {
    if v.0.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        v.0.clone()
    } else {
        format!("|{}|", v.0)
    }
}

fn smt_formula(f: &Formula, reals: &BTreeSet<Var>) -> String {
    match f {
        Formula::True => "true".into(),
        Formula::False => "false".into(),
        Formula::Atom(c) => {
            let scaled = c.expr.scale(&Rat::from_integer(denominator_lcm(&c.expr)));
            let op = match c.rel {
                Rel::Gt => ">",
                Rel::Ge => ">=",
            };
            format!("({op} {} 0)", smt_expr(&scaled))
        }
        Formula::And(fs) if fs.is_empty() => "true".into(),
        Formula::Or(fs) if fs.is_empty() => "false".into(),
        Formula::And(fs) => format!("(and {})", fs.iter().map(|g| smt_formula(g, reals)).collect::<Vec<_>>().join(" ")),
        Formula::Or(fs) => format!("(or {})", fs.iter().map(|g| smt_formula(g, reals)).collect::<Vec<_>>().join(" ")),
        Formula::Not(g) => format!("(not {})", smt_formula(g, reals)),
    }
}

/// Renders a satisfiability query as an SMT-LIB2 script.
pub fn to_smtlib(f: &Formula, reals: &BTreeSet<Var>) -> String {
    let vars = f.vars();
    let used_reals: BTreeSet<Var> = vars.iter().filter(|v| reals.contains(v)).cloned().collect();
    let nonlinear = !is_linear_formula(f);
    let logic = match (used_reals.is_empty(), vars.len() == used_reals.len(), nonlinear) {
        (true, _, false) => "QF_LIA",
        (true, _, true) => "QF_NIA",
        (false, true, false) => "QF_LRA",
        (false, true, true) => "QF_NRA",
        (false, false, false) => "QF_LIRA",
        (false, false, true) => "QF_NIRA",
    };
    let mut s = String::new();
    s.push_str("(set-option :produce-models true)\n");
    s.push_str(&format!("(set-logic {logic})\n"));
    for v in &vars {
        let sort = if reals.contains(v) { "Real" } else { "Int" };
        s.push_str(&format!("(declare-const {} {sort})\n", smt_ident(v)));
    }
    s.push_str(&format!("(assert {})\n", smt_formula(f, &used_reals)));
    s.push_str("(check-sat)\n(get-model)\n(exit)\n");
    s
}

fn is_linear_formula(f: &Formula) -> bool {
    match f {
        Formula::True | Formula::False => true,
        Formula::Atom(c) => c.expr.is_linear(),
        Formula::And(fs) | Formula::Or(fs) => fs.iter().all(is_linear_formula),
        Formula::Not(g) => is_linear_formula(g),
    }
}

fn external_check(
    path: &PathBuf,
    args: &[String],
    f: &Formula,
    reals: &BTreeSet<Var>,
    timeout: Duration,
) -> Result<SmtOutcome, SmtError> {
    let script = to_smtlib(f, reals);
    let mut child = Command::new(path)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| SmtError::BackendUnavailable(format!("{}: {e}", path.display())))?;
    child
        .stdin
        .take()
        .unwrap()
        .write_all(script.as_bytes())
        .map_err(|e| SmtError::BackendUnavailable(e.to_string()))?;
    let start = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(_)) => break,
            Ok(None) if start.elapsed() > timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Ok(SmtOutcome::Unknown("external solver timeout".into()));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => return Err(SmtError::BackendUnavailable(e.to_string())),
        }
    }
    let mut out = String::new();
    child
        .stdout
        .take()
        .unwrap()
        .read_to_string(&mut out)
        .map_err(|e| SmtError::BackendUnavailable(e.to_string()))?;
    let outcome = parse_solver_output(&out)?;
    if let SmtOutcome::Sat(mut m) = outcome {
        for v in f.vars() {
            m.entry(v).or_insert_with(Rat::zero);
        }
        return Ok(SmtOutcome::Sat(m));
    }
    Ok(outcome)
}

/// S-expression used to read solver output.
#[derive(Clone, Debug, PartialEq)]
enum SExp {
    Sym(String),
    List(Vec<SExp>),
}

fn parse_sexps(src: &str) -> Result<Vec<SExp>, SmtError> {
    let mut toks = Vec::new();
    let mut cur = String::new();
    let mut in_bar = false;
    for ch in src.chars() {
        if in_bar {
            cur.push(ch);
            if ch == '|' {
                in_bar = false;
            }
            continue;
        }
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
                toks.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
            }
            '|' => {
                in_bar = true;
                cur.push(ch);
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        toks.push(cur);
    }
    let mut stack: Vec<Vec<SExp>> = vec![vec![]];
    for t in toks {
        match t.as_str() {
            "(" => stack.push(vec![]),
            ")" => {
                let l = stack.pop().ok_or_else(|| SmtError::Malformed("unbalanced".into()))?;
                stack
                    .last_mut()
                    .ok_or_else(|| SmtError::Malformed("unbalanced".into()))?
                    .push(SExp::List(l));
            }
            _ => stack.last_mut().unwrap().push(SExp::Sym(t)),
        }
    }
    if stack.len() != 1 {
        return Err(SmtError::Malformed("unbalanced parentheses".into()));
    }
    Ok(stack.pop().unwrap())
}

fn sexp_value(e: &SExp) -> Result<Rat, SmtError> {
    match e {
        SExp::Sym(s) => {
            if let Some((i, f)) = s.split_once('.') {
                let digits = format!("{i}{f}");
                let n: BigInt = digits.parse().map_err(|_| SmtError::Malformed(s.clone()))?;
                let d = num_traits::pow(BigInt::from(10), f.len());
                Ok(Rat::new(n, d))
            } else {
                let n: BigInt = s.parse().map_err(|_| SmtError::Malformed(s.clone()))?;
                Ok(Rat::from_integer(n))
            }
        }
        SExp::List(l) => match l.as_slice() {
            [SExp::Sym(op), x] if op == "-" => Ok(-sexp_value(x)?),
            [SExp::Sym(op), x, y] if op == "/" => {
                let d = sexp_value(y)?;
                if d.is_zero() {
                    return Err(SmtError::Malformed("division by zero".into()));
                }
                Ok(sexp_value(x)? / d)
            }
            [SExp::Sym(op), x, y] if op == "-" => Ok(sexp_value(x)? - sexp_value(y)?),
            [SExp::Sym(op), x] if op == "to_real" => sexp_value(x),
            _ => Err(SmtError::Malformed(format!("{e:?}"))),
        },
    }
}

/// Parses the answer of `(check-sat)` followed by `(get-model)`.
pub fn parse_solver_output(out: &str) -> Result<SmtOutcome, SmtError> {
    let sexps = parse_sexps(out)?;
    let first = sexps.first().ok_or_else(|| SmtError::Malformed("empty output".into()))?;
    match first {
        SExp::Sym(s) if s == "unsat" => return Ok(SmtOutcome::Unsat),
        SExp::Sym(s) if s == "unknown" || s == "timeout" => {
            return Ok(SmtOutcome::Unknown(format!("solver answered {s}")))
        }
        SExp::Sym(s) if s == "sat" => {}
        other => return Err(SmtError::Malformed(format!("unexpected answer {other:?}"))),
    }
    let mut model = Model::new();
    if let Some(SExp::List(items)) = sexps.get(1) {
        for it in items {
            if let SExp::List(def) = it {
                // (define-fun name () Sort value)
                if let [SExp::Sym(kw), SExp::Sym(name), SExp::List(params), _sort, val] = def.as_slice() {
                    if kw == "define-fun" && params.is_empty() {
                        let name = name.trim_matches('|').to_string();
                        model.insert(Var::new(name), sexp_value(val)?);
                    }
                }
            }
        }
    }
    Ok(SmtOutcome::Sat(model))
}

/// Renders a model as `x = 1, y = -2`.
pub fn fmt_model(m: &Model) -> String {
    m.iter()
        .map(|(v, x)| format!("{v} = {}", fmt_rat(x)))
        .collect::<Vec<_>>()
        .join(", ")
}
