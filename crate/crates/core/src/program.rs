//! Integer programs: rules with multiset right-hand sides over a shared
//! vector of program variables.
//!
//! A rule `f(x⃗) −c→ T [φ]` is stored with its root symbol, cost, guard and
//! right-hand side; the left-hand side arguments are always the program's
//! canonical variable vector, so they are kept once in [`Program`].  Every
//! variable of a rule that is not a program variable is a temporary variable.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::arith::{maps_to_int, Atom, Expr, Guard, Subst, Var};

/// Reserved root symbol of the term that materializes an empty right-hand side.
pub const SINK: &str = "sink";

/// Errors of program-level operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    /// `update` was called on a rule that is not a simple loop.
    #[error("rule {0} is not a simple loop")]
    NotSimpleLoop(usize),
    /// A rule id does not exist.
    #[error("no rule with id {0}")]
    UnknownRule(usize),
}

/// A term `g(t⃗)`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Term {
    pub fun: String,
    pub args: Vec<Expr>,
}

impl Term {
    /// Creates a term.
    pub fn new(fun: impl Into<String>, args: Vec<Expr>) -> Self {
        Term {
            fun: fun.into(),
            args,
        }
    }

    /// The `sink` term of the given arity (all arguments zero).
    pub fn sink(arity: usize) -> Self {
        Term::new(SINK, vec![Expr::zero(); arity])
    }

    /// Whether this is the `sink` term.
    pub fn is_sink(&self) -> bool {
        self.fun == SINK
    }

    /// Applies a substitution to every argument.
    pub fn subst(&self, s: &Subst) -> Term {
        Term::new(self.fun.clone(), self.args.iter().map(|a| a.subst(s)).collect())
    }

    /// The substitution `{x_i / t_i}` mapping program variables to the arguments.
    pub fn as_update(&self, vars: &[Var]) -> Subst {
        vars.iter().cloned().zip(self.args.iter().cloned()).collect()
    }

    /// Variables of the arguments.
    pub fn vars(&self) -> BTreeSet<Var> {
        self.args.iter().flat_map(|a| a.vars()).collect()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.fun)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

/// Identifier of a rule within a program (stable across transformations).
pub type RuleId = usize;

/// A rule `root(x⃗) −cost→ rhs [guard]`.
///
/// Equality is structural and ignores the id.
#[derive(Clone, Debug, Eq)]
pub struct Rule {
    pub id: RuleId,
    pub root: String,
    pub cost: Expr,
    pub rhs: Vec<Term>,
    pub guard: Guard,
}

impl PartialEq for Rule {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
            && self.cost == other.cost
            && self.rhs == other.rhs
            && self.guard == other.guard
    }
}

/// Shape of a rule, see [`Rule::classify`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RuleKind {
    /// Degree one, rhs root equals lhs root.
    SimpleLoop,
    /// Degree at least two, every rhs root equals the lhs root.
    SimpleRecursion,
    /// Degree one with a different rhs root.
    TailRecursive,
    /// Anything else.
    Other,
}

/// Sorts a right-hand side and applies the `sink` conventions: `sink` terms
/// are dropped when other terms exist, and an empty rhs becomes `{sink}`.
pub fn normalize_rhs(mut rhs: Vec<Term>, arity: usize) -> Vec<Term> {
    if rhs.iter().any(|t| !t.is_sink()) {
        rhs.retain(|t| !t.is_sink());
    } else {
        rhs = vec![Term::sink(arity)];
    }
    rhs.sort();
    rhs
}

impl Rule {
    /// Creates a rule; the rhs is normalized with [`normalize_rhs`].
    pub fn new(root: impl Into<String>, cost: Expr, rhs: Vec<Term>, guard: Guard, arity: usize) -> Self {
        Rule {
            id: 0,
            root: root.into(),
            cost,
            rhs: normalize_rhs(rhs, arity),
            guard,
        }
    }

    /// Number of rhs terms (`sink` counts as one term).
    pub fn degree(&self) -> usize {
        self.rhs.len()
    }

    /// Whether the rhs is just `sink`.
    pub fn is_sink_rule(&self) -> bool {
        self.rhs.len() == 1 && self.rhs[0].is_sink()
    }

    /// Classifies the rule.
    pub fn classify(&self) -> RuleKind {
        let same = self.rhs.iter().all(|t| t.fun == self.root);
        match (self.degree(), same) {
            (1, true) => RuleKind::SimpleLoop,
            (d, true) if d >= 2 => RuleKind::SimpleRecursion,
            (1, false) => RuleKind::TailRecursive,
            _ => RuleKind::Other,
        }
    }

    /// The update `{x⃗ / t⃗}` of a simple loop.
    pub fn update(&self, vars: &[Var]) -> Result<Subst, ProgramError> {
        if self.classify() != RuleKind::SimpleLoop {
            return Err(ProgramError::NotSimpleLoop(self.id));
        }
        Ok(self.rhs[0].as_update(vars))
    }

    /// All variables occurring in the rule (besides the lhs).
    pub fn vars(&self) -> BTreeSet<Var> {
        let mut v = self.cost.vars();
        v.extend(self.guard.vars());
        for t in &self.rhs {
            v.extend(t.vars());
        }
        v
    }

    /// Temporary variables: rule variables that are not program variables.
    pub fn temp_vars(&self, vars: &[Var]) -> BTreeSet<Var> {
        let pv: BTreeSet<&Var> = vars.iter().collect();
        self.vars().into_iter().filter(|v| !pv.contains(v)).collect()
    }

    /// Applies a substitution to cost, guard and rhs (the lhs stays canonical).
    pub fn subst(&self, s: &Subst, arity: usize) -> Rule {
        Rule {
            id: self.id,
            root: self.root.clone(),
            cost: self.cost.subst(s),
            rhs: normalize_rhs(self.rhs.iter().map(|t| t.subst(s)).collect(), arity),
            guard: self.guard.subst(s),
        }
    }

    /// Sufficient syntactic check that every rhs argument maps integers to integers.
    pub fn well_formed(&self) -> bool {
        self.rhs.iter().all(|t| t.args.iter().all(int_valued))
    }

    /// Renders the rule with the given lhs variables.
    pub fn display<'a>(&'a self, vars: &'a [Var]) -> RuleDisplay<'a> {
        RuleDisplay { rule: self, vars }
    }
}

/// Syntactic integrality check: polynomials must pass `maps_to_int`; for
/// exponential monomials, the coefficient must be an integer, the base an
/// integer and the exponent an integer-valued polynomial.
fn int_valued(e: &Expr) -> bool {
    if e.is_polynomial() {
        return maps_to_int(e).unwrap_or(false);
    }
    e.terms().all(|(m, c)| {
        c.is_integer()
            && m.factors().all(|(a, _)| match a {
                Atom::Var(_) => true,
                Atom::Pow { base, exp } => base.is_integer() && int_valued(exp),
            })
    })
}

/// Display adaptor for a rule in the input grammar.
pub struct RuleDisplay<'a> {
    rule: &'a Rule,
    vars: &'a [Var],
}

impl fmt::Display for RuleDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.rule;
        write!(f, "{}(", r.root)?;
        for (i, v) in self.vars.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ") -{{{}}}-> ", r.cost)?;
        if r.is_sink_rule() {
            f.write_str("NIL")?;
        } else {
            for (i, t) in r.rhs.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{t}")?;
            }
        }
        write!(f, " :|: {}", r.guard)
    }
}

/// An integer program.
#[derive(Clone, Debug)]
pub struct Program {
    /// The canonical program variables `x⃗` (shared by all left-hand sides).
    pub vars: Vec<Var>,
    /// The start symbol.
    pub start: String,
    rules: Vec<Rule>,
    next_id: RuleId,
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.vars == other.vars && self.start == other.start && self.rules == other.rules
    }
}

impl Program {
    /// An empty program.
    pub fn new(vars: Vec<Var>, start: impl Into<String>) -> Self {
        Program {
            vars,
            start: start.into(),
            rules: Vec::new(),
            next_id: 0,
        }
    }

    /// Number of program variables (the common arity).
    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    /// Adds a rule, assigning a fresh id; returns the id.
    pub fn add(&mut self, mut r: Rule) -> RuleId {
        r.id = self.next_id;
        self.next_id += 1;
        self.rules.push(r);
        self.next_id - 1
    }

    /// Removes the rule with the given id (no-op if absent).
    pub fn remove(&mut self, id: RuleId) {
        self.rules.retain(|r| r.id != id);
    }

    /// Replaces the rule with the given id, keeping its position.
    pub fn replace(&mut self, id: RuleId, mut r: Rule) {
        if let Some(slot) = self.rules.iter_mut().find(|x| x.id == id) {
            r.id = id;
            *slot = r;
        }
    }

    /// The rule with the given id.
    pub fn get(&self, id: RuleId) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// All rules in insertion order.
    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Ids of all rules.
    pub fn ids(&self) -> Vec<RuleId> {
        self.rules.iter().map(|r| r.id).collect()
    }

    /// Whether a structurally equal rule already exists.
    pub fn contains(&self, r: &Rule) -> bool {
        self.rules.iter().any(|x| x == r)
    }

    /// Rules with root `f`.
    pub fn outgoing(&self, f: &str) -> Vec<RuleId> {
        self.rules.iter().filter(|r| r.root == f).map(|r| r.id).collect()
    }

    /// Rules with `f` in their right-hand side.
    pub fn incoming(&self, f: &str) -> Vec<RuleId> {
        self.rules
            .iter()
            .filter(|r| r.rhs.iter().any(|t| t.fun == f))
            .map(|r| r.id)
            .collect()
    }

    /// All function symbols (roots and rhs symbols, without `sink`).
    pub fn symbols(&self) -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        for r in &self.rules {
            s.insert(r.root.clone());
            for t in &r.rhs {
                if !t.is_sink() {
                    s.insert(t.fun.clone());
                }
            }
        }
        s
    }

    /// Symbols reachable from the start symbol.
    pub fn reachable(&self) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(self.start.clone());
        queue.push_back(self.start.clone());
        while let Some(f) = queue.pop_front() {
            for r in self.rules.iter().filter(|r| r.root == f) {
                for t in &r.rhs {
                    if seen.insert(t.fun.clone()) {
                        queue.push_back(t.fun.clone());
                    }
                }
            }
        }
        seen
    }

    /// Whether every rule is rooted at the start symbol.
    pub fn is_simplified(&self) -> bool {
        self.rules.iter().all(|r| r.root == self.start)
    }

    /// All variable names used anywhere (program and temporary variables).
    pub fn all_vars(&self) -> BTreeSet<Var> {
        let mut v: BTreeSet<Var> = self.vars.iter().cloned().collect();
        for r in &self.rules {
            v.extend(r.vars());
        }
        v
    }

    /// Number of rules.
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    /// Whether the program has no rules.
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Rule counts per root symbol.
    pub fn root_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for r in &self.rules {
            *m.entry(r.root.clone()).or_insert(0) += 1;
        }
        m
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "START: {}", self.start)?;
        for r in &self.rules {
            writeln!(f, "{}", r.display(&self.vars))?;
        }
        Ok(())
    }
}
